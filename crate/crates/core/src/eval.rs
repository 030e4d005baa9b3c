//! Two-receiver precision evaluation.
//!
//! Both receivers timestamp the same packets. The difference of their
//! timestamps is the compound clock error plus the difference of two
//! independent measurement errors. A low-order polynomial in time absorbs the
//! clock part; what remains has variance `2 * sigma_toa^2`, so
//! `sigma_toa = rmse / sqrt(2)`.

use crate::rng::{self, Domain};
use crate::toa::{Method, ToaRecord};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// Coarse timestamps of the same packet at the two receivers differ by at
/// most this much.
pub const PAIRING_WINDOW_S: f64 = 1e-3;
pub const DEFAULT_MAX_ORDER: usize = 5;
/// A further polynomial term must cut the residual variance by at least this
/// fraction to be kept.
pub const ORDER_IMPROVEMENT: f64 = 0.01;
/// Residual spreads below this are rounding noise (records keep 0.01 ns), so
/// variance changes smaller than its square never justify another term.
pub const RESIDUAL_FLOOR_S: f64 = 1e-12;
pub const GAMMA_LOW: f64 = 0.04;
pub const BETA_HIGH: usize = 10;
/// Rows with fewer members are flagged.
pub const LOW_COUNT: usize = 10;
/// Points kept per group in the ECDF and Q-Q exports.
pub const PLOT_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    L,
    M,
    H,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::L, Class::M, Class::H];

    /// Low strength wins over heavy clipping when both apply.
    pub fn of(gamma_m: f64, beta_min: usize) -> Class {
        if gamma_m <= GAMMA_LOW {
            Class::L
        } else if beta_min >= BETA_HIGH {
            Class::H
        } else {
            Class::M
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedMeasurement {
    pub packet_index: usize,
    pub payload_hex: String,
    pub t1_s: f64,
    pub t2_s: f64,
    pub delta_s: f64,
    pub gamma_m: f64,
    pub beta_min: usize,
    pub class: Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairingStats {
    pub pairs: usize,
    pub unmatched_rx1: usize,
    pub unmatched_rx2: usize,
    pub ambiguous: usize,
    pub unreliable: usize,
    pub both_l_and_h: usize,
}

fn is_unreliable(r: &ToaRecord) -> bool {
    r.flags.iter().any(|f| f == "unreliable")
}

/// Matches records of one method across receivers by payload and coarse
/// timestamp. Packets with more than one candidate are dropped, as are
/// pairs where either estimate is flagged unreliable.
pub fn pair_packets(rx1: &[ToaRecord], rx2: &[ToaRecord]) -> (Vec<PairedMeasurement>, PairingStats) {
    let mut by_payload: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, r) in rx2.iter().enumerate() {
        by_payload.entry(r.payload_hex.as_str()).or_default().push(j);
    }
    let near = |a: &ToaRecord, b: &ToaRecord| (a.coarse_timestamp_s - b.coarse_timestamp_s).abs() <= PAIRING_WINDOW_S;
    let mut rx2_hits = vec![0usize; rx2.len()];
    let candidates: Vec<Vec<usize>> = rx1
        .iter()
        .map(|a| {
            let c: Vec<usize> = by_payload.get(a.payload_hex.as_str()).into_iter().flatten().copied().filter(|&j| near(a, &rx2[j])).collect();
            for &j in &c {
                rx2_hits[j] += 1;
            }
            c
        })
        .collect();
    let mut stats = PairingStats::default();
    let mut pairs = Vec::new();
    let mut matched2 = vec![false; rx2.len()];
    for (i, c) in candidates.iter().enumerate() {
        match c.as_slice() {
            [] => stats.unmatched_rx1 += 1,
            [j] if rx2_hits[*j] == 1 => {
                matched2[*j] = true;
                let (a, b) = (&rx1[i], &rx2[*j]);
                if is_unreliable(a) || is_unreliable(b) {
                    stats.unreliable += 1;
                    continue;
                }
                let gamma_m = 0.5 * (a.gamma + b.gamma);
                let beta_min = a.beta.min(b.beta);
                if gamma_m <= GAMMA_LOW && beta_min >= BETA_HIGH {
                    stats.both_l_and_h += 1;
                }
                pairs.push(PairedMeasurement {
                    packet_index: a.packet_index,
                    payload_hex: a.payload_hex.clone(),
                    t1_s: a.toa_s,
                    t2_s: b.toa_s,
                    delta_s: b.toa_s - a.toa_s,
                    gamma_m,
                    beta_min,
                    class: Class::of(gamma_m, beta_min),
                });
            }
            _ => stats.ambiguous += 1,
        }
    }
    stats.unmatched_rx2 = rx2_hits.iter().filter(|&&h| h == 0).count();
    stats.pairs = pairs.len();
    if stats.both_l_and_h > 0 {
        log::info!("{} pairs are both low-strength and clipped; classed as L", stats.both_l_and_h);
    }
    pairs.sort_by(|a, b| a.t1_s.total_cmp(&b.t1_s));
    (pairs, stats)
}

/// Polynomial model of the compound clock error in the scaled time
/// `u = (t - t_mid) / half_span`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockFit {
    pub order: usize,
    /// Coefficients of `u^0 .. u^order`.
    pub coefficients_u: Vec<f64>,
    pub t_mid: f64,
    pub half_span: f64,
    /// Residual sum of squares for each order fitted.
    pub rss_by_order: Vec<f64>,
    pub residual_mean: f64,
    pub residual_std_error: f64,
}

impl ClockFit {
    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.t_mid) / self.half_span;
        self.coefficients_u.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    /// Coefficients of `t^0 .. t^order` in absolute time.
    pub fn coefficients_t(&self) -> Vec<f64> {
        // expand sum_k c_k ((t - m) / h)^k
        let mut out = vec![0.0; self.coefficients_u.len()];
        for (k, c) in self.coefficients_u.iter().enumerate() {
            let scale = c / self.half_span.powi(k as i32);
            let mut binom = 1.0;
            for j in 0..=k {
                // C(k, j) t^j (-m)^(k-j)
                out[j] += scale * binom * (-self.t_mid).powi((k - j) as i32);
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        out
    }
}

/// Order-recursive least squares: the basis `1, u, u^2, ...` is
/// orthonormalized one column at a time (modified Gram-Schmidt), so each
/// order's fit extends the previous one. The order kept is the smallest one
/// that no higher order (up to `max_order`) improves on by more than
/// [`ORDER_IMPROVEMENT`] in residual variance.
pub fn fit_clock(times: &[f64], values: &[f64], max_order: usize) -> Result<ClockFit> {
    let n = times.len();
    if n != values.len() {
        return Err(Error::InvalidParameter("times and values differ in length".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} pairs cannot support a clock fit")));
    }
    let (lo, hi) = times.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
    if !(hi > lo) {
        return Err(Error::InsufficientData("all pairs share one time instant".into()));
    }
    if n < 50 || hi - lo < 10.0 {
        log::debug!("clock fit over {n} pairs spanning {:.1} s is weakly constrained", hi - lo);
    }
    let t_mid = 0.5 * (lo + hi);
    let half_span = 0.5 * (hi - lo);
    let u: Vec<f64> = times.iter().map(|t| (t - t_mid) / half_span).collect();
    let max_order = max_order.min(n - 2);

    // q columns and the upper-triangular r with basis = q r
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r = vec![vec![0.0; max_order + 1]; max_order + 1];
    let mut proj = Vec::new();
    let mut resid = values.to_vec();
    let mut rss_by_order = Vec::new();
    for k in 0..=max_order {
        let mut v: Vec<f64> = u.iter().map(|x| x.powi(k as i32)).collect();
        for (j, qj) in q.iter().enumerate() {
            let d: f64 = qj.iter().zip(&v).map(|(a, b)| a * b).sum();
            r[j][k] = d;
            v.iter_mut().zip(qj).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 * (n as f64).sqrt() {
            break;
        }
        r[k][k] = norm;
        v.iter_mut().for_each(|x| *x /= norm);
        let d: f64 = v.iter().zip(&resid).map(|(a, b)| a * b).sum();
        resid.iter_mut().zip(&v).for_each(|(x, y)| *x -= d * y);
        proj.push(d);
        q.push(v);
        rss_by_order.push(resid.iter().map(|x| x * x).sum::<f64>());
    }
    let fitted = rss_by_order.len();
    let var = |k: usize| rss_by_order[k] / (n - k - 1).max(1) as f64;
    let order = (0..fitted)
        .find(|&k| ((k + 1)..fitted).all(|j| var(j) >= (1.0 - ORDER_IMPROVEMENT) * var(k) - RESIDUAL_FLOOR_S * RESIDUAL_FLOOR_S))
        .unwrap_or(fitted - 1);

    // back-substitute r c = proj for the chosen order
    let mut c = vec![0.0; order + 1];
    for i in (0..=order).rev() {
        let s: f64 = ((i + 1)..=order).map(|j| r[i][j] * c[j]).sum();
        c[i] = (proj[i] - s) / r[i][i];
    }
    let fit = ClockFit { order, coefficients_u: c, t_mid, half_span, rss_by_order, residual_mean: 0.0, residual_std_error: 0.0 };
    let res: Vec<f64> = times.iter().zip(values).map(|(t, v)| v - fit.eval(*t)).collect();
    let mean = res.iter().sum::<f64>() / n as f64;
    let sd = (res.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1).max(1) as f64).sqrt();
    Ok(ClockFit { residual_mean: mean, residual_std_error: sd / (n as f64).sqrt(), ..fit })
}

pub fn rmse(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Per-receiver TOA standard deviation from the residual RMSE.
pub fn sigma_from_rmse(rmse: f64) -> f64 {
    rmse / std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub packet_index: usize,
    pub payload_hex: String,
    pub t_s: f64,
    pub value_s: f64,
    pub class: Class,
}

/// One row of the report: `class` is `None` for all packets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub n: usize,
    pub class: Option<Class>,
    pub count: usize,
    pub rmse_ns: f64,
    pub sigma_ns: f64,
    pub low_count: bool,
}

impl ReportRow {
    pub fn class_label(&self) -> String {
        self.class.map_or("all".to_string(), |c| c.to_string())
    }
}

/// Residuals after removing `fit`, with one report row overall and one per
/// class.
pub fn residuals_and_sigma(method: Method, n: usize, pairs: &[PairedMeasurement], fit: &ClockFit) -> (Vec<Residual>, Vec<ReportRow>) {
    let residuals: Vec<Residual> = pairs
        .iter()
        .map(|p| Residual {
            packet_index: p.packet_index,
            payload_hex: p.payload_hex.clone(),
            t_s: p.t1_s,
            value_s: p.delta_s - fit.eval(p.t1_s),
            class: p.class,
        })
        .collect();
    let row = |class: Option<Class>| {
        let v: Vec<f64> = residuals.iter().filter(|r| class.is_none_or(|c| r.class == c)).map(|r| r.value_s * 1e9).collect();
        let e = rmse(&v);
        ReportRow { method, n, class, count: v.len(), rmse_ns: e, sigma_ns: sigma_from_rmse(e), low_count: v.len() < LOW_COUNT }
    };
    let mut rows = vec![row(None)];
    rows.extend(Class::ALL.into_iter().map(|c| row(Some(c))));
    (residuals, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    /// `(value, rank / n)` in increasing order.
    pub ecdf: Vec<(f64, f64)>,
    /// `(normal quantile, empirical quantile)` under the fitted normal.
    pub qq: Vec<(f64, f64)>,
    pub mean: f64,
    pub std: f64,
    /// Largest gap between the ECDF and the fitted normal CDF.
    pub ks: f64,
}

pub fn distribution_stats(residuals: &[f64]) -> Result<DistributionStats> {
    let n = residuals.len();
    if n < 30 {
        return Err(Error::InsufficientData(format!("{n} residuals; at least 30 are needed")));
    }
    let mut x = residuals.to_vec();
    x.sort_by(f64::total_cmp);
    let mean = x.iter().sum::<f64>() / n as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let nf = n as f64;
    let ecdf: Vec<(f64, f64)> = x.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / nf)).collect();
    if !(std > 0.0) {
        let qq = x.iter().map(|&v| (mean, v)).collect();
        return Ok(DistributionStats { ecdf, qq, mean, std: 0.0, ks: 1.0 - 1.0 / nf });
    }
    let normal = Normal::new(mean, std).expect("positive std");
    let ks = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let qq = x.iter().enumerate().map(|(i, &v)| (normal.inverse_cdf((i as f64 + 0.5) / nf), v)).collect();
    Ok(DistributionStats { ecdf, qq, mean, std, ks })
}

/// Fraction of paired bootstrap resamples in which `a` has the smaller RMSE.
/// `a[i]` and `b[i]` must be residuals of the same packet.
pub fn paired_bootstrap(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    if a.is_empty() || iterations == 0 {
        return 0.0;
    }
    let mut rng = rng::stream(seed, Domain::Bootstrap, 0);
    let n = a.len();
    let mut wins = 0;
    for _ in 0..iterations {
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            sa += a[i] * a[i];
            sb += b[i] * b[i];
        }
        wins += (sa < sb) as usize;
    }
    wins as f64 / iterations as f64
}

/// Evaluation of one method at one factor.
#[derive(Debug, Clone)]
pub struct MethodEval {
    pub method: Method,
    pub n: usize,
    pub stats: PairingStats,
    pub fit: ClockFit,
    pub residuals: Vec<Residual>,
    pub rows: Vec<ReportRow>,
}

impl MethodEval {
    pub fn row(&self, class: Option<Class>) -> &ReportRow {
        self.rows.iter().find(|r| r.class == class).expect("every class has a row")
    }

    pub fn residuals_of(&self, class: Option<Class>) -> Vec<f64> {
        self.residuals.iter().filter(|r| class.is_none_or(|c| r.class == c)).map(|r| r.value_s).collect()
    }
}

pub type MethodKey = (Method, usize);

pub fn group_records(records: &[ToaRecord]) -> BTreeMap<MethodKey, Vec<ToaRecord>> {
    let mut out: BTreeMap<MethodKey, Vec<ToaRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.method, r.n)).or_default().push(r.clone());
    }
    out
}

/// Evaluates every (method, N) present in both receivers' records.
pub fn evaluate(rx1: &[ToaRecord], rx2: &[ToaRecord], max_order: usize) -> Result<Vec<MethodEval>> {
    let g1 = group_records(rx1);
    let g2 = group_records(rx2);
    let keys: Vec<MethodKey> = g1.keys().filter(|k| g2.contains_key(k)).copied().collect();
    if keys.is_empty() {
        return Err(Error::InsufficientData("the two receivers' records share no (method, N)".into()));
    }
    for k in g1.keys().chain(g2.keys()) {
        if !keys.contains(k) {
            log::warn!("{} at N = {} appears for one receiver only; skipped", k.0, k.1);
        }
    }
    use rayon::prelude::*;
    let evals: Vec<MethodEval> = keys
        .par_iter()
        .map(|&(method, n)| {
            let (pairs, stats) = pair_packets(&g1[&(method, n)], &g2[&(method, n)]);
            let t: Vec<f64> = pairs.iter().map(|p| p.t1_s).collect();
            let d: Vec<f64> = pairs.iter().map(|p| p.delta_s).collect();
            let fit = fit_clock(&t, &d, max_order).map_err(|e| Error::InsufficientData(format!("{method} at N = {n}: {e}")))?;
            let (residuals, rows) = residuals_and_sigma(method, n, &pairs, &fit);
            Ok(MethodEval { method, n, stats, fit, residuals, rows })
        })
        .collect::<Result<_>>()?;
    if let Some(weak) = evals.iter().find(|e| e.stats.pairs < 50 || 2.0 * e.fit.half_span < 10.0) {
        log::warn!(
            "clock fits are weakly constrained: {} pairs spanning {:.1} s (at least 50 pairs over 10 s recommended)",
            weak.stats.pairs,
            2.0 * weak.fit.half_span
        );
    }
    Ok(evals)
}

/// Residuals of two evaluations restricted to the packets both contain,
/// in a common order.
pub fn aligned_residuals(a: &MethodEval, b: &MethodEval, class: Option<Class>) -> (Vec<f64>, Vec<f64>) {
    let key = |r: &Residual| (r.payload_hex.clone(), (r.t_s * 1e3).round() as i64);
    let bmap: HashMap<_, f64> = b.residuals.iter().map(|r| (key(r), r.value_s)).collect();
    a.residuals
        .iter()
        .filter(|r| class.is_none_or(|c| r.class == c))
        .filter_map(|r| bmap.get(&key(r)).map(|&v| (r.value_s, v)))
        .unzip()
}

pub fn report_csv(evals: &[MethodEval]) -> String {
    let mut s = String::from("method,N,class,count,rmse_ns,sigma_ns,low_count\n");
    for e in evals {
        for r in &e.rows {
            if r.count == 0 {
                s.push_str(&format!("{},{},{},0,,,true\n", r.method, r.n, r.class_label()));
            } else {
                s.push_str(&format!(
                    "{},{},{},{},{:.2},{:.2},{}\n",
                    r.method,
                    r.n,
                    r.class_label(),
                    r.count,
                    r.rmse_ns,
                    r.sigma_ns,
                    r.low_count
                ));
            }
        }
    }
    s
}

fn thin<T: Copy>(v: &[T]) -> Vec<T> {
    if v.len() <= PLOT_POINTS {
        return v.to_vec();
    }
    (0..PLOT_POINTS).map(|i| v[i * (v.len() - 1) / (PLOT_POINTS - 1)]).collect()
}

/// ECDF and Q-Q exports (nanoseconds) for every method and class with
/// enough residuals.
pub fn plot_csvs(evals: &[MethodEval]) -> (String, String) {
    let mut ecdf = String::from("method,N,class,residual_ns,ecdf\n");
    let mut qq = String::from("method,N,class,normal_quantile_ns,empirical_ns\n");
    for e in evals {
        for class in std::iter::once(None).chain(Class::ALL.into_iter().map(Some)) {
            let v: Vec<f64> = e.residuals_of(class).iter().map(|x| x * 1e9).collect();
            let Ok(d) = distribution_stats(&v) else { continue };
            let label = class.map_or("all".to_string(), |c| c.to_string());
            for (x, p) in thin(&d.ecdf) {
                ecdf.push_str(&format!("{},{},{label},{x:.4},{p:.6}\n", e.method, e.n));
            }
            for (a, b) in thin(&d.qq) {
                qq.push_str(&format!("{},{},{label},{a:.4},{b:.4}\n", e.method, e.n));
            }
        }
    }
    (ecdf, qq)
}
