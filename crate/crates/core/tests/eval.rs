mod common;

use modes_toa::eval::*;
use modes_toa::toa::{round_toa, Method, ToaRecord};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalDist};

fn record(receiver_id: u32, i: usize, toa_s: f64, gamma: f64, beta: usize) -> ToaRecord {
    ToaRecord {
        receiver_id,
        packet_index: i,
        method: Method::CorrPulseR,
        n: 25,
        toa_s: round_toa(toa_s),
        gamma,
        beta,
        pulses_used: 30,
        flags: Vec::new(),
        payload_hex: format!("{i:014x}"),
        coarse_timestamp_s: toa_s,
    }
}

/// Two receivers' records for packets at `times`; receiver 2 reads
/// `t + drift(t) + noise2`, receiver 1 `t + noise1`.
fn records_pair(times: &[f64], drift: impl Fn(f64) -> f64, sigma: f64, seed: u64) -> (Vec<ToaRecord>, Vec<ToaRecord>) {
    let mut rng = common::rng(seed);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let (e1, e2) = if sigma > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
        a.push(record(1, i, t + e1, 0.2, 0));
        b.push(record(2, i, t + drift(t) + e2, 0.2, 0));
    }
    (a, b)
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn uniform_times(count: usize, start: f64, span: f64, seed: u64) -> Vec<f64> {
    let mut rng = common::rng(seed);
    let mut t: Vec<f64> = (0..count).map(|_| start + rng.random_range(0.0..span)).collect();
    t.sort_by(f64::total_cmp);
    t
}

#[test]
fn every_packet_seen_twice_gives_one_pair() {
    let times = uniform_times(1000, 100.0, 300.0, 1);
    let (a, b) = records_pair(&times, |_| 0.0, 1e-9, 2);
    let (pairs, stats) = pair_packets(&a, &b);
    assert_eq!(pairs.len(), 1000);
    assert_eq!(stats, PairingStats { pairs: 1000, ..Default::default() });
}

#[test]
fn pairing_drops_one_sided_far_and_ambiguous_packets() {
    let times = evenly(20, 10.0, 1.0);
    let (a, mut b) = records_pair(&times, |_| 0.0, 0.0, 3);
    // same payload more than 1 ms away
    b[7].coarse_timestamp_s += 1.5e-3;
    // a second copy of packet 9 within the window
    let mut dup = b[9].clone();
    dup.coarse_timestamp_s += 0.5e-3;
    b.push(dup);
    b[12].flags.push("unreliable".into());
    b.remove(4);
    let (pairs, stats) = pair_packets(&a, &b);
    assert_eq!(stats.unmatched_rx1, 2);
    assert_eq!(stats.unmatched_rx2, 1);
    assert_eq!(stats.ambiguous, 1);
    assert_eq!(stats.unreliable, 1);
    assert_eq!(pairs.len(), 16);
    let kept: Vec<usize> = pairs.iter().map(|p| p.packet_index).collect();
    for gone in [4, 7, 9, 12] {
        assert!(!kept.contains(&gone));
    }
}

fn evenly(count: usize, start: f64, gap: f64) -> Vec<f64> {
    (0..count).map(|i| start + i as f64 * gap).collect()
}

#[test]
fn pure_skew_is_recovered_without_noise() {
    let times = uniform_times(2000, 0.0, 300.0, 4);
    let (a, b) = records_pair(&times, |t| 10e-6 + 1e-6 * t, 0.0, 5);
    let evals = evaluate(&a, &b, DEFAULT_MAX_ORDER).unwrap();
    let e = &evals[0];
    assert_eq!(e.fit.order, 1);
    let c = e.fit.coefficients_t();
    assert!((c[0] - 10e-6).abs() <= 1e-3 * 10e-6, "offset {}", c[0]);
    assert!((c[1] - 1e-6).abs() <= 1e-3 * 1e-6, "skew {}", c[1]);
    // records keep 0.01 ns
    assert!(e.row(None).rmse_ns <= 0.01, "rmse {} ns", e.row(None).rmse_ns);
}

#[test]
fn constant_offset_selects_order_zero() {
    let times = uniform_times(500, 50.0, 100.0, 6);
    let (a, b) = records_pair(&times, |_| -3.2e-6, 2e-9, 7);
    let e = &evaluate(&a, &b, DEFAULT_MAX_ORDER).unwrap()[0];
    assert_eq!(e.fit.order, 0);
}

/// A quadratic drift of 5 us peak over five minutes plus 2 ns Gaussian
/// noise on the difference. With 10 000 pairs the 99 % chi-square interval
/// for the RMSE is about 2 ns +- 1.3 %.
#[test]
fn quadratic_drift_leaves_the_injected_noise() {
    let times = uniform_times(10_000, 0.0, 300.0, 8);
    let mut rng = common::rng(9);
    let drift = |t: f64| 5e-6 * (1.0 - ((t - 150.0) / 150.0).powi(2));
    let t = times;
    let d: Vec<f64> = t.iter().map(|&t| drift(t) + 2e-9 * gauss(&mut rng)).collect();
    let fit = fit_clock(&t, &d, DEFAULT_MAX_ORDER).unwrap();
    assert!(fit.order >= 2);
    let res: Vec<f64> = t.iter().zip(&d).map(|(t, d)| d - fit.eval(*t)).collect();
    let r = rmse(&res) * 1e9;
    assert!((1.8..=2.2).contains(&r), "rmse {r} ns");
}

#[test]
fn sigma_matches_the_per_receiver_noise_under_cubic_drift() {
    let times = uniform_times(5000, 0.0, 300.0, 10);
    let sigma = 1.5e-9;
    let drift = |t: f64| 2e-6 + 3e-8 * t - 4e-10 * t * t + 1e-12 * t * t * t;
    let (a, b) = records_pair(&times, drift, sigma, 11);
    let e = &evaluate(&a, &b, DEFAULT_MAX_ORDER).unwrap()[0];
    let s = e.row(None).sigma_ns;
    assert!((s - 1.5).abs() <= 0.15, "sigma {s} ns");
}

#[test]
fn sigma_is_rmse_over_root_two_in_every_row() {
    let times = uniform_times(3000, 0.0, 200.0, 12);
    let (mut a, mut b) = records_pair(&times, |t| 1e-7 * t, 3e-9, 13);
    // spread the pairs evenly across the classes
    for r in a.iter_mut().chain(b.iter_mut()) {
        match r.packet_index % 3 {
            0 => r.gamma = 0.01,
            1 => r.beta = 40,
            _ => {}
        }
    }
    let e = &evaluate(&a, &b, DEFAULT_MAX_ORDER).unwrap()[0];
    for row in &e.rows {
        assert!((row.sigma_ns * std::f64::consts::SQRT_2 - row.rmse_ns).abs() <= 1e-12 * row.rmse_ns.max(1.0), "{row:?}");
    }
    let all = e.row(None).count;
    let parts: usize = Class::ALL.iter().map(|&c| e.row(Some(c)).count).sum();
    assert_eq!(all, parts);
    assert_eq!(all, 3000);
    for c in Class::ALL {
        assert_eq!(e.row(Some(c)).count, 1000);
    }
}

#[test]
fn sigma_of_reported_rmse_values() {
    assert!((sigma_from_rmse(2.16) - 1.53).abs() < 0.005);
    assert!((sigma_from_rmse(3.15) - 2.23).abs() < 0.005);
    assert_eq!(sigma_from_rmse(rmse(&[0.0; 20])), 0.0);
}

#[test]
fn class_boundaries() {
    assert_eq!(Class::of(0.04, 0), Class::L);
    assert_eq!(Class::of(0.0400001, 0), Class::M);
    assert_eq!(Class::of(0.3, 10), Class::H);
    assert_eq!(Class::of(0.3, 9), Class::M);
    // both conditions: low strength wins
    assert_eq!(Class::of(0.03, 12), Class::L);
}

#[test]
fn small_classes_are_flagged() {
    let times = uniform_times(200, 0.0, 60.0, 14);
    let (mut a, mut b) = records_pair(&times, |_| 0.0, 1e-9, 15);
    for r in a.iter_mut().chain(b.iter_mut()).filter(|r| r.packet_index < 5) {
        r.beta = 20;
    }
    let e = &evaluate(&a, &b, DEFAULT_MAX_ORDER).unwrap()[0];
    assert!(e.row(Some(Class::H)).low_count);
    assert_eq!(e.row(Some(Class::H)).count, 5);
    assert!(e.row(Some(Class::L)).low_count);
    assert_eq!(e.row(Some(Class::L)).count, 0);
    assert!(!e.row(Some(Class::M)).low_count);
}

#[test]
fn ks_separates_normal_from_two_point_samples() {
    let mut rng = common::rng(16);
    let x: Vec<f64> = (0..10_000).map(|_| gauss(&mut rng)).collect();
    assert!(distribution_stats(&x).unwrap().ks < 0.02);
    let two: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
    assert!(distribution_stats(&two).unwrap().ks > 0.2);
    assert!(distribution_stats(&x[..29]).is_err());
}

/// Interior Q-Q points of a normal sample stay within three standard errors
/// of the order statistic, `sqrt(p (1 - p) / n) / phi(z_p)` in units of the
/// fitted std.
#[test]
fn qq_points_follow_the_fitted_line() {
    let mut rng = common::rng(17);
    let n = 4000;
    let x: Vec<f64> = (0..n).map(|_| 3.0 + 1.7 * gauss(&mut rng)).collect();
    let s = distribution_stats(&x).unwrap();
    let unit = NormalDist::new(0.0, 1.0).unwrap();
    for (i, &(q, v)) in s.qq.iter().enumerate() {
        let p = (i as f64 + 0.5) / n as f64;
        if !(0.05..=0.95).contains(&p) {
            continue;
        }
        let z = unit.inverse_cdf(p);
        let se = (p * (1.0 - p) / n as f64).sqrt() / unit.pdf(z) * s.std;
        assert!((v - q).abs() <= 3.0 * se, "p = {p}: {v} vs {q}");
    }
    // ECDF is the sorted sample with rank / n
    assert!(s.ecdf.windows(2).all(|w| w[0].0 <= w[1].0));
    assert_eq!(s.ecdf.last().unwrap().1, 1.0);
}

#[test]
fn report_is_deterministic_and_complete() {
    let times = uniform_times(300, 0.0, 30.0, 18);
    let (a, b) = records_pair(&times, |t| 1e-8 * t, 2e-9, 19);
    let e1 = evaluate(&a, &b, DEFAULT_MAX_ORDER).unwrap();
    let e2 = evaluate(&a, &b, DEFAULT_MAX_ORDER).unwrap();
    let csv = report_csv(&e1);
    assert_eq!(csv, report_csv(&e2));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,N,class,count,rmse_ns,sigma_ns,low_count");
    assert_eq!(lines.len(), 1 + 4);
    assert_eq!(plot_csvs(&e1), plot_csvs(&e2));
}

#[test]
fn evaluation_needs_a_shared_method() {
    let times = uniform_times(100, 0.0, 30.0, 20);
    let (a, mut b) = records_pair(&times, |_| 0.0, 1e-9, 21);
    b.iter_mut().for_each(|r| r.method = Method::PeakPulse);
    assert!(evaluate(&a, &b, DEFAULT_MAX_ORDER).is_err());
}

proptest! {
    #[test]
    fn residual_sum_of_squares_never_grows_with_order(seed in 0u64..1000, count in 20usize..200) {
        let mut rng = common::rng(seed);
        let t: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..100.0)).collect();
        let d: Vec<f64> = (0..count).map(|_| rng.random_range(-1e-6..1e-6)).collect();
        let fit = fit_clock(&t, &d, DEFAULT_MAX_ORDER).unwrap();
        for w in fit.rss_by_order.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
    }
}
