//! Fixed-width rendering of a report CSV: one line per method and factor,
//! sigma per class in columns. Classes with too few pairs are starred.

use anyhow::{anyhow, bail};
use std::collections::BTreeMap;

const CLASSES: [&str; 4] = ["all", "L", "M", "H"];

pub fn render(csv: &str) -> anyhow::Result<String> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty report"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| cols.iter().position(|c| *c == name).ok_or_else(|| anyhow!("report has no `{name}` column"));
    let (im, in_, ic, is) = (col("method")?, col("N")?, col("class")?, col("sigma_ns")?);
    let low = cols.iter().position(|c| *c == "low_count");
    // keep first-seen row order
    let mut order: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String), BTreeMap<String, String>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            bail!("line {}: expected {} fields, found {}", i + 2, cols.len(), f.len());
        }
        let key = (f[im].to_string(), f[in_].to_string());
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        let star = if low.is_some_and(|l| f[l] == "true") && !f[is].is_empty() { "*" } else { "" };
        cells.entry(key).or_default().insert(f[ic].to_string(), format!("{}{star}", f[is]));
    }
    let mut out = format!("{:<14}{:>5}", "method", "N");
    for c in CLASSES {
        out.push_str(&format!("{c:>9}"));
    }
    out.push('\n');
    for key in &order {
        out.push_str(&format!("{:<14}{:>5}", key.0, key.1));
        for c in CLASSES {
            let v = cells[key].get(c).map(String::as_str).filter(|v| !v.is_empty()).unwrap_or("-");
            out.push_str(&format!("{v:>9}"));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_rows_in_input_order() {
        let csv = "method,N,class,count,rmse_ns,sigma_ns\n\
                   PeakPulse,25,all,10,2.00,1.41\n\
                   PeakPulse,25,M,6,1.00,0.71\n\
                   Legacy,1,all,10,100.00,70.71\n";
        let t = render(csv).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("PeakPulse"));
        assert!(lines[1].contains("1.41") && lines[1].contains("0.71"));
        assert!(lines[2].contains("70.71"));
        assert!(lines[2].trim_end().ends_with('-'));
    }

    #[test]
    fn stars_low_count_classes() {
        let csv = "method,N,class,count,rmse_ns,sigma_ns,low_count\n\
                   PeakPulse,25,all,40,2.00,1.41,false\n\
                   PeakPulse,25,H,4,3.00,2.12,true\n\
                   PeakPulse,25,L,0,,,true\n";
        let t = render(csv).unwrap();
        let row = t.lines().nth(1).unwrap();
        assert!(row.contains("1.41") && !row.contains("1.41*"));
        assert!(row.contains("2.12*"));
        assert_eq!(row.matches('-').count(), 2);
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(render("method,N,class,count,rmse_ns,sigma_ns\nA,1,all\n").is_err());
    }
}
