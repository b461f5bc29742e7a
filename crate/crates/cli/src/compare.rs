//! Per-row mIoU deltas between two `summary.csv` files.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// (method, n, lambda, ratio, eval_mode), as written.
pub type RowKey = [String; 5];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delta {
    pub key: RowKey,
    /// `miou_mean` in hundredths of a percentage point.
    pub baseline: i64,
    pub candidate: i64,
}

impl Delta {
    pub fn hundredths(&self) -> i64 {
        self.candidate - self.baseline
    }
}

/// `+1.57`, `-0.30`, `+0.00`.
pub fn format_delta(hundredths: i64) -> String {
    let sign = if hundredths < 0 { '-' } else { '+' };
    let a = hundredths.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

fn hundredths(s: &str) -> Option<i64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then(|| (v * 100.0).round() as i64)
}

/// Key to `miou_mean`, in file order.
pub fn read_summary(path: &Path) -> Result<Vec<(RowKey, i64)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).with_context(|| format!("{}: no `{name}` column", path.display()))
    };
    let key_cols = [col("method")?, col("n")?, col("lambda")?, col("ratio")?, col("eval_mode")?];
    let mean_col = col("miou_mean")?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let key = key_cols.map(|c| record.get(c).unwrap_or("").to_string());
        let raw = record.get(mean_col).unwrap_or("");
        let mean = hundredths(raw)
            .with_context(|| format!("{}: row {}: miou_mean `{raw}` is not a number", path.display(), i + 2))?;
        rows.push((key, mean));
    }
    Ok(rows)
}

/// Deltas in baseline order. Both files must hold exactly the same keys.
pub fn compare(baseline: &[(RowKey, i64)], candidate: &[(RowKey, i64)]) -> Result<Vec<Delta>> {
    let mut cand: BTreeMap<&RowKey, i64> = BTreeMap::new();
    for (k, v) in candidate {
        if cand.insert(k, *v).is_some() {
            bail!("candidate repeats row {}", k.join(","));
        }
    }
    let mut out = Vec::with_capacity(baseline.len());
    for (k, v) in baseline {
        let Some(c) = cand.remove(k) else {
            bail!("row {} missing from candidate", k.join(","));
        };
        out.push(Delta { key: k.clone(), baseline: *v, candidate: c });
    }
    if let Some(k) = cand.keys().next() {
        bail!("row {} missing from baseline", k.join(","));
    }
    Ok(out)
}

pub fn compare_files(baseline: &Path, candidate: &Path) -> Result<Vec<Delta>> {
    compare(&read_summary(baseline)?, &read_summary(candidate)?)
}

/// Table as CSV text: key columns, both means and the signed delta.
pub fn render(deltas: &[Delta]) -> String {
    let mut s = String::from("method,n,lambda,ratio,eval_mode,baseline,candidate,delta_pp\n");
    for d in deltas {
        let pct = |h: i64| format!("{}{}.{:02}", if h < 0 { "-" } else { "" }, h.unsigned_abs() / 100, h.unsigned_abs() % 100);
        s.push_str(&format!(
            "{},{},{},{}\n",
            d.key.join(","),
            pct(d.baseline),
            pct(d.candidate),
            format_delta(d.hundredths())
        ));
    }
    s
}
