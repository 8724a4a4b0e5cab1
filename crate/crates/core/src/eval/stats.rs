use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EvalRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no scored records in condition")]
pub struct EmptyConditionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub label: String,
    pub avg: f64,
    pub med: f64,
    pub std: f64,
    pub avg_tkn_cmp: f64,
    pub avg_tkn_pmt: f64,
    pub avg_tkn_tot: f64,
    pub n: usize,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Divides by n, not n - 1.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Statistics over the non-excluded records. The label is left empty for
/// the caller to fill in.
pub fn aggregate(records: &[EvalRecord]) -> Result<StatsRow, EmptyConditionError> {
    let scored: Vec<&EvalRecord> = records.iter().filter(|r| !r.excluded).collect();
    let sims: Vec<f64> = scored.iter().filter_map(|r| r.similarity).collect();
    if sims.is_empty() {
        return Err(EmptyConditionError);
    }
    let n = scored.len() as f64;
    let avg_of = |f: &dyn Fn(&EvalRecord) -> u64| scored.iter().map(|r| f(r) as f64).sum::<f64>() / n;
    Ok(StatsRow {
        label: String::new(),
        avg: mean(&sims),
        med: median(&sims),
        std: population_std(&sims),
        avg_tkn_cmp: avg_of(&|r| r.token_usage.completion()),
        avg_tkn_pmt: avg_of(&|r| r.token_usage.prompt()),
        avg_tkn_tot: avg_of(&|r| r.token_usage.total()),
        n: scored.len(),
    })
}
