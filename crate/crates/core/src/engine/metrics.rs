use serde::{Deserialize, Serialize};

/// Token-count cost model. Serial cost is every produced token; parallel cost
/// charges each round only its longest transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunMetrics {
    pub total_tokens: usize,
    pub plan_tokens: usize,
    pub conclusion_tokens: usize,
    pub rounds: usize,
    pub per_round_critical_tokens: Vec<usize>,
    pub simulated_serial_cost: usize,
    pub simulated_parallel_cost: usize,
    pub speedup: f64,
}

impl RunMetrics {
    /// `rounds[k]` lists the token counts of the transitions fired in round `k`.
    pub fn from_rounds(plan_tokens: usize, rounds: &[Vec<usize>], conclusion_tokens: usize) -> Self {
        let step_tokens: usize = rounds.iter().flatten().sum();
        let critical: Vec<usize> = rounds.iter().map(|r| r.iter().copied().max().unwrap_or(0)).collect();
        let serial = plan_tokens + step_tokens + conclusion_tokens;
        let parallel = plan_tokens + critical.iter().sum::<usize>() + conclusion_tokens;
        Self {
            total_tokens: serial,
            plan_tokens,
            conclusion_tokens,
            rounds: rounds.len(),
            per_round_critical_tokens: critical,
            simulated_serial_cost: serial,
            simulated_parallel_cost: parallel,
            speedup: if parallel == 0 { 1.0 } else { serial as f64 / parallel as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub const SPEEDUP_BIN_WIDTH: f64 = 0.25;

/// Fixed-width bins from 1.0 up to the largest value.
pub fn speedup_histogram(speedups: &[f64]) -> Vec<HistogramBin> {
    let bin = |s: f64| (((s - 1.0) / SPEEDUP_BIN_WIDTH).floor().max(0.0)) as usize;
    let Some(top) = speedups.iter().copied().map(bin).max() else {
        return Vec::new();
    };
    let mut bins: Vec<HistogramBin> = (0..=top)
        .map(|k| HistogramBin {
            lo: 1.0 + k as f64 * SPEEDUP_BIN_WIDTH,
            hi: 1.0 + (k + 1) as f64 * SPEEDUP_BIN_WIDTH,
            count: 0,
        })
        .collect();
    for s in speedups {
        bins[bin(*s)].count += 1;
    }
    bins
}
