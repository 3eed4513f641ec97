//! Correlation statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(x: &[f64], y: &[f64], min: usize, what: &str) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{what}: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min {
        return Err(Error::Domain(format!(
            "{what} needs at least {min} values, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{what}: non-finite value")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 2, "pearson")?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties receiving the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 3, "spearman")?;
    pearson(&average_ranks(x), &average_ranks(y))
        .map_err(|_| Error::Degenerate("spearman of a constant vector".into()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KendallVariant {
    TauA,
    #[default]
    TauB,
}

/// Pair counts used by Kendall's tau.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    /// Tied in `x` only.
    pub ties_x: u64,
    /// Tied in `y` only.
    pub ties_y: u64,
    pub ties_both: u64,
}

pub fn pair_counts(x: &[f64], y: &[f64]) -> PairCounts {
    let mut c = PairCounts::default();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => c.ties_both += 1,
                (true, false) => c.ties_x += 1,
                (false, true) => c.ties_y += 1,
                _ if (dx > 0.0) == (dy > 0.0) => c.concordant += 1,
                _ => c.discordant += 1,
            }
        }
    }
    c
}

pub fn kendall_tau(x: &[f64], y: &[f64], variant: KendallVariant) -> Result<f64> {
    check_lengths(x, y, 2, "kendall_tau")?;
    let c = pair_counts(x, y);
    let n = x.len() as f64;
    let s = c.concordant as f64 - c.discordant as f64;
    let untied = (c.concordant + c.discordant) as f64;
    let tx = untied + c.ties_x as f64;
    let ty = untied + c.ties_y as f64;
    if tx == 0.0 || ty == 0.0 {
        return Err(Error::Degenerate("kendall_tau of an all-tied vector".into()));
    }
    Ok(match variant {
        KendallVariant::TauA => s / (n * (n - 1.0) / 2.0),
        KendallVariant::TauB => s / (tx * ty).sqrt(),
    })
}

/// `true` if any two values are exactly equal.
pub fn has_ties(x: &[f64]) -> bool {
    (0..x.len()).any(|i| (i + 1..x.len()).any(|j| x[i] == x[j]))
}
