//! Threshold detection, detection/false-alarm rates and ROC curves.

use serde::{Deserialize, Serialize};

use crate::io::decimal;
use crate::model::ActivityPattern;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Users with `gamma_hat > nu * sigma2`, ascending.
    pub estimated_active: Vec<usize>,
    pub nu: f64,
}

pub fn threshold_detect(gamma_hat: &[f64], sigma2: f64, nu: f64) -> Result<DetectionOutcome> {
    if !(nu >= 0.0) {
        return Err(Error::InvalidConfig(format!("threshold nu must be >= 0, got {nu}")));
    }
    let cut = nu * sigma2;
    let estimated_active = gamma_hat
        .iter()
        .enumerate()
        .filter(|(_, g)| **g > cut)
        .map(|(k, _)| k)
        .collect();
    Ok(DetectionOutcome { estimated_active, nu })
}

/// `(p_D, p_FA)`. `p_D = 1` when nobody is active; `p_FA = 0` when everybody is.
pub fn detection_rates(truth: &ActivityPattern, outcome: &DetectionOutcome, users: usize) -> (f64, f64) {
    let active = truth.support().len();
    let hits = outcome
        .estimated_active
        .iter()
        .filter(|k| **k < truth.users() && truth.is_active(**k))
        .count();
    let false_alarms = outcome.estimated_active.len() - hits;
    let p_d = if active == 0 { 1.0 } else { hits as f64 / active as f64 };
    let inactive = users.saturating_sub(active);
    let p_fa = if inactive == 0 { 0.0 } else { false_alarms as f64 / inactive as f64 };
    (p_d, p_fa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub nu: f64,
    pub p_d: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by ascending `nu`.
    pub points: Vec<RocPoint>,
    pub trials: usize,
}

/// `n` points logarithmically spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

/// 100 thresholds over `[1e-4, 1e2]`.
pub fn default_nu_grid() -> Vec<f64> {
    log_grid(1e-4, 1e2, 100)
}

/// Trial-averaged rates at every threshold of `nu_grid`.
pub fn roc_sweep<'a, I>(trials: I, sigma2: f64, nu_grid: &[f64]) -> Result<RocCurve>
where
    I: IntoIterator<Item = (&'a [f64], &'a ActivityPattern)>,
{
    if nu_grid.len() < 2 {
        return Err(Error::InvalidConfig("nu grid needs at least 2 points".into()));
    }
    if nu_grid.windows(2).any(|w| !(w[0] <= w[1])) || !(nu_grid[0] >= 0.0) {
        return Err(Error::InvalidConfig("nu grid must be nonnegative and ascending".into()));
    }
    let mut sum_pd = vec![0.0; nu_grid.len()];
    let mut sum_pfa = vec![0.0; nu_grid.len()];
    let mut count = 0usize;
    for (gamma_hat, truth) in trials {
        if gamma_hat.len() != truth.users() {
            return Err(Error::dims("roc_sweep", truth.users(), gamma_hat.len()));
        }
        count += 1;
        for (i, nu) in nu_grid.iter().enumerate() {
            let outcome = threshold_detect(gamma_hat, sigma2, *nu)?;
            let (pd, pfa) = detection_rates(truth, &outcome, truth.users());
            sum_pd[i] += pd;
            sum_pfa[i] += pfa;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("roc_sweep needs at least one trial"));
    }
    let n = count as f64;
    let points = nu_grid
        .iter()
        .enumerate()
        .map(|(i, nu)| RocPoint {
            nu: *nu,
            p_d: sum_pd[i] / n,
            p_fa: sum_pfa[i] / n,
        })
        .collect();
    Ok(RocCurve { points, trials: count })
}

impl RocCurve {
    /// Detection rate at false-alarm rate `target`, interpolated linearly
    /// between the two grid points that bracket it. Targets above the
    /// curve's largest `p_fa` return the first point's `p_d`.
    pub fn pd_at_pfa(&self, target: f64) -> f64 {
        let pts = &self.points;
        match pts.iter().position(|p| p.p_fa <= target) {
            None => pts.last().map_or(0.0, |p| p.p_d),
            Some(0) => pts[0].p_d,
            Some(i) => {
                let (hi, lo) = (pts[i - 1], pts[i]);
                let w = (target - lo.p_fa) / (hi.p_fa - lo.p_fa);
                lo.p_d + w * (hi.p_d - lo.p_d)
            }
        }
    }

    /// `nu,p_d,p_fa` with 12 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("nu,p_d,p_fa\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", decimal(p.nu, 12), decimal(p.p_d, 12), decimal(p.p_fa, 12)));
        }
        out
    }
}
