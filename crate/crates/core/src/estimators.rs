//! Coordinate-wise descent for the ML, MMV and NNLS activity estimators.
//!
//! All three estimators share one loop: pick a coordinate `k`, compute the
//! closed-form minimizer of the objective along `e_k` (clamped so that
//! `gamma_k` stays nonnegative), apply it, and update the maintained
//! covariance `Sigma` and, for ML/MMV, its inverse with a rank-1 step.
//!
//! With `u = Sigma^{-1} a_k`, `p = a_k^H u`, `q = u^H Sigma_hat u`:
//!
//! | kind | unconstrained step                     | base of `Sigma` |
//! |------|----------------------------------------|-----------------|
//! | ML   | `(q - p) / p^2`                        | `noise_var`     |
//! | MMV  | `(sqrt(q) - 1) / p`                    | `rho`           |
//! | NNLS | `a_k^H (Sigma_hat - Sigma) a_k / |a_k|^4` | `noise_var`  |

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::linalg::{frobenius_sq, hpd_inverse_logdet};
use crate::model::{true_covariance, PilotMatrix, SampleCovariance};
use crate::rng::{SeedStreams, Stream};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Denominators `1 + d a^H Sigma^{-1} a` below this are treated as a fault.
const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ml,
    Mmv,
    Nnls,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Ml, EstimatorKind::Mmv, EstimatorKind::Nnls];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ml => "ml",
            EstimatorKind::Mmv => "mmv",
            EstimatorKind::Nnls => "nnls",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(EstimatorKind::Ml),
            "mmv" => Ok(EstimatorKind::Mmv),
            "nnls" => Ok(EstimatorKind::Nnls),
            other => Err(Error::Parse(format!("unknown estimator '{other}' (expected ml, mmv or nnls)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateOrder {
    /// Fresh uniform permutation of all users every sweep.
    #[default]
    RandomPermutation,
    /// `0, 1, ..., K-1` every sweep.
    Cyclic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub kind: EstimatorKind,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    /// Stop once the largest coordinate step in a sweep is below this.
    /// `None` means `1e-6 * noise_var`.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub order: CoordinateOrder,
    /// MMV regularizer; `None` means `noise_var`.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Sweeps between full rebuilds of `Sigma` and its inverse.
    #[serde(default = "default_reinversion_period")]
    pub reinversion_period: usize,
    /// Seed for the random coordinate permutation.
    #[serde(default)]
    pub order_seed: u64,
}

fn default_max_sweeps() -> usize {
    1000
}

fn default_reinversion_period() -> usize {
    1
}

impl SolverOptions {
    pub fn new(kind: EstimatorKind) -> Self {
        SolverOptions {
            kind,
            max_sweeps: default_max_sweeps(),
            tol: None,
            order: CoordinateOrder::default(),
            rho: None,
            reinversion_period: default_reinversion_period(),
            order_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidConfig("max_sweeps must be >= 1".into()));
        }
        if self.reinversion_period == 0 {
            return Err(Error::InvalidConfig("reinversion_period must be >= 1".into()));
        }
        if let Some(tol) = self.tol {
            if !(tol >= 0.0) {
                return Err(Error::InvalidConfig(format!("tol must be >= 0, got {tol}")));
            }
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::InvalidConfig(format!("rho must be > 0, got {rho}")));
            }
        }
        Ok(())
    }

    pub fn resolved_tol(&self, noise_var: f64) -> f64 {
        self.tol.unwrap_or(1e-6 * noise_var)
    }

    pub fn resolved_rho(&self, noise_var: f64) -> f64 {
        self.rho.unwrap_or(noise_var)
    }

    /// Diagonal loading of `Sigma` for this estimator.
    pub fn base(&self, noise_var: f64) -> f64 {
        match self.kind {
            EstimatorKind::Mmv => self.resolved_rho(noise_var),
            EstimatorKind::Ml | EstimatorKind::Nnls => noise_var,
        }
    }
}

fn trace_product_re(x: &CMatrix, y: &CMatrix) -> f64 {
    // tr(X Y) = sum_ij X_ij Y_ji
    let n = x.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += (x[(i, j)] * y[(j, i)]).re;
        }
    }
    acc
}

fn check_dims(gamma: &[f64], pilots: &PilotMatrix, sigma_hat: &SampleCovariance, op: &'static str) -> Result<()> {
    if gamma.len() != pilots.users() {
        return Err(Error::dims(op, format!("{} gamma entries", pilots.users()), gamma.len()));
    }
    if sigma_hat.dim() != pilots.pilot_len() {
        return Err(Error::dims(op, format!("{0}x{0} covariance", pilots.pilot_len()), sigma_hat.dim()));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::InvalidConfig(format!("{op}: gamma entry {g} is negative")));
    }
    Ok(())
}

/// Negative normalized log-likelihood `log|Sigma| + tr(Sigma^{-1} Sigma_hat)`
/// with `Sigma = A diag(gamma) A^H + sigma2 I`.
pub fn ml_cost(gamma: &[f64], pilots: &PilotMatrix, sigma2: f64, sigma_hat: &SampleCovariance) -> Result<f64> {
    check_dims(gamma, pilots, sigma_hat, "ml_cost")?;
    let sigma = true_covariance(pilots, gamma, sigma2)?;
    let (inv, logdet) = hpd_inverse_logdet(sigma.matrix())?;
    Ok(logdet + trace_product_re(&inv, sigma_hat.matrix()))
}

/// `sum(gamma) + tr((A diag(gamma) A^H + rho I)^{-1} Sigma_hat)`.
pub fn mmv_cost(gamma: &[f64], pilots: &PilotMatrix, rho: f64, sigma_hat: &SampleCovariance) -> Result<f64> {
    check_dims(gamma, pilots, sigma_hat, "mmv_cost")?;
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!("rho must be > 0, got {rho}")));
    }
    let sigma = true_covariance(pilots, gamma, rho)?;
    let (inv, _) = hpd_inverse_logdet(sigma.matrix())?;
    Ok(gamma.iter().sum::<f64>() + trace_product_re(&inv, sigma_hat.matrix()))
}

/// `||Sigma_hat - A diag(gamma) A^H - sigma2 I||_F^2`.
pub fn nnls_cost(gamma: &[f64], pilots: &PilotMatrix, sigma2: f64, sigma_hat: &SampleCovariance) -> Result<f64> {
    check_dims(gamma, pilots, sigma_hat, "nnls_cost")?;
    let sigma = true_covariance(pilots, gamma, sigma2)?;
    Ok(frobenius_sq(&(sigma_hat.matrix() - sigma.matrix())))
}

/// Objective of `kind` evaluated from scratch; `base` is `noise_var` for
/// ML/NNLS and `rho` for MMV.
pub fn objective(
    kind: EstimatorKind,
    gamma: &[f64],
    pilots: &PilotMatrix,
    base: f64,
    sigma_hat: &SampleCovariance,
) -> Result<f64> {
    match kind {
        EstimatorKind::Ml => ml_cost(gamma, pilots, base, sigma_hat),
        EstimatorKind::Mmv => mmv_cost(gamma, pilots, base, sigma_hat),
        EstimatorKind::Nnls => nnls_cost(gamma, pilots, base, sigma_hat),
    }
}

/// Sherman-Morrison: inverse of `Sigma + d a a^H` given `Sigma^{-1}`.
pub fn rank1_update_inverse(sigma_inv: &CMatrix, a: &CVector, d: f64) -> Result<CMatrix> {
    if d == 0.0 {
        return Ok(sigma_inv.clone());
    }
    let u = sigma_inv * a;
    let denom = 1.0 + d * a.dotc(&u).re;
    if !(denom > DENOM_FLOOR) {
        return Err(Error::NumericalFault(format!(
            "rank-1 update denominator {denom} is not positive"
        )));
    }
    let mut out = sigma_inv.clone();
    out.gerc(C64::new(-d / denom, 0.0), &u, &u, C64::new(1.0, 0.0));
    Ok(out)
}

/// Iterate of the coordinate descent.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    gamma: Vec<f64>,
    sigma: CMatrix,
    sigma_inv: CMatrix,
    base: f64,
    cost: f64,
    sweeps: usize,
}

impl EstimatorState {
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `sum_k gamma_k a_k a_k^H + base I`.
    pub fn sigma(&self) -> &CMatrix {
        &self.sigma
    }

    /// Inverse of [`EstimatorState::sigma`]. Not maintained for NNLS, whose
    /// update never reads it; there it holds the inverse from the last rebuild.
    pub fn sigma_inv(&self) -> &CMatrix {
        &self.sigma_inv
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Objective value tracked incrementally since the last rebuild.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub kind: EstimatorKind,
    /// Objective after each sweep.
    pub sweep_costs: Vec<f64>,
    pub final_cost: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Largest coordinate step in the last sweep.
    pub last_max_step: f64,
    /// Rank-1 updates that hit the denominator floor and forced a rebuild.
    pub faults: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub gamma: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Coordinate-descent solver bound to one `(Sigma_hat, A)` pair.
pub struct CoordinateDescent<'a> {
    pilots: &'a PilotMatrix,
    sigma_hat: &'a SampleCovariance,
    opts: SolverOptions,
    tol: f64,
    state: EstimatorState,
    /// `a_k^H Sigma_hat a_k` (NNLS only).
    hat_quad: Vec<f64>,
    norm2: Vec<f64>,
    faults: usize,
    u: CVector,
    v: CVector,
}

impl<'a> CoordinateDescent<'a> {
    pub fn new(
        sigma_hat: &'a SampleCovariance,
        pilots: &'a PilotMatrix,
        noise_var: f64,
        opts: SolverOptions,
    ) -> Result<Self> {
        opts.validate()?;
        if !(noise_var > 0.0) {
            return Err(Error::InvalidConfig(format!("noise variance must be positive, got {noise_var}")));
        }
        let (d, k) = (pilots.pilot_len(), pilots.users());
        if sigma_hat.dim() != d {
            return Err(Error::dims("CoordinateDescent::new", format!("{d}x{d} covariance"), sigma_hat.dim()));
        }
        let base = opts.base(noise_var);
        let norm2: Vec<f64> = pilots.matrix().column_iter().map(|c| c.norm_squared()).collect();
        let hat_quad = if opts.kind == EstimatorKind::Nnls {
            (0..k)
                .map(|j| {
                    let a = pilots.matrix().column(j);
                    a.dotc(&(sigma_hat.matrix() * a)).re
                })
                .collect()
        } else {
            Vec::new()
        };
        let state = EstimatorState {
            gamma: vec![0.0; k],
            sigma: CMatrix::identity(d, d) * C64::new(base, 0.0),
            sigma_inv: CMatrix::identity(d, d) * C64::new(1.0 / base, 0.0),
            base,
            cost: 0.0,
            sweeps: 0,
        };
        let mut solver = CoordinateDescent {
            pilots,
            sigma_hat,
            tol: opts.resolved_tol(noise_var),
            opts,
            state,
            hat_quad,
            norm2,
            faults: 0,
            u: DVector::zeros(d),
            v: DVector::zeros(d),
        };
        solver.state.cost = solver.exact_cost()?;
        Ok(solver)
    }

    /// Replaces the all-zero start with `gamma`.
    pub fn with_initial_gamma(mut self, gamma: &[f64]) -> Result<Self> {
        check_dims(gamma, self.pilots, self.sigma_hat, "with_initial_gamma")?;
        self.state.gamma = gamma.to_vec();
        self.rebuild()?;
        Ok(self)
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    fn exact_cost(&self) -> Result<f64> {
        let s = &self.state;
        match self.opts.kind {
            EstimatorKind::Nnls => Ok(frobenius_sq(&(self.sigma_hat.matrix() - &s.sigma))),
            EstimatorKind::Ml => {
                let (_, logdet) = hpd_inverse_logdet(&s.sigma)?;
                Ok(logdet + trace_product_re(&s.sigma_inv, self.sigma_hat.matrix()))
            }
            EstimatorKind::Mmv => {
                Ok(s.gamma.iter().sum::<f64>() + trace_product_re(&s.sigma_inv, self.sigma_hat.matrix()))
            }
        }
    }

    /// Recomputes `Sigma` from `gamma`, re-inverts it, and refreshes the cost.
    pub fn rebuild(&mut self) -> Result<()> {
        let cov = true_covariance(self.pilots, &self.state.gamma, self.state.base)?;
        self.state.sigma = cov.matrix().clone();
        let (inv, _) = hpd_inverse_logdet(&self.state.sigma)
            .map_err(|_| Error::NumericalFault("estimator covariance lost positive definiteness".into()))?;
        self.state.sigma_inv = inv;
        self.state.cost = self.exact_cost()?;
        Ok(())
    }

    /// One coordinate step on user `k`; returns the applied step `d`.
    pub fn coord_update(&mut self, k: usize) -> Result<f64> {
        let users = self.pilots.users();
        if k >= users {
            return Err(Error::dims("coord_update", format!("index < {users}"), k));
        }
        let a = self.pilots.matrix().column(k);
        let gamma_k = self.state.gamma[k];
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);

        let (step, delta_cost, inv_update) = match self.opts.kind {
            EstimatorKind::Nnls => {
                self.u.gemv(one, &self.state.sigma, &a, zero);
                let resid = self.hat_quad[k] - a.dotc(&self.u).re;
                let n4 = self.norm2[k] * self.norm2[k];
                let raw = resid / n4;
                let d = if raw <= -gamma_k { -gamma_k } else { raw };
                (d, -2.0 * d * resid + d * d * n4, None)
            }
            kind => {
                self.u.gemv(one, &self.state.sigma_inv, &a, zero);
                let p = a.dotc(&self.u).re;
                self.v.gemv(one, self.sigma_hat.matrix(), &self.u, zero);
                let q = self.u.dotc(&self.v).re.max(0.0);
                let raw = match kind {
                    EstimatorKind::Ml => (q - p) / (p * p),
                    _ => (q.sqrt() - 1.0) / p,
                };
                let d = if raw <= -gamma_k { -gamma_k } else { raw };
                let denom = 1.0 + d * p;
                let delta = match kind {
                    EstimatorKind::Ml => denom.ln() - d * q / denom,
                    _ => d - d * q / denom,
                };
                (d, delta, Some(denom))
            }
        };

        if step == 0.0 {
            return Ok(0.0);
        }
        self.state.gamma[k] = if step == -gamma_k { 0.0 } else { (gamma_k + step).max(0.0) };
        self.state.sigma.gerc(C64::new(step, 0.0), &a, &a, one);

        match inv_update {
            Some(denom) if denom > DENOM_FLOOR => {
                // u still holds Sigma^{-1} a from before the step.
                self.state.sigma_inv.gerc(C64::new(-step / denom, 0.0), &self.u, &self.u, one);
                self.state.cost += delta_cost;
            }
            Some(_) => {
                self.faults += 1;
                self.rebuild()?;
            }
            None => self.state.cost += delta_cost,
        }
        Ok(step)
    }

    /// One pass over `order`; returns the largest step magnitude.
    pub fn sweep(&mut self, order: &[usize]) -> Result<f64> {
        let mut max_step = 0.0f64;
        for &k in order {
            max_step = max_step.max(self.coord_update(k)?.abs());
        }
        self.state.sweeps += 1;
        if self.state.sweeps.is_multiple_of(self.opts.reinversion_period) {
            self.rebuild()?;
        }
        Ok(max_step)
    }

    pub fn run(mut self) -> Result<SolveOutput> {
        let users = self.pilots.users();
        let mut order: Vec<usize> = (0..users).collect();
        let mut rng = SeedStreams::new(self.opts.order_seed).rng(Stream::CoordinateOrder);
        let mut sweep_costs = Vec::new();
        let mut converged = false;
        let mut last_max_step = f64::INFINITY;
        while self.state.sweeps < self.opts.max_sweeps {
            if self.opts.order == CoordinateOrder::RandomPermutation {
                order.shuffle(&mut rng);
            }
            last_max_step = self.sweep(&order)?;
            sweep_costs.push(self.state.cost);
            if last_max_step < self.tol {
                converged = true;
                break;
            }
        }
        self.rebuild()?;
        let mut gamma = self.state.gamma;
        for g in gamma.iter_mut() {
            if *g < 0.0 {
                *g = 0.0;
            }
        }
        Ok(SolveOutput {
            gamma,
            diagnostics: Diagnostics {
                kind: self.opts.kind,
                sweep_costs,
                final_cost: self.state.cost,
                sweeps: self.state.sweeps,
                converged,
                last_max_step,
                faults: self.faults,
            },
        })
    }
}

/// Runs the estimator selected by `opts.kind` from `gamma = 0`.
pub fn run_coordinate_descent(
    sigma_hat: &SampleCovariance,
    pilots: &PilotMatrix,
    sigma2: f64,
    opts: &SolverOptions,
) -> Result<SolveOutput> {
    CoordinateDescent::new(sigma_hat, pilots, sigma2, opts.clone())?.run()
}
