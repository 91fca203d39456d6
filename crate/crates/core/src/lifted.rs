//! Lifted (vectorized) NNLS formulation, reference solvers, and evaluators
//! for the NNLS recovery guarantee.
//!
//! The lifted matrix has column `k` equal to `vec(a_k a_k^H)` (column-major
//! stacking), so `vec(A diag(gamma) A^H) = lifted * gamma`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{ObservationBlock, PilotMatrix, SampleCovariance};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Relative singular-value cutoff used by the rank diagnostic.
pub const RANK_REL_THRESHOLD: f64 = 1e-8;

/// Column-major `vec(m)`.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Generic rank of the lifted matrix of random-phase unit-modulus pilots:
/// the `pilot_len` diagonal rows are all ones, leaving `d(d-1)+1` directions.
pub fn generic_rank_bound(pilot_len: usize) -> usize {
    pilot_len * (pilot_len - 1) + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrix {
    entries: CMatrix,
    pilot_len: usize,
}

impl LiftedMatrix {
    pub fn build(pilots: &PilotMatrix) -> Self {
        let d = pilots.pilot_len();
        let mut entries = CMatrix::zeros(d * d, pilots.users());
        for (k, a) in pilots.matrix().column_iter().enumerate() {
            let mut col = entries.column_mut(k);
            for j in 0..d {
                let aj = a[j].conj();
                for i in 0..d {
                    col[j * d + i] = a[i] * aj;
                }
            }
        }
        LiftedMatrix { entries, pilot_len: d }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn pilot_len(&self) -> usize {
        self.pilot_len
    }

    pub fn users(&self) -> usize {
        self.entries.ncols()
    }

    /// Column `k` reshaped back to `pilot_len x pilot_len`.
    pub fn column_as_matrix(&self, k: usize) -> CMatrix {
        let d = self.pilot_len;
        CMatrix::from_column_slice(d, d, self.entries.column(k).as_slice())
    }

    /// `sigma_hat_vec - sigma2 vec(I)`.
    fn target(&self, sigma_hat_vec: &CVector, sigma2: f64) -> CVector {
        let d = self.pilot_len;
        let mut b = sigma_hat_vec.clone();
        for i in 0..d {
            b[i * d + i] -= C64::new(sigma2, 0.0);
        }
        b
    }

    /// `||vec(Sigma_hat) - lifted*gamma - sigma2 vec(I)||^2`.
    pub fn residual_sq(&self, gamma: &[f64], sigma_hat: &SampleCovariance, sigma2: f64) -> Result<f64> {
        if gamma.len() != self.users() {
            return Err(Error::dims("residual_sq", self.users(), gamma.len()));
        }
        if sigma_hat.dim() != self.pilot_len {
            return Err(Error::dims("residual_sq", self.pilot_len, sigma_hat.dim()));
        }
        let g = CVector::from_iterator(gamma.len(), gamma.iter().map(|x| C64::new(*x, 0.0)));
        let r = self.target(&vectorize(sigma_hat.matrix()), sigma2) - &self.entries * g;
        Ok(r.norm_squared())
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = self.entries.clone().singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }

    /// Number of singular values above `rel_threshold * sigma_max`.
    pub fn complex_rank(&self, rel_threshold: f64) -> usize {
        let sv = self.singular_values();
        match sv.first() {
            Some(&top) if top > 0.0 => sv.iter().filter(|s| **s > rel_threshold * top).count(),
            _ => 0,
        }
    }

    /// `Re(lifted^H lifted)`; entry `(j,k)` equals `|a_j^H a_k|^2`.
    pub fn real_gram(&self) -> DMatrix<f64> {
        (self.entries.adjoint() * &self.entries).map(|z| z.re)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnlsOracleOutput {
    pub gamma: Vec<f64>,
    /// `||sigma_hat - lifted*gamma - sigma2 vec(I)||^2` at the returned point.
    pub cost: f64,
    pub iterations: usize,
    pub gradient_mapping_norm: f64,
    pub converged: bool,
}

fn largest_eigenvalue(g: &DMatrix<f64>) -> f64 {
    g.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Reference NNLS solver on the lifted system: projected gradient with fixed
/// step `1/L` (`L` the squared spectral norm of the real-stacked lifted
/// matrix) and momentum restart. Stops when the gradient-mapping norm falls
/// below `1e-10 * max(1, |lifted^H b|)` or after `iters` iterations.
pub fn nnls_oracle(sigma_hat_vec: &CVector, lifted: &LiftedMatrix, sigma2: f64, iters: usize) -> Result<NnlsOracleOutput> {
    let d = lifted.pilot_len();
    if sigma_hat_vec.len() != d * d {
        return Err(Error::dims("nnls_oracle", d * d, sigma_hat_vec.len()));
    }
    let k = lifted.users();
    let b = lifted.target(sigma_hat_vec, sigma2);
    let gram = lifted.real_gram();
    let c: DVector<f64> = (lifted.entries().adjoint() * &b).map(|z| z.re);
    let lip = largest_eigenvalue(&gram);
    let stop = 1e-10 * c.norm().max(1.0);

    let mut x = DVector::<f64>::zeros(k);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut gm_norm = f64::INFINITY;
    let mut iterations = 0;
    if lip > 0.0 {
        for it in 0..iters {
            iterations = it + 1;
            // stopping test at the current iterate
            let grad_x = &gram * &x - &c;
            gm_norm = x
                .iter()
                .zip(grad_x.iter())
                .map(|(xi, gi)| {
                    let v = lip * (xi - (xi - gi / lip).max(0.0));
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            if gm_norm <= stop {
                break;
            }
            let grad_y = &gram * &y - &c;
            let x_next = (&y - grad_y / lip).map(|v| v.max(0.0));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let dir = &x_next - &x;
            // restart momentum when it points uphill
            if (&y - &x_next).dot(&dir) > 0.0 {
                t = 1.0;
                y = x_next.clone();
            } else {
                y = &x_next + dir * ((t - 1.0) / t_next);
                t = t_next;
            }
            x = x_next;
        }
    } else {
        gm_norm = 0.0;
    }
    let gamma: Vec<f64> = x.iter().copied().collect();
    let g = CVector::from_iterator(k, gamma.iter().map(|v| C64::new(*v, 0.0)));
    let cost = (&b - lifted.entries() * g).norm_squared();
    Ok(NnlsOracleOutput {
        gamma,
        cost,
        iterations,
        gradient_mapping_norm: gm_norm,
        converged: gm_norm <= stop,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoOutput {
    /// `users x antennas` minimizer.
    pub x: CMatrix,
    /// `||x_i||_2 / sqrt(antennas)` per row.
    pub row_norms_scaled: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn shrink_rows(x: &mut CMatrix, threshold: f64) {
    for mut row in x.row_iter_mut() {
        let n = row.norm();
        if n <= threshold {
            row.fill(C64::new(0.0, 0.0));
        } else {
            row.scale_mut(1.0 - threshold / n);
        }
    }
}

/// Reference solver for `min_X 0.5 ||A X - Y||_F^2 + rho sqrt(M) ||X||_{2,1}`
/// by accelerated proximal gradient with row-wise shrinkage. Stops when the
/// relative change of `X` over an iteration falls below `1e-13`.
pub fn l21_group_lasso_oracle(y: &ObservationBlock, pilots: &PilotMatrix, rho: f64, iters: usize) -> Result<GroupLassoOutput> {
    let a = pilots.matrix();
    let y = &y.0;
    if y.nrows() != pilots.pilot_len() {
        return Err(Error::dims("l21_group_lasso_oracle", pilots.pilot_len(), y.nrows()));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!("rho must be > 0, got {rho}")));
    }
    let (k, m) = (pilots.users(), y.ncols());
    let lip = largest_eigenvalue(&(a * a.adjoint()).map(|z| z.re));
    let threshold = rho * (m as f64).sqrt() / lip;
    let ah_y = a.adjoint() * y;
    let gram = a.adjoint() * a;

    let mut x = CMatrix::zeros(k, m);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..iters {
        iterations = it + 1;
        let grad = &gram * &z - &ah_y;
        let mut x_next = &z - grad * C64::new(1.0 / lip, 0.0);
        shrink_rows(&mut x_next, threshold);
        let dir = &x_next - &x;
        let change = dir.norm();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if (&z - &x_next).dotc(&dir).re > 0.0 {
            t = 1.0;
            z = x_next.clone();
        } else {
            z = &x_next + &dir * C64::new((t - 1.0) / t_next, 0.0);
            t = t_next;
        }
        x = x_next;
        if change <= 1e-13 * x.norm().max(1e-300) || (change == 0.0 && x.norm() == 0.0) {
            converged = true;
            break;
        }
    }
    let scale = 1.0 / (m as f64).sqrt();
    let row_norms_scaled = x.row_iter().map(|r| r.norm() * scale).collect();
    Ok(GroupLassoOutput {
        x,
        row_norms_scaled,
        iterations,
        converged,
    })
}

/// Inputs of the NNLS recovery guarantee. `c_prime` and `lambda` are
/// unspecified absolute constants and default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    /// RIP level, in `[8/users, 4/sqrt(41))`.
    pub delta: f64,
    pub c_prime: f64,
    /// Sparsity level.
    pub s: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub rho: f64,
    pub tau_prime: f64,
    pub c: f64,
    pub d: f64,
}

/// Upper end of the admissible RIP range, `4 / sqrt(41)`.
pub fn delta_max() -> f64 {
    4.0 / 41f64.sqrt()
}

impl TheoremParams {
    pub fn new(delta: f64, c_prime: f64, s: usize, lambda: f64) -> Self {
        TheoremParams {
            delta,
            c_prime,
            s,
            lambda,
        }
    }

    /// Checks the parameter ranges; `users` fixes the lower end `8/users`.
    pub fn validate(&self, users: usize) -> Result<()> {
        let lo = 8.0 / users as f64;
        if !(self.delta >= lo && self.delta < delta_max()) {
            return Err(Error::InvalidConfig(format!(
                "delta = {} outside [{lo}, {})",
                self.delta,
                delta_max()
            )));
        }
        if !(self.c_prime > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig("c_prime and lambda must be positive".into()));
        }
        if self.s == 0 {
            return Err(Error::InvalidConfig("sparsity s must be >= 1".into()));
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<DerivedConstants> {
        let delta = self.delta;
        if !(delta >= 0.0 && delta < delta_max()) {
            return Err(Error::InvalidConfig(format!("delta = {delta} outside [0, {})", delta_max())));
        }
        let denom = (1.0 - delta * delta).sqrt() - delta / 4.0;
        let rho = delta / denom;
        let tau_prime = (1.0 + delta).sqrt() / denom;
        Ok(DerivedConstants {
            rho,
            tau_prime,
            c: (1.0 + rho).powi(2) / (1.0 - rho),
            d: (3.0 + rho) / (1.0 - rho),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    /// `pilot_len (pilot_len - 1)`.
    pub lhs: f64,
    /// `c' delta^-2 s log^2(e users / s)`.
    pub rhs: f64,
    pub satisfied: bool,
}

/// Sampling condition of the NNLS guarantee.
pub fn scaling_law_check(pilot_len: usize, users: usize, params: &TheoremParams) -> Result<ScalingCheck> {
    if params.s == 0 || users == 0 {
        return Err(Error::InvalidConfig("users and s must be >= 1".into()));
    }
    let lhs = (pilot_len * pilot_len.saturating_sub(1)) as f64;
    let s = params.s as f64;
    let log = (std::f64::consts::E * users as f64 / s).ln();
    let rhs = params.c_prime / (params.delta * params.delta) * s * log * log;
    Ok(ScalingCheck {
        lhs,
        rhs,
        satisfied: lhs >= rhs,
    })
}

/// `sigma_s(gamma)_1`: l1 norm of `gamma` without its `s` largest-magnitude entries.
pub fn tail_l1(gamma: &[f64], s: usize) -> f64 {
    let mut mags: Vec<f64> = gamma.iter().map(|g| g.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.iter().skip(s).sum()
}

/// Right-hand side of the NNLS l_p error bound, `1 <= p <= 2`.
pub fn error_bound_rhs(gamma_true: &[f64], d_norm: f64, p: f64, params: &TheoremParams, pilot_len: usize) -> Result<f64> {
    if pilot_len <= 1 {
        return Err(Error::InvalidConfig(format!("pilot_len must be >= 2, got {pilot_len}")));
    }
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("p must lie in [1, 2], got {p}")));
    }
    let k = params.derived()?;
    let s = params.s as f64;
    let dl = pilot_len as f64;
    let head = 2.0 * k.c / s.powf(1.0 - 1.0 / p) * tail_l1(gamma_true, params.s);
    let noise = 2.0 * k.d / s.powf(0.5 - 1.0 / p)
        * (1.0 + params.lambda * k.tau_prime * dl.sqrt() / (dl - 1.0).sqrt())
        * d_norm
        / dl;
    Ok(head + noise)
}

/// Predicted `||Sigma_hat - Sigma||_F` for `antennas` Gaussian samples, `tr(Sigma)/sqrt(M)`.
pub fn covariance_error_prediction(sigma_y: &SampleCovariance, antennas: usize) -> Result<f64> {
    if antennas == 0 {
        return Err(Error::InvalidConfig("antennas must be >= 1".into()));
    }
    Ok(sigma_y.trace() / (antennas as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub pilot_len: usize,
    pub users: usize,
    pub params: TheoremParams,
    pub constants: DerivedConstants,
    pub scaling: ScalingCheck,
}

impl TheoryReport {
    pub fn evaluate(pilot_len: usize, users: usize, params: TheoremParams) -> Result<Self> {
        params.validate(users)?;
        Ok(TheoryReport {
            pilot_len,
            users,
            params,
            constants: params.derived()?,
            scaling: scaling_law_check(pilot_len, users, &params)?,
        })
    }

    /// `key=value` lines, one quantity per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("pilot_len", self.pilot_len.to_string());
        kv("users", self.users.to_string());
        kv("s", self.params.s.to_string());
        kv("delta", format!("{}", self.params.delta));
        kv("c_prime", format!("{}", self.params.c_prime));
        kv("lambda", format!("{}", self.params.lambda));
        kv("rho", format!("{:.12}", self.constants.rho));
        kv("tau_prime", format!("{:.12}", self.constants.tau_prime));
        kv("C", format!("{:.12}", self.constants.c));
        kv("D", format!("{:.12}", self.constants.d));
        kv("lhs", format!("{:.12}", self.scaling.lhs));
        kv("rhs", format!("{:.12}", self.scaling.rhs));
        kv("satisfied", self.scaling.satisfied.to_string());
        out
    }
}
