//! Scenario generation: pilots, activity, channels, noise, and the
//! resulting observation and covariance matrices.
//!
//! Per coherence block the base station receives
//! `Y = A diag(sqrt(gamma)) H + Z` (`pilot_len x antennas`), whose columns
//! are i.i.d. `CN(0, A diag(gamma) A^H + noise_var I)` for white channels.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{hermitize, trace_re};
use crate::rng::{SeedStreams, Stream};
use crate::{CMatrix, CVector, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    /// i.i.d. entries `exp(j*phi)`, `phi ~ U[0, 2pi)`.
    #[default]
    UnitModulusRandomPhase,
    /// i.i.d. `CN(0,1)` entries, each column rescaled to squared norm `pilot_len`.
    ComplexGaussianNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    SpatiallyWhite,
    /// Angular block-sparse ULA channel: `h = F w` with `M_eff` consecutive
    /// (circularly wrapped) active angular bins of power `M / M_eff`.
    UlaBlock { m_eff_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Signal dimensions per coherence block (pilot length).
    pub pilot_len: usize,
    /// Potential users assigned to the block.
    pub users: usize,
    /// Users active in the slot.
    pub active_users: usize,
    /// Base-station antennas.
    pub antennas: usize,
    pub noise_var: f64,
    /// Per-active-user SNR in dB; active gain is `noise_var * 10^(snr_db/10)`.
    pub snr_db_active: f64,
    #[serde(default)]
    pub pilot_kind: PilotKind,
    #[serde(default)]
    pub channel: ChannelKind,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            pilot_len: 30,
            users: 400,
            active_users: 60,
            antennas: 120,
            noise_var: 1.0,
            snr_db_active: 10.0,
            pilot_kind: PilotKind::default(),
            channel: ChannelKind::default(),
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.pilot_len == 0 || self.users == 0 || self.antennas == 0 {
            return bad("pilot_len, users and antennas must all be >= 1".into());
        }
        if self.active_users > self.users {
            return bad(format!(
                "active_users ({}) exceeds users ({})",
                self.active_users, self.users
            ));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return bad(format!("noise_var must be positive, got {}", self.noise_var));
        }
        if !self.snr_db_active.is_finite() {
            return bad("snr_db_active must be finite".into());
        }
        if let ChannelKind::UlaBlock { m_eff_fraction } = self.channel {
            if !(m_eff_fraction > 0.0 && m_eff_fraction <= 1.0) {
                return bad(format!("m_eff_fraction must lie in (0, 1], got {m_eff_fraction}"));
            }
            if self.effective_antennas() < 1 {
                return bad("m_eff_fraction * antennas rounds to zero".into());
            }
        }
        Ok(())
    }

    /// Large-scale fading coefficient of an active user.
    pub fn active_gain(&self) -> f64 {
        self.noise_var * 10f64.powf(self.snr_db_active / 10.0)
    }

    /// Number of active angular bins (`antennas` for white channels).
    pub fn effective_antennas(&self) -> usize {
        match self.channel {
            ChannelKind::SpatiallyWhite => self.antennas,
            ChannelKind::UlaBlock { m_eff_fraction } => {
                (m_eff_fraction * self.antennas as f64).round() as usize
            }
        }
    }
}

/// `pilot_len x users` pilot matrix; column `k` is the pilot of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix(CMatrix);

impl PilotMatrix {
    /// Wraps a matrix after checking the per-column norm `||a_k||^2 = pilot_len`.
    pub fn new(entries: CMatrix) -> Result<Self> {
        let d = entries.nrows() as f64;
        for (k, col) in entries.column_iter().enumerate() {
            let n2 = col.norm_squared();
            if (n2 - d).abs() > 1e-10 * d {
                return Err(Error::InvalidConfig(format!(
                    "pilot column {k} has squared norm {n2}, expected {d}"
                )));
            }
        }
        Ok(PilotMatrix(entries))
    }

    /// Wraps a matrix without the norm check (for tests and custom codebooks).
    pub fn from_matrix_unchecked(entries: CMatrix) -> Self {
        PilotMatrix(entries)
    }

    pub fn pilot_len(&self) -> usize {
        self.0.nrows()
    }

    pub fn users(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn column(&self, k: usize) -> CVector {
        self.0.column(k).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityPattern {
    gamma: Vec<f64>,
    support: Vec<usize>,
}

impl ActivityPattern {
    /// Builds a pattern from a nonnegative gain vector; the support is
    /// the set of strictly positive entries.
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if let Some(k) = gamma.iter().position(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma[{k}] = {} is not a finite nonnegative value",
                gamma[k]
            )));
        }
        let support = gamma
            .iter()
            .enumerate()
            .filter(|(_, g)| **g > 0.0)
            .map(|(k, _)| k)
            .collect();
        Ok(ActivityPattern { gamma, support })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Active users, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn users(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.gamma[k] > 0.0
    }
}

/// `users x antennas`; row `k` is `h_k^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(pub CMatrix);

/// `pilot_len x antennas` received block.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlock(pub CMatrix);

/// `pilot_len x pilot_len` Hermitian PSD covariance (sample or true).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance(CMatrix);

impl SampleCovariance {
    /// Hermitizes the input; fails if it is not square.
    pub fn new(mut m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dims("SampleCovariance::new", "square", format!("{}x{}", m.nrows(), m.ncols())));
        }
        hermitize(&mut m);
        Ok(SampleCovariance(m))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace_re(&self.0)
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

pub fn generate_pilots<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<PilotMatrix> {
    cfg.validate()?;
    let (d, k) = (cfg.pilot_len, cfg.users);
    let mut a = CMatrix::zeros(d, k);
    match cfg.pilot_kind {
        PilotKind::UnitModulusRandomPhase => {
            for z in a.iter_mut() {
                let phi = rng.random::<f64>() * 2.0 * PI;
                *z = C64::from_polar(1.0, phi);
            }
        }
        PilotKind::ComplexGaussianNormalized => {
            for mut col in a.column_iter_mut() {
                for z in col.iter_mut() {
                    *z = complex_normal(rng, 1.0);
                }
                let scale = (d as f64).sqrt() / col.norm();
                col.scale_mut(scale);
            }
        }
    }
    Ok(PilotMatrix(a))
}

pub fn generate_activity<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<ActivityPattern> {
    cfg.validate()?;
    let gain = cfg.active_gain();
    let mut support = rand::seq::index::sample(rng, cfg.users, cfg.active_users).into_vec();
    support.sort_unstable();
    let mut gamma = vec![0.0; cfg.users];
    for &k in &support {
        gamma[k] = gain;
    }
    Ok(ActivityPattern { gamma, support })
}

/// Angular power profile `beta` of a ULA user: `antennas / m_eff` on the
/// wrapped block starting at `start`, zero elsewhere.
pub fn ula_power_profile(antennas: usize, m_eff: usize, start: usize) -> Vec<f64> {
    let mut beta = vec![0.0; antennas];
    let p = antennas as f64 / m_eff as f64;
    for t in 0..m_eff {
        beta[(start + t) % antennas] = p;
    }
    beta
}

pub fn generate_channel<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<ChannelMatrix> {
    cfg.validate()?;
    let (k, m) = (cfg.users, cfg.antennas);
    let mut h = CMatrix::zeros(k, m);
    match cfg.channel {
        ChannelKind::SpatiallyWhite => {
            for j in 0..m {
                for u in 0..k {
                    h[(u, j)] = complex_normal(rng, 1.0);
                }
            }
        }
        ChannelKind::UlaBlock { .. } => {
            let m_eff = cfg.effective_antennas();
            let power = m as f64 / m_eff as f64;
            let norm = 1.0 / (m as f64).sqrt();
            // roots[t] = exp(-2 pi j t / M) / sqrt(M); F[row, bin] = roots[(row*bin) mod M]
            let roots: Vec<C64> = (0..m)
                .map(|t| C64::from_polar(norm, -2.0 * PI * t as f64 / m as f64))
                .collect();
            let mut w = vec![C64::new(0.0, 0.0); m_eff];
            for u in 0..k {
                let start = rng.random_range(0..m);
                for wi in w.iter_mut() {
                    *wi = complex_normal(rng, power);
                }
                for row in 0..m {
                    let mut acc = C64::new(0.0, 0.0);
                    for (t, wi) in w.iter().enumerate() {
                        let bin = (start + t) % m;
                        acc += roots[(row * bin) % m] * wi;
                    }
                    h[(u, row)] = acc;
                }
            }
        }
    }
    Ok(ChannelMatrix(h))
}

/// Noise block with i.i.d. `CN(0, noise_var)` entries.
pub fn generate_noise<R: Rng + ?Sized>(pilot_len: usize, antennas: usize, noise_var: f64, rng: &mut R) -> CMatrix {
    let mut z = CMatrix::zeros(pilot_len, antennas);
    for v in z.iter_mut() {
        *v = complex_normal(rng, noise_var);
    }
    z
}

/// `Y = A diag(sqrt(gamma)) H + Z` for a given noise realization.
pub fn observe(
    pilots: &PilotMatrix,
    activity: &ActivityPattern,
    channel: &ChannelMatrix,
    noise: &CMatrix,
) -> Result<ObservationBlock> {
    let (d, k) = (pilots.pilot_len(), pilots.users());
    let h = &channel.0;
    if activity.users() != k {
        return Err(Error::dims("observe", format!("{k} users in activity"), activity.users()));
    }
    if h.nrows() != k {
        return Err(Error::dims("observe", format!("{k} channel rows"), h.nrows()));
    }
    let m = h.ncols();
    if noise.nrows() != d || noise.ncols() != m {
        return Err(Error::dims(
            "observe",
            format!("{d}x{m} noise"),
            format!("{}x{}", noise.nrows(), noise.ncols()),
        ));
    }
    let support = activity.support();
    let mut a_s = CMatrix::zeros(d, support.len());
    let mut x_s = CMatrix::zeros(support.len(), m);
    for (i, &u) in support.iter().enumerate() {
        a_s.set_column(i, &pilots.matrix().column(u));
        let amp = activity.gamma()[u].sqrt();
        x_s.set_row(i, &(h.row(u) * C64::new(amp, 0.0)));
    }
    Ok(ObservationBlock(a_s * x_s + noise))
}

/// Draws the noise from `rng` and forms the observation. `noise_var` may be 0.
pub fn synthesize_observation<R: Rng + ?Sized>(
    pilots: &PilotMatrix,
    activity: &ActivityPattern,
    channel: &ChannelMatrix,
    noise_var: f64,
    rng: &mut R,
) -> Result<ObservationBlock> {
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise variance {noise_var} is negative")));
    }
    let z = generate_noise(pilots.pilot_len(), channel.0.ncols(), noise_var, rng);
    observe(pilots, activity, channel, &z)
}

/// `A diag(gamma) A^H + sigma2 I`.
pub fn true_covariance(pilots: &PilotMatrix, gamma: &[f64], sigma2: f64) -> Result<SampleCovariance> {
    let (d, k) = (pilots.pilot_len(), pilots.users());
    if gamma.len() != k {
        return Err(Error::dims("true_covariance", k, gamma.len()));
    }
    let mut scaled = pilots.matrix().clone();
    for (mut col, g) in scaled.column_iter_mut().zip(gamma) {
        col.scale_mut(*g);
    }
    let mut sigma = scaled * pilots.matrix().adjoint();
    for i in 0..d {
        sigma[(i, i)] += C64::new(sigma2, 0.0);
    }
    SampleCovariance::new(sigma)
}

/// `(1/M) Y Y^H`.
pub fn sample_covariance(y: &ObservationBlock) -> Result<SampleCovariance> {
    let m = y.0.ncols();
    if m == 0 {
        return Err(Error::EmptyInput("observation with zero antennas"));
    }
    let mut s = &y.0 * y.0.adjoint();
    s.unscale_mut(m as f64);
    SampleCovariance::new(s)
}

/// Average SNR of a user, `gamma_k / sigma2`.
pub fn snr_of_user(gamma_k: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidConfig(format!("noise variance must be positive, got {sigma2}")));
    }
    Ok(gamma_k / sigma2)
}

/// All random components of one coherence block.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub pilots: PilotMatrix,
    pub activity: ActivityPattern,
    pub channel: ChannelMatrix,
    pub observation: ObservationBlock,
}

impl Scenario {
    /// Draws every component from its own stream of `cfg.rng_seed`.
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        let streams = SeedStreams::new(cfg.rng_seed);
        let pilots = generate_pilots(cfg, &mut streams.rng(Stream::Pilots))?;
        Self::generate_with_pilots(cfg, pilots, &streams)
    }

    /// Same as [`Scenario::generate`] but with a caller-supplied codebook.
    pub fn generate_with_pilots(cfg: &ScenarioConfig, pilots: PilotMatrix, streams: &SeedStreams) -> Result<Self> {
        cfg.validate()?;
        if pilots.pilot_len() != cfg.pilot_len || pilots.users() != cfg.users {
            return Err(Error::dims(
                "Scenario::generate_with_pilots",
                format!("{}x{}", cfg.pilot_len, cfg.users),
                format!("{}x{}", pilots.pilot_len(), pilots.users()),
            ));
        }
        let activity = generate_activity(cfg, &mut streams.rng(Stream::Activity))?;
        let channel = generate_channel(cfg, &mut streams.rng(Stream::Channel))?;
        let observation =
            synthesize_observation(&pilots, &activity, &channel, cfg.noise_var, &mut streams.rng(Stream::Noise))?;
        Ok(Scenario {
            pilots,
            activity,
            channel,
            observation,
        })
    }

    pub fn sample_covariance(&self) -> Result<SampleCovariance> {
        sample_covariance(&self.observation)
    }
}

/// Identity-covariance helper used by several checks.
pub fn identity_covariance(dim: usize, scale: f64) -> SampleCovariance {
    SampleCovariance(DMatrix::identity(dim, dim) * C64::new(scale, 0.0))
}
