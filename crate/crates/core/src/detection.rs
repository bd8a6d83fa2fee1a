//! Detection analytics for the fused echo observations.
//!
//! The NP detector with known echo signature `α` compares `Re(α^H d)` with a
//! threshold. Under both hypotheses the statistic is Gaussian with variance
//! `σ_d² ‖α‖² / 2`, so the detection probability depends on the beams only
//! through the reflected energy `‖α‖²`, which [`energy_i`] and
//! [`energy_ii`] evaluate in closed form.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;
use std::f64::consts::SQRT_2;

use crate::channel::{ChannelSet, Scene};
use crate::error::{invalid, Result};
use crate::geometry::{target_response_matrix, CMatrix, CVector};

/// Whether the BSs are time-synchronized (direct and cross echo links fused)
/// or not (direct links only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    SyncI,
    UnsyncII,
}

/// CU receiver without (`TypeI`) or with (`TypeII`) cancellation of the
/// known dedicated sensing signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Receiver {
    TypeI,
    TypeII,
}

impl Scenario {
    /// Whether the echo of BS l received at BS m is used.
    pub fn uses_link(self, m: usize, l: usize) -> bool {
        match self {
            Scenario::SyncI => true,
            Scenario::UnsyncII => m == l,
        }
    }
}

/// Per-constraint slack of a beamforming solution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Residuals {
    /// `sinr / Γ - 1` per CU; negative means violated.
    pub sinr: Vec<Vec<f64>>,
    /// `used power - P_max` per BS; positive means violated.
    pub power: Vec<f64>,
    /// Smallest eigenvalue of each sensing covariance.
    pub r_min_eig: Vec<f64>,
    /// Magnitude of the negative eigenvalue clipped from each sensing
    /// covariance during rank-one extraction (zero if none).
    pub psd_clip: Vec<f64>,
}

impl Residuals {
    pub fn worst_sinr(&self) -> f64 {
        self.sinr.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn worst_power(&self) -> f64 {
        self.power.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest eigenvalue of BS `l`'s sensing covariance before clipping.
    pub fn unclipped_min_eig(&self, l: usize) -> f64 {
        let clip = self.psd_clip.get(l).copied().unwrap_or(0.0);
        if clip > 0.0 {
            -clip
        } else {
            self.r_min_eig[l]
        }
    }
}

/// Information beams, sensing covariances and the achieved min-energy.
#[derive(Debug, Clone)]
pub struct BeamSolution {
    /// `w[l][i]`: beam of BS l for its CU i.
    pub w: Vec<Vec<CVector>>,
    /// Dedicated sensing covariance per BS.
    pub r_cov: Vec<CMatrix>,
    pub omega: f64,
    pub residuals: Residuals,
}

impl BeamSolution {
    pub fn zeros(cells: usize, users: usize, n_tx: usize) -> Self {
        Self {
            w: vec![vec![CVector::zeros(n_tx); users]; cells],
            r_cov: vec![CMatrix::zeros(n_tx, n_tx); cells],
            omega: 0.0,
            residuals: Residuals::default(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.w.len()
    }

    /// Copy with the information beams removed, as seen by a detector that
    /// only matched-filters the dedicated sensing waveforms.
    pub fn sensing_part(&self) -> BeamSolution {
        let mut out = self.clone();
        out.w.iter_mut().flatten().for_each(|w| w.fill(Complex64::new(0.0, 0.0)));
        out
    }

    pub fn bs_power(&self, l: usize) -> f64 {
        self.w[l].iter().map(|w| w.norm_squared()).sum::<f64>() + self.r_cov[l].trace().re
    }

    /// Fills [`BeamSolution::residuals`] for the given receiver type.
    pub fn evaluate_residuals(&mut self, ch: &ChannelSet, scene: &Scene, receiver: Receiver) {
        let cells = self.num_cells();
        let users = ch.users_per_cell();
        let sinr = (0..cells)
            .map(|m| {
                (0..users)
                    .map(|k| {
                        let s = match receiver {
                            Receiver::TypeI => sinr_type1(self, ch, scene.noise_comm, m, k),
                            Receiver::TypeII => sinr_type2(self, ch, scene.noise_comm, m, k),
                        };
                        s / scene.sinr_targets[m][k] - 1.0
                    })
                    .collect()
            })
            .collect();
        let power = (0..cells).map(|l| self.bs_power(l) - scene.p_max).collect();
        let r_min_eig = self
            .r_cov
            .iter()
            .map(|r| r.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let psd_clip = std::mem::take(&mut self.residuals.psd_clip);
        self.residuals = Residuals { sinr, power, r_min_eig, psd_clip };
    }
}

fn quad_form(h: &CVector, m: &CMatrix) -> f64 {
    (h.adjoint() * m * h)[(0, 0)].re
}

fn sinr_parts(sol: &BeamSolution, ch: &ChannelSet, m: usize, k: usize) -> (f64, f64, f64) {
    let hmm = ch.h(m, m, k);
    let signal = hmm.dotc(&sol.w[m][k]).norm_sqr();
    let mut interference = 0.0;
    let mut sensing = 0.0;
    for l in 0..sol.num_cells() {
        let h = ch.h(l, m, k);
        for (i, w) in sol.w[l].iter().enumerate() {
            if l == m && i == k {
                continue;
            }
            interference += h.dotc(w).norm_sqr();
        }
        sensing += quad_form(h, &sol.r_cov[l]);
    }
    (signal, interference, sensing)
}

/// SINR of CU k in cell m without sensing-interference cancellation.
pub fn sinr_type1(sol: &BeamSolution, ch: &ChannelSet, noise: f64, m: usize, k: usize) -> f64 {
    let (s, i, r) = sinr_parts(sol, ch, m, k);
    s / (i + r + noise)
}

/// SINR of CU k in cell m when the dedicated sensing signal is cancelled.
pub fn sinr_type2(sol: &BeamSolution, ch: &ChannelSet, noise: f64, m: usize, k: usize) -> f64 {
    let (s, i, _) = sinr_parts(sol, ch, m, k);
    s / (i + noise)
}

/// `tr(M A)` for Hermitian `M` and `A`.
pub(crate) fn trace_product(m: &CMatrix, a: &CMatrix) -> f64 {
    m.iter().zip(a.transpose().iter()).map(|(x, y)| (x * y).re).sum()
}

/// Reflected energy at sample `q` over the links used by `scenario`.
/// With `include_comm = false` only the sensing covariances contribute.
pub fn reflected_energy(
    sol: &BeamSolution,
    ch: &ChannelSet,
    q: usize,
    scenario: Scenario,
    include_comm: bool,
) -> f64 {
    let cells = sol.num_cells();
    let n_rx = ch.arrays.n_rx as f64;
    let mut total = 0.0;
    for l in 0..cells {
        let a_t = &ch.samples[q].steering[l];
        let mut radiated = trace_product(&sol.r_cov[l], ch.a_matrix(q, l));
        if include_comm {
            // tr(w w^H A) = |a_tᵀ w|²
            radiated += sol.w[l].iter().map(|w| a_t.iter().zip(w.iter()).map(|(a, x)| a * x).sum::<Complex64>().norm_sqr()).sum::<f64>();
        }
        let gain: f64 = (0..cells)
            .filter(|&m| scenario.uses_link(m, l))
            .map(|m| {
                let link = ch.link(q, m, l);
                link.zeta * link.zeta * link.beta
            })
            .sum();
        total += gain * radiated;
    }
    n_rx * total
}

/// Total reflected energy over direct and cross links (synchronized BSs).
pub fn energy_i(sol: &BeamSolution, ch: &ChannelSet, q: usize) -> f64 {
    reflected_energy(sol, ch, q, Scenario::SyncI, true)
}

/// Reflected energy over the direct links only (unsynchronized BSs).
pub fn energy_ii(sol: &BeamSolution, ch: &ChannelSet, q: usize) -> f64 {
    reflected_energy(sol, ch, q, Scenario::UnsyncII, true)
}

/// Minimum reflected energy over all samples and the sample attaining it.
pub fn min_energy(sol: &BeamSolution, ch: &ChannelSet, scenario: Scenario, include_comm: bool) -> (f64, usize) {
    (0..ch.num_samples())
        .map(|q| (reflected_energy(sol, ch, q, scenario, include_comm), q))
        .fold((f64::INFINITY, 0), |acc, x| if x.0 < acc.0 { x } else { acc })
}

/// Standard normal tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`q_function`] on `(0, 1)`, by safeguarded Newton iteration
/// inside a shrinking bracket.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("q_inverse needs p in (0, 1), got {p}"));
    }
    if p > 0.5 {
        // the upper tail is represented more accurately
        return Ok(-q_inverse(1.0 - p)?);
    }
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    let mut x = (-2.0 * p.ln()).sqrt().min(39.0);
    for _ in 0..200 {
        let f = q_function(x) - p;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = -normal_pdf(x);
        let mut next = if slope != 0.0 { x - f / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step < 1e-14 || hi - lo < 1e-12 {
            break;
        }
    }
    Ok(x)
}

/// NP detector configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub p_fa: f64,
    pub noise_radar: f64,
    pub scenario: Scenario,
}

impl DetectorSpec {
    pub fn new(p_fa: f64, noise_radar: f64, scenario: Scenario) -> Result<Self> {
        let spec = Self { p_fa, noise_radar, scenario };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return invalid(format!("p_fa must lie in (0, 1), got {}", self.p_fa));
        }
        if !(self.noise_radar > 0.0) {
            return invalid(format!("noise_radar must be positive, got {}", self.noise_radar));
        }
        Ok(())
    }
}

/// `Q(Q⁻¹(p_FA) - √(2E/σ_d²))`.
pub fn detection_probability(energy: f64, spec: &DetectorSpec) -> Result<f64> {
    spec.validate()?;
    if !(energy >= 0.0) {
        return invalid(format!("energy must be nonnegative, got {energy}"));
    }
    Ok(q_function(q_inverse(spec.p_fa)? - (2.0 * energy / spec.noise_radar).sqrt()))
}

/// Threshold on `Re(α^H d)` meeting the false-alarm target for `‖α‖² = energy`.
pub fn detector_threshold(energy: f64, spec: &DetectorSpec) -> Result<f64> {
    spec.validate()?;
    if !(energy > 0.0) {
        return invalid("detector threshold undefined for zero echo energy");
    }
    Ok(q_inverse(spec.p_fa)? * (spec.noise_radar * energy / 2.0).sqrt())
}

/// Sensing beams `√λ v` of a covariance, keeping eigenvalues above
/// `1e-10 tr(R)`.
pub fn sensing_beams(r: &CMatrix) -> Vec<CVector> {
    let tr = r.trace().re;
    if tr <= 0.0 {
        return Vec::new();
    }
    let eig = r.clone().symmetric_eigen();
    eig.eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &lam)| lam > 1e-10 * tr)
        .map(|(j, &lam)| eig.eigenvectors.column(j).into_owned() * Complex64::new(lam.sqrt(), 0.0))
        .collect()
}

/// Stacked noiseless matched-filter outputs for sample `q`: all
/// communication terms first, then the sensing-beam terms, link by link.
pub fn echo_signature(sol: &BeamSolution, ch: &ChannelSet, q: usize, scenario: Scenario) -> Result<CVector> {
    let cells = sol.num_cells();
    let beams: Vec<Vec<CVector>> = sol.r_cov.iter().map(sensing_beams).collect();
    let mut responses = Vec::new();
    for m in 0..cells {
        for l in 0..cells {
            if scenario.uses_link(m, l) {
                responses.push((l, target_response_matrix(ch.link(q, m, l), &ch.arrays)?));
            }
        }
    }
    let mut parts: Vec<CVector> = Vec::new();
    for (l, h) in &responses {
        parts.extend(sol.w[*l].iter().map(|w| h * w));
    }
    for (l, h) in &responses {
        parts.extend(beams[*l].iter().map(|w| h * w));
    }
    let len = parts.iter().map(|p| p.len()).sum();
    let mut alpha = DVector::zeros(len);
    let mut at = 0;
    for p in parts {
        alpha.rows_mut(at, p.len()).copy_from(&p);
        at += p.len();
    }
    Ok(alpha)
}

/// Empirical detection and false-alarm rates at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McRates {
    pub p_fa_target: f64,
    pub threshold: f64,
    pub p_d_hat: f64,
    pub p_fa_hat: f64,
}

/// Outcome of a Monte-Carlo detection run.
#[derive(Debug, Clone, PartialEq)]
pub struct McOutcome {
    /// `‖α‖²` of the simulated signature.
    pub energy: f64,
    pub trials: usize,
    pub rates: Vec<McRates>,
}

const MC_CHUNK: usize = 4096;

/// Draws `trials` observations under each hypothesis and counts threshold
/// crossings of `T(d) = Re(α^H d)` for every threshold. Chunk `c` of the
/// trials uses ChaCha substream `c`, so the counts do not depend on how
/// chunks are scheduled across threads.
pub fn simulate_detector(
    alpha: &CVector,
    noise_radar: f64,
    thresholds: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if trials == 0 {
        return invalid("monte-carlo needs at least one trial");
    }
    let sd = (noise_radar / 2.0).sqrt();
    let chunks = trials.div_ceil(MC_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(trials - c * MC_CHUNK);
            let mut hits = vec![(0usize, 0usize); thresholds.len()];
            for _ in 0..n {
                let mut t1 = 0.0;
                for a in alpha.iter() {
                    let zr: f64 = StandardNormal.sample(&mut rng);
                    let zi: f64 = StandardNormal.sample(&mut rng);
                    let d = a + Complex64::new(sd * zr, sd * zi);
                    t1 += (a.conj() * d).re;
                }
                let mut t0 = 0.0;
                for a in alpha.iter() {
                    let zr: f64 = StandardNormal.sample(&mut rng);
                    let zi: f64 = StandardNormal.sample(&mut rng);
                    let d = Complex64::new(sd * zr, sd * zi);
                    t0 += (a.conj() * d).re;
                }
                for (h, &th) in hits.iter_mut().zip(thresholds) {
                    h.0 += usize::from(t1 > th);
                    h.1 += usize::from(t0 > th);
                }
            }
            hits
        })
        .reduce(
            || vec![(0, 0); thresholds.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| {
                    x.0 += y.0;
                    x.1 += y.1;
                });
                a
            },
        );
    let n = trials as f64;
    Ok(counts.into_iter().map(|(d, f)| (d as f64 / n, f as f64 / n)).collect())
}

/// Monte-Carlo validation of the NP detector at several false-alarm
/// targets, sharing the noise draws across targets.
pub fn monte_carlo_detect_multi(
    sol: &BeamSolution,
    ch: &ChannelSet,
    q: usize,
    scenario: Scenario,
    noise_radar: f64,
    p_fa_targets: &[f64],
    trials: usize,
    seed: u64,
) -> Result<McOutcome> {
    let alpha = echo_signature(sol, ch, q, scenario)?;
    let energy = alpha.norm_squared();
    if energy == 0.0 {
        return invalid("echo signature is identically zero");
    }
    let thresholds = p_fa_targets
        .iter()
        .map(|&p| detector_threshold(energy, &DetectorSpec { p_fa: p, noise_radar, scenario }))
        .collect::<Result<Vec<_>>>()?;
    let rates = simulate_detector(&alpha, noise_radar, &thresholds, trials, seed)?;
    Ok(McOutcome {
        energy,
        trials,
        rates: p_fa_targets
            .iter()
            .zip(thresholds)
            .zip(rates)
            .map(|((&p, th), (pd, pfa))| McRates { p_fa_target: p, threshold: th, p_d_hat: pd, p_fa_hat: pfa })
            .collect(),
    })
}

/// Monte-Carlo estimate of `(p_D, p_FA)` for the NP detector at sample `q`.
pub fn monte_carlo_detect(
    sol: &BeamSolution,
    ch: &ChannelSet,
    q: usize,
    spec: &DetectorSpec,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    spec.validate()?;
    let out = monte_carlo_detect_multi(sol, ch, q, spec.scenario, spec.noise_radar, &[spec.p_fa], trials, seed)?;
    Ok((out.rates[0].p_d_hat, out.rates[0].p_fa_hat))
}
