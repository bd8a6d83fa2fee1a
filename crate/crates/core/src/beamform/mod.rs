//! Max-min detection beamforming under per-user SINR constraints.
//!
//! Each problem maximizes the worst reflected energy over the sample grid
//! subject to SINR and per-BS power constraints. The semidefinite
//! relaxation replaces every information beam `w w^H` by a PSD matrix; an
//! explicit construction then recovers rank-one beams that keep the
//! relaxation's objective and satisfy every SINR constraint, so the
//! relaxation is tight.

mod model;
mod zf;

use log::{debug, warn};
use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, Scene};
use crate::conic::{self, extract_hermitian, SolveReport, SolveStatus, DEFAULT_TOL, LARGE_TOL};
use crate::detection::{trace_product, BeamSolution, Receiver, Scenario};
use crate::error::{invalid, IsacError, Result};
use crate::geometry::{CMatrix, CVector};

pub use model::{BeamVar, EpigraphRow, LinkTerm, QuadTerm, SdrModel, SinrRow};
pub use zf::zf_beamformers;

/// Beam design scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Joint design of information beams and sensing covariances.
    Proposed,
    /// Zero-forcing information beams with optimized powers.
    Zf,
    /// Same feasible set as `Proposed`, but only the sensing covariances
    /// count towards the detection energy.
    SensingOnly,
}

/// A (scenario, receiver, scheme) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProblemVariant {
    pub scenario: Scenario,
    pub receiver: Receiver,
    pub scheme: Scheme,
}

impl ProblemVariant {
    pub fn new(scenario: Scenario, receiver: Receiver, scheme: Scheme) -> Self {
        Self { scenario, receiver, scheme }
    }

    pub fn proposed(scenario: Scenario, receiver: Receiver) -> Self {
        Self::new(scenario, receiver, Scheme::Proposed)
    }

    /// All twelve combinations in a fixed order.
    pub fn all() -> Vec<ProblemVariant> {
        let mut out = Vec::with_capacity(12);
        for scheme in [Scheme::Proposed, Scheme::Zf, Scheme::SensingOnly] {
            for scenario in [Scenario::SyncI, Scenario::UnsyncII] {
                for receiver in [Receiver::TypeI, Receiver::TypeII] {
                    out.push(Self { scenario, receiver, scheme });
                }
            }
        }
        out
    }

    /// Whether information beams count towards the detection energy.
    pub fn comm_in_energy(&self) -> bool {
        self.scheme != Scheme::SensingOnly
    }
}

/// Relaxed optimum: one PSD matrix per information beam and per BS.
#[derive(Debug, Clone)]
pub struct SdrSolution {
    pub variant: ProblemVariant,
    /// `w[l][i]`
    pub w: Vec<Vec<CMatrix>>,
    pub r: Vec<CMatrix>,
    pub omega: f64,
    pub report: SolveReport,
}

impl SdrSolution {
    pub fn status(&self) -> SolveStatus {
        self.report.status
    }

    /// Errors unless the relaxation was solved to optimality.
    pub fn ensure_optimal(&self) -> Result<()> {
        match self.report.status {
            SolveStatus::Optimal => Ok(()),
            status => Err(IsacError::NumericalFailure(format!(
                "{:?}: solver status {status} after {} iterations (primal residual {:.3e}, dual residual {:.3e}, gap {:.3e})",
                self.variant, self.report.iterations, self.report.primal_residual, self.report.dual_residual, self.report.gap
            ))),
        }
    }

    pub fn bs_power(&self, l: usize) -> f64 {
        self.w[l].iter().map(|w| w.trace().re).sum::<f64>() + self.r[l].trace().re
    }

    /// Reflected energy of the relaxed solution at sample `q`, using the
    /// variant's energy functional.
    pub fn energy(&self, ch: &ChannelSet, q: usize) -> f64 {
        relaxed_energy(&self.w, &self.r, ch, q, self.variant.scenario, self.variant.comm_in_energy())
    }

    pub fn min_energy(&self, ch: &ChannelSet) -> f64 {
        (0..ch.num_samples()).map(|q| self.energy(ch, q)).fold(f64::INFINITY, f64::min)
    }
}

/// `N_r Σ_l Σ_m ζ² β tr(A_l (Σ_i W_{l,i} + R_l))` over the links used by
/// `scenario`.
pub fn relaxed_energy(
    w: &[Vec<CMatrix>],
    r: &[CMatrix],
    ch: &ChannelSet,
    q: usize,
    scenario: Scenario,
    include_comm: bool,
) -> f64 {
    let cells = r.len();
    let mut total = 0.0;
    for l in 0..cells {
        let a = ch.a_matrix(q, l);
        let mut radiated = trace_product(&r[l], a);
        if include_comm {
            radiated += w[l].iter().map(|x| trace_product(x, a)).sum::<f64>();
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
    ch.arrays.n_rx as f64 * total
}

/// Solver accuracy for the array size.
pub fn default_tolerance(n_tx: usize) -> f64 {
    if n_tx <= 8 {
        DEFAULT_TOL
    } else {
        LARGE_TOL
    }
}

/// Builds the relaxed program of a `Proposed` or `SensingOnly` variant.
pub fn build_sdr(variant: ProblemVariant, ch: &ChannelSet, scene: &Scene) -> Result<conic::ConicProgram> {
    if variant.scheme == Scheme::Zf {
        return invalid("zero-forcing programs are built by zf_power_allocation");
    }
    SdrModel::build(variant, ch, scene, None)?.to_program()
}

fn solve_model(model: &SdrModel) -> Result<SdrSolution> {
    let prog = model.to_program()?;
    let report = conic::solve(&prog, default_tolerance(model.n_tx))?;
    debug!(
        "{:?}: {} in {} iterations, objective {:.6e}",
        model.variant, report.status, report.iterations, report.primal_objective
    );
    if report.status == SolveStatus::NumericalFailure {
        warn!(
            "{:?}: solver did not converge (primal residual {:.3e}, dual residual {:.3e}, gap {:.3e})",
            model.variant, report.primal_residual, report.dual_residual, report.gap
        );
    }
    model.recover(report)
}

/// Solves the relaxation of a `Proposed` variant.
pub fn solve_variant(variant: ProblemVariant, ch: &ChannelSet, scene: &Scene) -> Result<SdrSolution> {
    if variant.scheme != Scheme::Proposed {
        return invalid(format!("solve_variant expects the proposed scheme, got {:?}", variant.scheme));
    }
    solve_model(&SdrModel::build(variant, ch, scene, None)?)
}

/// Same feasible set as the proposed design, with only the sensing
/// covariances counted in the detection energy.
pub fn sensing_only_variant(variant: ProblemVariant, ch: &ChannelSet, scene: &Scene) -> Result<SdrSolution> {
    let v = ProblemVariant { scheme: Scheme::SensingOnly, ..variant };
    solve_model(&SdrModel::build(v, ch, scene, None)?)
}

/// Power allocation over fixed unit-norm directions `directions[m][k]`,
/// jointly with the sensing covariances.
pub fn zf_power_allocation(
    variant: ProblemVariant,
    ch: &ChannelSet,
    scene: &Scene,
    directions: &[Vec<CVector>],
) -> Result<SdrSolution> {
    let v = ProblemVariant { scheme: Scheme::Zf, ..variant };
    solve_model(&SdrModel::build(v, ch, scene, Some(directions))?)
}

/// Dispatches on the variant's scheme.
pub fn solve_scheme(variant: ProblemVariant, ch: &ChannelSet, scene: &Scene) -> Result<SdrSolution> {
    match variant.scheme {
        Scheme::Proposed => solve_variant(variant, ch, scene),
        Scheme::SensingOnly => sensing_only_variant(variant, ch, scene),
        Scheme::Zf => {
            let dirs = zf_beamformers(ch, scene)?;
            zf_power_allocation(variant, ch, scene, &dirs)
        }
    }
}

/// Projects a Hermitian matrix onto the PSD cone by zeroing negative
/// eigenvalues. Returns the projection and the magnitude of the most
/// negative eigenvalue removed (zero if none).
pub fn clip_psd(m: &CMatrix) -> (CMatrix, f64) {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = h.clone().symmetric_eigen();
    let lam_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lam_min >= 0.0 {
        return (h, 0.0);
    }
    let clipped = DVector::from_fn(eig.eigenvalues.len(), |i, _| Complex64::new(eig.eigenvalues[i].max(0.0), 0.0));
    let v = &eig.eigenvectors;
    (v * CMatrix::from_diagonal(&clipped) * v.adjoint(), -lam_min)
}

/// Rank-one beams and sensing covariances with the relaxation's objective.
///
/// For BS `l` and its user `i` with channel `h = h_{l,l,i}`, the beam is
/// `W h / √(h^H W h)`; everything the beams leave out of `Σ_i W_{l,i}` is
/// moved into the sensing covariance, which keeps the per-BS transmit
/// covariance unchanged. The result is feasible for both receiver types.
pub fn rank_one_extract(sdr: &SdrSolution, ch: &ChannelSet, scene: &Scene) -> Result<BeamSolution> {
    sdr.ensure_optimal()?;
    let cells = sdr.w.len();
    let n = ch.arrays.n_tx;
    let mut out = BeamSolution::zeros(cells, ch.users_per_cell(), n);
    let mut psd_clip = vec![0.0; cells];
    for l in 0..cells {
        let mut total = sdr.r[l].clone();
        for (i, wm) in sdr.w[l].iter().enumerate() {
            total += wm;
            let h = ch.h(l, l, i);
            let wh = wm * h;
            let value = h.dotc(&wh).re;
            let tr = wm.trace().re;
            if tr > 0.0 && value <= 1e-12 * tr * h.norm_squared() {
                return Err(IsacError::DegenerateExtraction { bs: l, user: i, value });
            }
            out.w[l][i] = if tr > 0.0 { wh / Complex64::new(value.sqrt(), 0.0) } else { CVector::zeros(n) };
        }
        let mut r = total;
        for w in &out.w[l] {
            r -= w * w.adjoint();
        }
        let scale = r.trace().re.abs().max(f64::MIN_POSITIVE);
        let (clipped, removed) = clip_psd(&r);
        if removed > 1e-7 * scale {
            warn!("BS {l}: extracted sensing covariance has eigenvalue -{removed:.3e} (trace {scale:.3e})");
        } else if removed > 0.0 {
            debug!("BS {l}: clipped eigenvalue -{removed:.3e} from sensing covariance");
        }
        psd_clip[l] = removed;
        out.r_cov[l] = clipped;
    }
    out.omega = sdr.omega;
    out.evaluate_residuals(ch, scene, sdr.variant.receiver);
    out.residuals.psd_clip = psd_clip;
    Ok(out)
}

/// Relaxation plus rank-one beams of one variant.
#[derive(Debug, Clone)]
pub struct Design {
    pub sdr: SdrSolution,
    /// Present when the relaxation was solved to optimality.
    pub beams: Option<BeamSolution>,
}

/// Solves a variant and, if optimal, extracts rank-one beams.
pub fn design(variant: ProblemVariant, ch: &ChannelSet, scene: &Scene) -> Result<Design> {
    let sdr = solve_scheme(variant, ch, scene)?;
    let beams = if sdr.status() == SolveStatus::Optimal { Some(rank_one_extract(&sdr, ch, scene)?) } else { None };
    Ok(Design { sdr, beams })
}

pub(crate) fn hermitian_block(report: &SolveReport, block: usize, scale: f64) -> Result<CMatrix> {
    Ok(extract_hermitian(report.matrix(block))? * Complex64::new(scale, 0.0))
}

#[cfg(test)]
mod tests;
