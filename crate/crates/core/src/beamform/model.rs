//! Explicit term model of the relaxed problems and its lowering to a
//! [`ConicProgram`].
//!
//! Variables are normalized before lowering: powers by `P_max`, SINR rows by
//! `σ_c²` (channels become `h √(P_max/σ_c²)`), and the energy bound by the
//! largest single-link energy reachable at full power. This keeps every row
//! and the objective of order one. Each information beam is further scaled by
//! its own signal gain so that a beam which just meets its SINR target has a
//! block of unit size, however weak or strong the link.

use num_complex::Complex64;

use super::{hermitian_block, ProblemVariant, Scheme, SdrSolution};
use crate::channel::{ChannelSet, Scene};
use crate::conic::{Cone, ConicProgram, LinearForm, ObjectiveSense, Sense, SolveReport};
use crate::error::{invalid, Result};
use crate::geometry::{CMatrix, CVector};

/// A decision variable of the relaxed problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamVar {
    /// Information beam covariance of BS `bs` for its user `user`.
    W { bs: usize, user: usize },
    /// Sensing covariance of BS `bs`.
    R { bs: usize },
}

/// Quadratic form `g^H X g` with a normalized channel `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTerm {
    pub var: BeamVar,
    pub g: CVector,
}

/// `Σ interference + 1 ≤ signal_factor · signal`, in noise units.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrRow {
    pub bs: usize,
    pub user: usize,
    pub gamma: f64,
    pub interference: Vec<QuadTerm>,
    pub signal: QuadTerm,
    /// `1 + 1/Γ`
    pub signal_factor: f64,
}

/// Echo link from BS `l` to BS `m` with normalized energy weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTerm {
    pub m: usize,
    pub l: usize,
    pub weight: f64,
}

/// `Ω ≤ Σ_links weight · tr(A_l X_l)` at one sample, where `X_l` is the
/// transmit covariance of BS `l` counted by the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct EpigraphRow {
    pub sample: usize,
    pub links: Vec<LinkTerm>,
}

/// Normalized relaxed problem of one variant.
#[derive(Debug, Clone)]
pub struct SdrModel {
    pub variant: ProblemVariant,
    pub cells: usize,
    pub users: usize,
    pub n_tx: usize,
    pub p_max: f64,
    /// `Ω = energy_scale · Ω_normalized`
    pub energy_scale: f64,
    pub epigraph: Vec<EpigraphRow>,
    pub sinr: Vec<SinrRow>,
    /// Fixed unit-norm beam directions `[m][k]`; the beams are then scalar
    /// powers instead of PSD blocks.
    pub directions: Option<Vec<Vec<CVector>>>,
    /// Block scale of each information beam `[m][k]`: `W = P_max · s · V`.
    pub w_scale: Vec<Vec<f64>>,
    /// `A_l` per sample and BS.
    a: Vec<Vec<CMatrix>>,
}

impl SdrModel {
    pub fn build(variant: ProblemVariant, ch: &ChannelSet, scene: &Scene, directions: Option<&[Vec<CVector>]>) -> Result<Self> {
        scene.validate()?;
        let cells = ch.num_cells();
        let users = ch.users_per_cell();
        let n_tx = ch.arrays.n_tx;
        if scene.num_cells() != cells || scene.users_per_cell() != users || scene.arrays != ch.arrays {
            return invalid("scene and channel set disagree in size");
        }
        match (variant.scheme, directions) {
            (Scheme::Zf, None) => return invalid("zero-forcing model needs beam directions"),
            (Scheme::Zf, Some(d)) => {
                if d.len() != cells || d.iter().any(|v| v.len() != users || v.iter().any(|u| u.len() != n_tx)) {
                    return invalid("beam directions do not match the scene");
                }
                if d.iter().flatten().any(|u| (u.norm() - 1.0).abs() > 1e-9) {
                    return invalid("beam directions must have unit norm");
                }
            }
            (_, Some(_)) => return invalid("fixed directions are only used by the zero-forcing scheme"),
            _ => {}
        }
        let p_max = scene.p_max;
        let n_rx = ch.arrays.n_rx as f64;

        let mut max_gain: f64 = 0.0;
        let mut raw = Vec::with_capacity(ch.num_samples());
        for q in 0..ch.num_samples() {
            let mut links = Vec::new();
            for m in 0..cells {
                for l in 0..cells {
                    if variant.scenario.uses_link(m, l) {
                        let link = ch.link(q, m, l);
                        let g = n_rx * link.zeta * link.zeta * link.beta;
                        max_gain = max_gain.max(g);
                        links.push((m, l, g));
                    }
                }
            }
            raw.push(links);
        }
        let energy_scale = if max_gain > 0.0 { max_gain * p_max * n_tx as f64 } else { 1.0 };
        let epigraph = raw
            .into_iter()
            .enumerate()
            .map(|(q, links)| EpigraphRow {
                sample: q,
                links: links.into_iter().map(|(m, l, g)| LinkTerm { m, l, weight: g * p_max / energy_scale }).collect(),
            })
            .collect();

        let amp = Complex64::new((p_max / scene.noise_comm).sqrt(), 0.0);
        let mut sinr = Vec::with_capacity(cells * users);
        for m in 0..cells {
            for k in 0..users {
                let gamma = scene.sinr_targets[m][k];
                let mut interference = Vec::new();
                for l in 0..cells {
                    let g = ch.h(l, m, k) * amp;
                    for i in 0..users {
                        interference.push(QuadTerm { var: BeamVar::W { bs: l, user: i }, g: g.clone() });
                    }
                }
                if variant.receiver == crate::detection::Receiver::TypeI {
                    for l in 0..cells {
                        interference.push(QuadTerm { var: BeamVar::R { bs: l }, g: ch.h(l, m, k) * amp });
                    }
                }
                let signal = QuadTerm { var: BeamVar::W { bs: m, user: k }, g: ch.h(m, m, k) * amp };
                sinr.push(SinrRow { bs: m, user: k, gamma, interference, signal, signal_factor: 1.0 + 1.0 / gamma });
            }
        }
        let mut w_scale = vec![vec![1.0; users]; cells];
        for row in &sinr {
            let gain = match directions {
                Some(d) => row.signal.g.dotc(&d[row.bs][row.user]).norm_sqr(),
                None => row.signal.g.norm_squared(),
            };
            if gain > 1.0 {
                w_scale[row.bs][row.user] = 1.0 / gain;
            }
        }
        let a = (0..ch.num_samples()).map(|q| (0..cells).map(|l| ch.a_matrix(q, l).clone()).collect()).collect();
        Ok(Self {
            variant,
            cells,
            users,
            n_tx,
            p_max,
            energy_scale,
            epigraph,
            sinr,
            directions: directions.map(|d| d.to_vec()),
            w_scale,
            a,
        })
    }

    /// Number of scalar constraint rows: one per sample, CU and BS.
    pub fn num_rows(&self) -> usize {
        self.epigraph.len() + self.sinr.len() + self.cells
    }

    fn w_block(&self, bs: usize, user: usize) -> usize {
        match self.directions {
            Some(_) => 0,
            None => bs * self.users + user,
        }
    }

    fn r_block(&self, bs: usize) -> usize {
        match self.directions {
            Some(_) => 1 + bs,
            None => self.cells * self.users + bs,
        }
    }

    fn omega_block(&self) -> usize {
        self.r_block(self.cells - 1) + 1
    }

    /// Adds `scale · Re tr(M X)` for variable `var`.
    fn add_term(&self, form: &mut LinearForm, var: BeamVar, m: &CMatrix, scale: f64) -> Result<()> {
        match var {
            BeamVar::R { bs } => {
                form.add_hermitian(self.r_block(bs), &(m * Complex64::new(scale, 0.0)))?;
            }
            BeamVar::W { bs, user } => match &self.directions {
                None => {
                    let scale = scale * self.w_scale[bs][user];
                    form.add_hermitian(self.w_block(bs, user), &(m * Complex64::new(scale, 0.0)))?;
                }
                Some(d) => {
                    let u = &d[bs][user];
                    let v = u.dotc(&(m * u)).re * self.w_scale[bs][user];
                    form.add_vector_entry(0, self.cells * self.users, bs * self.users + user, scale * v);
                }
            },
        }
        Ok(())
    }

    pub fn to_program(&self) -> Result<ConicProgram> {
        let n2 = 2 * self.n_tx;
        let mut prog = ConicProgram::new(ObjectiveSense::Maximize);
        match self.directions {
            None => {
                for _ in 0..self.cells * self.users {
                    prog.add_block(Cone::Psd(n2));
                }
            }
            Some(_) => {
                prog.add_block(Cone::Nonnegative(self.cells * self.users));
            }
        }
        for _ in 0..self.cells {
            prog.add_block(Cone::Psd(n2));
        }
        let omega = prog.add_block(Cone::Nonnegative(1));
        debug_assert_eq!(omega, self.omega_block());
        let mut obj = LinearForm::new();
        obj.add_vector_entry(omega, 1, 0, 1.0);
        prog.set_objective(obj);

        let comm = self.variant.comm_in_energy();
        for row in &self.epigraph {
            let mut weight_per_bs = vec![0.0; self.cells];
            for t in &row.links {
                weight_per_bs[t.l] += t.weight;
            }
            let mut form = LinearForm::new();
            form.add_vector_entry(omega, 1, 0, 1.0);
            for (l, &wt) in weight_per_bs.iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                let a = &self.a[row.sample][l];
                self.add_term(&mut form, BeamVar::R { bs: l }, a, -wt)?;
                if comm {
                    for i in 0..self.users {
                        self.add_term(&mut form, BeamVar::W { bs: l, user: i }, a, -wt)?;
                    }
                }
            }
            prog.add_constraint(form, Sense::Le, 0.0);
        }

        for row in &self.sinr {
            let mut form = LinearForm::new();
            let outer = |g: &CVector| g * g.adjoint();
            self.add_term(&mut form, row.signal.var, &outer(&row.signal.g), row.signal_factor)?;
            for t in &row.interference {
                self.add_term(&mut form, t.var, &outer(&t.g), -1.0)?;
            }
            prog.add_constraint(form, Sense::Ge, 1.0);
        }

        let eye = CMatrix::identity(self.n_tx, self.n_tx);
        for l in 0..self.cells {
            let mut form = LinearForm::new();
            for i in 0..self.users {
                self.add_term(&mut form, BeamVar::W { bs: l, user: i }, &eye, 1.0)?;
            }
            self.add_term(&mut form, BeamVar::R { bs: l }, &eye, 1.0)?;
            prog.add_constraint(form, Sense::Le, 1.0);
        }
        Ok(prog)
    }

    /// Maps a solver report back to physical units.
    pub fn recover(&self, report: SolveReport) -> Result<SdrSolution> {
        let n = self.n_tx;
        let mut w = vec![vec![CMatrix::zeros(n, n); self.users]; self.cells];
        for (l, row) in w.iter_mut().enumerate() {
            for (i, wm) in row.iter_mut().enumerate() {
                *wm = match &self.directions {
                    None => hermitian_block(&report, self.w_block(l, i), self.p_max * self.w_scale[l][i])?,
                    Some(d) => {
                        let p = report.vector(0)[l * self.users + i].max(0.0) * self.p_max * self.w_scale[l][i];
                        let u = &d[l][i];
                        u * u.adjoint() * Complex64::new(p, 0.0)
                    }
                };
            }
        }
        let r = (0..self.cells).map(|l| hermitian_block(&report, self.r_block(l), self.p_max)).collect::<Result<Vec<_>>>()?;
        let omega = report.vector(self.omega_block())[0] * self.energy_scale;
        Ok(SdrSolution { variant: self.variant, w, r, omega, report })
    }
}

