//! Primal-dual interior-point method on the homogeneous self-dual embedding
//! of `min <C,X> s.t. A(X) = b, X ∈ K`, with HKM search directions and a
//! Mehrotra predictor-corrector step.

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::{BlockValue, Certificate, Coefficient, ConicProgram, Cone, LinearForm, ObjectiveSense, Sense, SolveReport, SolveStatus};

/// Interior-point controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative accuracy for feasibility residuals and duality gap.
    pub tol: f64,
    pub max_iterations: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: super::DEFAULT_TOL, max_iterations: 200, step_fraction: 0.98 }
    }
}

/// One row of the standard form, split into matrix-block and vector parts.
#[derive(Debug, Clone, Default)]
pub(crate) struct SparseRow {
    pub psd: Vec<(usize, DMatrix<f64>)>,
    pub lp: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Psd(usize),
    Lp { start: usize, len: usize },
    Free { plus: usize, minus: usize },
}

/// `min <C,X> s.t. <A_i,X> = b_i` over PSD blocks and one nonnegative
/// vector holding nonnegative entries, split free entries and slacks.
#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub sizes: Vec<usize>,
    pub nl: usize,
    pub rows: Vec<SparseRow>,
    pub b: DVector<f64>,
    pub c: SparseRow,
    slots: Vec<Slot>,
    free_pairs: Vec<(usize, usize)>,
    negated: bool,
}

impl StandardForm {
    pub fn from_program(prog: &ConicProgram) -> Self {
        let mut sizes = Vec::new();
        let mut slots = Vec::new();
        let mut free_pairs = Vec::new();
        let mut nl = 0;
        for cone in prog.blocks() {
            match *cone {
                Cone::Psd(n) => {
                    slots.push(Slot::Psd(sizes.len()));
                    sizes.push(n);
                }
                Cone::Nonnegative(n) => {
                    slots.push(Slot::Lp { start: nl, len: n });
                    nl += n;
                }
                Cone::Free(n) => {
                    slots.push(Slot::Free { plus: nl, minus: nl + n });
                    free_pairs.extend((0..n).map(|i| (nl + i, nl + n + i)));
                    nl += 2 * n;
                }
            }
        }
        let lower = |form: &LinearForm, sign: f64| {
            let mut row = SparseRow::default();
            for (b, coef) in form.terms() {
                match (slots[*b], coef) {
                    (Slot::Psd(k), Coefficient::Matrix(m)) => row.psd.push((k, m * sign)),
                    (Slot::Lp { start: s, .. }, Coefficient::Vector(v)) => {
                        row.lp.extend(v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (s + i, sign * x)));
                    }
                    (Slot::Free { plus, minus }, Coefficient::Vector(v)) => {
                        for (i, x) in v.iter().enumerate().filter(|(_, x)| **x != 0.0) {
                            row.lp.push((plus + i, sign * x));
                            row.lp.push((minus + i, -sign * x));
                        }
                    }
                    _ => unreachable!("validated program"),
                }
            }
            row
        };
        let negated = prog.sense() == ObjectiveSense::Maximize;
        let c = lower(prog.objective(), if negated { -1.0 } else { 1.0 });
        let mut rows = Vec::with_capacity(prog.constraints().len());
        let mut b = DVector::zeros(prog.constraints().len());
        for (i, con) in prog.constraints().iter().enumerate() {
            let mut row = lower(&con.form, 1.0);
            match con.sense {
                Sense::Le => {
                    row.lp.push((nl, 1.0));
                    nl += 1;
                }
                Sense::Ge => {
                    row.lp.push((nl, -1.0));
                    nl += 1;
                }
                Sense::Eq => {}
            }
            b[i] = con.rhs;
            rows.push(row);
        }
        Self { sizes, nl, rows, b, c, slots, free_pairs, negated }
    }

    fn block_values(&self, x: &Pt) -> Vec<BlockValue> {
        self.slots
            .iter()
            .map(|slot| match *slot {
                Slot::Psd(k) => BlockValue::Matrix(x.s[k].clone()),
                Slot::Lp { start, len } => BlockValue::Vector(x.l.rows(start, len).into_owned()),
                Slot::Free { plus, minus } => BlockValue::Vector(DVector::from_fn(minus - plus, |i, _| x.l[plus + i] - x.l[minus + i])),
            })
            .collect()
    }
}

/// Point in the product cone.
#[derive(Debug, Clone)]
struct Pt {
    s: Vec<DMatrix<f64>>,
    l: DVector<f64>,
}

impl Pt {
    fn zeros(sizes: &[usize], nl: usize) -> Self {
        Self { s: sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect(), l: DVector::zeros(nl) }
    }

    fn identity(sizes: &[usize], nl: usize) -> Self {
        Self { s: sizes.iter().map(|&n| DMatrix::identity(n, n)).collect(), l: DVector::from_element(nl, 1.0) }
    }

    fn from_row(row: &SparseRow, sizes: &[usize], nl: usize) -> Self {
        let mut p = Self::zeros(sizes, nl);
        for (k, m) in &row.psd {
            p.s[*k] += m;
        }
        for &(i, v) in &row.lp {
            p.l[i] += v;
        }
        p
    }

    fn dot(&self, o: &Pt) -> f64 {
        self.s.iter().zip(&o.s).map(|(a, b)| a.dot(b)).sum::<f64>() + self.l.dot(&o.l)
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn axpy(&mut self, a: f64, o: &Pt) {
        for (x, y) in self.s.iter_mut().zip(&o.s) {
            x.zip_apply(y, |u, v| *u += a * v);
        }
        self.l.axpy(a, &o.l, 1.0);
    }

    fn scaled(&self, a: f64) -> Pt {
        Pt { s: self.s.iter().map(|m| m * a).collect(), l: &self.l * a }
    }

    fn sub(&self, o: &Pt) -> Pt {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }

    fn is_finite(&self) -> bool {
        self.s.iter().all(|m| m.iter().all(|v| v.is_finite())) && self.l.iter().all(|v| v.is_finite())
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Scaled problem data used by the iteration.
struct Work {
    sizes: Vec<usize>,
    nl: usize,
    m: usize,
    /// `(row, A_row restricted to block)` per PSD block
    blk_rows: Vec<Vec<(usize, DMatrix<f64>)>>,
    a_lp: DMatrix<f64>,
    b: DVector<f64>,
    c: Pt,
    row_scale: DVector<f64>,
    b_scale: f64,
    c_scale: f64,
}

impl Work {
    fn new(std: &StandardForm) -> Self {
        let m = std.rows.len();
        let mut row_scale = DVector::zeros(m);
        for (i, row) in std.rows.iter().enumerate() {
            let sq: f64 = row.psd.iter().map(|(_, a)| a.norm_squared()).sum::<f64>() + row.lp.iter().map(|(_, v)| v * v).sum::<f64>();
            row_scale[i] = if sq > 0.0 { sq.sqrt() } else { 1.0 };
        }
        let mut b = DVector::from_fn(m, |i, _| std.b[i] / row_scale[i]);
        let b_scale = b.amax().max(1.0);
        b /= b_scale;
        let c_raw = Pt::from_row(&std.c, &std.sizes, std.nl);
        let c_max = c_raw.s.iter().map(|x| x.amax()).fold(c_raw.l.amax(), f64::max);
        let c_scale = c_max.max(1.0);
        let c = c_raw.scaled(1.0 / c_scale);
        let mut blk_rows: Vec<Vec<(usize, DMatrix<f64>)>> = vec![Vec::new(); std.sizes.len()];
        let mut a_lp = DMatrix::zeros(m, std.nl);
        for (i, row) in std.rows.iter().enumerate() {
            for (k, a) in &row.psd {
                match blk_rows[*k].last_mut() {
                    Some((r, acc)) if *r == i => *acc += a / row_scale[i],
                    _ => blk_rows[*k].push((i, a / row_scale[i])),
                }
            }
            for &(j, v) in &row.lp {
                a_lp[(i, j)] += v / row_scale[i];
            }
        }
        Self { sizes: std.sizes.clone(), nl: std.nl, m, blk_rows, a_lp, b, c, row_scale, b_scale, c_scale }
    }

    fn a_op(&self, x: &Pt) -> DVector<f64> {
        let mut y = &self.a_lp * &x.l;
        for (k, rows) in self.blk_rows.iter().enumerate() {
            for (i, a) in rows {
                y[*i] += a.dot(&x.s[k]);
            }
        }
        y
    }

    fn at_op(&self, y: &DVector<f64>) -> Pt {
        let mut p = Pt::zeros(&self.sizes, self.nl);
        for (k, rows) in self.blk_rows.iter().enumerate() {
            for (i, a) in rows {
                let w = y[*i];
                p.s[k].zip_apply(a, |u, v| *u += w * v);
            }
        }
        p.l = self.a_lp.transpose() * y;
        p
    }
}

/// Scaling data of the current iterate: `X`, `Z⁻¹` and `x/z`.
struct Scaling<'a> {
    x: &'a Pt,
    zinv: Vec<DMatrix<f64>>,
    z_lp: &'a DVector<f64>,
}

impl Scaling<'_> {
    /// `X P Z⁻¹` on matrix blocks, `x∘p/z` on the vector block.
    fn apply(&self, p: &Pt) -> Pt {
        Pt {
            s: self.x.s.iter().zip(&p.s).zip(&self.zinv).map(|((x, p), zi)| x * p * zi).collect(),
            l: DVector::from_fn(p.l.len(), |i, _| self.x.l[i] * p.l[i] / self.z_lp[i]),
        }
    }

    fn apply_sym(&self, p: &Pt) -> Pt {
        let mut out = self.apply(p);
        out.s.iter_mut().for_each(|m| *m = sym(m));
        out
    }
}

fn schur(work: &Work, sc: &Scaling) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(work.m, work.m);
    for (k, rows) in work.blk_rows.iter().enumerate() {
        for (j, aj) in rows {
            let t = &sc.x.s[k] * aj * &sc.zinv[k];
            for (i, ai) in rows {
                m[(*i, *j)] += ai.dot(&t);
            }
        }
    }
    let d = DVector::from_fn(work.nl, |i, _| sc.x.l[i] / sc.z_lp[i]);
    let ad = DMatrix::from_fn(work.m, work.nl, |i, j| work.a_lp[(i, j)] * d[j]);
    m += ad * work.a_lp.transpose();
    sym(&m)
}

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(m: DMatrix<f64>) -> Option<Self> {
        if m.nrows() == 0 {
            return m.clone().cholesky().map(Factor::Chol);
        }
        match m.clone().cholesky() {
            Some(c) => Some(Factor::Chol(c)),
            None => {
                let lu = m.lu();
                lu.is_invertible().then_some(Factor::Lu(lu))
            }
        }
    }

    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Chol(c) => c.solve(r),
            Factor::Lu(l) => l.solve(r).unwrap_or_else(|| DVector::from_element(r.len(), f64::NAN)),
        }
    }
}

/// Largest `α` with `X + α dX ⪰ 0`, or `None` if `X` is not positive definite.
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let chol = x.clone().cholesky()?;
    let l = chol.l();
    let t = l.solve_lower_triangular(dx)?;
    let s = l.solve_lower_triangular(&t.transpose())?;
    let lam = sym(&s).symmetric_eigenvalues().min();
    Some(if lam >= 0.0 { f64::INFINITY } else { -1.0 / lam })
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter().zip(dx.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(f64::INFINITY, f64::min)
}

fn max_step_scalar(x: f64, dx: f64) -> f64 {
    if dx < 0.0 {
        -x / dx
    } else {
        f64::INFINITY
    }
}

struct Dir {
    x: Pt,
    y: DVector<f64>,
    z: Pt,
    tau: f64,
    kappa: f64,
}

struct Iterate {
    x: Pt,
    y: DVector<f64>,
    z: Pt,
    tau: f64,
    kappa: f64,
}

impl Iterate {
    fn max_step(&self, d: &Dir) -> Option<f64> {
        let mut a = max_step_lp(&self.x.l, &d.x.l).min(max_step_lp(&self.z.l, &d.z.l));
        for k in 0..self.x.s.len() {
            a = a.min(max_step_psd(&self.x.s[k], &d.x.s[k])?);
            a = a.min(max_step_psd(&self.z.s[k], &d.z.s[k])?);
        }
        Some(a.min(max_step_scalar(self.tau, d.tau)).min(max_step_scalar(self.kappa, d.kappa)))
    }
}

struct Metrics {
    pres: f64,
    dres: f64,
    pobj: f64,
    dobj: f64,
}

pub(crate) fn solve(prog: &ConicProgram, settings: &SolverSettings) -> SolveReport {
    let std = StandardForm::from_program(prog);
    let work = Work::new(&std);
    let sign = if std.negated { -1.0 } else { 1.0 };
    let tol = settings.tol;
    let b_norm = work.b_scale * work.b.norm();
    let c_norm = Pt::from_row(&std.c, &std.sizes, std.nl).norm();
    let nu = (std.sizes.iter().sum::<usize>() + std.nl + 1) as f64;

    let mut it = Iterate {
        x: Pt::identity(&work.sizes, work.nl),
        y: DVector::zeros(work.m),
        z: Pt::identity(&work.sizes, work.nl),
        tau: 1.0,
        kappa: 1.0,
    };

    let metrics = |it: &Iterate| -> Metrics {
        let ax = work.a_op(&it.x);
        let pres = work.b_scale * (ax / it.tau - &work.b).norm();
        let mut dr = work.at_op(&it.y);
        dr.axpy(1.0, &it.z);
        dr.axpy(-it.tau, &work.c);
        let dres = work.c_scale * dr.norm() / it.tau;
        let f = work.b_scale * work.c_scale / it.tau;
        Metrics { pres, dres, pobj: f * work.c.dot(&it.x), dobj: f * work.b.dot(&it.y) }
    };

    let finish = |it: &Iterate, status: SolveStatus, iterations: usize, certificate: Option<Certificate>| -> SolveReport {
        let m = metrics(it);
        let x = it.x.scaled(work.b_scale / it.tau);
        let duals = (0..work.m).map(|i| work.c_scale * it.y[i] / (work.row_scale[i] * it.tau)).collect();
        SolveReport {
            status,
            primal_objective: sign * m.pobj,
            dual_objective: sign * m.dobj,
            gap: (m.pobj - m.dobj).abs(),
            iterations,
            primal_residual: m.pres,
            dual_residual: m.dres,
            block_values: std.block_values(&x),
            duals,
            certificate,
        }
    };

    let mut small_steps = 0;
    for iter in 0..settings.max_iterations {
        if !(it.x.is_finite() && it.z.is_finite() && it.y.iter().all(|v| v.is_finite()) && it.tau.is_finite() && it.kappa.is_finite()) {
            debug!("non-finite iterate at iteration {iter}");
            return finish(&it, SolveStatus::NumericalFailure, iter, None);
        }
        let m = metrics(&it);
        let gap = (m.pobj - m.dobj).abs();
        let gap_ok = gap <= tol * (1.0 + m.pobj.abs()) && gap <= f64::max(1e-7, 1e-6 * m.pobj.abs());
        debug!(
            "iter {iter}: pobj {:.10e} dobj {:.10e} pres {:.2e} dres {:.2e} tau {:.2e} kappa {:.2e}",
            m.pobj, m.dobj, m.pres, m.dres, it.tau, it.kappa
        );
        if m.pres <= tol * (1.0 + b_norm) && m.dres <= tol * (1.0 + c_norm) && gap_ok {
            return finish(&it, SolveStatus::Optimal, iter, None);
        }
        // infeasibility certificates
        let by = work.b.dot(&it.y);
        if by > 0.0 {
            let mut r = work.at_op(&it.y);
            r.axpy(1.0, &it.z);
            let res = r.norm() / by;
            if res <= tol {
                let y = (0..work.m).map(|i| it.y[i] / (work.row_scale[i] * work.b_scale * by)).collect();
                let cert = Certificate::PrimalInfeasible { y, residual: res / work.b_scale };
                return finish(&it, SolveStatus::Infeasible, iter, Some(cert));
            }
        }
        let cx = work.c.dot(&it.x);
        if cx < 0.0 {
            let ax = work.a_op(&it.x);
            let res = DVector::from_fn(work.m, |i, _| work.row_scale[i] * ax[i]).norm() / (-cx * work.c_scale);
            if res <= tol {
                let ray = std.block_values(&it.x.scaled(1.0 / (-cx * work.c_scale)));
                let cert = Certificate::DualInfeasible { ray, residual: res };
                return finish(&it, SolveStatus::Unbounded, iter, Some(cert));
            }
        }

        let Some(dirs) = step_directions(&work, &it, nu) else {
            debug!("factorization failed at iteration {iter}");
            return finish(&it, SolveStatus::NumericalFailure, iter, None);
        };
        let Some(amax) = it.max_step(&dirs) else {
            return finish(&it, SolveStatus::NumericalFailure, iter, None);
        };
        let alpha = (settings.step_fraction * amax).min(1.0);
        if alpha < 1e-10 {
            small_steps += 1;
            if small_steps > 3 {
                debug!("step length collapsed at iteration {iter}");
                return finish(&it, SolveStatus::NumericalFailure, iter, None);
            }
        }
        it.x.axpy(alpha, &dirs.x);
        it.y.axpy(alpha, &dirs.y, 1.0);
        it.z.axpy(alpha, &dirs.z);
        it.tau += alpha * dirs.tau;
        it.kappa += alpha * dirs.kappa;
        for &(p, q) in &std.free_pairs {
            let t = it.x.l[p].min(it.x.l[q]);
            let d = (it.x.l[p] - it.x.l[q]).abs();
            if t > 10.0 * d.max(it.tau) {
                it.x.l[p] -= 0.8 * t;
                it.x.l[q] -= 0.8 * t;
            }
        }
    }
    finish(&it, SolveStatus::NumericalFailure, settings.max_iterations, None)
}

fn step_directions(work: &Work, it: &Iterate, nu: f64) -> Option<Dir> {
    let zinv = it
        .z
        .s
        .iter()
        .map(|z| z.clone().cholesky().map(|c| sym(&c.inverse())))
        .collect::<Option<Vec<_>>>()?;
    let sc = Scaling { x: &it.x, zinv, z_lp: &it.z.l };
    let factor = Factor::new(schur(work, &sc))?;

    let mu = (it.x.dot(&it.z) + it.tau * it.kappa) / nu;
    let rp = &work.b * it.tau - work.a_op(&it.x);
    let mut rd = work.c.scaled(it.tau);
    rd.axpy(-1.0, &work.at_op(&it.y));
    rd.axpy(-1.0, &it.z);
    let rg = it.kappa + work.c.dot(&it.x) - work.b.dot(&it.y);

    let g = work.a_op(&sc.apply(&work.c));
    let w = factor.solve(&g);
    let mb = factor.solve(&work.b);
    let v = &mb + &w;
    let bg = &work.b - &g;
    // (b-g)ᵀM⁻¹(b+g) + <C, XCZ⁻¹> = bᵀM⁻¹b + ‖C - Aᵀw‖² in the scaling
    // metric; the second form avoids cancelling two large terms
    let c_perp = work.c.sub(&work.at_op(&w));
    let denom = work.b.dot(&mb).max(0.0) + c_perp.dot(&sc.apply(&c_perp)).max(0.0) + it.kappa / it.tau;
    let xrdz = sc.apply(&rd);
    let a_xrdz = work.a_op(&xrdz);
    let c_xrdz = work.c.dot(&xrdz);

    let direction = |eta: f64, sigma: f64, corr: Option<&Dir>| -> Dir {
        // complementarity right-hand side
        let mut rc = Pt {
            s: it.x.s.iter().zip(&sc.zinv).map(|(x, zi)| zi * (sigma * mu) - x).collect(),
            l: DVector::from_fn(it.x.l.len(), |i, _| (sigma * mu - it.x.l[i] * it.z.l[i]) / it.z.l[i]),
        };
        let mut k0 = (sigma * mu - it.tau * it.kappa) / it.tau;
        if let Some(c) = corr {
            for k in 0..rc.s.len() {
                rc.s[k] -= sym(&(&c.x.s[k] * &c.z.s[k] * &sc.zinv[k]));
            }
            for i in 0..rc.l.len() {
                rc.l[i] -= c.x.l[i] * c.z.l[i] / it.z.l[i];
            }
            k0 -= c.tau * c.kappa / it.tau;
        }
        // eliminated variables for given (dy, dτ)
        let complete = |dy: DVector<f64>, dtau: f64| -> Dir {
            let mut dz = rd.scaled(eta);
            dz.axpy(-1.0, &work.at_op(&dy));
            dz.axpy(dtau, &work.c);
            let dx = rc.sub(&sc.apply_sym(&dz));
            let dkappa = k0 - it.kappa / it.tau * dtau;
            Dir { x: dx, y: dy, z: dz, tau: dtau, kappa: dkappa }
        };
        let rhs = &rp * eta - work.a_op(&rc) + &a_xrdz * eta;
        let u = factor.solve(&rhs);
        let dtau = (eta * rg + work.c.dot(&rc) - eta * c_xrdz + k0 - bg.dot(&u)) / denom;
        let mut d = complete(&u + &v * dtau, dtau);
        // iterative refinement against the unreduced primal and gap rows
        for _ in 0..2 {
            let e1 = &rp * eta - (work.a_op(&d.x) - &work.b * d.tau);
            let e3 = -eta * rg - (-work.b.dot(&d.y) + work.c.dot(&d.x) + d.kappa);
            let u1 = factor.solve(&e1);
            let dt = (e3 + bg.dot(&u1)) / -denom;
            let dy = &d.y + &u1 + &v * dt;
            let tau = d.tau + dt;
            d = complete(dy, tau);
        }
        d
    };

    let pred = direction(1.0, 0.0, None);
    let a_aff = it.max_step(&pred)?.min(1.0);
    let mut xa = it.x.clone();
    xa.axpy(a_aff, &pred.x);
    let mut za = it.z.clone();
    za.axpy(a_aff, &pred.z);
    let mu_aff = (xa.dot(&za) + (it.tau + a_aff * pred.tau) * (it.kappa + a_aff * pred.kappa)) / nu;
    let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
    Some(direction(1.0 - sigma, sigma, Some(&pred)))
}
