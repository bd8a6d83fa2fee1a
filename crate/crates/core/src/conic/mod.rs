//! Standard-form semidefinite programming.
//!
//! A [`ConicProgram`] is a list of cone blocks, a linear objective and a list
//! of linear constraints over block entries. Complex Hermitian variables are
//! lowered to real symmetric blocks of twice the size through
//! [`embed_hermitian`]; a Hermitian coefficient `A` acting on a Hermitian
//! variable `X` becomes the real coefficient `embed(A)/2`, because
//! `Re tr(AX) = tr(embed(A) embed(X)) / 2`.
//!
//! [`solve`] runs an interior-point method on the homogeneous self-dual
//! embedding, so infeasible and unbounded programs are detected with
//! certificates rather than by divergence.

mod ipm;

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IsacError, Result};
use crate::geometry::CMatrix;

pub use ipm::SolverSettings;

/// Default relative accuracy for desk-scale programs.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Relative accuracy used for full-size (32-antenna) programs.
pub const LARGE_TOL: f64 = 1e-6;

/// A cone block of the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// Real symmetric positive semidefinite `n×n` matrix.
    Psd(usize),
    /// Vector with nonnegative entries.
    Nonnegative(usize),
    /// Unconstrained vector.
    Free(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Psd(n) | Cone::Nonnegative(n) | Cone::Free(n) => n,
        }
    }

    fn is_matrix(&self) -> bool {
        matches!(self, Cone::Psd(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveSense {
    Minimize,
    Maximize,
}

/// Coefficient of one block inside a linear form.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    /// Symmetric matrix `M`, contributing `Σ_ij M_ij X_ij`.
    Matrix(DMatrix<f64>),
    /// Vector `a`, contributing `Σ_i a_i x_i`.
    Vector(DVector<f64>),
}

/// Linear functional over the decision blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    terms: Vec<(usize, Coefficient)>,
}

impl LinearForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn terms(&self) -> &[(usize, Coefficient)] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `<M, X_block>` for a symmetric matrix coefficient.
    pub fn add_matrix(&mut self, block: usize, m: DMatrix<f64>) -> &mut Self {
        match self.terms.iter_mut().find(|(b, _)| *b == block) {
            Some((_, Coefficient::Matrix(acc))) if acc.shape() == m.shape() => *acc += m,
            _ => self.terms.push((block, Coefficient::Matrix(m))),
        }
        self
    }

    /// Adds `Re tr(A X)` for a Hermitian coefficient `A` acting on a
    /// Hermitian variable stored in embedded form.
    pub fn add_hermitian(&mut self, block: usize, a: &CMatrix) -> Result<&mut Self> {
        let mut e = embed_hermitian(a)?;
        e *= 0.5;
        Ok(self.add_matrix(block, e))
    }

    /// Adds `value · X_ij` for a matrix block. Off-diagonal entries are split
    /// evenly over `(i, j)` and `(j, i)`, so the coefficient stays symmetric.
    pub fn add_matrix_entry(&mut self, block: usize, n: usize, i: usize, j: usize, value: f64) -> &mut Self {
        let mut m = DMatrix::zeros(n, n);
        if i == j {
            m[(i, i)] = value;
        } else {
            m[(i, j)] = 0.5 * value;
            m[(j, i)] = 0.5 * value;
        }
        self.add_matrix(block, m)
    }

    /// Adds `value · x_i` for a vector block of length `n`.
    pub fn add_vector_entry(&mut self, block: usize, n: usize, i: usize, value: f64) -> &mut Self {
        let mut v = DVector::zeros(n);
        v[i] = value;
        match self.terms.iter_mut().find(|(b, _)| *b == block) {
            Some((_, Coefficient::Vector(acc))) if acc.len() == n => *acc += v,
            _ => self.terms.push((block, Coefficient::Vector(v))),
        }
        self
    }

    /// Evaluates the form at the given block values.
    pub fn evaluate(&self, values: &[BlockValue]) -> f64 {
        self.terms
            .iter()
            .map(|(b, c)| match (c, &values[*b]) {
                (Coefficient::Matrix(m), BlockValue::Matrix(x)) => m.dot(x),
                (Coefficient::Vector(a), BlockValue::Vector(x)) => a.dot(x),
                _ => f64::NAN,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub form: LinearForm,
    pub sense: Sense,
    pub rhs: f64,
}

/// A semidefinite program in block form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    sense: ObjectiveSense,
    blocks: Vec<Cone>,
    objective: LinearForm,
    constraints: Vec<LinearConstraint>,
}

impl ConicProgram {
    pub fn new(sense: ObjectiveSense) -> Self {
        Self { sense, blocks: Vec::new(), objective: LinearForm::new(), constraints: Vec::new() }
    }

    /// Appends a block and returns its index.
    pub fn add_block(&mut self, cone: Cone) -> usize {
        self.blocks.push(cone);
        self.blocks.len() - 1
    }

    pub fn set_objective(&mut self, form: LinearForm) {
        self.objective = form;
    }

    pub fn add_constraint(&mut self, form: LinearForm, sense: Sense, rhs: f64) -> usize {
        self.constraints.push(LinearConstraint { form, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn sense(&self) -> ObjectiveSense {
        self.sense
    }

    pub fn blocks(&self) -> &[Cone] {
        &self.blocks
    }

    pub fn objective(&self) -> &LinearForm {
        &self.objective
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    /// Checks block references, shapes and coefficient symmetry.
    pub fn validate(&self) -> Result<()> {
        let check = |form: &LinearForm, what: &str| -> Result<()> {
            for (b, coef) in form.terms() {
                let Some(cone) = self.blocks.get(*b) else {
                    return invalid(format!("{what} references missing block {b}"));
                };
                let n = cone.dim();
                match coef {
                    Coefficient::Matrix(m) => {
                        if !cone.is_matrix() || m.nrows() != n || m.ncols() != n {
                            return invalid(format!("{what}: matrix coefficient does not fit block {b}"));
                        }
                        let scale = m.amax().max(1.0);
                        if (m - m.transpose()).amax() > 1e-12 * scale {
                            return invalid(format!("{what}: coefficient of block {b} is not symmetric"));
                        }
                    }
                    Coefficient::Vector(v) => {
                        if cone.is_matrix() || v.len() != n {
                            return invalid(format!("{what}: vector coefficient does not fit block {b}"));
                        }
                    }
                }
                let finite = match coef {
                    Coefficient::Matrix(m) => m.iter().all(|x| x.is_finite()),
                    Coefficient::Vector(v) => v.iter().all(|x| x.is_finite()),
                };
                if !finite {
                    return invalid(format!("{what}: non-finite coefficient in block {b}"));
                }
            }
            Ok(())
        };
        if self.blocks.iter().any(|c| c.dim() == 0) {
            return invalid("empty cone block");
        }
        check(&self.objective, "objective")?;
        for (i, c) in self.constraints.iter().enumerate() {
            check(&c.form, &format!("constraint {i}"))?;
            if !c.rhs.is_finite() {
                return invalid(format!("constraint {i} has a non-finite right-hand side"));
            }
        }
        Ok(())
    }

    /// Writes the program in SDPA sparse format.
    ///
    /// The program is first put in the solver's standard form
    /// `min <C, X>  s.t.  <A_i, X> = b_i, X ⪰ 0`: inequality rows receive
    /// slack columns, free entries are split into nonnegative pairs, and all
    /// vector entries are gathered into one diagonal block placed last. The
    /// file is the SDPA dual of that form: `F0 = -C`, `F_i = A_i`,
    /// `c_i = b_i`. After the header (constraint count, block count, block
    /// sizes with the diagonal block negative, the `c` vector) every line
    /// holds one nonzero upper-triangular entry as
    /// `matrix block row col value`, with 1-based indices.
    pub fn write_sdpa<W: Write>(&self, mut out: W) -> Result<()> {
        self.validate()?;
        let std = ipm::StandardForm::from_program(self);
        let mut s = String::new();
        let nb = std.sizes.len() + usize::from(std.nl > 0);
        let _ = writeln!(s, "{}", std.rows.len());
        let _ = writeln!(s, "{nb}");
        let mut sizes: Vec<String> = std.sizes.iter().map(|n| n.to_string()).collect();
        if std.nl > 0 {
            sizes.push(format!("-{}", std.nl));
        }
        let _ = writeln!(s, "{}", sizes.join(" "));
        let _ = writeln!(s, "{}", std.b.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" "));
        let mut emit = |mat: usize, psd: &[(usize, DMatrix<f64>)], lp: &[(usize, f64)], sign: f64| {
            for (b, m) in psd {
                for i in 0..m.nrows() {
                    for j in i..m.ncols() {
                        if m[(i, j)] != 0.0 {
                            let _ = writeln!(s, "{mat} {} {} {} {:.17e}", b + 1, i + 1, j + 1, sign * m[(i, j)]);
                        }
                    }
                }
            }
            for &(k, v) in lp {
                if v != 0.0 {
                    let _ = writeln!(s, "{mat} {} {} {} {:.17e}", std.sizes.len() + 1, k + 1, k + 1, sign * v);
                }
            }
        };
        emit(0, &std.c.psd, &std.c.lp, -1.0);
        for (i, row) in std.rows.iter().enumerate() {
            emit(i + 1, &row.psd, &row.lp, 1.0);
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Solver outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// Value of one decision block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Matrix(DMatrix<f64>),
    Vector(DVector<f64>),
}

impl BlockValue {
    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            BlockValue::Matrix(m) => Some(m),
            BlockValue::Vector(_) => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            BlockValue::Vector(v) => Some(v),
            BlockValue::Matrix(_) => None,
        }
    }
}

/// Evidence accompanying a non-optimal status.
#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// Multipliers `y`, one per constraint, normalized so that `Σ b_i y_i = 1`,
    /// with `y_i ≥ 0` on `≥` rows, `y_i ≤ 0` on `≤` rows, and `Σ y_i A_i`
    /// in the negated dual cone up to `residual`.
    PrimalInfeasible { y: Vec<f64>, residual: f64 },
    /// A recession direction of the feasible set with objective improvement
    /// normalized to one, feasible for the homogeneous constraints up to
    /// `residual`.
    DualInfeasible { ray: Vec<BlockValue>, residual: f64 },
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|primal - dual|`.
    pub gap: f64,
    pub iterations: usize,
    /// `‖A x - b‖₂` over the standard-form rows, slacks included, with each
    /// row scaled to unit coefficient norm. Optimal reports keep this below
    /// `tol·(1 + ‖b‖)` for the same scaled right-hand side.
    pub primal_residual: f64,
    /// `‖Aᵀy + z - c‖` over all blocks.
    pub dual_residual: f64,
    pub block_values: Vec<BlockValue>,
    /// Constraint multipliers of the minimization form.
    pub duals: Vec<f64>,
    pub certificate: Option<Certificate>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn matrix(&self, block: usize) -> &DMatrix<f64> {
        self.block_values[block].as_matrix().expect("matrix block")
    }

    pub fn vector(&self, block: usize) -> &DVector<f64> {
        self.block_values[block].as_vector().expect("vector block")
    }
}

/// Solves `prog` to relative accuracy `tol` with default settings.
pub fn solve(prog: &ConicProgram, tol: f64) -> Result<SolveReport> {
    solve_with(prog, &SolverSettings { tol, ..SolverSettings::default() })
}

pub fn solve_with(prog: &ConicProgram, settings: &SolverSettings) -> Result<SolveReport> {
    if !(settings.tol > 0.0 && settings.tol < 1.0) {
        return invalid(format!("solver tolerance must lie in (0, 1), got {}", settings.tol));
    }
    prog.validate()?;
    Ok(ipm::solve(prog, settings))
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]`.
pub fn embed_hermitian(h: &CMatrix) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return invalid(format!("embed_hermitian needs a square matrix, got {}x{}", n, h.ncols()));
    }
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let asym = (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if asym > 1e-10 * scale {
        return invalid(format!("matrix is not Hermitian (deviation {asym:.3e})"));
    }
    let mut e = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = 0.5 * (h[(i, j)] + h[(j, i)].conj());
            e[(i, j)] = z.re;
            e[(i + n, j + n)] = z.re;
            e[(i, j + n)] = -z.im;
            e[(i + n, j)] = z.im;
        }
    }
    Ok(e)
}

/// Hermitian matrix represented by a real symmetric `2n×2n` block. Works
/// for blocks that are not exactly of embedded form by averaging the two
/// copies, which is the projection onto embedded matrices.
pub fn extract_hermitian(y: &DMatrix<f64>) -> Result<CMatrix> {
    let two_n = y.nrows();
    if y.ncols() != two_n || two_n % 2 != 0 {
        return Err(IsacError::InvalidArgument(format!("cannot extract a Hermitian matrix from a {}x{} block", two_n, y.ncols())));
    }
    let n = two_n / 2;
    Ok(CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (y[(i, j)] + y[(i + n, j + n)]);
        let im = 0.5 * (y[(i + n, j)] - y[(i, j + n)]);
        Complex64::new(re, im)
    }))
}
