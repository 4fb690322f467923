//! Sector representations of the shape algebra.
//!
//! A sector is spanned by the number states reachable from a vacuum
//! occupation vector by the ladder step `l`. On it the algebra acts through
//! a weighted shift `A`, its adjoint and the diagonal `A_0`, and the whole
//! representation is encoded in one positive sequence: the structural
//! values along the ladder. Sectors whose step has a negative component
//! terminate on their own; the rest are cut off at a hard wall, and every
//! check the wall would contaminate is restricted to the interior block
//! that excludes the last basis vector.

use std::sync::{Arc, OnceLock};

use ndarray::{s, Array1, Array2, ArrayView2};
use num_complex::Complex64;
use serde_json::json;

use crate::algebra::{eval_p, SystemSpec};
use crate::error::{KummerError, Result};
use crate::tridiag;

/// Real symmetric tridiagonal operator in the occupation basis. `off[n]`
/// couples basis states `n` and `n + 1`; a purely diagonal operator has all
/// couplings zero. The spectrum is computed once per value and shared.
#[derive(Debug, Clone)]
pub struct TridiagonalOperator {
    label: String,
    diag: Vec<f64>,
    off: Vec<f64>,
    cache: OnceLock<Arc<Spectrum>>,
}

/// Eigenvalues in ascending order with the matching orthonormal
/// eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Array2<f64>,
}

impl TridiagonalOperator {
    pub fn new(label: impl Into<String>, diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(KummerError::InvalidParameter(
                "tridiagonal operator needs at least one basis state".into(),
            ));
        }
        if off.len() + 1 != diag.len() {
            return Err(KummerError::InvalidParameter(format!(
                "tridiagonal operator with {} diagonal entries needs {} couplings, got {}",
                diag.len(),
                diag.len() - 1,
                off.len()
            )));
        }
        if diag.iter().chain(off.iter()).any(|v| !v.is_finite()) {
            return Err(KummerError::InvalidParameter(
                "tridiagonal operator entries must be finite".into(),
            ));
        }
        Ok(TridiagonalOperator {
            label: label.into(),
            diag,
            off,
            cache: OnceLock::new(),
        })
    }

    /// Diagonal operator with the given entries.
    pub fn diagonal(label: impl Into<String>, diag: Vec<f64>) -> Result<Self> {
        let off = vec![0.0; diag.len().saturating_sub(1)];
        TridiagonalOperator::new(label, diag, off)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let d = self.dim();
        let mut m = Array2::zeros((d, d));
        for (i, &v) in self.diag.iter().enumerate() {
            m[[i, i]] = v;
        }
        for (i, &v) in self.off.iter().enumerate() {
            m[[i, i + 1]] = v;
            m[[i + 1, i]] = v;
        }
        m
    }

    pub fn to_complex(&self) -> Array2<Complex64> {
        complexify(&self.to_dense().view())
    }

    /// Eigendecomposition, computed on first use and cached. Concurrent
    /// first calls may race; both compute the same value and one wins.
    pub fn spectrum(&self) -> Result<Arc<Spectrum>> {
        if let Some(sp) = self.cache.get() {
            return Ok(Arc::clone(sp));
        }
        let eig = tridiag::eigh_tridiagonal(&self.diag, &self.off)?;
        let d = self.dim();
        let mut vectors = Array2::zeros((d, d));
        for (j, col) in eig.vectors.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                vectors[[i, j]] = v;
            }
        }
        let sp = Arc::new(Spectrum {
            eigenvalues: eig.values,
            eigenvectors: vectors,
        });
        let _ = self.cache.set(Arc::clone(&sp));
        Ok(sp)
    }

    /// Operator norm, the largest eigenvalue magnitude.
    pub fn norm(&self) -> Result<f64> {
        let sp = self.spectrum()?;
        Ok(sp
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs())))
    }

    /// Serialization used by the command line tools: label, dimension,
    /// bands and eigenvalues in ascending order.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        let sp = self.spectrum()?;
        Ok(json!({
            "label": self.label,
            "dim": self.dim(),
            "diag": self.diag,
            "off": self.off,
            "eigenvalues": sp.eigenvalues,
        }))
    }
}

/// Ladder sector over a vacuum occupation vector.
#[derive(Debug, Clone)]
pub struct Sector {
    vacuum: Vec<i64>,
    step: Vec<i64>,
    c: Vec<f64>,
    c0: f64,
    hbar: f64,
    /// `Some(L + 1)` when the ladder terminates on its own.
    finite_dim: Option<usize>,
    /// Wall size for nonterminating ladders; `None` means no matrix
    /// realization was requested.
    truncation: Option<usize>,
    g_seq: Vec<f64>,
}

/// Build the sector above `vacuum`. The vacuum must have nonnegative
/// occupations and be annihilated by the lowering operator: the structural
/// value one ladder step below it must vanish. Ladders that do not
/// terminate need `truncation` (at least 2) before any matrix realization;
/// finite ladders ignore it.
pub fn build_sector(
    spec: &SystemSpec,
    vacuum: &[i64],
    truncation: Option<usize>,
) -> Result<Sector> {
    let n = spec.n_modes();
    if vacuum.len() != n {
        return Err(KummerError::InvalidParameter(format!(
            "vacuum has {} occupations, system has {} modes",
            vacuum.len(),
            n
        )));
    }
    if let Some(&bad) = vacuum.iter().find(|&&v| v < 0) {
        return Err(KummerError::InvalidParameter(format!(
            "vacuum occupations must be nonnegative, got {}",
            bad
        )));
    }

    // The ladder factors are exact integer products, so a true vacuum gives
    // an exact zero here; the tolerance only guards the coupling factor.
    let below = spec.structural_occupation(vacuum, -1);
    if !(below.abs() <= 1e-12) {
        return Err(KummerError::NotAVacuum(format!(
            "structural value one step below the vacuum is {:.6e}",
            below
        )));
    }

    let hbar = spec.hbar();
    let weighted = |row: usize| -> f64 {
        let mut acc = 0.0;
        for (j, &vj) in vacuum.iter().enumerate() {
            acc += spec.rho()[[row, j]] * vj as f64;
        }
        hbar * acc
    };
    let c0 = weighted(0);
    let c: Vec<f64> = (1..n).map(weighted).collect();

    // A negative step component caps the ladder at the first occupation it
    // exhausts.
    let finite_dim = spec
        .l()
        .iter()
        .zip(vacuum)
        .filter(|(&li, _)| li < 0)
        .map(|(&li, &vi)| (vi / -li) as usize)
        .min()
        .map(|top| top + 1);

    let (seq_len, truncation) = match finite_dim {
        Some(dim) => (dim - 1, None),
        None => match truncation {
            Some(m) if m >= 2 => (m, Some(m)),
            Some(m) => {
                return Err(KummerError::InvalidParameter(format!(
                    "truncation must be at least 2, got {}",
                    m
                )))
            }
            None => (0, None),
        },
    };

    if let Some(dim) = finite_dim {
        for step in 0..dim as i64 {
            for (i, &li) in spec.l().iter().enumerate() {
                if vacuum[i] + step * li < 0 {
                    return Err(KummerError::InvalidSpec(format!(
                        "occupation {} went negative at ladder step {}",
                        i, step
                    )));
                }
            }
        }
    }

    let mut g_seq = Vec::with_capacity(seq_len);
    for step in 0..seq_len {
        let g = spec.structural_occupation(vacuum, step as i64);
        if !(g > 0.0) {
            return Err(KummerError::InvalidSpec(format!(
                "structural sequence must stay positive on the ladder interior, \
                 got {:.6e} at step {}",
                g, step
            )));
        }
        g_seq.push(g);
    }

    Ok(Sector {
        vacuum: vacuum.to_vec(),
        step: spec.l().to_vec(),
        c,
        c0,
        hbar,
        finite_dim,
        truncation,
        g_seq,
    })
}

impl Sector {
    pub fn vacuum(&self) -> &[i64] {
        &self.vacuum
    }

    /// Conserved sector constants `c_1, .., c_N`.
    pub fn constants(&self) -> &[f64] {
        &self.c
    }

    /// Lowest `A_0` eigenvalue.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn is_finite(&self) -> bool {
        self.finite_dim.is_some()
    }

    pub fn finite_dim(&self) -> Option<usize> {
        self.finite_dim
    }

    pub fn truncation(&self) -> Option<usize> {
        self.truncation
    }

    /// Matrix size of the realization: the full ladder when finite, the
    /// wall size otherwise.
    pub fn matrix_dim(&self) -> Result<usize> {
        self.finite_dim
            .or(self.truncation)
            .ok_or_else(|| KummerError::TruncateFirst("the ladder does not terminate".into()))
    }

    /// Structural values along the ladder; `g_seq[n]` couples states `n`
    /// and `n + 1`. Finite ladders store interior values only (the value at
    /// the top vanishes identically); walled ladders also store the value
    /// that would couple past the wall.
    pub fn g_seq(&self) -> Result<&[f64]> {
        self.matrix_dim()?;
        Ok(&self.g_seq)
    }

    /// Structural value dropped by the hard wall, if there is one.
    pub fn wall_defect(&self) -> Option<f64> {
        self.truncation.map(|m| self.g_seq[m - 1])
    }

    /// Normalization ladder of the analytic coherent-state family: the
    /// structural value with every negative-mode ladder factor moved to the
    /// denominator. For ladders without negative exponents this equals
    /// `g_seq`. Entry `n` is the squared weight ratio `|w_n / w_{n+1}|^2`
    /// of the family behind the reproducing kernel and measure; like
    /// `g_seq` it includes the value the wall drops, when there is a wall.
    pub fn tilde_seq(&self) -> Result<Vec<f64>> {
        self.matrix_dim()?;
        let negatives: Vec<usize> = (0..self.step.len())
            .filter(|&i| self.step[i] < 0)
            .collect();
        let mut out = Vec::with_capacity(self.g_seq.len());
        for n in 0..self.g_seq.len() {
            let actions = self.actions_at(n);
            let down: f64 = negatives
                .iter()
                .map(|&i| eval_p(self.step[i], actions[i], self.hbar))
                .product();
            out.push(self.g_seq[n] / (down * down));
        }
        Ok(out)
    }

    /// Diagonal of the structural function of `A_0`. The top entry is zero,
    /// exactly for finite ladders and by the wall convention otherwise.
    pub fn structural_diag(&self) -> Result<Vec<f64>> {
        let d = self.matrix_dim()?;
        let mut out = Vec::with_capacity(d);
        out.extend_from_slice(&self.g_seq[..d - 1]);
        out.push(0.0);
        Ok(out)
    }

    /// Diagonal of the structural function of `A_0 - hbar`. The bottom
    /// entry is the vacuum condition, an exact zero.
    pub fn structural_diag_below(&self) -> Result<Vec<f64>> {
        let d = self.matrix_dim()?;
        let mut out = Vec::with_capacity(d);
        out.push(0.0);
        out.extend_from_slice(&self.g_seq[..d - 1]);
        Ok(out)
    }

    /// `A_0` eigenvalue at ladder step `n`.
    pub fn a0_value(&self, n: usize) -> f64 {
        self.c0 + self.hbar * n as f64
    }

    /// Oscillator actions at ladder step `n`, exact integer multiples of
    /// `hbar`.
    pub fn actions_at(&self, n: usize) -> Vec<f64> {
        self.vacuum
            .iter()
            .zip(&self.step)
            .map(|(&vi, &li)| self.hbar * (vi + n as i64 * li) as f64)
            .collect()
    }

    pub(crate) fn check_matches(&self, spec: &SystemSpec) -> Result<()> {
        if spec.l() != self.step.as_slice() || spec.hbar() != self.hbar {
            return Err(KummerError::InvalidParameter(
                "sector was built for a different system".into(),
            ));
        }
        Ok(())
    }
}

/// The operators generating the reduced algebra on a sector. `a` lowers
/// (`<n-1|A|n> = sqrt(g_seq[n-1])`), `a_star` is its transpose, `x` and `y`
/// are the Hermitian and anti-Hermitian combinations `(A + A*)/2` and
/// `(A - A*)/2i`.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub a0: TridiagonalOperator,
    pub x: TridiagonalOperator,
    pub y: Array2<Complex64>,
    pub a: Array2<f64>,
    pub a_star: Array2<f64>,
}

pub fn reduced_operators(sector: &Sector) -> Result<ReducedOperators> {
    let d = sector.matrix_dim()?;
    let diag: Vec<f64> = (0..d).map(|n| sector.a0_value(n)).collect();
    let a0 = TridiagonalOperator::diagonal("A0", diag)?;

    let mut a = Array2::zeros((d, d));
    let mut y = Array2::from_elem((d, d), Complex64::new(0.0, 0.0));
    let mut x_off = Vec::with_capacity(d - 1);
    for n in 0..d - 1 {
        let w = sector.g_seq[n].sqrt();
        a[[n, n + 1]] = w;
        x_off.push(0.5 * w);
        y[[n, n + 1]] = Complex64::new(0.0, -0.5 * w);
        y[[n + 1, n]] = Complex64::new(0.0, 0.5 * w);
    }
    let a_star = a.t().to_owned();
    let x = TridiagonalOperator::new("X", vec![0.0; d], x_off)?;

    Ok(ReducedOperators {
        a0,
        x,
        y,
        a,
        a_star,
    })
}

/// Residual norms of the defining relations on a sector realization,
/// measured in the operator norm against `tol * max(1, |A|^2)`. On walled
/// sectors the residuals are taken on the interior block, which excludes
/// the last basis vector; the wall makes the top corner of `A A*` wrong by
/// construction and that is not a property of the algebra.
#[derive(Debug, Clone)]
pub struct RelationReport {
    /// `|[A0, A] + hbar A|`
    pub lowering: f64,
    /// `|[A0, A*] - hbar A*|`
    pub raising: f64,
    /// `|A* A - G(A0 - hbar)|`
    pub lower_product: f64,
    /// `|A A* - G(A0)|`
    pub upper_product: f64,
    /// `max(1, |A|^2)`
    pub scale: f64,
    pub tol: f64,
    pub passed: bool,
}

impl RelationReport {
    pub fn worst(&self) -> f64 {
        self.lowering
            .max(self.raising)
            .max(self.lower_product)
            .max(self.upper_product)
    }
}

pub fn verify_relations(sector: &Sector, tol: f64) -> Result<RelationReport> {
    let d = sector.matrix_dim()?;
    let ops = reduced_operators(sector)?;
    let hbar = sector.hbar;

    let a0 = ops.a0.to_dense();
    let a = &ops.a;
    let a_star = &ops.a_star;

    let r_lowering = a0.dot(a) - a.dot(&a0) + &(a * hbar);
    let r_raising = a0.dot(a_star) - a_star.dot(&a0) - &(a_star * hbar);

    let mut r_lower = a_star.dot(a);
    for (n, g) in sector.structural_diag_below()?.into_iter().enumerate() {
        r_lower[[n, n]] -= g;
    }
    let mut r_upper = a.dot(a_star);
    for (n, g) in sector.structural_diag()?.into_iter().enumerate() {
        r_upper[[n, n]] -= g;
    }

    let interior = if sector.truncation.is_some() { d - 1 } else { d };
    let block_norm = |m: &Array2<f64>| operator_norm_real(&m.slice(s![..interior, ..interior]));

    let norm_a_sq = sector.g_seq[..d - 1].iter().fold(0.0f64, |m, &g| m.max(g));
    let scale = norm_a_sq.max(1.0);

    let report = RelationReport {
        lowering: block_norm(&r_lowering),
        raising: block_norm(&r_raising),
        lower_product: block_norm(&r_lower),
        upper_product: block_norm(&r_upper),
        scale,
        tol,
        passed: false,
    };
    let passed = report.worst() <= tol * scale;
    Ok(RelationReport { passed, ..report })
}

/// Reduced Hamiltonian `H = H0(A0) + A + A*` as a symmetric tridiagonal
/// operator: the free part evaluated along the ladder on the diagonal (plus
/// the additive quantization constant) and the square roots of the
/// structural sequence on the couplings.
pub fn reduced_hamiltonian(sector: &Sector, spec: &SystemSpec) -> Result<TridiagonalOperator> {
    sector.check_matches(spec)?;
    let d = sector.matrix_dim()?;
    let free = spec.free_part();
    let diag: Vec<f64> = (0..d)
        .map(|n| free.eval(&sector.actions_at(n)) + spec.h_const())
        .collect();
    let off: Vec<f64> = sector.g_seq[..d - 1].iter().map(|g| g.sqrt()).collect();
    TridiagonalOperator::new("H", diag, off)
}

/// Diagonal of `H0(A0)` along the ladder, including the quantization
/// constant.
pub fn free_diag(sector: &Sector, spec: &SystemSpec) -> Result<Vec<f64>> {
    sector.check_matches(spec)?;
    let d = sector.matrix_dim()?;
    let free = spec.free_part();
    Ok((0..d)
        .map(|n| free.eval(&sector.actions_at(n)) + spec.h_const())
        .collect())
}

/// Conjugate `op` by the evolution the tridiagonal Hamiltonian `h`
/// generates: `op(t) = exp(-iHt/hbar) op exp(iHt/hbar)`. In the eigenbasis
/// this is a pointwise phase twist, so one eigendecomposition serves every
/// `t`.
pub fn evolve_with(
    h: &TridiagonalOperator,
    hbar: f64,
    op: &Array2<Complex64>,
    t: f64,
) -> Result<Array2<Complex64>> {
    let d = h.dim();
    if op.nrows() != d || op.ncols() != d {
        return Err(KummerError::InvalidParameter(format!(
            "operator is {}x{}, Hamiltonian acts on dimension {}",
            op.nrows(),
            op.ncols(),
            d
        )));
    }
    let sp = h.spectrum()?;
    let v = complexify(&sp.eigenvectors.view());
    let mut w = v.t().dot(op).dot(&v);
    for j in 0..d {
        for k in 0..d {
            let phase =
                Complex64::from_polar(1.0, -(sp.eigenvalues[j] - sp.eigenvalues[k]) * t / hbar);
            w[[j, k]] *= phase;
        }
    }
    Ok(v.dot(&w).dot(&v.t()))
}

/// Heisenberg picture of `op` at time `t` under the reduced Hamiltonian of
/// the sector.
pub fn heisenberg_evolve(
    sector: &Sector,
    spec: &SystemSpec,
    op: &Array2<Complex64>,
    t: f64,
) -> Result<Array2<Complex64>> {
    let h = reduced_hamiltonian(sector, spec)?;
    evolve_with(&h, sector.hbar, op, t)
}

/// Interior operator norm at time `t` of the combination
/// `(2Y)^2 - 2 [G(A0) + G(A0 - hbar)] + (H - H0(A0))^2`, every ingredient
/// evolved to `t`. On the nose this vanishes identically; what survives is
/// eigensolver noise, so the value measures the quality of the whole
/// realization rather than a property of the dynamics.
pub fn nazero_residual(sector: &Sector, spec: &SystemSpec, t: f64) -> Result<f64> {
    let d = sector.matrix_dim()?;
    let ops = reduced_operators(sector)?;
    let h = reduced_hamiltonian(sector, spec)?;
    let hbar = sector.hbar;

    let y_t = evolve_with(&h, hbar, &ops.y, t)?;
    let g_t = evolve_with(&h, hbar, &diag_complex(&sector.structural_diag()?), t)?;
    let g_below_t = evolve_with(&h, hbar, &diag_complex(&sector.structural_diag_below()?), t)?;
    let h0_t = evolve_with(&h, hbar, &diag_complex(&free_diag(sector, spec)?), t)?;

    let two_x_t = h.to_complex() - h0_t;
    let residual = y_t.dot(&y_t).mapv(|z| z * 4.0) - (g_t + g_below_t).mapv(|z| z * 2.0)
        + two_x_t.dot(&two_x_t);

    let interior = if sector.truncation.is_some() { d - 1 } else { d };
    Ok(operator_norm(&residual.slice(s![..interior, ..interior])))
}

/// Parameters of the exponentially deformed ladder: deformation base `q`
/// in (0, 1) and scale `alpha > 0`.
#[derive(Debug, Clone, Copy)]
pub struct QDeformedSpec {
    q: f64,
    alpha: f64,
}

impl QDeformedSpec {
    pub fn new(q: f64, alpha: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(KummerError::InvalidParameter(format!(
                "deformation base must lie in (0, 1), got {}",
                q
            )));
        }
        if !(alpha > 0.0) {
            return Err(KummerError::InvalidParameter(format!(
                "deformation scale must be positive, got {}",
                alpha
            )));
        }
        Ok(QDeformedSpec { q, alpha })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Shift factor `q^{hbar/alpha}` appearing in the exchange relations.
    pub fn shift(&self, hbar: f64) -> f64 {
        (hbar / self.alpha * self.q.ln()).exp()
    }

    /// Supremum of `|A|^2` over all wall sizes: `hbar / (1 - q^{hbar/alpha})`.
    pub fn norm_bound(&self, hbar: f64) -> f64 {
        hbar / -f64::exp_m1(hbar / self.alpha * self.q.ln())
    }
}

/// Walled realization of the deformed ladder. The structural values are
/// the deformed integers `g_seq[n] = hbar (1 - q^{(n+1) hbar/alpha}) /
/// (1 - q^{hbar/alpha})`, and `q_op` is the diagonal `q^{(A0 - c0)/alpha}`.
#[derive(Debug, Clone)]
pub struct QDeformedOperators {
    pub a: Array2<f64>,
    pub a_star: Array2<f64>,
    pub q_op: Array2<f64>,
    pub a0_diag: Vec<f64>,
    pub g_seq: Vec<f64>,
    pub hbar: f64,
    pub spec: QDeformedSpec,
}

pub fn q_operators(
    qspec: &QDeformedSpec,
    hbar: f64,
    truncation: usize,
) -> Result<QDeformedOperators> {
    if !(hbar > 0.0) {
        return Err(KummerError::InvalidParameter(format!(
            "hbar must be positive, got {}",
            hbar
        )));
    }
    if truncation < 2 {
        return Err(KummerError::InvalidParameter(format!(
            "truncation must be at least 2, got {}",
            truncation
        )));
    }
    let m = truncation;
    let beta_lnq = hbar / qspec.alpha * qspec.q.ln();
    // Ratio of expm1 values stays accurate arbitrarily close to q = 1,
    // where both numerator and denominator vanish linearly.
    let denom = f64::exp_m1(beta_lnq);
    let g_seq: Vec<f64> = (0..m)
        .map(|n| hbar * f64::exp_m1((n + 1) as f64 * beta_lnq) / denom)
        .collect();

    let mut a = Array2::zeros((m, m));
    for n in 0..m - 1 {
        a[[n, n + 1]] = g_seq[n].sqrt();
    }
    let a_star = a.t().to_owned();
    let mut q_op = Array2::zeros((m, m));
    for n in 0..m {
        q_op[[n, n]] = (n as f64 * beta_lnq).exp();
    }
    let a0_diag: Vec<f64> = (0..m).map(|n| hbar * n as f64).collect();

    Ok(QDeformedOperators {
        a,
        a_star,
        q_op,
        a0_diag,
        g_seq,
        hbar,
        spec: *qspec,
    })
}

/// Residuals of the deformed exchange relations, interior operator norms
/// against `tol * max(1, |A|^2)`.
#[derive(Debug, Clone)]
pub struct QRelationReport {
    /// `|A Q - q^{hbar/alpha} Q A|`
    pub shift_lower: f64,
    /// `|Q A* - q^{hbar/alpha} A* Q|`
    pub shift_raise: f64,
    /// `|A A* - q^{hbar/alpha} A* A - hbar|`
    pub deformed_commutator: f64,
    /// How far `|A|^2` pokes above its closed-form supremum; zero when the
    /// bound holds.
    pub norm_bound_excess: f64,
    pub scale: f64,
    pub tol: f64,
    pub passed: bool,
}

impl QRelationReport {
    pub fn worst(&self) -> f64 {
        self.shift_lower
            .max(self.shift_raise)
            .max(self.deformed_commutator)
            .max(self.norm_bound_excess)
    }
}

pub fn verify_q_relations(ops: &QDeformedOperators, tol: f64) -> QRelationReport {
    let m = ops.a0_diag.len();
    let shift = ops.spec.shift(ops.hbar);

    let r1 = ops.a.dot(&ops.q_op) - &(ops.q_op.dot(&ops.a) * shift);
    let r2 = ops.q_op.dot(&ops.a_star) - &(ops.a_star.dot(&ops.q_op) * shift);
    let mut r3 = ops.a.dot(&ops.a_star) - &(ops.a_star.dot(&ops.a) * shift);
    for n in 0..m {
        r3[[n, n]] -= ops.hbar;
    }

    let interior = m - 1;
    let block_norm = |mat: &Array2<f64>| operator_norm_real(&mat.slice(s![..interior, ..interior]));

    let norm_a_sq = ops.g_seq[..m - 1].iter().fold(0.0f64, |acc, &g| acc.max(g));
    let scale = norm_a_sq.max(1.0);
    let excess = (norm_a_sq - ops.spec.norm_bound(ops.hbar)).max(0.0);

    let report = QRelationReport {
        shift_lower: block_norm(&r1),
        shift_raise: block_norm(&r2),
        deformed_commutator: block_norm(&r3),
        norm_bound_excess: excess,
        scale,
        tol,
        passed: false,
    };
    let passed = report.worst() <= tol * scale;
    QRelationReport { passed, ..report }
}

pub fn complexify(m: &ArrayView2<f64>) -> Array2<Complex64> {
    m.mapv(|v| Complex64::new(v, 0.0))
}

pub fn diag_complex(d: &[f64]) -> Array2<Complex64> {
    let n = d.len();
    let mut m = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    for (i, &v) in d.iter().enumerate() {
        m[[i, i]] = Complex64::new(v, 0.0);
    }
    m
}

/// Operator 2-norm by power iteration on `M* M`. The iterate is
/// deterministic, so repeated calls agree bitwise.
pub fn operator_norm(m: &ArrayView2<Complex64>) -> f64 {
    let d = m.ncols();
    if d == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mh = m.t().mapv(|z| z.conj());
    let mut v: Array1<Complex64> = (0..d)
        .map(|i| Complex64::new(1.0 + 0.3 * ((i as f64) * 2.7).sin(), 0.0))
        .collect();
    let mut lambda = 0.0f64;
    for _ in 0..120 {
        let w = mh.dot(&m.dot(&v));
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return if norm == 0.0 { 0.0 } else { f64::INFINITY };
        }
        lambda = norm;
        v = w / Complex64::new(norm, 0.0);
    }
    lambda.sqrt()
}

pub fn operator_norm_real(m: &ArrayView2<f64>) -> f64 {
    operator_norm(&complexify(m).view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Coupling;
    use crate::expr::Expr;
    use crate::special;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn laguerre_like(hbar: f64) -> SystemSpec {
        let rho = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, -0.5, 0.5]).unwrap();
        SystemSpec::new(
            vec![1, 1],
            Some(rho),
            Coupling::Constant(1.0),
            Expr::add(Expr::arg(0), Expr::arg(1)),
            hbar,
        )
        .unwrap()
        .with_h_const(hbar)
    }

    fn krawtchouk_like(p: f64, hbar: f64) -> SystemSpec {
        let rho = Array2::from_shape_vec((2, 2), vec![0.5, -0.5, 0.5, 0.5]).unwrap();
        SystemSpec::new(
            vec![1, -1],
            Some(rho),
            Coupling::Constant((p * (1.0 - p)).sqrt()),
            Expr::add(
                Expr::mul(Expr::constant(1.0 - p), Expr::arg(0)),
                Expr::mul(Expr::constant(p), Expr::arg(1)),
            ),
            hbar,
        )
        .unwrap()
    }

    /// Single mode with `g_0^2 = kappa^2 / (x + hbar)`, which makes the
    /// structural sequence constant and the Hamiltonian a free Toeplitz
    /// band.
    fn toeplitz_like(kappa: f64, hbar: f64) -> SystemSpec {
        let g2 = Expr::div(
            Expr::constant(kappa * kappa),
            Expr::add(Expr::arg(0), Expr::constant(hbar)),
        );
        SystemSpec::new(
            vec![1],
            None,
            Coupling::Expression(Expr::sqrt(g2)),
            Expr::constant(0.0),
            hbar,
        )
        .unwrap()
    }

    fn frob(m: &Array2<f64>) -> f64 {
        m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn frob_c(m: &Array2<Complex64>) -> f64 {
        m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn tridiagonal_operator_validation() {
        assert!(TridiagonalOperator::new("t", vec![], vec![]).is_err());
        assert!(TridiagonalOperator::new("t", vec![1.0, 2.0], vec![]).is_err());
        assert!(TridiagonalOperator::new("t", vec![1.0], vec![0.5]).is_err());
        assert!(TridiagonalOperator::new("t", vec![1.0, f64::NAN], vec![0.5]).is_err());
        let op = TridiagonalOperator::diagonal("d", vec![3.0, 4.0]).unwrap();
        assert_eq!(op.dim(), 2);
        assert_eq!(op.label(), "d");
        assert_eq!(op.off(), &[0.0]);
    }

    #[test]
    fn spectrum_is_cached_and_serialized() {
        let op = TridiagonalOperator::new("h", vec![1.0, 1.0], vec![0.25]).unwrap();
        let s1 = op.spectrum().unwrap();
        let s2 = op.spectrum().unwrap();
        assert!(Arc::ptr_eq(&s1, &s2));
        assert_relative_eq!(s1.eigenvalues[0], 0.75, epsilon = 1e-14);
        assert_relative_eq!(s1.eigenvalues[1], 1.25, epsilon = 1e-14);

        let dump = op.to_json().unwrap();
        assert_eq!(dump["label"], "h");
        assert_eq!(dump["dim"], 2);
        assert_eq!(dump["off"][0], 0.25);
        assert!((dump["eigenvalues"][0].as_f64().unwrap() - 0.75).abs() < 1e-14);
    }

    #[test]
    fn laguerre_sector_has_product_sequence() {
        let hbar = 0.1;
        let spec = laguerre_like(hbar);
        let v1 = 3i64;
        let sector = build_sector(&spec, &[0, v1], Some(8)).unwrap();
        assert!(!sector.is_finite());
        assert_eq!(sector.matrix_dim().unwrap(), 8);
        // c_0 = c_1 = hbar v_1 / 2 for this resonance matrix.
        assert_relative_eq!(sector.c0(), hbar * v1 as f64 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(
            sector.constants()[0],
            hbar * v1 as f64 / 2.0,
            epsilon = 1e-15
        );
        for (n, &g) in sector.g_seq().unwrap().iter().enumerate() {
            let expected = hbar * hbar * (n as f64 + 1.0) * (v1 as f64 + n as f64 + 1.0);
            assert_relative_eq!(g, expected, epsilon = 1e-14);
        }
        assert_relative_eq!(
            sector.wall_defect().unwrap(),
            hbar * hbar * 8.0 * (v1 as f64 + 8.0),
            epsilon = 1e-13
        );
    }

    #[test]
    fn krawtchouk_sector_terminates() {
        let hbar = 0.05;
        let p = 0.3;
        let spec = krawtchouk_like(p, hbar);
        let v1 = 4i64;
        let sector = build_sector(&spec, &[0, v1], None).unwrap();
        assert_eq!(sector.finite_dim(), Some(5));
        assert_eq!(sector.truncation(), None);
        assert_eq!(sector.wall_defect(), None);
        assert_relative_eq!(sector.c0(), -hbar * v1 as f64 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(sector.constants()[0], hbar * v1 as f64 / 2.0, epsilon = 1e-15);
        let g = sector.g_seq().unwrap();
        assert_eq!(g.len(), 4);
        for (n, &gn) in g.iter().enumerate() {
            let expected =
                hbar * hbar * p * (1.0 - p) * (n as f64 + 1.0) * (v1 as f64 - n as f64);
            assert_relative_eq!(gn, expected, epsilon = 1e-14);
        }
        // The explicit truncation is ignored once the ladder terminates.
        let walled = build_sector(&spec, &[0, v1], Some(64)).unwrap();
        assert_eq!(walled.finite_dim(), Some(5));
        assert_eq!(walled.truncation(), None);
    }

    #[test]
    fn vacuum_violations_are_rejected() {
        let spec = laguerre_like(0.1);
        let err = build_sector(&spec, &[1, 1], Some(4)).unwrap_err();
        assert!(err.to_string().starts_with("not a vacuum"));
        assert!(build_sector(&spec, &[-1, 2], Some(4)).is_err());
        assert!(build_sector(&spec, &[0], Some(4)).is_err());
        assert!(build_sector(&spec, &[0, 2], Some(1)).is_err());
    }

    #[test]
    fn nonterminating_ladder_demands_a_wall() {
        let spec = laguerre_like(0.1);
        let sector = build_sector(&spec, &[0, 2], None).unwrap();
        assert_eq!(sector.constants().len(), 1);
        let err = sector.matrix_dim().unwrap_err();
        assert!(err.to_string().starts_with("truncate first"));
        assert!(sector.g_seq().is_err());
        assert!(reduced_operators(&sector).is_err());
        let op = diag_complex(&[1.0, 2.0]);
        assert!(heisenberg_evolve(&sector, &spec, &op, 0.5).is_err());
    }

    #[test]
    fn two_state_operators_match_hand_matrices() {
        let spec = krawtchouk_like(0.5, 1.0);
        let sector = build_sector(&spec, &[0, 1], None).unwrap();
        let ops = reduced_operators(&sector).unwrap();

        // g_seq = [1/4], so A has the single entry 1/2 and X = (A + A*)/2
        // is the half-swap matrix.
        assert_relative_eq!(ops.a[[0, 1]], 0.5, epsilon = 1e-15);
        assert_relative_eq!(ops.a[[1, 0]], 0.0, epsilon = 1e-15);
        let x = ops.x.to_dense();
        assert_relative_eq!(x[[0, 1]], 0.25, epsilon = 1e-15);
        assert_relative_eq!(x[[1, 0]], 0.25, epsilon = 1e-15);
        assert_relative_eq!(ops.y[[0, 1]].im, -0.25, epsilon = 1e-15);
        assert_relative_eq!(ops.y[[1, 0]].im, 0.25, epsilon = 1e-15);
        assert_relative_eq!(ops.a0.diag()[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(ops.a0.diag()[1], 0.5, epsilon = 1e-15);

        // Spectrum of H = (1 - 2p) A0 + c1 + A + A* at p = 1/2: c1 +- 1/2.
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let sp = h.spectrum().unwrap();
        assert_relative_eq!(sp.eigenvalues[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(sp.eigenvalues[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn laguerre_a0_counts_from_half_total() {
        let hbar = 0.1;
        let spec = laguerre_like(hbar);
        let sector = build_sector(&spec, &[0, 5], Some(6)).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        for (n, &d) in ops.a0.diag().iter().enumerate() {
            assert_relative_eq!(d, hbar * (2.5 + n as f64), epsilon = 1e-14);
        }
    }

    #[test]
    fn single_state_sector_is_trivial() {
        let spec = krawtchouk_like(0.4, 0.5);
        let sector = build_sector(&spec, &[0, 0], None).unwrap();
        assert_eq!(sector.matrix_dim().unwrap(), 1);
        let ops = reduced_operators(&sector).unwrap();
        assert_eq!(frob(&ops.a), 0.0);
        assert_eq!(frob(&ops.a_star), 0.0);
        let report = verify_relations(&sector, 1e-12).unwrap();
        assert!(report.passed);
        assert_eq!(report.worst(), 0.0);
        assert!(nazero_residual(&sector, &spec, 0.7).unwrap() < 1e-15);
    }

    #[test]
    fn relations_hold_on_walled_ladder() {
        let spec = laguerre_like(0.1);
        let sector = build_sector(&spec, &[0, 2], Some(60)).unwrap();
        let report = verify_relations(&sector, 1e-12).unwrap();
        assert!(report.passed, "worst residual {:.3e}", report.worst());

        // The wall zeroes the top corner of A A* even though the true
        // structural value there is positive; that is the defect the
        // interior block exists to exclude.
        let ops = reduced_operators(&sector).unwrap();
        let full = ops.a.dot(&ops.a_star);
        assert_eq!(full[[59, 59]], 0.0);
        assert!(sector.wall_defect().unwrap() > 0.0);
    }

    #[test]
    fn ladder_commutator_closes_affinely() {
        // [A, A*] = hbar (2 A0 + hbar) on the interior of the product
        // ladder, and -2 p (1 - p) hbar A0 exactly everywhere on the
        // terminating one.
        let hbar = 0.1;
        let spec = laguerre_like(hbar);
        let sector = build_sector(&spec, &[0, 2], Some(40)).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        let mut comm = ops.a.dot(&ops.a_star) - ops.a_star.dot(&ops.a);
        for (n, &a0) in ops.a0.diag().iter().enumerate() {
            comm[[n, n]] -= hbar * (2.0 * a0 + hbar);
        }
        let interior = comm.slice(s![..39, ..39]).to_owned();
        assert!(frob(&interior) < 1e-12);

        let hbar = 0.05;
        let p = 0.3;
        let spec = krawtchouk_like(p, hbar);
        let sector = build_sector(&spec, &[0, 6], None).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        let mut comm = ops.a.dot(&ops.a_star) - ops.a_star.dot(&ops.a);
        for (n, &a0) in ops.a0.diag().iter().enumerate() {
            comm[[n, n]] += 2.0 * p * (1.0 - p) * hbar * a0;
        }
        assert!(frob(&comm) < 1e-14);
    }

    #[test]
    fn trace_of_ladder_commutator_vanishes() {
        let spec = krawtchouk_like(0.4, 0.05);
        let sector = build_sector(&spec, &[0, 7], None).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        let comm = ops.a.dot(&ops.a_star) - ops.a_star.dot(&ops.a);
        let trace: f64 = (0..8).map(|n| comm[[n, n]]).sum();
        let scale: f64 = sector.g_seq().unwrap().iter().sum();
        assert!(trace.abs() <= 1e-13 * scale);
    }

    #[test]
    fn laguerre_hamiltonian_is_the_classical_jacobi_matrix() {
        let hbar = 0.1;
        let v1 = 2i64;
        let spec = laguerre_like(hbar);
        let sector = build_sector(&spec, &[0, v1], Some(40)).unwrap();
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        for (n, &d) in h.diag().iter().enumerate() {
            assert_relative_eq!(
                d,
                hbar * (v1 as f64 + 2.0 * n as f64 + 1.0),
                epsilon = 1e-13
            );
        }
        for (n, &b) in h.off().iter().enumerate() {
            let expected = hbar * ((n as f64 + 1.0) * (v1 as f64 + n as f64 + 1.0)).sqrt();
            assert_relative_eq!(b, expected, epsilon = 1e-13);
        }

        // Same matrix scaled by 1/hbar underlies the Gauss quadrature rule
        // for the weight x^2 e^{-x}, so the spectrum must be the node set.
        let sp = h.spectrum().unwrap();
        let rule = special::gauss_laguerre(40, v1 as f64).unwrap();
        let norm = h.norm().unwrap();
        for (lam, node) in sp.eigenvalues.iter().zip(&rule.nodes) {
            assert!((lam / hbar - node).abs() < 1e-10 * (norm / hbar).max(1.0));
        }
    }

    #[test]
    fn terminating_hamiltonian_spectrum_is_an_integer_grid() {
        // For any mixing parameter the terminating Hamiltonian is the
        // Jacobi matrix of a discrete binomial weight; its eigenvalues are
        // the grid hbar {0, .., v1} exactly.
        let hbar = 0.05;
        let v1 = 9usize;
        for &p in &[0.3, 0.5, 0.77] {
            let spec = krawtchouk_like(p, hbar);
            let sector = build_sector(&spec, &[0, v1 as i64], None).unwrap();
            let h = reduced_hamiltonian(&sector, &spec).unwrap();
            let sp = h.spectrum().unwrap();
            let norm = h.norm().unwrap();
            for (k, lam) in sp.eigenvalues.iter().enumerate() {
                assert!(
                    (lam - hbar * k as f64).abs() < 1e-10 * norm.max(1.0),
                    "p = {}: eigenvalue {} is {:.3e}, expected {:.3e}",
                    p,
                    k,
                    lam,
                    hbar * k as f64
                );
            }
        }
    }

    #[test]
    fn constant_sequence_gives_toeplitz_spectrum() {
        let kappa = 0.7;
        let hbar = 0.3;
        let d = 12usize;
        let spec = toeplitz_like(kappa, hbar);
        let sector = build_sector(&spec, &[0], Some(d)).unwrap();
        for &g in sector.g_seq().unwrap() {
            assert_relative_eq!(g, kappa * kappa, epsilon = 1e-14);
        }
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let sp = h.spectrum().unwrap();
        let mut expected: Vec<f64> = (1..=d)
            .map(|k| 2.0 * kappa * (k as f64 * std::f64::consts::PI / (d as f64 + 1.0)).cos())
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (lam, want) in sp.eigenvalues.iter().zip(&expected) {
            assert_relative_eq!(lam, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectrum_meets_residual_and_orthonormality_bounds() {
        let spec = laguerre_like(0.1);
        let sector = build_sector(&spec, &[0, 2], Some(60)).unwrap();
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let sp = h.spectrum().unwrap();
        let dense = h.to_dense();
        let norm = h.norm().unwrap();
        for (j, &lam) in sp.eigenvalues.iter().enumerate() {
            let v = sp.eigenvectors.column(j);
            let hv = dense.dot(&v);
            let resid: f64 = hv
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - lam * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-10 * norm, "eigenpair {} residual {:.3e}", j, resid);
        }
        let gram = sp.eigenvectors.t().dot(&sp.eigenvectors);
        let mut defect = gram;
        for i in 0..60 {
            defect[[i, i]] -= 1.0;
        }
        assert!(frob(&defect) < 1e-10);
    }

    #[test]
    fn evolution_is_trivial_at_zero_and_preserves_h() {
        let spec = krawtchouk_like(0.3, 1.0);
        let sector = build_sector(&spec, &[0, 10], None).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        let a0c = ops.a0.to_complex();

        let back = heisenberg_evolve(&sector, &spec, &a0c, 0.0).unwrap();
        assert!(frob_c(&(&back - &a0c)) < 1e-12);

        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let hc = h.to_complex();
        let ht = heisenberg_evolve(&sector, &spec, &hc, 0.7).unwrap();
        assert!(frob_c(&(&ht - &hc)) < 1e-11 * h.norm().unwrap().max(1.0));
    }

    #[test]
    fn evolution_preserves_moments_of_a0() {
        // Conjugation by a unitary cannot move the spectrum, so the first
        // few power traces of A0(t) must match those of A0.
        let spec = krawtchouk_like(0.3, 1.0);
        let sector = build_sector(&spec, &[0, 10], None).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        let a0c = ops.a0.to_complex();
        let a0t = heisenberg_evolve(&sector, &spec, &a0c, 1.3).unwrap();

        let mut p_static = a0c.clone();
        let mut p_moving = a0t.clone();
        for k in 1..=3 {
            let tr_static: Complex64 = (0..11).map(|i| p_static[[i, i]]).sum();
            let tr_moving: Complex64 = (0..11).map(|i| p_moving[[i, i]]).sum();
            let scale = (0..11)
                .map(|n| sector.a0_value(n).abs().powi(k as i32))
                .sum::<f64>()
                .max(1.0);
            assert!(
                (tr_static - tr_moving).norm() < 1e-10 * scale,
                "power {} trace drifted",
                k
            );
            p_static = p_static.dot(&a0c);
            p_moving = p_moving.dot(&a0t);
        }
    }

    #[test]
    fn heisenberg_derivatives_match_commutators() {
        let hbar = 1.0;
        let p = 0.3;
        let spec = krawtchouk_like(p, hbar);
        let sector = build_sector(&spec, &[0, 10], None).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let hc = h.to_complex();
        let t = 0.5;
        let scale = h.norm().unwrap().max(1.0);

        let commutator_rate = |op_t: &Array2<Complex64>| -> Array2<Complex64> {
            (hc.dot(op_t) - op_t.dot(&hc)).mapv(|z| z * Complex64::new(0.0, -1.0 / hbar))
        };
        let fd_rate = |op: &Array2<Complex64>, dt: f64| -> Array2<Complex64> {
            let plus = heisenberg_evolve(&sector, &spec, op, t + dt).unwrap();
            let minus = heisenberg_evolve(&sector, &spec, op, t - dt).unwrap();
            (plus - minus).mapv(|z| z / (2.0 * dt))
        };

        let a0c = ops.a0.to_complex();
        let a0t = heisenberg_evolve(&sector, &spec, &a0c, t).unwrap();
        let y_t = heisenberg_evolve(&sector, &spec, &ops.y, t).unwrap();

        // dA0/dt = 2Y both exactly through the commutator and numerically.
        assert!(frob_c(&(commutator_rate(&a0t) - y_t.mapv(|z| z * 2.0))) < 1e-10 * scale);
        assert!(frob_c(&(fd_rate(&a0c, 1e-5) - y_t.mapv(|z| z * 2.0))) < 1e-6 * scale);

        // X(t) recovers the interaction half of H.
        let x_t = heisenberg_evolve(&sector, &spec, &ops.x.to_complex(), t).unwrap();
        let h0_t =
            heisenberg_evolve(&sector, &spec, &diag_complex(&free_diag(&sector, &spec).unwrap()), t)
                .unwrap();
        let defect = &hc - &h0_t - x_t.mapv(|z| z * 2.0);
        assert!(frob_c(&defect) < 1e-8 * scale);

        // Finite difference against the commutator rate for X as well.
        let xc = ops.x.to_complex();
        assert!(frob_c(&(fd_rate(&xc, 1e-5) - commutator_rate(&x_t))) < 1e-6 * scale);
    }

    #[test]
    fn terminating_ladder_obeys_linear_second_order_law() {
        // d^2 A0/dt^2 = 2 (1 - 2p) X(t) - 4 p (1 - p) A0(t): the occupation
        // midpoint swings like a linear oscillator whatever the state.
        let hbar = 1.0;
        let p = 0.3;
        let spec = krawtchouk_like(p, hbar);
        let sector = build_sector(&spec, &[0, 10], None).unwrap();
        let ops = reduced_operators(&sector).unwrap();
        let a0c = ops.a0.to_complex();
        let t = 0.8;
        let dt = 1e-4;

        let plus = heisenberg_evolve(&sector, &spec, &a0c, t + dt).unwrap();
        let mid = heisenberg_evolve(&sector, &spec, &a0c, t).unwrap();
        let minus = heisenberg_evolve(&sector, &spec, &a0c, t - dt).unwrap();
        let second = (plus + minus - mid.mapv(|z| z * 2.0)).mapv(|z| z / (dt * dt));

        let x_t = heisenberg_evolve(&sector, &spec, &ops.x.to_complex(), t).unwrap();
        let rhs = x_t.mapv(|z| z * (2.0 * (1.0 - 2.0 * p)))
            - mid.mapv(|z| z * (4.0 * p * (1.0 - p)));
        let scale = frob_c(&rhs).max(1.0);
        assert!(frob_c(&(second - rhs)) < 1e-5 * scale);
    }

    #[test]
    fn shape_identity_residual_is_tiny_on_the_wall_interior() {
        let spec = laguerre_like(0.1);
        let sector = build_sector(&spec, &[0, 2], Some(50)).unwrap();
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let hsq = h.norm().unwrap().powi(2);
        let r = nazero_residual(&sector, &spec, 0.3).unwrap();
        assert!(r < 1e-6 * hsq, "residual {:.3e} vs scale {:.3e}", r, hsq);
    }

    #[test]
    fn shape_identity_residual_is_time_independent_when_terminating() {
        let spec = krawtchouk_like(0.35, 0.05);
        let sector = build_sector(&spec, &[0, 8], None).unwrap();
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let hsq = h.norm().unwrap().powi(2);
        let values: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&t| nazero_residual(&sector, &spec, t).unwrap())
            .collect();
        for &v in &values {
            assert!(v < 1e-8 * hsq, "residual {:.3e}", v);
        }
        assert!((values[0] - values[1]).abs() < 1e-8 * hsq);
        assert!((values[1] - values[2]).abs() < 1e-8 * hsq);
    }

    #[test]
    fn deformed_ladder_satisfies_exchange_relations() {
        let qspec = QDeformedSpec::new(0.5, 1.0).unwrap();
        let hbar = 1.0;
        let ops = q_operators(&qspec, hbar, 30).unwrap();

        // Deformed integers: 1, 1.5, 1.75, ...
        assert_relative_eq!(ops.g_seq[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(ops.g_seq[1], 1.5, epsilon = 1e-15);
        assert_relative_eq!(ops.g_seq[2], 1.75, epsilon = 1e-15);
        for (n, &q) in ops.q_op.diag().iter().enumerate() {
            assert_relative_eq!(q, 0.5f64.powi(n as i32), epsilon = 1e-13);
        }

        let report = verify_q_relations(&ops, 1e-12);
        assert!(report.passed, "worst residual {:.3e}", report.worst());
        assert_eq!(report.norm_bound_excess, 0.0);
        // The supremum hbar / (1 - q) = 2 is approached but never attained.
        let max_g = ops.g_seq[..29].iter().cloned().fold(0.0f64, f64::max);
        assert!(max_g < qspec.norm_bound(hbar));
    }

    #[test]
    fn deformed_ladder_recovers_the_product_sequence_near_one() {
        let hbar = 1.0;
        let qspec = QDeformedSpec::new(1.0 - 1e-8, 1.0).unwrap();
        let ops = q_operators(&qspec, hbar, 40).unwrap();
        for (n, &g) in ops.g_seq.iter().enumerate() {
            let undeformed = hbar * (n as f64 + 1.0);
            assert!(
                (g - undeformed).abs() < 1e-5 * undeformed,
                "deformed integer {} is {:.10}",
                n + 1,
                g
            );
        }
    }

    #[test]
    fn deformed_parameters_are_validated() {
        assert!(QDeformedSpec::new(0.0, 1.0).is_err());
        assert!(QDeformedSpec::new(1.0, 1.0).is_err());
        assert!(QDeformedSpec::new(1.2, 1.0).is_err());
        assert!(QDeformedSpec::new(0.5, 0.0).is_err());
        let qspec = QDeformedSpec::new(0.5, 1.0).unwrap();
        assert!(q_operators(&qspec, 1.0, 1).is_err());
        assert!(q_operators(&qspec, 0.0, 10).is_err());
    }

    #[test]
    fn recurrence_identifies_low_eigenvectors_under_the_wall() {
        // Identification stability: a low eigenpair of the walled ladder is
        // determined by its eigenvalue through the three-term recurrence,
        // so the recurrence residual must sit at solver accuracy row by
        // row, not just in aggregate.
        let spec = laguerre_like(1.0);
        let sector = build_sector(&spec, &[0, 2], Some(200)).unwrap();
        let h = reduced_hamiltonian(&sector, &spec).unwrap();
        let sp = h.spectrum().unwrap();
        let norm = h.norm().unwrap();
        for j in 0..20 {
            let lam = sp.eigenvalues[j];
            let v = sp.eigenvectors.column(j);
            for n in 0..40 {
                let mut r = (h.diag()[n] - lam) * v[n];
                if n > 0 {
                    r += h.off()[n - 1] * v[n - 1];
                }
                r += h.off()[n] * v[n + 1];
                assert!(
                    r.abs() < 1e-8 * norm,
                    "level {} row {} residual {:.3e}",
                    j,
                    n,
                    r
                );
            }
        }
    }

    #[test]
    fn operator_norm_matches_known_values() {
        let m = Array2::from_shape_vec((2, 2), vec![3.0, 0.0, 0.0, -4.0]).unwrap();
        assert_relative_eq!(operator_norm_real(&m.view()), 4.0, epsilon = 1e-10);
        let z = Array2::from_elem((3, 3), Complex64::new(0.0, 0.0));
        assert_eq!(operator_norm(&z.view()), 0.0);
        // Rank-one ones matrix has norm equal to its dimension.
        let ones = Array2::from_elem((5, 5), 1.0);
        assert_relative_eq!(operator_norm_real(&ones.view()), 5.0, epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn terminating_sectors_always_satisfy_relations(
            v1 in 1i64..12,
            p in 0.05f64..0.95,
        ) {
            let spec = krawtchouk_like(p, 0.05);
            let sector = build_sector(&spec, &[0, v1], None).unwrap();
            let report = verify_relations(&sector, 1e-12).unwrap();
            prop_assert!(report.passed, "worst residual {:.3e}", report.worst());
        }
    }
}
