//! System description: resonance data, couplings, and structural functions.
//!
//! A system is specified by an integer exponent vector `l` of length `N+1`,
//! a resonance matrix `rho` whose first row pairs to one against `l` and
//! whose remaining rows pair to zero, a positive coupling `g_0`, a free part
//! `h_0`, and a scale `hbar`. Everything downstream (classical reduction,
//! sector operators, coherent kernels) is derived from this data, so the
//! constructors here validate eagerly and the types are immutable afterwards.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{KummerError, Result};
use crate::expr::Expr;

/// Integer exponents `(l_0, .., l_N)` of the interaction monomial.
///
/// Components may vanish (the corresponding mode enters only through `g_0`
/// and `h_0`), but the vector itself must be nonzero and at least one
/// component must be nonnegative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct ExponentVector {
    l: Vec<i64>,
}

impl ExponentVector {
    pub fn new(l: Vec<i64>) -> Result<Self> {
        if l.is_empty() {
            return Err(KummerError::InvalidSpec("exponent vector is empty".into()));
        }
        if l.iter().all(|&v| v == 0) {
            return Err(KummerError::InvalidSpec(
                "exponent vector must be nonzero".into(),
            ));
        }
        if l.iter().all(|&v| v < 0) {
            return Err(KummerError::InvalidSpec(
                "all exponents negative; negate the interaction term instead".into(),
            ));
        }
        if l.iter().any(|&v| v.abs() > 64) {
            return Err(KummerError::InvalidSpec(format!(
                "exponent magnitude above 64 is not supported, got {:?}",
                l
            )));
        }
        Ok(ExponentVector { l })
    }

    /// Number of modes, `N+1`.
    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.l
    }

    /// Indices with `l_i > 0`.
    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.l.len()).filter(|&i| self.l[i] > 0).collect()
    }

    /// Indices with `l_i < 0`. Empty exactly when the sector ladder is
    /// infinite.
    pub fn negative_indices(&self) -> Vec<usize> {
        (0..self.l.len()).filter(|&i| self.l[i] < 0).collect()
    }

    /// `sum_i |l_i|`, the covering degree of the shape map.
    pub fn total_degree(&self) -> i64 {
        self.l.iter().map(|&v| v.abs()).sum()
    }
}

impl std::ops::Index<usize> for ExponentVector {
    type Output = i64;
    fn index(&self, i: usize) -> &i64 {
        &self.l[i]
    }
}

impl TryFrom<Vec<i64>> for ExponentVector {
    type Error = KummerError;
    fn try_from(l: Vec<i64>) -> Result<Self> {
        ExponentVector::new(l)
    }
}

impl From<ExponentVector> for Vec<i64> {
    fn from(e: ExponentVector) -> Vec<i64> {
        e.l
    }
}

/// Invertible change of basis between oscillator actions and the sector
/// coordinates `(I_0, .., I_N)`. `rho` maps actions to sector coordinates,
/// `kappa = rho^{-1}` maps back; the first column of `kappa` always equals
/// `l` because of the resonance condition on `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceMatrix {
    rho: Array2<f64>,
    kappa: Array2<f64>,
}

/// Row-pairing tolerance for the resonance condition and for `kappa * rho == 1`.
const RESONANCE_TOL: f64 = 1e-12;
/// Determinant magnitude below which `rho` is treated as singular.
const DET_TOL: f64 = 1e-10;

impl ResonanceMatrix {
    /// Validate `rho` against `l` and compute its inverse.
    pub fn new(rho: Array2<f64>, l: &ExponentVector) -> Result<Self> {
        let n = l.len();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(KummerError::InvalidSpec(format!(
                "resonance matrix must be {}x{}, got {}x{}",
                n,
                n,
                rho.nrows(),
                rho.ncols()
            )));
        }
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(KummerError::InvalidSpec(
                "resonance matrix has non-finite entries".into(),
            ));
        }
        for i in 0..n {
            let pair: f64 = (0..n).map(|j| rho[[i, j]] * l[j] as f64).sum();
            let want = if i == 0 { 1.0 } else { 0.0 };
            if (pair - want).abs() > RESONANCE_TOL {
                return Err(KummerError::InvalidSpec(format!(
                    "resonance condition violated in row {}: rho_i . l = {:.3e}, want {}",
                    i, pair, want
                )));
            }
        }
        let (kappa, det) = invert_with_det(&rho).ok_or_else(|| {
            KummerError::InvalidSpec("resonance matrix is singular".into())
        })?;
        if det.abs() <= DET_TOL {
            return Err(KummerError::InvalidSpec(format!(
                "resonance matrix determinant too small: {:.3e}",
                det
            )));
        }
        // The inverse must actually invert at working precision, otherwise
        // the matrix is too ill-conditioned to trust downstream.
        let mut max_dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let prod: f64 = (0..n).map(|k| kappa[[i, k]] * rho[[k, j]]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((prod - want).abs());
            }
        }
        if max_dev > RESONANCE_TOL {
            return Err(KummerError::InvalidSpec(format!(
                "resonance matrix too ill-conditioned: |kappa rho - 1| = {:.3e}",
                max_dev
            )));
        }
        Ok(ResonanceMatrix { rho, kappa })
    }

    pub fn rho(&self) -> &Array2<f64> {
        &self.rho
    }

    pub fn kappa(&self) -> &Array2<f64> {
        &self.kappa
    }

    /// Dimension `N+1`.
    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }
}

/// Construct an admissible resonance matrix from `l` alone: the first row is
/// `l / (l.l)`, the remaining rows are an orthonormal basis of the
/// complement of `l` obtained by Gram-Schmidt over the standard basis. Any
/// completion of the first row is an equally valid gauge; this one is
/// deterministic and reproduces the identity matrix for `l = (1, 0, .., 0)`.
pub fn default_resonance_matrix(l: &ExponentVector) -> Result<ResonanceMatrix> {
    let n = l.len();
    let lf: Vec<f64> = l.as_slice().iter().map(|&v| v as f64).collect();
    let ll: f64 = lf.iter().map(|v| v * v).sum();
    let mut rows: Vec<Vec<f64>> = vec![lf.iter().map(|v| v / ll).collect()];
    let lhat: Vec<f64> = lf.iter().map(|v| v / ll.sqrt()).collect();
    let mut ortho: Vec<Vec<f64>> = vec![lhat];
    for k in 0..n {
        if rows.len() == n {
            break;
        }
        let mut cand = vec![0.0; n];
        cand[k] = 1.0;
        for prev in &ortho {
            let proj: f64 = cand.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (c, p) in cand.iter_mut().zip(prev) {
                *c -= proj * p;
            }
        }
        let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for c in &mut cand {
                *c /= norm;
            }
            ortho.push(cand.clone());
            rows.push(cand);
        }
    }
    if rows.len() != n {
        return Err(KummerError::InvalidSpec(
            "resonance construction failed: could not complete a basis".into(),
        ));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let rho = Array2::from_shape_vec((n, n), flat).expect("row count checked above");
    ResonanceMatrix::new(rho, l)
}

/// Gauss-Jordan inverse with partial pivoting; also returns the determinant.
/// Returns `None` when a pivot vanishes outright.
fn invert_with_det(a: &Array2<f64>) -> Option<(Array2<f64>, f64)> {
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| m[r][col].abs().total_cmp(&m[s][col].abs()))
            .unwrap();
        if m[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        if pivot_row != col {
            m.swap(pivot_row, col);
            inv.swap(pivot_row, col);
            det = -det;
        }
        let p = m[col][col];
        det *= p;
        for j in 0..n {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    let flat: Vec<f64> = inv.into_iter().flatten().collect();
    Some((Array2::from_shape_vec((n, n), flat).unwrap(), det))
}

/// The coupling `g_0`, a strictly positive function of the oscillator
/// actions. Most named systems use a constant; the q-deformed oscillator
/// uses a genuine expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    Constant(f64),
    Expression(Expr),
}

impl Coupling {
    pub fn eval(&self, actions: &[f64]) -> f64 {
        match self {
            Coupling::Constant(v) => *v,
            Coupling::Expression(e) => e.eval(actions),
        }
    }

    /// The coupling as an expression over the oscillator actions.
    pub fn expr(&self) -> Expr {
        match self {
            Coupling::Constant(v) => Expr::Const(*v),
            Coupling::Expression(e) => e.clone(),
        }
    }

    /// Positivity check: exact for constants, sampled on a grid in the open
    /// positive orthant for expressions. The boundary is excluded because
    /// admissible couplings may be defined there only as a limit.
    fn validate(&self, n_args: usize) -> Result<()> {
        match self {
            Coupling::Constant(v) => {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(KummerError::InvalidSpec(format!(
                        "coupling constant must be positive, got {}",
                        v
                    )));
                }
            }
            Coupling::Expression(e) => {
                if let Some(m) = e.max_arg() {
                    if m >= n_args {
                        return Err(KummerError::InvalidSpec(format!(
                            "coupling references argument {} but the system has {} modes",
                            m, n_args
                        )));
                    }
                }
                for point in sample_grid(n_args) {
                    let v = e.eval(&point);
                    if !v.is_finite() || v <= 0.0 {
                        return Err(KummerError::InvalidSpec(format!(
                            "coupling must be positive on the positive orthant; \
                             got {} at {:?}",
                            v, point
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Deterministic sample points in the open positive orthant. Full tensor
/// grid in low dimension, a fixed pseudo-random cloud above that.
fn sample_grid(n_args: usize) -> Vec<Vec<f64>> {
    const LEVELS: [f64; 4] = [1e-3, 0.3, 1.0, 3.0];
    let total = LEVELS.len().pow(n_args.min(8) as u32);
    if total <= 4096 {
        let mut points = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut p = Vec::with_capacity(n_args);
            for _ in 0..n_args {
                p.push(LEVELS[idx % LEVELS.len()]);
                idx /= LEVELS.len();
            }
            points.push(p);
        }
        points
    } else {
        // Simple LCG; reproducibility matters, statistical quality does not.
        let mut state: u64 = 0x9e3779b97f4a7c15;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 3.0 + 1e-3
        };
        (0..1024)
            .map(|_| (0..n_args).map(|_| next()).collect())
            .collect()
    }
}

/// Ladder polynomial appearing in the operator products of a sector.
///
/// For `li > 0` this is `(x + hbar) (x + 2 hbar) .. (x + li hbar)`; for
/// `li < 0` it is `x (x - hbar) .. (x - (|li|-1) hbar)`; for `li = 0` it is
/// identically one. Both branches have degree `|li|` and leading
/// coefficient one, so they converge to `x^{|li|}` as `hbar -> 0`. Factors
/// are formed as `x - k*hbar` directly, so zeros at integer multiples of
/// `hbar` are exact when `x` is supplied as such a multiple.
pub fn eval_p(li: i64, x: f64, hbar: f64) -> f64 {
    if li > 0 {
        (1..=li).map(|k| x + k as f64 * hbar).product()
    } else if li < 0 {
        (0..-li).map(|k| x - k as f64 * hbar).product()
    } else {
        1.0
    }
}

/// Full description of a coupled-oscillator system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpecJson", into = "SystemSpecJson")]
pub struct SystemSpec {
    exponents: ExponentVector,
    resonance: ResonanceMatrix,
    coupling: Coupling,
    free_part: Expr,
    hbar: f64,
    h_const: f64,
}

impl SystemSpec {
    /// Validate and assemble a system. `rho = None` selects the default
    /// resonance matrix construction.
    pub fn new(
        l: Vec<i64>,
        rho: Option<Array2<f64>>,
        g0: Coupling,
        h0: Expr,
        hbar: f64,
    ) -> Result<SystemSpec> {
        let exponents = ExponentVector::new(l)?;
        let n = exponents.len();
        let resonance = match rho {
            Some(m) => ResonanceMatrix::new(m, &exponents)?,
            None => default_resonance_matrix(&exponents)?,
        };
        g0.validate(n)?;
        if let Some(m) = h0.max_arg() {
            if m >= n {
                return Err(KummerError::InvalidSpec(format!(
                    "free part references argument {} but the system has {} modes",
                    m, n
                )));
            }
        }
        if !hbar.is_finite() || hbar <= 0.0 {
            return Err(KummerError::InvalidParameter(format!(
                "hbar must be positive, got {}",
                hbar
            )));
        }
        Ok(SystemSpec {
            exponents,
            resonance,
            coupling: g0,
            free_part: h0,
            hbar,
            h_const: 0.0,
        })
    }

    /// Add a constant term to the quantum Hamiltonian (the classical free
    /// part is unaffected; constants do not move anything).
    pub fn with_h_const(mut self, h_const: f64) -> SystemSpec {
        self.h_const = h_const;
        self
    }

    /// Same system at a different scale. Used by the semiclassical limit
    /// routines, which shrink `hbar` along a sequence.
    pub fn with_hbar(mut self, hbar: f64) -> Result<SystemSpec> {
        if !hbar.is_finite() || hbar <= 0.0 {
            return Err(KummerError::InvalidParameter(format!(
                "hbar must be positive, got {}",
                hbar
            )));
        }
        self.hbar = hbar;
        Ok(self)
    }

    pub fn exponents(&self) -> &ExponentVector {
        &self.exponents
    }

    pub fn l(&self) -> &[i64] {
        self.exponents.as_slice()
    }

    /// Number of modes `N+1`.
    pub fn n_modes(&self) -> usize {
        self.exponents.len()
    }

    /// Number of conserved constants `N` in a sector.
    pub fn n_constants(&self) -> usize {
        self.exponents.len() - 1
    }

    pub fn resonance(&self) -> &ResonanceMatrix {
        &self.resonance
    }

    pub fn rho(&self) -> &Array2<f64> {
        self.resonance.rho()
    }

    pub fn kappa(&self) -> &Array2<f64> {
        self.resonance.kappa()
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn free_part(&self) -> &Expr {
        &self.free_part
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn h_const(&self) -> f64 {
        self.h_const
    }

    /// Map a sector point `(first, c_1, .., c_N)` back to oscillator
    /// actions via `kappa`. `first` is `I_0` classically and an `A_0`
    /// eigenvalue quantum-mechanically.
    pub fn oscillator_actions(&self, first: f64, c: &[f64]) -> Vec<f64> {
        let n = self.n_modes();
        assert_eq!(c.len(), n - 1, "constant vector must have length N");
        let k = self.kappa();
        (0..n)
            .map(|i| {
                let mut x = k[[i, 0]] * first;
                for (j, &cj) in c.iter().enumerate() {
                    x += k[[i, j + 1]] * cj;
                }
                x
            })
            .collect()
    }

    /// Whether `(i0, c)` lies in the open cone where all oscillator actions
    /// are positive.
    pub fn in_cone(&self, i0: f64, c: &[f64]) -> bool {
        self.oscillator_actions(i0, c).iter().all(|&x| x > 0.0)
    }

    /// Quantum structural function at `a0` in the sector with constants `c`:
    /// `g_0(x)^2 * prod_i P_{l_i}(x_i)` with `x = kappa (a0, c)`.
    pub fn structural_quantum(&self, a0: f64, c: &[f64]) -> f64 {
        let x = self.oscillator_actions(a0, c);
        let g = self.coupling.eval(&x);
        let p: f64 = self
            .l()
            .iter()
            .zip(&x)
            .map(|(&li, &xi)| eval_p(li, xi, self.hbar))
            .product();
        g * g * p
    }

    /// Structural sequence value at ladder offset `n` above the occupation
    /// vector `v`. The ladder factors are integer products scaled by powers
    /// of `hbar`, so boundary zeros (`v_i + n l_i` hitting the end of a
    /// finite ladder) are exact rather than rounded.
    pub fn structural_occupation(&self, v: &[i64], n: i64) -> f64 {
        assert_eq!(v.len(), self.n_modes());
        let hbar = self.hbar;
        let mut value = 1.0;
        let mut actions = Vec::with_capacity(v.len());
        for (i, &li) in self.l().iter().enumerate() {
            let m = v[i] + n * li;
            actions.push(hbar * m as f64);
            let mut factor: i128 = 1;
            if li > 0 {
                for k in 1..=li {
                    factor *= (m + k) as i128;
                }
            } else if li < 0 {
                for k in 0..-li {
                    factor *= (m - k) as i128;
                }
            }
            value *= factor as f64 * hbar.powi(li.unsigned_abs() as i32);
        }
        // An exact ladder zero must survive even when the coupling is
        // singular at the boundary actions (0 * inf would poison it).
        if value == 0.0 {
            return 0.0;
        }
        let g = self.coupling.eval(&actions);
        g * g * value
    }

    /// Classical structural function at `(i0, c)`:
    /// `g_0(x)^2 * prod_i x_i^{|l_i|}` with `x = kappa (i0, c)`. Total; the
    /// result is negative outside the cone for odd `|l_i|`, which is what
    /// boundary detection wants.
    pub fn structural_classical(&self, i0: f64, c: &[f64]) -> f64 {
        let x = self.oscillator_actions(i0, c);
        let g = self.coupling.eval(&x);
        let p: f64 = self
            .l()
            .iter()
            .zip(&x)
            .map(|(&li, &xi)| xi.powi(li.unsigned_abs() as i32))
            .product();
        g * g * p
    }

    /// Signed-exponent variant `g_0^2 * prod_{l_i>0} x_i^{l_i} /
    /// prod_{l_j<0} x_j^{|l_j|}`, the squared radial coordinate of the
    /// reduced coherent parameter. Defined only inside the cone (the
    /// negative-exponent factors are poles on its boundary).
    pub fn structural_tilde(&self, i0: f64, c: &[f64]) -> Result<f64> {
        let x = self.oscillator_actions(i0, c);
        for (i, &li) in self.l().iter().enumerate() {
            if li > 0 && x[i] < 0.0 || li < 0 && x[i] <= 0.0 {
                return Err(KummerError::OutsideCone(format!(
                    "action {} is {:.6e} at I0 = {:.6e}",
                    i, x[i], i0
                )));
            }
        }
        let g = self.coupling.eval(&x);
        let p: f64 = self
            .l()
            .iter()
            .zip(&x)
            .map(|(&li, &xi)| xi.powi(li as i32))
            .product();
        Ok(g * g * p)
    }

    /// Oscillator actions as expressions over the sector arguments
    /// `(I_0, .., I_N)`: row `i` of `kappa` as a linear form.
    pub fn oscillator_action_exprs(&self) -> Vec<Expr> {
        let n = self.n_modes();
        let k = self.kappa();
        (0..n)
            .map(|i| Expr::linear(0.0, &(0..n).map(|j| k[[i, j]]).collect::<Vec<_>>()))
            .collect()
    }

    /// Classical structural function as an expression over `(I_0, .., I_N)`.
    /// Exact derivatives of this expression drive the reduced equations of
    /// motion.
    pub fn structural_expr(&self) -> Expr {
        let xs = self.oscillator_action_exprs();
        let mut out = Expr::pow(self.coupling.expr().substitute(&xs), 2);
        for (i, &li) in self.l().iter().enumerate() {
            out = Expr::mul(out, Expr::pow(xs[i].clone(), li.unsigned_abs() as i32));
        }
        out
    }

    /// Free part as an expression over `(I_0, .., I_N)`.
    pub fn free_part_expr(&self) -> Expr {
        let xs = self.oscillator_action_exprs();
        self.free_part.substitute(&xs)
    }
}

#[derive(Serialize, Deserialize)]
struct SystemSpecJson {
    l: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<Vec<Vec<f64>>>,
    g0: CouplingJson,
    h0: Expr,
    hbar: f64,
    #[serde(default, skip_serializing_if = "f64_is_zero")]
    h_const: f64,
}

fn f64_is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CouplingJson {
    Number(f64),
    Tree(Expr),
}

impl TryFrom<SystemSpecJson> for SystemSpec {
    type Error = KummerError;
    fn try_from(j: SystemSpecJson) -> Result<SystemSpec> {
        let rho = match j.rho {
            None => None,
            Some(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(KummerError::InvalidSpec(
                        "rho rows must all have the same length as the row count".into(),
                    ));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                Some(Array2::from_shape_vec((n, n), flat).expect("shape checked"))
            }
        };
        let g0 = match j.g0 {
            CouplingJson::Number(v) => Coupling::Constant(v),
            CouplingJson::Tree(e) => Coupling::Expression(e),
        };
        let spec = SystemSpec::new(j.l, rho, g0, j.h0, j.hbar)?;
        Ok(spec.with_h_const(j.h_const))
    }
}

impl From<SystemSpec> for SystemSpecJson {
    fn from(s: SystemSpec) -> SystemSpecJson {
        let n = s.n_modes();
        let rho_rows: Vec<Vec<f64>> = (0..n).map(|i| s.rho().row(i).to_vec()).collect();
        SystemSpecJson {
            l: s.exponents.clone().into(),
            rho: Some(rho_rows),
            g0: match s.coupling {
                Coupling::Constant(v) => CouplingJson::Number(v),
                Coupling::Expression(e) => CouplingJson::Tree(e),
            },
            h0: s.free_part,
            hbar: s.hbar,
            h_const: s.h_const,
        }
    }
}
