//! Coherent states, reproducing kernels and covariant symbols on a
//! reduced sector.
//!
//! Two normalizations of the state family live side by side. The
//! eigenvector family weights each ladder step by the structural value
//! itself, `w_{n+1} = w_n / sqrt(g_n)`; the lowering operator acts on it
//! as multiplication by `z` on every row except the last, and covariant
//! symbols and the star product are built from it. The analytic family
//! weights steps by the tilde ladder (negative-mode factors moved to the
//! denominator, see [`Sector::tilde_seq`]); its squared weights are the
//! kernel coefficients `k_n`, and the reproducing measure inverts exactly
//! those moments. The two families coincide when no exponent is negative.
//!
//! All weight ladders are accumulated in log space so that deep sectors
//! (vacua well past `170!`) stay finite; materialized coefficients may
//! underflow to zero at the far tail, which the inner products tolerate.

use ndarray::ArrayView2;
use num_complex::Complex64;

use crate::algebra::SystemSpec;
use crate::error::{KummerError, Result};
use crate::expr::Expr;
use crate::quantum::Sector;
use crate::special::{ln_factorial, pfq};

/// Structural log weights `ln w_n` with `w_0 = 1 / sqrt(prod v_i!)` and
/// `w_{n+1} = w_n / sqrt(g_n)`, one entry per basis state.
pub(crate) fn ln_weights(sector: &Sector) -> Result<Vec<f64>> {
    let d = sector.matrix_dim()?;
    let g = sector.g_seq()?;
    let mut acc = -0.5
        * sector
            .vacuum()
            .iter()
            .map(|&v| ln_factorial(v as usize))
            .sum::<f64>();
    let mut out = Vec::with_capacity(d);
    out.push(acc);
    for &gn in &g[..d - 1] {
        acc -= 0.5 * gn.ln();
        out.push(acc);
    }
    Ok(out)
}

/// Log magnitudes of the coefficients `w_n z^n` at `t = |z|^2`.
fn coeff_logs(lw: &[f64], t: f64) -> Vec<f64> {
    if t == 0.0 {
        // 0 * ln 0 would poison every entry; only the vacuum survives.
        let mut v = vec![f64::NEG_INFINITY; lw.len()];
        v[0] = lw[0];
        return v;
    }
    let half = 0.5 * t.ln();
    lw.iter()
        .enumerate()
        .map(|(n, &w)| w + n as f64 * half)
        .collect()
}

fn log_norm_sq(lc: &[f64]) -> f64 {
    let m = lc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = lc.iter().map(|&l| (2.0 * (l - m)).exp()).sum();
    2.0 * m + s.ln()
}

/// Coefficient vector rescaled so its largest magnitude is 1, for inner
/// products whose value is a ratio (the common shift cancels).
pub(crate) fn shifted_coeffs(lw: &[f64], z: Complex64) -> Vec<Complex64> {
    let lc = coeff_logs(lw, z.norm_sqr());
    let shift = lc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let theta = z.arg();
    lc.iter()
        .enumerate()
        .map(|(n, &l)| Complex64::from_polar((l - shift).exp(), theta * n as f64))
        .collect()
}

/// Tail policy at a hard wall. `r` is the term ratio at the first dropped
/// index, `last_rel` the relative weight of the last kept term, `ladder`
/// the step-ratio ladder including the dropped entry.
fn wall_tail(r: f64, last_rel: f64, ladder: &[f64], what: &str) -> Result<()> {
    let m = ladder.len();
    if r >= 1.0 {
        // A ladder still growing a quarter-window from the wall can push
        // the terms back into decay; a saturating one never will.
        let back = (m / 4).max(1);
        let growth = ladder[m - 1] / ladder[m - 1 - back];
        return Err(if growth >= 1.05 {
            KummerError::IncreaseTruncation(format!(
                "{what}: series still growing at the wall (term ratio {r:.3e})"
            ))
        } else {
            KummerError::OutsideDisc(format!(
                "{what}: term ratio {r:.3e} on a saturating ladder never decays"
            ))
        });
    }
    let tail = last_rel * r / (1.0 - r);
    if tail > 1e-14 {
        return Err(KummerError::IncreaseTruncation(format!(
            "{what}: dropped tail is {tail:.3e} of the retained sum"
        )));
    }
    Ok(())
}

/// A normalized-by-construction element of the eigenvector family,
/// `|z> = sum_n w_n z^n |n>`, materialized on the sector basis.
#[derive(Debug, Clone)]
pub struct CoherentState {
    z: Complex64,
    coeffs: Vec<Complex64>,
    norm_sq: f64,
    boundary_fraction: f64,
}

impl CoherentState {
    pub fn z(&self) -> Complex64 {
        self.z
    }

    /// Coefficients `w_n z^n` on the sector basis (not normalized).
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Squared norm `<z|z> = sum_n w_n^2 |z|^{2n}`.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// Mass fraction `|c_{D-1}|^2 / <z|z>` on the last basis state; the
    /// sole source of defect in every eigen relation below.
    pub fn boundary_fraction(&self) -> f64 {
        self.boundary_fraction
    }

    /// Max row residuals of `A|z> = z|z>`, normalized by the state norm,
    /// as `(interior, full)`. The interior rows (all but the last) hold
    /// exactly by the weight recursion; the last row carries the whole
    /// defect `|z| |c_{D-1}|`.
    pub fn eigen_residuals(&self, sector: &Sector) -> Result<(f64, f64)> {
        let d = sector.matrix_dim()?;
        if d != self.coeffs.len() {
            return Err(KummerError::InvalidParameter(format!(
                "state has {} coefficients on a dimension-{} sector",
                self.coeffs.len(),
                d
            )));
        }
        let g = sector.g_seq()?;
        let norm = self.norm_sq.sqrt();
        let mut interior = 0.0f64;
        for m in 0..d - 1 {
            let r = (g[m].sqrt() * self.coeffs[m + 1] - self.z * self.coeffs[m]).norm();
            interior = interior.max(r);
        }
        let last = (self.z * self.coeffs[d - 1]).norm();
        Ok((interior / norm, interior.max(last) / norm))
    }
}

/// Build the eigenvector-family state at `z`.
///
/// On a finite sector the sum is exact and any `z` is admissible. At a
/// hard wall the dropped tail is policed: a still-growing ladder whose
/// terms have not yet turned over asks for a larger truncation, a
/// saturating ladder with `|z|^2` at or past its limit value is outside
/// the convergence disc, and a geometric tail bound above `1e-14` of the
/// retained norm asks for a larger truncation.
pub fn coherent_state(sector: &Sector, z: Complex64) -> Result<CoherentState> {
    let lw = ln_weights(sector)?;
    let d = lw.len();
    let t = z.norm_sqr();
    let lc = coeff_logs(&lw, t);
    let ln_norm = log_norm_sq(&lc);
    let boundary_fraction = (2.0 * lc[d - 1] - ln_norm).exp();
    if sector.truncation().is_some() {
        let g = sector.g_seq()?;
        wall_tail(t / g[d - 1], boundary_fraction, g, "coherent state")?;
    }
    let theta = z.arg();
    let coeffs = lc
        .iter()
        .enumerate()
        .map(|(n, &l)| Complex64::from_polar(l.exp(), theta * n as f64))
        .collect();
    Ok(CoherentState {
        z,
        coeffs,
        norm_sq: ln_norm.exp(),
        boundary_fraction,
    })
}

/// Closed form of the kernel series for a constant coupling:
/// `K(x) = prefactor * pFq(alpha; beta; scale * x)` at `x = conj(z) w`.
#[derive(Debug, Clone)]
pub struct HypergeometricForm {
    pub prefactor: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub scale: f64,
}

impl HypergeometricForm {
    /// Evaluate at real `x` to relative tolerance `tol`.
    pub fn eval(&self, x: f64, tol: f64) -> Result<f64> {
        Ok(self.prefactor * pfq(&self.alpha, &self.beta, self.scale * x, tol)?)
    }
}

/// Kernel of the analytic family: `K(conj(z), w) = sum_n k_n (conj(z) w)^n`
/// with `k_0 = 1 / prod v_i!` and `k_{n+1} = k_n / tilde_n`.
#[derive(Debug, Clone)]
pub struct ReproducingKernel {
    ln_k: Vec<f64>,
    tilde: Vec<f64>,
    walled: bool,
    hyper: Option<HypergeometricForm>,
}

fn kernel_ladder(sector: &Sector) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = sector.matrix_dim()?;
    let tilde = sector.tilde_seq()?;
    let mut acc: f64 = -sector
        .vacuum()
        .iter()
        .map(|&v| ln_factorial(v as usize))
        .sum::<f64>();
    let mut ln_k = Vec::with_capacity(d);
    ln_k.push(acc);
    for &tn in &tilde[..d - 1] {
        acc -= tn.ln();
        ln_k.push(acc);
    }
    Ok((ln_k, tilde))
}

impl ReproducingKernel {
    pub fn dim(&self) -> usize {
        self.ln_k.len()
    }

    /// Series coefficients `k_n`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.ln_k.iter().map(|&l| l.exp()).collect()
    }

    /// Log coefficients `ln k_n`, safe for deep sectors whose literal
    /// coefficients would over- or underflow.
    pub fn ln_coefficients(&self) -> &[f64] {
        &self.ln_k
    }

    /// Closed form, available when the coupling is constant.
    pub fn hypergeometric(&self) -> Option<&HypergeometricForm> {
        self.hyper.as_ref()
    }

    /// Sum the series at `x = zbar * w`, policing the dropped tail when
    /// the sector is truncated.
    pub fn eval(&self, zbar: Complex64, w: Complex64) -> Result<Complex64> {
        let x = zbar * w;
        let d = self.ln_k.len();
        let mut term = Complex64::new(self.ln_k[0].exp(), 0.0);
        let mut sum = term;
        let mut abs_sum = term.norm();
        for n in 0..d - 1 {
            term = term * x / self.tilde[n];
            sum += term;
            abs_sum += term.norm();
        }
        if self.walled {
            let r = x.norm() / self.tilde[d - 1];
            let last_rel = term.norm() / abs_sum.max(f64::MIN_POSITIVE);
            wall_tail(r, last_rel, &self.tilde, "reproducing kernel")?;
        }
        Ok(sum)
    }
}

fn hypergeometric_form(sector: &Sector, spec: &SystemSpec) -> Option<HypergeometricForm> {
    if !spec.coupling().expr().is_constant() {
        return None;
    }
    let g0 = spec.coupling().eval(&vec![0.0; spec.n_modes()]);
    let hbar = spec.hbar();
    let signed: i64 = spec.l().iter().sum();
    let mut scale = hbar.powi(-(signed as i32)) / (g0 * g0);
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    for (i, &li) in spec.l().iter().enumerate() {
        let v = sector.vacuum()[i] as f64;
        if li > 0 {
            let l = li as f64;
            for k in 1..=li {
                beta.push((v + k as f64) / l);
            }
            scale /= l.powi(li as i32);
        } else if li < 0 {
            let lam = (-li) as f64;
            for k in 0..-li {
                alpha.push((k as f64 - v) / lam);
            }
            scale *= (-lam).powi((-li) as i32);
        }
    }
    // The plain power series has no n!; cancel the one pFq inserts.
    if let Some(pos) = beta.iter().position(|&b| b == 1.0) {
        beta.remove(pos);
    } else {
        alpha.push(1.0);
    }
    let prefactor = (-sector
        .vacuum()
        .iter()
        .map(|&v| ln_factorial(v as usize))
        .sum::<f64>())
    .exp();
    Some(HypergeometricForm {
        prefactor,
        alpha,
        beta,
        scale,
    })
}

/// Build the reproducing kernel of a sector, with the hypergeometric
/// closed form attached when the coupling is constant.
pub fn reproducing_kernel(sector: &Sector, spec: &SystemSpec) -> Result<ReproducingKernel> {
    sector.check_matches(spec)?;
    let (ln_k, tilde) = kernel_ladder(sector)?;
    let hyper = hypergeometric_form(sector, spec);
    Ok(ReproducingKernel {
        ln_k,
        tilde,
        walled: sector.truncation().is_some(),
        hyper,
    })
}

/// One-shot kernel value `K(zbar, w)` from sector data alone.
pub fn kernel_eval(sector: &Sector, zbar: Complex64, w: Complex64) -> Result<Complex64> {
    let (ln_k, tilde) = kernel_ladder(sector)?;
    ReproducingKernel {
        ln_k,
        tilde,
        walled: sector.truncation().is_some(),
        hyper: None,
    }
    .eval(zbar, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolStatus {
    Converged,
    /// More than `1e-10` of the state mass sits on the last basis state
    /// of a truncated sector; the value is contaminated by the wall.
    TruncationWarning,
}

/// Normalized expectation `<z|op|z> / <z|z>` on the eigenvector family.
#[derive(Debug, Clone, Copy)]
pub struct CovariantSymbol {
    pub value: Complex64,
    pub boundary_fraction: f64,
    pub status: SymbolStatus,
}

/// Covariant symbol of a matrix on the sector basis at the point `z`.
/// Weights are rescaled internally, so deep sectors whose literal
/// coefficients would underflow still evaluate; a finite sector is exact
/// and never warns.
pub fn covariant_symbol(
    sector: &Sector,
    op: &ArrayView2<Complex64>,
    z: Complex64,
) -> Result<CovariantSymbol> {
    let d = sector.matrix_dim()?;
    if op.nrows() != d || op.ncols() != d {
        return Err(KummerError::InvalidParameter(format!(
            "operator is {}x{} on a dimension-{} sector",
            op.nrows(),
            op.ncols(),
            d
        )));
    }
    let lw = ln_weights(sector)?;
    let s = shifted_coeffs(&lw, z);
    let norm_sq: f64 = s.iter().map(|c| c.norm_sqr()).sum();
    let mut num = Complex64::new(0.0, 0.0);
    for i in 0..d {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..d {
            row += op[[i, j]] * s[j];
        }
        num += s[i].conj() * row;
    }
    let boundary_fraction = s[d - 1].norm_sqr() / norm_sq;
    let status = if sector.truncation().is_some() && boundary_fraction > 1e-10 {
        SymbolStatus::TruncationWarning
    } else {
        SymbolStatus::Converged
    };
    Ok(CovariantSymbol {
        value: num / norm_sq,
        boundary_fraction,
        status,
    })
}

/// Invert the classical structural function: find `i0` with
/// `G_0(i0) = target` on the monotone branch through `start`, by
/// safeguarded Newton on the exact expression derivative. The expansion
/// refuses to cross a fold (sign change of the slope), so multi-branch
/// shapes resolve to the branch the caller asked for.
pub fn structural_inverse(
    spec: &SystemSpec,
    constants: &[f64],
    target: f64,
    start: f64,
) -> Result<f64> {
    if constants.len() != spec.n_constants() {
        return Err(KummerError::InvalidParameter(format!(
            "expected {} constants, got {}",
            spec.n_constants(),
            constants.len()
        )));
    }
    let mut subs: Vec<Expr> = vec![Expr::arg(0)];
    for &c in constants {
        subs.push(Expr::constant(c));
    }
    let shape = spec.structural_expr().substitute(&subs);
    let slope_expr = shape.diff(0);
    let f = |x: f64| shape.eval(&[x]) - target;
    let fp = |x: f64| slope_expr.eval(&[x]);

    let f0 = f(start);
    if f0 == 0.0 {
        return Ok(start);
    }
    let slope = fp(start);
    if slope == 0.0 || !slope.is_finite() {
        return Err(KummerError::InvalidParameter(format!(
            "shape is flat at I0 = {start:.6e}; no branch to follow"
        )));
    }
    // Walk toward the target value along the local slope until the sign
    // of f - target flips.
    let dir = if (f0 < 0.0) == (slope > 0.0) { 1.0 } else { -1.0 };
    let mut step = 0.1 * start.abs().max(1.0) * dir;
    let (mut a, mut fa) = (start, f0);
    let mut b = a;
    let mut bracketed = false;
    for _ in 0..200 {
        b = a + step;
        let fb = f(b);
        if !fb.is_finite() {
            step *= 0.5;
            continue;
        }
        if (fa < 0.0) != (fb < 0.0) {
            bracketed = true;
            break;
        }
        if fp(b).signum() != slope.signum() {
            return Err(KummerError::InvalidParameter(format!(
                "value {target:.6e} is not attained on the branch through I0 = {start:.6e}"
            )));
        }
        a = b;
        fa = fb;
        step *= 1.7;
    }
    if !bracketed {
        return Err(KummerError::InvalidParameter(format!(
            "no bracket for value {target:.6e} from I0 = {start:.6e}"
        )));
    }

    let (mut lo, mut hi) = if a < b { (a, b) } else { (b, a) };
    let flo = f(lo);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx < 0.0) == (flo < 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        let d = fp(x);
        let mut next = if d != 0.0 { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
