//! Star product of covariant symbols and its classical limit.
//!
//! A polynomial symbol `sum f_{ab} zbar^a z^b` names the normal-ordered
//! operator `sum f_{ab} A*^a A^b` on a sector. The product of two symbols
//! can be computed two ways: through the operator product (apply both
//! ladder chains to the eigenvector-family state and take the expectation)
//! or through the shift-derivative formula, which replaces each lowering
//! step by the weighted shift `D zbar^n = G(n-1) zbar^{n-1}` acting on the
//! kernel series. On an infinite ladder the two routes coincide; on a
//! finite or truncated sector they differ by terms carrying top-state
//! kernel mass, so agreement checks belong at points where that mass is
//! negligible. Flux past the top state is zeroed in both routes so the
//! derivative chains see the same wall the matrices do.
//!
//! Rescaled differences of the product at shrinking `hbar` recover the
//! classical bracket; [`limit_bracket`] runs that extrapolation over a
//! sector family. [`glauber_star`] is the same normal-ordered product on
//! ordinary uncoupled modes, where the shift weights are constant and the
//! series closes in finitely many derivatives; it serves as an external
//! reference point for the deformation.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::coherent::{coherent_state, ln_weights, shifted_coeffs};
use crate::error::{KummerError, Result};
use crate::quantum::Sector;
use crate::special::factorial;

/// Finite coefficient table `f_{ab}` of a symbol `sum f_{ab} zbar^a z^b`,
/// keyed by `(a, b)`. The same table names the normal-ordered operator
/// `sum f_{ab} A*^a A^b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolPolynomial {
    terms: BTreeMap<(usize, usize), Complex64>,
}

impl SymbolPolynomial {
    /// The zero symbol.
    pub fn new() -> Self {
        Self::default()
    }

    /// The constant symbol `1`, the identity operator.
    pub fn one() -> Self {
        Self::new().with_term(0, 0, 1.0)
    }

    /// `zbar^a z^b` with coefficient one.
    pub fn monomial(a: usize, b: usize) -> Self {
        Self::new().with_term(a, b, 1.0)
    }

    /// Add `coef * zbar^a z^b`, merging with an existing entry.
    pub fn with_term(mut self, a: usize, b: usize, coef: impl Into<Complex64>) -> Self {
        let c = self.terms.entry((a, b)).or_default();
        *c += coef.into();
        if c.norm_sqr() == 0.0 {
            self.terms.remove(&(a, b));
        }
        self
    }

    /// Iterate over `((a, b), f_ab)` entries.
    pub fn terms(&self) -> impl Iterator<Item = ((usize, usize), Complex64)> + '_ {
        self.terms.iter().map(|(&k, &v)| (k, v))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest `a + b` over the support.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(|&(a, b)| a + b).max().unwrap_or(0)
    }

    /// Symbol of the adjoint operator: swap indices, conjugate coefficients.
    pub fn adjoint(&self) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|(&(a, b), &c)| ((b, a), c.conj()))
                .collect(),
        }
    }

    /// Pointwise value `sum f_ab conj(z)^a z^b`.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let zb = z.conj();
        self.terms
            .iter()
            .map(|(&(a, b), &c)| c * zb.powu(a as u32) * z.powu(b as u32))
            .sum()
    }
}

/// An observable on a sector: a polynomial symbol, or the sector action
/// `A0` itself (a diagonal that no finite polynomial in `A`, `A*`
/// reproduces).
#[derive(Debug, Clone)]
pub enum Symbol {
    Poly(SymbolPolynomial),
    Action0,
}

impl Symbol {
    pub fn adjoint(&self) -> Symbol {
        match self {
            Symbol::Poly(p) => Symbol::Poly(p.adjoint()),
            Symbol::Action0 => Symbol::Action0,
        }
    }
}

/// Ladder flux with the wall zeroed: the step `n -> n+1` carries `g_n`
/// only while `n + 1` is still inside the matrix block.
struct Ladder<'a> {
    g: &'a [f64],
    dim: usize,
}

impl<'a> Ladder<'a> {
    fn new(sector: &'a Sector) -> Result<Self> {
        Ok(Self {
            g: sector.g_seq()?,
            dim: sector.matrix_dim()?,
        })
    }

    fn flux(&self, m: usize) -> f64 {
        if m + 1 < self.dim {
            self.g[m]
        } else {
            0.0
        }
    }

    /// Product of the flux down `b` steps from level `m`:
    /// `g_{m-1} g_{m-2} .. g_{m-b}`, zero when the chain underflows the
    /// vacuum or crosses the wall.
    fn path(&self, m: usize, b: usize) -> f64 {
        if b > m {
            return 0.0;
        }
        (1..=b).map(|i| self.flux(m - i)).product()
    }

    fn lower(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::default(); x.len()];
        for n in 0..x.len() - 1 {
            y[n] = self.flux(n).sqrt() * x[n + 1];
        }
        y
    }

    fn raise(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::default(); x.len()];
        for n in 1..x.len() {
            y[n] = self.flux(n - 1).sqrt() * x[n - 1];
        }
        y
    }
}

/// Eigenvector-family state at `z`, normalized to unit norm. Goes through
/// [`coherent_state`] first so wall-tail policing still applies.
fn unit_state(sector: &Sector, z: Complex64) -> Result<Vec<Complex64>> {
    coherent_state(sector, z)?;
    let mut c = shifted_coeffs(&ln_weights(sector)?, z);
    let norm: f64 = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    for v in &mut c {
        *v /= norm;
    }
    Ok(c)
}

fn apply_poly(lad: &Ladder, p: &SymbolPolynomial, x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); x.len()];
    for ((a, b), coef) in p.terms() {
        let mut y = x.to_vec();
        for _ in 0..b {
            y = lad.lower(&y);
        }
        for _ in 0..a {
            y = lad.raise(&y);
        }
        for (o, v) in out.iter_mut().zip(&y) {
            *o += coef * v;
        }
    }
    out
}

fn apply_symbol(sector: &Sector, lad: &Ladder, sym: &Symbol, x: &[Complex64]) -> Vec<Complex64> {
    match sym {
        Symbol::Poly(p) => apply_poly(lad, p, x),
        Symbol::Action0 => x
            .iter()
            .enumerate()
            .map(|(n, v)| sector.a0_value(n) * v)
            .collect(),
    }
}

/// Expectation `<z| S_1 S_2 .. S_m |z> / <z|z>` of an operator chain,
/// applied right to left.
pub fn expectation(sector: &Sector, chain: &[Symbol], z: Complex64) -> Result<Complex64> {
    let c = unit_state(sector, z)?;
    let lad = Ladder::new(sector)?;
    let mut y = c.clone();
    for sym in chain.iter().rev() {
        y = apply_symbol(sector, &lad, sym, &y);
    }
    Ok(c.iter().zip(&y).map(|(ci, yi)| ci.conj() * yi).sum())
}

/// Matrix route for the product symbol: `<z| F G |z> / <z|z>` with both
/// operators applied through the sector ladder.
pub fn operator_symbol(sector: &Sector, f: &Symbol, g: &Symbol, z: Complex64) -> Result<Complex64> {
    let c = unit_state(sector, z)?;
    let lad = Ladder::new(sector)?;
    let w = apply_symbol(sector, &lad, g, &c);
    let w = apply_symbol(sector, &lad, f, &w);
    Ok(c.iter().zip(&w).map(|(ci, wi)| ci.conj() * wi).sum())
}

/// Shift-derivative route for the product symbol.
///
/// Each `f` term `f_ab zbar^a D^b` hits `g_ce zbar^c z^e K(zbar z)`; the
/// weighted shift turns the kernel series into flux-path sums, leaving
///
/// `(f * g)(z) = sum f_ab g_ce zbar^{a+c-b} z^e sum_nu rho_nu P(nu+c, b)`
///
/// with `rho_nu` the state's basis mass and `P(m, b)` the descending flux
/// product. `P` vanishes whenever the chain underflows or crosses the
/// wall, which is also what kills the negative `zbar` powers at `z = 0`.
pub fn star_product(
    sector: &Sector,
    f: &SymbolPolynomial,
    g: &SymbolPolynomial,
    z: Complex64,
) -> Result<Complex64> {
    let c = unit_state(sector, z)?;
    let rho: Vec<f64> = c.iter().map(|v| v.norm_sqr()).collect();
    let lad = Ladder::new(sector)?;
    let zb = z.conj();
    let mut total = Complex64::default();
    for ((a, b), fc) in f.terms() {
        for ((cc, e), gc) in g.terms() {
            let shifted: f64 = rho
                .iter()
                .enumerate()
                .map(|(nu, &r)| if r == 0.0 { 0.0 } else { r * lad.path(nu + cc, b) })
                .sum();
            if shifted == 0.0 {
                continue;
            }
            let delta = (a + cc) as i32 - b as i32;
            total += fc * gc * shifted * zb.powi(delta) * z.powu(e as u32);
        }
    }
    Ok(total)
}

/// Bracket values over a shrinking-`hbar` family and their extrapolated
/// limit.
#[derive(Debug, Clone)]
pub struct BracketLimit {
    /// `(-i/hbar_k) (<FG> - <GF>)` per family member, in the given order.
    pub values: Vec<Complex64>,
    /// Order-one Richardson extrapolation of the last two values.
    pub limit: Complex64,
    /// Fitted convergence order from consecutive difference ratios, or
    /// `None` when the sequence is already flat to rounding (a bracket
    /// that is exact at every `hbar`).
    pub order: Option<f64>,
}

/// Rescaled commutator expectations `(-i/hbar)(<FG> - <GF>)` at a fixed
/// point `z` over a family of sectors with strictly decreasing `hbar`,
/// extrapolated to the classical bracket.
///
/// Consecutive differences must contract; a non-contracting pair is
/// reported as no convergence rather than extrapolated.
pub fn limit_bracket(
    family: &[Sector],
    f: &Symbol,
    g: &Symbol,
    z: Complex64,
) -> Result<BracketLimit> {
    if family.len() < 3 {
        return Err(KummerError::InvalidParameter(format!(
            "bracket extrapolation needs at least 3 sectors, got {}",
            family.len()
        )));
    }
    for pair in family.windows(2) {
        if pair[1].hbar() >= pair[0].hbar() {
            return Err(KummerError::InvalidParameter(
                "bracket family must have strictly decreasing hbar".into(),
            ));
        }
    }
    let mut values = Vec::with_capacity(family.len());
    for sector in family {
        let fg = operator_symbol(sector, f, g, z)?;
        let gf = operator_symbol(sector, g, f, z)?;
        values.push(Complex64::new(0.0, -1.0 / sector.hbar()) * (fg - gf));
    }
    let n = values.len();
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let floor = 1e-9 * (1.0 + values[n - 1].norm());
    if diffs.iter().all(|&d| d <= floor) {
        return Ok(BracketLimit {
            limit: values[n - 1],
            values,
            order: None,
        });
    }
    let mut logs = Vec::new();
    for k in 0..diffs.len() - 1 {
        if diffs[k] <= floor || diffs[k + 1] <= floor {
            continue;
        }
        let ratio = diffs[k] / diffs[k + 1];
        if ratio <= 1.0 {
            return Err(KummerError::NoConvergence {
                what: "bracket difference sequence".into(),
                achieved: ratio,
                wanted: 1.0,
            });
        }
        logs.push(ratio.log2());
    }
    let order = if logs.is_empty() {
        None
    } else {
        Some(logs.iter().sum::<f64>() / logs.len() as f64)
    };
    Ok(BracketLimit {
        limit: 2.0 * values[n - 1] - values[n - 2],
        values,
        order,
    })
}

/// Polynomial symbol on `m` ordinary uncoupled modes, keyed by the
/// conjugate and plain exponent vectors.
#[derive(Debug, Clone)]
pub struct GlauberSymbol {
    modes: usize,
    terms: BTreeMap<(Vec<usize>, Vec<usize>), Complex64>,
}

impl GlauberSymbol {
    pub fn new(modes: usize) -> Self {
        Self {
            modes,
            terms: BTreeMap::new(),
        }
    }

    /// Add `coef * prod zbar_i^{zbar[i]} z_i^{z[i]}`.
    ///
    /// Panics if the exponent vectors do not match the mode count.
    pub fn with_term(mut self, zbar: &[usize], z: &[usize], coef: impl Into<Complex64>) -> Self {
        assert_eq!(zbar.len(), self.modes, "conjugate exponent arity");
        assert_eq!(z.len(), self.modes, "plain exponent arity");
        let c = self
            .terms
            .entry((zbar.to_vec(), z.to_vec()))
            .or_default();
        *c += coef.into();
        self
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Largest total exponent over the support.
    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|(kb, k)| kb.iter().sum::<usize>() + k.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    /// Value of `d^j/dz^j f` (when `on_z`) or `d^j/dzbar^j f` at the point.
    fn deriv_eval(&self, j: &[usize], on_z: bool, zb: &[Complex64], z: &[Complex64]) -> Complex64 {
        let mut total = Complex64::default();
        'terms: for ((kb, k), &coef) in &self.terms {
            let diffed = if on_z { k } else { kb };
            let mut fac = 1.0f64;
            for i in 0..self.modes {
                if j[i] > diffed[i] {
                    continue 'terms;
                }
                fac *= ((diffed[i] - j[i] + 1)..=diffed[i]).map(|v| v as f64).product::<f64>();
            }
            let mut v = fac * coef;
            for i in 0..self.modes {
                let (pb, pz) = if on_z {
                    (kb[i], k[i] - j[i])
                } else {
                    (kb[i] - j[i], k[i])
                };
                v *= zb[i].powu(pb as u32) * z[i].powu(pz as u32);
            }
            total += v;
        }
        total
    }
}

fn multi_indices(modes: usize, cap: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..modes {
        out = out
            .into_iter()
            .flat_map(|p| {
                let used: usize = p.iter().sum();
                (0..=cap - used).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Normal-ordered product symbol on ordinary modes:
/// `(f * g)(z) = sum_j hbar^{|j|} / j! (d_z^j f)(d_zbar^j g)`.
///
/// With every symbol capped at total degree 3 the series closes at
/// `|j| <= 4`; higher degrees and more than two modes are unsupported.
pub fn glauber_star(
    f: &GlauberSymbol,
    g: &GlauberSymbol,
    z: &[Complex64],
    hbar: f64,
) -> Result<Complex64> {
    if f.modes != g.modes || z.len() != f.modes {
        return Err(KummerError::InvalidParameter(format!(
            "mode mismatch: factors have {} and {} modes, point has {}",
            f.modes,
            g.modes,
            z.len()
        )));
    }
    if f.modes > 2 {
        return Err(KummerError::InvalidParameter(format!(
            "unsupported: at most two modes, got {}",
            f.modes
        )));
    }
    if f.degree() > 3 || g.degree() > 3 {
        return Err(KummerError::InvalidParameter(format!(
            "unsupported: symbol degree above 3 (got {} and {})",
            f.degree(),
            g.degree()
        )));
    }
    if hbar <= 0.0 {
        return Err(KummerError::InvalidParameter(format!(
            "hbar must be positive, got {hbar}"
        )));
    }
    let zb: Vec<Complex64> = z.iter().map(|v| v.conj()).collect();
    let mut total = Complex64::default();
    for j in multi_indices(f.modes, 4) {
        let jtot: usize = j.iter().sum();
        let weight =
            hbar.powi(jtot as i32) / j.iter().map(|&ji| factorial(ji)).product::<f64>();
        total += weight * f.deriv_eval(&j, true, &zb, z) * g.deriv_eval(&j, false, &zb, z);
    }
    Ok(total)
}
