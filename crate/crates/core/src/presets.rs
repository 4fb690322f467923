//! Worked example systems and their golden-value suites.
//!
//! Four ready-made systems cover the main shape geometries: `laguerre`
//! (steps `(1, 1)`, upper sheet of a two-sheeted hyperboloid, ladder
//! related to Laguerre polynomials), `krawtchouk` (steps `(1, -1)`,
//! ellipsoid, finite ladders), `q_weyl` (single mode with an
//! exponentially saturating coupling, a deformation of the elliptic
//! paraboloid) and `three_wave` (steps `(1, -1, -1)`, the decay
//! interaction of three resonant modes; no closed-form golden values are
//! claimed for it).
//!
//! Each preset pins the structural data the closed forms depend on: the
//! resonance matrix, the coupling and the free part. [`golden_suite`]
//! binds a built preset to those closed forms: ladder relations, the
//! resolution of identity for its measure, the bracket triple on random
//! shape points, and one preset-specific identity (recurrence operator
//! entries, the kernel in closed form, or the deformed ladder).
//!
//! The `q_weyl` quantum side deserves a note: the coupling that makes the
//! deformed ladder exact carries an explicit `hbar` dependence, while the
//! classical system uses its `hbar -> 0` form. The emitted [`SystemSpec`]
//! is the classical one; the sector is assembled from the quantum
//! coupling, and the two agree on steps and `hbar`, so every
//! sector-plus-spec entry point still accepts the pair.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{Coupling, SystemSpec};
use crate::classical::{nambu_bracket, ReducedSystem};
use crate::coherent::kernel_eval;
use crate::error::{KummerError, Result};
use crate::expr::Expr;
use crate::measure::{q_measure_check, resolution_check};
use crate::quantum::{
    build_sector, q_operators, reduced_hamiltonian, verify_relations, QDeformedSpec, Sector,
};
use crate::special::factorial;

/// Named example system with its defining parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Laguerre,
    Krawtchouk { p: f64 },
    QWeyl { q: f64, alpha: f64 },
    ThreeWave,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Laguerre => "laguerre",
            Preset::Krawtchouk { .. } => "krawtchouk",
            Preset::QWeyl { .. } => "q-weyl",
            Preset::ThreeWave => "three-wave",
        }
    }
}

fn laguerre_spec(hbar: f64) -> Result<SystemSpec> {
    let rho = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, -0.5, 0.5]).expect("2x2 shape");
    Ok(SystemSpec::new(
        vec![1, 1],
        Some(rho),
        Coupling::Constant(1.0),
        Expr::add(Expr::arg(0), Expr::arg(1)),
        hbar,
    )?
    // The quantum Hamiltonian carries a +hbar constant so its diagonal is
    // exactly the Laguerre recurrence diagonal; the classical free part
    // is unaffected.
    .with_h_const(hbar))
}

fn krawtchouk_spec(p: f64, hbar: f64) -> Result<SystemSpec> {
    if !(p > 0.0 && p < 1.0) {
        return Err(KummerError::InvalidParameter(format!(
            "krawtchouk weight p must lie in (0, 1), got {p}"
        )));
    }
    let rho = Array2::from_shape_vec((2, 2), vec![0.5, -0.5, 0.5, 0.5]).expect("2x2 shape");
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
}

/// Classical coupling of the deformed single-mode system:
/// `g0(x)^2 = (alpha / ln q)(q^{x / alpha} - 1) / x`, the limit shape
/// whose structural function is `(alpha / ln q)(q^{I0 / alpha} - 1)`.
fn q_weyl_spec(q: f64, alpha: f64, hbar: f64) -> Result<SystemSpec> {
    QDeformedSpec::new(q, alpha)?;
    let b = q.ln() / alpha;
    let g2 = Expr::div(
        Expr::mul(
            Expr::constant(alpha / q.ln()),
            Expr::sub(
                Expr::exp(Expr::mul(Expr::constant(b), Expr::arg(0))),
                Expr::constant(1.0),
            ),
        ),
        Expr::arg(0),
    );
    SystemSpec::new(
        vec![1],
        None,
        Coupling::Expression(Expr::sqrt(g2)),
        Expr::constant(0.0),
        hbar,
    )
}

/// Quantum coupling of the deformed system. The prefactor
/// `hbar / (1 - q^{hbar / alpha})` and the `+hbar` argument shift make
/// the sector ladder exactly `hbar (1 - q^{(n+1) hbar / alpha}) /
/// (1 - q^{hbar / alpha})`, so the deformed exchange relation holds to
/// rounding instead of to `O(hbar)`.
fn q_weyl_quantum_spec(q: f64, alpha: f64, hbar: f64) -> Result<SystemSpec> {
    QDeformedSpec::new(q, alpha)?;
    let b = q.ln() / alpha;
    let pref = hbar / (-f64::exp_m1(b * hbar));
    let shifted = Expr::add(Expr::arg(0), Expr::constant(hbar));
    let g2 = Expr::div(
        Expr::mul(
            Expr::constant(pref),
            Expr::sub(
                Expr::constant(1.0),
                Expr::exp(Expr::mul(Expr::constant(b), shifted.clone())),
            ),
        ),
        shifted,
    );
    SystemSpec::new(
        vec![1],
        None,
        Coupling::Expression(Expr::sqrt(g2)),
        Expr::constant(0.0),
        hbar,
    )
}

fn three_wave_spec(hbar: f64) -> Result<SystemSpec> {
    SystemSpec::new(
        vec![1, -1, -1],
        None,
        Coupling::Constant(1.0),
        Expr::constant(0.0),
        hbar,
    )
}

/// The preset's system description at scale `hbar`.
pub fn preset_spec(preset: &Preset, hbar: f64) -> Result<SystemSpec> {
    match preset {
        Preset::Laguerre => laguerre_spec(hbar),
        Preset::Krawtchouk { p } => krawtchouk_spec(*p, hbar),
        Preset::QWeyl { q, alpha } => q_weyl_spec(*q, *alpha, hbar),
        Preset::ThreeWave => three_wave_spec(hbar),
    }
}

/// Build the preset's system together with the sector over the given
/// vacuum. Walled presets (`laguerre`, `q_weyl`) need a truncation.
pub fn build_preset(
    preset: &Preset,
    hbar: f64,
    vacuum: &[i64],
    truncation: Option<usize>,
) -> Result<(SystemSpec, Sector)> {
    let spec = preset_spec(preset, hbar)?;
    let sector = match preset {
        Preset::QWeyl { q, alpha } => {
            let qspec = q_weyl_quantum_spec(*q, *alpha, hbar)?;
            build_sector(&qspec, vacuum, truncation)?
        }
        _ => build_sector(&spec, vacuum, truncation)?,
    };
    Ok((spec, sector))
}

/// Sectors at `hbar_k = hbar / 2^k` with the classical invariants pinned:
/// vacuum occupations and truncation double as `hbar` halves, so the
/// sector constants stay fixed along the family.
pub fn shrinking_family(
    preset: &Preset,
    hbar: f64,
    vacuum: &[i64],
    truncation: Option<usize>,
    members: usize,
) -> Result<Vec<Sector>> {
    if members == 0 || members > 30 {
        return Err(KummerError::InvalidParameter(format!(
            "family size must lie in 1..=30, got {members}"
        )));
    }
    (0..members)
        .map(|k| {
            let scale = 1i64 << k;
            let vac: Vec<i64> = vacuum.iter().map(|&v| v * scale).collect();
            let trunc = truncation.map(|t| t * scale as usize);
            Ok(build_preset(preset, hbar / scale as f64, &vac, trunc)?.1)
        })
        .collect()
}

/// One golden-value comparison: measured deviation against its gate.
#[derive(Debug, Clone)]
pub struct GoldenCheck {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub(crate) fn check(name: &str, deviation: f64, tolerance: f64) -> GoldenCheck {
    GoldenCheck {
        name: name.to_string(),
        deviation,
        tolerance,
        passed: deviation.is_finite() && deviation <= tolerance,
    }
}

/// Closed-form comparisons for one preset.
#[derive(Debug, Clone)]
pub struct GoldenReport {
    pub preset: String,
    pub checks: Vec<GoldenCheck>,
}

impl GoldenReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `{x, y}` on the shape in closed form: half the structural slope.
fn closed_xy_bracket(preset: &Preset, spec: &SystemSpec, i0: f64, c: &[f64]) -> f64 {
    match preset {
        Preset::Laguerre => i0,
        Preset::Krawtchouk { p } => -p * (1.0 - p) * i0,
        Preset::QWeyl { q, alpha } => 0.5 * (i0 * q.ln() / alpha).exp(),
        Preset::ThreeWave => {
            let x = spec.oscillator_actions(i0, c);
            0.5 * (x[1] * x[2] - x[0] * x[2] - x[0] * x[1])
        }
    }
}

/// Run the preset's golden-value comparisons at canonical parameters:
/// ladder relations, the resolution of identity, the bracket triple at
/// ten seeded shape points, and the preset-specific closed form.
pub fn golden_suite(preset: &Preset, seed: u64) -> Result<GoldenReport> {
    let (hbar, vacuum, trunc): (f64, Vec<i64>, Option<usize>) = match preset {
        Preset::Laguerre => (0.5, vec![0, 4], Some(200)),
        Preset::Krawtchouk { .. } => (1.0, vec![0, 20], None),
        Preset::QWeyl { .. } => (0.5, vec![0], Some(200)),
        Preset::ThreeWave => (1.0, vec![0, 12, 18], None),
    };
    let (spec, sector) = build_preset(preset, hbar, &vacuum, trunc)?;
    let mut checks = Vec::new();

    let relations = verify_relations(&sector, 1e-12)?;
    checks.push(check(
        "ladder relations",
        relations.worst() / relations.scale,
        1e-12,
    ));

    match preset {
        Preset::Laguerre => {
            let dev = resolution_check(&sector, &spec, 10)?;
            checks.push(check("resolution of identity", dev, 1e-8));
        }
        Preset::Krawtchouk { .. } => {
            let dev = resolution_check(&sector, &spec, 10)?;
            checks.push(check("resolution of identity", dev, 1e-12));
        }
        Preset::ThreeWave => {
            let dev = resolution_check(&sector, &spec, 3)?;
            checks.push(check("resolution of identity", dev, 1e-8));
        }
        Preset::QWeyl { q, alpha } => {
            let dev = q_measure_check(&QDeformedSpec::new(*q, *alpha)?, hbar, 8)?;
            checks.push(check("resolution of identity", dev, 1e-8));
        }
    }

    checks.push(bracket_triple_check(preset, &spec, &sector, seed)?);

    match preset {
        Preset::Laguerre => {
            let (entries, recurrence) = laguerre_recurrence_checks(&spec, &sector, vacuum[1])?;
            checks.push(entries);
            checks.push(recurrence);
        }
        Preset::Krawtchouk { p } => {
            checks.push(krawtchouk_kernel_check(&sector, *p, vacuum[1], seed)?);
        }
        Preset::QWeyl { q, alpha } => {
            checks.push(deformed_ladder_check(&sector, *q, *alpha, hbar)?);
        }
        Preset::ThreeWave => {}
    }

    Ok(GoldenReport {
        preset: preset.name().to_string(),
        checks,
    })
}

/// `{I0, x} = -y`, `{I0, y} = x` and the preset's `{x, y}` closed form at
/// ten seeded points on the shape.
fn bracket_triple_check(
    preset: &Preset,
    spec: &SystemSpec,
    sector: &Sector,
    seed: u64,
) -> Result<GoldenCheck> {
    let c = sector.constants();
    let sys = ReducedSystem::new(spec, c)?;
    let casimir = sys.casimir_expr();
    let (x, y, i0e) = (Expr::arg(0), Expr::arg(1), Expr::arg(2));
    let bounds = sys.bounds();
    let lo = bounds.lower;
    let hi = if bounds.upper.is_finite() {
        bounds.upper
    } else {
        lo + 5.0 * (1.0 + lo.abs())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let i0 = lo + (hi - lo) * (0.05 + 0.9 * rng.gen::<f64>());
        let g = sys.g(i0);
        if g <= 0.0 {
            continue;
        }
        let psi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let pt = [g.sqrt() * psi.cos(), g.sqrt() * psi.sin(), i0];
        let want_xy = closed_xy_bracket(preset, spec, i0, c);
        for (got, want) in [
            (nambu_bracket(&casimir, &i0e, &x, &pt), -pt[1]),
            (nambu_bracket(&casimir, &i0e, &y, &pt), pt[0]),
            (nambu_bracket(&casimir, &x, &y, &pt), want_xy),
        ] {
            worst = worst.max((got - want).abs() / (1.0 + want.abs()));
        }
    }
    Ok(check("shape algebra bracket triple", worst, 1e-9))
}

/// The reduced Hamiltonian must be the Laguerre three-term recurrence
/// operator scaled by `hbar`: diagonal `hbar (v + 2n + 1)`, couplings
/// `hbar sqrt((n+1)(v+n+1))`. The lowest twenty eigenpairs must satisfy
/// that recurrence written with the closed-form entries.
fn laguerre_recurrence_checks(
    spec: &SystemSpec,
    sector: &Sector,
    v1: i64,
) -> Result<(GoldenCheck, GoldenCheck)> {
    let h = reduced_hamiltonian(sector, spec)?;
    let hbar = sector.hbar();
    let v = v1 as f64;
    let d = h.dim();
    let diag_want = |n: usize| hbar * (v + 2.0 * n as f64 + 1.0);
    let off_want = |n: usize| hbar * ((n as f64 + 1.0) * (v + n as f64 + 1.0)).sqrt();
    let mut entry_dev = 0.0f64;
    for n in 0..d {
        entry_dev = entry_dev.max((h.diag()[n] - diag_want(n)).abs() / (1.0 + diag_want(n)));
        if n + 1 < d {
            entry_dev = entry_dev.max((h.off()[n] - off_want(n)).abs() / (1.0 + off_want(n)));
        }
    }
    let entries = check("recurrence operator entries", entry_dev, 1e-12);

    let spectrum = h.spectrum()?;
    let mut rec_dev = 0.0f64;
    for k in 0..20.min(d) {
        let lambda = spectrum.eigenvalues[k];
        let u = spectrum.eigenvectors.column(k);
        for n in 0..d {
            let mut r = (diag_want(n) - lambda) * u[n];
            if n > 0 {
                r += off_want(n - 1) * u[n - 1];
            }
            if n + 1 < d {
                r += off_want(n) * u[n + 1];
            }
            rec_dev = rec_dev.max(r.abs() / (1.0 + lambda.abs()));
        }
    }
    Ok((entries, check("eigenvector recurrence", rec_dev, 1e-8)))
}

/// Reproducing kernel in closed form,
/// `K(zbar, w) = (1 + zbar w / (p(1-p)))^{v1} / v1!`, at twenty seeded
/// argument pairs.
fn krawtchouk_kernel_check(sector: &Sector, p: f64, v1: i64, seed: u64) -> Result<GoldenCheck> {
    let g0sq = p * (1.0 - p);
    let radius = 2.0 * g0sq.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let sample = |rng: &mut ChaCha8Rng| {
        Complex64::from_polar(
            radius * rng.gen::<f64>(),
            2.0 * std::f64::consts::PI * rng.gen::<f64>(),
        )
    };
    let norm = factorial(v1 as usize);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let zbar = sample(&mut rng).conj();
        let w = sample(&mut rng);
        let got = kernel_eval(sector, zbar, w)?;
        let want = (Complex64::from(1.0) + zbar * w / g0sq).powu(v1 as u32) / norm;
        worst = worst.max((got - want).norm() / (1.0 + want.norm()));
    }
    Ok(check("kernel closed form", worst, 1e-12))
}

/// The sector ladder built from the quantum coupling expression must
/// match the directly-assembled deformed ladder.
fn deformed_ladder_check(sector: &Sector, q: f64, alpha: f64, hbar: f64) -> Result<GoldenCheck> {
    let trunc = sector
        .truncation()
        .expect("deformed sectors are always walled");
    let qops = q_operators(&QDeformedSpec::new(q, alpha)?, hbar, trunc)?;
    let g = sector.g_seq()?;
    let mut worst = 0.0f64;
    for (a, b) in g.iter().zip(&qops.g_seq) {
        worst = worst.max((a - b).abs() / (1.0 + b.abs()));
    }
    Ok(check("deformed ladder agreement", worst, 1e-12))
}
