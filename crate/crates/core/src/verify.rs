//! End-to-end validation runners, one per numbered acceptance gate.
//!
//! Each runner builds the systems it needs from [`crate::presets`],
//! measures the deviations its gate cares about against independent
//! closed forms, and returns a [`CriterionReport`] whose check lines are
//! the same [`GoldenCheck`] records the preset suites use. The
//! integration suite and the `verify-all` subcommand both consume these,
//! so a gate can never drift between the two.
//!
//! One gate fails by mathematics rather than by implementation: the
//! lowest eigenvalues of the walled Laguerre recurrence operator are not
//! stable under truncation doubling (gate 11). That operator is the
//! Jacobi operator of the Laguerre weight, whose spectrum on the half
//! line is purely continuous; the eigenvalues of a truncation are
//! orthogonal-polynomial zeros, which refine toward the continuum like
//! O(1/dim) instead of settling. The runner keeps the stated 1e-8 gate
//! and reports the honest shift (2e-2 for the ground level, order one by
//! the twentieth) rather than loosening the check.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classical::{
    integrate_quadrature, integrate_reduced, integrate_reduced_with, ReducedSystem,
    TrajectoryStatus,
};
use crate::coherent::kernel_eval;
use crate::error::{KummerError, Result};
use crate::measure::{build_measure, q_measure_check, resolution_check};
use crate::presets::{build_preset, check, preset_spec, shrinking_family, GoldenCheck, Preset};
use crate::quantum::{
    evolve_with, heisenberg_evolve, nazero_residual, operator_norm, q_operators,
    reduced_hamiltonian, reduced_operators, verify_q_relations, QDeformedSpec,
};
use crate::special::{bessel_k, factorial};
use crate::star::{limit_bracket, operator_symbol, star_product, Symbol, SymbolPolynomial};

pub const CRITERION_COUNT: usize = 11;

/// Outcome of one acceptance gate: its check lines, all of which must
/// pass.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub number: usize,
    pub name: &'static str,
    pub checks: Vec<GoldenCheck>,
}

impl CriterionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check, `PASS`/`FAIL` with the measured deviation.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "criterion {:2} {:<45} {}",
            self.number,
            self.name,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        for c in &self.checks {
            out.push_str(&format!(
                "\n    {:<52} {:9.3e} against {:9.3e}  {}",
                c.name,
                c.deviation,
                c.tolerance,
                if c.passed { "ok" } else { "FAILED" }
            ));
        }
        out
    }
}

pub fn criterion_name(number: usize) -> &'static str {
    match number {
        1 => "ladder relations across systems",
        2 => "kernel closed form",
        3 => "density Bessel identity",
        4 => "resolution of identity",
        5 => "classical conservation and closed-form flows",
        6 => "trajectories stay on the shape intersection",
        7 => "star product route agreement",
        8 => "classical limit of the bracket",
        9 => "Heisenberg equations of motion",
        10 => "deformed exchange relations",
        11 => "spectral stability under truncation doubling",
        _ => "unknown",
    }
}

pub fn run_criterion(number: usize, seed: u64) -> Result<CriterionReport> {
    let checks = match number {
        1 => relations_gate()?,
        2 => kernel_gate(seed)?,
        3 => density_gate()?,
        4 => moments_gate()?,
        5 => conservation_gate()?,
        6 => on_shape_gate(seed)?,
        7 => star_gate()?,
        8 => limit_gate()?,
        9 => heisenberg_gate()?,
        10 => deformed_gate()?,
        11 => spectral_stability_gate()?,
        _ => {
            return Err(KummerError::InvalidParameter(format!(
                "criterion number must lie in 1..={CRITERION_COUNT}, got {number}"
            )))
        }
    };
    Ok(CriterionReport {
        number,
        name: criterion_name(number),
        checks,
    })
}

/// Run every gate. The runners are independent, so they execute in
/// parallel; the report order is fixed regardless.
pub fn run_all(seed: u64) -> Result<Vec<CriterionReport>> {
    (1..=CRITERION_COUNT)
        .into_par_iter()
        .map(|n| run_criterion(n, seed))
        .collect()
}

/// Gate 1: the four defining relation residuals, relative to `|A|^2`, on
/// every realization, each built and verified in under a second.
fn relations_gate() -> Result<Vec<GoldenCheck>> {
    let cases: [(&str, Preset, f64, Vec<i64>, Option<usize>); 5] = [
        ("laguerre", Preset::Laguerre, 0.5, vec![0, 4], Some(200)),
        ("krawtchouk v1=1", Preset::Krawtchouk { p: 0.3 }, 1.0, vec![0, 1], None),
        ("krawtchouk v1=5", Preset::Krawtchouk { p: 0.3 }, 1.0, vec![0, 5], None),
        ("krawtchouk v1=20", Preset::Krawtchouk { p: 0.3 }, 1.0, vec![0, 20], None),
        (
            "q-weyl",
            Preset::QWeyl { q: 0.5, alpha: 1.0 },
            0.5,
            vec![0],
            Some(200),
        ),
    ];
    let mut checks = Vec::new();
    for (label, preset, hbar, vacuum, trunc) in cases {
        let start = Instant::now();
        let (_, sector) = build_preset(&preset, hbar, &vacuum, trunc)?;
        let report = crate::quantum::verify_relations(&sector, 1e-12)?;
        let elapsed = start.elapsed().as_secs_f64();
        checks.push(check(
            &format!("{label} relation residuals"),
            report.worst() / report.scale,
            1e-12,
        ));
        checks.push(check(&format!("{label} runtime (s)"), elapsed, 1.0));
    }
    Ok(checks)
}

/// Gate 2: the finite two-mode kernel against its binomial closed form
/// at 100 seeded argument pairs.
fn kernel_gate(seed: u64) -> Result<Vec<GoldenCheck>> {
    let p = 0.3f64;
    let g0sq = p * (1.0 - p);
    let radius = 2.0 * g0sq.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65_726e);
    let mut checks = Vec::new();
    for v1 in [5i64, 20] {
        let (_, sector) = build_preset(&Preset::Krawtchouk { p }, 1.0, &[0, v1], None)?;
        let norm = factorial(v1 as usize);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let z = Complex64::from_polar(
                radius * rng.gen::<f64>(),
                2.0 * std::f64::consts::PI * rng.gen::<f64>(),
            );
            let w = Complex64::from_polar(
                radius * rng.gen::<f64>(),
                2.0 * std::f64::consts::PI * rng.gen::<f64>(),
            );
            let got = kernel_eval(&sector, z.conj(), w)?;
            let want = (Complex64::from(1.0) + z.conj() * w / g0sq).powu(v1 as u32) / norm;
            worst = worst.max((got - want).norm() / (1.0 + want.norm()));
        }
        checks.push(check(&format!("kernel closed form v1={v1}"), worst, 1e-12));
    }
    Ok(checks)
}

/// Gate 3: the hyperbolic two-mode density against
/// `t^{v/2} K_v(2 sqrt t) / pi` on a 20-point grid per vacuum, within
/// ten seconds overall.
fn density_gate() -> Result<Vec<GoldenCheck>> {
    let start = Instant::now();
    let mut checks = Vec::new();
    for v in [0i64, 1, 2, 5] {
        let (spec, sector) = build_preset(&Preset::Laguerre, 1.0, &[0, v], Some(40))?;
        let density = build_measure(&sector, &spec)?;
        let ratio = (8.0f64 / 0.05).powf(1.0 / 19.0);
        let mut worst = 0.0f64;
        let mut t = 0.05f64;
        for _ in 0..20 {
            let want = t.powf(v as f64 / 2.0) * bessel_k(v as f64, 2.0 * t.sqrt())?
                / std::f64::consts::PI;
            let got = density.eval(t)?;
            worst = worst.max((got - want).abs() / want);
            t *= ratio;
        }
        checks.push(check(&format!("Bessel density v1={v}"), worst, 1e-8));
    }
    checks.push(check(
        "density runtime (s)",
        start.elapsed().as_secs_f64(),
        10.0,
    ));
    Ok(checks)
}

/// Gate 4: the measure moments must invert the kernel coefficients: the
/// terminating rational density exactly, the Bessel density through
/// quadrature, the deformed system through its atomic measure.
fn moments_gate() -> Result<Vec<GoldenCheck>> {
    let (kspec, ksector) = build_preset(&Preset::Krawtchouk { p: 0.3 }, 1.0, &[0, 5], None)?;
    let (lspec, lsector) = build_preset(&Preset::Laguerre, 1.0, &[0, 2], Some(40))?;
    let qdev = q_measure_check(&QDeformedSpec::new(0.5, 1.0)?, 0.5, 8)?;
    Ok(vec![
        check(
            "terminating moments n<=5",
            resolution_check(&ksector, &kspec, 5)?,
            1e-12,
        ),
        check(
            "Bessel moments n<=10",
            resolution_check(&lsector, &lspec, 10)?,
            1e-8,
        ),
        check("atomic moments n<=8", qdev, 1e-8),
    ])
}

/// Gate 5: conserved quantities along the hyperbolic escape over
/// `t in [0, 10]`, the quadrature route against the time-stepped route,
/// and the finite two-mode flow against its rotation closed form.
fn conservation_gate() -> Result<Vec<GoldenCheck>> {
    let mut checks = Vec::new();

    let spec = preset_spec(&Preset::Laguerre, 1.0)?;
    let c = [1.0];
    let traj = integrate_reduced(&spec, &c, 2.0, std::f64::consts::FRAC_PI_2, 10.0, None)?;
    let scale = 1.0 + traj.energy.abs();
    let e_drift = traj.energy_drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c_drift = traj
        .casimir_drift
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    checks.push(check("energy conservation", e_drift / scale, 1e-8));
    checks.push(check("Casimir conservation", c_drift / scale, 1e-8));

    let quad = integrate_quadrature(&spec, &c, traj.energy, 2.0, 1.0, 10.0)?;
    let mut q_dev = f64::INFINITY;
    if traj.status == TrajectoryStatus::Completed && quad.times == traj.times {
        q_dev = quad
            .i0
            .iter()
            .zip(&traj.i0)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    }
    checks.push(check("quadrature vs time stepping", q_dev, 1e-6));

    let p = 0.3;
    let spec = preset_spec(&Preset::Krawtchouk { p }, 1.0)?;
    let (c1, i0_init, psi_init) = (1.0, 0.2, 1.1);
    let traj = integrate_reduced(&spec, &[c1], i0_init, psi_init, 10.0, None)?;
    let h = 1.0 - 2.0 * p;
    let b = 2.0 * p * (1.0 - p);
    let m = [[0.0, -h, 0.0], [h, 0.0, -b], [0.0, 2.0, 0.0]];
    let mul = |mat: &[[f64; 3]; 3], v: [f64; 3]| {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i] += mat[i][j] * v[j];
            }
        }
        out
    };
    let g0 = p * (1.0 - p) * (c1 * c1 - i0_init * i0_init);
    let u0 = [
        g0.sqrt() * psi_init.cos(),
        g0.sqrt() * psi_init.sin(),
        i0_init,
    ];
    let mu = mul(&m, u0);
    let m2u = mul(&m, mu);
    let mut worst = 0.0f64;
    for (j, &t) in traj.times.iter().enumerate() {
        for (axis, series) in [(0, &traj.x), (1, &traj.y), (2, &traj.i0)] {
            let want = u0[axis] + mu[axis] * t.sin() + m2u[axis] * (1.0 - t.cos());
            worst = worst.max((series[j] - want).abs());
        }
    }
    checks.push(check("rotation closed form", worst, 1e-8));
    Ok(checks)
}

/// Gate 6: five seeded initial conditions per system; along every
/// trajectory the Casimir stays at zero and the energy at its initial
/// value, so the motion never leaves the shape-plane intersection.
fn on_shape_gate(seed: u64) -> Result<Vec<GoldenCheck>> {
    let three_wave_c = build_preset(&Preset::ThreeWave, 1.0, &[0, 12, 18], None)?
        .1
        .constants()
        .to_vec();
    let cases: [(&str, Preset, Vec<f64>); 4] = [
        ("laguerre", Preset::Laguerre, vec![0.7]),
        ("krawtchouk", Preset::Krawtchouk { p: 0.3 }, vec![1.5]),
        ("q-weyl", Preset::QWeyl { q: 0.5, alpha: 1.0 }, vec![]),
        ("three-wave", Preset::ThreeWave, three_wave_c),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7368_6170);
    let mut checks = Vec::new();
    for (label, preset, c) in cases {
        let spec = preset_spec(&preset, 1.0)?;
        let sys = ReducedSystem::new(&spec, &c)?;
        let bounds = sys.bounds();
        let lo = bounds.lower;
        let hi = if bounds.upper.is_finite() {
            bounds.upper
        } else {
            lo + 5.0 * (1.0 + lo.abs())
        };
        // The gate is absolute while the three-mode structural values run
        // to hundreds, so the stepper gets a tighter local tolerance than
        // its default.
        let opts = crate::ode::OdeOptions {
            rtol: 1e-12,
            atol: 1e-12,
            ..Default::default()
        };
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let i0 = lo + (hi - lo) * (0.08 + 0.84 * rng.gen::<f64>());
            let psi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
            let traj = integrate_reduced_with(&spec, &c, i0, psi, 10.0, None, &opts)?;
            for (e, cas) in traj.energy_drift.iter().zip(&traj.casimir_drift) {
                worst = worst.max(e.abs()).max(cas.abs());
            }
        }
        checks.push(check(&format!("{label} stays on shape"), worst, 1e-7));
    }
    Ok(checks)
}

/// Gate 7: the shift-derivative route against the matrix route for every
/// monomial symbol pair up to degree three, on each system carrying a
/// sector realization. The evaluation points sit where the state's top
/// ladder mass is negligible, so the closed formula's implicit
/// eigen-replacements cost nothing.
fn star_gate() -> Result<Vec<GoldenCheck>> {
    let cases: [(&str, Preset, f64, Vec<i64>, Option<usize>, Complex64); 3] = [
        (
            "laguerre",
            Preset::Laguerre,
            0.5,
            vec![0, 4],
            Some(200),
            Complex64::new(0.6, 0.3),
        ),
        (
            "krawtchouk",
            Preset::Krawtchouk { p: 0.3 },
            1.0,
            vec![0, 20],
            None,
            Complex64::new(0.28, -0.15),
        ),
        (
            "three-wave",
            Preset::ThreeWave,
            1.0,
            vec![0, 12, 18],
            None,
            Complex64::from_polar(0.7, 1.3),
        ),
    ];
    let monomials: Vec<(usize, usize)> = (0..=3usize)
        .flat_map(|a| (0..=3usize - a).map(move |b| (a, b)))
        .collect();
    let mut checks = Vec::new();
    for (label, preset, hbar, vacuum, trunc, z) in cases {
        let (_, sector) = build_preset(&preset, hbar, &vacuum, trunc)?;
        let mut worst = 0.0f64;
        for &(a, b) in &monomials {
            let f = SymbolPolynomial::monomial(a, b);
            for &(c, e) in &monomials {
                let g = SymbolPolynomial::monomial(c, e);
                let direct = star_product(&sector, &f, &g, z)?;
                let matrix = operator_symbol(
                    &sector,
                    &Symbol::Poly(f.clone()),
                    &Symbol::Poly(g.clone()),
                    z,
                )?;
                worst = worst.max((direct - matrix).norm() / (1.0 + matrix.norm()));
            }
        }
        checks.push(check(&format!("{label} routes agree"), worst, 1e-10));
    }
    Ok(checks)
}

/// Gate 8: Richardson-extrapolated commutator brackets along shrinking
/// families recover `{I0, z} = i z` and `{z, zbar} = -i dG0/dI0`, the
/// latter at first order in the step.
fn limit_gate() -> Result<Vec<GoldenCheck>> {
    let z_sym = || Symbol::Poly(SymbolPolynomial::monomial(0, 1));
    let zbar_sym = || Symbol::Poly(SymbolPolynomial::monomial(1, 0));
    let mut checks = Vec::new();

    // Hyperbolic family: c1 = 0.5, G0 = I0^2 - c1^2, slope 2 I0* at the
    // level |z|^2 = G0(I0*).
    let family = shrinking_family(&Preset::Laguerre, 0.125, &[0, 8], Some(48), 5)?;
    let z = Complex64::from_polar(0.5f64.sqrt(), 1.1);
    let action = limit_bracket(&family, &Symbol::Action0, &z_sym(), z)?;
    checks.push(check(
        "laguerre {I0,z} limit",
        (action.limit - Complex64::i() * z).norm(),
        1e-3,
    ));
    let field = limit_bracket(&family, &z_sym(), &zbar_sym(), z)?;
    let i0_star = (z.norm_sqr() + 0.25).sqrt();
    checks.push(check(
        "laguerre {z,zbar} limit",
        (field.limit - Complex64::new(0.0, -2.0 * i0_star)).norm(),
        1e-3,
    ));
    checks.push(check(
        "laguerre {z,zbar} order",
        field.order.map_or(f64::INFINITY, |o| (o - 1.0).abs()),
        0.2,
    ));

    // Elliptic family: same c1, G0 = p(1-p)(c1^2 - I0^2); the state
    // climbs the increasing flank, so I0* is the negative root. The
    // family starts at a smaller step than the hyperbolic one because the
    // quadratic correction to the difference ratios is steeper here and
    // the order fit needs the asymptotic regime.
    let p = 0.3;
    let family = shrinking_family(&Preset::Krawtchouk { p }, 0.0625, &[0, 16], None, 6)?;
    let z = Complex64::from_polar(0.02f64.sqrt(), 0.4);
    let action = limit_bracket(&family, &Symbol::Action0, &z_sym(), z)?;
    checks.push(check(
        "krawtchouk {I0,z} limit",
        (action.limit - Complex64::i() * z).norm(),
        1e-3,
    ));
    let field = limit_bracket(&family, &z_sym(), &zbar_sym(), z)?;
    let i0_star = -(0.25 - z.norm_sqr() / (p * (1.0 - p))).sqrt();
    let want = Complex64::new(0.0, 2.0 * p * (1.0 - p) * i0_star);
    checks.push(check(
        "krawtchouk {z,zbar} limit",
        (field.limit - want).norm(),
        1e-3,
    ));
    checks.push(check(
        "krawtchouk {z,zbar} order",
        field.order.map_or(f64::INFINITY, |o| (o - 1.0).abs()),
        0.2,
    ));
    Ok(checks)
}

/// Gate 9: central finite differences of the evolved operators obey the
/// three equations of motion, and the shape identity stays flat, at
/// `t in {0, 0.5, 1}` on the eleven-state elliptic system.
fn heisenberg_gate() -> Result<Vec<GoldenCheck>> {
    let p = 0.3;
    let (spec, sector) = build_preset(&Preset::Krawtchouk { p }, 1.0, &[0, 10], None)?;
    let ops = reduced_operators(&sector)?;
    let h = reduced_hamiltonian(&sector, &spec)?;
    let hbar = sector.hbar();
    let hsq = h.norm()?.powi(2);

    let a0c = ops.a0.to_complex();
    let xc = ops.x.to_complex();
    let dt = 1e-5;
    let fd = |op: &ndarray::Array2<Complex64>, t: f64| -> Result<ndarray::Array2<Complex64>> {
        let plus = evolve_with(&h, hbar, op, t + dt)?;
        let minus = evolve_with(&h, hbar, op, t - dt)?;
        Ok((plus - minus).mapv(|v| v / (2.0 * dt)))
    };

    let mut fd_worst = 0.0f64;
    let mut shape_worst = 0.0f64;
    for t in [0.0, 0.5, 1.0] {
        let a0_t = evolve_with(&h, hbar, &a0c, t)?;
        let x_t = evolve_with(&h, hbar, &xc, t)?;
        let y_t = heisenberg_evolve(&sector, &spec, &ops.y, t)?;

        let r1 = fd(&a0c, t)? - y_t.mapv(|v| v * 2.0);
        let r2 = fd(&xc, t)? + y_t.mapv(|v| v * (1.0 - 2.0 * p));
        let r3 = fd(&ops.y, t)? - x_t.mapv(|v| v * (1.0 - 2.0 * p))
            + a0_t.mapv(|v| v * (2.0 * p * (1.0 - p)));
        for r in [&r1, &r2, &r3] {
            fd_worst = fd_worst.max(operator_norm(&r.view()));
        }
        shape_worst = shape_worst.max(nazero_residual(&sector, &spec, t)? / hsq);
    }
    Ok(vec![
        check("finite-difference equations of motion", fd_worst, 1e-6),
        check("shape identity residual", shape_worst, 1e-6),
    ])
}

/// Gate 10: the deformed exchange relation holds to rounding on the
/// interior block, and the ladder reverts to `hbar (n+1)` as the base
/// approaches one.
fn deformed_gate() -> Result<Vec<GoldenCheck>> {
    let hbar = 0.5;
    let ops = q_operators(&QDeformedSpec::new(0.5, 1.0)?, hbar, 200)?;
    let report = verify_q_relations(&ops, 1e-12);

    let near_one = q_operators(&QDeformedSpec::new(1.0 - 1e-6, 1.0)?, hbar, 21)?;
    let mut recovery = 0.0f64;
    for (n, &g) in near_one.g_seq.iter().take(21).enumerate() {
        let want = hbar * (n as f64 + 1.0);
        recovery = recovery.max((g - want).abs() / want);
    }
    Ok(vec![
        check(
            "deformed exchange relations",
            report.worst() / report.scale,
            1e-12,
        ),
        check("undeformed ladder recovery", recovery, 1e-5),
    ])
}

/// Gate 11: eigenvalue stability of the hyperbolic recurrence operator
/// under truncation doubling. The identification with the
/// orthogonal-polynomial recurrence holds entrywise to rounding, but the
/// doubling gate itself cannot: this is the Jacobi operator of the
/// Laguerre weight, its spectrum on the half line is continuous, and
/// truncation eigenvalues are polynomial zeros that refine toward that
/// continuum at O(1/dim). The ground level therefore shifts by about
/// 2e-2 here and the twentieth by order one, and the check reports that
/// honestly instead of widening the gate.
fn spectral_stability_gate() -> Result<Vec<GoldenCheck>> {
    let hbar = 0.5;
    let v = 4i64;
    let (spec, coarse) = build_preset(&Preset::Laguerre, hbar, &[0, v], Some(200))?;
    let (_, fine) = build_preset(&Preset::Laguerre, hbar, &[0, v], Some(400))?;
    let h_coarse = reduced_hamiltonian(&coarse, &spec)?;
    let h_fine = reduced_hamiltonian(&fine, &spec)?;

    let mut entry_dev = 0.0f64;
    for (h, d) in [(&h_coarse, 200usize), (&h_fine, 400)] {
        for n in 0..d {
            let diag = hbar * (v as f64 + 2.0 * n as f64 + 1.0);
            entry_dev = entry_dev.max((h.diag()[n] - diag).abs() / (1.0 + diag));
            if n + 1 < d {
                let off = hbar * ((n as f64 + 1.0) * (v as f64 + n as f64 + 1.0)).sqrt();
                entry_dev = entry_dev.max((h.off()[n] - off).abs() / (1.0 + off));
            }
        }
    }

    let sp_coarse = h_coarse.spectrum()?;
    let sp_fine = h_fine.spectrum()?;
    let mut shift = 0.0f64;
    for k in 0..20 {
        shift = shift.max((sp_coarse.eigenvalues[k] - sp_fine.eigenvalues[k]).abs());
    }
    Ok(vec![
        check("recurrence entries at both truncations", entry_dev, 1e-12),
        check("lowest 20 eigenvalues under doubling", shift, 1e-8),
    ])
}
