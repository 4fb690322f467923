//! Classical reduction: action-angle coordinates, the cone section, reduced
//! equations of motion (direct integration and quadrature), shape sampling,
//! angle reconstruction, and the Nambu-type bracket.
//!
//! With the constants `c = (I_1, .., I_N)` frozen, the dynamics lives on the
//! `(I_0, psi_0)` half-cylinder or, equivalently, on the surface of
//! revolution `x^2 + y^2 = G_0(I_0)` in `(x, y, I_0)`. The Hamiltonian in
//! those variables is always `H_0(I_0) + 2x`, so level sets are planes and
//! trajectories are plane sections of the shape.

use num_complex::Complex64;

use crate::algebra::SystemSpec;
use crate::error::{KummerError, Result};
use crate::expr::Expr;
use crate::ode::{self, OdeOptions, OdeStatus};
use crate::quad;

/// Actions and angles of all `N+1` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionAngleState {
    pub actions: Vec<f64>,
    pub angles: Vec<f64>,
}

/// Map oscillator amplitudes to sector coordinates: `I_k = sum_j rho_kj
/// |z_j|^2`, `psi_l = sum_j kappa_jl arg(z_j)`. Defined away from the
/// coordinate axes only.
pub fn to_action_angle(spec: &SystemSpec, z: &[Complex64]) -> Result<ActionAngleState> {
    let n = spec.n_modes();
    if z.len() != n {
        return Err(KummerError::InvalidParameter(format!(
            "expected {} amplitudes, got {}",
            n,
            z.len()
        )));
    }
    for (k, zk) in z.iter().enumerate() {
        if zk.norm_sqr() == 0.0 {
            return Err(KummerError::OutsideOmega(format!(
                "mode {} has zero modulus",
                k
            )));
        }
    }
    let rho = spec.rho();
    let kappa = spec.kappa();
    let sq: Vec<f64> = z.iter().map(|zk| zk.norm_sqr()).collect();
    let ph: Vec<f64> = z.iter().map(|zk| zk.arg()).collect();
    let actions = (0..n)
        .map(|k| (0..n).map(|j| rho[[k, j]] * sq[j]).sum())
        .collect();
    // Angles pair against the columns of kappa.
    let angles = (0..n)
        .map(|l| (0..n).map(|j| kappa[[j, l]] * ph[j]).sum())
        .collect();
    Ok(ActionAngleState { actions, angles })
}

/// Inverse of [`to_action_angle`]: `|z_j|^2 = (kappa I)_j` and `phi_j = sum_l
/// rho_lj psi_l`. Requires the action vector to sit inside the cone.
pub fn from_action_angle(spec: &SystemSpec, state: &ActionAngleState) -> Result<Vec<Complex64>> {
    let n = spec.n_modes();
    if state.actions.len() != n || state.angles.len() != n {
        return Err(KummerError::InvalidParameter(
            "action and angle vectors must both have length N+1".into(),
        ));
    }
    let x = spec.oscillator_actions(state.actions[0], &state.actions[1..]);
    if x.iter().any(|&v| v <= 0.0) {
        return Err(KummerError::OutsideCone(format!(
            "actions {:?} map to non-positive mode intensities",
            state.actions
        )));
    }
    let rho = spec.rho();
    Ok((0..n)
        .map(|j| {
            let phi: f64 = (0..n).map(|l| rho[[l, j]] * state.angles[l]).sum();
            Complex64::from_polar(x[j].sqrt(), phi)
        })
        .collect())
}

/// Open interval of admissible `I_0` for fixed constants `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeBounds {
    pub lower: f64,
    /// `f64::INFINITY` when no exponent is negative.
    pub upper: f64,
}

/// Section of the cone at `c`: each mode intensity `l_i I_0 + d_i` with
/// `d_i = (kappa (0, c))_i` must stay positive, which pins `I_0` between the
/// positive-exponent constraints (below) and negative-exponent ones (above).
pub fn cone_bounds(spec: &SystemSpec, c: &[f64]) -> Result<ConeBounds> {
    let d = spec.oscillator_actions(0.0, c);
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for (i, &li) in spec.l().iter().enumerate() {
        if li > 0 {
            lower = lower.max(-d[i] / li as f64);
        } else if li < 0 {
            upper = upper.min(d[i] / -li as f64);
        } else if d[i] <= 0.0 {
            // A decoupled mode contributes a constant intensity; if that is
            // not positive no I_0 can fix it.
            return Err(KummerError::EmptyReducedSpace(format!(
                "mode {} has constant intensity {:.6e}",
                i, d[i]
            )));
        }
    }
    if lower >= upper {
        return Err(KummerError::EmptyReducedSpace(format!(
            "cone section is empty: lower bound {:.6e} >= upper bound {:.6e}",
            lower, upper
        )));
    }
    Ok(ConeBounds { lower, upper })
}

/// One-variable view of a sector: `G_0`, `H_0` and their exact derivatives
/// as functions of `I_0` alone, with the constants baked in.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    g: Expr,
    dg: Expr,
    h: Expr,
    dh: Expr,
    bounds: ConeBounds,
    c: Vec<f64>,
}

impl ReducedSystem {
    pub fn new(spec: &SystemSpec, c: &[f64]) -> Result<ReducedSystem> {
        let bounds = cone_bounds(spec, c)?;
        let mut subs = vec![Expr::arg(0)];
        for &ck in c {
            subs.push(Expr::constant(ck));
        }
        let g = spec.structural_expr().substitute(&subs);
        let h = spec.free_part_expr().substitute(&subs);
        let dg = g.diff(0);
        let dh = h.diff(0);
        Ok(ReducedSystem {
            g,
            dg,
            h,
            dh,
            bounds,
            c: c.to_vec(),
        })
    }

    pub fn bounds(&self) -> ConeBounds {
        self.bounds
    }

    pub fn constants(&self) -> &[f64] {
        &self.c
    }

    /// `G_0(I_0)`.
    pub fn g(&self, i0: f64) -> f64 {
        self.g.eval(&[i0])
    }

    /// `dG_0/dI_0`, from the expression tree, not finite differences.
    pub fn dg(&self, i0: f64) -> f64 {
        self.dg.eval(&[i0])
    }

    /// `H_0(I_0)`.
    pub fn h0(&self, i0: f64) -> f64 {
        self.h.eval(&[i0])
    }

    /// `dH_0/dI_0`.
    pub fn dh0(&self, i0: f64) -> f64 {
        self.dh.eval(&[i0])
    }

    /// Reduced Hamiltonian `H_0(I_0) + 2 sqrt(G_0) cos(psi_0)`.
    pub fn hamiltonian(&self, i0: f64, psi0: f64) -> f64 {
        self.h0(i0) + 2.0 * self.g(i0).sqrt() * psi0.cos()
    }

    /// `G_0` as a one-variable expression in `I_0`.
    pub fn structural_expr(&self) -> &Expr {
        &self.g
    }

    /// `H_0` as a one-variable expression in `I_0`.
    pub fn free_expr(&self) -> &Expr {
        &self.h
    }

    /// Casimir of the shape algebra as an expression over `(x, y, I_0)`.
    pub fn casimir_expr(&self) -> Expr {
        let radial = Expr::add(
            Expr::pow(Expr::arg(0), 2),
            Expr::pow(Expr::arg(1), 2),
        );
        let g_of_i0 = self.g.substitute(&[Expr::arg(2)]);
        Expr::mul(Expr::constant(-0.5), Expr::sub(radial, g_of_i0))
    }

    /// Hamiltonian as an expression over `(x, y, I_0)`: `H_0(I_0) + 2x`.
    pub fn hamiltonian_xyi_expr(&self) -> Expr {
        Expr::add(
            self.h.substitute(&[Expr::arg(2)]),
            Expr::mul(Expr::constant(2.0), Expr::arg(0)),
        )
    }

    /// Right-hand side of the reduced equations:
    /// `dI_0/dt = 2 sqrt(G_0) sin(psi_0)`,
    /// `dpsi_0/dt = H_0' + G_0' cos(psi_0) / sqrt(G_0)`.
    pub fn rhs(&self, i0: f64, psi0: f64) -> Result<(f64, f64)> {
        let g = self.g(i0);
        if g <= 0.0 {
            return Err(KummerError::OnBoundary(format!(
                "G_0(I_0 = {:.6e}) = {:.6e}",
                i0, g
            )));
        }
        let sg = g.sqrt();
        let di0 = 2.0 * sg * psi0.sin();
        let dpsi = self.dh0(i0) + self.dg(i0) * psi0.cos() / sg;
        Ok((di0, dpsi))
    }
}

/// Reduced equations of motion at a single point. Convenience wrapper that
/// builds the one-variable view and evaluates it once.
pub fn reduced_rhs(spec: &SystemSpec, c: &[f64], i0: f64, psi0: f64) -> Result<(f64, f64)> {
    ReducedSystem::new(spec, c)?.rhs(i0, psi0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryStatus {
    Completed,
    /// Integration stopped early because `G_0` fell to the shape boundary;
    /// the trajectory is truncated at the reported time.
    BoundaryReached { t: f64 },
}

impl TrajectoryStatus {
    pub fn describe(&self) -> String {
        match self {
            TrajectoryStatus::Completed => "completed".into(),
            TrajectoryStatus::BoundaryReached { t } => {
                format!("shape boundary reached at t = {:.6e}", t)
            }
        }
    }
}

/// Sampled reduced trajectory with conserved-quantity logs.
///
/// `energy_drift[k] = H(t_k) - H(0)`. `casimir_drift[k]` evaluates the
/// Casimir at the mixed point `(x, y, I_0) = ((E - H_0)/2, sqrt(G_0) sin
/// psi_0, I_0)`, which combines the energy route for `x` with the angle
/// route for `y`; it vanishes identically on the exact flow and measures
/// accumulated integration error on the numerical one.
#[derive(Debug, Clone)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub i0: Vec<f64>,
    pub psi0: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub energy_drift: Vec<f64>,
    pub casimir_drift: Vec<f64>,
    pub energy: f64,
    pub status: TrajectoryStatus,
}

fn sample_times(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt).ceil().max(1.0) as usize;
    let mut ts: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    if t_end - ts[n - 1] > 1e-9 * t_end {
        ts.push(t_end);
    } else {
        ts[n - 1] = t_end;
    }
    ts
}

fn default_dt(t_end: f64) -> f64 {
    (t_end / 1000.0).min(0.01)
}

/// Integrate the reduced equations with an adaptive embedded 5(4) pair.
pub fn integrate_reduced(
    spec: &SystemSpec,
    c: &[f64],
    i0_init: f64,
    psi0_init: f64,
    t_end: f64,
    dt_hint: Option<f64>,
) -> Result<ReducedTrajectory> {
    integrate_reduced_with(spec, c, i0_init, psi0_init, t_end, dt_hint, &OdeOptions::default())
}

/// Variant with explicit integrator options (used by the self-check that
/// re-runs at a halved tolerance).
pub fn integrate_reduced_with(
    spec: &SystemSpec,
    c: &[f64],
    i0_init: f64,
    psi0_init: f64,
    t_end: f64,
    dt_hint: Option<f64>,
    opts: &OdeOptions,
) -> Result<ReducedTrajectory> {
    if !(t_end > 0.0) {
        return Err(KummerError::InvalidParameter(format!(
            "t_end must be positive, got {}",
            t_end
        )));
    }
    let sys = ReducedSystem::new(spec, c)?;
    let g_init = sys.g(i0_init);
    if g_init <= 0.0 {
        return Err(KummerError::OnBoundary(format!(
            "G_0(I_0 = {:.6e}) = {:.6e} at the initial point",
            i0_init, g_init
        )));
    }
    let energy = sys.hamiltonian(i0_init, psi0_init);
    let g_stop = 1e-12 * g_init.max(1.0);

    let dt = dt_hint.unwrap_or_else(|| default_dt(t_end));
    if !(dt > 0.0) {
        return Err(KummerError::InvalidParameter(format!(
            "dt hint must be positive, got {}",
            dt
        )));
    }
    let ts = sample_times(t_end, dt);

    let rhs = |_t: f64, yv: &[f64], dy: &mut [f64]| {
        let g = sys.g(yv[0]);
        let sg = g.sqrt();
        dy[0] = 2.0 * sg * yv[1].sin();
        dy[1] = sys.dh0(yv[0]) + sys.dg(yv[0]) * yv[1].cos() / sg;
    };
    let stop = |_t: f64, yv: &[f64]| sys.g(yv[0]) <= g_stop;
    let sol = ode::integrate(rhs, 0.0, &[i0_init, psi0_init], &ts, opts, stop)?;

    let mut out = ReducedTrajectory {
        times: sol.times,
        i0: Vec::new(),
        psi0: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        energy_drift: Vec::new(),
        casimir_drift: Vec::new(),
        energy,
        status: match sol.status {
            OdeStatus::Completed => TrajectoryStatus::Completed,
            OdeStatus::Stopped { t } => TrajectoryStatus::BoundaryReached { t },
        },
    };
    for state in &sol.states {
        let (i0, psi0) = (state[0], state[1]);
        let g = sys.g(i0).max(0.0);
        let sg = g.sqrt();
        let (x, y) = (sg * psi0.cos(), sg * psi0.sin());
        let x_energy = 0.5 * (energy - sys.h0(i0));
        out.i0.push(i0);
        out.psi0.push(psi0);
        out.x.push(x);
        out.y.push(y);
        out.energy_drift.push(sys.hamiltonian(i0, psi0) - energy);
        out.casimir_drift
            .push(-0.5 * (x_energy * x_energy + y * y - sys.g(i0)));
    }
    Ok(out)
}

/// Where a directional scan of the level function ended.
enum ScanOutcome {
    /// Simple root: motion turns around here.
    Turn(f64),
    /// The level function stayed positive out to the escape horizon.
    Escape,
}

/// Level-set view of the `I_0` motion at fixed energy: `(dI_0/dt)^2 = R(I_0)`
/// with `R = 4 G_0 - (E - H_0)^2`.
struct LevelSet<'a> {
    sys: &'a ReducedSystem,
    energy: f64,
    d2r: Expr,
}

impl<'a> LevelSet<'a> {
    fn new(sys: &'a ReducedSystem, energy: f64) -> LevelSet<'a> {
        let r_expr = Expr::sub(
            Expr::mul(Expr::constant(4.0), sys.g.clone()),
            Expr::pow(Expr::sub(Expr::constant(energy), sys.h.clone()), 2),
        );
        let d2r = r_expr.diff(0).diff(0);
        LevelSet { sys, energy, d2r }
    }

    fn r(&self, i0: f64) -> f64 {
        let w = self.energy - self.sys.h0(i0);
        4.0 * self.sys.g(i0) - w * w
    }

    fn dr(&self, i0: f64) -> f64 {
        let w = self.energy - self.sys.h0(i0);
        4.0 * self.sys.dg(i0) + 2.0 * w * self.sys.dh0(i0)
    }

    fn d2r(&self, i0: f64) -> f64 {
        self.d2r.eval(&[i0])
    }

    fn scale(&self, i0: f64) -> f64 {
        1.0f64
            .max(self.energy * self.energy)
            .max(4.0 * self.sys.g(i0).abs())
    }

    /// March from `from` toward `bound` looking for the first sign change of
    /// `R`; refine with Brent. An infinite bound is probed geometrically out
    /// to a large horizon and treated as escape beyond it.
    fn scan(&self, from: f64, bound: f64) -> Result<ScanOutcome> {
        let r_from = self.r(from);
        if bound.is_finite() {
            let steps = 256;
            let mut prev = from;
            let mut r_prev = r_from;
            for k in 1..=steps {
                let xq = from + (bound - from) * k as f64 / steps as f64;
                let r = self.r(xq);
                if r <= 0.0 {
                    if r == 0.0 {
                        return Ok(ScanOutcome::Turn(xq));
                    }
                    let root = quad::brent(|v| self.r(v), prev, xq)?;
                    return Ok(ScanOutcome::Turn(root));
                }
                prev = xq;
                r_prev = r;
            }
            // R must close up at a cone edge where G_0 vanishes; if rounding
            // kept it positive all the way, the edge itself is the turning
            // point.
            let _ = r_prev;
            Ok(ScanOutcome::Turn(bound))
        } else {
            let dir = if bound > 0.0 { 1.0 } else { -1.0 };
            let horizon = 1e7 * (1.0 + from.abs() + self.energy.abs());
            let mut step = 0.1 * (1.0 + from.abs());
            let mut prev = from;
            loop {
                let xq = prev + dir * step;
                if (xq - from).abs() > horizon {
                    return Ok(ScanOutcome::Escape);
                }
                let r = self.r(xq);
                if r <= 0.0 {
                    if r == 0.0 {
                        return Ok(ScanOutcome::Turn(xq));
                    }
                    let root = quad::brent(|v| self.r(v), prev, xq)?;
                    return Ok(ScanOutcome::Turn(root));
                }
                prev = xq;
                step *= 1.5;
            }
        }
    }

    /// Reject double roots: the period integral diverges there.
    fn check_simple(&self, root: f64) -> Result<()> {
        let span = 1.0 + root.abs();
        if self.dr(root).abs() * span < 1e-9 * self.scale(root) {
            return Err(KummerError::DegenerateTurningPoint(format!(
                "R'({:.6e}) = {:.3e}",
                root,
                self.dr(root)
            )));
        }
        Ok(())
    }

    /// Travel time between a turning point `r` and a point `target` on the
    /// allowed side (`dir = +1`: target above `r`; `dir = -1`: below). The
    /// substitution `I = r + dir u^2` absorbs the inverse-square-root
    /// singularity; subtracting `R(r)` removes the root-finder residue.
    /// Close to the turning point the difference quotient is cancellation
    /// noise, so a two-term Taylor form of the same quotient takes over.
    fn time_from_turn(&self, r: f64, dir: f64, target: f64) -> Result<f64> {
        let span = (target - r) * dir;
        if span <= 0.0 {
            return Ok(0.0);
        }
        let rr = self.r(r);
        let q1 = dir * self.dr(r);
        let q2 = 0.5 * self.d2r(r);
        let u_max = span.sqrt();
        let u_switch = 1e-3 * (1.0 + u_max);
        let integrand = |u: f64| {
            let qq = if u < u_switch {
                q1 + q2 * u * u
            } else {
                (self.r(r + dir * u * u) - rr) / (u * u)
            };
            2.0 / qq.max(0.0).sqrt()
        };
        quad::integrate(integrand, 0.0, u_max, 1e-11)
    }

    /// Travel time between two interior points with no turning point in
    /// between (the escape-both-ways case).
    fn time_plain(&self, from: f64, to: f64) -> Result<f64> {
        let lo = from.min(to);
        let hi = from.max(to);
        quad::integrate(|v| 1.0 / self.r(v).max(0.0).sqrt(), lo, hi, 1e-11)
    }
}

/// `I_0(t)` obtained by separating variables at fixed energy.
#[derive(Debug, Clone)]
pub struct QuadratureSolution {
    pub times: Vec<f64>,
    pub i0: Vec<f64>,
    /// Turning points bracketing the motion; `None` on an escaping side.
    pub lower_turn: Option<f64>,
    pub upper_turn: Option<f64>,
    /// Oscillation period; `None` when the motion is unbounded.
    pub period: Option<f64>,
}

/// Integrate the `I_0` motion by quadrature of `dt = dI_0 / sqrt(R)`,
/// sampling on the same default grid as [`integrate_reduced`].
/// `branch_sign` selects the initial sign of `dI_0/dt`.
pub fn integrate_quadrature(
    spec: &SystemSpec,
    c: &[f64],
    energy: f64,
    i0_init: f64,
    branch_sign: f64,
    t_end: f64,
) -> Result<QuadratureSolution> {
    if !(t_end > 0.0) {
        return Err(KummerError::InvalidParameter(format!(
            "t_end must be positive, got {}",
            t_end
        )));
    }
    let sys = ReducedSystem::new(spec, c)?;
    let bounds = sys.bounds();
    let ls = LevelSet::new(&sys, energy);
    let scale = ls.scale(i0_init);
    let r0 = ls.r(i0_init);
    if r0 < -1e-12 * scale {
        return Err(KummerError::EmptyLevelSet(format!(
            "R(I_0 = {:.6e}) = {:.6e} < 0 at the requested energy {:.6e}",
            i0_init, r0, energy
        )));
    }
    // Starting on a turning point is fine; starting on a double root means
    // the initial point is an equilibrium of the level set.
    if r0.abs() <= 1e-12 * scale && ls.dr(i0_init).abs() <= 1e-9 * scale {
        return Err(KummerError::DegenerateTurningPoint(format!(
            "initial point I_0 = {:.6e} is a critical level point",
            i0_init
        )));
    }
    let sign = if branch_sign >= 0.0 { 1.0 } else { -1.0 };

    let lower = match ls.scan(i0_init, bounds.lower)? {
        ScanOutcome::Turn(r) => {
            ls.check_simple(r)?;
            Some(r)
        }
        ScanOutcome::Escape => None,
    };
    let upper = match ls.scan(i0_init, bounds.upper)? {
        ScanOutcome::Turn(r) => {
            ls.check_simple(r)?;
            Some(r)
        }
        ScanOutcome::Escape => None,
    };

    let ts = sample_times(t_end, default_dt(t_end));
    let mut i0s = Vec::with_capacity(ts.len());

    match (lower, upper) {
        (Some(r1), Some(r2)) => {
            if r2 - r1 <= 1e-12 * (1.0 + r1.abs()) {
                return Err(KummerError::DegenerateTurningPoint(format!(
                    "turning points coincide at I_0 = {:.6e}",
                    r1
                )));
            }
            let mid = 0.5 * (r1 + r2);
            let half = ls.time_from_turn(r1, 1.0, mid)? + ls.time_from_turn(r2, -1.0, mid)?;
            let period = 2.0 * half;
            // Time from the lower turning point, moving up, to reach I.
            let t_up = |i: f64| -> Result<f64> {
                if i <= mid {
                    ls.time_from_turn(r1, 1.0, i)
                } else {
                    Ok(half - ls.time_from_turn(r2, -1.0, i)?)
                }
            };
            let t0 = t_up(i0_init)?;
            let theta0 = if sign > 0.0 { t0 } else { 2.0 * half - t0 };
            for &t in &ts {
                let mut theta = (theta0 + t) % period;
                if theta > half {
                    theta = period - theta;
                }
                let f = |i: f64| t_up(i).unwrap_or(f64::NAN) - theta;
                let i0 = if theta <= 0.0 {
                    r1
                } else if theta >= half {
                    r2
                } else {
                    quad::brent(f, r1, r2)?
                };
                i0s.push(i0);
            }
            Ok(QuadratureSolution {
                times: ts,
                i0: i0s,
                lower_turn: Some(r1),
                upper_turn: Some(r2),
                period: Some(period),
            })
        }
        (Some(r1), None) => {
            // Bounce once at r1 (if heading down), then escape upward.
            let t_up = |i: f64| ls.time_from_turn(r1, 1.0, i);
            let t0 = t_up(i0_init)?;
            for &t in &ts {
                let target = if sign > 0.0 { t0 + t } else { (t0 - t).abs() };
                i0s.push(invert_increasing(&t_up, r1, target)?);
            }
            Ok(QuadratureSolution {
                times: ts,
                i0: i0s,
                lower_turn: Some(r1),
                upper_turn: None,
                period: None,
            })
        }
        (None, Some(r2)) => {
            let t_down = |i: f64| ls.time_from_turn(r2, -1.0, i);
            let t0 = t_down(i0_init)?;
            for &t in &ts {
                let target = if sign < 0.0 { t0 + t } else { (t0 - t).abs() };
                let mirrored = invert_increasing(&|u: f64| t_down(r2 - (u - r2)), r2, target)?;
                i0s.push(r2 - (mirrored - r2));
            }
            Ok(QuadratureSolution {
                times: ts,
                i0: i0s,
                lower_turn: None,
                upper_turn: Some(r2),
                period: None,
            })
        }
        (None, None) => {
            // Strictly monotone forever in the chosen direction.
            let t_of = |i: f64| -> Result<f64> {
                if sign > 0.0 {
                    ls.time_plain(i0_init, i)
                } else {
                    ls.time_plain(i, i0_init)
                }
            };
            for &t in &ts {
                let map = |u: f64| -> Result<f64> {
                    // Reparametrize so the map increases with u >= i0_init.
                    let i = if sign > 0.0 { u } else { i0_init - (u - i0_init) };
                    t_of(i)
                };
                let u = invert_increasing(&map, i0_init, t)?;
                let i = if sign > 0.0 { u } else { i0_init - (u - i0_init) };
                i0s.push(i);
            }
            Ok(QuadratureSolution {
                times: ts,
                i0: i0s,
                lower_turn: None,
                upper_turn: None,
                period: None,
            })
        }
    }
}

/// Solve `map(x) = target` for an increasing map defined on `[anchor, inf)`
/// with `map(anchor) <= target`, growing the bracket geometrically.
fn invert_increasing<F>(map: &F, anchor: f64, target: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if target <= 0.0 {
        return Ok(anchor);
    }
    let mut step = 0.1 * (1.0 + anchor.abs());
    let mut hi = anchor;
    for _ in 0..200 {
        hi += step;
        step *= 2.0;
        if map(hi)? >= target {
            let f = |x: f64| map(x).unwrap_or(f64::NAN) - target;
            return quad::brent(f, anchor, hi);
        }
    }
    Err(KummerError::NoConvergence {
        what: "bracket growth for quadrature inversion".into(),
        achieved: hi,
        wanted: target,
    })
}

/// Reconstructed secondary angles along a trajectory.
#[derive(Debug, Clone)]
pub struct AngleSeries {
    /// Period of each angle `psi_k`, `k = 1..N`; `None` when the stabilizer
    /// of the angle is not a discrete subgroup at working precision.
    pub periods: Vec<Option<f64>>,
    /// Cumulative (unwrapped) angles, one series per `k`, starting at zero.
    pub unwrapped: Vec<Vec<f64>>,
    /// Unwrapped values folded into `[0, T_k)` where the period exists.
    pub reported: Vec<Vec<f64>>,
}

/// Integrate `dpsi_k/dt = dH_0/dI_k + (dG_0/dI_k) cos(psi_0)/sqrt(G_0)`
/// along a sampled trajectory with the trapezoid rule.
pub fn reconstruct_angles(
    spec: &SystemSpec,
    c: &[f64],
    traj: &ReducedTrajectory,
) -> Result<AngleSeries> {
    let n = spec.n_modes();
    if c.len() != n - 1 {
        return Err(KummerError::InvalidParameter(
            "constant vector must have length N".into(),
        ));
    }
    let g_full = spec.structural_expr();
    let h_full = spec.free_part_expr();
    let mut periods = Vec::new();
    let mut unwrapped = Vec::new();
    let mut reported = Vec::new();
    for k in 1..n {
        let dgk = g_full.diff(k);
        let dhk = h_full.diff(k);
        let mut args = vec![0.0];
        args.extend_from_slice(c);
        let rate = |i0: f64, psi0: f64, args: &mut Vec<f64>| {
            args[0] = i0;
            let g = g_full.eval(args);
            dhk.eval(args) + dgk.eval(args) * psi0.cos() / g.max(0.0).sqrt()
        };
        let mut series = Vec::with_capacity(traj.times.len());
        let mut acc = 0.0;
        series.push(acc);
        for j in 1..traj.times.len() {
            let dt = traj.times[j] - traj.times[j - 1];
            let f0 = rate(traj.i0[j - 1], traj.psi0[j - 1], &mut args);
            let f1 = rate(traj.i0[j], traj.psi0[j], &mut args);
            acc += 0.5 * dt * (f0 + f1);
            series.push(acc);
        }
        let period = angle_period(spec, k);
        let rep = match period {
            Some(t) => series.iter().map(|v| v.rem_euclid(t)).collect(),
            None => series.clone(),
        };
        periods.push(period);
        unwrapped.push(series);
        reported.push(rep);
    }
    Ok(AngleSeries {
        periods,
        unwrapped,
        reported,
    })
}

/// Period of the angle `psi_k = sum_j kappa_jk phi_j` under full `2 pi`
/// shifts of the mode phases: `2 pi` times the generator of the lattice
/// `{sum_j kappa_jk m_j : m integer}`, when that lattice is discrete.
pub fn angle_period(spec: &SystemSpec, k: usize) -> Option<f64> {
    let n = spec.n_modes();
    let kappa = spec.kappa();
    let mut fracs = Vec::with_capacity(n);
    for j in 0..n {
        let v = kappa[[j, k]];
        if v.abs() < 1e-12 {
            continue;
        }
        fracs.push(rationalize(v, 1e-9, 1_000_000)?);
    }
    if fracs.is_empty() {
        return None;
    }
    let mut denom: i128 = 1;
    for &(_, q) in &fracs {
        denom = lcm(denom, q as i128);
        if denom > 1_000_000_000_000 {
            return None;
        }
    }
    let mut num: i128 = 0;
    for &(p, q) in &fracs {
        num = gcd(num, (p as i128 * (denom / q as i128)).abs());
    }
    if num == 0 {
        return None;
    }
    Some(2.0 * std::f64::consts::PI * num as f64 / denom as f64)
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn lcm(a: i128, b: i128) -> i128 {
    a / gcd(a, b) * b
}

/// Best rational approximation `p/q` with `|x - p/q| <= tol` and
/// `q <= max_den`, by continued fractions. `None` when no such fraction
/// exists within the bounds.
fn rationalize(x: f64, tol: f64, max_den: i64) -> Option<(i64, i64)> {
    if !x.is_finite() {
        return None;
    }
    let neg = x < 0.0;
    let ax = x.abs();
    let (mut p0, mut q0, mut p1, mut q1): (i64, i64, i64, i64) = (1, 0, ax.floor() as i64, 1);
    if (ax - p1 as f64).abs() <= tol {
        return Some((if neg { -p1 } else { p1 }, 1));
    }
    let mut rem = ax - ax.floor();
    for _ in 0..64 {
        if rem.abs() < 1e-18 {
            break;
        }
        let val = 1.0 / rem;
        let a = val.floor();
        if a >= max_den as f64 * 2.0 {
            // Continued fraction term too large to matter; accept current.
            break;
        }
        let p2 = a as i64 * p1 + p0;
        let q2 = a as i64 * q1 + q0;
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        if (ax - p1 as f64 / q1 as f64).abs() <= tol {
            return Some((if neg { -p1 } else { p1 }, q1));
        }
        rem = val - a;
    }
    if (ax - p1 as f64 / q1 as f64).abs() <= tol {
        Some((if neg { -p1 } else { p1 }, q1))
    } else {
        None
    }
}

/// A point of the Kummer shape with its Casimir residual.
#[derive(Debug, Clone, Copy)]
pub struct KummerPoint {
    pub x: f64,
    pub y: f64,
    pub i0: f64,
    pub casimir: f64,
}

/// Sample the shape `x^2 + y^2 = G_0(I_0)` over a midpoint grid in `I_0`
/// and a full turn of angles on `(0, 2 pi]`. An infinite upper cone bound
/// is clipped to five widths above the lower one.
pub fn kummer_shape_sample(
    spec: &SystemSpec,
    c: &[f64],
    n_i0: usize,
    n_angle: usize,
) -> Result<Vec<KummerPoint>> {
    if n_i0 == 0 || n_angle == 0 {
        return Err(KummerError::InvalidParameter(
            "sample counts must be positive".into(),
        ));
    }
    let sys = ReducedSystem::new(spec, c)?;
    let bounds = sys.bounds();
    let a = bounds.lower;
    let b = if bounds.upper.is_finite() {
        bounds.upper
    } else {
        a + 5.0 * (1.0 + a.abs())
    };
    let mut points = Vec::with_capacity(n_i0 * n_angle);
    for i in 0..n_i0 {
        let i0 = a + (i as f64 + 0.5) * (b - a) / n_i0 as f64;
        let g = sys.g(i0);
        if g < 0.0 {
            continue;
        }
        let sg = g.sqrt();
        for j in 0..n_angle {
            let psi = 2.0 * std::f64::consts::PI * (j as f64 + 1.0) / n_angle as f64;
            let (x, y) = (sg * psi.cos(), sg * psi.sin());
            let casimir = -0.5 * (x * x + y * y - g);
            points.push(KummerPoint { x, y, i0, casimir });
        }
    }
    Ok(points)
}

/// Nambu-type bracket over `(x, y, I_0)`:
/// `{f, g} = det [grad C; grad f; grad g]` with symbolic gradients. The
/// flow of a Hamiltonian `H` is `df/dt = {H, f}`.
pub fn nambu_bracket(casimir: &Expr, f: &Expr, g: &Expr, point: &[f64; 3]) -> f64 {
    let grad = |e: &Expr| {
        [
            e.diff(0).eval(point),
            e.diff(1).eval(point),
            e.diff(2).eval(point),
        ]
    };
    det3(grad(casimir), grad(f), grad(g))
}

fn det3(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Two-route shape coordinates along a trajectory, with worst-case
/// deviations. `x` is computed both from the angle (`sqrt(G_0) cos psi_0`)
/// and from the energy (`(E - H_0)/2`); `y` from the angle and from a
/// centered difference of the `I_0` samples (`y = dI_0/dt / 2`). The finite
/// difference is a diagnostic with its own truncation error, so only the
/// `x` routes are expected to agree at integrator accuracy.
#[derive(Debug, Clone)]
pub struct ShapeOverlay {
    pub x_angle: Vec<f64>,
    pub y_angle: Vec<f64>,
    pub x_energy: Vec<f64>,
    pub y_diff: Vec<f64>,
    pub max_x_gap: f64,
    pub max_y_gap: f64,
    pub max_casimir: f64,
    pub max_energy_err: f64,
}

/// Derivative at `at` of the quadratic through three samples.
fn lagrange3_deriv(x: [f64; 3], f: [f64; 3], at: f64) -> f64 {
    let d0 = ((at - x[1]) + (at - x[2])) / ((x[0] - x[1]) * (x[0] - x[2]));
    let d1 = ((at - x[0]) + (at - x[2])) / ((x[1] - x[0]) * (x[1] - x[2]));
    let d2 = ((at - x[0]) + (at - x[1])) / ((x[2] - x[0]) * (x[2] - x[1]));
    f[0] * d0 + f[1] * d1 + f[2] * d2
}

pub fn xyi_trajectory(
    spec: &SystemSpec,
    c: &[f64],
    energy: f64,
    traj: &ReducedTrajectory,
) -> Result<ShapeOverlay> {
    let sys = ReducedSystem::new(spec, c)?;
    let m = traj.times.len();
    let mut overlay = ShapeOverlay {
        x_angle: Vec::with_capacity(m),
        y_angle: Vec::with_capacity(m),
        x_energy: Vec::with_capacity(m),
        y_diff: Vec::with_capacity(m),
        max_x_gap: 0.0,
        max_y_gap: 0.0,
        max_casimir: 0.0,
        max_energy_err: 0.0,
    };
    for j in 0..m {
        let i0 = traj.i0[j];
        let psi0 = traj.psi0[j];
        let g = sys.g(i0).max(0.0);
        let sg = g.sqrt();
        let (xa, ya) = (sg * psi0.cos(), sg * psi0.sin());
        let xe = 0.5 * (energy - sys.h0(i0));
        let yd = if m < 3 {
            ya
        } else if j == 0 {
            0.5 * lagrange3_deriv(
                [traj.times[0], traj.times[1], traj.times[2]],
                [traj.i0[0], traj.i0[1], traj.i0[2]],
                traj.times[0],
            )
        } else if j == m - 1 {
            0.5 * lagrange3_deriv(
                [traj.times[m - 3], traj.times[m - 2], traj.times[m - 1]],
                [traj.i0[m - 3], traj.i0[m - 2], traj.i0[m - 1]],
                traj.times[m - 1],
            )
        } else {
            0.5 * (traj.i0[j + 1] - traj.i0[j - 1]) / (traj.times[j + 1] - traj.times[j - 1])
        };
        overlay.max_x_gap = overlay.max_x_gap.max((xa - xe).abs());
        overlay.max_y_gap = overlay.max_y_gap.max((ya - yd).abs());
        overlay.max_casimir = overlay
            .max_casimir
            .max((-0.5 * (xe * xe + ya * ya - sys.g(i0))).abs());
        overlay.max_energy_err = overlay
            .max_energy_err
            .max((sys.hamiltonian(i0, psi0) - energy).abs());
        overlay.x_angle.push(xa);
        overlay.y_angle.push(ya);
        overlay.x_energy.push(xe);
        overlay.y_diff.push(yd);
    }
    Ok(overlay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Coupling;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn laguerre_like() -> SystemSpec {
        let rho = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, -0.5, 0.5]).unwrap();
        SystemSpec::new(
            vec![1, 1],
            Some(rho),
            Coupling::Constant(1.0),
            Expr::add(Expr::arg(0), Expr::arg(1)),
            0.1,
        )
        .unwrap()
    }

    fn krawtchouk_like(p: f64) -> SystemSpec {
        let rho = Array2::from_shape_vec((2, 2), vec![0.5, -0.5, 0.5, 0.5]).unwrap();
        SystemSpec::new(
            vec![1, -1],
            Some(rho),
            Coupling::Constant((p * (1.0 - p)).sqrt()),
            Expr::add(
                Expr::mul(Expr::constant(1.0 - p), Expr::arg(0)),
                Expr::mul(Expr::constant(p), Expr::arg(1)),
            ),
            0.05,
        )
        .unwrap()
    }

    fn q_weyl_like(q: f64, alpha: f64) -> SystemSpec {
        let lnq = q.ln();
        let ratio = Expr::div(
            Expr::mul(
                Expr::constant(alpha / lnq),
                Expr::sub(
                    Expr::exp(Expr::mul(Expr::constant(lnq / alpha), Expr::arg(0))),
                    Expr::constant(1.0),
                ),
            ),
            Expr::arg(0),
        );
        SystemSpec::new(
            vec![1],
            None,
            Coupling::Expression(Expr::sqrt(ratio)),
            Expr::constant(0.0),
            0.05,
        )
        .unwrap()
    }

    fn three_wave_like() -> SystemSpec {
        SystemSpec::new(
            vec![1, -1, -1],
            None,
            Coupling::Constant(1.0),
            Expr::constant(0.0),
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn action_angle_round_trip() {
        let s = laguerre_like();
        let z = vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let st = to_action_angle(&s, &z).unwrap();
        assert_relative_eq!(st.actions[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(st.actions[1], 0.0, epsilon = 1e-14);

        let z = vec![
            Complex64::from_polar(1.3, 0.7),
            Complex64::from_polar(0.6, -2.1),
        ];
        let st = to_action_angle(&s, &z).unwrap();
        let back = from_action_angle(&s, &st).unwrap();
        for (a, b) in z.iter().zip(&back) {
            assert_relative_eq!(a.norm(), b.norm(), epsilon = 1e-12);
            let d = (a.arg() - b.arg()).rem_euclid(2.0 * std::f64::consts::PI);
            assert!(d < 1e-12 || d > 2.0 * std::f64::consts::PI - 1e-12);
        }

        let z = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!(to_action_angle(&s, &z).is_err());
    }

    #[test]
    fn actions_match_direct_matrix_product() {
        let s = three_wave_like();
        let z = vec![
            Complex64::from_polar(0.9, 0.3),
            Complex64::from_polar(1.1, 1.4),
            Complex64::from_polar(0.5, -0.8),
        ];
        let st = to_action_angle(&s, &z).unwrap();
        let rho = s.rho();
        for k in 0..3 {
            let want: f64 = (0..3).map(|j| rho[[k, j]] * z[j].norm_sqr()).sum();
            assert_relative_eq!(st.actions[k], want, epsilon = 1e-14);
        }
    }

    #[test]
    fn cone_bounds_for_named_systems() {
        let s = laguerre_like();
        let b = cone_bounds(&s, &[0.7]).unwrap();
        assert_relative_eq!(b.lower, 0.7, epsilon = 1e-14);
        assert!(b.upper.is_infinite());
        let b = cone_bounds(&s, &[-0.7]).unwrap();
        assert_relative_eq!(b.lower, 0.7, epsilon = 1e-14);

        let s = krawtchouk_like(0.3);
        let b = cone_bounds(&s, &[1.2]).unwrap();
        assert_relative_eq!(b.lower, -1.2, epsilon = 1e-14);
        assert_relative_eq!(b.upper, 1.2, epsilon = 1e-14);
        let err = cone_bounds(&s, &[-0.5]).unwrap_err();
        assert!(err.to_string().contains("empty reduced space"));

        let s = q_weyl_like(0.5, 1.0);
        let b = cone_bounds(&s, &[]).unwrap();
        assert_relative_eq!(b.lower, 0.0, epsilon = 1e-14);
        assert!(b.upper.is_infinite());
    }

    #[test]
    fn reduced_rhs_matches_hand_formulas() {
        let s = laguerre_like();
        let c1 = 0.8;
        let (i0, psi) = (1.5, 0.9);
        let (di0, dpsi) = reduced_rhs(&s, &[c1], i0, psi).unwrap();
        let root = ((i0 - c1) * (i0 + c1)).sqrt();
        assert_relative_eq!(di0, 2.0 * root * psi.sin(), epsilon = 1e-12);
        assert_relative_eq!(dpsi, 2.0 + 2.0 * i0 * psi.cos() / root, epsilon = 1e-12);

        // sin(0) kills the action motion.
        let (di0, _) = reduced_rhs(&s, &[c1], i0, 0.0).unwrap();
        assert_eq!(di0, 0.0);

        let p = 0.3;
        let s = krawtchouk_like(p);
        let c1 = 1.0;
        let (di0, dpsi) = reduced_rhs(&s, &[c1], 0.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert_relative_eq!(di0, 2.0 * c1 * (p * (1.0 - p)).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(dpsi, 1.0 - 2.0 * p, epsilon = 1e-12);

        // On the boundary the chart breaks down.
        let err = reduced_rhs(&s, &[c1], c1, 0.3).unwrap_err();
        assert!(err.to_string().contains("shape boundary"));
    }

    #[test]
    fn energy_and_casimir_drift_stay_small() {
        let s = laguerre_like();
        let traj = integrate_reduced(&s, &[1.0], 2.0, std::f64::consts::FRAC_PI_2, 10.0, None)
            .unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
        let tol = 1e-8 * (1.0 + traj.energy.abs());
        for (e, c) in traj.energy_drift.iter().zip(&traj.casimir_drift) {
            assert!(e.abs() < tol, "energy drift {}", e);
            assert!(c.abs() < tol, "casimir drift {}", c);
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        // The stable equilibrium of the two-mode finite system sits at
        // psi_0 = pi, I_0 = -(1-2p) c_1.
        let p = 0.3;
        let s = krawtchouk_like(p);
        let c1 = 1.0;
        let i0_star = -(1.0 - 2.0 * p) * c1;
        let traj =
            integrate_reduced(&s, &[c1], i0_star, std::f64::consts::PI, 5.0, None).unwrap();
        for v in &traj.i0 {
            assert_relative_eq!(*v, i0_star, epsilon = 1e-9);
        }
        for v in &traj.psi0 {
            assert_relative_eq!(*v, std::f64::consts::PI, epsilon = 1e-9);
        }
    }

    /// Closed form for linear shape dynamics: state u = (x, y, I_0),
    /// du/dt = M u (+ affine part handled by the caller via extension).
    fn mat_mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i] += m[i][j] * v[j];
            }
        }
        out
    }

    #[test]
    fn finite_two_mode_trajectory_matches_rotation_closed_form() {
        // For l = (1, -1) with constant coupling the (x, y, I_0) flow is
        // u' = M u with M^3 = -M (after the frequency normalizes to 1), so
        // exp(M t) = 1 + M sin t + M^2 (1 - cos t).
        let p = 0.3;
        let s = krawtchouk_like(p);
        let c1 = 1.0;
        let h = 1.0 - 2.0 * p;
        let g = p * (1.0 - p);
        let m = [[0.0, -h, 0.0], [h, 0.0, -2.0 * g], [0.0, 2.0, 0.0]];
        let m2 = {
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        out[i][j] += m[i][k] * m[k][j];
                    }
                }
            }
            out
        };
        let (i0_init, psi_init) = (0.2, 1.1);
        let traj = integrate_reduced(&s, &[c1], i0_init, psi_init, 8.0, None).unwrap();
        let g0 = g * (c1 * c1 - i0_init * i0_init);
        let u0 = [
            g0.sqrt() * psi_init.cos(),
            g0.sqrt() * psi_init.sin(),
            i0_init,
        ];
        for (j, &t) in traj.times.iter().enumerate() {
            let mu = mat_mul(&m, u0);
            let m2u = mat_mul(&m2, u0);
            let want = [
                u0[0] + mu[0] * t.sin() + m2u[0] * (1.0 - t.cos()),
                u0[1] + mu[1] * t.sin() + m2u[1] * (1.0 - t.cos()),
                u0[2] + mu[2] * t.sin() + m2u[2] * (1.0 - t.cos()),
            ];
            assert!((traj.x[j] - want[0]).abs() < 1e-8, "x at t={}", t);
            assert!((traj.y[j] - want[1]).abs() < 1e-8, "y at t={}", t);
            assert!((traj.i0[j] - want[2]).abs() < 1e-8, "i0 at t={}", t);
        }
    }

    #[test]
    fn hyperbolic_two_mode_trajectory_matches_nilpotent_closed_form() {
        // For l = (1, 1), unit coupling, H_0 = 2 I_0 the flow matrix is
        // nilpotent: exp(M t) = 1 + M t + M^2 t^2 / 2.
        let s = laguerre_like();
        let c1 = 1.0;
        let m = [[0.0, -2.0, 0.0], [2.0, 0.0, 2.0], [0.0, 2.0, 0.0]];
        let m2 = [[-4.0, 0.0, -4.0], [0.0, 0.0, 0.0], [4.0, 0.0, 4.0]];
        let (i0_init, psi_init) = (1.6, 2.4);
        let traj = integrate_reduced(&s, &[c1], i0_init, psi_init, 6.0, None).unwrap();
        let g0 = i0_init * i0_init - c1 * c1;
        let u0 = [
            g0.sqrt() * psi_init.cos(),
            g0.sqrt() * psi_init.sin(),
            i0_init,
        ];
        let mu = mat_mul(&m, u0);
        let m2u = mat_mul(&m2, u0);
        for (j, &t) in traj.times.iter().enumerate() {
            for (axis, series) in [(0, &traj.x), (1, &traj.y), (2, &traj.i0)] {
                let want = u0[axis] + mu[axis] * t + 0.5 * m2u[axis] * t * t;
                assert!(
                    (series[j] - want).abs() < 1e-7 * (1.0 + want.abs()),
                    "axis {} at t={}: {} vs {}",
                    axis,
                    t,
                    series[j],
                    want
                );
            }
        }
    }

    #[test]
    fn quadrature_matches_escape_closed_form() {
        // For l = (1,1), H_0 = 2 I_0, R(I) = 4 E I - 4 c^2 - E^2 is linear,
        // so I(t) = r + E (t + t0)^2 with r the turning point.
        let s = laguerre_like();
        let c1 = 0.5;
        let e = 3.0;
        let r = (4.0 * c1 * c1 + e * e) / (4.0 * e);
        let i0_init = r + 0.3;
        let sol = integrate_quadrature(&s, &[c1], e, i0_init, 1.0, 3.0).unwrap();
        assert!(sol.period.is_none());
        let t0 = ((i0_init - r) / e).sqrt();
        for (j, &t) in sol.times.iter().enumerate() {
            let want = r + e * (t + t0) * (t + t0);
            assert!(
                (sol.i0[j] - want).abs() < 1e-8 * (1.0 + want.abs()),
                "t={}: {} vs {}",
                t,
                sol.i0[j],
                want
            );
        }
        assert_relative_eq!(sol.lower_turn.unwrap(), r, epsilon = 1e-9);
    }

    #[test]
    fn quadrature_period_is_two_pi_for_finite_two_mode() {
        // The (x, y, I_0) flow for l = (1, -1) has frequency
        // sqrt((1-2p)^2 + 4 p (1-p)) = 1 for every p, so every bounded
        // orbit closes in exactly 2 pi.
        for p in [0.25, 0.4] {
            let s = krawtchouk_like(p);
            let sol = integrate_quadrature(&s, &[1.0], 0.4, 0.1, 1.0, 2.0).unwrap();
            let period = sol.period.unwrap();
            assert_relative_eq!(period, 2.0 * std::f64::consts::PI, max_relative = 1e-9);
        }
    }

    #[test]
    fn quadrature_agrees_with_direct_integration() {
        let s = krawtchouk_like(0.3);
        let c1 = 1.0;
        let (i0_init, psi_init) = (0.2, 1.1);
        let sys = ReducedSystem::new(&s, &[c1]).unwrap();
        let e = sys.hamiltonian(i0_init, psi_init);
        let traj = integrate_reduced(&s, &[c1], i0_init, psi_init, 5.0, None).unwrap();
        let sol = integrate_quadrature(&s, &[c1], e, i0_init, psi_init.sin(), 5.0).unwrap();
        assert_eq!(traj.times.len(), sol.times.len());
        for j in 0..traj.times.len() {
            assert!(
                (traj.i0[j] - sol.i0[j]).abs() < 1e-6,
                "t={}: ode {} vs quadrature {}",
                traj.times[j],
                traj.i0[j],
                sol.i0[j]
            );
        }
    }

    #[test]
    fn quadrature_rejects_empty_and_critical_levels() {
        let s = krawtchouk_like(0.3);
        let c1 = 1.0;
        // Above the maximum of H on the shape nothing moves.
        let err = integrate_quadrature(&s, &[c1], 3.0 * c1, 0.0, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("empty level set"));
        // The unstable equilibrium is a double root of R.
        let h = 1.0 - 2.0 * 0.3;
        let err = integrate_quadrature(&s, &[c1], 2.0 * c1, h * c1, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("degenerate turning point"));
    }

    #[test]
    fn reconstructed_angle_matches_published_rate() {
        // dpsi_1/dt = -2 c_1 cos psi_0 / sqrt((I_0-c_1)(I_0+c_1)) for the
        // hyperbolic two-mode system; integrate it independently and
        // compare.
        let s = laguerre_like();
        let c1 = 0.8;
        let traj = integrate_reduced(&s, &[c1], 1.5, 1.0, 2.0, None).unwrap();
        let angles = reconstruct_angles(&s, &[c1], &traj).unwrap();
        let mut acc = 0.0;
        let rate = |i0: f64, psi0: f64| {
            -2.0 * c1 * psi0.cos() / ((i0 - c1) * (i0 + c1)).sqrt()
        };
        for j in 1..traj.times.len() {
            let dt = traj.times[j] - traj.times[j - 1];
            acc += 0.5
                * dt
                * (rate(traj.i0[j - 1], traj.psi0[j - 1]) + rate(traj.i0[j], traj.psi0[j]));
        }
        assert_relative_eq!(
            angles.unwrapped[0].last().unwrap(),
            &acc,
            max_relative = 1e-10
        );
        // Angle period for this kappa column is a full turn.
        assert_relative_eq!(
            angles.periods[0].unwrap(),
            2.0 * std::f64::consts::PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn secondary_angle_frozen_when_decoupled() {
        // c_1 = 0 kills dpsi_1/dt for the hyperbolic system.
        let s = laguerre_like();
        let traj = integrate_reduced(&s, &[0.0], 1.5, 1.0, 2.0, None).unwrap();
        let angles = reconstruct_angles(&s, &[0.0], &traj).unwrap();
        for v in &angles.unwrapped[0] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn shape_samples_satisfy_closed_forms() {
        let s = laguerre_like();
        let pts = kummer_shape_sample(&s, &[1.0], 24, 16).unwrap();
        assert!(!pts.is_empty());
        for p in &pts {
            assert!(p.i0 > 0.0);
            assert_relative_eq!(
                p.i0 * p.i0 - p.x * p.x - p.y * p.y,
                1.0,
                max_relative = 1e-10
            );
            assert!(p.casimir.abs() < 1e-12 * (1.0 + p.x * p.x + p.y * p.y));
        }

        let p_par = 0.3;
        let s = krawtchouk_like(p_par);
        let g = p_par * (1.0 - p_par);
        let pts = kummer_shape_sample(&s, &[1.0], 24, 16).unwrap();
        for p in &pts {
            assert_relative_eq!(
                p.x * p.x + p.y * p.y + g * p.i0 * p.i0,
                g,
                max_relative = 1e-10
            );
        }

        let (q, alpha) = (0.5, 1.0);
        let s = q_weyl_like(q, alpha);
        let pts = kummer_shape_sample(&s, &[], 24, 16).unwrap();
        for p in &pts {
            let want = alpha / q.ln() * ((q.ln() / alpha * p.i0).exp() - 1.0);
            assert_relative_eq!(p.x * p.x + p.y * p.y, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn shape_points_are_periodic_in_the_angle() {
        let s = laguerre_like();
        let sys = ReducedSystem::new(&s, &[1.0]).unwrap();
        let i0 = 2.0;
        let sg = sys.g(i0).sqrt();
        for psi in [0.3f64, 1.7, 4.4] {
            let a = (sg * psi.cos(), sg * psi.sin());
            let b = (
                sg * (psi + 2.0 * std::f64::consts::PI).cos(),
                sg * (psi + 2.0 * std::f64::consts::PI).sin(),
            );
            assert_relative_eq!(a.0, b.0, epsilon = 1e-12);
            assert_relative_eq!(a.1, b.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn bracket_golden_relations() {
        // {I_0, x} = -y, {I_0, y} = x, {x, y} = dG_0/dI_0 / 2 at shape
        // points, for three different structural functions.
        let cases: Vec<(SystemSpec, Vec<f64>)> = vec![
            (laguerre_like(), vec![1.0]),
            (krawtchouk_like(0.3), vec![1.0]),
            (q_weyl_like(0.5, 1.0), vec![]),
        ];
        let ex = Expr::arg(0);
        let ey = Expr::arg(1);
        let ei0 = Expr::arg(2);
        for (spec, c) in cases {
            let sys = ReducedSystem::new(&spec, &c).unwrap();
            let cas = sys.casimir_expr();
            let bounds = sys.bounds();
            let hi = if bounds.upper.is_finite() {
                bounds.upper
            } else {
                bounds.lower + 3.0
            };
            for frac in [0.3, 0.6, 0.9] {
                let i0 = bounds.lower + frac * (hi - bounds.lower);
                let g = sys.g(i0);
                if g <= 0.0 {
                    continue;
                }
                let psi = 0.7f64;
                let pt = [g.sqrt() * psi.cos(), g.sqrt() * psi.sin(), i0];
                assert_relative_eq!(
                    nambu_bracket(&cas, &ei0, &ex, &pt),
                    -pt[1],
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
                assert_relative_eq!(
                    nambu_bracket(&cas, &ei0, &ey, &pt),
                    pt[0],
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
                assert_relative_eq!(
                    nambu_bracket(&cas, &ex, &ey, &pt),
                    0.5 * sys.dg(i0),
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn bracket_is_antisymmetric_and_leibniz() {
        let s = krawtchouk_like(0.4);
        let sys = ReducedSystem::new(&s, &[1.0]).unwrap();
        let cas = sys.casimir_expr();
        let f = Expr::add(Expr::mul(Expr::arg(0), Expr::arg(2)), Expr::pow(Expr::arg(1), 2));
        let g = Expr::sub(Expr::arg(1), Expr::mul(Expr::constant(0.3), Expr::arg(0)));
        let h = Expr::exp(Expr::mul(Expr::constant(0.2), Expr::arg(2)));
        let pt = [0.1, -0.2, 0.3];
        let b_fg = nambu_bracket(&cas, &f, &g, &pt);
        let b_gf = nambu_bracket(&cas, &g, &f, &pt);
        assert_relative_eq!(b_fg, -b_gf, max_relative = 1e-12);
        assert_relative_eq!(nambu_bracket(&cas, &f, &f, &pt), 0.0, epsilon = 1e-12);

        // Leibniz: {f, g h} = {f, g} h + g {f, h}.
        let gh = Expr::mul(g.clone(), h.clone());
        let lhs = nambu_bracket(&cas, &f, &gh, &pt);
        let rhs = nambu_bracket(&cas, &f, &g, &pt) * h.eval(&pt)
            + g.eval(&pt) * nambu_bracket(&cas, &f, &h, &pt);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);

        // The Casimir commutes with everything.
        for e in [&f, &g, &h] {
            assert_relative_eq!(nambu_bracket(&cas, &cas, e, &pt), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bracket_flow_matches_reduced_equations() {
        // df/dt = {H, f} must reproduce the (x, y, I_0) system.
        let s = q_weyl_like(0.5, 1.0);
        let sys = ReducedSystem::new(&s, &[]).unwrap();
        let cas = sys.casimir_expr();
        let ham = sys.hamiltonian_xyi_expr();
        let i0 = 0.7;
        let g = sys.g(i0);
        let pt = [g.sqrt() * 0.6f64.cos(), g.sqrt() * 0.6f64.sin(), i0];
        let ex = Expr::arg(0);
        let ey = Expr::arg(1);
        let ei0 = Expr::arg(2);
        // H_0 = 0 here: x frozen, y driven by G_0', I_0 driven by 2y.
        assert_relative_eq!(nambu_bracket(&cas, &ham, &ex, &pt), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            nambu_bracket(&cas, &ham, &ey, &pt),
            sys.dg(i0),
            max_relative = 1e-10
        );
        assert_relative_eq!(
            nambu_bracket(&cas, &ham, &ei0, &pt),
            2.0 * pt[1],
            max_relative = 1e-10
        );
    }

    #[test]
    fn overlay_routes_agree() {
        let s = laguerre_like();
        let c1 = 1.0;
        let (i0_init, psi_init) = (2.0, 0.8);
        let traj = integrate_reduced(&s, &[c1], i0_init, psi_init, 6.0, None).unwrap();
        let overlay = xyi_trajectory(&s, &[c1], traj.energy, &traj).unwrap();
        assert!(overlay.max_x_gap < 1e-7, "x gap {}", overlay.max_x_gap);
        assert!(overlay.max_casimir < 1e-7, "casimir {}", overlay.max_casimir);
        assert!(
            overlay.max_energy_err < 1e-7,
            "energy {}",
            overlay.max_energy_err
        );
        // The finite-difference y is a diagnostic only; its truncation
        // error dominates but stays small on this smooth run.
        assert!(overlay.max_y_gap < 1e-3, "y gap {}", overlay.max_y_gap);
    }

    #[test]
    fn boundary_stop_reports_partial_trajectory() {
        // At p = 1/2 the linear frequency part vanishes, so x is conserved
        // and the orbit through psi_0 = pi/2 is the great circle x = 0:
        // I_0(t) = c_1 sin(t), which reaches the pole G_0 = 0 at t = pi/2.
        let s = krawtchouk_like(0.5);
        let c1 = 1.0;
        let traj =
            integrate_reduced(&s, &[c1], 0.0, std::f64::consts::FRAC_PI_2, 20.0, None).unwrap();
        match traj.status {
            TrajectoryStatus::BoundaryReached { t } => {
                assert!(
                    (t - std::f64::consts::FRAC_PI_2).abs() < 1e-2,
                    "stopped at t = {}",
                    t
                );
                assert!(traj.times.len() < 2001);
                assert_eq!(traj.times.len(), traj.i0.len());
                // The whole partial trajectory follows the closed form.
                for (tk, ik) in traj.times.iter().zip(&traj.i0) {
                    assert!((ik - c1 * tk.sin()).abs() < 1e-8, "t = {}", tk);
                }
                let t_last = *traj.times.last().unwrap();
                assert!(std::f64::consts::FRAC_PI_2 - t_last < 0.02);
            }
            TrajectoryStatus::Completed => panic!("expected a boundary stop"),
        }
    }

    #[test]
    fn constants_never_move() {
        // The reduced state is two-dimensional by construction; the
        // constants exist only through the frozen expressions, so they are
        // conserved identically. Check H uses the same c before and after.
        let s = three_wave_like();
        let c = vec![0.9, 1.4];
        let sys = ReducedSystem::new(&s, &c).unwrap();
        let bounds = sys.bounds();
        let i0 = 0.5 * (bounds.lower + bounds.upper.min(bounds.lower + 2.0));
        let traj = integrate_reduced(&s, &c, i0, 0.4, 3.0, None).unwrap();
        assert_eq!(sys.constants(), &c[..]);
        let e_end = sys.hamiltonian(
            *traj.i0.last().unwrap(),
            *traj.psi0.last().unwrap(),
        );
        assert!((e_end - traj.energy).abs() < 1e-8 * (1.0 + traj.energy.abs()));
    }

    #[test]
    fn rationalize_finds_simple_fractions() {
        assert_eq!(rationalize(0.5, 1e-9, 1000), Some((1, 2)));
        assert_eq!(rationalize(-0.75, 1e-9, 1000), Some((-3, 4)));
        assert_eq!(rationalize(3.0, 1e-9, 1000), Some((3, 1)));
        assert_eq!(rationalize(1.0 / 3.0, 1e-9, 1000), Some((1, 3)));
        // Irrational numbers fail within a small denominator budget.
        assert_eq!(rationalize(std::f64::consts::SQRT_2, 1e-12, 100), None);
    }
}
