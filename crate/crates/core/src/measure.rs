//! Resolving measures: the radial density whose moments invert the
//! kernel coefficients, and the atomic measure of the deformed ladder.
//!
//! For a constant coupling the angular average of the resolving measure
//! reduces to a radial density `rho(t)`, `t = |z|^2`, expressed through
//! an N-fold integral with decaying exponentials over the inner modes.
//! The resolution of the identity is then the moment condition
//! `2 pi integral t^n rho(t) dt = 1 / k_n` against the kernel
//! coefficients. `resolution_check` measures exactly that, computing the
//! moments by quadrature of the density rather than any closed form, so
//! the two sides of the identity stay independent routes.

use std::f64::consts::PI;

use crate::algebra::SystemSpec;
use crate::coherent::reproducing_kernel;
use crate::error::{KummerError, Result};
use crate::quad;
use crate::quantum::{q_operators, QDeformedSpec, Sector};
use crate::special::ln_gamma;

/// Terms this far below the running peak cannot move the sum.
const DE_DROP: f64 = 45.0;
const DE_MAX_STEPS: i64 = 200_000;

/// `ln` of `integral_0^inf exp(g(u, ln u)) du` by the trapezoid rule on
/// the double-exponential map `u = c exp(x - e^{-x})`.
///
/// The map compresses both tails: an `e^{-u}` falloff, a `u^gamma` power
/// at the origin, and an essential crush `e^{-s u^{-p}}` all decay at
/// least doubly exponentially in `x`, so the trapezoid sum converges
/// superexponentially as the step halves, whatever mix of scales the
/// integrand has. The log-resolution near `x = 0` is the step itself but
/// coarsens like `h e^{-x}` on the left, so `c` must sit at the leftmost
/// feature of the integrand; everything to its right lands in the linear
/// zone, where resolution is uniform and only the walk gets longer. Each
/// level walks outward from `x = 0` until five consecutive terms sit
/// below the running peak by `DE_DROP` in the log; terms accumulate
/// against that peak so only ratios are exponentiated.
fn ln_de<F>(c: f64, mut g: F, what: &str) -> Result<f64>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let lnc = c.ln();
    let mut prev = f64::NAN;
    let mut gap = f64::INFINITY;
    for level in 0..7 {
        let h = 0.5_f64 / (1u32 << level) as f64;
        let mut m = f64::NEG_INFINITY;
        let mut acc = 0.0_f64;
        for dir in [1.0_f64, -1.0] {
            let mut below = 0usize;
            let mut k: i64 = if dir > 0.0 { 0 } else { 1 };
            loop {
                let x = dir * k as f64 * h;
                let e = (-x).exp();
                let lnu = lnc + x - e;
                let lt = g(lnu.exp(), lnu)? + lnu + e.ln_1p();
                if lt.is_nan() || lt == f64::INFINITY {
                    return Err(KummerError::NoConvergence {
                        what: format!("{what}: integrand not finite at x = {x:.3}"),
                        achieved: lt,
                        wanted: 0.0,
                    });
                }
                if lt > m {
                    acc = if m.is_finite() { acc * (m - lt).exp() + 1.0 } else { 1.0 };
                    m = lt;
                    below = 0;
                } else if lt < m - DE_DROP || lt == f64::NEG_INFINITY {
                    below += 1;
                } else {
                    acc += (lt - m).exp();
                    below = 0;
                }
                if below >= 5 {
                    break;
                }
                k += 1;
                if k > DE_MAX_STEPS {
                    return Err(KummerError::NoConvergence {
                        what: format!("{what}: tail does not decay"),
                        achieved: f64::INFINITY,
                        wanted: DE_DROP,
                    });
                }
            }
        }
        let cur = if m.is_finite() { m + acc.ln() + h.ln() } else { m };
        if cur == prev {
            return Ok(cur);
        }
        gap = (cur - prev).abs();
        if gap <= 1e-12 {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(KummerError::NoConvergence {
        what: what.into(),
        achieved: gap,
        wanted: 1e-12,
    })
}

/// Radial density of the resolving measure for a constant coupling.
///
/// After scaling the inner integration variables by `hbar`, the density
/// factors as `prefactor * t^{(v_0+1)/l_0 - 1} * J(s)` with
/// `s = (t / hbar^{sum l})^{1/l_0}` and
/// `J(s) = integral prod_i u_i^{gamma_i} exp(-s P(u) - sum u_i) du`,
/// `P(u) = prod u_i^{-l_i/l_0}`, `gamma_i = v_i - l_i (v_0+1)/l_0`.
/// `J` is evaluated as iterated one-dimensional double-exponential
/// integrals, innermost mode last, each carrying the accumulated
/// coupling factor of the outer modes; everything stays in log space. A
/// non-unit constant coupling enters by the exact rescale
/// `rho(t) = rho_1(t/g_0^2)/g_0^2`.
#[derive(Debug, Clone)]
pub struct MeasureDensity {
    l0: f64,
    v0: f64,
    a: f64,
    gamma: Vec<f64>,
    powers: Vec<f64>,
    hbar: f64,
    g0sq: f64,
    sum_l: f64,
    ln_pref: f64,
}

/// Build the density evaluator for a sector.
pub fn build_measure(sector: &Sector, spec: &SystemSpec) -> Result<MeasureDensity> {
    sector.check_matches(spec)?;
    if !spec.coupling().expr().is_constant() {
        return Err(KummerError::InvalidParameter(
            "the radial density is only available for a constant coupling".into(),
        ));
    }
    let l = spec.l();
    if l[0] <= 0 {
        return Err(KummerError::InvalidParameter(format!(
            "the resolved mode must have a positive exponent, got {}",
            l[0]
        )));
    }
    let v = sector.vacuum();
    let l0 = l[0] as f64;
    let v0 = v[0] as f64;
    let a = (v0 + 1.0) / l0;
    // Negative-exponent inner modes always have gamma > 0; a raising mode
    // may push gamma to -1 or below, where only the essential decay of
    // the coupling term keeps the integral finite.
    let gamma: Vec<f64> = (1..l.len())
        .map(|i| v[i] as f64 - l[i] as f64 * a)
        .collect();
    let powers: Vec<f64> = (1..l.len()).map(|i| -(l[i] as f64) / l0).collect();
    let g0 = spec.coupling().eval(&vec![0.0; spec.n_modes()]);
    let hbar = spec.hbar();
    let sum_l: f64 = l.iter().sum::<i64>() as f64;
    let sum_v: f64 = v.iter().sum::<i64>() as f64;
    let sum_gamma: f64 = gamma.iter().sum();
    let ln_pref = (sum_gamma - sum_v - 1.0) * hbar.ln() - (2.0 * PI * l0 * l0).ln();
    Ok(MeasureDensity {
        l0,
        v0,
        a,
        gamma,
        powers,
        hbar,
        g0sq: g0 * g0,
        sum_l,
        ln_pref,
    })
}

impl MeasureDensity {
    /// Scale of the leftmost feature of `u^gamma e^{-sigma u^p - u}`
    /// along mode `d`, from the monotone profile
    /// `phi(u) = gamma - u - sigma p u^p`. The profile is strictly
    /// decreasing with a positive limit at the origin (either
    /// `gamma > 0` or the coupling power blows up), so the root is
    /// unique; a decade walk brackets it at any scale. For the outer
    /// modes the inherited coupling is only a proxy for the true inner
    /// factor, but the scale needs just the order of magnitude.
    fn feature_scale(&self, d: usize, sigma: f64) -> f64 {
        let g = self.gamma[d];
        let p = self.powers[d];
        let phi = |u: f64| g - sigma * p * u.powf(p) - u;
        let mut hi = 1e-300;
        while phi(hi) >= 0.0 {
            hi *= 100.0;
            if hi > 1e300 {
                return 1e300;
            }
        }
        if hi <= 1e-300 {
            return g.max(1.0);
        }
        quad::brent(phi, hi / 100.0, hi).unwrap_or_else(|_| g.max(1.0))
    }

    /// Integral over inner modes `d..`, with `sigma` the coupling weight
    /// accumulated from the outer ones: mode `d` contributes
    /// `u^{gamma_d} e^{-u}` and passes `sigma u^{p_d}` inward; the last
    /// mode closes with `e^{-sigma u^p}` itself.
    fn ln_level(&self, d: usize, sigma: f64) -> Result<f64> {
        if sigma == f64::INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        // An underflowed weight would switch the crush off entirely and
        // let a mode with gamma <= -1 diverge; the smallest positive
        // weight keeps it in force exactly where it matters.
        let sigma = if sigma == 0.0 { f64::MIN_POSITIVE } else { sigma };
        let gam = self.gamma[d];
        let p = self.powers[d];
        let last = d + 1 == self.gamma.len();
        ln_de(
            self.feature_scale(d, sigma),
            |u: f64, lnu: f64| {
                let inward = sigma * (p * lnu).exp();
                let tail = if last { -inward } else { self.ln_level(d + 1, inward)? };
                Ok(gam * lnu - u + tail)
            },
            "radial density quadrature",
        )
    }

    /// `ln J(s)`.
    fn ln_inner(&self, s: f64) -> Result<f64> {
        if self.gamma.is_empty() {
            return Ok(-s);
        }
        if s == 0.0 {
            let mut acc = 0.0;
            for &g in &self.gamma {
                if g <= -1.0 {
                    return Ok(f64::INFINITY);
                }
                acc += ln_gamma(g + 1.0);
            }
            return Ok(acc);
        }
        self.ln_level(0, s)
    }

    /// Density value at `t = |z|^2 >= 0`. The value at `t = 0` is the
    /// literal limit, which is infinite when the radial power is
    /// negative.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(KummerError::InvalidParameter(format!(
                "squared radius must be nonnegative, got {t}"
            )));
        }
        let tau = t / self.g0sq;
        let s = (tau / self.hbar.powf(self.sum_l)).powf(1.0 / self.l0);
        let lnj = self.ln_inner(s)?;
        let radial = if self.a == 1.0 {
            0.0
        } else {
            (self.a - 1.0) * tau.ln()
        };
        Ok((self.ln_pref + radial + lnj).exp() / self.g0sq)
    }

    /// Moment `m_n = integral t^n rho(t) dt` over the support, via the
    /// substitution `t = g_0^2 y^{l_0}` (which removes the endpoint
    /// power) and a compactifying map. The integrand is probed for its
    /// scale first so the tolerance is relative even for tiny moments.
    pub fn moment(&self, n: usize) -> Result<f64> {
        let b = self.hbar.powf(-self.sum_l / self.l0);
        let pw = self.l0 * n as f64 + self.v0;
        let raw = |y: f64| -> f64 {
            let lnj = match self.ln_inner(b * y) {
                Ok(v) => v,
                Err(_) => return f64::NAN,
            };
            let power = if pw == 0.0 { 0.0 } else { pw * y.ln() };
            (power + lnj).exp()
        };
        let f = |u: f64| -> f64 {
            if u <= 0.0 || u >= 1.0 {
                return 0.0;
            }
            let y = u / (1.0 - u);
            raw(y) / ((1.0 - u) * (1.0 - u))
        };
        let mut scale = 0.0f64;
        for k in 1..128 {
            scale = scale.max(f(k as f64 / 128.0));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(KummerError::NoConvergence {
                what: format!("moment {n} of the radial density"),
                achieved: f64::NAN,
                wanted: 1e-12,
            });
        }
        let integral = quad::integrate(|u| f(u) / scale, 0.0, 1.0, 3e-13)?;
        Ok(self.g0sq.powi(n as i32) * self.ln_pref.exp() * self.l0 * scale * integral)
    }
}

/// One-shot density value; prefer [`build_measure`] for repeated
/// evaluation, which reuses the quadrature rules.
pub fn measure_density(sector: &Sector, spec: &SystemSpec, t: f64) -> Result<f64> {
    build_measure(sector, spec)?.eval(t)
}

/// Worst relative violation of the moment condition
/// `2 pi m_n k_n = 1` for `n = 0..=n_max`: the operational form of the
/// resolution of the identity under circular symmetry. Moments come from
/// quadrature of the density, coefficients from the kernel ladder.
pub fn resolution_check(sector: &Sector, spec: &SystemSpec, n_max: usize) -> Result<f64> {
    let d = sector.matrix_dim()?;
    if n_max >= d {
        return Err(KummerError::InvalidParameter(format!(
            "moment order {n_max} has no kernel coefficient on a dimension-{d} sector"
        )));
    }
    let density = build_measure(sector, spec)?;
    let kernel = reproducing_kernel(sector, spec)?;
    let ln_k = kernel.ln_coefficients();
    let mut worst = 0.0f64;
    for n in 0..=n_max {
        let m_n = density.moment(n)?;
        let dev = ((m_n * 2.0 * PI).ln() + ln_k[n]).exp() - 1.0;
        worst = worst.max(dev.abs());
    }
    Ok(worst)
}

/// Moment identities of the atomic measure of the deformed ladder.
///
/// The measure places delta masses at `t_n = R Q^n` with weights
/// `Q^n prod_{j >= n+1} (1 - Q^j)`, where `Q = q^{hbar/alpha}` and
/// `R = hbar / (1 - Q)` is the squared disc radius. For each power
/// `m <= n_max` the weighted sum over atoms must equal the product of
/// the first `m` deformed structural values, taken here from the
/// operator ladder itself so the two routes stay independent. Returns
/// the worst relative deviation.
pub fn q_measure_check(qspec: &QDeformedSpec, hbar: f64, n_max: usize) -> Result<f64> {
    if !(hbar > 0.0) {
        return Err(KummerError::InvalidParameter(format!(
            "hbar must be positive, got {hbar}"
        )));
    }
    let q_big = qspec.shift(hbar);
    let r = qspec.norm_bound(hbar);
    let ops = q_operators(qspec, hbar, (n_max + 2).max(2))?;

    // (Q; Q)_infinity, truncated where further factors cannot move f64.
    let mut pinf = 1.0f64;
    let mut qj = q_big;
    while qj > 1e-18 {
        pinf *= 1.0 - qj;
        qj *= q_big;
    }

    let mut worst = 0.0f64;
    for m in 0..=n_max {
        let target: f64 = ops.g_seq[..m].iter().product();
        let mut sum = 0.0f64;
        let mut pn = pinf; // (Q^{n+1}; Q)_infinity at the current atom
        let mut qn = 1.0f64; // Q^n
        for _ in 0..200_000 {
            let t_n = r * qn;
            let term = qn * pn * t_n.powi(m as i32);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
            qn *= q_big;
            pn /= 1.0 - qn;
        }
        worst = worst.max((sum / target - 1.0).abs());
    }
    Ok(worst)
}
