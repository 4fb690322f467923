//! One-dimensional quadrature and root finding.
//!
//! The period and moment integrals in this crate are smooth away from
//! endpoint singularities (which callers remove by substitution before
//! integrating), so an adaptive 15-point Gauss-Kronrod rule with interval
//! bisection is enough. Roots of scalar functions (turning points, level
//! crossings, shape inversions) go through Brent's method.

use crate::error::{KummerError, Result};

// 15-point Kronrod nodes on [0, 1] side of the symmetric rule, descending,
// followed by the embedded 7-point Gauss weights and the Kronrod weights.
// Standard QUADPACK table.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Kronrod estimate and (kronrod - gauss) error indicator on `[a, b]`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;

    for j in 0..7 {
        let dx = half * XGK[j];
        let fsum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive integral of `f` over `[a, b]` to `tol` absolute-or-relative
/// accuracy. Bisects the worst interval first; errors out rather than
/// returning a silently inaccurate value.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(KummerError::InvalidSpec(
            "non-finite integration bounds; substitute to a finite interval first".into(),
        ));
    }
    if a == b {
        return Ok(0.0);
    }

    // Max-heap on the error indicator, tracked as (err, a, b, value).
    let (v0, e0) = gk15(&f, a, b);
    if !v0.is_finite() {
        return Err(KummerError::NoConvergence {
            what: format!("integrand is not finite on [{a}, {b}]"),
            achieved: f64::NAN,
            wanted: tol,
        });
    }
    let mut segments = vec![(e0, a, b, v0)];
    let max_segments = 4096;

    loop {
        let total: f64 = segments.iter().map(|s| s.3).sum();
        let err: f64 = segments.iter().map(|s| s.0).sum();
        if err <= tol * total.abs().max(1.0) {
            return Ok(total);
        }
        if segments.len() >= max_segments {
            return Err(KummerError::NoConvergence {
                what: format!("adaptive quadrature on [{a}, {b}]"),
                achieved: err,
                wanted: tol * total.abs().max(1.0),
            });
        }
        // Split the worst segment.
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
            .map(|(i, _)| i)
            .unwrap();
        let (_, sa, sb, _) = segments.swap_remove(worst);
        let mid = 0.5 * (sa + sb);
        if mid <= sa || mid >= sb {
            // Interval at floating-point resolution; accept its estimate.
            let (v, _) = gk15(&f, sa, sb);
            segments.push((0.0, sa, sb, v));
            continue;
        }
        let (v1, e1) = gk15(&f, sa, mid);
        let (v2, e2) = gk15(&f, mid, sb);
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(KummerError::NoConvergence {
                what: format!("integrand is not finite on [{sa}, {sb}]"),
                achieved: f64::NAN,
                wanted: tol,
            });
        }
        segments.push((e1, sa, mid, v1));
        segments.push((e2, mid, sb, v2));
    }
}

/// Brent root bracketing on `[a, b]`; requires a sign change. Converges to
/// roughly machine precision in the abscissa.
pub fn brent<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(KummerError::InvalidSpec(format!(
            "no sign change on bracket [{a}, {b}]: f(a)={fa:.3e}, f(b)={fb:.3e}"
        )));
    }

    let (mut c, mut fc) = (a, fa);
    let (mut d, mut e) = (b - a, b - a);

    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            // Keep b as the best estimate.
            (a, b, c) = (b, c, b);
            (fa, fb, fc) = (fb, fc, fb);
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 1e-300;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation (secant when a == c).
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * q0 * (q0 - r) - (b - a) * (r - 1.0));
                q = (q0 - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        (a, fa) = (b, fb);
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            (c, fc) = (a, fa);
            (d, e) = (b - a, b - a);
        }
    }
    Err(KummerError::NoConvergence {
        what: format!("Brent root search near {b}"),
        achieved: fb.abs(),
        wanted: 0.0,
    })
}
