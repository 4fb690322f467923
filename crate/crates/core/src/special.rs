//! Special functions and Gauss quadrature rules.
//!
//! Only what the measures and kernels actually need: log-gamma (Lanczos),
//! modified Bessel `K_nu` through its cosh integral representation,
//! generalized hypergeometric series `pFq`, and generalized Gauss-Laguerre
//! rules built from the Jacobi matrix (Golub-Welsch).

use crate::error::{KummerError, Result};
use crate::quad;
use crate::tridiag;

// Lanczos coefficients, g = 7, 9 terms. Relative error below 1e-13 on the
// positive axis.
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function. Reflection handles `x < 0.5`; poles
/// at non-positive integers return infinity.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // ln Gamma(x) = ln(pi / sin(pi x)) - ln Gamma(1 - x)
        let s = (std::f64::consts::PI * x).sin();
        if s == 0.0 {
            return f64::INFINITY;
        }
        return (std::f64::consts::PI / s.abs()).ln() - ln_gamma(1.0 - x);
    }
    let xm1 = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (xm1 + i as f64);
    }
    let t = xm1 + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (xm1 + 0.5) * t.ln() - t + acc.ln()
}

pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        let s = (std::f64::consts::PI * x).sin();
        return std::f64::consts::PI / (s * gamma(1.0 - x));
    }
    ln_gamma(x).exp()
}

/// `n!` as f64, exact below the 2^53 threshold, overflow-checked.
pub fn factorial(n: usize) -> f64 {
    let mut acc = 1.0f64;
    for k in 2..=n {
        acc *= k as f64;
    }
    acc
}

/// `ln n!` accumulated in log space; safe for any n.
pub fn ln_factorial(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 20 {
        return factorial(n).ln();
    }
    ln_gamma(n as f64 + 1.0)
}

/// Modified Bessel function of the second kind via
/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`, `x > 0`.
///
/// The integrand decays doubly exponentially, so a finite cutoff plus the
/// adaptive Gauss-Kronrod rule gives near machine accuracy. Independent of
/// the Laguerre-quadrature machinery on purpose: it serves as the oracle
/// side of density cross-checks.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(KummerError::InvalidParameter(format!(
            "bessel_k needs x > 0, got {x}"
        )));
    }
    let nu = nu.abs();
    // March the cutoff until the exponent is deep below underflow.
    let mut t_max = 1.0f64;
    while x * t_max.cosh() - nu * t_max < 760.0 {
        t_max *= 1.5;
        if t_max > 1e4 {
            break;
        }
    }
    quad::integrate(
        |t| {
            let u = -x * t.cosh();
            // cosh(nu t) overflows before exp(u) kills it; combine in log.
            let a = (u + nu * t).exp();
            let b = (u - nu * t).exp();
            0.5 * (a + b)
        },
        0.0,
        t_max,
        1e-13,
    )
}

/// Generalized hypergeometric series `pFq(alpha; beta; z)` summed to
/// relative tolerance `tol`. Errors out when a lower parameter hits a
/// non-positive integer before an upper one truncates the series, or when
/// the series fails to settle (outside the convergence disc).
pub fn pfq(alpha: &[f64], beta: &[f64], z: f64, tol: f64) -> Result<f64> {
    for &b in beta {
        if b <= 0.0 && b == b.floor() {
            // Only fatal if no upper parameter truncates first.
            let cut = alpha
                .iter()
                .filter(|&&a| a <= 0.0 && a == a.floor())
                .map(|&a| -a as i64)
                .min();
            if cut.map_or(true, |c| c > (-b) as i64) {
                return Err(KummerError::InvalidParameter(format!(
                    "pFq lower parameter {b} is a non-positive integer"
                )));
            }
        }
    }

    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut settled = 0u32;
    for n in 0..100_000u64 {
        let nf = n as f64;
        let mut ratio = z / (nf + 1.0);
        for &a in alpha {
            ratio *= a + nf;
        }
        for &b in beta {
            ratio /= b + nf;
        }
        term *= ratio;
        if term == 0.0 {
            return Ok(sum); // terminated by an upper parameter
        }
        sum += term;
        if term.abs() <= tol * sum.abs().max(f64::MIN_POSITIVE) {
            settled += 1;
            if settled >= 3 {
                return Ok(sum);
            }
        } else {
            settled = 0;
            if !term.is_finite() {
                break;
            }
        }
    }
    Err(KummerError::NoConvergence {
        what: format!("pFq series at z = {z}"),
        achieved: term.abs(),
        wanted: tol * sum.abs(),
    })
}

/// Nodes and weights of a Gauss rule.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Generalized Gauss-Laguerre rule for `int_0^inf f(x) x^alpha e^{-x} dx`,
/// `alpha > -1`, by diagonalizing the Jacobi matrix of the weight
/// (Golub-Welsch): exact for polynomials up to degree `2m - 1`.
pub fn gauss_laguerre(m: usize, alpha: f64) -> Result<QuadRule> {
    if m == 0 {
        return Err(KummerError::InvalidParameter("empty quadrature rule".into()));
    }
    if alpha <= -1.0 {
        return Err(KummerError::InvalidParameter(format!(
            "gauss_laguerre needs alpha > -1, got {alpha}"
        )));
    }
    // Monic recurrence for generalized Laguerre polynomials:
    // a_k = 2k + alpha + 1, b_k^2 = k (k + alpha).
    let diag: Vec<f64> = (0..m).map(|k| 2.0 * k as f64 + alpha + 1.0).collect();
    let off: Vec<f64> = (1..m)
        .map(|k| (k as f64 * (k as f64 + alpha)).sqrt())
        .collect();
    let eig = tridiag::eigh_tridiagonal(&diag, &off)?;
    let mu0 = gamma(alpha + 1.0);
    let weights = eig
        .vectors
        .iter()
        .map(|v| mu0 * v[0] * v[0])
        .collect();
    Ok(QuadRule {
        nodes: eig.values,
        weights,
    })
}
