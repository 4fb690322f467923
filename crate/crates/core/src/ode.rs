//! Explicit Dormand-Prince 5(4) integration with adaptive steps.
//!
//! Steps are clipped to the requested sample times, so reported states are
//! genuine solver states rather than interpolants; drift diagnostics
//! downstream then measure the integrator itself, not an interpolation
//! layer. A stop predicate lets trajectory code halt at domain boundaries.

use crate::error::{KummerError, Result};

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-10,
            max_step: f64::INFINITY,
            initial_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeStatus {
    /// All sample times were reached.
    Completed,
    /// The stop predicate fired; no samples past `t` were produced.
    Stopped { t: f64 },
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    /// Times actually sampled (a prefix of the request when stopped early).
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub status: OdeStatus,
}

// Dormand-Prince RK5(4)7M tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `dy/dt = rhs(t, y)` from `t0`, sampling the state at each of
/// `sample_times` (strictly increasing, all `>= t0`). `stop` is evaluated
/// after every accepted step.
pub fn integrate<F, S>(
    rhs: F,
    t0: f64,
    y0: &[f64],
    sample_times: &[f64],
    opts: &OdeOptions,
    mut stop: S,
) -> Result<OdeSolution>
where
    F: Fn(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> bool,
{
    let dim = y0.len();
    if sample_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KummerError::InvalidSpec(
            "sample times must be strictly increasing".into(),
        ));
    }
    if sample_times.first().is_some_and(|&t| t < t0) {
        return Err(KummerError::InvalidSpec(
            "sample times must not precede the initial time".into(),
        ));
    }

    let mut times = Vec::with_capacity(sample_times.len());
    let mut states = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0usize;

    let mut t = t0;
    let mut y = y0.to_vec();

    // Emit samples that coincide with the current time (within one ulp-ish
    // tolerance relative to the span).
    let t_end = sample_times.last().copied().unwrap_or(t0);
    let span = (t_end - t0).abs().max(1.0);
    let teps = 1e-12 * span;

    if stop(t, &y) {
        return Ok(OdeSolution {
            times,
            states,
            status: OdeStatus::Stopped { t },
        });
    }

    while next_sample < sample_times.len() && sample_times[next_sample] <= t + teps {
        times.push(sample_times[next_sample]);
        states.push(y.clone());
        next_sample += 1;
    }

    let mut h = opts
        .initial_step
        .unwrap_or(1e-4 * span)
        .min(opts.max_step);

    let mut k = vec![vec![0.0; dim]; 7];
    let mut ytmp = vec![0.0; dim];
    let mut y5 = vec![0.0; dim];
    let mut steps_taken = 0u64;

    while next_sample < sample_times.len() {
        let target = sample_times[next_sample];
        let mut clipped = false;
        if t + h >= target {
            h = target - t;
            clipped = true;
        }
        if h <= teps * 1e-3 {
            // Degenerate step; treat the sample as reached.
            times.push(target);
            states.push(y.clone());
            next_sample += 1;
            h = 1e-4 * span;
            continue;
        }

        steps_taken += 1;
        if steps_taken > 50_000_000 {
            return Err(KummerError::NoConvergence {
                what: format!("ODE integration stalled at t = {t}"),
                achieved: h,
                wanted: target - t,
            });
        }

        rhs(t, &y, &mut k[0]);
        for stage in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage) {
                    let a = A[stage - 1][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                ytmp[i] = y[i] + h * acc;
            }
            let (head, tail) = k.split_at_mut(stage);
            let _ = head;
            rhs(t + C[stage] * h, &ytmp, &mut tail[0]);
        }

        let mut err = 0.0f64;
        for i in 0..dim {
            let mut v5 = 0.0;
            let mut v4 = 0.0;
            for j in 0..7 {
                v5 += B5[j] * k[j][i];
                v4 += B4[j] * k[j][i];
            }
            y5[i] = y[i] + h * v5;
            let scale = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = h * (v5 - v4) / scale;
            err += e * e;
        }
        err = (err / dim as f64).sqrt();

        if err <= 1.0 {
            t = if clipped { target } else { t + h };
            y.copy_from_slice(&y5);
            if stop(t, &y) {
                return Ok(OdeSolution {
                    times,
                    states,
                    status: OdeStatus::Stopped { t },
                });
            }
            while next_sample < sample_times.len() && sample_times[next_sample] <= t + teps {
                times.push(sample_times[next_sample]);
                states.push(y.clone());
                next_sample += 1;
            }
        }

        // PI-free step controller with the usual safety clamp. A non-finite
        // error estimate means a stage left the domain (for example crossed
        // a square-root boundary); shrink hard and retry instead of dying.
        let factor = if !err.is_finite() {
            0.2
        } else if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(opts.max_step);
        if !h.is_finite() || h <= 0.0 {
            return Err(KummerError::NoConvergence {
                what: format!("step size collapsed at t = {t}"),
                achieved: h,
                wanted: f64::EPSILON,
            });
        }
    }

    Ok(OdeSolution {
        times,
        states,
        status: OdeStatus::Completed,
    })
}
