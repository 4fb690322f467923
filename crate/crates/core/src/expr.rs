//! Symbolic scalar expressions over a finite argument list.
//!
//! Couplings `g_0(I_1, .., I_N)` and free Hamiltonians `h_0(I_0, .., I_N)`
//! enter the reduced equations of motion through their exact partial
//! derivatives, so they are kept as small expression trees rather than
//! opaque closures. The operation set is deliberately tiny: constants,
//! argument references, the four arithmetic operations, integer powers,
//! `exp` and `sqrt`. That is enough for every system treated here while
//! keeping differentiation and serialization trivial.
//!
//! The JSON form is externally tagged with lowercase tags:
//!
//! ```json
//! {"mul": [{"const": 2.0}, {"pow": [{"arg": 0}, 3]}]}
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expr {
    Const(f64),
    /// Reference to the i-th argument of the enclosing function.
    Arg(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Integer power; negative exponents are allowed.
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
    Sqrt(Box<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn arg(i: usize) -> Expr {
        Expr::Arg(i)
    }

    /// Sum with light folding: dropped zero terms, folded constants.
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (Expr::Const(x), b) if x == 0.0 => b,
            (a, Expr::Const(y)) if y == 0.0 => a,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (a, Expr::Const(y)) if y == 0.0 => a,
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    /// Product with light folding: annihilating zeros, dropped unit factors.
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (Expr::Const(x), _) | (_, Expr::Const(x)) if x == 0.0 => Expr::Const(0.0),
            (Expr::Const(x), b) if x == 1.0 => b,
            (a, Expr::Const(y)) if y == 1.0 => a,
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (a, Expr::Const(y)) if y == 1.0 => a,
            (Expr::Const(x), b) if x == 0.0 && b != Expr::Const(0.0) => Expr::Const(0.0),
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    /// Integer power. `sqrt(f)^2` collapses to `f`, which keeps squared
    /// couplings exact when `g_0` itself involves a square root.
    pub fn pow(a: Expr, k: i32) -> Expr {
        match (a, k) {
            (_, 0) => Expr::Const(1.0),
            (a, 1) => a,
            (Expr::Const(x), k) => Expr::Const(x.powi(k)),
            (Expr::Sqrt(inner), 2) => *inner,
            (a, k) => Expr::Pow(Box::new(a), k),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(x.exp()),
            a => Expr::Exp(Box::new(a)),
        }
    }

    pub fn sqrt(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(x.sqrt()),
            a => Expr::Sqrt(Box::new(a)),
        }
    }

    /// Evaluate at `args`. Non-finite intermediates (division by zero,
    /// square root of a negative) propagate as NaN/inf; callers that have a
    /// domain to enforce check the result.
    pub fn eval(&self, args: &[f64]) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Arg(i) => args[*i],
            Expr::Add(a, b) => a.eval(args) + b.eval(args),
            Expr::Sub(a, b) => a.eval(args) - b.eval(args),
            Expr::Mul(a, b) => a.eval(args) * b.eval(args),
            Expr::Div(a, b) => a.eval(args) / b.eval(args),
            Expr::Pow(a, k) => a.eval(args).powi(*k),
            Expr::Exp(a) => a.eval(args).exp(),
            Expr::Sqrt(a) => a.eval(args).sqrt(),
        }
    }

    /// Largest argument index mentioned, if any. Used to validate that an
    /// expression fits the arity of the slot it is plugged into.
    pub fn max_arg(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Arg(i) => Some(*i),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_arg(), b.max_arg()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Expr::Pow(a, _) | Expr::Exp(a) | Expr::Sqrt(a) => a.max_arg(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_arg().is_none()
    }

    /// Exact partial derivative with respect to argument `k`.
    pub fn diff(&self, k: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Arg(i) => Expr::Const(if *i == k { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => Expr::add(a.diff(k), b.diff(k)),
            Expr::Sub(a, b) => Expr::sub(a.diff(k), b.diff(k)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(k), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(k)),
            ),
            Expr::Div(a, b) => Expr::div(
                Expr::sub(
                    Expr::mul(a.diff(k), (**b).clone()),
                    Expr::mul((**a).clone(), b.diff(k)),
                ),
                Expr::pow((**b).clone(), 2),
            ),
            Expr::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::Const(f64::from(*n)), Expr::pow((**a).clone(), n - 1)),
                a.diff(k),
            ),
            Expr::Exp(a) => Expr::mul(self.clone(), a.diff(k)),
            Expr::Sqrt(a) => Expr::div(
                a.diff(k),
                Expr::mul(Expr::Const(2.0), self.clone()),
            ),
        }
    }

    /// Replace every `Arg(i)` by `subs[i]`. Composing with a linear map of
    /// new arguments turns a function of the actions into a function of the
    /// sector coordinates and back.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Arg(i) => subs[*i].clone(),
            Expr::Add(a, b) => Expr::add(a.substitute(subs), b.substitute(subs)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(subs), b.substitute(subs)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(subs), b.substitute(subs)),
            Expr::Div(a, b) => Expr::div(a.substitute(subs), b.substitute(subs)),
            Expr::Pow(a, n) => Expr::pow(a.substitute(subs), *n),
            Expr::Exp(a) => Expr::exp(a.substitute(subs)),
            Expr::Sqrt(a) => Expr::sqrt(a.substitute(subs)),
        }
    }

    /// Linear combination `c0 + sum_i coeffs[i] * Arg(i)`.
    pub fn linear(c0: f64, coeffs: &[f64]) -> Expr {
        let mut e = Expr::Const(c0);
        for (i, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                e = Expr::add(e, Expr::mul(Expr::Const(c), Expr::Arg(i)));
            }
        }
        e
    }
}
