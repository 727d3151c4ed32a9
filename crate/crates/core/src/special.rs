//! Digamma and the Beta/Gamma expectations consumed by the surrogate and
//! HDP updates.
//!
//! Everything here is a pure function of its arguments.

use crate::error::{Error, Result};

/// Shape parameters of a Beta distribution, `p(x) ∝ x^(u-1) (1-x)^(v-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    u: f64,
    v: f64,
}

impl BetaParams {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(u > 0.0 && u.is_finite() && v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("Beta shapes must be positive, got ({u}, {v})")));
        }
        Ok(BetaParams { u, v })
    }

    #[inline]
    pub fn u(&self) -> f64 {
        self.u
    }

    #[inline]
    pub fn v(&self) -> f64 {
        self.v
    }
}

/// Shape/rate parameters of a Gamma distribution, `p(x) ∝ x^(a-1) e^(-bx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    a: f64,
    b: f64,
}

impl GammaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::Domain(format!("Gamma shape and rate must be positive, got ({a}, {b})")));
        }
        Ok(GammaParams { a, b })
    }

    #[inline]
    pub fn shape(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn rate(&self) -> f64 {
        self.b
    }
}

// Below this the recurrence is used to shift the argument upward.
const ASYMPTOTIC_THRESHOLD: f64 = 8.0;

/// The digamma function ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("digamma requires a positive finite argument, got {x}")));
    }
    Ok(psi(x))
}

/// Unchecked digamma for hot loops; callers guarantee `x > 0`.
#[inline]
pub(crate) fn psi(mut x: f64) -> f64 {
    debug_assert!(x > 0.0, "psi({x})");
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / x;
        x += 1.0;
    }
    // ln x - 1/(2x) - Σ B_{2k} / (2k x^{2k}), seven terms.
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    x.ln() - 0.5 * inv - series - shift
}

/// `(E[log x], E[log(1-x)])` for `x ~ Beta(u, v)`.
pub fn beta_expect_logs(p: BetaParams) -> (f64, f64) {
    let total = psi(p.u + p.v);
    (psi(p.u) - total, psi(p.v) - total)
}

/// `E[x] = a / b` for `x ~ Gamma(a, b)`.
#[inline]
pub fn gamma_expect(p: GammaParams) -> f64 {
    p.a / p.b
}

/// Geometric expectation `G[x] = exp(E[log x]) = exp(ψ(a)) / b`.
#[inline]
pub fn gamma_geo_expect(p: GammaParams) -> f64 {
    psi(p.a).exp() / p.b
}

/// `E[log x]` for `x ~ Gamma(a, b)`.
#[inline]
pub fn gamma_expect_log(p: GammaParams) -> f64 {
    psi(p.a) - p.b.ln()
}
