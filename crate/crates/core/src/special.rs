//! Error-function helpers for exponential-Gaussian convolutions.

/// `1/sqrt(pi)`
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Scaled complementary error function `exp(x^2) erfc(x)` for `x >= 0`.
///
/// Below 26 the product is formed directly (both factors stay finite and
/// `erfc` keeps full relative precision there); above, the asymptotic
/// series is accurate to better than 1e-15.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 26.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        let inv2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..=7 {
            term *= -((2 * n - 1) as f64) * inv2;
            sum += term;
        }
        sum * FRAC_1_SQRT_PI / x
    }
}

/// `exp(sigma^2 / (2 tau^2) - t / tau) * erfc((sigma^2 / tau - t) / (sqrt(2) sigma))`
/// for `sigma > 0`, evaluated without overflow or catastrophic underflow.
///
/// This is twice the Gaussian-smoothed one-sided decay `e^{-t/tau} H(t)`,
/// scaled by `tau`; both the two-sided kernel and the decay response are
/// built from it.
#[inline]
pub fn scaled_exp_erfc(t: f64, tau: f64, sigma: f64) -> f64 {
    let r = sigma / tau;
    let x = (r - t / sigma) * std::f64::consts::FRAC_1_SQRT_2;
    if x < 0.0 {
        // Exponent is below -r^2/2 here, so it cannot overflow.
        (0.5 * r * r - t / tau).exp() * libm::erfc(x)
    } else {
        let g = -0.5 * (t / sigma) * (t / sigma);
        if g < -745.0 {
            0.0
        } else {
            g.exp() * erfcx(x)
        }
    }
}
