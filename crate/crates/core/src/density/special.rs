//! Digamma and log-gamma for positive real arguments.

use crate::scalar::Scalar;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    debug_assert!(x > T::zero());
    let half = T::c(0.5);
    if x < half {
        // Γ(x) = Γ(x + 1) / x
        return ln_gamma(x + T::one()) - x.ln();
    }
    let x = x - T::one();
    let mut acc = T::c(LANCZOS[0]);
    for (i, &coef) in LANCZOS.iter().enumerate().skip(1) {
        acc += T::c(coef) / (x + T::from_count(i));
    }
    let t = x + T::c(LANCZOS_G) + half;
    half * T::c((2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma<T: Scalar>(mut x: T) -> T {
    debug_assert!(x > T::zero());
    let mut shift = T::zero();
    let lower = T::c(10.0);
    while x < lower {
        shift -= x.recip();
        x += T::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    // asymptotic series in 1/x²
    let series = inv2
        * (T::c(1.0 / 12.0)
            - inv2
                * (T::c(1.0 / 120.0)
                    - inv2 * (T::c(1.0 / 252.0) - inv2 * (T::c(1.0 / 240.0) - inv2 * T::c(1.0 / 132.0)))));
    shift + x.ln() - T::c(0.5) * inv - series
}

/// Multivariate log-gamma `ln Γ_D(x)`.
pub fn ln_multi_gamma<T: Scalar>(x: T, dim: usize) -> T {
    let d = T::from_count(dim);
    let mut acc = d * (d - T::one()) * T::c(0.25) * T::PI().ln();
    for i in 0..dim {
        acc += ln_gamma(x - T::c(0.5) * T::from_count(i));
    }
    acc
}
