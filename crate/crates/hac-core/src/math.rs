//! Scalar math shim: `std` float intrinsics when available, libm otherwise.
//!
//! Every transcendental used by the crate goes through here so the core
//! stays `no_std`-clean and so train/eval paths share one set of kernels.

#![allow(clippy::excessive_precision)]

macro_rules! shim {
    ($(($name:ident, $libm:ident)),* $(,)?) => {
        $(
            #[inline]
            pub fn $name(x: f64) -> f64 {
                #[cfg(feature = "std")]
                {
                    x.$name()
                }
                #[cfg(not(feature = "std"))]
                {
                    libm::$libm(x)
                }
            }
        )*
    };
}

shim!(
    (exp, exp),
    (ln, log),
    (sqrt, sqrt),
    (sinh, sinh),
    (cosh, cosh),
    (acosh, acosh),
    (asin, asin),
    (acos, acos),
    (cos, cos),
    (tanh, tanh),
    (abs, fabs),
);

/// sinh(x)/x extended continuously through x = 0.
///
/// The naive quotient loses all precision (and NaNs at exactly zero); the
/// Taylor branch keeps absolute error below 1e-16 for |x| < 1e-4.
#[inline]
pub fn sinhc(x: f64) -> f64 {
    if abs(x) < 1e-4 {
        let x2 = x * x;
        1.0 + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        sinh(x) / x
    }
}

/// d/dx sinh(x)/x, with the same series treatment near zero.
#[inline]
pub fn sinhc_deriv(x: f64) -> f64 {
    if abs(x) < 1e-4 {
        let x2 = x * x;
        x / 3.0 + x * x2 / 30.0
    } else {
        (cosh(x) * x - sinh(x)) / (x * x)
    }
}
