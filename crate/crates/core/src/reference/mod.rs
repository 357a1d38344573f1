//! Reference prices: closed form, Fourier-cosine expansion of affine
//! characteristic functions, and a finite-difference solve of the same
//! time-stepping scheme the networks are trained on.

mod bs;
mod cos;
mod fd;
mod heston;
mod lifted;

pub use bs::{bs_cf, bs_price};
pub use cos::{cos_price, CosConfig};
pub use fd::{fd_oracle_bs, fd_step, FdGrid, FdSolution};
pub use heston::{heston_cf, heston_cf_at};
pub use lifted::{lifted_cf, lifted_riccati, RiccatiSolution, DEFAULT_RICCATI_STEPS};

use num_complex::Complex64;

/// `e^z − 1` without cancellation for small `z`.
pub(crate) fn expm1(z: Complex64) -> Complex64 {
    let half = (0.5 * z.im).sin();
    let re = z.re.exp_m1() * z.im.cos() - 2.0 * half * half;
    Complex64::new(re, z.re.exp() * z.im.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_expm1() {
        for z in [Complex64::new(1e-9, -2e-9), Complex64::new(0.7, 2.0), Complex64::new(-3.0, 0.1)] {
            let direct = z.exp() - 1.0;
            let e = expm1(z);
            assert!((e - direct).norm() <= 1e-15 * direct.norm().max(1.0) || (e - z).norm() < 1e-16);
        }
        let z = Complex64::new(1e-12, 3e-12);
        assert!((expm1(z) - z).norm() < 1e-23);
    }
}
