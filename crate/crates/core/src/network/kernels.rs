//! Branch-free elementwise kernels that the compiler can vectorize.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// 1.5·2⁵²: adding it rounds to the nearest integer in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;

/// `e^x` for `x ≤ 0`, within a few ulp; inputs below −708 are clamped.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    let x = x.max(-708.0);
    let shifted = x * LOG2E + SHIFTER;
    let k = shifted.to_bits() as i64 - SHIFTER.to_bits() as i64;
    let kf = shifted - SHIFTER;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Taylor polynomial to degree 13 on |r| ≤ ln2/2.
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * f64::from_bits(((k + 1023) as u64) << 52)
}

/// Hyperbolic tangent, accurate to a few ulp over the whole line.
#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    let ax = x.abs();
    let t = exp_nonpositive(-2.0 * ax);
    let far = (1.0 - t) / (1.0 + t);
    // odd series below 1/8, where 1 − t would cancel
    let x2 = ax * ax;
    let mut p = -929_569.0 / 638_512_875.0;
    p = p * x2 + 21_844.0 / 6_081_075.0;
    p = p * x2 - 1_382.0 / 155_925.0;
    p = p * x2 + 62.0 / 2_835.0;
    p = p * x2 - 17.0 / 315.0;
    p = p * x2 + 2.0 / 15.0;
    p = p * x2 - 1.0 / 3.0;
    let near = ax + ax * x2 * p;
    let y = if ax < 0.125 { near } else { far };
    let y = if ax.is_nan() { x } else { y };
    y.copysign(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ulps(a: f64, b: f64) -> f64 {
        (a - b).abs() / (b.abs().max(f64::MIN_POSITIVE) * f64::EPSILON)
    }

    #[test]
    fn exact_points() {
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(-0.0).to_bits(), (-0.0f64).to_bits());
        assert_eq!(tanh(40.0), 1.0);
        assert_eq!(tanh(-1e300), -1.0);
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert!(tanh(f64::NAN).is_nan());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn tanh_matches_libm(x in -30.0f64..30.0) {
            prop_assert!(ulps(tanh(x), x.tanh()) < 4.0, "x={x}: {} vs {}", tanh(x), x.tanh());
        }

        #[test]
        fn tanh_small_arguments(x in -0.2f64..0.2) {
            prop_assert!(ulps(tanh(x), x.tanh()) < 4.0);
        }

        #[test]
        fn exp_matches_libm(x in -700.0f64..0.0) {
            prop_assert!(ulps(exp_nonpositive(x), x.exp()) < 4.0);
        }
    }
}
