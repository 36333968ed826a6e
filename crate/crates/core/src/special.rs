//! Scalar special functions shared by the copula families and the risk model.
//!
//! Normal CDF/quantile, Student t CDF/quantile/log-density and the bivariate
//! normal CDF. The complementary error function comes from `libm`; log-gamma
//! and the regularized incomplete beta come from `statrs`.

#![allow(clippy::excessive_precision)]

use statrs::function::beta::beta_reg;
use libm::erfc;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Natural log of the standard normal density.
#[inline]
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile.
///
/// Acklam's rational approximation (relative error below 1.2e-9) followed by
/// one Newton step against the erfc-based CDF. The upper half is obtained by
/// symmetry so that `1 - p` is computed exactly.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -norm_quantile(1.0 - p);
    }
    let x = acklam(p);
    // Newton step on Phi(x) - p; the error of Acklam is small enough that a
    // single step brings it to rounding level.
    let e = norm_cdf(x) - p;
    let d = norm_pdf(x);
    if d > 0.0 && d.is_finite() {
        x - e / d
    } else {
        x
    }
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Log of the Student t density with `nu` degrees of freedom.
pub fn student_t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Student t CDF via the regularized incomplete beta function.
pub fn student_t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    let x2 = x * x;
    // tail = P(T > |x|)
    let tail = if x2 < nu {
        // argument close to 1: use the complementary form for accuracy
        0.5 * (1.0 - beta_reg(0.5, 0.5 * nu, x2 / (nu + x2)))
    } else {
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2))
    };
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Student t quantile: Cornish-Fisher or power-tail start, then safeguarded
/// Newton iterations on the CDF.
pub fn student_t_quantile(p: f64, nu: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) || nu <= 0.0 {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    if p > 0.5 {
        return -student_t_quantile(1.0 - p, nu);
    }

    // lower half: x < 0
    let z = norm_quantile(p);
    let cf = {
        let z2 = z * z;
        z + (z2 * z + z) / (4.0 * nu)
            + ((5.0 * z2 + 16.0) * z2 * z + 3.0 * z) / (96.0 * nu * nu)
            + (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 * z - 15.0 * z) / (384.0 * nu * nu * nu)
    };
    // P(T < x) ~ k |x|^{-nu} for x -> -inf
    let ln_k = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        + 0.5 * (nu - 1.0) * nu.ln();
    let tail = -((ln_k - p.ln()) / nu).exp();
    let mut x = if p < 1e-3 && tail.is_finite() { tail.min(cf) } else { cf };
    if !x.is_finite() || x >= 0.0 {
        x = -1.0;
    }

    // bracket [lo, hi] with F(lo) <= p <= F(hi)
    let mut hi = 0.0_f64;
    let mut lo = x;
    let mut guard = 0;
    while student_t_cdf(lo, nu) > p && guard < 2000 {
        hi = lo;
        lo *= 2.0;
        guard += 1;
    }
    if student_t_cdf(x, nu) < p {
        lo = x;
    } else {
        hi = hi.min(x);
    }

    for _ in 0..100 {
        let f = student_t_cdf(x, nu) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = student_t_ln_pdf(x, nu).exp();
        let mut next = x - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

// Gauss-Legendre abscissae/weights on [-1, 1] (half rules), from Genz's
// bivariate normal routine.
const GL6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197_0),
];
const GL12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475_0),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305_0),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];
const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515_0),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

/// Bivariate standard normal CDF `P(X <= h, Y <= k)` with correlation `r`.
///
/// Genz's BVND (Drezner-Wesolowsky with the double-precision modifications
/// for |r| near 1); absolute accuracy around 1e-15.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return norm_cdf(k);
    }
    if k == f64::INFINITY {
        return norm_cdf(h);
    }
    bvnd(-h, -k, r.clamp(-1.0, 1.0))
}

/// Upper orthant probability `P(X > dh, Y > dk)`.
fn bvnd(dh: f64, dk: f64, r: f64) -> f64 {
    const TWOPI: f64 = 2.0 * PI;
    let ar = r.abs();
    let rule: &[(f64, f64)] = if ar < 0.3 {
        &GL6
    } else if ar < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;

    if ar < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for &(w, x) in rule {
            for is in [-1.0, 1.0] {
                let sn = (asr * (is * x + 1.0) * 0.5).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (2.0 * TWOPI);
        return bvn + norm_cdf(-h) * norm_cdf(-k);
    }

    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if ar < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -0.5 * (b_s / a_s + hk);
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if -hk < 100.0 {
            let b = b_s.sqrt();
            bvn -= (-0.5 * hk).exp()
                * SQRT_2PI
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a *= 0.5;
        for &(w, x) in rule {
            for is in [-1.0, 1.0] {
                let xs = (a * (is * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -0.5 * (b_s / xs + hk);
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * xs / (2.0 * (1.0 + rs).powi(2))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / TWOPI;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        bvn = -bvn;
        if k > h {
            if h < 0.0 {
                bvn += norm_cdf(k) - norm_cdf(h);
            } else {
                bvn += norm_cdf(-h) - norm_cdf(-k);
            }
        }
        bvn
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Abramowitz & Stegun 26.1 / high-precision reference values
    const PHI_REF: &[(f64, f64)] = &[
        (-8.0, 6.220_960_574_271_784e-16),
        (-5.0, 2.866_515_718_791_939e-7),
        (-3.0, 1.349_898_031_630_094_6e-3),
        (-1.0, 0.158_655_253_931_457_05),
        (0.0, 0.5),
        (0.5, 0.691_462_461_274_013_1),
        (2.0, 0.977_249_868_051_820_8),
    ];

    #[test]
    fn norm_cdf_reference_values() {
        for &(x, p) in PHI_REF {
            assert!(((norm_cdf(x) - p) / p).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn norm_quantile_roundtrip() {
        for &(x, p) in PHI_REF {
            let q = norm_quantile(p);
            assert!((q - x).abs() < 1e-12 * (1.0 + x.abs()), "p={p} q={q} x={x}");
        }
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let x = norm_quantile(p);
            assert!((norm_cdf(x) - p).abs() < 1e-15, "p={p}");
        }
        assert_eq!(norm_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(norm_quantile(1.0), f64::INFINITY);
        assert!(norm_quantile(1.5).is_nan());
    }

    #[test]
    fn student_t_matches_closed_forms() {
        // nu = 1 is Cauchy, nu = 2 has F(x) = 1/2 + x / (2 sqrt(2 + x^2))
        for &x in &[-30.0f64, -3.0, -0.7, 0.0, 0.2, 1.5, 12.0] {
            let cauchy = 0.5 + x.atan() / PI;
            assert!((student_t_cdf(x, 1.0) - cauchy).abs() < 1e-14);
            let two = 0.5 + x / (2.0 * (2.0 + x * x).sqrt());
            assert!((student_t_cdf(x, 2.0) - two).abs() < 1e-14);
        }
    }

    #[test]
    fn student_t_quantile_inverts_cdf() {
        for &nu in &[1.0, 2.5, 4.0, 10.0, 60.0] {
            for &p in &[1e-10, 1e-6, 0.001, 0.02, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
                let x = student_t_quantile(p, nu);
                let back = student_t_cdf(x, nu);
                assert!((back - p).abs() < 1e-13 * p.max(1e-3), "nu={nu} p={p} back={back}");
            }
        }
    }

    fn bvn_oracle(h: f64, k: f64, r: f64) -> f64 {
        // P(X<=h, Y<=k) = int_{-inf}^{h} phi(x) Phi((k - r x)/sqrt(1-r^2)) dx
        let s = (1.0 - r * r).sqrt();
        let lo = -40.0_f64.max(-40.0);
        crate::quadrature::integrate(
            |x| norm_pdf(x) * norm_cdf((k - r * x) / s),
            lo,
            h,
            &[],
            1e-13,
            1e-15,
        )
        .unwrap()
        .value
    }

    #[test]
    fn bvn_matches_one_dimensional_quadrature() {
        let rs = [-0.99, -0.951, -0.9, -0.5, -0.1, 0.0, 0.2, 0.6, 0.8, 0.93, 0.951, 0.999];
        let pts = [(-2.0, -1.0), (0.0, 0.0), (0.3, -0.4), (1.5, 2.5), (-3.0, 3.0), (2.0, 2.0)];
        for &r in &rs {
            for &(h, k) in &pts {
                let got = bvn_cdf(h, k, r);
                let want = bvn_oracle(h, k, r);
                assert!((got - want).abs() < 1e-12, "h={h} k={k} r={r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn bvn_orthant_closed_form() {
        for &r in &[-0.951f64, -0.3, 0.0, 0.454, 0.951] {
            let want = 0.25 + r.asin() / (2.0 * PI);
            assert!((bvn_cdf(0.0, 0.0, r) - want).abs() < 1e-15);
        }
    }
}
