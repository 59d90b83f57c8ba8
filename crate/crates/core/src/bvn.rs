//! Centred bivariate normal CDF.
//!
//! The standardized case uses the Drezner–Wesolowsky integral with Genz's
//! double-precision modifications: Gauss–Legendre quadrature on the
//! arcsine-transformed correlation for |ρ| < 0.925 and an asymptotic
//! expansion around |ρ| = 1 otherwise. Degenerate covariances reduce to the
//! univariate CDF.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

// Gauss–Legendre half-rules (weight, abscissa) for 6, 12 and 20 points.
const GL6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, 0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, 0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, 0.238_619_186_083_197_0),
];
const GL12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, 0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, 0.904_117_256_370_475_0),
    (0.160_078_328_543_346_4, 0.769_902_674_194_305_0),
    (0.203_167_426_723_065_9, 0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, 0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, 0.125_233_408_511_469_2),
];
const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, 0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, 0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, 0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, 0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, 0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, 0.636_053_680_726_515_0),
    (0.131_688_638_449_176_6, 0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, 0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, 0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, 0.076_526_521_133_497_33),
];

/// `P(X > dh, Y > dk)` for standard normals with correlation `r`.
fn upper_orthant(dh: f64, dk: f64, r: f64) -> f64 {
    if dh == f64::INFINITY || dk == f64::INFINITY {
        return 0.0;
    }
    if dh == f64::NEG_INFINITY {
        return if dk == f64::NEG_INFINITY { 1.0 } else { norm_cdf(-dk) };
    }
    if dk == f64::NEG_INFINITY {
        return norm_cdf(-dh);
    }
    if r == 0.0 {
        return norm_cdf(-dh) * norm_cdf(-dk);
    }
    let rule: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };
    let tp = 2.0 * PI;
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for &(w, x) in rule {
            for t in [1.0 - x, 1.0 + x] {
                let sn = (asr * t).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / tp + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a_s = (1.0 - r) * (1.0 + r);
            let mut a = a_s.sqrt();
            let b_s = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(b_s / a_s + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s) / 3.0 + c * d * a_s * a_s);
            }
            if hk > -100.0 {
                let b = b_s.sqrt();
                let sp = tp.sqrt() * norm_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * b_s * (1.0 - d * b_s) / 3.0);
            }
            a /= 2.0;
            let mut sum = 0.0;
            for &(w, x) in rule {
                for t in [1.0 - x, 1.0 + x] {
                    let xs = (a * t) * (a * t);
                    let asr = -(b_s / xs + hk) / 2.0;
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        sum += w * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * sum - bvn) / tp;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 { norm_cdf(k) - norm_cdf(h) } else { norm_cdf(-h) - norm_cdf(-k) };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(X <= h, Y <= k)` for standard normals with correlation `rho` in `[-1, 1]`.
pub fn std_phi2(h: f64, k: f64, rho: f64) -> f64 {
    if rho >= 1.0 {
        return norm_cdf(h.min(k));
    }
    if rho <= -1.0 {
        return (norm_cdf(h) - norm_cdf(-k)).max(0.0);
    }
    upper_orthant(-h, -k, rho)
}

/// A centred bivariate Gaussian with covariance `sigma`, evaluated at the
/// upper integration limits `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bivariate {
    pub c: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

impl Bivariate {
    pub fn cdf(&self) -> Result<f64> {
        phi2(self.c, self.sigma)
    }
}

/// Relative threshold under which a variance is treated as exactly zero.
const DEGENERATE_VARIANCE: f64 = 1e-14;
const PSD_TOL: f64 = 1e-12;

/// `P(U1 <= c1, U2 <= c2)` for a centred Gaussian `(U1, U2)` with covariance `sigma`.
pub fn phi2(c: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<f64> {
    let (v1, v2) = (sigma[0][0], sigma[1][1]);
    let cov = sigma[0][1];
    let scale = v1.abs().max(v2.abs());
    if !(v1.is_finite() && v2.is_finite() && cov.is_finite()) || c.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("non-finite bivariate input {c:?} {sigma:?}")));
    }
    if (sigma[1][0] - cov).abs() > PSD_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(format!("asymmetric covariance {sigma:?}")));
    }
    if v1 < -PSD_TOL * scale || v2 < -PSD_TOL * scale {
        return Err(Error::NotPsd(format!("negative variance in {sigma:?}")));
    }
    let thr = DEGENERATE_VARIANCE * scale;
    let step = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };
    let d1 = v1 <= thr;
    let d2 = v2 <= thr;
    match (d1, d2) {
        (true, true) => return Ok(step(c[0]) * step(c[1])),
        (false, true) => return Ok(norm_cdf(c[0] / v1.sqrt()) * step(c[1])),
        (true, false) => return Ok(norm_cdf(c[1] / v2.sqrt()) * step(c[0])),
        (false, false) => {}
    }
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    let mut rho = cov / (s1 * s2);
    if rho.abs() > 1.0 + PSD_TOL {
        return Err(Error::NotPsd(format!("correlation {rho} outside [-1, 1]")));
    }
    if rho.abs() >= 1.0 - 1e-15 {
        rho = rho.signum();
    }
    Ok(std_phi2(c[0] / s1, c[1] / s2, rho))
}

/// `phi2(c, sigma) + phi2(-c, sigma)`.
pub fn rho_parts(c: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<f64> {
    Ok(phi2(c, sigma)? + phi2([-c[0], -c[1]], sigma)?)
}
