//! Symmetric O(K²) accumulation of the squared-norm RBF Stein direction.
//!
//! Each unordered pair is evaluated once and scattered to both particles.
//! Accumulation order is fixed by particle index (row sums over eight lanes,
//! then reduced pairwise), and every product-sum uses `mul_add`, so the AVX2
//! build and the portable build produce bit-identical results.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Independent partial sums per row.
const LANES: usize = 8;

/// `exp(z)` for `z <= 0`, correct to a couple of ulp; `0` below `-708`.
#[inline(always)]
pub(crate) fn exp_neg(z: f64) -> f64 {
    let zc = if z < -708.0 { -708.0 } else { z };
    let t = zc * LOG2E + ROUND_MAGIC;
    let n = t - ROUND_MAGIC;
    let r = (zc - n * LN2_HI) - n * LN2_LO;
    let mut p: f64 = 1.0 / 6_227_020_800.0;
    p = p.mul_add(r, 1.0 / 479_001_600.0);
    p = p.mul_add(r, 1.0 / 39_916_800.0);
    p = p.mul_add(r, 1.0 / 3_628_800.0);
    p = p.mul_add(r, 1.0 / 362_880.0);
    p = p.mul_add(r, 1.0 / 40_320.0);
    p = p.mul_add(r, 1.0 / 5_040.0);
    p = p.mul_add(r, 1.0 / 720.0);
    p = p.mul_add(r, 1.0 / 120.0);
    p = p.mul_add(r, 1.0 / 24.0);
    p = p.mul_add(r, 1.0 / 6.0);
    p = p.mul_add(r, 0.5);
    p = p.mul_add(r, 1.0);
    p = p.mul_add(r, 1.0);
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    if z < -708.0 {
        0.0
    } else {
        p * scale
    }
}

/// Column-major inputs: `x[c*k + i]` is coordinate `c` of particle `i`;
/// `attract` holds `−α∇L` in the same layout. Writes the unnormalized
/// `Σ_j [k_ij·attract_j + ∇_{x_j} k(x_j, x_i)]` into `phi`. `row` is scratch
/// of length `k`.
#[inline(always)]
fn accumulate_impl(
    k: usize,
    m: usize,
    x: &[f64],
    attract: &[f64],
    inv_sigma2: f64,
    phi: &mut [f64],
    row: &mut [f64],
) {
    let h = -0.5 * inv_sigma2;
    phi.iter_mut().for_each(|p| *p = 0.0);
    for i in 0..k {
        let rest = k - i - 1;
        let kr = &mut row[..rest];
        kr.iter_mut().for_each(|r| *r = 0.0);
        for c in 0..m {
            let xi = x[c * k + i];
            for (r, &xj) in kr.iter_mut().zip(&x[c * k + i + 1..(c + 1) * k]) {
                let d = xi - xj;
                *r = d.mul_add(d, *r);
            }
        }
        for r in kr.iter_mut() {
            *r = exp_neg(*r * h);
        }
        let full = rest / LANES * LANES;
        for c in 0..m {
            let (lo, hi) = (c * k + i + 1, (c + 1) * k);
            let xi = x[c * k + i];
            let ai = attract[c * k + i];
            let mut lane = [0.0f64; LANES];
            let chunks = kr[..full]
                .chunks_exact(LANES)
                .zip(x[lo..lo + full].chunks_exact(LANES))
                .zip(attract[lo..lo + full].chunks_exact(LANES))
                .zip(phi[lo..lo + full].chunks_exact_mut(LANES));
            for (((kv, xj), aj), pj) in chunks {
                for l in 0..LANES {
                    let kd = kv[l] * inv_sigma2 * (xi - xj[l]);
                    lane[l] = kv[l].mul_add(aj[l], lane[l] + kd);
                    pj[l] = kv[l].mul_add(ai, pj[l] - kd);
                }
            }
            for (j, &kv) in (lo + full..hi).zip(&kr[full..]) {
                let kd = kv * inv_sigma2 * (xi - x[j]);
                lane[0] = kv.mul_add(attract[j], lane[0] + kd);
                phi[j] = kv.mul_add(ai, phi[j] - kd);
            }
            let row_sum = ((lane[0] + lane[1]) + (lane[2] + lane[3]))
                + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
            phi[c * k + i] += ai + row_sum;
        }
    }
}

macro_rules! accumulate_variant {
    ($name:ident $(, $feat:literal)?) => {
        $(#[target_feature(enable = $feat)])?
        #[allow(unused_unsafe)]
        unsafe fn $name(
            k: usize,
            m: usize,
            x: &[f64],
            attract: &[f64],
            inv_sigma2: f64,
            phi: &mut [f64],
            row: &mut [f64],
        ) {
            accumulate_impl(k, m, x, attract, inv_sigma2, phi, row)
        }
    };
}

accumulate_variant!(accumulate_portable);
#[cfg(target_arch = "x86_64")]
accumulate_variant!(accumulate_avx2, "avx2,fma");
#[cfg(target_arch = "x86_64")]
accumulate_variant!(accumulate_avx512, "avx512f,avx2,fma");

pub(crate) fn accumulate(
    k: usize,
    m: usize,
    x: &[f64],
    attract: &[f64],
    inv_sigma2: f64,
    phi: &mut [f64],
    row: &mut [f64],
) {
    debug_assert_eq!(x.len(), k * m);
    debug_assert_eq!(attract.len(), k * m);
    debug_assert_eq!(phi.len(), k * m);
    debug_assert!(row.len() >= k);
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::is_x86_feature_detected as has;
        // SAFETY (both branches): the enabled CPU features were detected at runtime.
        if has!("avx512f") && has!("avx2") && has!("fma") {
            unsafe { accumulate_avx512(k, m, x, attract, inv_sigma2, phi, row) };
            return;
        }
        if has!("avx2") && has!("fma") {
            unsafe { accumulate_avx2(k, m, x, attract, inv_sigma2, phi, row) };
            return;
        }
    }
    // SAFETY: no target features required.
    unsafe { accumulate_portable(k, m, x, attract, inv_sigma2, phi, row) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_neg_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let z = -(i as f64) * 0.003_7;
            let exact = z.exp();
            if exact > 1e-300 {
                worst = worst.max(((exp_neg(z) - exact) / exact).abs());
            }
        }
        assert!(worst < 1e-15, "{worst:e}");
        assert_eq!(exp_neg(0.0), 1.0);
        assert_eq!(exp_neg(-800.0), 0.0);
        assert_eq!(exp_neg(f64::NEG_INFINITY), 0.0);
    }

    fn inputs(k: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
        let x = (0..k * m)
            .map(|i| ((i * 7919) % 1000) as f64 / 97.0 - 5.0)
            .collect();
        let a = (0..k * m)
            .map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.5)
            .collect();
        (x, a)
    }

    #[test]
    fn dispatch_matches_portable_bitwise() {
        for (k, m) in [(1, 1), (3, 1), (4, 1), (9, 2), (131, 1), (37, 3)] {
            let (x, a) = inputs(k, m);
            let mut fast = vec![0.0; k * m];
            let mut slow = vec![0.0; k * m];
            let mut row = vec![0.0; k];
            accumulate(k, m, &x, &a, 0.7, &mut fast, &mut row);
            unsafe { accumulate_portable(k, m, &x, &a, 0.7, &mut slow, &mut row) };
            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                let mut mid = vec![0.0; k * m];
                unsafe { accumulate_avx2(k, m, &x, &a, 0.7, &mut mid, &mut row) };
                assert_eq!(mid, slow);
            }
            assert_eq!(
                fast.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                slow.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn matches_naive_double_sum() {
        let (k, m, s2) = (23, 2, 1.7f64);
        let (x, a) = inputs(k, m);
        let mut phi = vec![0.0; k * m];
        accumulate(k, m, &x, &a, 1.0 / s2, &mut phi, &mut vec![0.0; k]);
        for i in 0..k {
            for c in 0..m {
                let mut want = 0.0;
                for j in 0..k {
                    let d2: f64 = (0..m).map(|q| (x[q * k + j] - x[q * k + i]).powi(2)).sum();
                    let kv = (-d2 / (2.0 * s2)).exp();
                    want += kv * a[c * k + j] - (x[c * k + j] - x[c * k + i]) / s2 * kv;
                }
                assert!((phi[c * k + i] - want).abs() < 1e-12, "{i} {c}");
            }
        }
    }
}
