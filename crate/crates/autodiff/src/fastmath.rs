//! Branch-free `exp` and reductions over slices so the softmax inner
//! loops vectorize.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_16e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
// adding and subtracting 1.5·2^52 rounds to the nearest integer
const SHIFTER: f64 = 6_755_399_441_055_744.0;
pub(crate) const FLUSH: f64 = -600.0;

/// Scalar kernel shared by the slice routines. Inputs must not exceed 709;
/// anything below `FLUSH` becomes exactly zero so that later products never
/// go subnormal. Relative error ≲ 2 ulp.
#[inline(always)]
fn exp1(v: f64) -> f64 {
    let x = v.max(FLUSH);
    let shifted = x.mul_add(LOG2E, SHIFTER);
    let n = shifted - SHIFTER;
    let r = n.mul_add(-LN2_LO, n.mul_add(-LN2_HI, x));
    // Taylor series to degree 13 on |r| ≤ ln2/2
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
    // the low mantissa bits of `shifted` hold n in two's complement
    let scale = f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52);
    let keep = ((v >= FLUSH) as u64).wrapping_neg();
    f64::from_bits((p * scale).to_bits() & keep)
}

const LANES: usize = 8;

/// `x ← exp(a·x − b)` for every element; returns the sum of the results.
pub(crate) fn exp_affine_sum(xs: &mut [f64], a: f64, b: f64) -> f64 {
    let mut acc = [0.0; LANES];
    let mut chunks = xs.chunks_exact_mut(LANES);
    for c in &mut chunks {
        let mut e = [0.0; LANES];
        for l in 0..LANES {
            e[l] = exp1(a.mul_add(c[l], -b));
            acc[l] += e[l];
        }
        c.copy_from_slice(&e);
    }
    let mut total: f64 = acc.iter().sum();
    for v in chunks.into_remainder() {
        *v = exp1(a.mul_add(*v, -b));
        total += *v;
    }
    total
}

/// Largest element (`-∞` for an empty slice).
pub(crate) fn max(xs: &[f64]) -> f64 {
    let mut acc = [f64::NEG_INFINITY; LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for c in &mut chunks {
        for (v, m) in c.iter().zip(acc.iter_mut()) {
            *m = if *v > *m { *v } else { *m };
        }
    }
    chunks
        .remainder()
        .iter()
        .chain(&acc)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Lane-split dot product.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for ((s, p), q) in acc.iter_mut().zip(x).zip(y) {
            *s += p * q;
        }
    }
    acc.iter().sum::<f64>() + ra.iter().zip(rb).map(|(p, q)| p * q).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_in_place(xs: &mut [f64]) {
        exp_affine_sum(xs, 1.0, 0.0);
    }

    #[test]
    fn matches_libm() {
        let mut worst: f64 = 0.0;
        let xs: Vec<f64> = (0..200_001)
            .map(|i| -600.0 + i as f64 * 0.003 + 1e-7 * (i % 7) as f64)
            .collect();
        let mut ys = xs.clone();
        exp_in_place(&mut ys);
        for (x, y) in xs.iter().zip(&ys) {
            let e = x.exp();
            worst = worst.max(((y - e) / e).abs());
        }
        assert!(worst < 4.0 * f64::EPSILON, "worst relative error {worst:e}");
        let mut edge = [0.0, -1000.0, -600.5, 1.0];
        exp_in_place(&mut edge);
        assert_eq!(edge[0], 1.0);
        assert_eq!(edge[1], 0.0);
        assert_eq!(edge[2], 0.0);
        assert!((edge[3] - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn reductions() {
        let xs: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
        assert_eq!(
            max(&xs),
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        );
        assert_eq!(max(&[]), f64::NEG_INFINITY);
        let naive: f64 = xs.iter().map(|x| x * x).sum();
        assert!((dot(&xs, &xs) - naive).abs() < 1e-9);
        let mut ys = xs.clone();
        let s = exp_affine_sum(&mut ys, 0.1, 2.0);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((y - (0.1 * x - 2.0).exp()).abs() <= 1e-14 * y);
        }
        assert!((s - ys.iter().sum::<f64>()).abs() < 1e-12 * s);
    }
}
