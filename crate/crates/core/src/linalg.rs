//! Small complex-arithmetic helpers shared by the array-processing code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// `e^{j·phase}`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Closed-form geometric phase sum `Σ_{m=0}^{len-1} e^{j·m·x}`.
///
/// Falls back to direct summation when `x` sits on a multiple of 2π, where
/// the Dirichlet-kernel ratio is 0/0.
pub fn geometric_sum(len: usize, x: f64) -> C64 {
    if len == 0 {
        return C64::new(0.0, 0.0);
    }
    let half = 0.5 * x;
    let denom = half.sin();
    if denom.abs() < 1e-7 {
        return (0..len).map(|m| cis(m as f64 * x)).sum();
    }
    let n = len as f64;
    let magnitude = (n * half).sin() / denom;
    cis((n - 1.0) * half) * magnitude
}

/// Inner product `aᴴ b`.
pub fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Rotates `v` so that its first entry with non-negligible modulus is real
/// and positive. Makes singular/eigen vectors reproducible.
pub fn fix_phase(v: &mut [C64]) {
    let scale = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|x| x.norm() > 1e-12 * scale).copied() {
        let rot = first.conj() / first.norm();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

/// Dominant eigenpair of the 2×2 Hermitian matrix `[[a, b], [b̄, c]]`.
///
/// Returns the largest eigenvalue and a unit eigenvector with the phase
/// convention of [`fix_phase`].
pub fn hermitian2_top_eigen(a: f64, b: C64, c: f64) -> (f64, [C64; 2]) {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = (half_diff * half_diff + b.norm_sqr()).sqrt();
    let lambda = mean + radius;
    // Two algebraically equivalent null-space directions of (M - λI); keep the
    // better conditioned one.
    let v1 = [b, C64::new(lambda - a, 0.0)];
    let v2 = [C64::new(lambda - c, 0.0), b.conj()];
    let n1 = (v1[0].norm_sqr() + v1[1].norm_sqr()).sqrt();
    let n2 = (v2[0].norm_sqr() + v2[1].norm_sqr()).sqrt();
    let mut v = if n1 >= n2 {
        if n1 == 0.0 {
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
        } else {
            [v1[0] / n1, v1[1] / n1]
        }
    } else {
        [v2[0] / n2, v2[1] / n2]
    };
    fix_phase(&mut v);
    (lambda, v)
}

/// Pairwise (cascade) summation; bounds rounding drift when averaging many
/// Monte Carlo samples and is independent of evaluation order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn geometric_sum_matches_direct_summation() {
        for &len in &[1usize, 2, 7, 50, 128] {
            for i in 0..200 {
                let x = -7.0 + 14.0 * i as f64 / 199.0;
                let direct: C64 = (0..len).map(|m| cis(m as f64 * x)).sum();
                let closed = geometric_sum(len, x);
                assert!((direct - closed).norm() < 1e-9 * len as f64, "len={len} x={x}");
            }
        }
    }

    #[test]
    fn geometric_sum_at_multiples_of_two_pi() {
        assert_relative_eq!(geometric_sum(10, 0.0).re, 10.0, epsilon = 1e-12);
        assert_relative_eq!(geometric_sum(10, 2.0 * PI).re, 10.0, epsilon = 1e-9);
        assert!(geometric_sum(0, 1.0).norm() == 0.0);
    }

    #[test]
    fn hermitian_eigen_solves_the_eigen_equation() {
        let cases = [
            (2.0, C64::new(0.5, -0.3), 1.0),
            (1.0, C64::new(0.0, 0.0), 3.0),
            (4.0, C64::new(0.0, 0.0), 4.0),
            (1.0, C64::new(1.0, 0.0), 1.0),
            (1e-3, C64::new(2e-4, 1e-4), 5e-4),
        ];
        for (a, b, c) in cases {
            let (lambda, v) = hermitian2_top_eigen(a, b, c);
            let mv0 = a * v[0] + b * v[1];
            let mv1 = b.conj() * v[0] + c * v[1];
            let scale = a.abs().max(c.abs()).max(b.norm());
            assert!((mv0 - lambda * v[0]).norm() < 1e-12 * scale);
            assert!((mv1 - lambda * v[1]).norm() < 1e-12 * scale);
            assert_relative_eq!(v[0].norm_sqr() + v[1].norm_sqr(), 1.0, epsilon = 1e-12);
            let trace = a + c;
            let det = a * c - b.norm_sqr();
            let other = trace - lambda;
            assert!(lambda >= other - 1e-15);
            assert_relative_eq!(lambda * other, det, epsilon = 1e-12 * scale * scale);
        }
    }

    #[test]
    fn fix_phase_makes_first_entry_real_positive() {
        let mut v = vec![C64::new(0.0, 0.0), C64::new(0.0, -2.0), C64::new(1.0, 1.0)];
        fix_phase(&mut v);
        assert_eq!(v[0], C64::new(0.0, 0.0));
        assert!(v[1].re > 0.0 && v[1].im.abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_agrees_with_naive_sum() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert_relative_eq!(pairwise_sum(&xs), xs.iter().sum::<f64>(), epsilon = 1e-10);
    }
}
