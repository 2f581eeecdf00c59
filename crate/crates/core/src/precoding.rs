//! Stage two digital precoding: one equivalent channel per group and a
//! zero-forcing precoder across groups.

use crate::error::{Error, Result};
use crate::linalg::{hermitian2_top_eigen, CMatrix, CVector};

/// Column `r` is the equivalent channel of group `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannels {
    pub h_hat: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigitalPrecoder {
    /// Unit-norm columns, one per group.
    pub g: CMatrix,
    /// 2-norm condition number of the equivalent channel matrix.
    pub condition: f64,
}

/// Equivalent channel of a group from its members' effective channels.
///
/// A singleton passes through. For a pair `H = [h_a, h_b]` the result is
/// `H·u₁`, with `u₁` the dominant left singular vector of `Hᴴ` (equivalently
/// the top eigenvector of `HᴴH`), phase-fixed so its first nonzero entry is
/// real and positive. Its norm is the largest singular value of `H`.
pub fn group_equivalent_channel(columns: &[CVector]) -> Result<CVector> {
    let scale = columns.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::DegenerateChannel { coalition: 0 });
    }
    match columns {
        [h] => Ok(h.clone()),
        [ha, hb] => {
            let (_, u) = hermitian2_top_eigen(ha.norm_squared(), ha.dotc(hb), hb.norm_squared());
            Ok(ha * u[0] + hb * u[1])
        }
        _ => Err(Error::input("columns", format!("groups have 1 or 2 members, got {}", columns.len()))),
    }
}

/// Stacks the equivalent channels of all groups. `h_eff` is `N_RF × K`
/// with one effective channel per user column.
pub fn equivalent_channels(h_eff: &CMatrix, groups: &[Vec<usize>]) -> Result<EquivalentChannels> {
    let n = h_eff.nrows();
    let mut h_hat = CMatrix::zeros(n, groups.len());
    for (r, g) in groups.iter().enumerate() {
        let cols: Vec<CVector> = g.iter().map(|&k| h_eff.column(k).into_owned()).collect();
        let col = group_equivalent_channel(&cols).map_err(|e| match e {
            Error::DegenerateChannel { .. } => Error::DegenerateChannel { coalition: r },
            other => other,
        })?;
        h_hat.set_column(r, &col);
    }
    Ok(EquivalentChannels { h_hat })
}

/// Zero-forcing precoder: `G₀ = (Ĥᴴ)⁻¹`, so `ĥ_rᴴ g₀_{r'} = δ_{rr'}`, then
/// each column scaled to unit norm. `ĤᴴG` is left diagonal with positive
/// real entries.
pub fn zf_precoder(eq: &EquivalentChannels, condition_cap: f64) -> Result<DigitalPrecoder> {
    let h = &eq.h_hat;
    if !h.is_square() || h.nrows() == 0 {
        return Err(Error::input("h_hat", format!("must be square, got {}x{}", h.nrows(), h.ncols())));
    }
    let sv = h.singular_values();
    let (max, min) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= condition_cap) {
        return Err(Error::IllConditioned { condition });
    }
    let mut g = h.adjoint().try_inverse().ok_or(Error::IllConditioned { condition })?;
    for mut col in g.column_iter_mut() {
        let n = col.norm();
        col.unscale_mut(n);
    }
    Ok(DigitalPrecoder { g, condition })
}

/// `|ĥ_rᴴ g_{r'}|` for all pairs, mainly for diagnostics.
pub fn cross_gains(eq: &EquivalentChannels, pre: &DigitalPrecoder) -> CMatrix {
    eq.h_hat.adjoint() * &pre.g
}

/// Largest off-diagonal `|ĥ_rᴴ g_{r'}| / ‖ĥ_r‖`.
pub fn zf_leakage(eq: &EquivalentChannels, pre: &DigitalPrecoder) -> f64 {
    let cross = cross_gains(eq, pre);
    let mut worst: f64 = 0.0;
    for r in 0..cross.nrows() {
        let norm = eq.h_hat.column(r).norm();
        for c in 0..cross.ncols() {
            if r != c {
                worst = worst.max(cross[(r, c)].norm() / norm);
            }
        }
    }
    worst
}

/// CSV dump of `|ĤᴴG|`, one row per equivalent channel.
pub fn cross_gain_csv(eq: &EquivalentChannels, pre: &DigitalPrecoder) -> String {
    let cross = cross_gains(eq, pre);
    let mut out = String::new();
    for r in 0..cross.nrows() {
        let row: Vec<String> = (0..cross.ncols()).map(|c| format!("{:.6e}", cross[(r, c)].norm())).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;

    const ZERO: C64 = C64::new(0.0, 0.0);
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> CVector {
        CVector::from_iterator(n, (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
    }

    /// Dominant singular value of `[a, b]` by power iteration on `HᴴH`.
    fn power_iteration(a: &CVector, b: &CVector) -> f64 {
        let h = CMatrix::from_columns(&[a.clone(), b.clone()]);
        let m = h.adjoint() * &h;
        let mut v = CVector::from_element(2, C64::new(1.0, 0.3));
        for _ in 0..500 {
            v = &m * &v;
            let n = v.norm();
            v.unscale_mut(n);
        }
        (&h * v).norm()
    }

    #[test]
    fn singleton_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_vec(4, &mut rng);
        assert_eq!(group_equivalent_channel(&[h.clone()]).unwrap(), h);
    }

    #[test]
    fn identical_members_give_scaled_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_vec(3, &mut rng);
        let e = group_equivalent_channel(&[h.clone(), h.clone()]).unwrap();
        assert_relative_eq!(e.norm(), 2f64.sqrt() * h.norm(), max_relative = 1e-12);
        // parallel to h
        assert_relative_eq!(h.dotc(&e).norm(), h.norm() * e.norm(), max_relative = 1e-12);
    }

    #[test]
    fn pair_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_vec(4, &mut rng);
            let b = random_vec(4, &mut rng);
            let e = group_equivalent_channel(&[a.clone(), b.clone()]).unwrap();
            assert_relative_eq!(e.norm(), power_iteration(&a, &b), max_relative = 1e-9);
            let again = group_equivalent_channel(&[a, b]).unwrap();
            assert_eq!(e, again);
        }
    }

    #[test]
    fn degenerate_groups_are_rejected() {
        let z = CVector::from_element(3, ZERO);
        assert!(matches!(group_equivalent_channel(&[z.clone(), z]), Err(Error::DegenerateChannel { .. })));
        let h_eff = CMatrix::zeros(2, 2);
        assert!(matches!(
            equivalent_channels(&h_eff, &[vec![0], vec![1]]),
            Err(Error::DegenerateChannel { coalition: 0 })
        ));
    }

    #[test]
    fn orthonormal_channels_give_identity_cross_gains() {
        let h = CMatrix::from_fn(3, 3, |i, j| if i == j { C64::new(0.0, 1.0) } else { ZERO });
        let eq = EquivalentChannels { h_hat: h.clone() };
        let pre = zf_precoder(&eq, 1e8).unwrap();
        let cross = cross_gains(&eq, &pre);
        assert!((cross - CMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn random_zf_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let h = CMatrix::from_fn(3, 3, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let eq = EquivalentChannels { h_hat: h };
            let Ok(pre) = zf_precoder(&eq, 1e8) else { continue };
            assert!(zf_leakage(&eq, &pre) <= 1e-9);
            for c in pre.g.column_iter() {
                assert!((c.norm() - 1.0).abs() <= 1e-12);
            }
            let cross = cross_gains(&eq, &pre);
            for r in 0..3 {
                assert!(cross[(r, r)].re > 0.0 && cross[(r, r)].im.abs() < 1e-9 * cross[(r, r)].re);
            }
        }
    }

    #[test]
    fn ill_conditioned_channels_are_refused() {
        let a = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]);
        let b = &a * C64::new(1.0 + 1e-12, 0.0);
        let eq = EquivalentChannels { h_hat: CMatrix::from_columns(&[a, b]) };
        assert!(matches!(zf_precoder(&eq, 1e8), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn cross_gain_csv_has_one_row_per_group() {
        let eq = EquivalentChannels { h_hat: CMatrix::identity(2, 2) };
        let pre = zf_precoder(&eq, 1e8).unwrap();
        assert_eq!(cross_gain_csv(&eq, &pre).lines().count(), 2);
    }

    proptest! {
        #[test]
        fn scaling_a_channel_only_scales_its_diagonal(seed in any::<u64>(), c in 0.1f64..10.0, col in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = CMatrix::from_fn(3, 3, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let eq = EquivalentChannels { h_hat: h.clone() };
            let mut h2 = h;
            h2.column_mut(col).scale_mut(c);
            let eq2 = EquivalentChannels { h_hat: h2 };
            if let (Ok(p1), Ok(p2)) = (zf_precoder(&eq, 1e6), zf_precoder(&eq2, 1e6)) {
                prop_assert!((&p1.g - &p2.g).norm() < 1e-8);
                let d1 = cross_gains(&eq, &p1);
                let d2 = cross_gains(&eq2, &p2);
                for r in 0..3 {
                    let expect = if r == col { c } else { 1.0 };
                    prop_assert!((d2[(r, r)].re - expect * d1[(r, r)].re).abs() < 1e-8 * d2[(r, r)].re.abs().max(1.0));
                }
            }
        }
    }
}
