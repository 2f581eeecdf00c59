//! Exhaustive search over coalition structures and antenna splits, used as
//! an optimality reference on small instances.

use super::{Coalition, ConditionalEvaluator, Partition};
use crate::error::{Error, Result};

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn double_factorial_odd(n: isize) -> f64 {
    // (2q - 1)!! with the convention (-1)!! = 1
    let mut acc = 1.0;
    let mut i = n;
    while i > 1 {
        acc *= i as f64;
        i -= 2;
    }
    acc
}

/// Structures of `k` users into at most `n_rf` coalitions of size one or
/// two, weighted by `splits^pairs`. With `splits = 1` this counts the
/// partitions themselves.
fn weighted_count(k: usize, n_rf: usize, splits: f64) -> f64 {
    let lo = k.div_ceil(2);
    (lo..=n_rf.min(k))
        .map(|b| {
            let pairs = k - b;
            let singles = 2 * b - k;
            binomial(k, singles) * double_factorial_odd(2 * pairs as isize - 1) * splits.powi(pairs as i32)
        })
        .sum()
}

/// Number of admissible coalition structures.
pub fn partition_count(k: usize, n_rf: usize) -> f64 {
    weighted_count(k, n_rf, 1.0)
}

/// Number of (structure, antenna split) candidates the exhaustive search
/// evaluates.
pub fn exhaustive_search_size(k: usize, n_rf: usize, m_bs: usize, m_min: usize) -> f64 {
    let splits = (m_bs + 1).saturating_sub(2 * m_min) as f64;
    weighted_count(k, n_rf, splits)
}

fn enumerate(k: usize, n_rf: usize, used: &mut Vec<bool>, current: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
    let Some(first) = used.iter().position(|u| !u) else {
        out.push(current.clone());
        return;
    };
    if current.len() == n_rf {
        return;
    }
    used[first] = true;
    current.push(vec![first]);
    enumerate(k, n_rf, used, current, out);
    current.pop();
    for second in first + 1..k {
        if !used[second] {
            used[second] = true;
            current.push(vec![first, second]);
            enumerate(k, n_rf, used, current, out);
            current.pop();
            used[second] = false;
        }
    }
    used[first] = false;
}

/// Global maximizer of the conditional sum-rate over all structures with at
/// most `N_RF` coalitions and all antenna splits.
pub fn exhaustive_grouping(ev: &ConditionalEvaluator) -> Result<(Partition, f64)> {
    let prm = ev.params();
    let k = ev.num_users();
    let predicted = exhaustive_search_size(k, prm.n_rf, prm.m_bs, prm.m_min);
    if predicted > prm.exhaustive_cap {
        return Err(Error::SearchTooLarge { predicted, cap: prm.exhaustive_cap });
    }
    let mut structures = Vec::new();
    enumerate(k, prm.n_rf, &mut vec![false; k], &mut Vec::new(), &mut structures);

    let splits: Vec<usize> = prm.split_range().collect();
    let mut best: Option<(Vec<Coalition>, f64)> = None;
    for groups in structures {
        let mut coalitions: Vec<Coalition> = groups
            .iter()
            .map(|g| match g.as_slice() {
                [u] => Coalition::singleton(*u, prm.m_bs),
                [a, b] => Coalition::pair(*a, *b, splits[0], prm.m_bs - splits[0]),
                _ => unreachable!("coalitions have one or two members"),
            })
            .collect();
        let pair_idx: Vec<usize> = (0..coalitions.len()).filter(|&i| coalitions[i].is_pair()).collect();
        // Columns for every split of every pair, computed once per structure.
        let pair_columns: Vec<Vec<Vec<f64>>> = pair_idx
            .iter()
            .map(|&i| {
                splits
                    .iter()
                    .map(|&m| {
                        let mut c = coalitions[i].clone();
                        c.set_split(m, prm.m_bs);
                        ev.column(&c)
                    })
                    .collect()
            })
            .collect();
        let mut columns: Vec<Vec<f64>> = coalitions.iter().map(|c| ev.column(c)).collect();
        let mut digits = vec![0usize; pair_idx.len()];
        loop {
            for (d, &i) in pair_idx.iter().enumerate() {
                coalitions[i].set_split(splits[digits[d]], prm.m_bs);
                columns[i].clone_from(&pair_columns[d][digits[d]]);
            }
            let v = ev.value_from_columns(&coalitions, &columns);
            if best.as_ref().map_or(true, |b| v > b.1) {
                best = Some((coalitions.clone(), v));
            }
            // mixed-radix increment over the pair splits
            let mut d = 0;
            while d < digits.len() {
                digits[d] += 1;
                if digits[d] < splits.len() {
                    break;
                }
                digits[d] = 0;
                d += 1;
            }
            if d == digits.len() {
                break;
            }
        }
    }
    let (coalitions, value) = best.ok_or_else(|| Error::input("num_users", "no admissible structure"))?;
    let mut partition = Partition { coalitions };
    partition.canonicalize();
    Ok((partition, value))
}
