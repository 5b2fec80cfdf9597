use serde::{Deserialize, Serialize};

/// Per-dimension polynomial orders of one multivariate basis term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total_order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn orders(&self) -> &[usize] {
        &self.0
    }

    /// Dimensions with a non-zero order.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &o)| o > 0)
            .map(|(d, _)| d)
    }
}

/// All multi-indices of total order `<= order` in `dim` dimensions.
///
/// Graded ordering: terms are grouped by total order, and within a group the
/// leading entries decrease first, so the first-order terms come out as
/// `e_1, e_2, ..., e_dim`. Index 0 is always the constant term.
pub fn gen_multi_index(dim: usize, order: usize) -> Vec<MultiIndex> {
    assert!(dim >= 1, "multi-index dimension must be positive");
    let mut out = Vec::with_capacity(binomial(dim + order, order));
    let mut scratch = vec![0; dim];
    for total in 0..=order {
        compositions(total, 0, &mut scratch, &mut out);
    }
    out
}

fn compositions(remaining: usize, pos: usize, scratch: &mut [usize], out: &mut Vec<MultiIndex>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        out.push(MultiIndex(scratch.to_vec()));
        return;
    }
    for first in (0..=remaining).rev() {
        scratch[pos] = first;
        compositions(remaining - first, pos + 1, scratch, out);
    }
}

/// Number of total-order terms, `(dim + order)! / (dim! order!)`.
pub fn total_order_size(dim: usize, order: usize) -> usize {
    binomial(dim + order, order)
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn counts_match_binomial() {
        assert_eq!(gen_multi_index(2, 3).len(), 10);
        assert_eq!(gen_multi_index(1, 0), vec![MultiIndex(vec![0])]);
        for dim in 1..5 {
            for order in 0..6 {
                assert_eq!(gen_multi_index(dim, order).len(), total_order_size(dim, order));
            }
        }
    }

    #[test]
    fn brute_force_three_dims_order_two() {
        let mut brute = HashSet::new();
        for a in 0..=2 {
            for b in 0..=2 {
                for c in 0..=2 {
                    if a + b + c <= 2 {
                        brute.insert(vec![a, b, c]);
                    }
                }
            }
        }
        let got: HashSet<_> = gen_multi_index(3, 2).into_iter().map(|m| m.0).collect();
        assert_eq!(got.len(), 10);
        assert_eq!(got, brute);
    }

    #[test]
    fn graded_layout() {
        let idx = gen_multi_index(2, 2);
        let rows: Vec<_> = idx.iter().map(|m| m.0.clone()).collect();
        assert_eq!(
            rows,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        for w in idx.windows(2) {
            assert!(w[0].total_order() <= w[1].total_order());
        }
    }
}
