use super::WeightTable;
use crate::pattern::BipartiteMatching;

/// Minimum-cost assignment of every row of an `n x m` cost matrix with
/// `n <= m` to a distinct column, by the shortest augmenting path method
/// with potentials, in `O(n^2 m)`. Returns the column assigned to each row.
///
/// # Panics
/// If some row is longer or shorter than the first, or `n > m`.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m && cost.iter().all(|r| r.len() == m), "need a rectangular matrix with rows <= columns");
    // 1-based internal arrays, index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut min_to = vec![f64::INFINITY; m + 1];
    let mut used = vec![false; m + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut j0 = 0;
        min_to.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=m {
        if row_of_col[j] > 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// The matching maximizing `sum of ln w_ij`, i.e. the mode of the
/// two-color partition posterior.
///
/// Only edges with `w > 1` can raise the objective, so the problem splits
/// into the connected components of those edges. Each component is solved
/// with one zero-cost "unassigned" column per red.
pub fn hungarian_mode(table: &WeightTable) -> BipartiteMatching {
    let (n_red, n_blue) = (table.n_red(), table.n_blue());
    // union-find over reds 0..n_red and blues n_red..
    let mut parent: Vec<usize> = (0..n_red + n_blue).collect();
    let heavy = |e: usize| table.edge_ln_weight(e) > 0.0;
    for i in 0..n_red {
        for e in table.row(i).filter(|&e| heavy(e)) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, n_red + table.endpoints(e).1));
            parent[a] = b;
        }
    }
    let mut components: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = Default::default();
    for i in 0..n_red {
        if table.row(i).any(heavy) {
            let root = find(&mut parent, i);
            components.entry(root).or_default().0.push(i);
        }
    }
    for j in 0..n_blue {
        let root = find(&mut parent, n_red + j);
        if let Some(c) = components.get_mut(&root) {
            c.1.push(j);
        }
    }

    let mut pairs = Vec::new();
    let mut slot = vec![usize::MAX; n_blue];
    for (reds, blues) in components.values() {
        for (b, &j) in blues.iter().enumerate() {
            slot[j] = b;
        }
        let m = blues.len() + reds.len();
        let mut cost = vec![vec![0.0; m]; reds.len()];
        for (r, &i) in reds.iter().enumerate() {
            for e in table.row(i).filter(|&e| heavy(e)) {
                cost[r][slot[table.endpoints(e).1]] = -table.edge_ln_weight(e);
            }
        }
        let assignment = solve_assignment(&cost);
        for (r, &i) in reds.iter().enumerate() {
            let b = assignment[r];
            if b < blues.len() && cost[r][b] < 0.0 {
                pairs.push((i, blues[b]));
            }
        }
    }
    BipartiteMatching::from_pairs(n_red, n_blue, pairs).expect("assignment is a matching")
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{all_matchings, random_table};
    use super::*;

    fn brute_best(t: &WeightTable) -> f64 {
        all_matchings(t.n_red(), t.n_blue())
            .iter()
            .map(|m| t.ln_weight_of(m))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn diagonal_mode() {
        let t = WeightTable::from_dense(&[vec![3.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let m = hungarian_mode(&t);
        assert_eq!(m.pairs(), vec![(0, 0), (1, 1)]);
        assert!((t.ln_weight_of(&m).exp() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn light_edges_give_empty_mode() {
        let t = WeightTable::from_dense(&[vec![0.9, 0.5], vec![0.1, 0.99]]).unwrap();
        assert_eq!(hungarian_mode(&t).n_edges(), 0);
    }

    #[test]
    fn single_heavy_edge() {
        let t = WeightTable::from_dense(&[vec![2.0, 0.5], vec![0.5, 0.1]]).unwrap();
        assert_eq!(hungarian_mode(&t).pairs(), vec![(0, 0)]);
    }

    #[test]
    fn assignment_small() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = solve_assignment(&c);
        let total: f64 = a.iter().enumerate().map(|(r, &k)| c[r][k]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rectangular_assignment() {
        let c = vec![vec![5.0, 1.0, 4.0, 9.0], vec![1.0, 2.0, 8.0, 0.5]];
        assert_eq!(solve_assignment(&c), vec![1, 3]);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        for seed in 0..200u64 {
            let n1 = 1 + (seed % 7) as usize;
            let n2 = 1 + ((seed / 7) % 7) as usize;
            let t = random_table(n1, n2, seed, 0.3);
            let m = hungarian_mode(&t);
            let best = brute_best(&t).max(0.0);
            assert!((t.ln_weight_of(&m) - best).abs() < 1e-9, "seed {seed}");
        }
    }
}
