//! Support diagnostics for sparsity patterns.
//!
//! A pattern has support when it contains a perfect matching (a strictly
//! positive generalized diagonal) and total support when, in addition,
//! every stored entry lies on some perfect matching. For rectangular
//! patterns "perfect" means saturating the smaller side.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::lsh::NeighborPairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportStatus {
    None,
    Support,
    TotalSupport,
}

/// Largest `min(n, m)` for which total support is checked.
pub const TOTAL_SUPPORT_LIMIT: usize = 64;

const FREE: usize = usize::MAX;

/// Hopcroft–Karp maximum bipartite matching over an adjacency list.
/// Returns the matching size.
fn max_matching(adj: &[Vec<usize>], right: usize) -> usize {
    let left = adj.len();
    let mut match_l = vec![FREE; left];
    let mut match_r = vec![FREE; right];
    let mut dist = vec![0usize; left];
    let mut size = 0;
    loop {
        // layered BFS from free left vertices
        let mut queue = VecDeque::new();
        for u in 0..left {
            if match_l[u] == FREE {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let w = match_r[v];
                if w == FREE {
                    found = true;
                } else if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if !found {
            break;
        }
        // DFS along the layers, iteratively to avoid deep recursion
        let mut iter_pos = vec![0usize; left];
        for start in 0..left {
            if match_l[start] != FREE {
                continue;
            }
            let mut stack = vec![start];
            let mut augmented = false;
            while let Some(&u) = stack.last() {
                if iter_pos[u] >= adj[u].len() {
                    dist[u] = usize::MAX;
                    stack.pop();
                    continue;
                }
                let v = adj[u][iter_pos[u]];
                iter_pos[u] += 1;
                let w = match_r[v];
                if w == FREE {
                    // flip the path recorded on the stack
                    let mut v_cur = v;
                    while let Some(x) = stack.pop() {
                        let prev = match_l[x];
                        match_l[x] = v_cur;
                        match_r[v_cur] = x;
                        v_cur = prev;
                    }
                    augmented = true;
                    break;
                } else if dist[w] == dist[u] + 1 {
                    stack.push(w);
                }
            }
            if augmented {
                size += 1;
            }
        }
    }
    size
}

fn adjacency(pattern: &NeighborPairs) -> (Vec<Vec<usize>>, usize) {
    let (n, m) = pattern.shape();
    // orient so that the left side is the smaller one
    if n <= m {
        let adj = (0..n).map(|i| pattern.row(i).iter().map(|&j| j as usize).collect()).collect();
        (adj, m)
    } else {
        let mut adj = vec![Vec::new(); m];
        for (i, j) in pattern.iter() {
            adj[j].push(i);
        }
        (adj, n)
    }
}

/// Size of a maximum matching on the pattern.
pub fn matching_size(pattern: &NeighborPairs) -> usize {
    let (adj, right) = adjacency(pattern);
    max_matching(&adj, right)
}

pub fn has_support(pattern: &NeighborPairs) -> SupportStatus {
    let (n, m) = pattern.shape();
    let side = n.min(m);
    let (adj, right) = adjacency(pattern);
    if side == 0 || max_matching(&adj, right) < side {
        return SupportStatus::None;
    }
    if side > TOTAL_SUPPORT_LIMIT {
        return SupportStatus::Support;
    }
    let transposed = n > m;
    for (i, j) in pattern.iter() {
        let (u, v) = if transposed { (j, i) } else { (i, j) };
        // an edge lies on a perfect matching iff matching the rest works
        let mut reduced = adj.clone();
        for (k, list) in reduced.iter_mut().enumerate() {
            if k == u {
                list.clear();
            } else {
                list.retain(|&x| x != v);
            }
        }
        if max_matching(&reduced, right) < side - 1 {
            return SupportStatus::Support;
        }
    }
    SupportStatus::TotalSupport
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(n: usize, m: usize, pairs: &[(usize, usize)]) -> NeighborPairs {
        NeighborPairs::from_pairs(n, m, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn identity_has_total_support() {
        assert_eq!(has_support(&pat(3, 3, &[(0, 0), (1, 1), (2, 2)])), SupportStatus::TotalSupport);
    }

    #[test]
    fn uncovered_row_has_none() {
        assert_eq!(has_support(&pat(2, 2, &[(0, 0), (0, 1)])), SupportStatus::None);
        assert_eq!(has_support(&NeighborPairs::empty(2, 2)), SupportStatus::None);
    }

    #[test]
    fn off_diagonal_entry_breaks_total_support() {
        // only the identity permutation is positive; (0,1) is on none
        let p = pat(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2)]);
        assert_eq!(has_support(&p), SupportStatus::Support);
    }

    #[test]
    fn rectangular_patterns() {
        assert_eq!(has_support(&pat(2, 3, &[(0, 2), (1, 0)])), SupportStatus::TotalSupport);
        assert_eq!(has_support(&pat(3, 2, &[(0, 0), (1, 0), (2, 0)])), SupportStatus::None);
        assert_eq!(has_support(&NeighborPairs::full(4, 7)), SupportStatus::TotalSupport);
    }

    #[test]
    fn matching_needs_augmentation() {
        // greedy would match 0-0 and block row 1
        let p = pat(2, 2, &[(0, 0), (0, 1), (1, 0)]);
        assert_eq!(matching_size(&p), 2);
        assert_eq!(has_support(&p), SupportStatus::Support);
    }

    #[test]
    fn large_pattern_skips_total_check() {
        let n = TOTAL_SUPPORT_LIMIT + 1;
        let p = NeighborPairs::from_pairs(n, n, (0..n).map(|i| (i, i)).chain([(0, 1)])).unwrap();
        assert_eq!(has_support(&p), SupportStatus::Support);
    }
}
