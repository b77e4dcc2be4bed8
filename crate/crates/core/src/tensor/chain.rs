//! Linear-chain dynamic programs over an emission matrix (`T x K`) and a
//! transition matrix (`K x K`, entry `[i][j]` scores label `i` followed by `j`).

use crate::tensor::matrix::{log_sum_exp, Matrix};

/// Unnormalized score of one label path.
pub fn path_score(emissions: &Matrix, transitions: &Matrix, path: &[usize]) -> f64 {
    let mut score = 0.0;
    for (t, &y) in path.iter().enumerate() {
        score += emissions.get(t, y);
        if t > 0 {
            score += transitions.get(path[t - 1], y);
        }
    }
    score
}

/// Forward algorithm in log space. Returns `log Z` and the forward table.
pub fn forward(emissions: &Matrix, transitions: &Matrix) -> (f64, Matrix) {
    let (t_len, k) = emissions.shape();
    let mut alpha = Matrix::zeros(t_len, k);
    alpha.row_mut(0).copy_from_slice(emissions.row(0));
    let mut scratch = vec![0.0; k];
    for t in 1..t_len {
        for j in 0..k {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = alpha.get(t - 1, i) + transitions.get(i, j);
            }
            alpha.set(t, j, log_sum_exp(&scratch) + emissions.get(t, j));
        }
    }
    (log_sum_exp(alpha.row(t_len - 1)), alpha)
}

fn backward_table(emissions: &Matrix, transitions: &Matrix) -> Matrix {
    let (t_len, k) = emissions.shape();
    let mut beta = Matrix::zeros(t_len, k);
    let mut scratch = vec![0.0; k];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..k {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = transitions.get(i, j) + emissions.get(t + 1, j) + beta.get(t + 1, j);
            }
            beta.set(t, i, log_sum_exp(&scratch));
        }
    }
    beta
}

pub fn log_partition(emissions: &Matrix, transitions: &Matrix) -> f64 {
    forward(emissions, transitions).0
}

/// Posterior marginals: per-position label marginals (`T x K`, the gradient of
/// `log Z` w.r.t. emissions) and summed pairwise marginals (`K x K`, the
/// gradient w.r.t. transitions).
pub fn marginals(emissions: &Matrix, transitions: &Matrix) -> (Matrix, Matrix) {
    let (t_len, k) = emissions.shape();
    let (log_z, alpha) = forward(emissions, transitions);
    let beta = backward_table(emissions, transitions);
    let mut node = Matrix::zeros(t_len, k);
    for t in 0..t_len {
        for j in 0..k {
            node.set(t, j, (alpha.get(t, j) + beta.get(t, j) - log_z).exp());
        }
    }
    let mut edge = Matrix::zeros(k, k);
    for t in 1..t_len {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha.get(t - 1, i)
                    + transitions.get(i, j)
                    + emissions.get(t, j)
                    + beta.get(t, j)
                    - log_z;
                let prev = edge.get(i, j);
                edge.set(i, j, prev + lp.exp());
            }
        }
    }
    (node, edge)
}

/// Highest-scoring path and its score. Ties resolve to the lowest label index.
pub fn viterbi(emissions: &Matrix, transitions: &Matrix) -> (Vec<usize>, f64) {
    let (t_len, k) = emissions.shape();
    let mut delta = emissions.row(0).to_vec();
    let mut back = vec![vec![0usize; k]; t_len];
    for t in 1..t_len {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, &d) in delta.iter().enumerate() {
                let s = d + transitions.get(i, j);
                if s > best_score {
                    best_score = s;
                    best = i;
                }
            }
            next[j] = best_score + emissions.get(t, j);
            back[t][j] = best;
        }
        delta = next;
    }
    let mut last = 0;
    for j in 1..k {
        if delta[j] > delta[last] {
            last = j;
        }
    }
    let score = delta[last];
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    (path, score)
}
