//! Orthogonal Procrustes mapping between two embedding spaces and the
//! seed-anchored refinement loop built on it.
//!
//! With rows of `X` (mapped side) and `Z` (fixed side) paired by a binary
//! dictionary `D`, the orthogonal `W` minimizing `Σ D_ij ‖X_i W − Z_j‖²`
//! maximizes `Tr(X W Zᵀ Dᵀ)`. Writing `M = Σ_(i,j)∈D X_iᵀ Z_j = U S Vᵀ`,
//! the maximizer is `W = U Vᵀ`.
//!
//! When `M` is rank deficient (fewer independent seed pairs than dimensions)
//! the maximizer is not unique. The free block is then chosen to keep `W` as
//! close to the identity as possible, since the input spaces are assumed to be
//! roughly aligned already.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::dictionary::SeedDictionary;
use crate::alignment::space::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::tensor::matrix::{dot, norm, Matrix};
use crate::tensor::svd::svd;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct MappingMatrix {
    w: Matrix,
}

impl MappingMatrix {
    pub const ORTHOGONALITY_TOL: f64 = 1e-6;

    pub fn new(w: Matrix) -> Result<Self> {
        if w.rows() != w.cols() {
            return Err(Error::Shape {
                op: "mapping",
                left: w.shape(),
                right: (w.rows(), w.rows()),
            });
        }
        let err = orthogonality_error(&w);
        if !(err <= Self::ORTHOGONALITY_TOL) {
            return Err(Error::Data(format!(
                "mapping is not orthogonal (‖WᵀW − I‖∞ = {err:e})"
            )));
        }
        Ok(Self { w })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            w: Matrix::identity(dim),
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn inverse(&self) -> Self {
        Self {
            w: self.w.transpose(),
        }
    }
}

pub fn orthogonality_error(w: &Matrix) -> f64 {
    w.t_matmul(w)
        .and_then(|g| g.sub(&Matrix::identity(w.cols())))
        .map(|d| d.max_abs())
        .unwrap_or(f64::INFINITY)
}

fn check_dims(x: &EmbeddingSpace, z: &EmbeddingSpace) -> Result<()> {
    if x.dim() != z.dim() {
        return Err(Error::Shape {
            op: "procrustes",
            left: (x.len(), x.dim()),
            right: (z.len(), z.dim()),
        });
    }
    Ok(())
}

fn cross_covariance(x: &EmbeddingSpace, z: &EmbeddingSpace, pairs: &[(usize, usize)]) -> Matrix {
    let d = x.dim();
    let mut m = Matrix::zeros(d, d);
    for &(i, j) in pairs {
        let xi = x.vectors().row(i);
        let zj = z.vectors().row(j);
        for (a, &xa) in xi.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            for (mv, &zb) in m.row_mut(a).iter_mut().zip(zj) {
                *mv += xa * zb;
            }
        }
    }
    m
}

/// Closed-form orthogonal map from `x` onto `z` for the pairs in `dict`.
pub fn solve_procrustes(
    x: &EmbeddingSpace,
    z: &EmbeddingSpace,
    dict: &SeedDictionary,
) -> Result<MappingMatrix> {
    check_dims(x, z)?;
    let pairs = dict.resolve(x, z)?;
    solve_pairs(x, z, &pairs)
}

fn solve_pairs(
    x: &EmbeddingSpace,
    z: &EmbeddingSpace,
    pairs: &[(usize, usize)],
) -> Result<MappingMatrix> {
    let m = cross_covariance(x, z, pairs);
    let dec = svd(&m)?;
    let d = m.rows();
    let s_max = dec.singular_values[0];
    let rank = dec
        .singular_values
        .iter()
        .take_while(|&&s| s > RANK_TOL * s_max && s > 0.0)
        .count();

    let mut w = Matrix::zeros(d, d);
    let add_block = |w: &mut Matrix, u: &Matrix, v: &Matrix| {
        let block = u.matmul_t(v).expect("square blocks");
        w.axpy(1.0, &block);
    };
    let (u_r, u_0) = split_cols(&dec.u, rank);
    let (v_r, v_0) = split_cols(&dec.v, rank);
    if rank > 0 {
        add_block(&mut w, &u_r, &v_r);
    }
    if rank < d {
        // any orthogonal Q in U₀ Q V₀ᵀ keeps the objective; pick the one
        // maximizing Tr(W), i.e. closest to the identity
        let n = v_0.t_matmul(&u_0)?;
        let inner = svd(&n)?;
        let q = inner.v.matmul_t(&inner.u)?;
        let uq = u_0.matmul(&q)?;
        add_block(&mut w, &uq, &v_0);
    }
    MappingMatrix::new(w)
}

fn split_cols(m: &Matrix, k: usize) -> (Matrix, Matrix) {
    let (rows, cols) = m.shape();
    let mut a = Matrix::zeros(rows, k);
    let mut b = Matrix::zeros(rows, cols - k);
    for r in 0..rows {
        a.row_mut(r).copy_from_slice(&m.row(r)[..k]);
        b.row_mut(r).copy_from_slice(&m.row(r)[k..]);
    }
    (a, b)
}

/// `Tr(X W Zᵀ Dᵀ) = Σ_(i,j)∈D X_i W Z_jᵀ`.
pub fn procrustes_objective(
    x: &EmbeddingSpace,
    z: &EmbeddingSpace,
    dict: &SeedDictionary,
    w: &Matrix,
) -> Result<f64> {
    check_dims(x, z)?;
    let pairs = dict.resolve(x, z)?;
    let mut total = 0.0;
    for (i, j) in pairs {
        let xi = Matrix::row_vector(x.vectors().row(i).to_vec());
        let mapped = xi.matmul(w)?;
        total += dot(mapped.data(), z.vectors().row(j));
    }
    Ok(total)
}

/// Row-vector convention: each mapped row is `row · W`.
pub fn map_space(space: &EmbeddingSpace, w: &MappingMatrix) -> Result<EmbeddingSpace> {
    if space.dim() != w.dim() {
        return Err(Error::Shape {
            op: "map_space",
            left: (space.len(), space.dim()),
            right: w.matrix().shape(),
        });
    }
    space.with_vectors(space.vectors().matmul(w.matrix())?)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn mean_pair_distance(
    x: &EmbeddingSpace,
    z: &EmbeddingSpace,
    pairs: &[(usize, usize)],
    w: &Matrix,
) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let xi = Matrix::row_vector(x.vectors().row(i).to_vec());
            let mapped = xi.matmul(w).expect("dims checked");
            1.0 - cosine(mapped.data(), z.vectors().row(j))
        })
        .sum();
    total / pairs.len() as f64
}

/// Mean cosine distance `1 − cos(x_i W, z_j)` over the dictionary pairs.
pub fn seed_distance(
    x: &EmbeddingSpace,
    z: &EmbeddingSpace,
    dict: &SeedDictionary,
    w: &MappingMatrix,
) -> Result<f64> {
    check_dims(x, z)?;
    let pairs = dict.resolve(x, z)?;
    Ok(mean_pair_distance(x, z, &pairs, w.matrix()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Stop once the mean seed-pair cosine distance is at or below this.
    pub threshold: f64,
    pub max_iters: usize,
    /// Grow the dictionary with mutual nearest neighbours between iterations.
    pub augment: bool,
    /// Only the first this-many rows of each space take part in the
    /// nearest-neighbour search (`.vec` files are frequency ordered).
    pub augment_rows: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.15,
            max_iters: 10,
            augment: false,
            augment_rows: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    /// The dictionary cannot change any more, so further solves repeat.
    FixedPoint,
    /// An augmented solve would have moved the seed pairs further apart.
    SeedDistanceIncreased,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seed_distance: f64,
    pub dictionary_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// Seed distance before any mapping (`W = I`).
    pub initial_seed_distance: f64,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
}

/// Solve, optionally augment the dictionary, re-solve, until the seed pairs
/// are within `cfg.threshold` or the iteration budget runs out. Seed pairs are
/// always kept; an augmented solution is accepted only if it does not
/// increase the seed distance.
pub fn refine(
    x: &EmbeddingSpace,
    z: &EmbeddingSpace,
    seeds: &SeedDictionary,
    cfg: &RefineConfig,
) -> Result<(MappingMatrix, RefineReport)> {
    check_dims(x, z)?;
    let seed_pairs = seeds.resolve(x, z)?;
    let identity = Matrix::identity(x.dim());
    let initial = mean_pair_distance(x, z, &seed_pairs, &identity);

    let mut dict_pairs = seed_pairs.clone();
    let mut best: Option<MappingMatrix> = None;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut stop = StopReason::MaxIters;

    for iteration in 1..=cfg.max_iters.max(1) {
        let w = solve_pairs(x, z, &dict_pairs)?;
        let dist = mean_pair_distance(x, z, &seed_pairs, w.matrix());
        if let Some(prev) = records.last() {
            if dist > prev.seed_distance {
                stop = StopReason::SeedDistanceIncreased;
                break;
            }
        }
        records.push(IterationRecord {
            iteration,
            seed_distance: dist,
            dictionary_size: dict_pairs.len(),
        });
        log::info!(
            "refine iteration {iteration}: seed distance {dist:.6} over {} pairs",
            dict_pairs.len()
        );
        let mapped = x.vectors().matmul(w.matrix())?;
        best = Some(w);
        if dist <= cfg.threshold {
            stop = StopReason::Threshold;
            break;
        }
        if !cfg.augment {
            stop = StopReason::FixedPoint;
            break;
        }
        let next = augmented_pairs(&mapped, z.vectors(), &seed_pairs, cfg.augment_rows);
        if next == dict_pairs {
            stop = StopReason::FixedPoint;
            break;
        }
        dict_pairs = next;
    }
    let report = RefineReport {
        initial_seed_distance: initial,
        iterations: records,
        stop,
    };
    Ok((best.expect("at least one iteration runs"), report))
}

/// Seed pairs plus every mutual nearest-neighbour pair (by cosine) among the
/// leading `rows` rows; sorted so the result is independent of thread count.
fn augmented_pairs(
    mapped_x: &Matrix,
    z: &Matrix,
    seeds: &[(usize, usize)],
    rows: usize,
) -> Vec<(usize, usize)> {
    let nx = mapped_x.rows().min(rows);
    let nz = z.rows().min(rows);
    let unit = |m: &Matrix, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|r| {
                let row = m.row(r);
                let l = norm(row);
                if l == 0.0 {
                    row.to_vec()
                } else {
                    row.iter().map(|v| v / l).collect()
                }
            })
            .collect()
    };
    let xs = unit(mapped_x, nx);
    let zs = unit(z, nz);
    let nearest = |q: &[f64], pool: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, p) in pool.iter().enumerate() {
            let s = dot(q, p);
            if s > best_sim {
                best_sim = s;
                best = i;
            }
        }
        best
    };
    let x_to_z: Vec<usize> = xs.par_iter().map(|q| nearest(q, &zs)).collect();
    let z_to_x: Vec<usize> = zs.par_iter().map(|q| nearest(q, &xs)).collect();

    let mut pairs: Vec<(usize, usize)> = seeds.to_vec();
    for (i, &j) in x_to_z.iter().enumerate() {
        if z_to_x[j] == i && !pairs.contains(&(i, j)) {
            pairs.push((i, j));
        }
    }
    let n_seeds = seeds.len();
    pairs[n_seeds..].sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random::{normal_matrix, seeded, Stream};

    fn space(lang: &str, v: Matrix) -> EmbeddingSpace {
        let words = (0..v.rows()).map(|i| format!("{lang}{i}")).collect();
        EmbeddingSpace::new(lang, words, v).unwrap()
    }

    fn full_dict(n: usize) -> SeedDictionary {
        SeedDictionary::new((0..n).map(|i| (format!("x{i}"), format!("z{i}"))).collect()).unwrap()
    }

    fn rotation2(theta: f64) -> Matrix {
        Matrix::from_rows(&[[theta.cos(), theta.sin()], [-theta.sin(), theta.cos()]]).unwrap()
    }

    #[test]
    fn self_alignment_is_identity() {
        let v = normal_matrix(10, 4, 1.0, &mut seeded(1, Stream::Synthetic));
        let x = space("x", v.clone());
        let z = space("z", v);
        let w = solve_procrustes(&x, &z, &full_dict(10)).unwrap();
        assert!(w.matrix().sub(&Matrix::identity(4)).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn recovers_planted_rotation() {
        let v = normal_matrix(8, 2, 1.0, &mut seeded(2, Stream::Synthetic));
        let r = rotation2(0.7);
        let x = space("x", v.clone());
        let z = space("z", v.matmul(&r).unwrap());
        let w = solve_procrustes(&x, &z, &full_dict(8)).unwrap();
        assert!(w.matrix().sub(&r).unwrap().max_abs() <= 1e-6);
        let mapped = map_space(&x, &w).unwrap();
        assert!(mapped.vectors().sub(z.vectors()).unwrap().max_abs() <= 1e-6);
    }

    #[test]
    fn beats_random_orthogonal_matrices() {
        let mut rng = seeded(3, Stream::Synthetic);
        let x = space("x", normal_matrix(7, 3, 1.0, &mut rng));
        let z = space("z", normal_matrix(7, 3, 1.0, &mut rng));
        let dict = SeedDictionary::new(
            [(0, 2), (1, 1), (3, 4), (5, 0), (6, 6)]
                .iter()
                .map(|(a, b)| (format!("x{a}"), format!("z{b}")))
                .collect(),
        )
        .unwrap();
        let w = solve_procrustes(&x, &z, &dict).unwrap();
        let best = procrustes_objective(&x, &z, &dict, w.matrix()).unwrap();
        for _ in 0..10_000 {
            let q = svd(&normal_matrix(3, 3, 1.0, &mut rng)).unwrap().u;
            let obj = procrustes_objective(&x, &z, &dict, &q).unwrap();
            assert!(best >= obj - 1e-9, "{best} < {obj}");
        }
        // perturbing the optimum never helps either
        for _ in 0..200 {
            let q = svd(&normal_matrix(3, 3, 1.0, &mut rng)).unwrap().u;
            let wq = w.matrix().matmul(&q).unwrap();
            assert!(best >= procrustes_objective(&x, &z, &dict, &wq).unwrap() - 1e-9);
        }
    }

    #[test]
    fn rank_deficient_dictionary_stays_near_identity() {
        let mut rng = seeded(4, Stream::Synthetic);
        let v = normal_matrix(30, 6, 1.0, &mut rng);
        let x = space("x", v.clone());
        let z = space("z", v);
        // two pairs in six dimensions: identity is optimal and closest to I
        let dict =
            SeedDictionary::new(vec![("x0".into(), "z0".into()), ("x1".into(), "z1".into())])
                .unwrap();
        let w = solve_procrustes(&x, &z, &dict).unwrap();
        assert!(w.matrix().sub(&Matrix::identity(6)).unwrap().max_abs() <= 1e-8);
        assert!(orthogonality_error(w.matrix()) <= 1e-10);
    }

    #[test]
    fn unresolvable_word_is_named() {
        let v = normal_matrix(3, 2, 1.0, &mut seeded(5, Stream::Synthetic));
        let x = space("x", v.clone());
        let z = space("z", v);
        let dict = SeedDictionary::new(vec![("x0".into(), "nope".into())]).unwrap();
        let err = solve_procrustes(&x, &z, &dict).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn map_space_is_an_isometry() {
        let mut rng = seeded(6, Stream::Synthetic);
        let v = normal_matrix(12, 5, 1.0, &mut rng);
        let x = space("x", v);
        let q = MappingMatrix::new(svd(&normal_matrix(5, 5, 1.0, &mut rng)).unwrap().u).unwrap();
        let m = map_space(&x, &q).unwrap();
        let same = map_space(&x, &MappingMatrix::identity(5)).unwrap();
        assert_eq!(same, x);
        for a in 0..12 {
            assert!((norm(m.vectors().row(a)) - norm(x.vectors().row(a))).abs() <= 1e-12);
            for b in 0..12 {
                let c0 = cosine(x.vectors().row(a), x.vectors().row(b));
                let c1 = cosine(m.vectors().row(a), m.vectors().row(b));
                assert!((c0 - c1).abs() <= 1e-9);
            }
        }
        assert!(map_space(&x, &MappingMatrix::identity(4)).is_err());
    }

    #[test]
    fn refine_without_augmentation_matches_single_solve() {
        let mut rng = seeded(7, Stream::Synthetic);
        let x = space("x", normal_matrix(20, 4, 1.0, &mut rng));
        let z = space("z", normal_matrix(20, 4, 1.0, &mut rng));
        let dict = full_dict(6);
        let cfg = RefineConfig {
            threshold: 0.0,
            ..Default::default()
        };
        let (w, rep) = refine(&x, &z, &dict, &cfg).unwrap();
        let direct = solve_procrustes(&x, &z, &dict).unwrap();
        assert_eq!(w, direct);
        assert_eq!(rep.stop, StopReason::FixedPoint);
        // re-solving with the same dictionary reproduces the map bit for bit
        assert_eq!(solve_procrustes(&x, &z, &dict).unwrap(), w);
    }

    #[test]
    fn refine_planted_rotation_converges_first_iteration() {
        let v = normal_matrix(30, 2, 1.0, &mut seeded(8, Stream::Synthetic));
        let x = space("x", v.clone());
        let z = space("z", v.matmul(&rotation2(-1.1)).unwrap());
        let (_, rep) = refine(&x, &z, &full_dict(30), &RefineConfig::default()).unwrap();
        assert_eq!(rep.iterations.len(), 1);
        assert_eq!(rep.stop, StopReason::Threshold);
        assert!(rep.iterations[0].seed_distance <= 1e-6);
    }

    #[test]
    fn augmented_refinement_never_increases_seed_distance() {
        let mut rng = seeded(9, Stream::Synthetic);
        let base = normal_matrix(200, 8, 1.0, &mut rng);
        let q = svd(&normal_matrix(8, 8, 1.0, &mut rng)).unwrap().u;
        let noise = normal_matrix(200, 8, 0.05, &mut rng);
        let x = space("x", base.clone());
        let z = space("z", base.matmul(&q).unwrap().add(&noise).unwrap());
        let cfg = RefineConfig {
            threshold: 0.0,
            augment: true,
            max_iters: 6,
            ..Default::default()
        };
        let (_, rep) = refine(&x, &z, &full_dict(11), &cfg).unwrap();
        assert!(rep.iterations[0].seed_distance <= rep.initial_seed_distance);
        for w in rep.iterations.windows(2) {
            assert!(w[1].seed_distance <= w[0].seed_distance);
        }
    }
}
