//! Tensor-Train factorized linear layers.
//!
//! An `M×N` weight matrix with `M = m1⋯md` and `N = n1⋯nd` is folded into the
//! `2d`-way tensor `(m1..md, n1..nd)` and stored as `2d` three-way cores.
//! Core `k < d` has shape `(r_k, m_{k+1}, r_{k+1})`, core `k ≥ d` has shape
//! `(r_k, n_{k-d+1}, r_{k+1})`, with `r_0 = r_2d = 1`.
//!
//! [`TtLinear::matvec`] multiplies by the weight matrix without ever forming
//! it: the input is folded to `(n1..nd)`, the column cores are contracted in
//! from the last one inwards until a single rank-`r_d` vector is left, and
//! the row cores are then contracted onto it from `G_d` back to `G_1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Factorization and rank vector of a TT layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtShape {
    row_factors: Vec<usize>,
    col_factors: Vec<usize>,
    ranks: Vec<usize>,
}

impl TtShape {
    pub fn new(row_factors: Vec<usize>, col_factors: Vec<usize>, ranks: Vec<usize>) -> Result<Self> {
        let d = row_factors.len();
        if d == 0 || col_factors.len() != d {
            return Err(Error::size(format!(
                "row factors {row_factors:?} and column factors {col_factors:?} must have the same nonzero length"
            )));
        }
        if row_factors.iter().chain(&col_factors).any(|&f| f == 0) {
            return Err(Error::size("factor sizes must be positive"));
        }
        if ranks.len() != 2 * d + 1 {
            return Err(Error::RankChain(format!(
                "{} ranks given, {} needed for d={d}",
                ranks.len(),
                2 * d + 1
            )));
        }
        if ranks[0] != 1 || ranks[2 * d] != 1 {
            return Err(Error::RankChain(format!("boundary ranks must be 1, got {ranks:?}")));
        }
        if ranks.contains(&0) {
            return Err(Error::RankChain(format!("ranks must be positive, got {ranks:?}")));
        }
        Ok(Self { row_factors, col_factors, ranks })
    }

    /// Same rank `r` on every internal bond.
    pub fn uniform(row_factors: Vec<usize>, col_factors: Vec<usize>, rank: usize) -> Result<Self> {
        let d = row_factors.len();
        let mut ranks = vec![rank; 2 * d + 1];
        ranks[0] = 1;
        ranks[2 * d] = 1;
        Self::new(row_factors, col_factors, ranks)
    }

    pub fn d(&self) -> usize {
        self.row_factors.len()
    }

    pub fn row_factors(&self) -> &[usize] {
        &self.row_factors
    }

    pub fn col_factors(&self) -> &[usize] {
        &self.col_factors
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Output dimension `M`.
    pub fn rows(&self) -> usize {
        self.row_factors.iter().product()
    }

    /// Input dimension `N`.
    pub fn cols(&self) -> usize {
        self.col_factors.iter().product()
    }

    /// Mode size of core `k` (0-based).
    pub fn mode(&self, k: usize) -> usize {
        let d = self.d();
        if k < d {
            self.row_factors[k]
        } else {
            self.col_factors[k - d]
        }
    }

    pub fn core_shape(&self, k: usize) -> [usize; 3] {
        [self.ranks[k], self.mode(k), self.ranks[k + 1]]
    }

    pub fn core_len(&self, k: usize) -> usize {
        self.core_shape(k).iter().product()
    }

    /// Number of weight entries stored in the cores (bias excluded).
    pub fn param_count(&self) -> usize {
        (0..2 * self.d()).map(|k| self.core_len(k)).sum()
    }

    pub fn dense_count(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn compression(&self) -> f64 {
        self.dense_count() as f64 / self.param_count() as f64
    }
}

/// Weight entries of a TT layer: `Σ_k r_{k-1} m_k r_k + r_{d+k-1} n_k r_{d+k}`.
pub fn tt_param_count(layer: &TtLinear) -> usize {
    layer.shape.param_count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtLinear {
    pub shape: TtShape,
    pub cores: Vec<DenseTensor>,
    pub bias: Vec<f64>,
}

impl TtLinear {
    pub fn from_parts(shape: TtShape, cores: Vec<DenseTensor>, bias: Vec<f64>) -> Result<Self> {
        let layer = Self { shape, cores, bias };
        layer.validate()?;
        Ok(layer)
    }

    /// All-zero cores and bias.
    pub fn zeros(shape: TtShape) -> Self {
        let cores = (0..2 * shape.d())
            .map(|k| DenseTensor::zeros(&shape.core_shape(k)).expect("validated shape"))
            .collect();
        let bias = vec![0.0; shape.rows()];
        Self { shape, cores, bias }
    }

    /// Checks core count, core shapes, rank agreement between neighbours and
    /// the bias length.
    pub fn validate(&self) -> Result<()> {
        let s = &self.shape;
        if self.cores.len() != 2 * s.d() {
            return Err(Error::RankChain(format!(
                "{} cores for d={}, expected {}",
                self.cores.len(),
                s.d(),
                2 * s.d()
            )));
        }
        for (k, core) in self.cores.iter().enumerate() {
            let want = s.core_shape(k);
            if core.shape() != want {
                return Err(Error::RankChain(format!(
                    "core {k} has shape {:?}, expected {want:?}",
                    core.shape()
                )));
            }
            if k > 0 && self.cores[k - 1].shape()[2] != core.shape()[0] {
                return Err(Error::RankChain(format!(
                    "cores {} and {k} disagree on the shared rank",
                    k - 1
                )));
            }
        }
        if self.bias.len() != s.rows() {
            return Err(Error::size(format!("bias has {} entries, expected {}", self.bias.len(), s.rows())));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.shape.rows()
    }

    pub fn cols(&self) -> usize {
        self.shape.cols()
    }

    /// `W z` computed from the cores alone (bias not added).
    pub fn matvec(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let s = &self.shape;
        let d = s.d();
        if z.len() != s.cols() {
            return Err(Error::size(format!("input has length {}, layer expects {}", z.len(), s.cols())));
        }

        // Step 1: the folded input meets the last core on its last axis; that
        // axis becomes the rank r_{2d-1}.
        let last = &self.cores[2 * d - 1];
        let folded = DenseTensor::fold(z, s.col_factors())?;
        let mut cur = DenseTensor::contract(&folded, last, &[(d - 1, 1)])?;
        let mut keep: Vec<usize> = cur.shape()[..d].to_vec();
        cur = cur.reshape(&keep)?;

        // Step 2: every remaining column core eats one (n, r) pair of axes.
        for k in (d..2 * d - 1).rev() {
            let ax = cur.ndim();
            cur = DenseTensor::contract(&cur, &self.cores[k], &[(ax - 2, 1), (ax - 1, 2)])?;
        }
        debug_assert_eq!(cur.shape(), &[s.ranks()[d]]);

        // Step 3: grow the row modes back out, G_d first.
        for k in (0..d).rev() {
            cur = DenseTensor::contract(&self.cores[k], &cur, &[(2, 0)])?;
        }
        keep.clear();
        keep.push(s.rows());
        Ok(cur.reshape(&keep)?.into_data())
    }

    /// The full `2d`-way weight tensor. Allocates `M·N` entries; meant for
    /// tests and inspection only.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        self.validate()?;
        let mut acc = self.cores[0].clone();
        for core in &self.cores[1..] {
            let last = acc.ndim() - 1;
            acc = DenseTensor::contract(&acc, core, &[(last, 0)])?;
        }
        let shape: Vec<usize> = self.shape.row_factors().iter().chain(self.shape.col_factors()).copied().collect();
        acc.reshape(&shape)
    }

    /// Row-major `M×N` matrix of [`TtLinear::reconstruct`].
    pub fn dense_matrix(&self) -> Result<Vec<f64>> {
        Ok(self.reconstruct()?.unfold_matrix(self.shape.d())?.into_data())
    }
}

/// Per-core standard deviation giving reconstructed entries the Xavier
/// variance `2/(M+N)`: each entry is a sum of `Π r_k` products of `2d` core
/// entries, so `σ^{4d} Π r_k = 2/(M+N)`.
pub fn core_std(shape: &TtShape) -> f64 {
    let d = shape.d();
    let target = 2.0 / (shape.rows() + shape.cols()) as f64;
    let paths: f64 = shape.ranks()[1..2 * d].iter().map(|&r| r as f64).product();
    (target / paths).powf(1.0 / (4 * d) as f64)
}

/// Gaussian cores with [`core_std`], zero bias.
pub fn tt_init_with<R: Rng + ?Sized>(shape: &TtShape, rng: &mut R) -> TtLinear {
    let normal = Normal::new(0.0, core_std(shape)).expect("finite positive std");
    let mut layer = TtLinear::zeros(shape.clone());
    for core in &mut layer.cores {
        for x in core.data_mut() {
            *x = normal.sample(rng);
        }
    }
    layer
}

pub fn tt_init(shape: &TtShape, seed: u64) -> TtLinear {
    tt_init_with(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Outcome of choosing TT ranks for a desired compression ratio.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankPlan {
    pub target_compression: f64,
    pub chosen_ranks: Vec<usize>,
    pub achieved_compression: f64,
    pub per_layer_params: usize,
}

/// Uniform internal rank whose compression `M·N / count` is closest to
/// `target` in log-ratio.
///
/// The search stops at the full-rank bound of the widest bond; individual
/// bonds are not clipped to their own bound, so the returned rank vector is
/// uniform. Plans whose compression falls outside `[target/2, 2·target]` are
/// rejected as infeasible.
pub fn plan_ranks(
    rows: usize,
    cols: usize,
    row_factors: &[usize],
    col_factors: &[usize],
    target: f64,
) -> Result<RankPlan> {
    if !(target.is_finite() && target >= 1.0) {
        return Err(Error::Config(format!("compression target must be >= 1, got {target}")));
    }
    if row_factors.iter().product::<usize>() != rows || col_factors.iter().product::<usize>() != cols {
        return Err(Error::size(format!(
            "factors {row_factors:?} x {col_factors:?} do not multiply to {rows} x {cols}"
        )));
    }
    let modes: Vec<usize> = row_factors.iter().chain(col_factors).copied().collect();
    let max_rank = (1..modes.len())
        .map(|k| {
            let left: usize = modes[..k].iter().product();
            let right: usize = modes[k..].iter().product();
            left.min(right)
        })
        .max()
        .unwrap_or(1);

    let mut best: Option<(f64, TtShape)> = None;
    for r in 1..=max_rank.max(1) {
        let shape = TtShape::uniform(row_factors.to_vec(), col_factors.to_vec(), r)?;
        let gap = (shape.compression() / target).ln().abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, shape));
        }
    }
    let (_, shape) = best.expect("at least rank 1 is tried");
    let achieved = shape.compression();
    if achieved < 0.5 * target || achieved > 2.0 * target {
        return Err(Error::InfeasibleTarget { target, best: achieved });
    }
    Ok(RankPlan {
        target_compression: target,
        chosen_ranks: shape.ranks().to_vec(),
        achieved_compression: achieved,
        per_layer_params: shape.param_count(),
    })
}

/// Splits `n` into `d` factors as evenly as its prime factorization allows,
/// largest first.
pub fn balanced_factors(n: usize, d: usize) -> Result<Vec<usize>> {
    if n == 0 || d == 0 {
        return Err(Error::Config(format!("cannot factor {n} into {d} parts")));
    }
    let mut primes = Vec::new();
    let mut rest = n;
    let mut p = 2;
    while p * p <= rest {
        while rest.is_multiple_of(p) {
            primes.push(p);
            rest /= p;
        }
        p += 1;
    }
    if rest > 1 {
        primes.push(rest);
    }
    let mut factors = vec![1usize; d];
    for &p in primes.iter().rev() {
        let smallest = (0..d).min_by_key(|&i| factors[i]).expect("d > 0");
        factors[smallest] *= p;
    }
    factors.sort_unstable_by(|a, b| b.cmp(a));
    Ok(factors)
}

/// Default number of factors for a width: aims for factors near 4.
pub fn default_way_count(n: usize) -> usize {
    (((n as f64).log2() / 2.0).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::unravel;

    fn random_layer(shape: TtShape, seed: u64) -> TtLinear {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = TtLinear::zeros(shape);
        for core in &mut layer.cores {
            for x in core.data_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        layer
    }

    /// Entry-wise definition: a chain of core-slice products.
    fn slice_product(layer: &TtLinear, row: &[usize], col: &[usize]) -> f64 {
        let mut vec = vec![1.0];
        for (k, core) in layer.cores.iter().enumerate() {
            let [r0, _, r1] = layer.shape.core_shape(k);
            let i = if k < layer.shape.d() { row[k] } else { col[k - layer.shape.d()] };
            let mut next = vec![0.0; r1];
            for a in 0..r0 {
                for b in 0..r1 {
                    next[b] += vec[a] * core.get(&[a, i, b]);
                }
            }
            vec = next;
        }
        vec[0]
    }

    #[test]
    fn rank_eight_layer_has_1600_weights() {
        let shape = TtShape::new(vec![4; 4], vec![4; 4], vec![1, 8, 8, 8, 8, 8, 8, 8, 1]).unwrap();
        assert_eq!(shape.param_count(), 1600);
        assert!((shape.compression() - 40.96).abs() < 1e-12);
    }

    #[test]
    fn uniform_rank_five_has_640_weights() {
        assert_eq!(TtShape::uniform(vec![4; 4], vec![4; 4], 5).unwrap().param_count(), 640);
    }

    #[test]
    fn smallest_layer_counts_four() {
        let layer = TtLinear::zeros(TtShape::new(vec![2], vec![2], vec![1, 1, 1]).unwrap());
        assert_eq!(tt_param_count(&layer), 4);
    }

    #[test]
    fn shape_validation() {
        assert!(matches!(TtShape::new(vec![2], vec![2], vec![2, 1, 1]), Err(Error::RankChain(_))));
        assert!(matches!(TtShape::new(vec![2], vec![2], vec![1, 1]), Err(Error::RankChain(_))));
        assert!(TtShape::new(vec![2, 2], vec![2], vec![1, 1, 1, 1]).is_err());
    }

    #[test]
    fn corrupted_core_is_reported() {
        let mut layer = random_layer(TtShape::uniform(vec![2, 2], vec![2, 2], 2).unwrap(), 1);
        layer.cores[1] = DenseTensor::zeros(&[3, 2, 2]).unwrap();
        let err = layer.matvec(&[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::RankChain(ref m) if m.contains("core 1")), "{err}");
    }

    #[test]
    fn plan_matches_reference_rows() {
        let f = [4usize; 4];
        let p40 = plan_ranks(256, 256, &f, &f, 40.0).unwrap();
        assert_eq!(p40.chosen_ranks, vec![1, 8, 8, 8, 8, 8, 8, 8, 1]);
        assert_eq!(p40.per_layer_params, 1600);
        let p20 = plan_ranks(256, 256, &f, &f, 20.0).unwrap();
        assert_eq!(p20.chosen_ranks[1], 12);
        assert_eq!(p20.per_layer_params, 3552);
        let p100 = plan_ranks(256, 256, &f, &f, 100.0).unwrap();
        assert_eq!(p100.chosen_ranks[1], 5);
        assert_eq!(p100.per_layer_params, 640);
    }

    #[test]
    fn plan_within_heuristic_tolerance() {
        let f = [4usize; 4];
        for target in [10.0, 20.0, 40.0, 50.0, 100.0, 200.0] {
            let p = plan_ranks(256, 256, &f, &f, target).unwrap();
            assert!(p.achieved_compression >= 0.5 * target, "{target}: {p:?}");
            assert!(p.achieved_compression <= 2.0 * target, "{target}: {p:?}");
        }
    }

    #[test]
    fn plan_errors() {
        let f = [4usize; 4];
        assert!(matches!(plan_ranks(256, 256, &f, &f, 1e6), Err(Error::InfeasibleTarget { .. })));
        assert!(matches!(plan_ranks(256, 256, &f, &f, 0.5), Err(Error::Config(_))));
        assert!(matches!(plan_ranks(255, 256, &f, &f, 10.0), Err(Error::Size(_))));
    }

    #[test]
    fn rank_one_all_ones_gives_replicated_sum() {
        let shape = TtShape::uniform(vec![2, 3], vec![3, 2], 1).unwrap();
        let mut layer = TtLinear::zeros(shape);
        for core in &mut layer.cores {
            core.data_mut().fill(1.0);
        }
        let z: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert_eq!(layer.matvec(&z).unwrap(), vec![15.0; 6]);
        assert_eq!(layer.matvec(&[0.0; 6]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn rank_one_reconstruct_is_outer_product() {
        let layer = random_layer(TtShape::uniform(vec![2, 3], vec![2, 2], 1).unwrap(), 9);
        let w = layer.reconstruct().unwrap();
        for lin in 0..w.len() {
            let idx = unravel(lin, w.shape());
            let want: f64 = idx.iter().enumerate().map(|(k, &i)| layer.cores[k].get(&[0, i, 0])).product();
            assert!((w.data()[lin] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn single_way_is_low_rank_product() {
        let layer = random_layer(TtShape::new(vec![3], vec![4], vec![1, 2, 1]).unwrap(), 3);
        let w = layer.dense_matrix().unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let ab: f64 = (0..2).map(|r| layer.cores[0].get(&[0, i, r]) * layer.cores[1].get(&[r, j, 0])).sum();
                assert!((w[i * 4 + j] - ab).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reconstruct_matches_slice_products() {
        let shape = TtShape::new(vec![2, 3, 2], vec![3, 2, 2], vec![1, 2, 3, 4, 3, 2, 1]).unwrap();
        let layer = random_layer(shape, 5);
        let w = layer.reconstruct().unwrap();
        for lin in 0..w.len() {
            let idx = unravel(lin, w.shape());
            let want = slice_product(&layer, &idx[..3], &idx[3..]);
            assert!((w.data()[lin] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_and_unit_for_trivial_shape() {
        let shape = TtShape::new(vec![1], vec![1], vec![1, 1, 1]).unwrap();
        assert_eq!(core_std(&shape), 1.0);
        let big = TtShape::uniform(vec![4; 4], vec![4; 4], 8).unwrap();
        assert_eq!(tt_init(&big, 42), tt_init(&big, 42));
        assert_ne!(tt_init(&big, 42), tt_init(&big, 43));
        assert!(tt_init(&big, 1).bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn balanced_factorizations() {
        assert_eq!(balanced_factors(256, 4).unwrap(), vec![4, 4, 4, 4]);
        assert_eq!(balanced_factors(128, 4).unwrap(), vec![4, 4, 4, 2]);
        assert_eq!(balanced_factors(16, 2).unwrap(), vec![4, 4]);
        assert_eq!(balanced_factors(7, 2).unwrap(), vec![7, 1]);
        assert_eq!(default_way_count(256), 4);
        assert_eq!(default_way_count(16), 2);
    }
}
