//! Degree-normalized interaction graph and its matrix-free operators.
//!
//! From a binary train matrix R this builds R̃ = D_u^{-1/2} R D_i^{-1/2}
//! where the degree matrices count interactions per user and per item. The
//! item-item Gram matrix P = R̃ᵀR̃ and the rescaled Laplacian
//! L̃ = 2(I − P) − I = I − 2P are never materialized: one application costs
//! two sparse matvecs, O(nnz(R)).
//!
//! Spectral facts the rest of the crate leans on: P is symmetric positive
//! semi-definite with eigenvalues in [0, 1], so the Laplacian I − P has
//! eigenvalues in [0, 1] and L̃ has them in [−1, 1]. The vector with entries
//! sqrt(d_i) is always an eigenvector of P with eigenvalue exactly 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::sparse::{BinaryCsr, CsrMatrix, SignalBlock};

/// Normalized user-item matrix with a transposed companion, plus the degree
/// counts it was built from. Immutable after construction; all `apply_*`
/// methods are read-only and safe to call concurrently.
#[derive(Debug, Clone)]
pub struct NormalizedGraph {
    r_tilde: CsrMatrix,
    r_tilde_t: CsrMatrix,
    user_degrees: Vec<usize>,
    item_degrees: Vec<usize>,
}

impl NormalizedGraph {
    /// Normalize the train matrix of a dataset. Degrees come from train
    /// only; users or items with no train interactions get an all-zero row
    /// or column (their entries simply do not exist in the sparse layout).
    pub fn from_dataset(dataset: &InteractionDataset) -> Result<Self> {
        Self::from_train(dataset.train())
    }

    /// Normalize a raw binary matrix. This is the single place where R̃
    /// values are computed, so a graph rebuilt from a persisted train
    /// pattern is bit-identical to the one fitted originally.
    pub fn from_train(train: &BinaryCsr) -> Result<Self> {
        if train.nnz() == 0 {
            return Err(Error::EmptyTrain);
        }
        let num_users = train.num_rows();
        let num_items = train.num_cols();
        let mut user_degrees = vec![0usize; num_users];
        let mut item_degrees = vec![0usize; num_items];
        for (u, i) in train.iter() {
            user_degrees[u] += 1;
            item_degrees[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(num_users + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(train.nnz());
        let mut values = Vec::with_capacity(train.nnz());
        for u in 0..num_users {
            for &i in train.row(u) {
                col_idx.push(i);
                values.push(1.0 / ((user_degrees[u] * item_degrees[i]) as f64).sqrt());
            }
            row_ptr.push(col_idx.len());
        }
        let r_tilde = CsrMatrix::from_parts(num_users, num_items, row_ptr, col_idx, values);
        let r_tilde_t = r_tilde.transposed();
        Ok(NormalizedGraph {
            r_tilde,
            r_tilde_t,
            user_degrees,
            item_degrees,
        })
    }

    pub fn num_users(&self) -> usize {
        self.r_tilde.num_rows()
    }

    pub fn num_items(&self) -> usize {
        self.r_tilde.num_cols()
    }

    pub fn nnz(&self) -> usize {
        self.r_tilde.nnz()
    }

    pub fn r_tilde(&self) -> &CsrMatrix {
        &self.r_tilde
    }

    pub fn user_degrees(&self) -> &[usize] {
        &self.user_degrees
    }

    pub fn item_degrees(&self) -> &[usize] {
        &self.item_degrees
    }

    /// `R̃ x` for an item signal, yielding a user signal.
    pub fn apply_r_tilde(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.r_tilde.matvec(x)
    }

    /// `R̃ᵀ y` for a user signal, yielding an item signal.
    pub fn apply_r_tilde_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.r_tilde_t.matvec(y)
    }

    /// Gram operator `P x = R̃ᵀ(R̃ x)` on an item signal.
    pub fn apply_gram(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.r_tilde_t.matvec(&self.r_tilde.matvec(x)?)
    }

    /// Rescaled Laplacian `L̃ x = x − 2 P x` on an item signal.
    pub fn apply_rescaled_laplacian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut gx = self.apply_gram(x)?;
        for (g, &xi) in gx.iter_mut().zip(x) {
            *g = xi - 2.0 * *g;
        }
        Ok(gx)
    }

    /// Block form of [`NormalizedGraph::apply_gram`]; column c of the result
    /// is bit-identical to the single-vector path on column c.
    pub fn apply_gram_block(&self, x: &SignalBlock) -> Result<SignalBlock> {
        self.r_tilde_t.matvec_block(&self.r_tilde.matvec_block(x)?)
    }

    /// Block form of [`NormalizedGraph::apply_rescaled_laplacian`].
    pub fn apply_rescaled_laplacian_block(&self, x: &SignalBlock) -> Result<SignalBlock> {
        let mut gx = self.apply_gram_block(x)?;
        gx.scale_add(-2.0, 1.0, x);
        Ok(gx)
    }

    /// Estimate the largest singular value of R̃ by power iteration on the
    /// Gram operator. Returns sqrt of the final Rayleigh quotient. The exact
    /// value is 1 for every non-empty train matrix (the sqrt-degree vector
    /// is a fixed point of P), so this doubles as a self-check.
    pub fn estimate_sigma1(&self, max_iters: usize, tol: f64, seed: u64) -> f64 {
        let n = self.num_items();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize_in_place(&mut x);
        let mut lambda = 0.0;
        for _ in 0..max_iters {
            let mut y = self.apply_gram(&x).expect("dimension fixed by self");
            let next = dot(&x, &y);
            let norm = normalize_in_place(&mut y);
            if norm == 0.0 {
                return 0.0; // x fell in the null space; R̃ must be tiny
            }
            x = y;
            if (next - lambda).abs() <= tol * next.abs().max(1.0) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.max(0.0).sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize_in_place(x: &mut [f64]) -> f64 {
    let norm = dot(x, x).sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionDataset;

    /// Dense R̃ built independently by the textbook formula, for oracles.
    fn dense_r_tilde(ds: &InteractionDataset) -> Vec<Vec<f64>> {
        let (m, n) = (ds.num_users(), ds.num_items());
        let mut du = vec![0usize; m];
        let mut di = vec![0usize; n];
        for (u, i) in ds.train().iter() {
            du[u] += 1;
            di[i] += 1;
        }
        let mut dense = vec![vec![0.0; n]; m];
        for (u, i) in ds.train().iter() {
            dense[u][i] = 1.0 / ((du[u] * di[i]) as f64).sqrt();
        }
        dense
    }

    fn random_split(
        users: usize,
        items: usize,
        density: f64,
        seed: u64,
    ) -> InteractionDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if rng.gen::<f64>() < density {
                    train.push((u, i));
                }
            }
        }
        if train.is_empty() {
            train.push((0, 0));
        }
        InteractionDataset::from_entries(users, items, &train, &[]).unwrap()
    }

    #[test]
    fn hand_computed_two_by_two() {
        // R = [[1,1],[1,0]] gives d_u = [2,1], d_i = [2,1] and
        // R̃ = [[1/2, 1/√2], [1/√2, 0]].
        let ds = InteractionDataset::from_entries(2, 2, &[(0, 0), (0, 1), (1, 0)], &[]).unwrap();
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        assert_eq!(g.user_degrees(), &[2, 1]);
        assert_eq!(g.item_degrees(), &[2, 1]);
        let y = g.apply_r_tilde(&[1.0, 0.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);
        assert!((y[1] - 1.0 / 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identity_interactions_normalize_to_identity() {
        let ds =
            InteractionDataset::from_entries(3, 3, &[(0, 0), (1, 1), (2, 2)], &[]).unwrap();
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let x = [3.0, -1.0, 0.5];
        assert_eq!(g.apply_r_tilde(&x).unwrap(), x.to_vec());
        assert_eq!(g.apply_gram(&x).unwrap(), x.to_vec());
        // L* = 0 here, so L̃ = −I.
        let lx = g.apply_rescaled_laplacian(&x).unwrap();
        assert_eq!(lx, vec![-3.0, 1.0, -0.5]);
    }

    #[test]
    fn empty_train_is_rejected() {
        let ds = InteractionDataset::from_entries(2, 2, &[], &[(0, 0)]).unwrap();
        assert!(matches!(
            NormalizedGraph::from_dataset(&ds),
            Err(Error::EmptyTrain)
        ));
    }

    #[test]
    fn degree_sums_match_nnz() {
        let ds = random_split(20, 30, 0.1, 7);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let su: usize = g.user_degrees().iter().sum();
        let si: usize = g.item_degrees().iter().sum();
        assert_eq!(su, ds.train().nnz());
        assert_eq!(si, ds.train().nnz());
    }

    #[test]
    fn operators_match_dense_oracle() {
        let ds = random_split(17, 23, 0.15, 11);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let dense = dense_r_tilde(&ds);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x: Vec<f64> = (0..23).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let y = g.apply_r_tilde(&x).unwrap();
        for u in 0..17 {
            let want: f64 = (0..23).map(|i| dense[u][i] * x[i]).sum();
            assert!((y[u] - want).abs() < 1e-12);
        }

        let px = g.apply_gram(&x).unwrap();
        for i in 0..23 {
            let mut want = 0.0;
            for j in 0..23 {
                let pij: f64 = (0..17).map(|u| dense[u][i] * dense[u][j]).sum();
                want += pij * x[j];
            }
            assert!((px[i] - want).abs() < 1e-12);
        }

        let lx = g.apply_rescaled_laplacian(&x).unwrap();
        for i in 0..23 {
            assert!((lx[i] - (x[i] - 2.0 * px[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_operator_is_symmetric() {
        let ds = random_split(25, 40, 0.08, 3);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = dot(&g.apply_gram(&x).unwrap(), &y);
            let rhs = dot(&x, &g.apply_gram(&y).unwrap());
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_rayleigh_quotient_stays_in_unit_interval() {
        let ds = random_split(30, 45, 0.1, 13);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..45).map(|_| rng.gen_range(-1.0..1.0)).collect();
            normalize_in_place(&mut x);
            let px = g.apply_gram(&x).unwrap();
            // Rayleigh quotient of L* = I − P.
            let q = 1.0 - dot(&x, &px);
            assert!(q >= -1e-10 && q <= 1.0 + 1e-10, "quotient {q} out of range");
        }
    }

    #[test]
    fn rescaled_laplacian_identity_is_exact() {
        let ds = random_split(12, 18, 0.2, 29);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lx = g.apply_rescaled_laplacian(&x).unwrap();
        let px = g.apply_gram(&x).unwrap();
        for i in 0..18 {
            // Same arithmetic, so equality is exact, not approximate. The
            // add-back form (lx + 2px == x) would NOT be exact: it appends a
            // rounding step that is not part of either operator.
            assert_eq!(lx[i], x[i] - 2.0 * px[i]);
        }
    }

    #[test]
    fn sigma1_is_one_for_random_graphs() {
        let ds = random_split(50, 80, 0.12, 41);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let sigma = g.estimate_sigma1(2000, 1e-14, 4242);
        assert!((sigma - 1.0).abs() < 1e-10, "sigma1 = {sigma}");
    }

    #[test]
    fn sqrt_degree_vector_is_a_fixed_point_of_gram() {
        let ds = random_split(15, 22, 0.18, 53);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let v: Vec<f64> = g.item_degrees().iter().map(|&d| (d as f64).sqrt()).collect();
        let pv = g.apply_gram(&v).unwrap();
        for (a, b) in pv.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_path_equals_vector_path() {
        let ds = random_split(14, 21, 0.2, 61);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let block = SignalBlock::from_columns(&cols);
        let gb = g.apply_gram_block(&block).unwrap();
        let lb = g.apply_rescaled_laplacian_block(&block).unwrap();
        for (c, col) in cols.iter().enumerate() {
            assert_eq!(g.apply_gram(col).unwrap(), gb.column(c));
            assert_eq!(g.apply_rescaled_laplacian(col).unwrap(), lb.column(c));
        }
    }
}
