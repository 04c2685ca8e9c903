//! Matrix-free truncated SVD of R̃ and the low-rank ideal pass projector.
//!
//! The top-η right singular vectors of R̃ are exactly the bottom-η
//! eigenvectors of the item-item Laplacian (1 − σ² = λ), so the "ideal pass"
//! projector V_ηV_ηᵀ passes the η lowest graph frequencies. We compute V_η by
//! block subspace power iteration on the Gram operator R̃ᵀR̃: only
//! `apply_gram_block` is needed, never the dense matrix. The block carries 8
//! oversampling columns (discarded on output) to speed up convergence of the
//! trailing requested directions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::NormalizedGraph;
use crate::sparse::SignalBlock;

/// Extra subspace columns carried through the iteration and dropped at the
/// end.
const OVERSAMPLE: usize = 8;

/// Ritz values below this are treated as exact zeros (rank deficiency).
const RANK_TOL_SIGMA: f64 = 1e-10;

/// Columns whose norm collapses below this during orthonormalization are
/// replaced by fresh random vectors.
const REPLACE_TOL: f64 = 1e-12;

/// Knobs for [`truncated_svd`].
///
/// Convergence is declared when the largest change in the leading η Ritz
/// values between consecutive iterations, relative to the largest Ritz
/// value, drops to `tol`. Note the induced subspace error scales like
/// sqrt(tol / gap), so callers that need subspace angles near 1e-6 should
/// pass a tol well below the default (the verification suite uses 1e-13).
#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        SvdOptions {
            tol: 1e-9,
            max_iters: 500,
            seed: 42,
        }
    }
}

/// How the iteration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvdInfo {
    pub converged: bool,
    pub iterations: usize,
    /// True when fewer than η nonzero singular values exist; the surplus
    /// columns hold an orthonormal complement and σ = 0.
    pub rank_deficient: bool,
}

/// Column-orthonormal basis V_η of the top right singular subspace of R̃,
/// with the matching singular values in descending order.
#[derive(Debug, Clone)]
pub struct IdealPassBasis {
    num_items: usize,
    eta: usize,
    /// Column-major: column j occupies `columns[j*num_items..][..num_items]`.
    columns: Vec<f64>,
    singular_values: Vec<f64>,
    info: SvdInfo,
}

impl IdealPassBasis {
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    /// σ₁ ≥ … ≥ σ_η ≥ 0.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn info(&self) -> SvdInfo {
        self.info
    }

    /// The j-th singular vector.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.num_items..(j + 1) * self.num_items]
    }

    /// V_η flattened row by row (item-major), the persistence layout.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_items * self.eta);
        for i in 0..self.num_items {
            for j in 0..self.eta {
                out.push(self.columns[j * self.num_items + i]);
            }
        }
        out
    }

    /// Rebuild from the persistence layout. Pure reshuffling, so a saved
    /// basis reloads bit-identically.
    pub fn from_row_major(
        num_items: usize,
        eta: usize,
        row_major: &[f64],
        singular_values: Vec<f64>,
        info: SvdInfo,
    ) -> Result<Self> {
        if row_major.len() != num_items * eta || singular_values.len() != eta {
            return Err(Error::DimensionMismatch {
                expected: num_items * eta,
                got: row_major.len(),
            });
        }
        let mut columns = vec![0.0; num_items * eta];
        for i in 0..num_items {
            for j in 0..eta {
                columns[j * num_items + i] = row_major[i * eta + j];
            }
        }
        Ok(IdealPassBasis {
            num_items,
            eta,
            columns,
            singular_values,
            info,
        })
    }

    /// Projection V_η(V_ηᵀ x) onto the passed subspace; O(η · num_items).
    pub fn apply_ideal(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.num_items {
            return Err(Error::DimensionMismatch {
                expected: self.num_items,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.num_items];
        for j in 0..self.eta {
            let col = self.column(j);
            let coord = dot(col, x);
            for (o, &v) in out.iter_mut().zip(col) {
                *o += coord * v;
            }
        }
        Ok(out)
    }

    /// Block projection; column c equals the single-vector path on column c.
    pub fn apply_ideal_block(&self, x: &SignalBlock) -> Result<SignalBlock> {
        if x.num_rows() != self.num_items {
            return Err(Error::DimensionMismatch {
                expected: self.num_items,
                got: x.num_rows(),
            });
        }
        let cols: Vec<Vec<f64>> = (0..x.num_cols())
            .into_par_iter()
            .map(|c| self.apply_ideal(&x.column(c)).expect("length checked"))
            .collect();
        Ok(SignalBlock::from_columns(&cols))
    }
}

/// Top-η right singular triplets of R̃ by seeded block subspace power
/// iteration on the Gram operator, with per-iteration orthonormalization and
/// a final Rayleigh–Ritz rotation.
///
/// If R̃ has rank below η the missing directions are returned as an
/// orthonormal complement with σ = 0 and `rank_deficient` set (plus a
/// warning on stderr). Each returned vector has its largest-magnitude entry
/// made non-negative, so results are reproducible artifacts.
pub fn truncated_svd(
    g: &NormalizedGraph,
    eta: usize,
    options: &SvdOptions,
) -> Result<IdealPassBasis> {
    let n = g.num_items();
    if eta == 0 {
        return Err(Error::InvalidParameter("eta must be at least 1".into()));
    }
    if eta > n {
        return Err(Error::EtaOutOfRange { eta, num_items: n });
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "svd tolerance must be positive, got {}",
            options.tol
        )));
    }

    let block = (eta + OVERSAMPLE).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut basis: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    orthonormalize(&mut basis, &mut rng);

    let mut prev_ritz: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        let image = apply_gram_columns(g, &basis)?;
        let ritz = ritz_values(&basis, &image, eta);
        if let Some(prev) = &prev_ritz {
            let scale = ritz[0].max(f64::MIN_POSITIVE);
            let change = ritz
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / scale;
            if change <= options.tol {
                converged = true;
            }
        }
        prev_ritz = Some(ritz);
        basis = image;
        orthonormalize(&mut basis, &mut rng);
        if converged {
            break;
        }
    }

    // Final Rayleigh–Ritz rotation aligns the block with the individual
    // eigendirections (up to rotations inside degenerate clusters).
    let image = apply_gram_columns(g, &basis)?;
    let b = DMatrix::from_fn(block, block, |i, j| dot(&basis[i], &image[j]));
    let sym = (&b + b.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..block).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));

    let mut columns = vec![0.0; n * eta];
    let mut singular_values = vec![0.0; eta];
    let mut rank_deficient = false;
    for (j, &src) in order.iter().take(eta).enumerate() {
        let mut sigma = eig.eigenvalues[src].max(0.0).sqrt();
        if sigma < RANK_TOL_SIGMA {
            sigma = 0.0;
            rank_deficient = true;
        }
        singular_values[j] = sigma;
        // Ritz vector: Σ_i W[i, src] · basis[i].
        let out = &mut columns[j * n..(j + 1) * n];
        for (i, col) in basis.iter().enumerate() {
            let w = eig.eigenvectors[(i, src)];
            for (o, &v) in out.iter_mut().zip(col) {
                *o += w * v;
            }
        }
        fix_sign(out);
    }

    if rank_deficient {
        eprintln!(
            "truncated_svd: matrix rank is below eta = {eta}; surplus directions \
             carry zero singular values"
        );
    }

    Ok(IdealPassBasis {
        num_items: n,
        eta,
        columns,
        singular_values,
        info: SvdInfo {
            converged,
            iterations,
            rank_deficient,
        },
    })
}

fn apply_gram_columns(g: &NormalizedGraph, cols: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let image = g.apply_gram_block(&SignalBlock::from_columns(cols))?;
    Ok((0..cols.len()).map(|c| image.column(c)).collect())
}

/// Leading `take` Ritz values of the Gram operator on span(basis), given the
/// image = Gram · basis and an orthonormal basis.
fn ritz_values(basis: &[Vec<f64>], image: &[Vec<f64>], take: usize) -> Vec<f64> {
    let b = basis.len();
    let m = DMatrix::from_fn(b, b, |i, j| dot(&basis[i], &image[j]));
    let sym = (&m + m.transpose()) * 0.5;
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|&v| v.max(0.0)).collect();
    vals.sort_by(|a, c| c.total_cmp(a));
    vals.truncate(take);
    vals
}

/// Modified Gram-Schmidt with a second pass; columns that collapse are
/// replaced by fresh random vectors so the block never loses rank.
fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for j in 0..cols.len() {
        let mut attempts = 0;
        loop {
            let (head, tail) = cols.split_at_mut(j);
            let col = &mut tail[0];
            for _ in 0..2 {
                for prev in head.iter() {
                    let proj = dot(prev, col);
                    for (c, &p) in col.iter_mut().zip(prev) {
                        *c -= proj * p;
                    }
                }
            }
            let norm = dot(col, col).sqrt();
            if norm > REPLACE_TOL {
                for c in col.iter_mut() {
                    *c /= norm;
                }
                break;
            }
            attempts += 1;
            assert!(attempts < 8, "cannot build an orthonormal block");
            for c in col.iter_mut() {
                *c = rng.gen_range(-1.0..1.0);
            }
        }
    }
}

/// Make the largest-magnitude entry non-negative (first index wins ties).
fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        for v in col.iter_mut() {
            *v = -*v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionDataset;
    use crate::oracle::{
        self, dense_spectrum, eigenvector_identification_angle, max_principal_angle,
        sigma_prefix_pairing_deviation,
    };

    fn tight() -> SvdOptions {
        SvdOptions {
            tol: 1e-13,
            ..SvdOptions::default()
        }
    }

    fn basis_matrix(b: &IdealPassBasis) -> DMatrix<f64> {
        DMatrix::from_fn(b.num_items(), b.eta(), |i, j| b.column(j)[i])
    }

    #[test]
    fn identity_graph_degenerate_subspace() {
        let ds = InteractionDataset::from_entries(
            5,
            5,
            &[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)],
            &[],
        )
        .unwrap();
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 3, &SvdOptions::default()).unwrap();
        assert!(basis.info().converged);
        for &s in basis.singular_values() {
            assert!((s - 1.0).abs() < 1e-9);
        }
        let v = basis_matrix(&basis);
        let err = (v.transpose() * &v - DMatrix::identity(3, 3)).abs().max();
        assert!(err < 1e-8);
    }

    #[test]
    fn tiny_instance_matches_dense_svd() {
        let ds = InteractionDataset::from_entries(2, 2, &[(0, 0), (0, 1), (1, 0)], &[]).unwrap();
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 1, &tight()).unwrap();
        let spec = dense_spectrum(&g).unwrap();
        assert!((basis.singular_values()[0] - spec.singular_values[0]).abs() < 1e-8);
        // Up to sign: |⟨v, v_dense⟩| = 1.
        let overlap: f64 = basis
            .column(0)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * spec.right_singular_vectors[(i, 0)])
            .sum();
        assert!((overlap.abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn subspace_matches_dense_oracle() {
        let ds = oracle::random_dataset(40, 60, 0.15, 0.0, 21);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let spec = dense_spectrum(&g).unwrap();
        // The check needs a clean spectral gap at the cut; this seed has one.
        let gap = spec.singular_values[7] - spec.singular_values[8];
        assert!(gap > 1e-3, "instance lost its gap: {gap}");

        let basis = truncated_svd(&g, 8, &tight()).unwrap();
        let dense_v = spec.right_singular_vectors.columns(0, 8).into_owned();
        let angle = max_principal_angle(&basis_matrix(&basis), &dense_v);
        assert!(angle <= 1e-6, "principal angle {angle}");
    }

    #[test]
    fn sigma_lambda_pairing_against_eigen_route() {
        let ds = oracle::random_dataset(35, 50, 0.15, 0.0, 22);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 10, &tight()).unwrap();
        let spec = dense_spectrum(&g).unwrap();
        let dev = sigma_prefix_pairing_deviation(&spec, basis.singular_values());
        assert!(dev < 1e-8, "pairing deviation {dev}");
        let angle = eigenvector_identification_angle(&spec, &basis_matrix(&basis), 1e-7);
        assert!(angle <= 1e-6, "identification angle {angle}");
    }

    #[test]
    fn gram_residual_is_small_after_convergence() {
        let ds = oracle::random_dataset(30, 40, 0.2, 0.0, 23);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 6, &tight()).unwrap();
        assert!(basis.info().converged);
        for j in 0..6 {
            let v = basis.column(j);
            let gv = g.apply_gram(v).unwrap();
            let s2 = basis.singular_values()[j].powi(2);
            let resid: f64 = gv
                .iter()
                .zip(v)
                .map(|(a, b)| (a - s2 * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-7, "column {j} residual {resid}");
        }
    }

    #[test]
    fn rank_deficiency_pads_with_zeros() {
        // 2 users can expose at most rank 2.
        let ds = InteractionDataset::from_entries(
            2,
            6,
            &[(0, 0), (0, 1), (0, 2), (1, 2), (1, 3)],
            &[],
        )
        .unwrap();
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 4, &SvdOptions::default()).unwrap();
        assert!(basis.info().rank_deficient);
        assert_eq!(basis.singular_values()[2], 0.0);
        assert_eq!(basis.singular_values()[3], 0.0);
        let v = basis_matrix(&basis);
        let err = (v.transpose() * &v - DMatrix::identity(4, 4)).abs().max();
        assert!(err < 1e-8, "complement padding must stay orthonormal: {err}");
    }

    #[test]
    fn eta_bounds_are_checked() {
        let ds = oracle::random_dataset(10, 12, 0.3, 0.0, 24);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        assert!(matches!(
            truncated_svd(&g, 13, &SvdOptions::default()),
            Err(Error::EtaOutOfRange { eta: 13, num_items: 12 })
        ));
        assert!(truncated_svd(&g, 0, &SvdOptions::default()).is_err());
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let ds = oracle::random_dataset(25, 30, 0.2, 0.0, 25);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let a = truncated_svd(&g, 5, &SvdOptions::default()).unwrap();
        let b = truncated_svd(&g, 5, &SvdOptions::default()).unwrap();
        assert_eq!(a.singular_values(), b.singular_values());
        for j in 0..5 {
            assert_eq!(a.column(j), b.column(j));
        }
        // A different seed may flip within-cluster choices but spans the
        // same subspace.
        let c = truncated_svd(
            &g,
            5,
            &SvdOptions {
                seed: 7,
                tol: 1e-13,
                ..SvdOptions::default()
            },
        )
        .unwrap();
        let tight_a = truncated_svd(&g, 5, &tight()).unwrap();
        let angle = max_principal_angle(&basis_matrix(&tight_a), &basis_matrix(&c));
        assert!(angle < 1e-6, "subspace should not depend on the seed: {angle}");
    }

    #[test]
    fn projector_is_idempotent_and_symmetric() {
        let ds = oracle::random_dataset(30, 40, 0.15, 0.0, 26);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 6, &SvdOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        for _ in 0..5 {
            let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let px = basis.apply_ideal(&x).unwrap();
            let ppx = basis.apply_ideal(&px).unwrap();
            for (a, b) in ppx.iter().zip(&px) {
                assert!((a - b).abs() < 1e-9);
            }
            let lhs = dot(&px, &y);
            let rhs = dot(&x, &basis.apply_ideal(&y).unwrap());
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn projector_fixes_its_range_and_kills_its_complement() {
        let ds = oracle::random_dataset(20, 30, 0.2, 0.0, 27);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 4, &SvdOptions::default()).unwrap();
        let v0 = basis.column(0).to_vec();
        let pv0 = basis.apply_ideal(&v0).unwrap();
        for (a, b) in pv0.iter().zip(&v0) {
            assert!((a - b).abs() < 1e-9);
        }
        // Project a random vector out of the subspace and check it maps to 0.
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let x: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let px = basis.apply_ideal(&x).unwrap();
        let orth: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
        for v in basis.apply_ideal(&orth).unwrap() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn projector_matches_dense_low_frequency_projector() {
        let ds = oracle::random_dataset(40, 60, 0.12, 0.0, 28);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let spec = dense_spectrum(&g).unwrap();
        let eta = 8;
        let gap = spec.singular_values[eta - 1] - spec.singular_values[eta];
        assert!(gap > 1e-3, "instance lost its gap: {gap}");
        let basis = truncated_svd(&g, eta, &tight()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let x: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = basis.apply_ideal(&x).unwrap();
        let weights: Vec<f64> = (0..60).map(|i| if i < eta { 1.0 } else { 0.0 }).collect();
        let slow = oracle::dense_filter_weights(&spec, &weights, &x).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn block_projection_equals_vector_projection() {
        let ds = oracle::random_dataset(15, 20, 0.25, 0.0, 29);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 3, &SvdOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let out = basis
            .apply_ideal_block(&SignalBlock::from_columns(&cols))
            .unwrap();
        for (c, col) in cols.iter().enumerate() {
            assert_eq!(basis.apply_ideal(col).unwrap(), out.column(c));
        }
    }

    #[test]
    fn row_major_round_trip_is_lossless() {
        let ds = oracle::random_dataset(18, 24, 0.2, 0.0, 30);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 5, &SvdOptions::default()).unwrap();
        let rebuilt = IdealPassBasis::from_row_major(
            24,
            5,
            &basis.to_row_major(),
            basis.singular_values().to_vec(),
            basis.info(),
        )
        .unwrap();
        for j in 0..5 {
            assert_eq!(basis.column(j), rebuilt.column(j));
        }
    }

    #[test]
    fn sign_convention_makes_peaks_non_negative() {
        let ds = oracle::random_dataset(25, 35, 0.18, 0.0, 31);
        let g = NormalizedGraph::from_dataset(&ds).unwrap();
        let basis = truncated_svd(&g, 6, &SvdOptions::default()).unwrap();
        for j in 0..6 {
            let col = basis.column(j);
            let peak = col.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
            assert!(col.iter().any(|&v| (v.abs() - peak).abs() < 1e-15 && v >= 0.0));
        }
    }
}
