//! The assembled recommender: degree-normalized combination of the
//! polynomial filter and the ideal pass projector, with model persistence.
//!
//! Prediction for a user is r̂_u = D^β (H_cheby + α·H_ideal) D^{−β} r_u,
//! where r_u is the raw binary interaction row, D is the diagonal of item
//! degrees and β softens popularity: the inner D^{−β} damps popular items
//! before filtering, the outer D^β restores them after. By the similarity
//! transform identity this equals running the same filter on the generalized
//! Laplacian D^β L* D^{−β}.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cheby::{ChebyFilterSpec, TargetDescriptor};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::graph::NormalizedGraph;
use crate::sparse::{BinaryCsr, SignalBlock};
use crate::svd::{truncated_svd, IdealPassBasis, SvdInfo, SvdOptions};

/// Model hyperparameters. `eta` only matters when `alpha > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Plateau flatness exponent φ > 0.
    pub phi: f64,
    /// Weight α ≥ 0 of the ideal pass branch.
    pub alpha: f64,
    /// Dimension η of the ideal pass basis.
    pub eta: usize,
    /// Degree-normalization power β ≥ 0.
    pub beta: f64,
    /// Chebyshev order K.
    pub order_k: usize,
}

impl Default for HyperParams {
    /// The smallest value of each tuning range, with the standard order
    /// K = 8; a neutral starting point, not a tuned configuration.
    fn default() -> Self {
        HyperParams {
            phi: 1.0,
            alpha: 0.0,
            eta: 128,
            beta: 0.0,
            order_k: 8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "phi must be positive and finite, got {}",
                self.phi
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be non-negative and finite, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta must be non-negative and finite, got {}",
                self.beta
            )));
        }
        if self.alpha > 0.0 && self.eta == 0 {
            return Err(Error::InvalidParameter(
                "eta must be at least 1 when alpha > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted model: everything needed to score any binary interaction vector
/// against the training graph. Immutable after fit; prediction methods are
/// read-only and safe to call concurrently.
#[derive(Debug, Clone)]
pub struct ChebyCFModel {
    graph: NormalizedGraph,
    filter: ChebyFilterSpec,
    ideal: Option<IdealPassBasis>,
    params: HyperParams,
    /// d_i^{β}, with zero-degree items pinned to 1.
    item_deg_pos: Vec<f64>,
    /// d_i^{−β}, same convention.
    item_deg_neg: Vec<f64>,
    train_checksum: [u8; 32],
    seed: u64,
}

/// d^{±β} with the zero-degree convention d^{±β} = 1 (such items are inert:
/// their R̃ column is all zero, so only the convention keeps them finite).
pub(crate) fn degree_pows(degrees: &[usize], beta: f64) -> (Vec<f64>, Vec<f64>) {
    let pow = |d: usize, e: f64| if d == 0 { 1.0 } else { (d as f64).powf(e) };
    (
        degrees.iter().map(|&d| pow(d, beta)).collect(),
        degrees.iter().map(|&d| pow(d, -beta)).collect(),
    )
}

impl ChebyCFModel {
    /// Fit on the train split: normalize, interpolate the plateau filter,
    /// and (when α > 0) compute the ideal pass basis with default SVD
    /// settings. Deterministic given the seed.
    pub fn fit(dataset: &InteractionDataset, params: &HyperParams, seed: u64) -> Result<Self> {
        let svd_options = SvdOptions {
            seed,
            ..SvdOptions::default()
        };
        Self::fit_with_svd_options(dataset, params, seed, &svd_options)
    }

    /// Fit with explicit control over the SVD iteration (the verification
    /// suite uses tighter tolerances than the serving default).
    pub fn fit_with_svd_options(
        dataset: &InteractionDataset,
        params: &HyperParams,
        seed: u64,
        svd_options: &SvdOptions,
    ) -> Result<Self> {
        params.validate()?;
        let graph = NormalizedGraph::from_dataset(dataset)?;
        let filter = ChebyFilterSpec::plateau(params.phi, params.order_k)?;
        let ideal = if params.alpha > 0.0 {
            Some(truncated_svd(&graph, params.eta, svd_options)?)
        } else {
            None
        };
        let (item_deg_pos, item_deg_neg) = degree_pows(graph.item_degrees(), params.beta);
        Ok(ChebyCFModel {
            graph,
            filter,
            ideal,
            params: *params,
            item_deg_pos,
            item_deg_neg,
            train_checksum: dataset.train_checksum(),
            seed,
        })
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn graph(&self) -> &NormalizedGraph {
        &self.graph
    }

    pub fn filter(&self) -> &ChebyFilterSpec {
        &self.filter
    }

    pub fn ideal(&self) -> Option<&IdealPassBasis> {
        self.ideal.as_ref()
    }

    pub fn num_users(&self) -> usize {
        self.graph.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.graph.num_items()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Checksum of the training split the model was fitted on.
    pub fn train_checksum(&self) -> [u8; 32] {
        self.train_checksum
    }

    /// Refuse to pair this model with a dataset it was not fitted on.
    pub fn verify_dataset(&self, dataset: &InteractionDataset) -> Result<()> {
        if dataset.train_checksum() != self.train_checksum {
            return Err(Error::DatasetMismatch);
        }
        Ok(())
    }

    /// The binary train row of user `u` as a dense signal.
    pub fn user_signal(&self, u: usize) -> Vec<f64> {
        let mut r_u = vec![0.0; self.num_items()];
        let (cols, _) = self.graph.r_tilde().row(u);
        for &i in cols {
            r_u[i] = 1.0;
        }
        r_u
    }

    /// Score all items for one interaction vector.
    pub fn predict(&self, r_u: &[f64]) -> Result<Vec<f64>> {
        if r_u.len() != self.num_items() {
            return Err(Error::DimensionMismatch {
                expected: self.num_items(),
                got: r_u.len(),
            });
        }
        let damped: Vec<f64> = r_u
            .iter()
            .zip(&self.item_deg_neg)
            .map(|(&r, &d)| d * r)
            .collect();
        let mut scores = self.filter.apply(&self.graph, &damped)?;
        if let Some(ideal) = &self.ideal {
            let boost = ideal.apply_ideal(&damped)?;
            for (s, &b) in scores.iter_mut().zip(&boost) {
                *s += self.params.alpha * b;
            }
        }
        for (s, &d) in scores.iter_mut().zip(&self.item_deg_pos) {
            *s *= d;
        }
        Ok(scores)
    }

    /// Score a batch of interaction vectors (one per block column). Column c
    /// is bit-identical to `predict` on that column; batching only amortizes
    /// the sparse traversals.
    pub fn predict_block(&self, r_block: &SignalBlock) -> Result<SignalBlock> {
        if r_block.num_rows() != self.num_items() {
            return Err(Error::DimensionMismatch {
                expected: self.num_items(),
                got: r_block.num_rows(),
            });
        }
        let damped = damp_block(&self.item_deg_neg, r_block);
        let cheby_out = self.filter.apply_block(&self.graph, &damped)?;
        let ideal_out = match &self.ideal {
            Some(basis) => Some(basis.apply_ideal_block(&damped)?),
            None => None,
        };
        Ok(combine_and_boost(
            &cheby_out,
            ideal_out.as_ref(),
            self.params.alpha,
            &self.item_deg_pos,
        ))
    }

    /// Top-n unseen items for an interaction vector: items with r_u ≠ 0 are
    /// masked to −∞ and never returned; ties break by ascending item index;
    /// fewer than n unseen items returns all of them.
    pub fn recommend_topn(&self, r_u: &[f64], n: usize) -> Result<Vec<(usize, f64)>> {
        let scores = self.predict(r_u)?;
        Ok(rank_unseen(&scores, r_u, n))
    }

    /// Top-n for a training user by index.
    pub fn recommend_topn_for_user(&self, u: usize, n: usize) -> Result<Vec<(usize, f64)>> {
        if u >= self.num_users() {
            return Err(Error::DimensionMismatch {
                expected: self.num_users(),
                got: u,
            });
        }
        self.recommend_topn(&self.user_signal(u), n)
    }
}

/// Row-scale a block by d^{−β}: the damping stage shared by batch predict
/// and grid search (sharing it keeps their scores bit-identical).
pub(crate) fn damp_block(deg_neg: &[f64], r_block: &SignalBlock) -> SignalBlock {
    let b = r_block.num_cols();
    let mut damped = r_block.clone();
    for (i, &d) in deg_neg.iter().enumerate() {
        for v in &mut damped.data_mut()[i * b..(i + 1) * b] {
            *v = d * *v;
        }
    }
    damped
}

/// Final stage: scores = D^β (cheby_out + α · ideal_out). Also shared with
/// grid search, which caches `cheby_out` and `ideal_out` across α values.
pub(crate) fn combine_and_boost(
    cheby_out: &SignalBlock,
    ideal_out: Option<&SignalBlock>,
    alpha: f64,
    deg_pos: &[f64],
) -> SignalBlock {
    let b = cheby_out.num_cols();
    let mut scores = cheby_out.clone();
    if let Some(boost) = ideal_out {
        scores.scale_add(1.0, alpha, boost);
    }
    for (i, &d) in deg_pos.iter().enumerate() {
        for v in &mut scores.data_mut()[i * b..(i + 1) * b] {
            *v *= d;
        }
    }
    scores
}

/// Rank the highest-scored items whose `r_u` entry is zero. Seen items are
/// masked with a −∞ sentinel (indexing stays stable), ties break by
/// ascending index, and at most n survivors are returned.
pub fn rank_unseen(scores: &[f64], r_u: &[f64], n: usize) -> Vec<(usize, f64)> {
    debug_assert_eq!(scores.len(), r_u.len());
    let mut ranked: Vec<(usize, f64)> = scores
        .iter()
        .zip(r_u)
        .enumerate()
        .map(|(i, (&s, &seen))| (i, if seen != 0.0 { f64::NEG_INFINITY } else { s }))
        .collect();
    let cut = n.min(ranked.len());
    if cut == 0 {
        return Vec::new();
    }
    let by_score_then_index =
        |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cut < ranked.len() {
        ranked.select_nth_unstable_by(cut - 1, by_score_then_index);
        ranked.truncate(cut);
    }
    ranked.sort_by(by_score_then_index);
    ranked.retain(|&(_, s)| s != f64::NEG_INFINITY);
    ranked
}

// Model file layout: magic, version, payload, SHA-256 of everything before
// the trailing digest. All integers little-endian.
const MODEL_MAGIC: &[u8; 8] = b"CHEBYCF\0";
const MODEL_VERSION: u32 = 1;

impl ChebyCFModel {
    /// Serialize to a single self-checking binary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.train_checksum);
        buf.extend_from_slice(&self.params.phi.to_le_bytes());
        buf.extend_from_slice(&self.params.alpha.to_le_bytes());
        buf.extend_from_slice(&(self.params.eta as u64).to_le_bytes());
        buf.extend_from_slice(&self.params.beta.to_le_bytes());
        buf.extend_from_slice(&(self.params.order_k as u64).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());

        write_f64s(&mut buf, self.filter.coefficients());

        match &self.ideal {
            None => buf.push(0),
            Some(basis) => {
                buf.push(1);
                buf.extend_from_slice(&(basis.eta() as u64).to_le_bytes());
                write_f64s(&mut buf, basis.singular_values());
                write_f64s(&mut buf, &basis.to_row_major());
                let info = basis.info();
                buf.push(info.converged as u8);
                buf.extend_from_slice(&(info.iterations as u64).to_le_bytes());
                buf.push(info.rank_deficient as u8);
            }
        }

        buf.extend_from_slice(&(self.num_users() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.num_items() as u64).to_le_bytes());
        let train = self.graph.r_tilde();
        buf.extend_from_slice(&(train.nnz() as u64).to_le_bytes());
        for u in 0..self.num_users() {
            let (cols, _) = train.row(u);
            buf.extend_from_slice(&(cols.len() as u64).to_le_bytes());
            for &i in cols {
                buf.extend_from_slice(&(i as u64).to_le_bytes());
            }
        }
        write_u64s(&mut buf, self.graph.user_degrees());
        write_u64s(&mut buf, self.graph.item_degrees());

        let digest: [u8; 32] = {
            use sha2::{Digest, Sha256};
            Sha256::digest(&buf).into()
        };
        buf.extend_from_slice(&digest);

        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Load a model file, verifying magic, version and the trailing digest
    /// before trusting any field. The graph is rebuilt from the stored train
    /// pattern with the same normalization code used at fit time, so a
    /// loaded model predicts bit-identically.
    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        if buf.len() < MODEL_MAGIC.len() + 4 + 32 {
            return Err(Error::ModelCorrupt("file too short".into()));
        }
        let (payload, digest) = buf.split_at(buf.len() - 32);
        let expected: [u8; 32] = {
            use sha2::{Digest, Sha256};
            Sha256::digest(payload).into()
        };
        if digest != expected {
            return Err(Error::ModelCorrupt(
                "payload digest mismatch (truncated or altered file)".into(),
            ));
        }

        let mut r = Cursor::new(payload);
        if r.bytes(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(Error::ModelCorrupt("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::ModelVersion {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let mut train_checksum = [0u8; 32];
        train_checksum.copy_from_slice(r.bytes(32)?);
        let params = HyperParams {
            phi: r.f64()?,
            alpha: r.f64()?,
            eta: r.u64()? as usize,
            beta: r.f64()?,
            order_k: r.u64()? as usize,
        };
        let seed = r.u64()?;
        let coefficients = r.f64s()?;

        let ideal_flag = r.u8()?;
        let ideal_parts = match ideal_flag {
            0 => None,
            1 => {
                let eta = r.u64()? as usize;
                let singular_values = r.f64s()?;
                let row_major = r.f64s()?;
                let info = SvdInfo {
                    converged: r.u8()? != 0,
                    iterations: r.u64()? as usize,
                    rank_deficient: r.u8()? != 0,
                };
                Some((eta, singular_values, row_major, info))
            }
            other => {
                return Err(Error::ModelCorrupt(format!(
                    "invalid ideal-basis flag {other}"
                )))
            }
        };

        let num_users = r.u64()? as usize;
        let num_items = r.u64()? as usize;
        let nnz = r.u64()? as usize;
        let mut rows = Vec::with_capacity(num_users);
        let mut total = 0usize;
        for _ in 0..num_users {
            let len = r.u64()? as usize;
            let mut row = Vec::with_capacity(len);
            for _ in 0..len {
                let i = r.u64()? as usize;
                if i >= num_items {
                    return Err(Error::ModelCorrupt(format!(
                        "item index {i} out of range {num_items}"
                    )));
                }
                row.push(i);
            }
            total += len;
            rows.push(row);
        }
        if total != nnz {
            return Err(Error::ModelCorrupt(format!(
                "stored nnz {nnz} does not match row data {total}"
            )));
        }
        let user_degrees = r.u64s()?;
        let item_degrees = r.u64s()?;
        r.finish()?;

        let train = BinaryCsr::from_rows(num_items, rows);
        let graph = NormalizedGraph::from_train(&train)?;
        if graph.user_degrees() != user_degrees || graph.item_degrees() != item_degrees {
            return Err(Error::ModelCorrupt(
                "stored degree vectors disagree with the train pattern".into(),
            ));
        }

        if coefficients.len() != params.order_k + 1 {
            return Err(Error::ModelCorrupt(format!(
                "expected {} coefficients for order {}, found {}",
                params.order_k + 1,
                params.order_k,
                coefficients.len()
            )));
        }
        let filter = ChebyFilterSpec::from_coefficients(
            coefficients,
            TargetDescriptor::Plateau(params.phi),
        )?;

        let ideal = match ideal_parts {
            None => None,
            Some((eta, singular_values, row_major, info)) => {
                if eta != params.eta {
                    return Err(Error::ModelCorrupt(format!(
                        "basis eta {eta} disagrees with params eta {}",
                        params.eta
                    )));
                }
                Some(
                    IdealPassBasis::from_row_major(
                        num_items,
                        eta,
                        &row_major,
                        singular_values,
                        info,
                    )
                    .map_err(|_| Error::ModelCorrupt("basis size mismatch".into()))?,
                )
            }
        };

        let (item_deg_pos, item_deg_neg) = degree_pows(graph.item_degrees(), params.beta);
        Ok(ChebyCFModel {
            graph,
            filter,
            ideal,
            params,
            item_deg_pos,
            item_deg_neg,
            train_checksum,
            seed,
        })
    }
}

fn write_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_u64s(buf: &mut Vec<u8>, values: &[usize]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for &v in values {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
}

/// Bounds-checked little-endian reader over the model payload.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ModelCorrupt("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        if len > self.buf.len() / 8 {
            return Err(Error::ModelCorrupt(format!("implausible array length {len}")));
        }
        (0..len).map(|_| self.f64()).collect()
    }

    fn u64s(&mut self) -> Result<Vec<usize>> {
        let len = self.u64()? as usize;
        if len > self.buf.len() / 8 {
            return Err(Error::ModelCorrupt(format!("implausible array length {len}")));
        }
        (0..len).map(|_| self.u64().map(|v| v as usize)).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::ModelCorrupt(format!(
                "{} trailing bytes after the model payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
