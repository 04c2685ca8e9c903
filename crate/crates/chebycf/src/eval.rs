//! Held-out evaluation: Recall@N, NDCG@N, per-user inference timing, and
//! grid search over the tuning ranges.
//!
//! Only users with at least one test interaction are evaluated; for each,
//! the model scores all items from the user's train row, train items are
//! masked, and the ranked head is compared against the test items.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::cheby::ChebyFilterSpec;
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::graph::NormalizedGraph;
use crate::model::{self, rank_unseen, ChebyCFModel, HyperParams};
use crate::sparse::SignalBlock;
use crate::svd::{truncated_svd, IdealPassBasis, SvdOptions};

/// Users scored per batched prediction. Shared by [`evaluate`] and
/// [`grid_search`] so both rank bit-identical score vectors.
const BLOCK_WIDTH: usize = 128;

/// Fraction of test items recovered in the top n: |top-n ∩ relevant| / |relevant|.
/// `relevant` must be sorted ascending and non-empty.
pub fn recall_at_n(recommended: &[usize], relevant: &[usize], n: usize) -> f64 {
    debug_assert!(!relevant.is_empty());
    let hits = recommended
        .iter()
        .take(n)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG: DCG discounts a hit at 1-based position p by
/// 1/log₂(p+1); the ideal DCG packs min(n, |relevant|) hits at the top.
/// `relevant` must be sorted ascending and non-empty.
pub fn ndcg_at_n(recommended: &[usize], relevant: &[usize], n: usize) -> f64 {
    debug_assert!(!relevant.is_empty());
    let discount = |p0: usize| 1.0 / ((p0 + 2) as f64).log2();
    let dcg: f64 = recommended
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(p0, _)| discount(p0))
        .sum();
    let idcg: f64 = (0..n.min(relevant.len())).map(discount).sum();
    dcg / idcg
}

/// Metrics of one configuration over the evaluated users.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub params: HyperParams,
    /// N → mean Recall@N.
    pub recall_at: BTreeMap<usize, f64>,
    /// N → mean NDCG@N.
    pub ndcg_at: BTreeMap<usize, f64>,
    /// Mean wall-clock seconds per user for scoring plus top-N selection
    /// (batch time divided by batch size; excludes loading and fitting).
    pub per_user_time: f64,
    pub num_evaluated_users: usize,
}

/// The evaluated users, their binary train signals chunked into score
/// blocks, and their test items. Built once and reused across a grid.
struct EvalSet {
    /// User indices with ≥ 1 test item, ascending.
    users: Vec<usize>,
    /// Train signals of those users, `BLOCK_WIDTH` columns per chunk.
    chunks: Vec<SignalBlock>,
    /// Test items per evaluated user, sorted ascending.
    relevant: Vec<Vec<usize>>,
}

fn build_eval_set(dataset: &InteractionDataset) -> Result<EvalSet> {
    let users: Vec<usize> =
        (0..dataset.num_users()).filter(|&u| !dataset.test().row(u).is_empty()).collect();
    if users.is_empty() {
        return Err(Error::InvalidParameter(
            "no users have test interactions; nothing to evaluate".into(),
        ));
    }
    let relevant: Vec<Vec<usize>> = users.iter().map(|&u| dataset.test().row(u).to_vec()).collect();
    let chunks = users
        .chunks(BLOCK_WIDTH)
        .map(|chunk| {
            let cols: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&u| {
                    let mut r_u = vec![0.0; dataset.num_items()];
                    for &i in dataset.train().row(u) {
                        r_u[i] = 1.0;
                    }
                    r_u
                })
                .collect();
            SignalBlock::from_columns(&cols)
        })
        .collect();
    Ok(EvalSet { users, chunks, relevant })
}

/// Rank every column of every scored chunk and fold the metrics in user
/// order. `score_chunk` maps a chunk of train signals to a score block;
/// only that call and the ranking are timed.
fn fold_metrics<F>(
    eval: &EvalSet,
    ns: &[usize],
    mut score_chunk: F,
) -> Result<(BTreeMap<usize, f64>, BTreeMap<usize, f64>, f64)>
where
    F: FnMut(usize, &SignalBlock) -> Result<SignalBlock>,
{
    let n_max = *ns.iter().max().expect("ns checked non-empty");
    let mut recall_sums: BTreeMap<usize, f64> = ns.iter().map(|&n| (n, 0.0)).collect();
    let mut ndcg_sums = recall_sums.clone();
    let mut elapsed = Duration::ZERO;
    let mut user_pos = 0usize;
    for (ci, chunk) in eval.chunks.iter().enumerate() {
        let start = Instant::now();
        let scores = score_chunk(ci, chunk)?;
        let ranked: Vec<Vec<usize>> = (0..chunk.num_cols())
            .map(|c| {
                rank_unseen(&scores.column(c), &chunk.column(c), n_max)
                    .into_iter()
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        elapsed += start.elapsed();
        for top in &ranked {
            let relevant = &eval.relevant[user_pos];
            for &n in ns {
                *recall_sums.get_mut(&n).unwrap() += recall_at_n(top, relevant, n);
                *ndcg_sums.get_mut(&n).unwrap() += ndcg_at_n(top, relevant, n);
            }
            user_pos += 1;
        }
    }
    debug_assert_eq!(user_pos, eval.users.len());
    let count = eval.users.len() as f64;
    for v in recall_sums.values_mut() {
        *v /= count;
    }
    for v in ndcg_sums.values_mut() {
        *v /= count;
    }
    Ok((recall_sums, ndcg_sums, elapsed.as_secs_f64() / count))
}

/// Evaluate a fitted model on the held-out split at each requested N.
///
/// Refuses datasets whose train split differs from the one the model was
/// fitted on. Deterministic: no randomness on this path, users fold in
/// ascending order.
pub fn evaluate(
    model: &ChebyCFModel,
    dataset: &InteractionDataset,
    n_values: &[usize],
) -> Result<MetricsReport> {
    model.verify_dataset(dataset)?;
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::InvalidParameter(
            "n_values must be non-empty and positive".into(),
        ));
    }
    let eval = build_eval_set(dataset)?;
    let (recall_at, ndcg_at, per_user_time) =
        fold_metrics(&eval, n_values, |_, chunk| model.predict_block(chunk))?;
    Ok(MetricsReport {
        params: *model.params(),
        recall_at,
        ndcg_at,
        per_user_time,
        num_evaluated_users: eval.users.len(),
    })
}

/// Tuning ranges: the cross product of the four parameter lists at a fixed
/// filter order.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub phis: Vec<f64>,
    pub alphas: Vec<f64>,
    pub etas: Vec<usize>,
    pub betas: Vec<f64>,
    pub order_k: usize,
}

impl Default for HyperGrid {
    /// The standard ranges: φ from 1 to 20 in steps of 0.5, α and β from
    /// 0 to 0.5 in steps of 0.1, η in {128, 256, 512, 1024, 2048}, K = 8.
    fn default() -> Self {
        HyperGrid {
            phis: (2..=40).map(|i| i as f64 / 2.0).collect(),
            alphas: (0..=5).map(|i| i as f64 / 10.0).collect(),
            etas: vec![128, 256, 512, 1024, 2048],
            betas: (0..=5).map(|i| i as f64 / 10.0).collect(),
            order_k: 8,
        }
    }
}

impl HyperGrid {
    /// Number of emitted rows (α = 0 rows still enumerate every η).
    pub fn combinations(&self) -> usize {
        self.phis.len() * self.alphas.len() * self.etas.len() * self.betas.len()
    }
}

/// Exhaustive sweep of the grid against the test split.
///
/// Shares work across combinations without changing any result: the graph
/// is normalized once, each η basis is computed once, each (β, φ) filter
/// output and each (β, η) projection once; per-combination scores are then
/// assembled exactly as `predict_block` would, so every row is bit-for-bit
/// what a freshly fitted model yields. Memory holds one η basis plus one
/// filter output and one projection per evaluated-user chunk at a time,
/// times the number of η values.
///
/// Selection: highest Recall@`n_select`, ties by NDCG@20, remaining ties
/// by lexicographically smallest (φ, α, η, β). Returns the winner and one
/// report per combination in (φ, α, η, β) iteration order.
///
/// Note on timing: rows record the incremental score-assembly plus ranking
/// time under reuse, not cold-start inference; use [`evaluate`] on a
/// fitted model for serving-time measurements.
pub fn grid_search(
    dataset: &InteractionDataset,
    grid: &HyperGrid,
    n_select: usize,
    seed: u64,
) -> Result<(HyperParams, Vec<MetricsReport>)> {
    if grid.phis.is_empty() || grid.alphas.is_empty() || grid.etas.is_empty()
        || grid.betas.is_empty()
    {
        return Err(Error::InvalidParameter("empty tuning grid".into()));
    }
    if n_select == 0 {
        return Err(Error::InvalidParameter("n_select must be positive".into()));
    }
    let mut ns: Vec<usize> = vec![10, 20, n_select];
    ns.sort_unstable();
    ns.dedup();

    let graph = NormalizedGraph::from_dataset(dataset)?;
    let eval = build_eval_set(dataset)?;

    // One basis per distinct η, each computed exactly once; skipped when no
    // α > 0 ever consults it.
    let needs_ideal = grid.alphas.iter().any(|&a| a > 0.0);
    let mut bases: BTreeMap<usize, IdealPassBasis> = BTreeMap::new();
    if needs_ideal {
        let options = SvdOptions { seed, ..SvdOptions::default() };
        for &eta in &grid.etas {
            if !bases.contains_key(&eta) {
                bases.insert(eta, truncated_svd(&graph, eta, &options)?);
            }
        }
    }

    // keyed by (φ index, α index, η index, β index) for deterministic order
    let mut rows: BTreeMap<(usize, usize, usize, usize), MetricsReport> = BTreeMap::new();
    let num_users = eval.users.len();

    for (bi, &beta) in grid.betas.iter().enumerate() {
        let (deg_pos, deg_neg) = model::degree_pows(graph.item_degrees(), beta);
        let damped: Vec<SignalBlock> =
            eval.chunks.iter().map(|c| model::damp_block(&deg_neg, c)).collect();
        let projections: BTreeMap<usize, Vec<SignalBlock>> = bases
            .iter()
            .map(|(&eta, basis)| {
                let blocks = damped
                    .iter()
                    .map(|d| basis.apply_ideal_block(d))
                    .collect::<Result<Vec<_>>>()?;
                Ok((eta, blocks))
            })
            .collect::<Result<_>>()?;

        for (pi, &phi) in grid.phis.iter().enumerate() {
            let filter = ChebyFilterSpec::plateau(phi, grid.order_k)?;
            let cheby_out: Vec<SignalBlock> = damped
                .iter()
                .map(|d| filter.apply_block(&graph, d))
                .collect::<Result<Vec<_>>>()?;

            for (ai, &alpha) in grid.alphas.iter().enumerate() {
                let score = |ideal: Option<&Vec<SignalBlock>>| {
                    fold_metrics(&eval, &ns, |ci, _| {
                        Ok(model::combine_and_boost(
                            &cheby_out[ci],
                            ideal.map(|p| &p[ci]),
                            alpha,
                            &deg_pos,
                        ))
                    })
                };
                if alpha > 0.0 {
                    for (ei, &eta) in grid.etas.iter().enumerate() {
                        let (recall_at, ndcg_at, per_user_time) =
                            score(Some(&projections[&eta]))?;
                        let params =
                            HyperParams { phi, alpha, eta, beta, order_k: grid.order_k };
                        params.validate()?;
                        rows.insert((pi, ai, ei, bi), MetricsReport {
                            params,
                            recall_at,
                            ndcg_at,
                            per_user_time,
                            num_evaluated_users: num_users,
                        });
                    }
                } else {
                    // α = 0 never touches the basis: evaluate once, emit the
                    // same metrics for every η.
                    let (recall_at, ndcg_at, per_user_time) = score(None)?;
                    for (ei, &eta) in grid.etas.iter().enumerate() {
                        let params =
                            HyperParams { phi, alpha, eta, beta, order_k: grid.order_k };
                        params.validate()?;
                        rows.insert((pi, ai, ei, bi), MetricsReport {
                            params,
                            recall_at: recall_at.clone(),
                            ndcg_at: ndcg_at.clone(),
                            per_user_time,
                            num_evaluated_users: num_users,
                        });
                    }
                }
            }
        }
    }

    let reports: Vec<MetricsReport> = rows.into_values().collect();
    let best = reports
        .iter()
        .max_by(|a, b| {
            a.recall_at[&n_select]
                .total_cmp(&b.recall_at[&n_select])
                .then(a.ndcg_at[&20].total_cmp(&b.ndcg_at[&20]))
                // reversed so the lexicographically smallest params win ties
                .then(params_lex(&b.params, &a.params))
        })
        .expect("grid checked non-empty")
        .params;
    Ok((best, reports))
}

fn params_lex(a: &HyperParams, b: &HyperParams) -> std::cmp::Ordering {
    a.phi
        .total_cmp(&b.phi)
        .then(a.alpha.total_cmp(&b.alpha))
        .then(a.eta.cmp(&b.eta))
        .then(a.beta.total_cmp(&b.beta))
}

/// Header of the metrics CSV emitted by the command-line tools.
pub const METRICS_CSV_HEADER: &str =
    "dataset,phi,alpha,eta,beta,K,recall@10,recall@20,ndcg@10,ndcg@20,mean_user_time_s";

/// One CSV row. The report must carry metrics at N = 10 and 20.
pub fn metrics_csv_row(dataset: &str, report: &MetricsReport) -> String {
    let get = |m: &BTreeMap<usize, f64>, n: usize| m.get(&n).copied().unwrap_or(f64::NAN);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        dataset,
        report.params.phi,
        report.params.alpha,
        report.params.eta,
        report.params.beta,
        report.params.order_k,
        get(&report.recall_at, 10),
        get(&report.recall_at, 20),
        get(&report.ndcg_at, 10),
        get(&report.ndcg_at, 20),
        report.per_user_time,
    )
}

/// Full grid output: the header, one row per combination, and a final row
/// labelled `BEST` repeating the winning combination.
pub fn grid_csv(dataset: &str, reports: &[MetricsReport], best: &HyperParams) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for report in reports {
        out.push_str(&metrics_csv_row(dataset, report));
        out.push('\n');
    }
    if let Some(winner) = reports.iter().find(|r| r.params == *best) {
        out.push_str(&metrics_csv_row("BEST", winner));
        out.push('\n');
    }
    out
}
