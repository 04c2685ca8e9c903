//! Randomized invariant checks. Each property encodes a contract stated in
//! the module docs; shapes stay small so the whole file runs in seconds.

use std::io::Write;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chebycf::cheby::{chebyshev_t, plateau, ChebyFilterSpec};
use chebycf::model::{rank_unseen, ChebyCFModel, HyperParams};
use chebycf::sparse::{BinaryCsr, SignalBlock};
use chebycf::svd::{truncated_svd, SvdOptions};
use chebycf::{ndcg_at_n, recall_at_n, InteractionDataset, NormalizedGraph};

/// Interaction rows (num_items, per-user ascending item lists) with at least
/// one entry, small enough that dense reasoning stays cheap.
fn arb_rows() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
    (1usize..=18, 1usize..=12)
        .prop_flat_map(|(items, users)| {
            let row = prop::collection::btree_set(0..items, 0..=items.min(6));
            (
                Just(items),
                prop::collection::vec(row.prop_map(|s| s.into_iter().collect()), users),
            )
        })
        .prop_filter("need at least one interaction", |(_, rows): &(usize, Vec<Vec<usize>>)| {
            rows.iter().any(|r| !r.is_empty())
        })
}

/// A graph together with one item signal of matching length.
fn graph_and_signal() -> impl Strategy<Value = (NormalizedGraph, Vec<f64>)> {
    arb_rows().prop_flat_map(|(items, rows)| {
        let g = NormalizedGraph::from_train(&BinaryCsr::from_rows(items, rows)).unwrap();
        let x = prop::collection::vec(-1.0f64..1.0, items);
        (Just(g), x)
    })
}

/// A graph together with two item signals of matching length.
fn graph_and_two_signals() -> impl Strategy<Value = (NormalizedGraph, Vec<f64>, Vec<f64>)> {
    arb_rows().prop_flat_map(|(items, rows)| {
        let g = NormalizedGraph::from_train(&BinaryCsr::from_rows(items, rows)).unwrap();
        let x = prop::collection::vec(-1.0f64..1.0, items);
        let y = prop::collection::vec(-1.0f64..1.0, items);
        (Just(g), x, y)
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every interaction contributes one user-degree and one item-degree.
    #[test]
    fn degree_sums_match_interaction_count((items, rows) in arb_rows()) {
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let g = NormalizedGraph::from_train(&BinaryCsr::from_rows(items, rows)).unwrap();
        prop_assert_eq!(g.user_degrees().iter().sum::<usize>(), nnz);
        prop_assert_eq!(g.item_degrees().iter().sum::<usize>(), nnz);
    }

    /// The Gram operator is self-adjoint: applying it on either side of an
    /// inner product gives the same value.
    #[test]
    fn gram_operator_is_self_adjoint((g, x, y) in graph_and_two_signals()) {
        let gx = g.apply_gram(&x).unwrap();
        let gy = g.apply_gram(&y).unwrap();
        let lhs: f64 = gx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gy).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10, "asymmetry {}", (lhs - rhs).abs());
    }

    /// Rayleigh quotients of the item Laplacian x -> x - Gram(x) stay inside
    /// the unit interval: the spectrum lives in [0, 1].
    #[test]
    fn laplacian_rayleigh_quotient_in_unit_interval((g, x) in graph_and_signal()) {
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        prop_assume!(norm2 > 1e-6);
        let gx = g.apply_gram(&x).unwrap();
        let q: f64 = x
            .iter()
            .zip(&gx)
            .map(|(xi, gi)| xi * (xi - gi))
            .sum::<f64>()
            / norm2;
        prop_assert!((-1e-10..=1.0 + 1e-10).contains(&q), "quotient {q}");
    }

    /// The rescaled Laplacian is literally x - 2 Gram(x): the same
    /// arithmetic, so equality is bit-exact (the add-back form would append
    /// an extra rounding step and fail on roughly 3% of components).
    #[test]
    fn rescaled_laplacian_is_the_gram_shift((g, x) in graph_and_signal()) {
        let lx = g.apply_rescaled_laplacian(&x).unwrap();
        let px = g.apply_gram(&x).unwrap();
        for i in 0..x.len() {
            prop_assert_eq!(lx[i], x[i] - 2.0 * px[i]);
        }
    }

    /// Block application is column-by-column identical to the vector path.
    #[test]
    fn block_path_is_bitwise_the_vector_path((g, x, y) in graph_and_two_signals()) {
        let block = SignalBlock::from_columns(&[x.clone(), y.clone()]);
        let gb = g.apply_gram_block(&block).unwrap();
        let lb = g.apply_rescaled_laplacian_block(&block).unwrap();
        prop_assert_eq!(gb.column(0), g.apply_gram(&x).unwrap());
        prop_assert_eq!(gb.column(1), g.apply_gram(&y).unwrap());
        prop_assert_eq!(lb.column(0), g.apply_rescaled_laplacian(&x).unwrap());
        prop_assert_eq!(lb.column(1), g.apply_rescaled_laplacian(&y).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Recurrence/trig equivalence: T_k(cos t) = cos(k t).
    #[test]
    fn chebyshev_recurrence_matches_cosine(k in 0usize..=32, t in 0.0f64..std::f64::consts::PI) {
        let lhs = chebyshev_t(k, t.cos());
        let rhs = (k as f64 * t).cos();
        prop_assert!((lhs - rhs).abs() < 1e-10, "k={k} t={t} diff={}", (lhs - rhs).abs());
    }

    /// The plateau target hits its anchor values exactly for every exponent:
    /// full weight at the bottom of the spectrum, half at the middle, none
    /// at the top.
    #[test]
    fn plateau_anchor_values_are_exact(phi in 0.5f64..20.0) {
        prop_assert_eq!(plateau(-1.0, phi).unwrap(), 1.0);
        prop_assert_eq!(plateau(0.0, phi).unwrap(), 0.5);
        prop_assert_eq!(plateau(1.0, phi).unwrap(), 0.0);
    }

    /// The plateau transfer is non-increasing in the rescaled frequency.
    #[test]
    fn plateau_is_non_increasing(phi in 0.5f64..20.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(plateau(lo, phi).unwrap() >= plateau(hi, phi).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Interpolation exactness: a polynomial target of degree at most K is
    /// reproduced by its own interpolant everywhere, not just at the nodes.
    #[test]
    fn interpolation_reproduces_low_degree_polynomials(
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..=9),
        order in 8usize..=12,
        points in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let horner = move |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
        let spec = ChebyFilterSpec::from_target("poly", &horner, order);
        for x in points {
            let diff = (spec.transfer(x) - horner(x)).abs();
            prop_assert!(diff < 1e-9, "x={x} diff={diff}");
        }
    }

    /// Quadrupling the order never worsens the worst-case plateau
    /// approximation error (sampled on a fixed grid).
    #[test]
    fn plateau_error_shrinks_with_order(phi in 1.0f64..12.0) {
        let worst = |order: usize| -> f64 {
            let spec = ChebyFilterSpec::plateau(phi, order).unwrap();
            (0..=400)
                .map(|i| -1.0 + 2.0 * i as f64 / 400.0)
                .map(|x| (spec.transfer(x) - plateau(x, phi).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        prop_assert!(worst(32) <= worst(4) + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Polynomial filtering is a linear operator on signals.
    #[test]
    fn filter_application_is_linear(
        (g, x, y) in graph_and_two_signals(),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let spec = ChebyFilterSpec::plateau(4.0, 8).unwrap();
        let combined: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = spec.apply(&g, &combined).unwrap();
        let fx = spec.apply(&g, &x).unwrap();
        let fy = spec.apply(&g, &y).unwrap();
        let rhs: Vec<f64> = fx.iter().zip(&fy).map(|(fxi, fyi)| a * fxi + b * fyi).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
    }

    /// The ideal-pass basis is orthonormal with descending singular values
    /// in [0, 1], and projection onto it is idempotent and self-adjoint.
    #[test]
    fn ideal_projection_algebra(
        (g, x, y) in graph_and_two_signals(),
        eta in 1usize..=4,
    ) {
        let eta = eta.min(g.num_items());
        let basis = truncated_svd(&g, eta, &SvdOptions::default()).unwrap();

        for j in 0..eta {
            for k in j..eta {
                let dot: f64 = basis
                    .column(j)
                    .iter()
                    .zip(basis.column(k))
                    .map(|(a, b)| a * b)
                    .sum();
                let want = if j == k { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-8, "V'V[{j},{k}] = {dot}");
            }
        }
        let sigmas = basis.singular_values();
        for j in 0..eta {
            prop_assert!((0.0..=1.0 + 1e-8).contains(&sigmas[j]), "sigma {}", sigmas[j]);
            if j > 0 {
                prop_assert!(sigmas[j - 1] >= sigmas[j]);
            }
        }

        let px = basis.apply_ideal(&x).unwrap();
        let ppx = basis.apply_ideal(&px).unwrap();
        prop_assert!(max_abs_diff(&ppx, &px) < 1e-9, "not idempotent");
        let py = basis.apply_ideal(&y).unwrap();
        let lhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&py).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9, "not self-adjoint");
    }
}

/// A dataset (train only) plus hyperparameters for model-level properties.
/// Eta is capped by the item count so every combination is fittable.
fn arb_model_instance() -> impl Strategy<Value = (InteractionDataset, HyperParams)> {
    (
        arb_rows(),
        prop::sample::select(vec![1.0f64, 2.0, 4.0]),
        prop::sample::select(vec![0.0f64, 0.3]),
        prop::sample::select(vec![0.0f64, 0.4]),
    )
        .prop_map(|((items, rows), phi, alpha, beta)| {
            let users = rows.len();
            let train: Vec<(usize, usize)> = rows
                .iter()
                .enumerate()
                .flat_map(|(u, r)| r.iter().map(move |&i| (u, i)))
                .collect();
            let ds = InteractionDataset::from_entries(users, items, &train, &[]).unwrap();
            let params = HyperParams {
                phi,
                alpha,
                eta: items.min(2),
                beta,
                order_k: 4,
            };
            (ds, params)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Scoring is linear in the input signal for a fixed model.
    #[test]
    fn predict_is_linear_in_the_user_signal(
        (ds, params) in arb_model_instance(),
        seeds in prop::collection::vec(-1.0f64..1.0, 36),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let model = ChebyCFModel::fit(&ds, &params, 42).unwrap();
        let n = ds.num_items();
        let x = &seeds[..n.min(18)];
        let y = &seeds[18..18 + n.min(18)];
        let x: Vec<f64> = x.iter().cycle().take(n).copied().collect();
        let y: Vec<f64> = y.iter().cycle().take(n).copied().collect();
        let combined: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = model.predict(&combined).unwrap();
        let fx = model.predict(&x).unwrap();
        let fy = model.predict(&y).unwrap();
        let rhs: Vec<f64> = fx.iter().zip(&fy).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
    }

    /// The ideal-pass contribution is exactly additive: scoring with blend
    /// weight alpha differs from alpha = 0 by alpha times the degree-wrapped
    /// projection of the signal.
    #[test]
    fn ideal_branch_is_additive_in_alpha(
        (ds, base) in arb_model_instance(),
        u in 0usize..12,
    ) {
        let params = HyperParams { alpha: 0.3, ..base };
        let plain = HyperParams { alpha: 0.0, ..base };
        let with_ideal = ChebyCFModel::fit(&ds, &params, 42).unwrap();
        let without = ChebyCFModel::fit(&ds, &plain, 42).unwrap();
        let u = u % ds.num_users();
        let r_u = with_ideal.user_signal(u);

        let diff: Vec<f64> = with_ideal
            .predict(&r_u)
            .unwrap()
            .iter()
            .zip(without.predict(&r_u).unwrap())
            .map(|(hi, lo)| hi - lo)
            .collect();

        let pow = |d: usize, e: f64| if d == 0 { 1.0 } else { (d as f64).powf(e) };
        let degrees = with_ideal.graph().item_degrees();
        let damped: Vec<f64> = r_u
            .iter()
            .enumerate()
            .map(|(i, v)| v * pow(degrees[i], -params.beta))
            .collect();
        let projected = with_ideal.ideal().unwrap().apply_ideal(&damped).unwrap();
        let want: Vec<f64> = projected
            .iter()
            .enumerate()
            .map(|(i, p)| params.alpha * p * pow(degrees[i], params.beta))
            .collect();
        prop_assert!(max_abs_diff(&diff, &want) < 1e-10);
    }
}

/// An ordered recommendation list (unique items), a sorted non-empty
/// relevant set, and a cutoff.
fn arb_ranking() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize)> {
    let universe: Vec<usize> = (0..40).collect();
    (
        prop::sample::subsequence(universe.clone(), 0..=20).prop_shuffle(),
        prop::collection::btree_set(0usize..40, 1..=10),
        1usize..=25,
    )
        .prop_map(|(rec, rel, n)| (rec, rel.into_iter().collect(), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Both metrics land in [0, 1] and ignore the order of items ranked
    /// below the cutoff.
    #[test]
    fn metrics_bounded_and_blind_below_the_cutoff(
        (mut rec, rel, n) in arb_ranking(),
        seed in any::<u64>(),
    ) {
        let recall = recall_at_n(&rec, &rel, n);
        let ndcg = ndcg_at_n(&rec, &rel, n);
        prop_assert!((0.0..=1.0).contains(&recall));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg));

        if rec.len() > n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rec[n..].shuffle(&mut rng);
        }
        prop_assert_eq!(recall_at_n(&rec, &rel, n), recall);
        prop_assert_eq!(ndcg_at_n(&rec, &rel, n), ndcg);
    }

    /// Perfect normalized gain happens exactly when every position that
    /// could hold a relevant item does hold one.
    #[test]
    fn ndcg_is_one_exactly_for_a_relevant_prefix((rec, rel, n) in arb_ranking()) {
        let ndcg = ndcg_at_n(&rec, &rel, n);
        let prefix = n.min(rel.len()).min(rec.len());
        let prefix_all_relevant =
            prefix == n.min(rel.len()) && rec[..prefix].iter().all(|i| rel.contains(i));
        prop_assert_eq!(ndcg >= 1.0 - 1e-12, prefix_all_relevant, "ndcg = {}", ndcg);
    }

    /// Looking further down the list never loses a hit.
    #[test]
    fn recall_is_monotone_in_the_cutoff((rec, rel, n) in arb_ranking(), extra in 0usize..10) {
        prop_assert!(recall_at_n(&rec, &rel, n) <= recall_at_n(&rec, &rel, n + extra));
    }

    /// Top-N selection over unseen items agrees with a full sort: seen items
    /// never appear, order is score-descending with ascending index as the
    /// tie rule, and the list stops at the unseen count.
    #[test]
    fn rank_unseen_matches_a_full_sort(
        scores in prop::collection::vec(-5.0f64..5.0, 1..=30),
        mask_bits in prop::collection::vec(0u8..=1, 30),
        k in 1usize..=12,
    ) {
        let n = scores.len();
        let r_u: Vec<f64> = mask_bits[..n].iter().map(|&b| b as f64).collect();
        let got = rank_unseen(&scores, &r_u, k);

        let mut unseen: Vec<usize> = (0..n).filter(|&i| r_u[i] == 0.0).collect();
        unseen.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let want: Vec<(usize, f64)> =
            unseen.into_iter().take(k).map(|i| (i, scores[i])).collect();
        prop_assert_eq!(got, want);
    }
}

/// Per-user disjoint (train, test) item lists plus a remap of the mentioned
/// item ids to dense ranks, mirroring what the loader does.
type SplitRows = (Vec<Vec<usize>>, Vec<Vec<usize>>);

fn arb_split_rows() -> impl Strategy<Value = SplitRows> {
    let user = prop::collection::btree_map(0usize..30, any::<bool>(), 0..=8);
    prop::collection::vec(user, 1..=8).prop_map(|users| {
        let mut mentioned: Vec<usize> = users
            .iter()
            .flat_map(|m| m.keys().copied())
            .collect();
        mentioned.sort_unstable();
        mentioned.dedup();
        let rank = |item: usize| mentioned.binary_search(&item).unwrap();
        let pick = |m: &std::collections::BTreeMap<usize, bool>, keep: bool| -> Vec<usize> {
            m.iter()
                .filter(|&(_, &v)| v == keep)
                .map(|(&i, _)| rank(i))
                .collect()
        };
        let train: Vec<Vec<usize>> = users.iter().map(|m| pick(m, true)).collect();
        let test: Vec<Vec<usize>> = users.iter().map(|m| pick(m, false)).collect();
        (train, test)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Writing a split in the adjacency-list text format and loading it back
    /// reproduces the in-memory dataset, whatever whitespace separates the
    /// tokens.
    #[test]
    fn text_format_round_trips(
        (train_rows, test_rows) in arb_split_rows(),
        sep_choice in prop::collection::vec(0usize..3, 8),
    ) {
        let num_users = train_rows.len();
        let num_items = train_rows
            .iter()
            .chain(&test_rows)
            .flat_map(|r| r.iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        let to_pairs = |rows: &[Vec<usize>]| -> Vec<(usize, usize)> {
            rows.iter()
                .enumerate()
                .flat_map(|(u, r)| r.iter().map(move |&i| (u, i)))
                .collect()
        };
        let want = InteractionDataset::from_entries(
            num_users,
            num_items,
            &to_pairs(&train_rows),
            &to_pairs(&test_rows),
        )
        .unwrap();

        let seps = [" ", "\t", "   "];
        let render = |rows: &[Vec<usize>], keep_empty: bool| -> String {
            let mut text = String::new();
            for (u, row) in rows.iter().enumerate() {
                if row.is_empty() && !keep_empty {
                    continue;
                }
                let sep = seps[sep_choice[u % sep_choice.len()]];
                text.push_str(&u.to_string());
                for i in row {
                    text.push_str(sep);
                    text.push_str(&i.to_string());
                }
                text.push('\n');
            }
            text
        };

        // Every user appears in the train file (possibly bare), so the
        // loader allocates the same user universe as from_entries.
        let dir = tempfile::tempdir().unwrap();
        let train_path = dir.path().join("train.txt");
        let test_path = dir.path().join("test.txt");
        std::fs::File::create(&train_path)
            .unwrap()
            .write_all(render(&train_rows, true).as_bytes())
            .unwrap();
        std::fs::File::create(&test_path)
            .unwrap()
            .write_all(render(&test_rows, false).as_bytes())
            .unwrap();

        let loaded = InteractionDataset::load(&train_path, &test_path).unwrap();
        prop_assert_eq!(loaded.num_users(), want.num_users());
        prop_assert_eq!(loaded.num_items(), want.num_items());
        prop_assert_eq!(loaded.train(), want.train());
        prop_assert_eq!(loaded.test(), want.test());
        prop_assert_eq!(loaded.train_checksum(), want.train_checksum());
    }
}
