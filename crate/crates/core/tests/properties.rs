use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use specdistill::corpus::{ParallelCorpus, TokenId, Vocabulary};
use specdistill::distill::{removal_count, select_removals};
use specdistill::evaluator::{Evaluator, EvaluatorTask, Scorer};
use specdistill::metrics::{distinct_n, oracle_perplexity_curve, spearman};
use specdistill::nn::{ops, sgd_step, Param};
use specdistill::policy::{self, BaselineEstimator, PolicyConfig, PolicySelector};
use specdistill::seed;
use specdistill::seq2seq::{perplexity, sampling, DecodeStrategy, GenerationModel, ModelConfig, Responder};

fn tokens(max: u32) -> impl Strategy<Value = Vec<TokenId>> {
    prop::collection::vec(4u32..max, 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn removal_matches_exact_ceiling(percent in 0u64..100, size in 0usize..5000) {
        let expect = (percent as usize * size).div_ceil(100);
        prop_assert_eq!(removal_count(percent as f64 / 100.0, size), expect);
    }

    #[test]
    fn removals_partition_and_respect_order(
        rel in prop::collection::vec(0u8..6, 1..80),
        percent in 0u64..100,
    ) {
        // Few distinct relevance values so ties are common.
        let scores: Vec<(u64, f64)> = rel.iter().enumerate().map(|(i, &r)| (i as u64 * 3 + 1, r as f64 / 5.0)).collect();
        let n = removal_count(percent as f64 / 100.0, scores.len());
        let removed: BTreeSet<u64> = select_removals(&scores, n).into_iter().collect();
        prop_assert_eq!(removed.len(), n);
        for &(id, r) in &scores {
            if removed.contains(&id) {
                continue;
            }
            for &(rid, rr) in scores.iter().filter(|s| removed.contains(&s.0)) {
                prop_assert!(rr > r || (rr == r && rid > id), "kept {id} ({r}) outranks removed {rid} ({rr})");
            }
        }
    }

    #[test]
    fn policy_distribution_is_normalized_and_shift_invariant(
        x in tokens(12),
        pool in 1usize..6,
        init in 0u64..1000,
        offset in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let mut p = PolicySelector::new(12, pool, 3, 4, init).unwrap();
        let before = p.distribution(&x);
        prop_assert!((before.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(before.iter().all(|&q| q >= 0.0));
        let choice = policy::select_model(&p, &x);
        prop_assert_eq!(choice, ops::argmax(&before));
        for j in 0..pool {
            for k in 0..4 {
                p.model_vectors.value[j * 4 + k] += offset[k];
            }
        }
        for (a, b) in before.iter().zip(p.distribution(&x)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn top_k_draws_stay_in_the_top_k(
        logits in prop::collection::vec(-5.0f64..5.0, 2..12),
        k in 1usize..6,
        s in 0u64..1000,
    ) {
        let lp = ops::log_softmax(&logits);
        let allowed = sampling::top_k_indices(&lp, k);
        prop_assert_eq!(allowed.len(), k.min(lp.len()));
        let mut rng = seed::rng(s);
        for _ in 0..20 {
            prop_assert!(allowed.contains(&sampling::sample_top_k(&lp, k, &mut rng)));
        }
    }

    #[test]
    fn sgd_update_norm_is_bounded_by_clip(
        grad in prop::collection::vec(-50.0f64..50.0, 1..10),
        lr in 0.01f64..2.0,
        clip in 0.1f64..10.0,
    ) {
        let mut p = Param::from_values("p", &[grad.len()], vec![0.0; grad.len()]);
        p.grad = grad.clone();
        sgd_step(&mut [&mut p], lr, clip).unwrap();
        let applied = ops::norm(&p.value);
        prop_assert!(applied <= lr * clip * (1.0 + 1e-12));
        prop_assert!((applied - lr * ops::norm(&grad).min(clip)).abs() < 1e-9 * (1.0 + applied));
    }

    #[test]
    fn distinct_n_is_a_fraction(resp in prop::collection::vec(prop::collection::vec(4u32..9, 0..6), 1..20), n in 1usize..3) {
        if let Ok(d) = distinct_n(&resp, n) {
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn spearman_is_bounded_and_rank_based(ys in prop::collection::vec(-10.0f64..10.0, 3..12)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let r = spearman(&xs, &ys);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        let warped: Vec<f64> = ys.iter().map(|y| y.powi(3) + 4.0 * y).collect();
        prop_assert!((spearman(&xs, &warped) - r).abs() < 1e-12);
    }

    #[test]
    fn evaluator_scores_are_probabilities(src in tokens(15), resp in prop::collection::vec(4u32..15, 0..6), init in 0u64..100) {
        let ev = Evaluator::new(EvaluatorTask::HumanVsMachine, 15, 4, 5, init);
        let s = ev.score(&src, &resp);
        prop_assert!(s > 0.0 && s < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_perplexity_never_exceeds_any_member(seeds in prop::collection::vec(0u64..10_000, 1..5)) {
        let vocab = Arc::new(Vocabulary::from_tokens(["a", "b", "c", "d", "e"]));
        let pairs = [("a b", "c"), ("d", "e a"), ("c c", "b"), ("e", "d d")];
        let corpus = ParallelCorpus::from_pairs(Arc::clone(&vocab), &pairs, 10).unwrap();
        let models: Vec<GenerationModel> = seeds
            .iter()
            .map(|&s| GenerationModel::new(Arc::clone(&vocab), ModelConfig { embed_dim: 3, hidden_dim: 4, max_decode_len: 5 }, s).unwrap())
            .collect();
        let refs: Vec<&GenerationModel> = models.iter().collect();
        let curve = oracle_perplexity_curve(&refs, &corpus);
        prop_assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        for (k, m) in models.iter().enumerate() {
            prop_assert!(curve[curve.len() - 1] <= perplexity(m, &corpus) * (1.0 + 1e-12), "model {k}");
        }
        prop_assert!((curve[0] - perplexity(&models[0], &corpus)).abs() < 1e-9 * curve[0]);
    }
}

struct Fixed(Vec<TokenId>);

impl Responder for Fixed {
    fn respond(&self, _: &[TokenId], _: DecodeStrategy, _: &mut seed::Rng) -> Vec<TokenId> {
        self.0.clone()
    }
}

fn mean_distribution(p: &PolicySelector, inputs: &[Vec<TokenId>]) -> Vec<f64> {
    let mut acc = vec![0.0; p.pool_size()];
    for x in inputs {
        for (a, q) in acc.iter_mut().zip(p.distribution(x)) {
            *a += q / inputs.len() as f64;
        }
    }
    acc
}

#[test]
fn constant_reward_leaves_selection_nearly_unchanged() {
    let pool: Vec<Fixed> = (0..3).map(|i| Fixed(vec![10 + i])).collect();
    let scorer = |_: &[TokenId], _: &[TokenId]| 0.6;
    let mut rng = seed::rng(77);
    let mk = |rng: &mut seed::Rng| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(4..30)).collect::<Vec<TokenId>>();
    let train: Vec<Vec<TokenId>> = (0..200).map(|_| mk(&mut rng)).collect();
    let held: Vec<Vec<TokenId>> = (0..200).map(|_| mk(&mut rng)).collect();
    let config = PolicyConfig { episodes: 2000, ..Default::default() };
    for s in 0..3u64 {
        let mut p = PolicySelector::new(30, 3, config.embed_dim, config.hidden_dim, s).unwrap();
        let mut b = BaselineEstimator::new(config.hidden_dim, config.baseline_hidden, s + 100);
        let before = mean_distribution(&p, &held);
        policy::train_policy(&mut p, &mut b, &pool, &scorer, &train, &config, s).unwrap();
        let after = mean_distribution(&p, &held);
        let tv: f64 = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 0.1, "seed {s}: total variation {tv} ({before:?} -> {after:?})");
    }
}
