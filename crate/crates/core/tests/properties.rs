use std::collections::HashMap;
use std::sync::Arc;

use airdecode::decode::reconstruct_prob;
use airdecode::diagnostics::{overlap_ratios, TopSets};
use airdecode::dist::ranked_ids;
use airdecode::metrics::distinctness;
use airdecode::sampling::{top_k_filter, top_p_filter, SamplerConfig};
use airdecode::toy::{attribute_words, ToyCorpus, ToyCorpusConfig, PROMPTS};
use airdecode::vocab::{TokenId, BOS_ID, EOS_ID};
use airdecode::*;
use proptest::prelude::*;

fn dist_strategy(min_len: usize, max_len: usize) -> impl Strategy<Value = TokenDist> {
    prop::collection::vec(1e-9f64..1.0, min_len..max_len)
        .prop_map(|w| TokenDist::from_weights(w).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

proptest! {
    #[test]
    fn reconstruct_preserves_ranking(d in dist_strategy(2, 80)) {
        let w = reconstruct(&d);
        prop_assert_eq!(ranked_ids(d.probs()), ranked_ids(w.weights()));
    }

    // -1/ln p compresses ratios once every probability is at most 1/e.
    #[test]
    fn reconstruct_compresses_range(raw in prop::collection::vec(1.0f64..1e6, 3..60)) {
        let d = TokenDist::from_weights(raw).unwrap();
        let p = d.probs();
        let (lo, hi) = p.iter().fold((1.0f64, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        prop_assume!(lo >= 1e-6 && hi <= (-1.0f64).exp() && hi > lo);
        let w: Vec<f64> = p.iter().map(|&x| reconstruct_prob(x)).collect();
        let (wlo, whi) = w.iter().fold((f64::MAX, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        prop_assert!(whi / wlo < hi / lo, "{} !< {}", whi / wlo, hi / lo);
    }

    #[test]
    fn posteriors_sum_to_one_over_targets(
        classes in 2usize..5,
        v in 2usize..40,
        seed in any::<u64>(),
        deltas in prop::collection::vec(-40.0f64..0.0, 4),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dists: Vec<TokenDist> = (0..classes)
            .map(|_| TokenDist::from_weights((0..v).map(|_| rng.gen_range(1e-12..1.0)).collect()).unwrap())
            .collect();
        let mut state = DecodeState::new(vec![], classes);
        state.log_delta.copy_from_slice(&deltas[..classes]);
        for mode in CompositionMode::ALL {
            let w = mode.weights(&dists);
            let per_target: Vec<Vec<f64>> =
                (0..classes).map(|t| attribute_posterior(&w, &state, &[], t)).collect();
            for i in 0..v {
                let s: f64 = per_target.iter().map(|q| q[i]).sum();
                prop_assert!(close(s, 1.0, 1e-9), "token {i}: sum {s}");
                for q in &per_target {
                    prop_assert!((0.0..=1.0).contains(&q[i]));
                }
            }
        }
    }

    #[test]
    fn filters_keep_nonempty_subsets(
        d in dist_strategy(1, 60),
        k in 1usize..80,
        p in 0.01f64..=1.0,
    ) {
        let k = k.min(d.len());
        let once = top_k_filter(&d, k).unwrap();
        let twice = top_k_filter(&once, k).unwrap();
        for (a, b) in once.probs().iter().zip(twice.probs()) {
            prop_assert!((*a == 0.0) == (*b == 0.0) && close(*a, *b, 1e-12));
        }
        prop_assert!(once.probs().iter().filter(|&&x| x > 0.0).count() <= k);

        // Renormalizing can lift the head above p, so a second nucleus pass may
        // shrink the support further but never widens it.
        let once = top_p_filter(&d, p).unwrap();
        let twice = top_p_filter(&once, p).unwrap();
        for (a, b) in once.probs().iter().zip(twice.probs()) {
            prop_assert!(*b == 0.0 || *a > 0.0);
        }
        prop_assert_eq!(top_p_filter(&d, 1.0).unwrap(), d.clone());

        let cfg = SamplerConfig { top_k: Some(k), top_p: p, ..Default::default() };
        let f = cfg.filter(&d).unwrap();
        prop_assert!(f.probs().iter().any(|&x| x > 0.0));
        for (a, b) in f.probs().iter().zip(d.probs()) {
            prop_assert!(*a == 0.0 || *b > 0.0, "filter added support");
        }
    }

    #[test]
    fn distinctness_ignores_relabeling(
        texts in prop::collection::vec(prop::collection::vec(0u32..12, 3..25), 1..8),
        shift in 1u32..1000,
    ) {
        // Any injective map is a relabeling; this one also reverses the id order.
        let relabeled: Vec<Vec<u32>> = texts
            .iter()
            .map(|t| t.iter().map(|&x| 5000 - x * 7 + shift).collect())
            .collect();
        for n in 1..=3 {
            let a = distinctness(&texts, n).unwrap();
            let b = distinctness(&relabeled, n).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }

    #[test]
    fn overlap_triple_bounded_by_pairs(
        o in prop::collection::hash_set(0u32..60, 1..30),
        r in prop::collection::hash_set(0u32..60, 0..30),
        a in prop::collection::hash_set(0u32..60, 0..30),
    ) {
        let ratios = overlap_ratios(&TopSets::from_ids(o, r, a, 30)).unwrap();
        prop_assert!(ratios.r_ora <= ratios.r_or.min(ratios.r_oa));
        for x in [ratios.r_or, ratios.r_oa, ratios.r_ora] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    // Raising the posterior to a higher power never moves mass out of a set of
    // tokens whose posterior is at least some threshold.
    #[test]
    fn superlevel_mass_grows_with_omega(
        base in dist_strategy(2, 50),
        seed in any::<u64>(),
        tau in 0.0f64..1.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let post: Vec<f64> = (0..base.len()).map(|_| rng.gen_range(1e-6..1.0)).collect();
        let mass = |omega: f64| -> f64 {
            let out = compose(&base, &post, omega).unwrap();
            out.probs().iter().zip(&post).filter(|(_, &q)| q >= tau).map(|(p, _)| p).sum()
        };
        let mut prev = mass(0.0);
        for omega in [0.5, 1.0, 5.0, 20.0, 60.0, 140.0] {
            let m = mass(omega);
            prop_assert!(m >= prev - 1e-12, "omega {omega}: {m} < {prev}");
            prev = m;
        }
    }

    #[test]
    fn mle_matches_recount(
        docs in prop::collection::vec(prop::collection::vec(3u32..9, 0..12), 1..10),
        order in 1usize..4,
    ) {
        let mut vocab = Vocabulary::new();
        for i in 3..9 {
            vocab.insert(&format!("w{i}"));
        }
        let model = NGramModel::train(&docs, Arc::new(vocab), order, Smoothing::for_order(order)).unwrap();
        let mut counts: HashMap<(Vec<TokenId>, TokenId), u64> = HashMap::new();
        let mut totals: HashMap<Vec<TokenId>, u64> = HashMap::new();
        for doc in &docs {
            let mut padded = vec![BOS_ID; order - 1];
            padded.extend_from_slice(doc);
            padded.push(EOS_ID);
            for i in (order - 1)..padded.len() {
                let ctx = padded[i + 1 - order..i].to_vec();
                *counts.entry((ctx.clone(), padded[i])).or_default() += 1;
                *totals.entry(ctx).or_default() += 1;
            }
        }
        for (ctx, total) in &totals {
            for tok in 0..9u32 {
                let c = counts.get(&(ctx.clone(), tok)).copied().unwrap_or(0);
                prop_assert_eq!(model.mle_prob(ctx, tok), Some(c as f64 / *total as f64));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Swapping which label owns which corpus swaps the roles of the labels and
    // nothing else.
    #[test]
    fn label_swap_symmetry(
        a_docs in prop::collection::vec(prop::collection::vec(0usize..6, 1..8), 1..6),
        b_docs in prop::collection::vec(prop::collection::vec(0usize..6, 1..8), 1..6),
        seed in any::<u64>(),
        omega in 0.0f64..150.0,
    ) {
        const WORDS: [&str; 6] = ["sun", "rain", "warm", "cold", "day", "night"];
        let texts = |docs: &[Vec<usize>]| -> Vec<String> {
            docs.iter().map(|d| d.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" ")).collect()
        };
        let (a, b) = (texts(&a_docs), texts(&b_docs));
        let cfg = EnsembleConfig::with_order(2);
        let e1 = AttributeEnsemble::build(&[("x".into(), a.clone()), ("y".into(), b.clone())], None, &cfg).unwrap();
        let e2 = AttributeEnsemble::build(&[("x".into(), b), ("y".into(), a)], None, &cfg).unwrap();
        prop_assert_eq!(e1.vocab(), e2.vocab());
        for mode in CompositionMode::ALL {
            let gen = GenerationConfig {
                omega,
                length: 8,
                ..GenerationConfig::from_preset(&AttributePreset::new("t", omega), mode)
            };
            let t1 = generate(&e1, "day", "x", &gen, seed).unwrap();
            let t2 = generate(&e2, "day", "y", &gen, seed).unwrap();
            prop_assert_eq!(&t1.tokens, &t2.tokens);
        }
    }
}

#[test]
fn range_compression_fails_near_certainty() {
    // With a probability close to 1 the reconstructed ratio explodes instead.
    let p = [1.0 - 1e-6, 1e-6];
    let w: Vec<f64> = p.iter().map(|&x| reconstruct_prob(x)).collect();
    assert!(w[0] / w[1] > p[0] / p[1]);
}

#[test]
fn perplexity_tends_to_one_without_smoothing_mass() {
    let tok = TokenizerConfig::default();
    let docs = vec!["a b a b".to_string()];
    let mut last = f64::INFINITY;
    for alpha in [1e-1, 1e-3, 1e-6, 1e-9] {
        // Order 4 makes every scored position of the training text deterministic.
        let model = NGramModel::train_texts(&docs, &tok, 4, Smoothing::highest_order_only(4, alpha)).unwrap();
        let text = tok.tokenize(&docs[0], model.vocab());
        let ppl = model.sequence_perplexity(&text).unwrap();
        assert!(ppl < last && ppl >= 1.0);
        last = ppl;
    }
    assert!(last - 1.0 < 1e-6, "{last}");
}

#[test]
fn attribute_word_mass_grows_with_omega_on_toy_ensemble() {
    let corpus = ToyCorpus::generate(&ToyCorpusConfig {
        docs_per_class: 400,
        ..Default::default()
    });
    let ens = AttributeEnsemble::build(&corpus.labeled(), None, &EnsembleConfig::with_order(3)).unwrap();
    for target in [ToyCorpus::POSITIVE, ToyCorpus::NEGATIVE] {
        let t = ens.label_index(target).unwrap();
        let ids: Vec<TokenId> = attribute_words(target)
            .iter()
            .filter_map(|w| ens.vocab().id(w))
            .collect();
        for prompt in PROMPTS.iter().map(|p| format!("{p} was")).chain(PROMPTS.iter().map(|p| p.to_string())) {
            let ctx = ens.tokenize(&prompt);
            let base = ens.base().next_token_distribution(&ctx);
            for mode in CompositionMode::ALL {
                let w = mode.weights(&ens.class_distributions(&ctx));
                let post = attribute_posterior(&w, &DecodeState::new(ctx.clone(), 2), ens.priors(), t);
                let mut prev = 0.0;
                for omega in [0.0, 10.0, 20.0, 40.0, 80.0, 140.0] {
                    let out = compose(&base, &post, omega).unwrap();
                    let m: f64 = ids.iter().map(|&i| out.probs()[i as usize]).sum();
                    assert!(m >= prev - 1e-12, "{prompt:?} {mode} omega {omega}: {m} < {prev}");
                    prev = m;
                }
            }
        }
    }
}
