mod support;

use ccsrp_core::evolution::{
    bounded_bitwise_mutation, bounded_bitwise_mutation_with, ccsrp_run, ccsrp_run_with, compare_fitness,
    ea_optimize_layer, prune_cap, rank, CcsrpConfig, EaConfig, Fitness, Individual, Resume, RunOptions,
};
use ccsrp_core::pruning::{count_flops, FilterMask, Segment};
use ccsrp_core::rng::{self, rng_from, tag};
use ccsrp_core::training::{adv_finetune, TrainConfig};
use proptest::prelude::*;
use std::cmp::Ordering;
use support::{exhaustive_scores, layer_fixture, single_layer_net, trained_desk};

#[test]
fn mutation_never_exceeds_the_cap_or_empties() {
    let seg = Segment::ones(10);
    let mut rng = rng_from(42);
    let mut pruned_any = 0;
    for _ in 0..10_000 {
        let out = bounded_bitwise_mutation(&seg, 0.1, 0.1, &mut rng);
        let pruned = 10 - out.count_ones();
        assert!(pruned <= 1);
        assert!(out.count_ones() > 0);
        pruned_any += pruned;
    }
    // p = 0.1 on 10 bits schedules at least one flip ~65% of the time.
    assert!(pruned_any > 5_000, "{pruned_any}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mutation_bound_holds_everywhere(bits in prop::collection::vec(any::<bool>(), 1..40), p in 0.0f64..=1.0, r in 0.01f64..=1.0, seed: u64, restore: bool) {
        let Some(seg) = Segment::new(bits) else { return Ok(()); };
        let mut rng = rng_from(seed);
        let out = bounded_bitwise_mutation_with(&seg, p, r, restore, &mut rng);
        prop_assert_eq!(out.len(), seg.len());
        prop_assert!(out.count_ones() > 0);
        let pruned = seg.bits().iter().zip(out.bits()).filter(|(a, b)| **a && !**b).count();
        prop_assert!(pruned <= prune_cap(r, seg.len()));
        if !restore {
            let restored = seg.bits().iter().zip(out.bits()).filter(|(a, b)| !**a && **b).count();
            // Only the never-empty rule may turn a bit back on.
            prop_assert!(restored == 0 || (restored == 1 && out.count_ones() == 1));
        }
    }

    #[test]
    fn rank_is_a_total_order(fits in prop::collection::vec((0u8..5, 0u8..5, 0u64..4), 1..30)) {
        let pool: Vec<Individual> = fits
            .iter()
            .map(|&(a, b, f)| Individual::evaluated(Segment::ones(1), Fitness { acc: a as f64 / 4.0, accr: b as f64 / 4.0, flops: f }))
            .collect();
        let order = rank(&pool).unwrap();
        let mut seen = order.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..pool.len()).collect::<Vec<_>>());
        let key = |i: usize| pool[i].fitness().unwrap();
        for w in order.windows(2) {
            let c = compare_fitness(&key(w[0]), &key(w[1]));
            prop_assert!(c == Ordering::Less || (c == Ordering::Equal && w[0] < w[1]));
        }
        for i in 0..pool.len() {
            for j in 0..pool.len() {
                prop_assert_eq!(compare_fitness(&key(i), &key(j)), compare_fitness(&key(j), &key(i)).reverse());
            }
        }
    }
}

#[test]
fn exact_average_ties_fall_to_flops() {
    let a = Fitness { acc: 0.8, accr: 0.6, flops: 100 };
    let b = Fitness { acc: 0.7, accr: 0.7, flops: 90 };
    assert_eq!(compare_fitness(&b, &a), Ordering::Less);
}

#[test]
fn ea_accounting_elitism_and_exhaustive_oracle() {
    let (net, ds) = single_layer_net();
    let fx = layer_fixture(&net, &ds, 0);
    let threshold = exhaustive_scores(&fx)[25];
    let ones = FilterMask::all_ones(&fx.net);
    let problem = fx.problem(&ones);
    let base = problem.evaluate(0, &Segment::ones(8)).unwrap().score();
    let cfg = EaConfig::paper();
    for seed in 0..5 {
        let out = ea_optimize_layer(0, &problem, &cfg, seed).unwrap();
        assert_eq!(out.evaluations, cfg.d + cfg.d * cfg.generations);
        assert_eq!(out.best_scores.len(), cfg.generations + 1);
        assert!(out.best_scores.windows(2).all(|w| w[1] >= w[0]));
        let best = out.best.score().unwrap();
        assert!(best >= base - 1e-12);
        assert!(best >= threshold - 1e-12, "seed {seed}: {best} below top-10% threshold {threshold}");
        assert_eq!(out.best, out.final_population[0]);
    }
}

fn small_config() -> CcsrpConfig {
    let mut cfg = CcsrpConfig::desk();
    cfg.iterations = 2;
    cfg.ea.generations = 2;
    cfg.ea.d = 3;
    cfg.finetune = TrainConfig {
        probe_size: 0,
        ..TrainConfig::desk(1)
    };
    cfg.monitor_size = 40;
    cfg
}

#[test]
fn unpruned_iteration_is_plain_finetuning() {
    let (net, ds) = trained_desk(25, 1, 4);
    let mut cfg = small_config();
    cfg.iterations = 1;
    cfg.ea.p1 = 0.0;
    cfg.ea.p2 = 0.0;
    let archive = ccsrp_run(&net, &ds, &cfg, 9).unwrap();
    assert_eq!(archive.entries.len(), 1);
    let e = &archive.entries[0];
    assert!(e.mask.is_all_ones());
    assert_eq!(e.summary.flops, archive.base_flops.total_flops);
    let it = rng::derive_seed(9, &[tag::ITERATION, 0]);
    let (expected, _) = adv_finetune(&net, &ds, &cfg.finetune, rng::derive_seed(it, &[tag::FINETUNE])).unwrap();
    assert_eq!(e.network, expected);
}

#[test]
fn runs_are_deterministic_monotone_and_resumable() {
    let (net, ds) = trained_desk(25, 1, 4);
    let cfg = small_config();
    let a = ccsrp_run(&net, &ds, &cfg, 5).unwrap();
    let b = ccsrp_run(&net, &ds, &cfg, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.entries.len(), 2);
    let mut prev = a.base_flops.total_flops;
    for e in &a.entries {
        assert!(e.summary.flops <= prev);
        assert_eq!(e.summary.flops, count_flops(&e.network.view()).total_flops);
        prev = e.summary.flops;
    }
    assert_eq!(a.entries[1].mask_history.len(), 2);

    let first = &a.entries[0];
    let resume = Resume {
        next_iteration: 1,
        network: first.network.clone(),
        mask_history: first.mask_history.clone(),
    };
    let opts = RunOptions { resume: Some(resume), held_out: None };
    let (rest, err) = ccsrp_run_with(&net, &ds, &cfg, 5, opts, |_| Ok(()));
    assert!(err.is_none());
    assert_eq!(rest.entries, a.entries[1..]);
}

#[test]
fn failing_callback_leaves_a_partial_archive() {
    let (net, ds) = trained_desk(25, 1, 4);
    let cfg = small_config();
    let (archive, err) = ccsrp_run_with(&net, &ds, &cfg, 5, RunOptions::default(), |e| {
        if e.iteration == 1 {
            Err(ccsrp_core::Error::ConfigInvalid("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(err.is_some());
    assert_eq!(archive.entries.len(), 1);
}
