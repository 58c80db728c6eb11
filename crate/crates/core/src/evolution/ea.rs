//! Per-layer evolutionary search over one mask segment.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mutation::bounded_bitwise_mutation_with;
use crate::attack::{robust_accuracy, AdvDataset};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pruning::{count_flops, FilterMask, Segment};
use crate::rng::{self, tag};
use crate::snn::{accuracy, NetView, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EaConfig {
    /// Subpopulation size.
    pub d: usize,
    /// Mutation rate for the initial subpopulation.
    pub p1: f64,
    /// Mutation rate for offspring.
    pub p2: f64,
    /// Ratio bound on filters pruned per mutation.
    pub r: f64,
    /// Generations per layer.
    pub generations: usize,
    /// Whether mutation may turn pruned bits back on.
    pub allow_restore: bool,
}

impl EaConfig {
    pub fn paper() -> Self {
        Self {
            d: 5,
            p1: 0.05,
            p2: 0.1,
            r: 0.1,
            generations: 10,
            allow_restore: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.d == 0 {
            return bad("population size d must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p1) || !(0.0..=1.0).contains(&self.p2) {
            return bad("mutation rates must lie in [0, 1]");
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return bad("ratio bound r must lie in (0, 1]");
        }
        if self.generations == 0 {
            return bad("generations must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub acc: f64,
    pub accr: f64,
    pub flops: u64,
}

impl Fitness {
    /// `(ACC + ACCr) / 2`, rounded to nine decimals.
    pub fn score(&self) -> f64 {
        self.score_key() as f64 / 1e9
    }

    // Scores are ratios of small counts; rounding keeps float noise from
    // splitting what should be ties while staying a total order.
    fn score_key(&self) -> i64 {
        ((self.acc + self.accr) / 2.0 * 1e9).round() as i64
    }
}

/// One layer's candidate mask segment and its cached fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    bits: Segment,
    fitness: Option<Fitness>,
}

impl Individual {
    pub fn new(bits: Segment) -> Self {
        Self { bits, fitness: None }
    }

    pub fn evaluated(bits: Segment, fitness: Fitness) -> Self {
        Self {
            bits,
            fitness: Some(fitness),
        }
    }

    pub fn bits(&self) -> &Segment {
        &self.bits
    }

    pub fn fitness(&self) -> Option<Fitness> {
        self.fitness
    }

    pub fn score(&self) -> Option<f64> {
        self.fitness.map(|f| f.score())
    }

    fn set_fitness(&mut self, f: Fitness) {
        debug_assert!(self.fitness.is_none_or(|old| old == f), "fitness is immutable once set");
        self.fitness.get_or_insert(f);
    }
}

/// Ranking comparator: higher `(acc+accr)/2` first, then fewer FLOPs.
pub fn compare_fitness(a: &Fitness, b: &Fitness) -> Ordering {
    b.score_key().cmp(&a.score_key()).then(a.flops.cmp(&b.flops))
}

/// Pool indices in rank order; remaining ties keep pool order.
pub fn rank(pool: &[Individual]) -> Result<Vec<usize>> {
    let fits = pool
        .iter()
        .enumerate()
        .map(|(i, ind)| ind.fitness.ok_or(Error::UnevaluatedIndividual(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| compare_fitness(&fits[a], &fits[b]).then(a.cmp(&b)));
    Ok(order)
}

/// `m0` followed by `d − 1` bounded mutations of it at rate `p1`.
pub fn init_subpopulation(m0: &Individual, cfg: &EaConfig, seed: u64) -> Vec<Individual> {
    let mut pop = Vec::with_capacity(cfg.d);
    pop.push(m0.clone());
    for j in 1..cfg.d {
        let mut rng = rng::child_rng(seed, &[tag::INDIVIDUAL, j as u64]);
        let bits = bounded_bitwise_mutation_with(m0.bits(), cfg.p1, cfg.r, cfg.allow_restore, &mut rng);
        pop.push(Individual::new(bits));
    }
    pop
}

/// Fixed inputs for scoring candidates of one layer: the base network, the
/// mask the candidate is spliced into, and the clean and adversarial sets.
#[derive(Debug, Clone, Copy)]
pub struct LayerProblem<'a> {
    pub base: &'a Network,
    pub base_mask: &'a FilterMask,
    pub clean: &'a Dataset,
    pub adv: &'a AdvDataset,
}

impl LayerProblem<'_> {
    /// Fitness of `base_mask` with segment `layer` replaced by `bits`.
    pub fn evaluate(&self, layer: usize, bits: &Segment) -> Result<Fitness> {
        self.evaluate_mask(&self.base_mask.with_segment(layer, bits.clone())?)
    }

    /// Fitness of a complete mask over the base network.
    pub fn evaluate_mask(&self, mask: &FilterMask) -> Result<Fitness> {
        let view = NetView::masked(self.base, mask)?;
        Ok(Fitness {
            acc: accuracy(&view, &self.clean.images, &self.clean.labels)?,
            accr: robust_accuracy(&view, self.adv)?,
            flops: count_flops(&view).total_flops,
        })
    }
}

/// Scores `ind` spliced into the problem's base mask at `layer` and caches the result.
pub fn evaluate_individual(ind: &mut Individual, layer: usize, problem: &LayerProblem) -> Result<Fitness> {
    if let Some(f) = ind.fitness {
        return Ok(f);
    }
    let f = problem.evaluate(layer, &ind.bits)?;
    ind.set_fitness(f);
    Ok(f)
}

#[derive(Debug, Clone)]
pub struct EaOutcome {
    /// Rank-one member of the final subpopulation.
    pub best: Individual,
    pub final_population: Vec<Individual>,
    /// Best score of the subpopulation after initialisation and after each generation.
    pub best_scores: Vec<f64>,
    /// Individuals scored: `d` initial plus `d` offspring per generation.
    pub evaluations: usize,
}

/// Memoised evaluation of a batch of individuals. Evaluation is a pure
/// function of the segment, so cached results are exact.
fn evaluate_all(
    pop: &mut [Individual],
    layer: usize,
    problem: &LayerProblem,
    cache: &mut HashMap<Segment, Fitness>,
) -> Result<()> {
    let mut todo: Vec<Segment> = Vec::new();
    for ind in pop.iter() {
        if ind.fitness.is_none() && !cache.contains_key(&ind.bits) && !todo.contains(&ind.bits) {
            todo.push(ind.bits.clone());
        }
    }
    let results = todo
        .par_iter()
        .map(|s| problem.evaluate(layer, s).map(|f| (s.clone(), f)))
        .collect::<Result<Vec<_>>>()?;
    cache.extend(results);
    for ind in pop.iter_mut() {
        if ind.fitness.is_none() {
            ind.set_fitness(cache[&ind.bits]);
        }
    }
    Ok(())
}

/// Evolves the mask segment of one prunable layer for `cfg.generations`
/// generations of parent sampling with replacement, bounded mutation at
/// rate `p2`, and truncation to the top `d` of parents ∪ offspring.
pub fn ea_optimize_layer(layer: usize, problem: &LayerProblem, cfg: &EaConfig, seed: u64) -> Result<EaOutcome> {
    cfg.validate()?;
    let m0 = Individual::new(problem.base_mask.segment(layer).clone());
    let mut cache = HashMap::new();
    let mut pop = init_subpopulation(&m0, cfg, rng::derive_seed(seed, &[tag::INIT]));
    evaluate_all(&mut pop, layer, problem, &mut cache)?;
    let order = rank(&pop)?;
    pop = order.into_iter().map(|i| pop[i].clone()).collect();
    let mut evaluations = pop.len();
    let mut best_scores = vec![pop[0].score().expect("evaluated")];

    for gen in 0..cfg.generations {
        let gseed = rng::derive_seed(seed, &[tag::GENERATION, gen as u64]);
        let mut prng = rng::child_rng(gseed, &[tag::PARENTS]);
        let parents: Vec<usize> = (0..cfg.d).map(|_| prng.random_range(0..pop.len())).collect();
        let mut offspring: Vec<Individual> = parents
            .iter()
            .enumerate()
            .map(|(j, &pi)| {
                let mut rng = rng::child_rng(gseed, &[tag::INDIVIDUAL, j as u64]);
                Individual::new(bounded_bitwise_mutation_with(pop[pi].bits(), cfg.p2, cfg.r, cfg.allow_restore, &mut rng))
            })
            .collect();
        evaluate_all(&mut offspring, layer, problem, &mut cache)?;
        evaluations += offspring.len();
        let mut q = pop;
        q.extend(offspring);
        let order = rank(&q)?;
        pop = order.into_iter().take(cfg.d).map(|i| q[i].clone()).collect();
        best_scores.push(pop[0].score().expect("evaluated"));
    }
    Ok(EaOutcome {
        best: pop[0].clone(),
        final_population: pop,
        best_scores,
        evaluations,
    })
}
