//! Cooperative coevolution of per-layer filter masks.

mod ccsrp;
mod ea;
mod mutation;

pub use ccsrp::{
    ccsrp_run, ccsrp_run_with, measure, Archive, ArchiveEntry, CcsrpConfig, IterationSummary, Metrics, Resume,
    RunOptions,
};
pub use ea::{
    compare_fitness, ea_optimize_layer, evaluate_individual, init_subpopulation, rank, EaConfig, EaOutcome, Fitness,
    Individual, LayerProblem,
};
pub use mutation::{bounded_bitwise_mutation, bounded_bitwise_mutation_with, prune_cap};
