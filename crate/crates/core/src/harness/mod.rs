//! Instance generation, experiments and result files.

mod experiments;
pub mod fixtures;
mod gen;

pub use experiments::{
    run_equivalence_mc, run_scaling, size_table, trimmed_stats, ExperimentResult, Record, SizeRow, Sizes, Summary,
    SCALING_CAP, TRIM,
};
pub use gen::{
    gen_instance, gen_quadratic, gen_strict_complementary, instance_rng, Family, GeneratorConfig, Instance, StrictInstance,
    STRICT_MARGIN,
};
