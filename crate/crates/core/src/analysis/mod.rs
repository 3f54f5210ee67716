//! Dirichlet energy, over-smoothing trajectories and multiset
//! distinguishability oracles.

mod energy;
mod multiset;

pub use energy::{
    dirichlet_energy, dirichlet_energy_pairwise, expected_perturbed_energy, matched_moment_families,
    oversmoothing_trajectory, perturbed_aggregate, EnergyScale, EnergyTrajectory, GraphAggregator,
};
pub use multiset::{
    distinguishability_report, expected_stochastic_aggregate, power_sum_equal, table_pairs,
    uniform_exp_sum_closed_form, uniform_exp_sum_numerator, Aggregator, McEstimate, Multiset, MultisetClasses,
    ReportRow, Transform, STOCHASTIC_ROW, TABLE_DISTINGUISHED,
};
