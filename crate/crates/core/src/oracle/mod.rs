//! Exact computations on small tabular instances, used as ground truth.

mod bounds;
mod duality;
mod grid;
mod markov;
pub mod suite;
mod values;

pub use bounds::{kappa_star_on_grid, policy_distance, verify_distance_bounds, BoundCheck, BoundReport};
pub use duality::{brute_force_duality, DualityEstimate, DualitySettings, FEASIBILITY_TOL};
pub use grid::{simplex_grid, PolicyGrid};
pub use markov::{
    fundamental_matrix, kemeny_constant, mean_first_passage, stationary_distribution, ChainMatrix, Kemeny,
    KEMENY_CONVENTION, KEMENY_TOL, STATIONARY_RESIDUAL_TOL,
};
pub use values::{
    decomposed_lagrangian, differential_q, exact_policy_gradient, exact_values, induced_chain,
    mean_local_lagrangian, occupation_measure, DifferentialQ, ExactEval, PolicyTable, POISSON_RESIDUAL_TOL,
};
