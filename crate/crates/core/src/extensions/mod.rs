//! Driver participation, the two ablation modes, the directed-cycle solver
//! and parameter sweeps.

mod ablation;
mod cycle;
mod participation;
mod sweep;

pub use ablation::{congestion_unaware_load, cordon_tolls, solve_myopic, CongestionUnaware};
pub use cycle::{cycle_start, solve_cycle, spread, CycleProblem, CycleSolution};
pub use participation::{solve_participation, ParticipationParams, ParticipationResult, ParticipationTarget};
pub use sweep::{run_sweep, SweepParam, SweepRow};

#[cfg(test)]
mod tests;
