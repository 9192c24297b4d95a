//! Direct (in-memory) color-matching campaigns: the decision state proposes
//! grid mixtures, the dye model renders them and ΔE00 to the target is fed
//! back negated.

use labmcp_color::{srgb_delta_e, SrgbColor};

use crate::decision::{gen_grid, DecisionError, DecisionState, SelectionMethod};
use crate::simlab::{DyeModel, MAX_DISPENSE_ML};

/// Seed passed to `selection` in cycle `cycle` (1-based) of run `run_seed`.
pub fn cycle_seed(run_seed: u64, cycle: usize) -> u64 {
    run_seed * 1000 + cycle as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    /// Negated ΔE00 of each cycle.
    pub objectives: Vec<f64>,
    /// Candidate row measured in each cycle.
    pub rows: Vec<usize>,
}

impl Campaign {
    pub fn best_so_far(&self) -> Vec<f64> {
        self.objectives
            .iter()
            .scan(f64::NEG_INFINITY, |best, v| {
                *best = best.max(*v);
                Some(*best)
            })
            .collect()
    }

    /// Smallest ΔE00 over the first `cycles` cycles.
    pub fn best_delta_e(&self, cycles: usize) -> f64 {
        -self.objectives[..cycles]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs `random` RE cycles followed by `bayesian` BO cycles.
pub fn run(
    dyes: &DyeModel,
    target: SrgbColor,
    random: usize,
    bayesian: usize,
    run_seed: u64,
) -> Result<Campaign, DecisionError> {
    let mut state = DecisionState::new();
    state.load(&gen_grid())?;
    let mut out = Campaign {
        objectives: Vec::new(),
        rows: Vec::new(),
    };
    for cycle in 1..=random + bayesian {
        let method = if cycle <= random {
            SelectionMethod::Random
        } else {
            SelectionMethod::Bayesian
        };
        let row = state.select(method, cycle_seed(run_seed, cycle))?;
        let mut volumes = [0.0; 3];
        for (v, name) in volumes.iter_mut().zip(["red", "yellow", "blue"]) {
            *v = state.selected_value(name)? / 100.0 * MAX_DISPENSE_ML;
        }
        let measured = dyes.mix(volumes).unwrap_or(SrgbColor::new(255, 255, 255));
        let objective = -srgb_delta_e(measured, target).value();
        state.update(objective)?;
        out.objectives.push(objective);
        out.rows.push(row);
    }
    Ok(out)
}
