use serde::{Deserialize, Serialize};

use crate::cmg::{Environment, TabularCmg};
use crate::error::{Error, Result};
use crate::oracle::grid::PolicyGrid;
use crate::oracle::values::exact_values;

/// Slack allowed on `G_k <= b_k` when deciding feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualitySettings {
    /// Policy simplex grids use multiples of `1 / policy_resolution`.
    pub policy_resolution: usize,
    /// Points per multiplier axis on `[0, lambda_max_k]`.
    pub lambda_points: usize,
    pub lambda_max: Vec<f64>,
    /// Slater margins `delta_k`; enables the multiplier range estimate.
    pub slater_margins: Option<Vec<f64>>,
    /// Cap on `policies x S^2 x |A|` transition cells touched.
    pub cell_budget: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityEstimate {
    /// `min J` over feasible grid policies; `None` if none is feasible.
    pub primal: Option<f64>,
    /// `max` over the multiplier grid of `min` over grid policies of the Lagrangian.
    pub dual: f64,
    pub gap: Option<f64>,
    /// `(1 + gap) / delta_k`
    pub lambda_max_estimate: Option<Vec<f64>>,
    pub policies: u64,
    pub feasible_policies: u64,
    pub lambda_grid_points: u64,
    pub note: Option<String>,
}

pub fn brute_force_duality(cmg: &TabularCmg, settings: &DualitySettings) -> Result<DualityEstimate> {
    let k = cmg.num_constraints();
    if settings.lambda_max.len() != k {
        return Err(Error::shape("lambda_max", k, settings.lambda_max.len()));
    }
    if settings.lambda_points < 2 && k > 0 {
        return Err(Error::config("multiplier grid needs at least two points per axis"));
    }
    let ns = cmg.num_states();
    let grid = PolicyGrid::new(ns, cmg.action_space().radices(), settings.policy_resolution)?;
    let cells = grid
        .len()
        .saturating_mul((ns * ns * cmg.num_joint_actions()) as u128);
    if cells > settings.cell_budget {
        return Err(Error::Budget {
            what: "duality grid".into(),
            needed: cells,
            budget: settings.cell_budget,
        });
    }

    let mut values = Vec::with_capacity(grid.len() as usize);
    for pol in grid.iter() {
        let e = exact_values(cmg, &pol, &vec![0.0; k])?;
        values.push((e.j, e.g));
    }
    let b = cmg.bounds();
    let feasible = |g: &[f64]| g.iter().zip(b).all(|(g, b)| *g <= b + FEASIBILITY_TOL);
    let primal = values
        .iter()
        .filter(|(_, g)| feasible(g))
        .map(|(j, _)| *j)
        .fold(None, |acc: Option<f64>, j| Some(acc.map_or(j, |a| a.min(j))));
    let feasible_policies = values.iter().filter(|(_, g)| feasible(g)).count() as u64;

    let axis = |c: usize, i: usize| settings.lambda_max[c] * i as f64 / (settings.lambda_points - 1) as f64;
    let lambda_grid_points = (settings.lambda_points as u64).pow(k as u32);
    let mut dual = f64::NEG_INFINITY;
    let mut lambda = vec![0.0; k];
    for idx in 0..lambda_grid_points {
        let mut rem = idx;
        for (c, l) in lambda.iter_mut().enumerate() {
            *l = axis(c, (rem % settings.lambda_points as u64) as usize);
            rem /= settings.lambda_points as u64;
        }
        let inner = values
            .iter()
            .map(|(j, g)| j + lambda.iter().zip(g).zip(b).map(|((l, g), b)| l * (g - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        dual = dual.max(inner);
    }

    let gap = primal.map(|p| p - dual);
    let lambda_max_estimate = match (&settings.slater_margins, gap) {
        (Some(delta), Some(gap)) => {
            if delta.len() != k || delta.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::config("Slater margins must be positive, one per constraint"));
            }
            Some(delta.iter().map(|d| (1.0 + gap) / d).collect())
        }
        _ => None,
    };
    let note = primal.is_none().then(|| {
        format!(
            "no feasible policy at resolution {}; try a finer grid",
            settings.policy_resolution
        )
    });
    Ok(DualityEstimate {
        primal,
        dual,
        gap,
        lambda_max_estimate,
        policies: grid.len() as u64,
        feasible_policies,
        lambda_grid_points,
        note,
    })
}
