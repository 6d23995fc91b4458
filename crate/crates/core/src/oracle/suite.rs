//! The oracle report emitted by the `oracle` subcommand.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmg::{random_tabular, rng_stream, Environment, SimRng, TabularCmg};
use crate::error::Result;
use crate::fa::{FeatureTable, SoftmaxPolicy};
use crate::oracle::{
    brute_force_duality, decomposed_lagrangian, differential_q, exact_policy_gradient, exact_values,
    fundamental_matrix, induced_chain, kappa_star_on_grid, kemeny_constant, stationary_distribution,
    verify_distance_bounds, DualitySettings, PolicyTable, KEMENY_CONVENTION,
};

/// Largest state-action count the suite analyzes exactly.
pub const MAX_EXACT_PAIRS: usize = 1000;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub instance: u64,
    pub relative_error: f64,
    pub poisson_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KemenyCheck {
    pub instance: u64,
    pub kappa: f64,
    /// `|kappa - (trace Z - 1)|`
    pub fundamental_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub pairs: usize,
    pub kappa_star: f64,
    pub proxy: bool,
    pub min_stationary_slack: f64,
    pub min_occupation_slack: f64,
    pub min_lagrangian_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityCheck {
    pub instance: u64,
    pub primal: Option<f64>,
    pub dual: f64,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfiguredInstance {
    pub states: usize,
    pub joint_actions: usize,
    pub uniform_j: f64,
    pub uniform_g: Vec<f64>,
    pub uniform_kappa: f64,
    pub poisson_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub kemeny_convention: String,
    pub gradient: Vec<GradientCheck>,
    pub kemeny: Vec<KemenyCheck>,
    pub bounds: BoundSummary,
    pub duality: Vec<DualityCheck>,
    pub configured: Option<ConfiguredInstance>,
    pub configured_skipped: Option<String>,
}

impl OracleReport {
    /// Checks that exceed their tolerance, as readable lines.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for g in &self.gradient {
            if !(g.relative_error < 1e-4) {
                out.push(format!("gradient instance {}: relative error {:e}", g.instance, g.relative_error));
            }
        }
        for k in &self.kemeny {
            if !(k.fundamental_discrepancy <= 1e-8 * k.kappa.abs().max(1.0)) {
                out.push(format!("kemeny instance {}: discrepancy {:e}", k.instance, k.fundamental_discrepancy));
            }
        }
        let b = &self.bounds;
        if !b.proxy {
            for (name, v) in [
                ("stationary", b.min_stationary_slack),
                ("occupation", b.min_occupation_slack),
                ("lagrangian", b.min_lagrangian_slack),
            ] {
                if !(v >= -1e-10) {
                    out.push(format!("{name} bound slack {v:e}"));
                }
            }
        }
        for d in &self.duality {
            if let Some(gap) = d.gap {
                if !(gap >= -1e-6) {
                    out.push(format!("duality instance {}: gap {gap:e}", d.instance));
                }
            }
        }
        out
    }
}

/// Random two-agent, two-action instance with costs in `[0, 1]` and a
/// bound in `[0, 1]` that the uniform policy satisfies with a random margin,
/// so the instance is feasible.
pub fn tiny_instance(seed: u64, index: u64, num_states: usize) -> Result<TabularCmg> {
    let mut rng = rng_stream(seed, 1000 + index);
    let cmg = random_tabular(num_states, &[2, 2], vec![1.0], &mut rng)?;
    let g = exact_values(&cmg, &PolicyTable::uniform(num_states, &[2, 2]), &[0.0])?.g[0];
    let mut parts = cmg.into_parts();
    parts.bounds = vec![(g + rng.gen_range(0.0..0.1)).min(1.0)];
    TabularCmg::new(parts)
}

pub fn random_softmax_policies(rng: &mut SimRng, num_states: usize, radices: &[usize], dim: usize) -> Vec<SoftmaxPolicy> {
    radices
        .iter()
        .map(|&k| {
            let f = Arc::new(FeatureTable::generate(rng.gen(), 1, num_states * k, dim, [0.0, 1.0]));
            let theta = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            SoftmaxPolicy::new(f, k, theta, 50.0).expect("valid policy")
        })
        .collect()
}

/// `||g - fd||_inf / max(||fd||_inf, 1e-8)` against central differences
/// of the exact decomposed Lagrangian.
pub fn gradient_relative_error(
    cmg: &TabularCmg,
    policies: &[SoftmaxPolicy],
    lambda_hat: &[Vec<f64>],
) -> Result<f64> {
    let exact = exact_policy_gradient(cmg, policies, lambda_hat)?;
    let mut pols = policies.to_vec();
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for n in 0..pols.len() {
        for j in 0..pols[n].theta.len() {
            let base = pols[n].theta[j];
            pols[n].theta[j] = base + FD_STEP;
            let up = decomposed_lagrangian(cmg, &PolicyTable::from_softmax(&pols)?, lambda_hat)?;
            pols[n].theta[j] = base - FD_STEP;
            let down = decomposed_lagrangian(cmg, &PolicyTable::from_softmax(&pols)?, lambda_hat)?;
            pols[n].theta[j] = base;
            let fd = (up - down) / (2.0 * FD_STEP);
            err = err.max((fd - exact[n][j]).abs());
            scale = scale.max(fd.abs());
        }
    }
    Ok(err / scale.max(1e-8))
}

fn random_policy_table(rng: &mut SimRng, num_states: usize, radices: &[usize]) -> PolicyTable {
    let rows = radices
        .iter()
        .map(|&k| {
            (0..num_states)
                .flat_map(|_| {
                    let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
                    let z: f64 = raw.iter().sum();
                    raw.into_iter().map(move |v| v / z)
                })
                .collect()
        })
        .collect();
    PolicyTable::new(num_states, radices.to_vec(), rows).expect("normalized rows")
}

pub fn run_suite(seed: u64, configured: Option<&TabularCmg>) -> Result<OracleReport> {
    let mut rng = rng_stream(seed, 999);
    let mut gradient = Vec::new();
    let mut kemeny = Vec::new();
    for i in 0..20 {
        let cmg = tiny_instance(seed, i, 3)?;
        let pols = random_softmax_policies(&mut rng, 3, &[2, 2], 4);
        let lam: Vec<Vec<f64>> = (0..2).map(|_| vec![rng.gen_range(0.0..2.0)]).collect();
        let dq = differential_q(&cmg, &PolicyTable::from_softmax(&pols)?, &lam)?;
        gradient.push(GradientCheck {
            instance: i,
            relative_error: gradient_relative_error(&cmg, &pols, &lam)?,
            poisson_residual: dq.residual,
        });
        let chain = induced_chain(&cmg, &PolicyTable::from_softmax(&pols)?)?;
        let d = stationary_distribution(&chain)?;
        let k = kemeny_constant(&chain)?;
        let z = fundamental_matrix(&chain, &d)?;
        kemeny.push(KemenyCheck {
            instance: i,
            kappa: k.kappa,
            fundamental_discrepancy: (k.kappa - (z.trace() - 1.0)).abs(),
        });
    }

    let cmg = tiny_instance(seed, 100, 3)?;
    let kappa_star = kappa_star_on_grid(&cmg, 4, 1_000_000)?;
    let mut bounds = BoundSummary {
        pairs: 100,
        kappa_star,
        proxy: false,
        min_stationary_slack: f64::INFINITY,
        min_occupation_slack: f64::INFINITY,
        min_lagrangian_slack: f64::INFINITY,
    };
    for _ in 0..bounds.pairs {
        let a = random_policy_table(&mut rng, 3, &[2, 2]);
        let b = random_policy_table(&mut rng, 3, &[2, 2]);
        let (l1, l2) = ([rng.gen_range(0.0..5.0)], [rng.gen_range(0.0..5.0)]);
        let r = verify_distance_bounds(&cmg, &a, &b, &l1, &l2, Some(kappa_star))?;
        bounds.kappa_star = bounds.kappa_star.max(r.kappa_star);
        bounds.min_stationary_slack = bounds.min_stationary_slack.min(r.stationary_shift.slack);
        bounds.min_occupation_slack = bounds.min_occupation_slack.min(r.occupation_shift.slack);
        bounds.min_lagrangian_slack = bounds.min_lagrangian_slack.min(r.lagrangian_shift.slack);
    }

    let mut duality = Vec::new();
    for i in 0..10 {
        let cmg = tiny_instance(seed, 200 + i, 2)?;
        let est = brute_force_duality(
            &cmg,
            &DualitySettings {
                policy_resolution: 10,
                lambda_points: 41,
                lambda_max: vec![10.0],
                slater_margins: None,
                cell_budget: 100_000_000,
            },
        )?;
        duality.push(DualityCheck {
            instance: 200 + i,
            primal: est.primal,
            dual: est.dual,
            gap: est.gap,
        });
    }

    let (configured_report, configured_skipped) = match configured {
        None => (None, Some("no tabular instance configured".to_string())),
        Some(c) if c.num_pairs() > MAX_EXACT_PAIRS => (
            None,
            Some(format!(
                "{} state-action pairs exceed the exact-analysis cap of {MAX_EXACT_PAIRS}",
                c.num_pairs()
            )),
        ),
        Some(c) => {
            let radices = c.action_space().radices().to_vec();
            let pol = PolicyTable::uniform(c.num_states(), &radices);
            let e = exact_values(c, &pol, &vec![0.0; c.num_constraints()])?;
            let dq = differential_q(c, &pol, &vec![vec![0.0; c.num_constraints()]; c.num_agents()])?;
            (
                Some(ConfiguredInstance {
                    states: c.num_states(),
                    joint_actions: c.num_joint_actions(),
                    uniform_j: e.j,
                    uniform_g: e.g,
                    uniform_kappa: e.kemeny.kappa,
                    poisson_residual: dq.residual,
                }),
                None,
            )
        }
    };

    Ok(OracleReport {
        seed,
        kemeny_convention: KEMENY_CONVENTION.to_string(),
        gradient,
        kemeny,
        bounds,
        duality,
        configured: configured_report,
        configured_skipped,
    })
}
