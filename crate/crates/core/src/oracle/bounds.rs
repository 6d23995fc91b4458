use serde::{Deserialize, Serialize};

use crate::cmg::{Environment, TabularCmg};
use crate::error::{Error, Result};
use crate::oracle::grid::PolicyGrid;
use crate::oracle::markov::kemeny_constant;
use crate::oracle::values::{exact_values, induced_chain, PolicyTable};

/// `max_s sum_a |pi(a | s) - pi'(a | s)|` over joint actions.
pub fn policy_distance(cmg: &TabularCmg, pi: &PolicyTable, pi_prime: &PolicyTable) -> f64 {
    let space = cmg.action_space();
    (0..cmg.num_states())
        .map(|s| {
            let (p, q) = (pi.joint_probs(space, s), pi_prime.joint_probs(space, s));
            p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Largest Kemeny constant over a product-policy grid.
pub fn kappa_star_on_grid(cmg: &TabularCmg, resolution: usize, max_policies: u128) -> Result<f64> {
    let grid = PolicyGrid::new(cmg.num_states(), cmg.action_space().radices(), resolution)?;
    if grid.len() > max_policies {
        return Err(Error::Budget {
            what: "policy grid".into(),
            needed: grid.len(),
            budget: max_policies,
        });
    }
    let mut best = 0.0f64;
    for pol in grid.iter() {
        best = best.max(kemeny_constant(&induced_chain(cmg, &pol)?)?.kappa);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            slack: rhs - lhs,
        }
    }
}

/// Perturbation bounds between two (policy, multiplier) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub kappa_star: f64,
    /// True when `kappa_star` is only the max over the two given policies.
    pub proxy: bool,
    /// `||d - d'||_1 <= (kappa* - 1) eps`
    pub stationary_shift: BoundCheck,
    /// `||d(s,a) - d'(s,a)||_1 <= kappa* eps`
    pub occupation_shift: BoundCheck,
    /// `L(pi, lambda) - L(pi', lambda') <= ||lambda - lambda'||_1 + (1 + K ||lambda'||_1) ||d(s,a) - d'(s,a)||_1`
    pub lagrangian_shift: BoundCheck,
}

pub fn verify_distance_bounds(
    cmg: &TabularCmg,
    pi: &PolicyTable,
    pi_prime: &PolicyTable,
    lambda: &[f64],
    lambda_prime: &[f64],
    enumerated_kappa_star: Option<f64>,
) -> Result<BoundReport> {
    let e = exact_values(cmg, pi, lambda)?;
    let e2 = exact_values(cmg, pi_prime, lambda_prime)?;
    let epsilon = policy_distance(cmg, pi, pi_prime);
    let local = e.kemeny.kappa.max(e2.kemeny.kappa);
    let (kappa_star, proxy) = match enumerated_kappa_star {
        Some(k) => (k.max(local), false),
        None => (local, true),
    };
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let d_state = l1(&e.stationary, &e2.stationary);
    let d_occ = l1(&e.occupation, &e2.occupation);
    let k = cmg.num_constraints() as f64;
    let lam_diff = l1(lambda, lambda_prime);
    let lam_prime_norm: f64 = lambda_prime.iter().map(|v| v.abs()).sum();
    Ok(BoundReport {
        epsilon,
        kappa_star,
        proxy,
        stationary_shift: BoundCheck::new(d_state, (kappa_star - 1.0) * epsilon),
        occupation_shift: BoundCheck::new(d_occ, kappa_star * epsilon),
        lagrangian_shift: BoundCheck::new(
            e.lagrangian - e2.lagrangian,
            lam_diff + (1.0 + k * lam_prime_norm) * d_occ,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmg::{random_tabular, rng_stream};

    #[test]
    fn identical_inputs_have_zero_left_sides() {
        let cmg = random_tabular(3, &[2, 2], vec![0.5], &mut rng_stream(1, 0)).unwrap();
        let pol = PolicyTable::uniform(3, &[2, 2]);
        let r = verify_distance_bounds(&cmg, &pol, &pol, &[0.4], &[0.4], None).unwrap();
        assert!(r.proxy);
        assert_eq!(r.epsilon, 0.0);
        for b in [r.stationary_shift, r.occupation_shift, r.lagrangian_shift] {
            assert_eq!(b.lhs, 0.0);
            assert!(b.slack >= 0.0);
        }
    }

    #[test]
    fn zero_reference_multiplier_reduces_rhs() {
        let cmg = random_tabular(3, &[2, 2], vec![0.5], &mut rng_stream(2, 0)).unwrap();
        let a = PolicyTable::uniform(3, &[2, 2]);
        let b = PolicyTable::new(3, vec![2, 2], vec![vec![0.9, 0.1, 0.4, 0.6, 0.2, 0.8]; 2]).unwrap();
        let r = verify_distance_bounds(&cmg, &a, &b, &[1.5], &[0.0], Some(3.0)).unwrap();
        assert!(!r.proxy);
        assert!((r.lagrangian_shift.rhs - (1.5 + r.occupation_shift.lhs)).abs() < 1e-15);
    }

    #[test]
    fn policy_distance_of_deterministic_opposites() {
        let cmg = random_tabular(1, &[2], vec![], &mut rng_stream(3, 0)).unwrap();
        let a = PolicyTable::new(1, vec![2], vec![vec![1.0, 0.0]]).unwrap();
        let b = PolicyTable::new(1, vec![2], vec![vec![0.0, 1.0]]).unwrap();
        assert_eq!(policy_distance(&cmg, &a, &b), 2.0);
    }
}
