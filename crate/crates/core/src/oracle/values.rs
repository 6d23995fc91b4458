use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::agent::local_lagrangian_cost;
use crate::cmg::{Environment, JointActionSpace, TabularCmg};
use crate::error::{Error, Result};
use crate::fa::{score, SoftmaxPolicy};
use crate::oracle::markov::{fundamental_matrix, kemeny_constant, stationary_distribution, ChainMatrix, Kemeny};

/// Tolerance on the average-cost Poisson equation residual.
pub const POISSON_RESIDUAL_TOL: f64 = 1e-8;
const POLICY_ROW_TOL: f64 = 1e-12;

/// Explicit per-agent conditionals `pi_n(a_n | s)`; the joint policy is
/// their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    num_states: usize,
    radices: Vec<usize>,
    /// `rows[n][s * |A_n| + a_n]`
    rows: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(num_states: usize, radices: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != radices.len() {
            return Err(Error::shape("policy table agents", radices.len(), rows.len()));
        }
        for (n, (row, &k)) in rows.iter().zip(&radices).enumerate() {
            if row.len() != num_states * k {
                return Err(Error::shape(format!("policy table of agent {n}"), num_states * k, row.len()));
            }
            for s in 0..num_states {
                let p = &row[s * k..(s + 1) * k];
                if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::config(format!("agent {n} state {s}: invalid probability")));
                }
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > POLICY_ROW_TOL {
                    return Err(Error::config(format!("agent {n} state {s}: probabilities sum to {sum}")));
                }
            }
        }
        Ok(Self {
            num_states,
            radices,
            rows,
        })
    }

    pub fn uniform(num_states: usize, radices: &[usize]) -> Self {
        let rows = radices
            .iter()
            .map(|&k| vec![1.0 / k as f64; num_states * k])
            .collect();
        Self {
            num_states,
            radices: radices.to_vec(),
            rows,
        }
    }

    pub fn from_softmax(policies: &[SoftmaxPolicy]) -> Result<Self> {
        let num_states = policies.first().map_or(0, SoftmaxPolicy::num_states);
        let radices = policies.iter().map(SoftmaxPolicy::num_actions).collect();
        let rows = policies
            .iter()
            .map(|p| (0..p.num_states()).flat_map(|s| p.probs(s)).collect())
            .collect();
        Self::new(num_states, radices, rows)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_agents(&self) -> usize {
        self.radices.len()
    }

    pub fn agent_probs(&self, agent: usize, s: usize) -> &[f64] {
        let k = self.radices[agent];
        &self.rows[agent][s * k..(s + 1) * k]
    }

    /// Product probabilities over flattened joint actions at `s`.
    pub fn joint_probs(&self, space: &JointActionSpace, s: usize) -> Vec<f64> {
        (0..space.size())
            .map(|ja| {
                let mut rem = ja;
                let mut p = 1.0;
                for n in 0..self.radices.len() {
                    let stride = space.stride(n);
                    p *= self.agent_probs(n, s)[rem / stride];
                    rem %= stride;
                }
                p
            })
            .collect()
    }

    fn check_against(&self, cmg: &TabularCmg) -> Result<()> {
        if self.num_states != cmg.num_states() || self.radices != cmg.action_space().radices() {
            return Err(Error::config("policy table does not match the CMG's states or action spaces"));
        }
        Ok(())
    }
}

/// `P_pi(s, s') = sum_a pi(a | s) P(s' | s, a)`
pub fn induced_chain(cmg: &TabularCmg, policy: &PolicyTable) -> Result<ChainMatrix> {
    policy.check_against(cmg)?;
    let ns = cmg.num_states();
    let space = cmg.action_space();
    let mut data = vec![0.0; ns * ns];
    for s in 0..ns {
        for (ja, p) in policy.joint_probs(space, s).into_iter().enumerate() {
            for (t, q) in cmg.transition_row(s, ja).iter().enumerate() {
                data[s * ns + t] += p * q;
            }
        }
    }
    ChainMatrix::new(ns, data)
}

/// `d(s, a) = d(s) pi(a | s)`, flattened as `s * |A| + a`.
pub fn occupation_measure(cmg: &TabularCmg, policy: &PolicyTable, stationary: &[f64]) -> Vec<f64> {
    let space = cmg.action_space();
    (0..cmg.num_states())
        .flat_map(|s| {
            let d = stationary[s];
            policy.joint_probs(space, s).into_iter().map(move |p| d * p)
        })
        .collect()
}

/// Exact long-run quantities of one product policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEval {
    pub stationary: Vec<f64>,
    pub occupation: Vec<f64>,
    pub j: f64,
    pub g: Vec<f64>,
    pub j_agents: Vec<f64>,
    /// `g_agents[n][k]`
    pub g_agents: Vec<Vec<f64>>,
    pub lagrangian: f64,
    pub kemeny: Kemeny,
}

pub fn exact_values(cmg: &TabularCmg, policy: &PolicyTable, lambda: &[f64]) -> Result<ExactEval> {
    let k = cmg.num_constraints();
    if lambda.len() != k {
        return Err(Error::shape("lambda", k, lambda.len()));
    }
    let chain = induced_chain(cmg, policy)?;
    let stationary = stationary_distribution(&chain)?;
    let kemeny = kemeny_constant(&chain)?;
    let occupation = occupation_measure(cmg, policy, &stationary);
    let na = cmg.num_joint_actions();
    let n = cmg.num_agents();
    let mut j_agents = vec![0.0; n];
    let mut g_agents = vec![vec![0.0; k]; n];
    for (idx, &w) in occupation.iter().enumerate() {
        let (s, ja) = (idx / na, idx % na);
        for i in 0..n {
            j_agents[i] += w * cmg.cost(i, s, ja);
            for c in 0..k {
                g_agents[i][c] += w * cmg.constraint_cost(i, c, s, ja);
            }
        }
    }
    let j = j_agents.iter().sum::<f64>() / n as f64;
    let g: Vec<f64> = (0..k)
        .map(|c| g_agents.iter().map(|g| g[c]).sum::<f64>() / n as f64)
        .collect();
    let lagrangian = j + lambda
        .iter()
        .zip(&g)
        .zip(cmg.bounds())
        .map(|((l, g), b)| l * (g - b))
        .sum::<f64>();
    Ok(ExactEval {
        stationary,
        occupation,
        j,
        g,
        j_agents,
        g_agents,
        lagrangian,
        kemeny,
    })
}

/// `L(s, a) = (1/N) sum_n [c_n(s, a) + lambda_n . (g_n(s, a) - b)]`
pub fn mean_local_lagrangian(cmg: &TabularCmg, lambda_hat: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = cmg.num_agents();
    let k = cmg.num_constraints();
    if lambda_hat.len() != n {
        return Err(Error::shape("per-agent multipliers", n, lambda_hat.len()));
    }
    if let Some(l) = lambda_hat.iter().find(|l| l.len() != k) {
        return Err(Error::shape("agent multiplier", k, l.len()));
    }
    let na = cmg.num_joint_actions();
    let mut g = vec![0.0; k];
    Ok((0..cmg.num_pairs())
        .map(|idx| {
            let (s, ja) = (idx / na, idx % na);
            (0..n)
                .map(|i| {
                    for (c, gc) in g.iter_mut().enumerate() {
                        *gc = cmg.constraint_cost(i, c, s, ja);
                    }
                    local_lagrangian_cost(cmg.cost(i, s, ja), &g, &lambda_hat[i], cmg.bounds())
                })
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Decomposed Lagrangian: `sum_{s,a} d(s, a) L(s, a)` with per-agent multipliers.
pub fn decomposed_lagrangian(cmg: &TabularCmg, policy: &PolicyTable, lambda_hat: &[Vec<f64>]) -> Result<f64> {
    let table = mean_local_lagrangian(cmg, lambda_hat)?;
    let chain = induced_chain(cmg, policy)?;
    let d = stationary_distribution(&chain)?;
    let occ = occupation_measure(cmg, policy, &d);
    Ok(occ.iter().zip(&table).map(|(w, l)| w * l).sum())
}

/// Solution of the average-cost Poisson equation, normalized so that
/// `sum_{s,a} d(s, a) Q(s, a) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialQ {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub average: f64,
    pub stationary: Vec<f64>,
    pub residual: f64,
}

pub fn differential_q(cmg: &TabularCmg, policy: &PolicyTable, lambda_hat: &[Vec<f64>]) -> Result<DifferentialQ> {
    let table = mean_local_lagrangian(cmg, lambda_hat)?;
    let chain = induced_chain(cmg, policy)?;
    let d = stationary_distribution(&chain)?;
    let ns = cmg.num_states();
    let na = cmg.num_joint_actions();
    let space = cmg.action_space();
    let joint: Vec<Vec<f64>> = (0..ns).map(|s| policy.joint_probs(space, s)).collect();
    let r: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| joint[s][a] * table[s * na + a]).sum())
        .collect();
    let average: f64 = d.iter().zip(&r).map(|(d, r)| d * r).sum();
    let z = fundamental_matrix(&chain, &d)?;
    let v = z * DVector::from_iterator(ns, r.iter().map(|r| r - average));
    let v: Vec<f64> = v.iter().copied().collect();
    let q: Vec<f64> = (0..ns * na)
        .map(|idx| {
            let (s, a) = (idx / na, idx % na);
            let next: f64 = cmg.transition_row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            table[idx] - average + next
        })
        .collect();
    let residual = (0..ns * na)
        .map(|idx| {
            let (s, a) = (idx / na, idx % na);
            let next: f64 = cmg
                .transition_row(s, a)
                .iter()
                .enumerate()
                .map(|(t, p)| p * (0..na).map(|b| joint[t][b] * q[t * na + b]).sum::<f64>())
                .sum();
            (q[idx] - (table[idx] - average + next)).abs()
        })
        .fold(0.0, f64::max);
    if residual > POISSON_RESIDUAL_TOL {
        return Err(Error::analysis(format!("Poisson residual {residual:e} exceeds tolerance")));
    }
    Ok(DifferentialQ {
        q,
        v,
        average,
        stationary: d,
        residual,
    })
}

/// Exact `grad_{theta_n}` of the decomposed Lagrangian for every agent:
/// `sum_{s,a} d(s) pi(a | s) psi_n(s, a_n) A_n(s, a)`.
pub fn exact_policy_gradient(
    cmg: &TabularCmg,
    policies: &[SoftmaxPolicy],
    lambda_hat: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let table = PolicyTable::from_softmax(policies)?;
    let dq = differential_q(cmg, &table, lambda_hat)?;
    let space = cmg.action_space();
    let na = space.size();
    let mut grads: Vec<Vec<f64>> = policies.iter().map(|p| vec![0.0; p.theta.len()]).collect();
    for s in 0..cmg.num_states() {
        let joint = table.joint_probs(space, s);
        for (a, &pa) in joint.iter().enumerate() {
            let w = dq.stationary[s] * pa;
            if w == 0.0 {
                continue;
            }
            let action = space.decode(a)?;
            for (n, pol) in policies.iter().enumerate() {
                let stride = space.stride(n);
                let base = a - action.0[n] * stride;
                let own = table.agent_probs(n, s);
                let baseline: f64 = own
                    .iter()
                    .enumerate()
                    .map(|(b, p)| p * dq.q[s * na + base + b * stride])
                    .sum();
                let adv = dq.q[s * na + a] - baseline;
                let psi = score(pol.features(), &pol.theta, pol.num_actions(), s, action.0[n]);
                for (g, p) in grads[n].iter_mut().zip(psi) {
                    *g += w * adv * p;
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmg::{random_tabular, rng_stream, TabularParts};

    fn instance(seed: u64, k: usize) -> TabularCmg {
        random_tabular(3, &[2, 2], vec![0.5; k], &mut rng_stream(seed, 0)).unwrap()
    }

    #[test]
    fn zero_multiplier_gives_objective() {
        let cmg = instance(1, 2);
        let e = exact_values(&cmg, &PolicyTable::uniform(3, &[2, 2]), &[0.0, 0.0]).unwrap();
        assert_eq!(e.lagrangian, e.j);
        assert!((e.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((e.occupation.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_identity_and_decomposition() {
        let cmg = instance(2, 2);
        let pol = PolicyTable::new(
            3,
            vec![2, 2],
            vec![vec![0.3, 0.7, 0.5, 0.5, 0.9, 0.1], vec![0.2, 0.8, 0.6, 0.4, 0.5, 0.5]],
        )
        .unwrap();
        let lambda = [0.7, 1.9];
        let e = exact_values(&cmg, &pol, &lambda).unwrap();
        let direct = e.j + lambda[0] * (e.g[0] - 0.5) + lambda[1] * (e.g[1] - 0.5);
        assert!((e.lagrangian - direct).abs() < 1e-12);
        let dec = decomposed_lagrangian(&cmg, &pol, &[lambda.to_vec(), lambda.to_vec()]).unwrap();
        assert!((dec - e.lagrangian).abs() < 1e-12);
    }

    #[test]
    fn constant_cost_gives_constant_objective() {
        let mut parts = instance(3, 0).into_parts();
        parts.cost.iter_mut().for_each(|c| *c = 0.3);
        let cmg = TabularCmg::new(parts).unwrap();
        for pol in [
            PolicyTable::uniform(3, &[2, 2]),
            PolicyTable::new(3, vec![2, 2], vec![vec![1.0, 0.0, 0.2, 0.8, 0.0, 1.0]; 2]).unwrap(),
        ] {
            let e = exact_values(&cmg, &pol, &[]).unwrap();
            assert!((e.j - 0.3).abs() < 1e-12);
            let dq = differential_q(&cmg, &pol, &[vec![], vec![]]).unwrap();
            assert!(dq.q.iter().all(|q| q.abs() < 1e-12));
        }
    }

    #[test]
    fn two_state_poisson_by_hand() {
        // one agent, one action; r = (1, 0); V = (5/18, -25/18)
        let cmg = TabularCmg::new(TabularParts {
            num_states: 2,
            actions_per_agent: vec![1],
            transition: vec![0.9, 0.1, 0.5, 0.5],
            cost: vec![1.0, 0.0],
            constraint_cost: vec![],
            bounds: vec![],
            cost_noise: 0.0,
        })
        .unwrap();
        let dq = differential_q(&cmg, &PolicyTable::uniform(2, &[1]), &[vec![]]).unwrap();
        assert!((dq.average - 5.0 / 6.0).abs() < 1e-12);
        assert!((dq.q[0] - 5.0 / 18.0).abs() < 1e-8);
        assert!((dq.q[1] + 25.0 / 18.0).abs() < 1e-8);
    }

    #[test]
    fn poisson_residual_and_normalization() {
        for seed in 0..10 {
            let cmg = instance(seed, 1);
            let pol = PolicyTable::uniform(3, &[2, 2]);
            let dq = differential_q(&cmg, &pol, &[vec![0.4], vec![1.3]]).unwrap();
            assert!(dq.residual < POISSON_RESIDUAL_TOL);
            let d = occupation_measure(&cmg, &pol, &dq.stationary);
            let mean: f64 = d.iter().zip(&dq.q).map(|(d, q)| d * q).sum();
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn action_independent_instance_has_zero_gradient() {
        let mut parts = instance(4, 1).into_parts();
        let (ns, na) = (3, 4);
        for s in 0..ns {
            for a in 1..na {
                for t in 0..ns {
                    parts.transition[(s * na + a) * ns + t] = parts.transition[s * na * ns + t];
                }
            }
        }
        for table in [&mut parts.cost, &mut parts.constraint_cost] {
            for chunk in table.chunks_mut(na) {
                let v = chunk[0];
                chunk.iter_mut().for_each(|c| *c = v);
            }
        }
        let cmg = TabularCmg::new(parts).unwrap();
        let policies: Vec<SoftmaxPolicy> = (0..2)
            .map(|n| {
                let f = std::sync::Arc::new(crate::fa::FeatureTable::generate(3, n + 1, 6, 4, [0.0, 1.0]));
                SoftmaxPolicy::new(f, 2, vec![0.0; 4], 50.0).unwrap()
            })
            .collect();
        let g = exact_policy_gradient(&cmg, &policies, &[vec![0.5], vec![0.5]]).unwrap();
        assert!(g.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let cmg = instance(5, 1);
        assert!(exact_values(&cmg, &PolicyTable::uniform(2, &[2, 2]), &[0.0]).is_err());
        assert!(exact_values(&cmg, &PolicyTable::uniform(3, &[2, 2]), &[]).is_err());
    }
}
