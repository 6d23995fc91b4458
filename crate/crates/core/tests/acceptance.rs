//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.
//!
//! `cargo test -p cmarl-core --test acceptance`

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use cmarl_core::agent::dual_critic_update;
use cmarl_core::cmg::{random_tabular, rng_stream, sample_categorical, Environment, JointAction, SimRng, TabularCmg};
use cmarl_core::fa::{FeatureSpec, FeatureTable, SoftmaxPolicy};
use cmarl_core::io::{parse_config_str, run_experiment, LoadedConfig, LAMBDA_AGENTS_FILE, METRICS_FILE};
use cmarl_core::network::{MixingMatrix, Topology};
use cmarl_core::oracle::suite::tiny_instance;
use cmarl_core::oracle::{
    brute_force_duality, decomposed_lagrangian, exact_policy_gradient, exact_values, kappa_star_on_grid,
    verify_distance_bounds, DualitySettings, PolicyTable,
};
use cmarl_core::trainer::{TrainConfig, Trainer, TrainingSummary};

const SEED: u64 = 7;

// pinned tolerances
const CONSENSUS_TOL: f64 = 0.05;
const FEASIBILITY_GAP_TOL: f64 = 0.05;
const CRITIC_RELATIVE_TOL: f64 = 0.05;
const GRADIENT_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const DUAL_CRITIC_TOL: f64 = 0.02;
const STOCHASTIC_TOL: f64 = 1e-12;
const CONTRACTION_TOL: f64 = 1e-12;
const DUALITY_GAP_TOL: f64 = -1e-6;
const SLACK_TOL: f64 = -1e-10;

const MARKET_BUDGET: Duration = Duration::from_secs(600);
const GRADIENT_BUDGET: Duration = Duration::from_secs(30);
const BOUNDS_BUDGET: Duration = Duration::from_secs(300);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct MarketRun {
    summary: TrainingSummary,
    lambda_max: f64,
    num_agents: usize,
    elapsed: Duration,
    metrics: Vec<u8>,
    lambdas: Vec<u8>,
}

fn market_run(dir: &Path) -> MarketRun {
    let text = format!(r#"{{"environment": "cournot-defaults", "seed": {SEED}}}"#);
    let path = dir.join("experiment.json");
    std::fs::write(&path, &text).unwrap();
    let config = parse_config_str(&text, &path).unwrap().resolve(dir).unwrap();
    let loaded = LoadedConfig {
        path,
        bytes: text.into_bytes(),
        config,
    };
    let out = dir.join("run");
    let start = Instant::now();
    let res = run_experiment(&loaded, &out, false).unwrap();
    let elapsed = start.elapsed();
    let summary = res.result.unwrap();
    MarketRun {
        summary,
        lambda_max: loaded.config.trainer.lambda_max.as_ref().unwrap()[0],
        num_agents: 5,
        elapsed,
        metrics: std::fs::read(out.join(METRICS_FILE)).unwrap(),
        lambdas: std::fs::read(out.join(LAMBDA_AGENTS_FILE)).unwrap(),
    }
}

fn criterion_1(run: &MarketRun) -> Outcome {
    let s = &run.summary;
    let pass = s.steps == 200_000
        && s.lambda.disagreement <= CONSENSUS_TOL
        && s.lambda_max_pairwise <= CONSENSUS_TOL
        && run.elapsed <= MARKET_BUDGET;
    outcome(
        pass,
        format!(
            "steps={} |lambda_perp|={:.3e} max pairwise={:.3e} (tol {CONSENSUS_TOL}), {:.1}s",
            s.steps,
            s.lambda.disagreement,
            s.lambda_max_pairwise,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(run: &MarketRun) -> Outcome {
    let s = &run.summary;
    let gap = s.tail.g_gap_mean[0];
    let lam = s.lambda.mean[0];
    let pass = gap <= FEASIBILITY_GAP_TOL && lam > 0.0 && lam < run.lambda_max;
    outcome(
        pass,
        format!(
            "tail mean <G>-b={gap:.4e} over {} iterations (tol {FEASIBILITY_GAP_TOL}), <lambda>={lam:.4} in (0, {})",
            s.tail.iterations, run.lambda_max
        ),
    )
}

fn criterion_3(run: &MarketRun) -> Outcome {
    let c = &run.summary.critic;
    let mean_norm = c.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let limit = CRITIC_RELATIVE_TOL * mean_norm * (run.num_agents as f64).sqrt();
    outcome(
        c.disagreement <= limit,
        format!("|w_perp|={:.3e} <= {limit:.3e} (5% of |<w>| sqrt N)", c.disagreement),
    )
}

fn random_policies(rng: &mut SimRng, num_states: usize, radices: &[usize], dim: usize) -> Vec<SoftmaxPolicy> {
    radices
        .iter()
        .map(|&k| {
            let f = Arc::new(FeatureTable::generate(rng.gen(), 1, num_states * k, dim, [0.0, 1.0]));
            let theta = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            SoftmaxPolicy::new(f, k, theta, 50.0).unwrap()
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_stream(SEED, 4000);
    let mut worst: f64 = 0.0;
    let instances = 20;
    for i in 0..instances {
        let cmg = tiny_instance(SEED, 4000 + i, 3).unwrap();
        let mut pols = random_policies(&mut rng, 3, &[2, 2], 4);
        let lam: Vec<Vec<f64>> = (0..2).map(|_| vec![rng.gen_range(0.0..3.0)]).collect();
        let exact = exact_policy_gradient(&cmg, &pols, &lam).unwrap();
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for n in 0..2 {
            for j in 0..4 {
                let base = pols[n].theta[j];
                pols[n].theta[j] = base + FD_STEP;
                let up = decomposed_lagrangian(&cmg, &PolicyTable::from_softmax(&pols).unwrap(), &lam).unwrap();
                pols[n].theta[j] = base - FD_STEP;
                let down = decomposed_lagrangian(&cmg, &PolicyTable::from_softmax(&pols).unwrap(), &lam).unwrap();
                pols[n].theta[j] = base;
                let fd = (up - down) / (2.0 * FD_STEP);
                err = err.max((fd - exact[n][j]).abs());
                scale = scale.max(fd.abs());
            }
        }
        worst = worst.max(err / scale.max(1e-8));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < GRADIENT_REL_TOL && elapsed < GRADIENT_BUDGET,
        format!(
            "{instances} instances, max relative error {worst:.3e} (tol {GRADIENT_REL_TOL:e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = rng_stream(SEED, 5000);
    let cmg = random_tabular(3, &[2, 2], vec![0.5, 0.5], &mut rng).unwrap();
    let exact = exact_values(&cmg, &PolicyTable::uniform(3, &[2, 2]), &[0.0, 0.0]).unwrap();
    let mut env_rng = rng_stream(SEED, 5001);
    let mut act_rng = rng_stream(SEED, 5002);
    let mut g_hat = vec![vec![0.0; 2]; 2];
    let mut s = 0;
    for t in 0..100_000u64 {
        let a = JointAction((0..2).map(|_| sample_categorical(&[0.5, 0.5], &mut act_rng)).collect());
        let out = cmg.step(s, &a, &mut env_rng).unwrap();
        let alpha = 1.0 / (t as f64 + 1.0).powf(0.6);
        for n in 0..2 {
            g_hat[n] = dual_critic_update(&g_hat[n], &out.constraint_costs[n], alpha);
        }
        s = out.next_state;
    }
    let worst = (0..2)
        .flat_map(|n| (0..2).map(move |k| (n, k)))
        .map(|(n, k)| (g_hat[n][k] - exact.g_agents[n][k]).abs())
        .fold(0.0, f64::max);
    outcome(
        worst < DUAL_CRITIC_TOL,
        format!("max |G_hat - G| = {worst:.3e} after 1e5 steps (tol {DUAL_CRITIC_TOL})"),
    )
}

fn disagreement(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>().sqrt()
}

fn criterion_6() -> Outcome {
    let mut rng = rng_stream(SEED, 6000);
    let mut worst_stoch: f64 = 0.0;
    let mut worst_rho: f64 = 0.0;
    let mut violations = 0;
    let mut trials = 0;
    for n in [3usize, 5, 8] {
        for topo in [Topology::complete(n), Topology::ring(n), Topology::star(n)] {
            let c = MixingMatrix::metropolis(&topo.unwrap()).unwrap();
            for i in 0..n {
                let row: f64 = (0..n).map(|j| c.entry(i, j)).sum();
                let col: f64 = (0..n).map(|j| c.entry(j, i)).sum();
                worst_stoch = worst_stoch.max((row - 1.0).abs()).max((col - 1.0).abs());
            }
            worst_rho = worst_rho.max(c.rho());
            for _ in 0..100 {
                let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-10.0..10.0)]).collect();
                let y = c.mix(&x).unwrap();
                let before = disagreement(&x.iter().map(|v| v[0]).collect::<Vec<_>>());
                let after = disagreement(&y.iter().map(|v| v[0]).collect::<Vec<_>>());
                trials += 1;
                if after > before * (1.0 + CONTRACTION_TOL) {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        worst_stoch <= STOCHASTIC_TOL && worst_rho < 1.0 && violations == 0,
        format!(
            "row/column error {worst_stoch:.1e} (tol {STOCHASTIC_TOL:e}), max rho {worst_rho:.4}, {violations}/{trials} expansions"
        ),
    )
}

fn random_policy_table(rng: &mut SimRng, num_states: usize) -> PolicyTable {
    let rows = (0..2)
        .map(|_| {
            (0..num_states)
                .flat_map(|_| {
                    let p: f64 = rng.gen();
                    [p, 1.0 - p]
                })
                .collect()
        })
        .collect();
    PolicyTable::new(num_states, vec![2, 2], rows).unwrap()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut min_gap = f64::INFINITY;
    for i in 0..10 {
        let cmg = tiny_instance(SEED, 7000 + i, 2).unwrap();
        let est = brute_force_duality(
            &cmg,
            &DualitySettings {
                policy_resolution: 10,
                lambda_points: 41,
                lambda_max: vec![10.0],
                slater_margins: None,
                cell_budget: u128::MAX,
            },
        )
        .unwrap();
        min_gap = min_gap.min(est.gap.unwrap_or(f64::NEG_INFINITY));
    }
    let cmg = tiny_instance(SEED, 7100, 3).unwrap();
    let kappa_star = kappa_star_on_grid(&cmg, 4, u128::MAX).unwrap();
    let mut rng = rng_stream(SEED, 7200);
    let mut min_slack = f64::INFINITY;
    for _ in 0..100 {
        let a = random_policy_table(&mut rng, 3);
        let b = random_policy_table(&mut rng, 3);
        let (l1, l2) = ([rng.gen_range(0.0..5.0)], [rng.gen_range(0.0..5.0)]);
        let r = verify_distance_bounds(&cmg, &a, &b, &l1, &l2, Some(kappa_star)).unwrap();
        min_slack = min_slack
            .min(r.stationary_shift.slack)
            .min(r.occupation_shift.slack)
            .min(r.lagrangian_shift.slack);
    }
    let elapsed = start.elapsed();
    outcome(
        min_gap >= DUALITY_GAP_TOL && min_slack >= SLACK_TOL && elapsed < BOUNDS_BUDGET,
        format!(
            "min gap {min_gap:.3e} on 10 instances (tol {DUALITY_GAP_TOL:e}), min slack {min_slack:.3e} on 100 pairs \
             (tol {SLACK_TOL:e}, kappa*={kappa_star:.4}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Snapshot of the learner: per-agent `(theta, w, average cost)` and `J`.
#[derive(Debug, PartialEq)]
struct Snapshot {
    step: u64,
    agents: Vec<(Vec<f64>, Vec<f64>, f64)>,
    j: f64,
    state: usize,
    action: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(table: &FeatureTable, theta: &[f64], k: usize, s: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..k).map(|a| dot(&table.row(s * k + a), theta)).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn draw(p: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last = i;
        }
        acc += pi;
        if u < acc {
            return i;
        }
    }
    last
}

/// Plain networked actor-critic with stage cost `l = c`, written from the
/// update equations alone: TD(0) critic with average-cost tracking,
/// advantage actor with softmax score, Metropolis gossip on a complete graph.
fn reference_actor_critic(env: &TabularCmg, spec: &FeatureSpec, seed: u64, steps: u64, every: u64) -> Vec<Snapshot> {
    let n = env.num_agents();
    let ns = env.num_states();
    let radices = env.action_space().radices().to_vec();
    let size: usize = radices.iter().product();
    let stride: Vec<usize> = (0..n).map(|i| radices[i + 1..].iter().product()).collect();
    let encode = |a: &[usize]| a.iter().zip(&stride).map(|(x, s)| x * s).sum::<usize>();
    let critic = spec.critic_table(ns * size);
    let pol: Vec<FeatureTable> = (0..n).map(|i| spec.policy_table(i, ns, radices[i])).collect();

    let off = 1.0 / (1 + (n - 1)) as f64;
    let mut c = vec![vec![off; n]; n];
    for i in 0..n {
        c[i][i] = 1.0 - (0..n).filter(|&j| j != i).map(|_| off).sum::<f64>();
    }

    let mut env_rng = rng_stream(seed, 0);
    let mut agent_rng: Vec<SimRng> = (0..n).map(|i| rng_stream(seed, 2 + i as u64)).collect();
    let mut theta = vec![vec![0.0; spec.policy_dim]; n];
    let mut w = vec![vec![0.0; spec.critic_dim]; n];
    let mut avg = vec![0.0; n];
    let mut j = 0.0;
    let mut s = env_rng.gen_range(0..ns);
    let mut a: Vec<usize> = (0..n)
        .map(|i| draw(&softmax(&pol[i], &theta[i], radices[i], s), &mut agent_rng[i]))
        .collect();

    let mut snaps = Vec::new();
    for t in 0..steps {
        let x = t as f64 + 1.0;
        let alpha = 1.0 / x.powf(0.6);
        let beta = 1.0 / x.powf(0.75);
        let out = env.step(s, &JointAction(a.clone()), &mut env_rng).unwrap();
        let s2 = out.next_state;
        let l = out.costs.clone();
        let avg_new: Vec<f64> = (0..n).map(|i| avg[i] + alpha * (l[i] - avg[i])).collect();
        let a2: Vec<usize> = (0..n)
            .map(|i| draw(&softmax(&pol[i], &theta[i], radices[i], s2), &mut agent_rng[i]))
            .collect();
        let phi = critic.row(s * size + encode(&a)).into_owned();
        let phi2 = critic.row(s2 * size + encode(&a2)).into_owned();
        let w_tilde: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let delta = l[i] - avg[i] + dot(&phi2, &w[i]) - dot(&phi, &w[i]);
                w[i].iter().zip(&phi).map(|(wv, f)| wv + alpha * delta * f).collect()
            })
            .collect();
        let theta_new: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let k = radices[i];
                let p = softmax(&pol[i], &theta[i], k, s);
                let base = encode(&a) - a[i] * stride[i];
                let q = |b: usize| dot(&critic.row(s * size + base + b * stride[i]), &w[i]);
                let baseline: f64 = p.iter().enumerate().map(|(b, pb)| pb * q(b)).sum();
                let adv = q(a[i]) - baseline;
                let mut psi = pol[i].row(s * k + a[i]).into_owned();
                for (b, pb) in p.iter().enumerate() {
                    for (o, f) in psi.iter_mut().zip(pol[i].row(s * k + b).iter()) {
                        *o -= pb * f;
                    }
                }
                theta[i]
                    .iter()
                    .zip(&psi)
                    .map(|(th, ps)| (th - beta * adv * ps).clamp(-50.0, 50.0))
                    .collect()
            })
            .collect();
        let mut w_new = vec![vec![0.0; spec.critic_dim]; n];
        for i in 0..n {
            for m in 0..n {
                for (o, v) in w_new[i].iter_mut().zip(&w_tilde[m]) {
                    *o += c[i][m] * v;
                }
            }
        }
        let mean_cost = out.costs.iter().sum::<f64>() / n as f64;
        j += alpha * (mean_cost - j);
        theta = theta_new;
        w = w_new;
        avg = avg_new;
        s = s2;
        a = a2;
        if (t + 1) % every == 0 {
            snaps.push(Snapshot {
                step: t + 1,
                agents: (0..n).map(|i| (theta[i].clone(), w[i].clone(), avg[i])).collect(),
                j,
                state: s,
                action: a.clone(),
            });
        }
    }
    snaps
}

fn criterion_8() -> Outcome {
    let mut rng = rng_stream(SEED, 8000);
    let env = random_tabular(4, &[3, 2], Vec::new(), &mut rng).unwrap();
    let steps = 10_000;
    let every = 500;
    let mut config = TrainConfig::with_defaults(SEED, steps, 0);
    config.features.critic_dim = 8;
    config.features.policy_dim = 5;
    let reference = reference_actor_critic(&env, &config.features, SEED, steps, every);

    let mut trainer = Trainer::new(&env, config).unwrap();
    let mut ours = Vec::new();
    for t in 1..=steps {
        trainer.step().unwrap();
        if t % every == 0 {
            let st = trainer.state();
            ours.push(Snapshot {
                step: st.step,
                agents: st.agents.iter().map(|a| (a.theta.clone(), a.w.clone(), a.avg_cost)).collect(),
                j: st.j,
                state: st.state,
                action: st.action.clone(),
            });
        }
    }
    let first_diff = ours.iter().zip(&reference).position(|(a, b)| a != b);
    let moved = ours.last().is_some_and(|s| s.agents.iter().any(|a| a.0.iter().any(|v| *v != 0.0)));
    outcome(
        first_diff.is_none() && ours.len() == reference.len() && moved,
        match first_diff {
            None => format!("{} snapshots over {steps} steps bit-identical", ours.len()),
            Some(i) => format!("diverged by step {}", ours[i].step),
        },
    )
}

fn criterion_9(first: &MarketRun, second: &MarketRun) -> Outcome {
    let same = first.metrics == second.metrics && first.lambdas == second.lambdas;
    outcome(
        same && !first.metrics.is_empty(),
        format!(
            "metrics.csv {} bytes, lambda_agents.csv {} bytes, identical={same}",
            first.metrics.len(),
            first.lambdas.len()
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("a")).unwrap();
    std::fs::create_dir_all(dir.path().join("b")).unwrap();
    let first = market_run(&dir.path().join("a"));

    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "multiplier consensus", criterion_1(&first)),
        (2, "feasibility trend", criterion_2(&first)),
        (3, "critic consensus", criterion_3(&first)),
        (4, "gradient oracle", criterion_4()),
        (5, "dual critic convergence", criterion_5()),
        (6, "mixing matrix contract", criterion_6()),
        (7, "weak duality and bounds", criterion_7()),
        (8, "unconstrained reduction", criterion_8()),
    ];
    let second = market_run(&dir.path().join("b"));
    results.push((9, "determinism", criterion_9(&first, &second)));

    let mut failed = 0;
    for (id, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {name:<26} {tag}  {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
