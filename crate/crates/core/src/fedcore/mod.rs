//! The federated protocol: every agent in a group samples a batch under the
//! current global policy and sends a REINFORCE update; malicious agents'
//! contributions are swapped per the active attack; the server aggregates
//! and takes one step.

pub mod optimizer;
pub mod rollout;

use serde::{Deserialize, Serialize};

use crate::aggregators::{aggregate, AggregatorSpec, ServerContext};
use crate::attacks::{craft_updates, AttackContext, AttackKind, AttackSpec, Knowledge};
use crate::envs::EnvConfig;
use crate::error::{FrlError, Result};
use crate::par;
use crate::policy::Mlp;
use crate::rng::{derive_seed, stream, Tag};
use crate::vector::ParamVector;

pub use optimizer::{OptimizerState, ServerOptimizer};

pub use rollout::{
    local_update, reinforce_update, sample_batch, sample_trajectory, BatchStats, Behavior, RolloutParams, Step,
    Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub malicious: bool,
}

/// Agents sorted by id. Each agent's randomness in round `t` comes from
/// `stream(master_seed, Agent, id, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRoster {
    pub master_seed: u64,
    pub agents: Vec<Agent>,
}

/// `ceil(fraction * n)`, tolerant of float error in the product.
pub fn malicious_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

impl AgentRoster {
    /// Ids `0..n`; the lowest `ceil(fraction * n)` ids are malicious.
    pub fn new(n: usize, fraction: f64, master_seed: u64) -> Self {
        let m = malicious_count(fraction, n);
        Self::with_malicious(n, &(0..m.min(n)).collect::<Vec<_>>(), master_seed)
    }

    pub fn with_malicious(n: usize, malicious_ids: &[usize], master_seed: u64) -> Self {
        let agents = (0..n).map(|id| Agent { id, malicious: malicious_ids.contains(&id) }).collect();
        Self { master_seed, agents }
    }

    pub fn from_agents(mut agents: Vec<Agent>, master_seed: u64) -> Self {
        agents.sort_by_key(|a| a.id);
        Self { master_seed, agents }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn malicious_ids(&self) -> Vec<usize> {
        self.agents.iter().filter(|a| a.malicious).map(|a| a.id).collect()
    }

    pub fn subset(&self, ids: &[usize]) -> Self {
        Self::from_agents(self.agents.iter().filter(|a| ids.contains(&a.id)).copied().collect(), self.master_seed)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.agents.windows(2) {
            if w[0].id >= w[1].id {
                return Err(FrlError::InvalidConfig(format!("agent ids not unique/sorted near {}", w[1].id)));
            }
        }
        Ok(())
    }
}

/// Settings shared by every round of one training run.
#[derive(Debug, Clone)]
pub struct FedSetup<'a> {
    pub mlp: &'a Mlp,
    pub env: &'a EnvConfig,
    pub rollout: RolloutParams,
    pub lr: f64,
    pub aggregator: &'a AggregatorSpec,
    pub attack: &'a AttackSpec,
    /// Used for the default trim count `ceil(fraction * group size)`.
    pub malicious_fraction: f64,
    /// Used by multi-round trainers; [`global_round`] itself always steps plainly.
    pub optimizer: ServerOptimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Cumulative trajectories sampled by this group's agents.
    pub trajectories_sampled_total: usize,
    /// Cumulative server-side trajectories (FedPG-BR), kept apart from the agents' budget.
    pub server_trajectories_total: usize,
    pub per_agent_update_norms: Vec<f64>,
    pub aggregated_norm: f64,
    pub attack_active: bool,
}

/// One global round for one group with a plain step, `θ' = θ + η·AR`.
/// `round` is zero-based; the attack gate compares `round * B`
/// (trajectories each agent sampled before this round) with `start_after`.
pub fn global_round(
    setup: &FedSetup<'_>,
    theta: &ParamVector,
    roster: &AgentRoster,
    group: usize,
    round: usize,
) -> Result<(ParamVector, RoundRecord)> {
    let (update, record) = round_update(setup, theta, roster, group, round)?;
    let mut next = theta.clone();
    next.axpy(setup.lr, &update);
    Ok((next, record))
}

/// The aggregated update `AR{g_i}` of one round, before the server applies it.
pub fn round_update(
    setup: &FedSetup<'_>,
    theta: &ParamVector,
    roster: &AgentRoster,
    group: usize,
    round: usize,
) -> Result<(ParamVector, RoundRecord)> {
    run_round(setup, theta, roster, group, round).map_err(|e| FrlError::Round { round, source: Box::new(e) })
}

fn run_round(
    setup: &FedSetup<'_>,
    theta: &ParamVector,
    roster: &AgentRoster,
    group: usize,
    round: usize,
) -> Result<(ParamVector, RoundRecord)> {
    if roster.is_empty() {
        return Err(FrlError::Contract("a round needs at least one agent".into()));
    }
    let mut agents = roster.agents.clone();
    agents.sort_by_key(|a| a.id);
    let master = roster.master_seed;
    let attack = setup.attack;
    let active = attack.is_active(round * setup.rollout.batch_size);

    let results = par::map_slice(&agents, |agent| {
        let behavior = if active && agent.malicious && attack.kind == AttackKind::RandomAction {
            Behavior::UniformRandom
        } else {
            Behavior::Policy
        };
        let mut rng = stream(master, Tag::Agent, agent.id as u64, round as u64);
        local_update(setup.mlp, theta, setup.env, &setup.rollout, behavior, &mut rng).map(|(g, _)| g)
    });
    let mut updates = results.into_iter().collect::<Result<Vec<_>>>()?;

    let server = ServerContext {
        mlp: setup.mlp,
        env: setup.env,
        theta,
        lr: setup.lr,
        rollout: setup.rollout,
        seed: derive_seed(master, Tag::Server, group as u64, round as u64),
        default_trim: malicious_count(setup.malicious_fraction, agents.len()),
    };

    let slots: Vec<usize> = agents.iter().enumerate().filter(|(_, a)| a.malicious).map(|(i, _)| i).collect();
    if active && attack.crafts_updates() && !slots.is_empty() {
        let probe_ctx = server.with_seed(derive_seed(master, Tag::Probe, group as u64, round as u64));
        let oracle = |set: &[ParamVector]| aggregate(setup.aggregator, set, &probe_ctx).map(|a| a.update);
        let visible = match attack.knowledge {
            Knowledge::Full => updates.clone(),
            Knowledge::Partial => slots.iter().map(|&i| updates[i].clone()).collect(),
        };
        let ctx = AttackContext {
            visible,
            n_total: updates.len(),
            malicious_slots: slots.clone(),
            knowledge: attack.knowledge,
            oracle: &oracle,
        };
        let mut rng = stream(master, Tag::Attack, group as u64, round as u64);
        let crafted = craft_updates(attack, &ctx, &mut rng)?;
        for (slot, g) in slots.iter().zip(crafted) {
            updates[*slot] = g;
        }
    }

    let agg = aggregate(setup.aggregator, &updates, &server)?;
    if !agg.update.is_finite() {
        return Err(FrlError::NumericFault("aggregated update is non-finite".into()));
    }
    let record = RoundRecord {
        round,
        trajectories_sampled_total: (round + 1) * setup.rollout.batch_size * agents.len(),
        server_trajectories_total: agg.server_trajectories,
        per_agent_update_norms: updates.iter().map(|u| u.norm()).collect(),
        aggregated_norm: agg.update.norm(),
        attack_active: active,
    };
    Ok((agg.update, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ArchSpec;

    struct Fixture {
        env: EnvConfig,
        mlp: Mlp,
        theta: ParamVector,
    }

    fn fixture() -> Fixture {
        let env = EnvConfig::cartpole();
        let mlp = Mlp::new(ArchSpec::for_action_space(4, &env.action_space()));
        let theta = mlp.init_params(&mut stream(0, Tag::Init, 0, 0));
        Fixture { env, mlp, theta }
    }

    fn setup<'a>(f: &'a Fixture, agg: &'a AggregatorSpec, attack: &'a AttackSpec, lr: f64) -> FedSetup<'a> {
        FedSetup {
            mlp: &f.mlp,
            env: &f.env,
            rollout: RolloutParams { batch_size: 2, ..Default::default() },
            lr,
            aggregator: agg,
            attack,
            malicious_fraction: 0.3,
            optimizer: ServerOptimizer::Sgd,
        }
    }

    #[test]
    fn malicious_counts() {
        assert_eq!(malicious_count(0.3, 30), 9);
        assert_eq!(malicious_count(0.3, 6), 2);
        assert_eq!(malicious_count(0.1, 30), 3);
        assert_eq!(malicious_count(0.0, 30), 0);
        let r = AgentRoster::new(10, 0.3, 1);
        assert_eq!(r.malicious_ids(), vec![0, 1, 2]);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn zero_learning_rate_keeps_theta() {
        let f = fixture();
        let (agg, atk) = (AggregatorSpec::Fedavg, AttackSpec::default());
        let roster = AgentRoster::new(3, 0.0, 5);
        let (next, rec) = global_round(&setup(&f, &agg, &atk, 0.0), &f.theta, &roster, 0, 0).unwrap();
        assert_eq!(next, f.theta);
        assert_eq!(rec.trajectories_sampled_total, 6);
        assert_eq!(rec.per_agent_update_norms.len(), 3);
    }

    #[test]
    fn fedavg_round_applies_mean_update() {
        let f = fixture();
        let (agg, atk) = (AggregatorSpec::Fedavg, AttackSpec::default());
        let roster = AgentRoster::new(3, 0.0, 5);
        let s = setup(&f, &agg, &atk, 1e-3);
        let (next, _) = global_round(&s, &f.theta, &roster, 0, 4).unwrap();
        let ups: Vec<ParamVector> = (0..3)
            .map(|id| {
                let mut rng = stream(5, Tag::Agent, id, 4);
                local_update(&f.mlp, &f.theta, &f.env, &s.rollout, Behavior::Policy, &mut rng).unwrap().0
            })
            .collect();
        let mut expected = f.theta.clone();
        expected.axpy(1e-3, &crate::vector::mean(&ups).unwrap());
        assert_eq!(next, expected);
    }

    #[test]
    fn disabled_attack_matches_all_benign() {
        let f = fixture();
        let agg = AggregatorSpec::CoordMedian;
        let atk = AttackSpec::default();
        let s = setup(&f, &agg, &atk, 1e-3);
        let a = global_round(&s, &f.theta, &AgentRoster::new(5, 0.4, 2), 0, 0).unwrap();
        let b = global_round(&s, &f.theta, &AgentRoster::new(5, 0.0, 2), 0, 0).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn roster_order_does_not_matter() {
        let f = fixture();
        let agg = AggregatorSpec::TrimmedMean { c: None };
        let atk = AttackSpec { kind: AttackKind::Normalized, ..Default::default() };
        let s = setup(&f, &agg, &atk, 1e-3);
        let roster = AgentRoster::new(6, 0.3, 8);
        let mut shuffled = roster.clone();
        shuffled.agents.reverse();
        let a = global_round(&s, &f.theta, &roster, 0, 0).unwrap();
        let b = global_round(&s, &f.theta, &shuffled, 0, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gated_attack_is_bitwise_benign() {
        let f = fixture();
        let agg = AggregatorSpec::CoordMedian;
        for kind in [AttackKind::RandomAction, AttackKind::RandomNoise, AttackKind::Trim, AttackKind::Normalized] {
            let gated = AttackSpec { kind, start_after: 4, ..Default::default() };
            let s = setup(&f, &agg, &gated, 1e-3);
            let roster = AgentRoster::new(5, 0.4, 3);
            let clean = AttackSpec::default();
            let sc = setup(&f, &agg, &clean, 1e-3);
            // B = 2: rounds 0 and 1 are before 4 trajectories
            for round in 0..2 {
                let (a, ra) = global_round(&s, &f.theta, &roster, 0, round).unwrap();
                let (b, _) = global_round(&sc, &f.theta, &roster, 0, round).unwrap();
                assert_eq!(a, b);
                assert!(!ra.attack_active);
            }
            let (a, ra) = global_round(&s, &f.theta, &roster, 0, 2).unwrap();
            let (b, _) = global_round(&sc, &f.theta, &roster, 0, 2).unwrap();
            assert!(ra.attack_active);
            assert_ne!(a, b, "{kind}");
        }
    }

    #[test]
    fn random_noise_updates_have_large_norm() {
        let f = fixture();
        let agg = AggregatorSpec::Fedavg;
        let atk = AttackSpec { kind: AttackKind::RandomNoise, ..Default::default() };
        let (_, rec) = global_round(&setup(&f, &agg, &atk, 1e-3), &f.theta, &AgentRoster::new(4, 0.25, 1), 0, 0).unwrap();
        let expect = (1000.0 * f.mlp.dim() as f64).sqrt();
        assert!((rec.per_agent_update_norms[0] / expect - 1.0).abs() < 0.1);
    }

    #[test]
    fn aggregator_faults_carry_the_round() {
        let f = fixture();
        let agg = AggregatorSpec::TrimmedMean { c: Some(3) };
        let atk = AttackSpec::default();
        let err = global_round(&setup(&f, &agg, &atk, 1e-3), &f.theta, &AgentRoster::new(4, 0.0, 1), 0, 7)
            .unwrap_err();
        assert!(matches!(err, FrlError::Round { round: 7, .. }));
    }
}
