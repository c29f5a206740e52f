//! Disjoint agent groups, one independently trained global policy per
//! group, and test-time action aggregation across the K policies.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregators::coordinate::{fedavg, trimmed_mean};
use crate::aggregators::geomed::{geometric_median, DEFAULT_EPS, DEFAULT_MAX_ITERS};
use crate::envs::{Action, ActionSpace};
use crate::error::{FrlError, Result};
use crate::fedcore::{round_update, AgentRoster, FedSetup, OptimizerState, RoundRecord};
use crate::par;
use crate::policy::{read_checkpoint, write_checkpoint, ArchSpec, Mlp, Workspace};
use crate::rng::{stream, Tag};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub k: usize,
    /// `(agent id, group)` pairs in the order the ids were given.
    pub groups: Vec<(usize, usize)>,
}

impl GroupAssignment {
    pub fn group_of(&self, id: usize) -> Option<usize> {
        self.groups.iter().find(|(a, _)| *a == id).map(|&(_, g)| g)
    }

    /// Ascending agent ids of group `g`.
    pub fn members(&self, g: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = self.groups.iter().filter(|(_, k)| *k == g).map(|&(a, _)| a).collect();
        ids.sort_unstable();
        ids
    }
}

pub fn assign_groups(ids: &[usize], k: usize) -> Result<GroupAssignment> {
    check_group_count(ids.len(), k)?;
    Ok(GroupAssignment { k, groups: ids.iter().map(|&id| (id, id % k)).collect() })
}

/// Group indices for string ids, via 64-bit FNV-1a.
pub fn assign_string_groups(ids: &[&str], k: usize) -> Result<Vec<usize>> {
    check_group_count(ids.len(), k)?;
    Ok(ids.iter().map(|id| (fnv1a64(id.as_bytes()) % k as u64) as usize).collect())
}

fn check_group_count(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(FrlError::InvalidConfig(format!("K = {k} groups for {n} agents")));
    }
    Ok(())
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// How continuous per-group actions are combined at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousVote {
    #[default]
    Geomedian,
    Fedavg,
    TrimmedMean,
}

impl fmt::Display for ContinuousVote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContinuousVote::Geomedian => "geomedian",
            ContinuousVote::Fedavg => "fedavg",
            ContinuousVote::TrimmedMean => "trimmed_mean",
        })
    }
}

impl FromStr for ContinuousVote {
    type Err = FrlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geomedian" => Ok(ContinuousVote::Geomedian),
            "fedavg" => Ok(ContinuousVote::Fedavg),
            "trimmed_mean" => Ok(ContinuousVote::TrimmedMean),
            _ => Err(FrlError::InvalidConfig(format!("unknown continuous_vote '{s}'"))),
        }
    }
}

/// Per-action frequencies of `actions` over `m` actions.
pub fn vote_counts(actions: &[usize], m: usize) -> Vec<usize> {
    let mut v = vec![0; m];
    for &a in actions {
        if a >= v.len() {
            v.resize(a + 1, 0);
        }
        v[a] += 1;
    }
    v
}

/// Most frequent action; ties go to the smaller index.
pub fn vote_discrete(actions: &[usize]) -> usize {
    let counts = vote_counts(actions, 0);
    let mut best = 0;
    for (a, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = a;
        }
    }
    best
}

/// Combines K continuous actions; `trim` only matters for the trimmed mean.
pub fn aggregate_continuous(actions: &[Vec<f64>], space: &ActionSpace, mode: ContinuousVote, trim: usize) -> Result<Vec<f64>> {
    let pts: Vec<ParamVector> = actions.iter().map(|a| ParamVector(a.clone())).collect();
    let mut out = match mode {
        ContinuousVote::Geomedian => geometric_median(&pts, DEFAULT_EPS, DEFAULT_MAX_ITERS)?,
        ContinuousVote::Fedavg => fedavg(&pts)?,
        ContinuousVote::TrimmedMean => trimmed_mean(&pts, trim.min((pts.len().max(1) - 1) / 2))?,
    }
    .into_inner();
    space.clamp(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeta {
    pub group: usize,
    pub agents: Vec<usize>,
    pub malicious: Vec<usize>,
    pub rounds: usize,
}

/// K trained policies sharing one architecture.
#[derive(Debug, Clone)]
pub struct EnsemblePolicy {
    mlp: Mlp,
    pub thetas: Vec<ParamVector>,
    pub meta: Vec<GroupMeta>,
    pub continuous_vote: ContinuousVote,
    /// Trim count for the trimmed-mean ablation.
    pub trim: usize,
}

impl EnsemblePolicy {
    pub fn new(arch: ArchSpec, thetas: Vec<ParamVector>) -> Result<Self> {
        let mlp = Mlp::new(arch);
        if thetas.is_empty() {
            return Err(FrlError::InvalidConfig("an ensemble needs at least one policy".into()));
        }
        if let Some(t) = thetas.iter().find(|t| t.dim() != mlp.dim()) {
            return Err(FrlError::DimensionMismatch { expected: mlp.dim(), got: t.dim() });
        }
        Ok(Self { mlp, thetas, meta: vec![], continuous_vote: ContinuousVote::default(), trim: 0 })
    }

    pub fn k(&self) -> usize {
        self.thetas.len()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn arch(&self) -> &ArchSpec {
        self.mlp.arch()
    }

    /// Writes `group_{k}/round_{round}.params` under `dir`.
    pub fn write_checkpoints(&self, dir: &Path, round: usize) -> Result<()> {
        for (k, theta) in self.thetas.iter().enumerate() {
            write_checkpoint(&dir.join(format!("group_{k}")).join(format!("round_{round}.params")), self.arch(), theta)?;
        }
        Ok(())
    }

    /// Loads the highest-numbered round of every `group_{k}` directory.
    pub fn load_latest(dir: &Path) -> Result<Self> {
        let mut thetas = vec![];
        let mut arch = None;
        for k in 0.. {
            let gdir = dir.join(format!("group_{k}"));
            if !gdir.is_dir() {
                break;
            }
            let mut latest: Option<(usize, std::path::PathBuf)> = None;
            for entry in std::fs::read_dir(&gdir)? {
                let path = entry?.path();
                let round = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.strip_prefix("round_")?.strip_suffix(".params")?.parse::<usize>().ok());
                if let Some(r) = round {
                    if latest.as_ref().is_none_or(|(best, _)| r > *best) {
                        latest = Some((r, path));
                    }
                }
            }
            let (_, path) = latest.ok_or_else(|| FrlError::Checkpoint(format!("{} holds no rounds", gdir.display())))?;
            let (a, theta) = read_checkpoint(&path)?;
            if arch.as_ref().is_some_and(|prev| *prev != a) {
                return Err(FrlError::Checkpoint("groups disagree on the architecture".into()));
            }
            arch = Some(a);
            thetas.push(theta);
        }
        let arch = arch.ok_or_else(|| FrlError::Checkpoint(format!("no group_0 under {}", dir.display())))?;
        Self::new(arch, thetas)
    }

    /// Greedy action of every member policy.
    pub fn member_actions(&self, s: &[f64], ws: &mut Workspace) -> Result<Vec<Action>> {
        let space = self.arch().action_space();
        self.thetas
            .iter()
            .map(|theta| {
                self.mlp.forward(theta, s, ws)?;
                Ok(crate::policy::greedy_from(&self.mlp.distribution_from(theta, ws), &space))
            })
            .collect()
    }

    pub fn predict_with(&self, s: &[f64], ws: &mut Workspace) -> Result<Action> {
        let actions = self.member_actions(s, ws)?;
        let space = self.arch().action_space();
        match space {
            ActionSpace::Discrete { .. } => {
                let idx: Vec<usize> = actions.iter().filter_map(Action::index).collect();
                Ok(Action::Discrete(vote_discrete(&idx)))
            }
            ActionSpace::Continuous { .. } => {
                let pts: Vec<Vec<f64>> = actions
                    .into_iter()
                    .map(|a| match a {
                        Action::Continuous(v) => v,
                        Action::Discrete(i) => vec![i as f64],
                    })
                    .collect();
                Ok(Action::Continuous(aggregate_continuous(&pts, &space, self.continuous_vote, self.trim)?))
            }
        }
    }
}

pub fn ensemble_predict(s: &[f64], ensemble: &EnsemblePolicy) -> Result<Action> {
    ensemble.predict_with(s, &mut ensemble.mlp.workspace())
}

struct GroupState {
    roster: AgentRoster,
    theta: ParamVector,
    opt: OptimizerState,
}

/// Steps all K groups through global rounds in lockstep. Groups share no
/// mutable state; each draws its initial policy from `(master, Init, k)`.
pub struct EnsembleTrainer<'a> {
    setup: FedSetup<'a>,
    groups: Vec<GroupState>,
    round: usize,
}

impl<'a> EnsembleTrainer<'a> {
    pub fn new(setup: FedSetup<'a>, roster: &AgentRoster, assignment: &GroupAssignment) -> Result<Self> {
        let groups = (0..assignment.k)
            .map(|k| {
                let members = assignment.members(k);
                if members.is_empty() {
                    return Err(FrlError::InvalidConfig(format!("group {k} has no agents")));
                }
                let roster = roster.subset(&members);
                let theta = setup.mlp.init_params(&mut stream(roster.master_seed, Tag::Init, k as u64, 0));
                Ok(GroupState { roster, theta, opt: OptimizerState::default() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { setup, groups, round: 0 })
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn thetas(&self) -> Vec<ParamVector> {
        self.groups.iter().map(|g| g.theta.clone()).collect()
    }

    /// One global round in every group; records come back in group order.
    pub fn step(&mut self) -> Result<Vec<RoundRecord>> {
        let setup = &self.setup;
        let round = self.round;
        let results = par::map_indexed(self.groups.len(), |k| {
            let g = &self.groups[k];
            round_update(setup, &g.theta, &g.roster, k, round).map_err(|e| FrlError::Group { group: k, source: Box::new(e) })
        });
        let mut records = Vec::with_capacity(results.len());
        let mut updates = Vec::with_capacity(results.len());
        for r in results {
            let (update, rec) = r?;
            updates.push(update);
            records.push(rec);
        }
        for (g, update) in self.groups.iter_mut().zip(updates) {
            setup.optimizer.apply(&mut g.theta, &update, setup.lr, &mut g.opt);
        }
        self.round += 1;
        Ok(records)
    }

    pub fn policy(&self) -> Result<EnsemblePolicy> {
        let mut p = EnsemblePolicy::new(self.setup.mlp.arch().clone(), self.thetas())?;
        p.meta = self
            .groups
            .iter()
            .enumerate()
            .map(|(k, g)| GroupMeta {
                group: k,
                agents: g.roster.agents.iter().map(|a| a.id).collect(),
                malicious: g.roster.malicious_ids(),
                rounds: self.round,
            })
            .collect();
        Ok(p)
    }
}

/// Runs `rounds` global rounds in every group.
pub fn train_ensemble(
    setup: FedSetup<'_>,
    roster: &AgentRoster,
    assignment: &GroupAssignment,
    rounds: usize,
) -> Result<EnsemblePolicy> {
    let mut trainer = EnsembleTrainer::new(setup, roster, assignment)?;
    for _ in 0..rounds {
        trainer.step()?;
    }
    trainer.policy()
}
