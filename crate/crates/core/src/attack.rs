//! Attack-space semantics: start states, feasible actions, and the
//! probabilistic transitions of `Release(i)`, `Consider(i)` and `Continue`.
//!
//! Every transition ends with [`AttackModel::settle`]: the latest common
//! ancestor of both preferred blocks becomes the new genesis, the blocks
//! that joined the common history are paid out, and the dag is relabeled
//! into canonical order.

use std::fmt;

use crate::canonical::{canonical_form, StateKey};
use crate::dag::{BlockDag, DefenderView, IgnoreStatus, Labels, WithholdStatus};
use crate::error::{Error, Result};
use crate::mdp::{KeyedTransition, MdpAction, MdpModel};
use crate::protocol::{violation, BlockId, Miner, Protocol, Visibility};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Attacker's share of the mining power.
    pub alpha: f64,
    /// Probability that released blocks reach the defender first.
    pub gamma: f64,
    /// Mining stops while the dag is at least this high.
    pub limit: u32,
    /// Attacker considers its own blocks as soon as it mines them.
    ///
    /// Without this the attacker may fork its own chain arbitrarily often
    /// without growing the dag's height, and the height limit no longer
    /// bounds the state space.
    pub consider_own: bool,
}

impl ModelParams {
    pub fn new(alpha: f64, gamma: f64, limit: u32) -> Result<Self> {
        let p = ModelParams {
            alpha,
            gamma,
            limit,
            consider_own: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.limit < 1 {
            return Err(Error::Config("limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// Attacker action. Candidate indices are 1-based.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Release(usize),
    Consider(usize),
    Continue,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Release(i) => write!(f, "release({i})"),
            Action::Consider(i) => write!(f, "consider({i})"),
            Action::Continue => f.write_str("continue"),
        }
    }
}

/// Block appended during a step, in the numbering of the dag before the
/// step (the new block itself has the next free id).
#[derive(Clone, Debug, PartialEq)]
pub struct MinedBlock {
    pub parents: Vec<BlockId>,
    pub miner: Miner,
}

/// One unmerged outcome of an action.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub probability: f64,
    /// Successor state in canonical order.
    pub state: BlockDag,
    pub key: StateKey,
    pub reward_attacker: f64,
    pub reward_defender: f64,
    pub progress: f64,
    pub mined: Option<MinedBlock>,
    /// Where each block of the pre-step dag (plus the mined block, if any)
    /// ended up in `state`.
    pub id_map: Vec<Option<BlockId>>,
}

/// Merged transition: outcomes with equal successor and payoff summed.
#[derive(Clone, Debug)]
pub struct StateTransition {
    pub probability: f64,
    pub key: StateKey,
    pub state: BlockDag,
    pub reward_attacker: f64,
    pub reward_defender: f64,
    pub progress: f64,
}

/// Result of [`AttackModel::settle`].
#[derive(Clone, Debug)]
pub struct Settlement {
    pub dag: BlockDag,
    pub reward_attacker: f64,
    pub reward_defender: f64,
    pub progress: f64,
    /// Old-to-new ids; `None` for truncated blocks.
    pub id_map: Vec<Option<BlockId>>,
}

#[derive(Clone)]
struct Work {
    probability: f64,
    dag: BlockDag,
    reward_attacker: f64,
    reward_defender: f64,
    progress: f64,
    mined: Option<MinedBlock>,
    id_map: Vec<Option<BlockId>>,
}

impl Work {
    fn new(dag: &BlockDag) -> Self {
        Work {
            probability: 1.0,
            id_map: dag.ids().map(Some).collect(),
            dag: dag.clone(),
            reward_attacker: 0.0,
            reward_defender: 0.0,
            progress: 0.0,
            mined: None,
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        let mut w = self.clone();
        w.probability *= factor;
        w
    }

    fn remap(&mut self, map: &[Option<BlockId>]) {
        for m in self.id_map.iter_mut() {
            *m = m.and_then(|b| map[b.index()]);
        }
    }
}

/// The generic attack model instantiated for one protocol.
pub struct AttackModel<'p> {
    protocol: &'p dyn Protocol,
    params: ModelParams,
}

impl<'p> AttackModel<'p> {
    pub fn new(protocol: &'p dyn Protocol, params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(AttackModel { protocol, params })
    }

    pub fn protocol(&self) -> &'p dyn Protocol {
        self.protocol
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// The two single-block start states with their probabilities. Zero
    /// probability entries are dropped.
    pub fn start_states(&self) -> Vec<(f64, BlockDag)> {
        let released = BlockDag::with_genesis(Labels::new(
            DefenderView::PreferredD,
            IgnoreStatus::PreferredA,
            WithholdStatus::Released,
        ));
        let foreign = BlockDag::with_genesis(Labels::new(
            DefenderView::PreferredD,
            IgnoreStatus::PreferredA,
            WithholdStatus::Foreign,
        ));
        [
            (self.params.alpha, released),
            (1.0 - self.params.alpha, foreign),
        ]
        .into_iter()
        .filter(|(p, _)| *p > 0.0)
        .collect()
    }

    pub fn feasible_actions(&self, dag: &BlockDag) -> Vec<Action> {
        let r = dag.release_candidates().len();
        let c = dag.consider_candidates().len();
        let mut out = Vec::with_capacity(r + c + 1);
        out.extend((1..=r).map(Action::Release));
        out.extend((1..=c).map(Action::Consider));
        out.push(Action::Continue);
        out
    }

    /// All outcomes of `action`, unmerged and in a deterministic order.
    pub fn step(&self, dag: &BlockDag, action: Action) -> Result<Vec<Outcome>> {
        match action {
            Action::Release(i) => self.apply_release(dag, i),
            Action::Consider(i) => self.apply_consider(dag, i),
            Action::Continue => self.apply_continue(dag),
        }
    }

    /// Merged transitions of `action`, sorted by successor key.
    pub fn transitions(&self, dag: &BlockDag, action: Action) -> Result<Vec<StateTransition>> {
        let mut merged: Vec<StateTransition> = Vec::new();
        for o in self.step(dag, action)? {
            if let Some(t) = merged.iter_mut().find(|t| {
                t.key == o.key
                    && t.reward_attacker == o.reward_attacker
                    && t.reward_defender == o.reward_defender
                    && t.progress == o.progress
            }) {
                t.probability += o.probability;
            } else {
                merged.push(StateTransition {
                    probability: o.probability,
                    key: o.key,
                    state: o.state,
                    reward_attacker: o.reward_attacker,
                    reward_defender: o.reward_defender,
                    progress: o.progress,
                });
            }
        }
        merged.sort_by(|a, b| {
            a.key.cmp(&b.key).then_with(|| {
                (a.reward_attacker, a.reward_defender, a.progress)
                    .partial_cmp(&(b.reward_attacker, b.reward_defender, b.progress))
                    .expect("finite rewards")
            })
        });
        Ok(merged)
    }

    pub fn apply_release(&self, dag: &BlockDag, i: usize) -> Result<Vec<Outcome>> {
        let candidates = dag.release_candidates();
        let b = *i
            .checked_sub(1)
            .and_then(|k| candidates.get(k))
            .ok_or_else(|| Error::InfeasibleAction(Action::Release(i).to_string()))?;
        let mut w = Work::new(dag);
        w.dag.release(b)?;
        self.finish(vec![w])
    }

    pub fn apply_consider(&self, dag: &BlockDag, i: usize) -> Result<Vec<Outcome>> {
        let candidates = dag.consider_candidates();
        let b = *i
            .checked_sub(1)
            .and_then(|k| candidates.get(k))
            .ok_or_else(|| Error::InfeasibleAction(Action::Consider(i).to_string()))?;
        let mut w = Work::new(dag);
        w.dag.consider(b)?;
        let branches = self.attacker_update(w, b)?;
        self.finish(branches)
    }

    pub fn apply_continue(&self, dag: &BlockDag) -> Result<Vec<Outcome>> {
        let ModelParams { alpha, gamma, .. } = self.params;
        let mut out = Vec::new();
        for (fast, p_comm) in [(true, gamma), (false, 1.0 - gamma)] {
            if p_comm <= 0.0 {
                continue;
            }
            let delivered = self.deliver(Work::new(dag).scaled(p_comm), fast)?;
            for mut w in delivered {
                self.settle_work(&mut w)?;
                if w.dag.max_height() >= self.params.limit {
                    out.push(w);
                    continue;
                }
                for (miner, p_mine) in [(Miner::Attacker, alpha), (Miner::Defender, 1.0 - alpha)] {
                    if p_mine <= 0.0 {
                        continue;
                    }
                    out.extend(self.mine(w.scaled(p_mine), miner)?);
                }
            }
        }
        self.finish(out)
    }

    /// Runs the protocol's update on the attacker's view after `incoming`
    /// became considered, branching uniformly over multiple results.
    fn attacker_update(&self, w: Work, incoming: BlockId) -> Result<Vec<Work>> {
        let current = w.dag.preferred_attacker()?;
        let choices = {
            let view = w.dag.view(Visibility::Attacker);
            self.protocol.update(&view, current, incoming)?
        };
        self.branch(w, choices, |dag, b| dag.set_preferred_attacker(b))
    }

    fn defender_update(&self, w: Work, incoming: BlockId) -> Result<Vec<Work>> {
        let current = w.dag.preferred_defender()?;
        let choices = {
            let view = w.dag.view(Visibility::Defender);
            self.protocol.update(&view, current, incoming)?
        };
        self.branch(w, choices, |dag, b| dag.set_preferred_defender(b))
    }

    fn branch(
        &self,
        w: Work,
        choices: Vec<BlockId>,
        apply: impl Fn(&mut BlockDag, BlockId) -> Result<()>,
    ) -> Result<Vec<Work>> {
        if choices.is_empty() {
            return Err(violation(self.protocol, "update returned no block"));
        }
        let k = choices.len() as f64;
        let mut out = Vec::with_capacity(choices.len());
        for b in choices {
            let mut next = w.scaled(1.0 / k);
            apply(&mut next.dag, b)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Delivers pending blocks to the defender: released before foreign
    /// blocks when `fast`, the other way round otherwise. Blocks are
    /// delivered in topological order.
    fn deliver(&self, w: Work, fast: bool) -> Result<Vec<Work>> {
        let classes = if fast {
            [WithholdStatus::Released, WithholdStatus::Foreign]
        } else {
            [WithholdStatus::Foreign, WithholdStatus::Released]
        };
        let mut pending = vec![w];
        let mut done = Vec::new();
        while let Some(w) = pending.pop() {
            match self.next_delivery(&w.dag, classes) {
                None => done.push(w),
                Some(b) => {
                    let mut w = w;
                    w.dag.learn(b)?;
                    pending.extend(self.defender_update(w, b)?.into_iter().rev());
                }
            }
        }
        Ok(done)
    }

    fn next_delivery(&self, dag: &BlockDag, classes: [WithholdStatus; 2]) -> Option<BlockId> {
        let ready = |b: BlockId| {
            let l = dag.labels(b).expect("valid id");
            l.view == DefenderView::Unknown
                && l.withhold != WithholdStatus::Withheld
                && dag
                    .parents(b)
                    .expect("valid id")
                    .iter()
                    .all(|&p| dag.labels(p).expect("valid id").view != DefenderView::Unknown)
        };
        for class in classes {
            if let Some(b) = dag
                .ids()
                .find(|&b| dag.labels(b).expect("valid id").withhold == class && ready(b))
            {
                return Some(b);
            }
        }
        None
    }

    fn mine(&self, mut w: Work, miner: Miner) -> Result<Vec<Work>> {
        let (visibility, preferred, labels) = match miner {
            Miner::Attacker => (
                Visibility::Attacker,
                w.dag.preferred_attacker()?,
                Labels::ATTACKER_MINED,
            ),
            Miner::Defender => (
                Visibility::Defender,
                w.dag.preferred_defender()?,
                Labels::DEFENDER_MINED,
            ),
        };
        let parents = {
            let view = w.dag.view(visibility);
            let parents = self.protocol.mining(&view, preferred)?;
            if parents.is_empty() {
                return Err(violation(self.protocol, "mining returned no parents"));
            }
            if let Some(p) = parents.iter().find(|&&p| !view.is_visible(p)) {
                return Err(violation(
                    self.protocol,
                    format!("mining referenced block {p} outside the miner's view"),
                ));
            }
            parents
        };
        let new = w.dag.append_block(&parents, labels)?;
        w.mined = Some(MinedBlock {
            parents: parents
                .iter()
                .map(|p| {
                    w.id_map
                        .iter()
                        .position(|m| *m == Some(*p))
                        .map(BlockId::new)
                        .expect("parents survive within a step")
                })
                .collect(),
            miner,
        });
        w.id_map.push(Some(new));
        if miner == Miner::Attacker && self.params.consider_own {
            w.dag.consider(new)?;
            return self.attacker_update(w, new);
        }
        Ok(vec![w])
    }

    fn settle_work(&self, w: &mut Work) -> Result<()> {
        let s = self.settle(&w.dag)?;
        w.dag = s.dag;
        w.reward_attacker += s.reward_attacker;
        w.reward_defender += s.reward_defender;
        w.progress += s.progress;
        w.remap(&s.id_map);
        Ok(())
    }

    /// Pays out the blocks that joined the common history and truncates
    /// the dag to the latest common ancestor.
    ///
    /// Blocks on the sequential history of the common ancestor down to, but
    /// excluding, the current genesis are paid.
    pub fn settle(&self, dag: &BlockDag) -> Result<Settlement> {
        let genesis = dag.genesis();
        let lca = dag.latest_common_ancestor(self.protocol)?;
        let mut dag = dag.clone();
        if lca == genesis {
            let id_map = dag.ids().map(Some).collect();
            return Ok(Settlement {
                dag,
                reward_attacker: 0.0,
                reward_defender: 0.0,
                progress: 0.0,
                id_map,
            });
        }
        let (mut ra, mut rd) = (0.0, 0.0);
        let progress = {
            let view = dag.view(Visibility::All);
            let progress =
                self.protocol.progress(&view, lca)? - self.protocol.progress(&view, genesis)?;
            if progress < 0.0 {
                return Err(violation(
                    self.protocol,
                    "progress decreased along the history",
                ));
            }
            let history = dag.history(self.protocol, lca)?;
            let stop = history
                .iter()
                .position(|&b| b == genesis)
                .ok_or_else(|| violation(self.protocol, "history does not reach the genesis"))?;
            for &b in &history[..stop] {
                for r in self.protocol.coinbase(&view, b)? {
                    match r.recipient {
                        Miner::Attacker => ra += r.value,
                        Miner::Defender => rd += r.value,
                    }
                }
            }
            progress
        };
        let id_map = dag.truncate(lca)?;
        Ok(Settlement {
            dag,
            reward_attacker: ra,
            reward_defender: rd,
            progress,
            id_map,
        })
    }

    fn finish(&self, works: Vec<Work>) -> Result<Vec<Outcome>> {
        let mut out = Vec::with_capacity(works.len());
        for mut w in works {
            self.settle_work(&mut w)?;
            let form = canonical_form(&w.dag)?;
            let state = form.relabeled(&w.dag)?;
            let mut pos = vec![None; w.dag.len()];
            for (k, b) in form.order.iter().enumerate() {
                pos[b.index()] = Some(BlockId::new(k));
            }
            w.remap(&pos);
            if cfg!(debug_assertions) {
                state.check_invariants()?;
            }
            out.push(Outcome {
                probability: w.probability,
                state,
                key: form.key,
                reward_attacker: w.reward_attacker,
                reward_defender: w.reward_defender,
                progress: w.progress,
                mined: w.mined,
                id_map: w.id_map,
            });
        }
        Ok(out)
    }
}

impl MdpAction for Action {
    fn code(self) -> u32 {
        match self {
            Action::Continue => 0,
            Action::Release(i) => (1 << 16) | i as u32,
            Action::Consider(i) => (2 << 16) | i as u32,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        let i = (code & 0xffff) as usize;
        match (code >> 16, i) {
            (0, 0) => Some(Action::Continue),
            (1, 1..) => Some(Action::Release(i)),
            (2, 1..) => Some(Action::Consider(i)),
            _ => None,
        }
    }
}

impl MdpModel for AttackModel<'_> {
    type Action = Action;

    fn start(&self) -> Result<Vec<(f64, StateKey)>> {
        self.start_states()
            .into_iter()
            .map(|(p, dag)| Ok((p, canonical_form(&dag)?.key)))
            .collect()
    }

    fn actions(&self, state: &StateKey) -> Result<Vec<Action>> {
        Ok(self.feasible_actions(&state.to_dag()?))
    }

    fn transitions(&self, state: &StateKey, action: Action) -> Result<Vec<KeyedTransition>> {
        let dag = state.to_dag()?;
        Ok(AttackModel::transitions(self, &dag, action)?
            .into_iter()
            .map(|t| KeyedTransition {
                probability: t.probability,
                successor: t.key,
                reward_attacker: t.reward_attacker,
                reward_defender: t.reward_defender,
                progress: t.progress,
            })
            .collect())
    }

    fn describe(&self) -> String {
        let p = &self.params;
        format!(
            "generic protocol={} alpha={:?} gamma={:?} limit={} consider_own={}",
            self.protocol.describe(),
            p.alpha,
            p.gamma,
            p.limit,
            p.consider_own
        )
    }
}
