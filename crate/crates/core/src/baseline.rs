//! The traditional Bitcoin selfish-mining MDP over chain-length counters.
//!
//! Race bookkeeping follows the generic model: a matching release is
//! decided when the pending defender block and the released attacker
//! blocks are delivered, i.e. before the next block is mined.

use std::fmt;

use crate::canonical::StateKey;
use crate::error::{Error, Result};
use crate::mdp::{KeyedTransition, MdpAction, MdpModel};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fork {
    /// The defender knows the public tip; a release cannot cause a tie.
    Irrelevant,
    /// The last block was mined by the defender and is still in flight.
    Relevant,
    /// The attacker released a matching chain; the race is pending.
    Active,
}

impl Fork {
    const ALL: [Fork; 3] = [Fork::Irrelevant, Fork::Relevant, Fork::Active];
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainState {
    /// Attacker blocks since the last common block.
    pub a: u32,
    /// Defender blocks since the last common block.
    pub h: u32,
    pub fork: Fork,
}

impl ChainState {
    pub const START: ChainState = ChainState {
        a: 0,
        h: 0,
        fork: Fork::Irrelevant,
    };

    pub fn new(a: u32, h: u32, fork: Fork) -> Self {
        ChainState { a, h, fork }
    }

    pub fn key(&self) -> StateKey {
        StateKey::from_bytes(vec![self.a as u8, self.h as u8, self.fork as u8])
    }

    pub fn from_key(key: &StateKey) -> Result<Self> {
        match *key.as_bytes() {
            [a, h, f] if (f as usize) < Fork::ALL.len() => {
                Ok(ChainState::new(a as u32, h as u32, Fork::ALL[f as usize]))
            }
            _ => Err(Error::State(format!("malformed chain state key {key}"))),
        }
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {:?})", self.a, self.h, self.fork)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChainAction {
    Adopt,
    Override,
    Match,
    Wait,
}

impl fmt::Display for ChainAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChainAction::Adopt => "adopt",
            ChainAction::Override => "override",
            ChainAction::Match => "match",
            ChainAction::Wait => "wait",
        })
    }
}

impl MdpAction for ChainAction {
    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(code: u32) -> Option<Self> {
        [
            ChainAction::Adopt,
            ChainAction::Override,
            ChainAction::Match,
            ChainAction::Wait,
        ]
        .get(code as usize)
        .copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainTransition {
    pub probability: f64,
    pub state: ChainState,
    pub reward_attacker: f64,
    pub reward_defender: f64,
    pub progress: f64,
}

#[derive(Clone, Debug)]
pub struct TraditionalModel {
    pub alpha: f64,
    pub gamma: f64,
    pub limit: u32,
}

impl TraditionalModel {
    pub fn new(alpha: f64, gamma: f64, limit: u32) -> Result<Self> {
        crate::attack::ModelParams::new(alpha, gamma, limit)?;
        if limit > u8::MAX as u32 {
            return Err(Error::Config(format!("limit {limit} exceeds 255")));
        }
        Ok(TraditionalModel {
            alpha,
            gamma,
            limit,
        })
    }

    pub fn feasible(&self, s: ChainState) -> Vec<ChainAction> {
        let mut out = Vec::with_capacity(4);
        if s.h >= 1 {
            out.push(ChainAction::Adopt);
        }
        if s.a > s.h {
            out.push(ChainAction::Override);
        }
        if s.a >= s.h && s.h >= 1 && s.fork == Fork::Relevant {
            out.push(ChainAction::Match);
        }
        out.push(ChainAction::Wait);
        out
    }

    pub fn step(&self, s: ChainState, action: ChainAction) -> Result<Vec<ChainTransition>> {
        if !self.feasible(s).contains(&action) {
            return Err(Error::InfeasibleAction(format!("{action} in {s}")));
        }
        let single = |state, reward_attacker, reward_defender, progress| {
            vec![ChainTransition {
                probability: 1.0,
                state,
                reward_attacker,
                reward_defender,
                progress,
            }]
        };
        Ok(match action {
            ChainAction::Adopt => single(ChainState::START, 0.0, s.h as f64, s.h as f64),
            ChainAction::Override => single(
                ChainState::new(s.a - s.h - 1, 0, Fork::Irrelevant),
                (s.h + 1) as f64,
                0.0,
                (s.h + 1) as f64,
            ),
            ChainAction::Match => single(ChainState::new(s.a, s.h, Fork::Active), 0.0, 0.0, 0.0),
            ChainAction::Wait => self.wait(s),
        })
    }

    fn wait(&self, s: ChainState) -> Vec<ChainTransition> {
        // race resolution on delivery
        let mut resolved = Vec::new();
        if s.fork == Fork::Active {
            resolved.push((
                self.gamma,
                ChainState::new(s.a - s.h, 0, Fork::Irrelevant),
                s.h as f64,
            ));
            resolved.push((
                1.0 - self.gamma,
                ChainState::new(s.a, s.h, Fork::Irrelevant),
                0.0,
            ));
        } else {
            resolved.push((1.0, ChainState::new(s.a, s.h, Fork::Irrelevant), 0.0));
        }
        let mut out: Vec<ChainTransition> = Vec::new();
        let mut push = |t: ChainTransition| {
            if t.probability <= 0.0 {
                return;
            }
            match out.iter_mut().find(|o| {
                o.state == t.state
                    && o.reward_attacker == t.reward_attacker
                    && o.progress == t.progress
            }) {
                Some(o) => o.probability += t.probability,
                None => out.push(t),
            }
        };
        for (p, r, won) in resolved {
            if r.a.max(r.h) >= self.limit {
                push(ChainTransition {
                    probability: p,
                    state: r,
                    reward_attacker: won,
                    reward_defender: 0.0,
                    progress: won,
                });
                continue;
            }
            for (q, next) in [
                (self.alpha, ChainState::new(r.a + 1, r.h, Fork::Irrelevant)),
                (
                    1.0 - self.alpha,
                    ChainState::new(r.a, r.h + 1, Fork::Relevant),
                ),
            ] {
                push(ChainTransition {
                    probability: p * q,
                    state: next,
                    reward_attacker: won,
                    reward_defender: 0.0,
                    progress: won,
                });
            }
        }
        out
    }

    /// Adopt when behind, override when ahead, otherwise wait.
    pub fn honest_action(s: ChainState) -> ChainAction {
        if s.h > s.a {
            ChainAction::Adopt
        } else if s.a > s.h {
            ChainAction::Override
        } else {
            ChainAction::Wait
        }
    }
}

impl MdpModel for TraditionalModel {
    type Action = ChainAction;

    fn start(&self) -> Result<Vec<(f64, StateKey)>> {
        Ok(vec![(1.0, ChainState::START.key())])
    }

    fn actions(&self, state: &StateKey) -> Result<Vec<ChainAction>> {
        Ok(self.feasible(ChainState::from_key(state)?))
    }

    fn transitions(&self, state: &StateKey, action: ChainAction) -> Result<Vec<KeyedTransition>> {
        let mut out: Vec<KeyedTransition> = self
            .step(ChainState::from_key(state)?, action)?
            .into_iter()
            .map(|t| KeyedTransition {
                probability: t.probability,
                successor: t.state.key(),
                reward_attacker: t.reward_attacker,
                reward_defender: t.reward_defender,
                progress: t.progress,
            })
            .collect();
        out.sort_by(|x, y| x.successor.cmp(&y.successor));
        Ok(out)
    }

    fn state_size(&self, state: &StateKey) -> usize {
        ChainState::from_key(state).map_or(0, |s| (s.a + s.h) as usize)
    }

    fn describe(&self) -> String {
        format!(
            "traditional alpha={:?} gamma={:?} limit={}",
            self.alpha, self.gamma, self.limit
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ChainAction::*;
    use Fork::*;

    fn m() -> TraditionalModel {
        TraditionalModel::new(0.3, 0.5, 7).unwrap()
    }

    #[test]
    fn feasibility() {
        let m = m();
        assert_eq!(m.feasible(ChainState::START), vec![Wait]);
        assert_eq!(
            m.feasible(ChainState::new(2, 1, Relevant)),
            vec![Adopt, Override, Match, Wait]
        );
        assert!(!m
            .feasible(ChainState::new(1, 2, Relevant))
            .contains(&Override));
        assert!(!m
            .feasible(ChainState::new(2, 1, Irrelevant))
            .contains(&Match));
        assert!(m.step(ChainState::START, Adopt).is_err());
    }

    #[test]
    fn adopt_and_override() {
        let m = m();
        let t = m.step(ChainState::new(1, 2, Relevant), Adopt).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(
            (t[0].reward_defender, t[0].progress, t[0].state),
            (2.0, 2.0, ChainState::START)
        );
        let t = m.step(ChainState::new(3, 1, Relevant), Override).unwrap();
        assert_eq!(
            (t[0].reward_attacker, t[0].progress, t[0].state),
            (2.0, 2.0, ChainState::new(1, 0, Irrelevant))
        );
    }

    #[test]
    fn wait_mines_one_block() {
        let m = m();
        let t = m.step(ChainState::START, Wait).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].state, ChainState::new(1, 0, Irrelevant));
        assert!((t[0].probability - 0.3).abs() < 1e-15);
        assert_eq!(t[1].state, ChainState::new(0, 1, Relevant));
    }

    #[test]
    fn matched_race_branches() {
        let m = m();
        let s = m.step(ChainState::new(2, 2, Relevant), Match).unwrap()[0].state;
        assert_eq!(s, ChainState::new(2, 2, Active));
        let t = m.step(s, Wait).unwrap();
        let total: f64 = t.iter().map(|x| x.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // attacker wins the race, then the defender extends its blocks
        let fast = t
            .iter()
            .find(|x| x.state == ChainState::new(0, 1, Relevant) && x.reward_attacker == 2.0)
            .unwrap();
        assert!((fast.probability - 0.5 * 0.7).abs() < 1e-12);
        assert_eq!(fast.progress, 2.0);
        // defender keeps its chain and mines on it
        let slow = t
            .iter()
            .find(|x| x.state == ChainState::new(2, 3, Relevant))
            .unwrap();
        assert!((slow.probability - 0.5 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn cap_suppresses_mining() {
        let m = TraditionalModel::new(0.3, 0.5, 2).unwrap();
        let t = m.step(ChainState::new(2, 1, Relevant), Wait).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].state, ChainState::new(2, 1, Irrelevant));
    }

    #[test]
    fn keys_round_trip() {
        for s in [
            ChainState::START,
            ChainState::new(3, 2, Active),
            ChainState::new(0, 7, Relevant),
        ] {
            assert_eq!(ChainState::from_key(&s.key()).unwrap(), s);
        }
        assert!(ChainState::from_key(&StateKey::from_bytes(vec![0u8, 0, 9])).is_err());
        for a in [Adopt, Override, Match, Wait] {
            assert_eq!(ChainAction::from_code(a.code()), Some(a));
        }
    }

    #[test]
    fn honest_actions() {
        assert_eq!(
            TraditionalModel::honest_action(ChainState::new(0, 1, Relevant)),
            Adopt
        );
        assert_eq!(
            TraditionalModel::honest_action(ChainState::new(1, 0, Irrelevant)),
            Override
        );
        assert_eq!(TraditionalModel::honest_action(ChainState::START), Wait);
    }
}
