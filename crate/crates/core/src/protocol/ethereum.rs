use super::{violation, BlockId, DagView, Protocol, RewardEntry};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct EthereumParams {
    pub max_uncle_depth: u32,
    pub max_uncles_per_block: usize,
    /// Reward paid to the miner of an uncle included at depth `d` is
    /// `max(0, (uncle_reward_base - d) / uncle_reward_divisor)`.
    pub uncle_reward_base: f64,
    pub uncle_reward_divisor: f64,
    pub nephew_reward: f64,
}

impl Default for EthereumParams {
    fn default() -> Self {
        EthereumParams {
            max_uncle_depth: 6,
            max_uncles_per_block: 2,
            uncle_reward_base: 8.0,
            uncle_reward_divisor: 8.0,
            nephew_reward: 1.0 / 32.0,
        }
    }
}

impl EthereumParams {
    pub fn uncle_reward(&self, depth: u32) -> f64 {
        ((self.uncle_reward_base - depth as f64) / self.uncle_reward_divisor).max(0.0)
    }
}

/// Simplified Ethereum: longest chain by first-parent chain length, plus
/// uncle references with depth-discounted rewards.
///
/// The first parent of every block is its chain parent; further parents
/// are uncles. Uncles never count towards the sequential history, so chain
/// length rather than shortest-path height orders blocks.
#[derive(Clone, Debug, Default)]
pub struct Ethereum {
    pub params: EthereumParams,
}

impl Ethereum {
    pub fn new(params: EthereumParams) -> Self {
        Ethereum { params }
    }

    /// Number of `previous` steps from `b` to the root.
    pub fn chain_height(&self, view: &DagView, b: BlockId) -> Result<u32> {
        let mut h = 0;
        let mut cur = b;
        while let Some(p) = view.parents(cur)?.first().copied() {
            h += 1;
            cur = p;
        }
        Ok(h)
    }

    fn history(&self, view: &DagView, b: BlockId) -> Result<Vec<BlockId>> {
        let mut chain = vec![b];
        let mut cur = b;
        while let Some(p) = view.parents(cur)?.first().copied() {
            chain.push(p);
            cur = p;
        }
        Ok(chain)
    }

    /// Blocks eligible as uncles for a new block mined on `preferred`, in
    /// id order.
    pub fn eligible_uncles(&self, view: &DagView, preferred: BlockId) -> Result<Vec<BlockId>> {
        let history = self.history(view, preferred)?;
        let n = view.dag().len();
        let mut in_history = vec![false; n];
        for &b in &history {
            in_history[b.index()] = true;
        }
        let mut referenced = vec![false; n];
        for &b in &history {
            for &p in view.parents(b)? {
                referenced[p.index()] = true;
            }
        }
        let new_height = self.chain_height(view, preferred)? + 1;
        let mut out = Vec::new();
        for u in view.blocks() {
            if in_history[u.index()] || referenced[u.index()] {
                continue;
            }
            let Some(&fork) = view.parents(u)?.first() else {
                continue;
            };
            if !in_history[fork.index()] {
                continue;
            }
            let depth = new_height - self.chain_height(view, u)?;
            if depth >= 1 && depth <= self.params.max_uncle_depth {
                out.push(u);
            }
        }
        Ok(out)
    }
}

impl Protocol for Ethereum {
    fn name(&self) -> &str {
        "ethereum"
    }

    fn describe(&self) -> String {
        format!("ethereum{:?}", self.params)
    }

    fn mining(&self, view: &DagView, preferred: BlockId) -> Result<Vec<BlockId>> {
        let mut parents = vec![preferred];
        parents.extend(
            self.eligible_uncles(view, preferred)?
                .into_iter()
                .take(self.params.max_uncles_per_block),
        );
        Ok(parents)
    }

    fn update(&self, view: &DagView, current: BlockId, incoming: BlockId) -> Result<Vec<BlockId>> {
        if self.chain_height(view, incoming)? > self.chain_height(view, current)? {
            Ok(vec![incoming])
        } else {
            Ok(vec![current])
        }
    }

    fn previous(&self, view: &DagView, b: BlockId) -> Result<Option<BlockId>> {
        Ok(view.parents(b)?.first().copied())
    }

    fn progress(&self, view: &DagView, b: BlockId) -> Result<f64> {
        Ok(self.chain_height(view, b)? as f64 + 1.0)
    }

    fn coinbase(&self, view: &DagView, b: BlockId) -> Result<Vec<RewardEntry>> {
        let miner = view.miner(b)?;
        let mut out = vec![RewardEntry::new(miner, 1.0)];
        let parents = view.parents(b)?;
        if parents.len() <= 1 {
            return Ok(out);
        }
        let h = self.chain_height(view, b)?;
        for &u in &parents[1..] {
            let hu = self.chain_height(view, u)?;
            let depth = h.saturating_sub(hu);
            if depth == 0 || depth > self.params.max_uncle_depth {
                return Err(violation(
                    self,
                    format!("block {b} includes uncle {u} at depth {depth}"),
                ));
            }
            out.push(RewardEntry::new(
                view.miner(u)?,
                self.params.uncle_reward(depth),
            ));
            out.push(RewardEntry::new(miner, self.params.nephew_reward));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{BlockDag, DefenderView::*, IgnoreStatus::*, Labels, WithholdStatus::*};
    use crate::protocol::{Miner, Visibility};

    const KNOWN_F: Labels = Labels::new(Known, Considered, Foreign);
    const KNOWN_R: Labels = Labels::new(Known, Considered, Released);

    fn g() -> BlockDag {
        BlockDag::with_genesis(Labels::new(PreferredD, PreferredA, Foreign))
    }

    #[test]
    fn no_forks_no_uncles() {
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let v = d.view(Visibility::All);
        assert_eq!(Ethereum::default().mining(&v, b1).unwrap(), vec![b1]);
    }

    #[test]
    fn stale_sibling_becomes_an_uncle() {
        // 0 <- 1 <- 2 (preferred), 1 <- 3 (stale sibling of 2)
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let b2 = d.append_block(&[b1], KNOWN_F).unwrap();
        let s = d.append_block(&[b1], KNOWN_R).unwrap();
        let v = d.view(Visibility::All);
        let eth = Ethereum::default();
        // brute-force eligibility: not in history, forks off history, depth in 1..=6
        let oracle: Vec<BlockId> = d
            .ids()
            .filter(|&u| u != d.genesis() && u != b1 && u != b2)
            .filter(|&u| {
                let fork = d.parents(u).unwrap()[0];
                fork == d.genesis() || fork == b1 || fork == b2
            })
            .filter(|&u| {
                let depth = 3 - d.height(u).unwrap();
                (1..=6).contains(&depth)
            })
            .collect();
        assert_eq!(oracle, vec![s]);
        assert_eq!(eth.mining(&v, b2).unwrap(), vec![b2, s]);
        // the sibling cannot be its own fork's uncle once referenced
        let n = d.append_block(&[b2, s], KNOWN_F).unwrap();
        let v = d.view(Visibility::All);
        assert_eq!(eth.mining(&v, n).unwrap(), vec![n]);
    }

    #[test]
    fn at_most_two_uncles_in_id_order() {
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let b2 = d.append_block(&[b1], KNOWN_F).unwrap();
        let u1 = d.append_block(&[b1], KNOWN_R).unwrap();
        let u2 = d.append_block(&[d.genesis()], KNOWN_R).unwrap();
        let u3 = d.append_block(&[b1], KNOWN_F).unwrap();
        let v = d.view(Visibility::All);
        let eth = Ethereum::default();
        assert_eq!(eth.eligible_uncles(&v, b2).unwrap(), vec![u1, u2, u3]);
        assert_eq!(eth.mining(&v, b2).unwrap(), vec![b2, u1, u2]);
    }

    #[test]
    fn hidden_blocks_are_not_eligible() {
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let b2 = d.append_block(&[b1], KNOWN_F).unwrap();
        d.append_block(&[b1], Labels::ATTACKER_MINED).unwrap();
        let v = d.view(Visibility::Defender);
        assert_eq!(Ethereum::default().mining(&v, b2).unwrap(), vec![b2]);
    }

    #[test]
    fn uncle_references_do_not_change_preference_or_progress() {
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let u = d.append_block(&[d.genesis()], KNOWN_R).unwrap();
        let plain = d.append_block(&[b1], KNOWN_F).unwrap();
        let with_uncle = d.append_block(&[b1, u], KNOWN_F).unwrap();
        let v = d.view(Visibility::All);
        let eth = Ethereum::default();
        assert_eq!(
            eth.progress(&v, plain).unwrap(),
            eth.progress(&v, with_uncle).unwrap()
        );
        assert_eq!(eth.update(&v, plain, with_uncle).unwrap(), vec![plain]);
        assert_eq!(eth.update(&v, with_uncle, plain).unwrap(), vec![with_uncle]);
        assert_eq!(eth.previous(&v, with_uncle).unwrap(), Some(b1));
        assert_eq!(eth.previous(&v, d.genesis()).unwrap(), None);
        assert_eq!(eth.progress(&v, d.genesis()).unwrap(), 1.0);
    }

    #[test]
    fn depth_one_uncle_rewards() {
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let u = d.append_block(&[d.genesis()], KNOWN_R).unwrap();
        let n = d.append_block(&[b1, u], KNOWN_F).unwrap();
        let v = d.view(Visibility::All);
        let cb = Ethereum::default().coinbase(&v, n).unwrap();
        assert_eq!(
            cb,
            vec![
                RewardEntry::new(Miner::Defender, 1.0),
                RewardEntry::new(Miner::Attacker, 7.0 / 8.0),
                RewardEntry::new(Miner::Defender, 1.0 / 32.0),
            ]
        );
        let to_defender: f64 = cb
            .iter()
            .filter(|r| r.recipient == Miner::Defender)
            .map(|r| r.value)
            .sum();
        assert_eq!(to_defender, 1.0 + 1.0 / 32.0);
    }

    #[test]
    fn two_uncles_are_rewarded_independently() {
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let b2 = d.append_block(&[b1], KNOWN_F).unwrap();
        let u1 = d.append_block(&[b1], KNOWN_R).unwrap();
        let u2 = d.append_block(&[d.genesis()], KNOWN_R).unwrap();
        let n = d.append_block(&[b2, u1, u2], KNOWN_F).unwrap();
        let v = d.view(Visibility::All);
        let cb = Ethereum::default().coinbase(&v, n).unwrap();
        let attacker: f64 = cb
            .iter()
            .filter(|r| r.recipient == Miner::Attacker)
            .map(|r| r.value)
            .sum();
        let defender: f64 = cb
            .iter()
            .filter(|r| r.recipient == Miner::Defender)
            .map(|r| r.value)
            .sum();
        assert_eq!(attacker, 7.0 / 8.0 + 6.0 / 8.0);
        assert_eq!(defender, 1.0 + 2.0 / 32.0);
    }

    #[test]
    fn uncle_reward_is_non_increasing() {
        let p = EthereumParams::default();
        for d in 1..10 {
            assert!(p.uncle_reward(d + 1) <= p.uncle_reward(d));
        }
    }

    #[test]
    fn too_deep_uncle_is_a_violation() {
        let eth = Ethereum::new(EthereumParams {
            max_uncle_depth: 1,
            ..EthereumParams::default()
        });
        let mut d = g();
        let b1 = d.append_block(&[d.genesis()], KNOWN_F).unwrap();
        let b2 = d.append_block(&[b1], KNOWN_F).unwrap();
        let u = d.append_block(&[d.genesis()], KNOWN_R).unwrap();
        let n = d.append_block(&[b2, u], KNOWN_F).unwrap();
        let v = d.view(Visibility::All);
        assert!(eth.coinbase(&v, n).is_err());
    }
}
