//! The block dag with per-block attack labels.
//!
//! Every block carries three labels: what the defender knows
//! ([`DefenderView`]), what the attacker ignores ([`IgnoreStatus`]) and
//! what the attacker withholds ([`WithholdStatus`]). All three families
//! are promoted in topological order only, and each has exactly one
//! "preferred" block where applicable.

use std::fmt::{self, Write as _};

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::protocol::{BlockId, DagView, Miner, Protocol, RewardEntry, Visibility};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DefenderView {
    Unknown = 0,
    Known = 1,
    PreferredD = 2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IgnoreStatus {
    Ignored = 0,
    Considered = 1,
    PreferredA = 2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WithholdStatus {
    Foreign = 0,
    Withheld = 1,
    Released = 2,
}

impl DefenderView {
    pub const ALL: [DefenderView; 3] = [Self::Unknown, Self::Known, Self::PreferredD];

    pub fn name(self) -> &'static str {
        match self {
            Self::Unknown => "unknown",
            Self::Known => "known",
            Self::PreferredD => "preferred",
        }
    }
}

impl IgnoreStatus {
    pub const ALL: [IgnoreStatus; 3] = [Self::Ignored, Self::Considered, Self::PreferredA];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ignored => "ignored",
            Self::Considered => "considered",
            Self::PreferredA => "preferred",
        }
    }
}

impl WithholdStatus {
    pub const ALL: [WithholdStatus; 3] = [Self::Foreign, Self::Withheld, Self::Released];

    pub fn name(self) -> &'static str {
        match self {
            Self::Foreign => "foreign",
            Self::Withheld => "withheld",
            Self::Released => "released",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Labels {
    pub view: DefenderView,
    pub ignore: IgnoreStatus,
    pub withhold: WithholdStatus,
}

impl Labels {
    pub const fn new(view: DefenderView, ignore: IgnoreStatus, withhold: WithholdStatus) -> Self {
        Labels {
            view,
            ignore,
            withhold,
        }
    }

    /// Freshly mined attacker block.
    pub const ATTACKER_MINED: Labels = Labels::new(
        DefenderView::Unknown,
        IgnoreStatus::Ignored,
        WithholdStatus::Withheld,
    );

    /// Freshly mined defender block.
    pub const DEFENDER_MINED: Labels = Labels::new(
        DefenderView::Unknown,
        IgnoreStatus::Ignored,
        WithholdStatus::Foreign,
    );

    pub fn miner(self) -> Miner {
        match self.withhold {
            WithholdStatus::Foreign => Miner::Defender,
            _ => Miner::Attacker,
        }
    }

    /// Base-3 encoding of the label triple, in `0..27`.
    pub fn color(self) -> u8 {
        self.view as u8 * 9 + self.ignore as u8 * 3 + self.withhold as u8
    }

    pub fn from_color(color: u8) -> Option<Labels> {
        if color >= 27 {
            return None;
        }
        Some(Labels::new(
            DefenderView::ALL[(color / 9) as usize],
            IgnoreStatus::ALL[(color / 3 % 3) as usize],
            WithholdStatus::ALL[(color % 3) as usize],
        ))
    }
}

pub(crate) type Parents = SmallVec<[BlockId; 3]>;

#[derive(Clone, Debug, PartialEq, Eq)]
struct Block {
    parents: Parents,
    labels: Labels,
    height: u32,
}

/// Append-only block dag rooted at block 0.
///
/// Ids are topologically ordered: every parent id is smaller than the id
/// of its child.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDag {
    blocks: Vec<Block>,
}

impl BlockDag {
    pub fn with_genesis(labels: Labels) -> Self {
        BlockDag {
            blocks: vec![Block {
                parents: Parents::new(),
                labels,
                height: 0,
            }],
        }
    }

    /// Builds a dag from topologically ordered parts. Block 0 is the root.
    pub fn from_parts(parts: Vec<(Vec<BlockId>, Labels)>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let (root_parents, root_labels) = iter
            .next()
            .ok_or_else(|| Error::state("dag needs a genesis block"))?;
        if !root_parents.is_empty() {
            return Err(Error::state("genesis must not have parents"));
        }
        let mut dag = BlockDag::with_genesis(root_labels);
        for (parents, labels) in iter {
            dag.push_unchecked(&parents, labels)?;
        }
        Ok(dag)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn genesis(&self) -> BlockId {
        BlockId(0)
    }

    pub fn ids(&self) -> impl DoubleEndedIterator<Item = BlockId> + ExactSizeIterator {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    fn block(&self, b: BlockId) -> Result<&Block> {
        self.blocks.get(b.index()).ok_or(Error::InvalidBlock(b))
    }

    fn block_mut(&mut self, b: BlockId) -> Result<&mut Block> {
        self.blocks.get_mut(b.index()).ok_or(Error::InvalidBlock(b))
    }

    pub fn parents(&self, b: BlockId) -> Result<&[BlockId]> {
        Ok(&self.block(b)?.parents)
    }

    /// Children of `b` in id order.
    pub fn children(&self, b: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        let start = b.index() + 1;
        self.blocks
            .iter()
            .enumerate()
            .skip(start)
            .filter(move |(_, blk)| blk.parents.contains(&b))
            .map(|(i, _)| BlockId(i as u32))
    }

    pub fn labels(&self, b: BlockId) -> Result<Labels> {
        Ok(self.block(b)?.labels)
    }

    pub fn height(&self, b: BlockId) -> Result<u32> {
        Ok(self.block(b)?.height)
    }

    pub fn max_height(&self) -> u32 {
        self.blocks.iter().map(|b| b.height).max().unwrap_or(0)
    }

    pub fn miner(&self, b: BlockId) -> Result<Miner> {
        Ok(self.labels(b)?.miner())
    }

    pub fn view(&self, visibility: Visibility) -> DagView<'_> {
        DagView::new(self, visibility)
    }

    fn push_unchecked(&mut self, parents: &[BlockId], labels: Labels) -> Result<BlockId> {
        if parents.is_empty() {
            return Err(Error::state("non-genesis block needs at least one parent"));
        }
        let id = BlockId(self.blocks.len() as u32);
        let mut height = u32::MAX;
        for (i, &p) in parents.iter().enumerate() {
            if p >= id {
                return Err(Error::InvalidBlock(p));
            }
            if parents[..i].contains(&p) {
                return Err(Error::state(format!("duplicate parent {p}")));
            }
            height = height.min(self.blocks[p.index()].height + 1);
        }
        self.blocks.push(Block {
            parents: parents.iter().copied().collect(),
            labels,
            height,
        });
        Ok(id)
    }

    /// Appends a block referencing `parents` (in that order).
    ///
    /// The new block's labels must be consistent with its parents, and it
    /// must not claim either preferred label.
    pub fn append_block(&mut self, parents: &[BlockId], labels: Labels) -> Result<BlockId> {
        if labels.view == DefenderView::PreferredD || labels.ignore == IgnoreStatus::PreferredA {
            return Err(Error::state("a new block cannot be preferred on arrival"));
        }
        for &p in parents {
            let pl = self.labels(p)?;
            if labels.view != DefenderView::Unknown && pl.view == DefenderView::Unknown {
                return Err(Error::state(format!("known block with unknown parent {p}")));
            }
            if labels.ignore != IgnoreStatus::Ignored && pl.ignore == IgnoreStatus::Ignored {
                return Err(Error::state(format!(
                    "considered block with ignored parent {p}"
                )));
            }
            if labels.withhold == WithholdStatus::Released
                && pl.withhold == WithholdStatus::Withheld
            {
                return Err(Error::state(format!(
                    "released block with withheld parent {p}"
                )));
            }
        }
        self.push_unchecked(parents, labels)
    }

    fn find_unique(&self, pred: impl Fn(Labels) -> bool, what: &str) -> Result<BlockId> {
        let mut found = None;
        for (i, blk) in self.blocks.iter().enumerate() {
            if pred(blk.labels) {
                if found.is_some() {
                    return Err(Error::state(format!("more than one {what} block")));
                }
                found = Some(BlockId(i as u32));
            }
        }
        found.ok_or_else(|| Error::state(format!("no {what} block")))
    }

    pub fn preferred_attacker(&self) -> Result<BlockId> {
        self.find_unique(
            |l| l.ignore == IgnoreStatus::PreferredA,
            "attacker-preferred",
        )
    }

    pub fn preferred_defender(&self) -> Result<BlockId> {
        self.find_unique(|l| l.view == DefenderView::PreferredD, "defender-preferred")
    }

    /// Withheld blocks none of whose parents are withheld, in id order.
    pub fn release_candidates(&self) -> Vec<BlockId> {
        self.ids()
            .filter(|&b| {
                let blk = &self.blocks[b.index()];
                blk.labels.withhold == WithholdStatus::Withheld
                    && blk
                        .parents
                        .iter()
                        .all(|p| self.blocks[p.index()].labels.withhold != WithholdStatus::Withheld)
            })
            .collect()
    }

    /// Ignored blocks none of whose parents are ignored, in id order.
    pub fn consider_candidates(&self) -> Vec<BlockId> {
        self.ids()
            .filter(|&b| {
                let blk = &self.blocks[b.index()];
                blk.labels.ignore == IgnoreStatus::Ignored
                    && blk
                        .parents
                        .iter()
                        .all(|p| self.blocks[p.index()].labels.ignore != IgnoreStatus::Ignored)
            })
            .collect()
    }

    /// Marks a withheld block released. Its parents must not be withheld.
    pub fn release(&mut self, b: BlockId) -> Result<()> {
        if self.labels(b)?.withhold != WithholdStatus::Withheld {
            return Err(Error::state(format!("block {b} is not withheld")));
        }
        if self
            .parents(b)?
            .iter()
            .any(|&p| self.blocks[p.index()].labels.withhold == WithholdStatus::Withheld)
        {
            return Err(Error::state(format!("block {b} has a withheld parent")));
        }
        self.block_mut(b)?.labels.withhold = WithholdStatus::Released;
        Ok(())
    }

    /// Marks an ignored block considered. Its parents must be considered.
    pub fn consider(&mut self, b: BlockId) -> Result<()> {
        if self.labels(b)?.ignore != IgnoreStatus::Ignored {
            return Err(Error::state(format!("block {b} is not ignored")));
        }
        if self
            .parents(b)?
            .iter()
            .any(|&p| self.blocks[p.index()].labels.ignore == IgnoreStatus::Ignored)
        {
            return Err(Error::state(format!("block {b} has an ignored parent")));
        }
        self.block_mut(b)?.labels.ignore = IgnoreStatus::Considered;
        Ok(())
    }

    /// Marks an unknown block known to the defender. Its parents must be known.
    pub fn learn(&mut self, b: BlockId) -> Result<()> {
        if self.labels(b)?.view != DefenderView::Unknown {
            return Err(Error::state(format!("block {b} is already known")));
        }
        if self
            .parents(b)?
            .iter()
            .any(|&p| self.blocks[p.index()].labels.view == DefenderView::Unknown)
        {
            return Err(Error::state(format!("block {b} has an unknown parent")));
        }
        if self.labels(b)?.withhold == WithholdStatus::Withheld {
            return Err(Error::state(format!("block {b} is withheld")));
        }
        self.block_mut(b)?.labels.view = DefenderView::Known;
        Ok(())
    }

    /// Moves the attacker's preference to `b`, which must be considered.
    pub fn set_preferred_attacker(&mut self, b: BlockId) -> Result<()> {
        if self.labels(b)?.ignore == IgnoreStatus::Ignored {
            return Err(Error::state(format!("cannot prefer ignored block {b}")));
        }
        let old = self.preferred_attacker()?;
        self.blocks[old.index()].labels.ignore = IgnoreStatus::Considered;
        self.blocks[b.index()].labels.ignore = IgnoreStatus::PreferredA;
        Ok(())
    }

    /// Moves the defender's preference to `b`, which must be known.
    pub fn set_preferred_defender(&mut self, b: BlockId) -> Result<()> {
        if self.labels(b)?.view == DefenderView::Unknown {
            return Err(Error::state(format!("cannot prefer unknown block {b}")));
        }
        let old = self.preferred_defender()?;
        self.blocks[old.index()].labels.view = DefenderView::Known;
        self.blocks[b.index()].labels.view = DefenderView::PreferredD;
        Ok(())
    }

    /// Checks every structural and label invariant.
    pub fn check_invariants(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::state("empty dag"));
        }
        self.preferred_attacker()?;
        self.preferred_defender()?;
        for (i, blk) in self.blocks.iter().enumerate() {
            let id = BlockId(i as u32);
            let l = blk.labels;
            if i == 0 {
                if !blk.parents.is_empty() || blk.height != 0 {
                    return Err(Error::state("genesis must be a root"));
                }
                if l.view == DefenderView::Unknown || l.ignore == IgnoreStatus::Ignored {
                    return Err(Error::state("genesis must be known and considered"));
                }
                if l.withhold == WithholdStatus::Withheld {
                    return Err(Error::state("genesis must not be withheld"));
                }
                continue;
            }
            if blk.parents.is_empty() {
                return Err(Error::state(format!("block {id} is a second root")));
            }
            let mut height = u32::MAX;
            for &p in &blk.parents {
                if p >= id {
                    return Err(Error::state(format!(
                        "block {id} references later block {p}"
                    )));
                }
                let pl = self.blocks[p.index()].labels;
                height = height.min(self.blocks[p.index()].height + 1);
                if l.view != DefenderView::Unknown && pl.view == DefenderView::Unknown {
                    return Err(Error::state(format!(
                        "known block {id} has unknown parent {p}"
                    )));
                }
                if l.ignore != IgnoreStatus::Ignored && pl.ignore == IgnoreStatus::Ignored {
                    return Err(Error::state(format!(
                        "considered block {id} has ignored parent {p}"
                    )));
                }
                if l.withhold == WithholdStatus::Released && pl.withhold == WithholdStatus::Withheld
                {
                    return Err(Error::state(format!(
                        "released block {id} has withheld parent {p}"
                    )));
                }
            }
            if height != blk.height {
                return Err(Error::state(format!("stale height on block {id}")));
            }
            if l.view != DefenderView::Unknown && l.withhold == WithholdStatus::Withheld {
                return Err(Error::state(format!("defender knows withheld block {id}")));
            }
        }
        Ok(())
    }

    /// Sequential history of `b` (including `b`) following `previous`.
    pub fn history(&self, protocol: &dyn Protocol, b: BlockId) -> Result<Vec<BlockId>> {
        let view = self.view(Visibility::All);
        let mut chain = vec![b];
        let mut cur = b;
        while let Some(prev) = protocol.previous(&view, cur)? {
            if prev >= cur {
                return Err(crate::protocol::violation(
                    protocol,
                    format!("previous({cur}) = {prev} is not an ancestor"),
                ));
            }
            chain.push(prev);
            cur = prev;
        }
        Ok(chain)
    }

    /// Deepest block on both preferred blocks' sequential histories.
    pub fn latest_common_ancestor(&self, protocol: &dyn Protocol) -> Result<BlockId> {
        let a = self.history(protocol, self.preferred_attacker()?)?;
        let d = self.history(protocol, self.preferred_defender()?)?;
        let mut on_a = vec![false; self.len()];
        for b in a {
            on_a[b.index()] = true;
        }
        d.into_iter()
            .find(|b| on_a[b.index()])
            .ok_or_else(|| Error::state("preferred histories share no block"))
    }

    /// Re-roots the dag at `new_genesis`.
    ///
    /// Every block that is neither `new_genesis` nor one of its descendants
    /// is removed, and references to removed blocks are dropped from the
    /// parent lists of survivors. Returns the old-to-new id mapping.
    pub fn truncate(&mut self, new_genesis: BlockId) -> Result<Vec<Option<BlockId>>> {
        self.block(new_genesis)?;
        let n = self.len();
        let mut map: Vec<Option<BlockId>> = vec![None; n];
        if new_genesis.index() == 0 {
            for (i, m) in map.iter_mut().enumerate() {
                *m = Some(BlockId(i as u32));
            }
            return Ok(map);
        }
        let mut kept = Vec::with_capacity(n - new_genesis.index());
        map[new_genesis.index()] = Some(BlockId(0));
        kept.push(Block {
            parents: Parents::new(),
            labels: self.blocks[new_genesis.index()].labels,
            height: 0,
        });
        for i in new_genesis.index() + 1..n {
            let blk = &self.blocks[i];
            if !blk.parents.iter().any(|p| map[p.index()].is_some()) {
                continue;
            }
            let parents: Parents = blk.parents.iter().filter_map(|p| map[p.index()]).collect();
            let height = parents
                .iter()
                .map(|p| kept[p.index()].height + 1)
                .min()
                .unwrap_or(0);
            map[i] = Some(BlockId(kept.len() as u32));
            kept.push(Block {
                parents,
                labels: blk.labels,
                height,
            });
        }
        self.blocks = kept;
        Ok(map)
    }

    /// Returns the dag with block `order[k]` renumbered to `k`.
    ///
    /// `order` must be a permutation of the ids that lists parents before
    /// children.
    pub fn relabel(&self, order: &[BlockId]) -> Result<BlockDag> {
        if order.len() != self.len() {
            return Err(Error::state("relabeling must cover every block"));
        }
        let mut pos = vec![u32::MAX; self.len()];
        for (k, b) in order.iter().enumerate() {
            self.block(*b)?;
            pos[b.index()] = k as u32;
        }
        let mut parts = Vec::with_capacity(self.len());
        for &b in order {
            let blk = &self.blocks[b.index()];
            let parents: Vec<BlockId> = blk
                .parents
                .iter()
                .map(|p| BlockId(pos[p.index()]))
                .collect();
            parts.push((parents, blk.labels));
        }
        BlockDag::from_parts(parts)
    }

    /// Coinbase rewards of `b`, evaluated on the full dag.
    pub fn coinbase(&self, protocol: &dyn Protocol, b: BlockId) -> Result<Vec<RewardEntry>> {
        protocol.coinbase(&self.view(Visibility::All), b)
    }

    /// One line per block: `id parents=[..] miner view ignore withhold`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            let parents: Vec<String> = blk.parents.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(
                out,
                "{i} parents=[{}] {} {} {} {}",
                parents.join(","),
                blk.labels.miner(),
                blk.labels.view.name(),
                blk.labels.ignore.name(),
                blk.labels.withhold.name()
            );
        }
        out
    }
}

impl fmt::Display for BlockDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}
