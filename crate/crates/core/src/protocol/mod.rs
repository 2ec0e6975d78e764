//! Protocol specifications and the restricted dag view they observe.
//!
//! A protocol is five pure functions over a [`DagView`]. The view exposes
//! only the structural accessors (`parents`, `children`, `miner`, `height`);
//! protocol code never sees the attack labels directly. Which blocks are
//! visible is decided by the caller: the attacker's view hides ignored
//! blocks, the defender's view hides unknown blocks.

use std::fmt;
use std::sync::Arc;

use crate::dag::{BlockDag, DefenderView, IgnoreStatus, WithholdStatus};
use crate::error::{Error, Result};

mod bitcoin;
mod ethereum;

pub use bitcoin::Bitcoin;
pub use ethereum::{Ethereum, EthereumParams};

/// Handle of one block within one [`BlockDag`].
///
/// Ids are dense indices; parents always carry smaller ids than their
/// children. Truncation and canonical relabeling renumber blocks.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub(crate) u32);

impl BlockId {
    pub fn new(index: usize) -> Self {
        BlockId(index as u32)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Miner {
    Attacker,
    Defender,
}

impl fmt::Display for Miner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Miner::Attacker => "attacker",
            Miner::Defender => "defender",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct RewardEntry {
    pub recipient: Miner,
    pub value: f64,
}

impl RewardEntry {
    pub fn new(recipient: Miner, value: f64) -> Self {
        debug_assert!(value >= 0.0);
        RewardEntry { recipient, value }
    }
}

/// Which blocks a view exposes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Visibility {
    All,
    /// The attacker's view: blocks it has not yet considered are hidden.
    Attacker,
    /// The defender's view: blocks it has not yet received are hidden.
    Defender,
}

/// Read-only window onto a [`BlockDag`].
///
/// The visible set is closed under `parents` because the label invariants
/// require considered (known) blocks to have considered (known) parents.
#[derive(Copy, Clone)]
pub struct DagView<'a> {
    dag: &'a BlockDag,
    visibility: Visibility,
}

impl<'a> DagView<'a> {
    pub fn new(dag: &'a BlockDag, visibility: Visibility) -> Self {
        DagView { dag, visibility }
    }

    pub fn dag(&self) -> &'a BlockDag {
        self.dag
    }

    pub fn visibility(&self) -> Visibility {
        self.visibility
    }

    pub fn is_visible(&self, b: BlockId) -> bool {
        match self.dag.labels(b) {
            Ok(l) => match self.visibility {
                Visibility::All => true,
                Visibility::Attacker => l.ignore != IgnoreStatus::Ignored,
                Visibility::Defender => l.view != DefenderView::Unknown,
            },
            Err(_) => false,
        }
    }

    fn check(&self, b: BlockId) -> Result<()> {
        if b.index() >= self.dag.len() {
            Err(Error::InvalidBlock(b))
        } else if !self.is_visible(b) {
            Err(Error::HiddenBlock(b))
        } else {
            Ok(())
        }
    }

    pub fn genesis(&self) -> BlockId {
        self.dag.genesis()
    }

    /// Visible blocks in id order.
    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.dag.ids().filter(move |&b| self.is_visible(b))
    }

    /// Parents in the order they were referenced at mining time.
    pub fn parents(&self, b: BlockId) -> Result<&'a [BlockId]> {
        self.check(b)?;
        self.dag.parents(b)
    }

    /// Visible children in id order, which is the canonical order for
    /// dags produced by the attack model.
    pub fn children(&self, b: BlockId) -> Result<Vec<BlockId>> {
        self.check(b)?;
        Ok(self
            .dag
            .children(b)
            .filter(|&c| self.is_visible(c))
            .collect())
    }

    pub fn miner(&self, b: BlockId) -> Result<Miner> {
        self.check(b)?;
        Ok(match self.dag.labels(b)?.withhold {
            WithholdStatus::Foreign => Miner::Defender,
            WithholdStatus::Withheld | WithholdStatus::Released => Miner::Attacker,
        })
    }

    /// Length of the shortest path from `b` to the genesis.
    pub fn height(&self, b: BlockId) -> Result<u32> {
        self.check(b)?;
        self.dag.height(b)
    }
}

/// The five pure functions that define a proof-of-work DAG protocol.
pub trait Protocol: Send + Sync {
    fn name(&self) -> &str;

    /// Name plus any parameters; distinguishes cache files.
    fn describe(&self) -> String {
        self.name().to_string()
    }

    /// Blocks the next block should reference, given the miner's preferred
    /// block. The first entry is the block's primary parent.
    fn mining(&self, view: &DagView, preferred: BlockId) -> Result<Vec<BlockId>>;

    /// New preferred block(s) after receiving `incoming`. More than one
    /// result models uniform tie breaking.
    fn update(&self, view: &DagView, current: BlockId, incoming: BlockId) -> Result<Vec<BlockId>>;

    /// One ancestor of `b` on its sequential history, or `None`.
    fn previous(&self, view: &DagView, b: BlockId) -> Result<Option<BlockId>>;

    /// Size of the sequential history of `b`.
    fn progress(&self, view: &DagView, b: BlockId) -> Result<f64>;

    /// Rewards minted by `b`.
    fn coinbase(&self, view: &DagView, b: BlockId) -> Result<Vec<RewardEntry>>;
}

pub const PROTOCOL_NAMES: &[&str] = &["bitcoin", "ethereum"];

/// Looks up a protocol by its registry name.
pub fn by_name(name: &str) -> Result<Arc<dyn Protocol>> {
    match name {
        "bitcoin" => Ok(Arc::new(Bitcoin)),
        "ethereum" => Ok(Arc::new(Ethereum::default())),
        other => Err(Error::Config(format!(
            "unknown protocol `{other}` (expected one of: {})",
            PROTOCOL_NAMES.join(", ")
        ))),
    }
}

pub(crate) fn violation(protocol: &dyn Protocol, message: impl Into<String>) -> Error {
    Error::Protocol {
        protocol: protocol.name().to_string(),
        message: message.into(),
    }
}
