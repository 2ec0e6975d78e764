use super::{BlockId, DagView, Protocol, RewardEntry};
use crate::error::Result;

/// Nakamoto consensus: one parent, longest chain wins, first received
/// breaks ties, one unit of reward per block.
#[derive(Copy, Clone, Debug, Default)]
pub struct Bitcoin;

impl Protocol for Bitcoin {
    fn name(&self) -> &str {
        "bitcoin"
    }

    fn mining(&self, view: &DagView, preferred: BlockId) -> Result<Vec<BlockId>> {
        view.height(preferred)?;
        Ok(vec![preferred])
    }

    fn update(&self, view: &DagView, current: BlockId, incoming: BlockId) -> Result<Vec<BlockId>> {
        if view.height(incoming)? > view.height(current)? {
            Ok(vec![incoming])
        } else {
            Ok(vec![current])
        }
    }

    fn previous(&self, view: &DagView, b: BlockId) -> Result<Option<BlockId>> {
        Ok(view.parents(b)?.first().copied())
    }

    fn progress(&self, view: &DagView, b: BlockId) -> Result<f64> {
        Ok(view.height(b)? as f64 + 1.0)
    }

    fn coinbase(&self, view: &DagView, b: BlockId) -> Result<Vec<RewardEntry>> {
        Ok(vec![RewardEntry::new(view.miner(b)?, 1.0)])
    }
}
