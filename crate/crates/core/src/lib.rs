//! Selfish-mining MDPs derived mechanically from DAG protocol specifications.

pub mod attack;
pub mod baseline;
pub mod canonical;
pub mod dag;
pub mod error;
pub mod explorer;
pub mod fixtures;
pub mod mdp;
pub mod protocol;
pub mod solver;
pub mod sweep;

pub use attack::{Action, AttackModel, ModelParams};
pub use canonical::{canonical_form, canonical_key, StateKey};
pub use dag::{BlockDag, DefenderView, IgnoreStatus, Labels, WithholdStatus};
pub use error::{Error, Result};
pub use protocol::{by_name, Bitcoin, BlockId, Ethereum, EthereumParams, Miner, Protocol};
