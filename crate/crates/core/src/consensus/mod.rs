//! Proof-of-authority consensus over a seeded, simulated network.

mod message;
mod node;
mod scenario;
mod sim;
mod trace;

pub use message::{ConsensusMessage, Locked};
pub use node::{Node, NodeConfig, NodeStats, Outbound};
pub use scenario::{
    account_key, validator_key, CrashFault, GenesisAccount, Latency, MaterializedWorkload,
    Partition, Probability, ProbabilityError, ScenarioError, SimScenario, TimedTx, Workload,
};
pub use sim::{run_simulation, signed_genesis, SimOutcome};
pub use trace::{NodeSummary, SendOutcome, SimTrace, TraceEvent, TraceParseError};

pub use crate::block::ValidatorSet;

/// `validators[(height + round) mod n]`.
pub fn proposer_for(height: u64, round: u64, vs: &ValidatorSet) -> crate::crypto::Address {
    vs.proposer_for(height, round).address
}
