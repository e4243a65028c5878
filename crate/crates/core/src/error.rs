use crate::config::Violation;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("read of unallocated slot: pe {pe}, logical block {logical}")]
    UnallocatedSlot { pe: usize, logical: u64 },

    #[error("double deallocation: pe {pe}, logical block {logical}")]
    DoubleDeallocate { pe: usize, logical: u64 },

    #[error("block has {got} elements, expected {expected}")]
    BlockLength { expected: usize, got: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("rank {rank} out of range 0..={total}")]
    RankOutOfRange { rank: u64, total: u64 },

    #[error("ranks must be non-decreasing")]
    RanksNotSorted,

    #[error("empty sample cannot initialize a selection for rank {0}")]
    EmptySample(u64),

    #[error("pe {pe} holds {held} elements, memory is {budget}")]
    MemoryBudget { pe: usize, held: u64, budget: u64 },

    #[error("budget of {budget} elements is below {needed} (one block per partner plus one)")]
    InfeasibleBudget { budget: u64, needed: u64 },

    #[error("{runs} runs exceed merge arity {arity}")]
    ArityExceeded { runs: usize, arity: usize },

    #[error("prefetch buffer of {w} blocks is smaller than the {disks} disks")]
    BufferTooSmall { w: usize, disks: usize },

    #[error("invalid configuration: {}", list(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("unknown input kind {0:?}")]
    UnknownInputKind(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
