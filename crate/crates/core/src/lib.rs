//! Block-accurate simulation of a cluster of processing elements (PEs), each
//! with local memory and a set of disks, running two external-memory sorting
//! engines:
//!
//! * [`canonical`]: run formation, exact splitting plus an external
//!   all-to-all, then a local multiway merge. Every PE ends up with its
//!   canonical slice of the global order.
//! * [`striped`]: runs striped over all disks of all PEs, merged with batch
//!   merging driven by a prediction sequence and a prefetch schedule.
//!
//! All disk traffic goes through [`vdisk::VDisk`] and all inter-PE traffic
//! through [`net::Net`], so the counters in [`counters::PhaseCounters`] are
//! the complete I/O and communication record of a run.

pub mod canonical;
pub mod config;
pub mod counters;
pub mod element;
pub mod error;
pub mod harness;
pub mod merge;
pub mod net;
pub mod runform;
pub mod select;
pub mod striped;
pub mod vdisk;
pub mod xall;

pub use config::{MachineConfig, Violation};
pub use counters::{Phase, PhaseCounters};
pub use element::{compare, Element, ElementRef, Key, SENTINEL_KEY};
pub use error::{Error, Result};

/// Everything a simulated sort needs: configuration, disks, and network.
#[derive(Debug)]
pub struct Cluster {
    pub cfg: MachineConfig,
    pub disks: vdisk::VDisk,
    pub net: net::Net,
}

impl Cluster {
    /// In-memory cluster.
    pub fn new(cfg: MachineConfig) -> Self {
        let disks = vdisk::VDisk::new(cfg.pes, cfg.disks, cfg.block, cfg.elem_size);
        let net = net::Net::new(cfg.pes);
        Cluster { cfg, disks, net }
    }

    /// Cluster whose disks are backed by files in `dir`.
    pub fn with_persistence(cfg: MachineConfig, dir: &std::path::Path) -> Result<Self> {
        let disks = vdisk::VDisk::persistent(cfg.pes, cfg.disks, cfg.block, cfg.elem_size, dir)?;
        let net = net::Net::new(cfg.pes);
        Ok(Cluster { cfg, disks, net })
    }

    /// I/O and communication tallies combined.
    pub fn counters(&self) -> PhaseCounters {
        let mut c = self.disks.snapshot_counters();
        c.absorb(&self.net.snapshot_counters());
        c
    }
}
