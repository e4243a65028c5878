//! Per-phase, per-PE tallies of block I/O and element traffic.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    RunFormation,
    Selection,
    AllToAll,
    LocalMerge,
    StripedMerge,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::RunFormation,
        Phase::Selection,
        Phase::AllToAll,
        Phase::LocalMerge,
        Phase::StripedMerge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::RunFormation => "run_formation",
            Phase::Selection => "selection",
            Phase::AllToAll => "all_to_all",
            Phase::LocalMerge => "local_merge",
            Phase::StripedMerge => "striped_merge",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PeTally {
    pub blocks_read: Vec<u64>,
    pub blocks_written: Vec<u64>,
    pub elements_sent: u64,
    pub elements_received: u64,
    /// Elements a PE addressed to itself; not communication.
    pub elements_local: u64,
    /// Small bookkeeping traffic (splitters, selection probes), kept apart
    /// from data volume.
    pub control_sent: u64,
    pub control_received: u64,
}

impl PeTally {
    fn new(disks: usize) -> Self {
        PeTally {
            blocks_read: vec![0; disks],
            blocks_written: vec![0; disks],
            ..Default::default()
        }
    }

    fn absorb(&mut self, o: &PeTally) {
        for (a, b) in self.blocks_read.iter_mut().zip(&o.blocks_read) {
            *a += b;
        }
        for (a, b) in self.blocks_written.iter_mut().zip(&o.blocks_written) {
            *a += b;
        }
        self.elements_sent += o.elements_sent;
        self.elements_received += o.elements_received;
        self.elements_local += o.elements_local;
        self.control_sent += o.control_sent;
        self.control_received += o.control_received;
    }

    pub fn io_blocks(&self) -> u64 {
        self.blocks_read.iter().sum::<u64>() + self.blocks_written.iter().sum::<u64>()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PhaseTally {
    pub pes: Vec<PeTally>,
    /// Parallel I/O steps; maintained by the striped engine only.
    pub io_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseCounters {
    phases: Vec<PhaseTally>,
}

impl PhaseCounters {
    pub fn new(pes: usize, disks: usize) -> Self {
        let tally = PhaseTally {
            pes: vec![PeTally::new(disks); pes],
            io_steps: 0,
        };
        PhaseCounters {
            phases: vec![tally; Phase::ALL.len()],
        }
    }

    pub fn phase(&self, phase: Phase) -> &PhaseTally {
        &self.phases[phase as usize]
    }

    pub fn pe(&self, phase: Phase, pe: usize) -> &PeTally {
        &self.phases[phase as usize].pes[pe]
    }

    pub(crate) fn pe_mut(&mut self, phase: Phase, pe: usize) -> &mut PeTally {
        &mut self.phases[phase as usize].pes[pe]
    }

    pub(crate) fn add_io_steps(&mut self, phase: Phase, steps: u64) {
        self.phases[phase as usize].io_steps += steps;
    }

    pub fn absorb(&mut self, o: &PhaseCounters) {
        for (a, b) in self.phases.iter_mut().zip(&o.phases) {
            for (x, y) in a.pes.iter_mut().zip(&b.pes) {
                x.absorb(y);
            }
            a.io_steps += b.io_steps;
        }
    }

    pub fn blocks_read(&self, phase: Phase) -> u64 {
        self.phase(phase)
            .pes
            .iter()
            .map(|p| p.blocks_read.iter().sum::<u64>())
            .sum()
    }

    pub fn blocks_written(&self, phase: Phase) -> u64 {
        self.phase(phase)
            .pes
            .iter()
            .map(|p| p.blocks_written.iter().sum::<u64>())
            .sum()
    }

    /// Blocks read plus written in one phase, over all PEs.
    pub fn io_blocks(&self, phase: Phase) -> u64 {
        self.blocks_read(phase) + self.blocks_written(phase)
    }

    pub fn total_io_blocks(&self) -> u64 {
        Phase::ALL.iter().map(|&p| self.io_blocks(p)).sum()
    }

    /// Data elements sent between distinct PEs in one phase.
    pub fn sent(&self, phase: Phase) -> u64 {
        self.phase(phase).pes.iter().map(|p| p.elements_sent).sum()
    }

    pub fn received(&self, phase: Phase) -> u64 {
        self.phase(phase)
            .pes
            .iter()
            .map(|p| p.elements_received)
            .sum()
    }

    pub fn total_sent(&self) -> u64 {
        Phase::ALL.iter().map(|&p| self.sent(p)).sum()
    }

    pub fn total_received(&self) -> u64 {
        Phase::ALL.iter().map(|&p| self.received(p)).sum()
    }

    pub fn control(&self, phase: Phase) -> u64 {
        self.phase(phase).pes.iter().map(|p| p.control_sent).sum()
    }

    pub fn io_steps(&self, phase: Phase) -> u64 {
        self.phase(phase).io_steps
    }

    /// Blocks per disk over all phases, indexed `[pe][disk]`, reads plus writes.
    pub fn blocks_per_disk(&self) -> Vec<Vec<u64>> {
        let pes = self.phases[0].pes.len();
        let mut out: Vec<Vec<u64>> = (0..pes)
            .map(|p| vec![0; self.phases[0].pes[p].blocks_read.len()])
            .collect();
        for t in &self.phases {
            for (pe, tally) in t.pes.iter().enumerate() {
                for (d, slot) in out[pe].iter_mut().enumerate() {
                    *slot += tally.blocks_read[d] + tally.blocks_written[d];
                }
            }
        }
        out
    }
}
