//! Virtual disks: `D` per PE, block-granular, with per-phase I/O counters.
//!
//! A PE addresses its storage by logical block number `l`, which lives on
//! disk `l mod D` at slot `l div D`. Consecutive logical blocks are therefore
//! striped over the local disks.

use crate::counters::{Phase, PhaseCounters};
use crate::element::Element;
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

pub type Block = Vec<Element>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockAddr {
    pub pe: usize,
    pub logical: u64,
}

impl BlockAddr {
    pub fn new(pe: usize, logical: u64) -> Self {
        BlockAddr { pe, logical }
    }

    pub fn disk(&self, disks: usize) -> usize {
        (self.logical % disks as u64) as usize
    }

    pub fn slot(&self, disks: usize) -> u64 {
        self.logical / disks as u64
    }
}

#[derive(Debug, Default)]
struct DiskState {
    present: Vec<bool>,
    data: Vec<Option<Block>>,
    /// Slots below `high` that are neither present nor handed out.
    free: BTreeSet<u64>,
    high: u64,
    file: Option<File>,
}

impl DiskState {
    fn claim(&mut self, slot: u64) {
        if slot >= self.high {
            self.free.extend(self.high..slot);
            self.high = slot + 1;
        } else {
            self.free.remove(&slot);
        }
        let need = self.high as usize;
        if self.present.len() < need {
            self.present.resize(need, false);
        }
    }

    fn next_free(&mut self) -> u64 {
        match self.free.pop_first() {
            Some(s) => s,
            None => {
                let s = self.high;
                self.claim(s);
                s
            }
        }
    }

    fn is_present(&self, slot: u64) -> bool {
        self.present.get(slot as usize).copied().unwrap_or(false)
    }
}

#[derive(Debug)]
pub struct VDisk {
    pes: usize,
    disks: usize,
    block: usize,
    elem_size: usize,
    state: Vec<Vec<DiskState>>,
    /// Round-robin cursor for [`VDisk::alloc`].
    cursor: Vec<usize>,
    allocated: Vec<u64>,
    peak: Vec<u64>,
    counters: PhaseCounters,
    persistent: bool,
}

impl VDisk {
    pub fn new(pes: usize, disks: usize, block: usize, elem_size: usize) -> Self {
        let state = (0..pes)
            .map(|_| (0..disks).map(|_| DiskState::default()).collect())
            .collect();
        VDisk {
            pes,
            disks,
            block,
            elem_size,
            state,
            cursor: vec![0; pes],
            allocated: vec![0; pes],
            peak: vec![0; pes],
            counters: PhaseCounters::new(pes, disks),
            persistent: false,
        }
    }

    /// Disks backed by files `pe<p>_disk<d>.bin` in `dir`. Block at slot `s`
    /// sits at byte offset `s·B·elem_size`, each element little-endian key
    /// followed by its payload.
    pub fn persistent(
        pes: usize,
        disks: usize,
        block: usize,
        elem_size: usize,
        dir: &Path,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut v = Self::new(pes, disks, block, elem_size);
        for p in 0..pes {
            for d in 0..disks {
                let f = OpenOptions::new()
                    .read(true)
                    .write(true)
                    .create(true)
                    .truncate(true)
                    .open(dir.join(format!("pe{p}_disk{d}.bin")))?;
                v.state[p][d].file = Some(f);
            }
        }
        v.persistent = true;
        Ok(v)
    }

    pub fn pes(&self) -> usize {
        self.pes
    }

    pub fn disks(&self) -> usize {
        self.disks
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    fn locate(&self, addr: BlockAddr) -> (usize, u64) {
        (addr.disk(self.disks), addr.slot(self.disks))
    }

    pub fn read_block(&mut self, addr: BlockAddr, phase: Phase) -> Result<Block> {
        let b = self.peek_block(addr)?;
        let (d, _) = self.locate(addr);
        self.counters.pe_mut(phase, addr.pe).blocks_read[d] += 1;
        Ok(b)
    }

    /// Reads without charging any counter. Used by verification only.
    pub fn peek_block(&mut self, addr: BlockAddr) -> Result<Block> {
        let (d, slot) = self.locate(addr);
        let block_bytes = (self.block * self.elem_size) as u64;
        let elem_size = self.elem_size;
        let st = &mut self.state[addr.pe][d];
        if !st.is_present(slot) {
            return Err(Error::UnallocatedSlot {
                pe: addr.pe,
                logical: addr.logical,
            });
        }
        if let Some(f) = st.file.as_mut() {
            let mut buf = vec![0u8; block_bytes as usize];
            f.seek(SeekFrom::Start(slot * block_bytes))?;
            f.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(elem_size)
                .map(Element::read_from)
                .collect())
        } else {
            Ok(st.data[slot as usize]
                .clone()
                .expect("present slot holds data"))
        }
    }

    pub fn write_block(&mut self, addr: BlockAddr, data: Block, phase: Phase) -> Result<()> {
        if data.len() != self.block {
            return Err(Error::BlockLength {
                expected: self.block,
                got: data.len(),
            });
        }
        let (d, slot) = self.locate(addr);
        let block_bytes = (self.block * self.elem_size) as u64;
        let st = &mut self.state[addr.pe][d];
        st.claim(slot);
        let fresh = !st.present[slot as usize];
        st.present[slot as usize] = true;
        if let Some(f) = st.file.as_mut() {
            let mut buf = Vec::with_capacity(block_bytes as usize);
            for e in &data {
                e.write_to(&mut buf);
            }
            f.seek(SeekFrom::Start(slot * block_bytes))?;
            f.write_all(&buf)?;
        } else {
            if st.data.len() <= slot as usize {
                st.data.resize(slot as usize + 1, None);
            }
            st.data[slot as usize] = Some(data);
        }
        if fresh {
            self.allocated[addr.pe] += 1;
            self.peak[addr.pe] = self.peak[addr.pe].max(self.allocated[addr.pe]);
        }
        self.counters.pe_mut(phase, addr.pe).blocks_written[d] += 1;
        Ok(())
    }

    pub fn deallocate_block(&mut self, addr: BlockAddr) -> Result<()> {
        let (d, slot) = self.locate(addr);
        let st = &mut self.state[addr.pe][d];
        if !st.is_present(slot) {
            return Err(Error::DoubleDeallocate {
                pe: addr.pe,
                logical: addr.logical,
            });
        }
        st.present[slot as usize] = false;
        if let Some(v) = st.data.get_mut(slot as usize) {
            *v = None;
        }
        st.free.insert(slot);
        self.allocated[addr.pe] -= 1;
        Ok(())
    }

    /// Reserves a free logical block on `pe`, cycling over its disks so that
    /// consecutive allocations are locally striped.
    pub fn alloc(&mut self, pe: usize) -> u64 {
        let d = self.cursor[pe];
        self.cursor[pe] = (d + 1) % self.disks;
        self.alloc_on_disk(pe, d)
    }

    /// Reserves a free logical block on a given disk of `pe`.
    pub fn alloc_on_disk(&mut self, pe: usize, disk: usize) -> u64 {
        let slot = self.state[pe][disk].next_free();
        slot * self.disks as u64 + disk as u64
    }

    pub fn is_allocated(&self, addr: BlockAddr) -> bool {
        let (d, slot) = self.locate(addr);
        self.state[addr.pe][d].is_present(slot)
    }

    /// Blocks currently holding data on `pe`.
    pub fn allocated_blocks(&self, pe: usize) -> u64 {
        self.allocated[pe]
    }

    /// Highest value of [`allocated_blocks`](Self::allocated_blocks) since
    /// the last [`reset_peak`](Self::reset_peak).
    pub fn peak_allocated(&self, pe: usize) -> u64 {
        self.peak[pe]
    }

    pub fn reset_peak(&mut self) {
        self.peak.clone_from(&self.allocated);
    }

    pub fn is_persistent(&self) -> bool {
        self.persistent
    }

    pub fn snapshot_counters(&self) -> PhaseCounters {
        self.counters.clone()
    }

    pub(crate) fn counters_mut(&mut self) -> &mut PhaseCounters {
        &mut self.counters
    }
}
