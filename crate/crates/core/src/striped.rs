//! The striped engine: runs are striped over all `P·D` disks of the cluster
//! and merged in passes of up to `floor(M/(2B))` runs. Each pass fetches
//! blocks along the prediction sequence following a prefetch schedule and
//! merges them batch by batch.

use crate::counters::Phase;
use crate::element::{Element, ElementRef, Key};
use crate::error::{Error, Result};
use crate::merge::{BatchMerger, BlockMeta};
use crate::runform::{internal_parallel_sort, pe_rng, shuffle_block_ids, stream};
use crate::vdisk::BlockAddr;
use crate::Cluster;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};

/// Global disk `g` belongs to PE `g mod P`, local disk `g div P`.
pub fn global_disk_owner(g: usize, pes: usize) -> (usize, usize) {
    (g % pes, g / pes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StripedBlock {
    pub pe: usize,
    pub logical: u64,
    pub gdisk: usize,
    pub first: Key,
}

/// A sorted run whose block `b` sits on global disk `(offset + b) mod P·D`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StripedRun {
    pub blocks: Vec<StripedBlock>,
    pub len: u64,
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredEntry {
    pub meta: BlockMeta,
    pub gdisk: usize,
}

/// All blocks of `runs` ordered by smallest element, ties by run and
/// position.
pub fn build_prediction_sequence(runs: &[StripedRun], block: usize) -> Vec<PredEntry> {
    let mut seq: Vec<PredEntry> = runs
        .iter()
        .enumerate()
        .flat_map(|(j, r)| {
            r.blocks.iter().enumerate().map(move |(i, b)| PredEntry {
                meta: BlockMeta {
                    run: j,
                    idx: i as u64,
                    first: ElementRef::new(b.first, j, (i * block) as u64),
                },
                gdisk: b.gdisk,
            })
        })
        .collect();
    seq.sort_by_key(|e| e.meta.first);
    seq
}

/// Fetch steps over a sequence of blocks (indices into it). `occupancy[t]`
/// is the number of fetched but unconsumed blocks right after step `t`'s
/// fetches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefetchSchedule {
    pub steps: Vec<Vec<usize>>,
    pub occupancy: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleViolation {
    DiskConflict { step: usize },
    BufferOverflow { step: usize, occupancy: usize },
    Starved { consumed: usize },
}

/// Prefetch schedule for blocks on `disks[i]`, consumed in index order, with
/// a shared buffer of `w` blocks. Built as the time reversal of buffered
/// writing of the reversed sequence: blocks enter per-disk queues while the
/// buffer has room, and every step each non-empty queue writes one block.
pub fn prefetch_schedule(disks: &[usize], w: usize, d_total: usize) -> Result<PrefetchSchedule> {
    if w < d_total {
        return Err(Error::BufferTooSmall { w, disks: d_total });
    }
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); d_total];
    let mut buffered = 0;
    let mut pending = (0..disks.len()).rev().peekable();
    let mut steps = Vec::new();
    while pending.peek().is_some() || buffered > 0 {
        while buffered < w {
            match pending.next() {
                Some(b) => {
                    queues[disks[b]].push_back(b);
                    buffered += 1;
                }
                None => break,
            }
        }
        let out: Vec<usize> = queues.iter_mut().filter_map(VecDeque::pop_front).collect();
        buffered -= out.len();
        steps.push(out);
    }
    steps.reverse();
    let occupancy = replay(&steps, disks.len());
    Ok(PrefetchSchedule { steps, occupancy })
}

fn replay(steps: &[Vec<usize>], len: usize) -> Vec<usize> {
    let mut fetched = vec![false; len];
    let (mut consumed, mut held) = (0, 0);
    let mut occ = Vec::with_capacity(steps.len());
    for st in steps {
        for &b in st {
            fetched[b] = true;
        }
        held += st.len();
        occ.push(held);
        while consumed < len && fetched[consumed] {
            consumed += 1;
            held -= 1;
        }
    }
    occ
}

/// Replays `steps`: each step fetches at most one block per disk, then the
/// longest resident prefix of the sequence is consumed. The buffer may never
/// hold more than `w` blocks and every block must be consumed in the end.
pub fn check_schedule(
    steps: &[Vec<usize>],
    disks: &[usize],
    w: usize,
) -> std::result::Result<(), ScheduleViolation> {
    let len = disks.len();
    let mut fetched = vec![false; len];
    let (mut consumed, mut held) = (0, 0);
    for (t, st) in steps.iter().enumerate() {
        let mut used = std::collections::HashSet::new();
        for &b in st {
            if !used.insert(disks[b]) || fetched[b] {
                return Err(ScheduleViolation::DiskConflict { step: t });
            }
            fetched[b] = true;
        }
        held += st.len();
        if held > w {
            return Err(ScheduleViolation::BufferOverflow {
                step: t,
                occupancy: held,
            });
        }
        while consumed < len && fetched[consumed] {
            consumed += 1;
            held -= 1;
        }
    }
    if consumed == len {
        Ok(())
    } else {
        Err(ScheduleViolation::Starved { consumed })
    }
}

/// Prefetch buffer of a merge pass: `max(P·D, M/(4B))` blocks.
pub fn prefetch_buffer(cluster: &Cluster) -> usize {
    let cfg = &cluster.cfg;
    (cfg.pes * cfg.disks).max(cfg.pes * cfg.mem / (4 * cfg.block))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassReport {
    pub runs: usize,
    pub fetch_steps: u64,
    pub write_steps: u64,
    pub max_occupancy: usize,
    pub max_retained: usize,
}

/// Writes `blocks` of sorted data as a striped run starting at a random
/// global disk, shipping each block from its holder to the disk's PE.
struct StripeWriter {
    pes: usize,
    d_total: usize,
    block: usize,
    offset: usize,
    blocks: Vec<StripedBlock>,
    buf: Vec<(Element, u32)>,
    len: u64,
}

impl StripeWriter {
    fn new(cluster: &Cluster, rng: &mut ChaCha8Rng) -> Self {
        let d_total = cluster.cfg.pes * cluster.cfg.disks;
        StripeWriter {
            pes: cluster.cfg.pes,
            d_total,
            block: cluster.cfg.block,
            offset: rng.gen_range(0..d_total),
            blocks: Vec::new(),
            buf: Vec::new(),
            len: 0,
        }
    }

    fn push(&mut self, items: impl IntoIterator<Item = (Element, u32)>) {
        for it in items {
            self.buf.push(it);
            self.len += 1;
        }
    }

    /// Writes all complete blocks (and the tail when `last`).
    fn flush(&mut self, cluster: &mut Cluster, phase: Phase, last: bool) -> Result<()> {
        let full = if last {
            self.buf.len().div_ceil(self.block)
        } else {
            self.buf.len() / self.block
        };
        if full == 0 {
            return Ok(());
        }
        let take = (full * self.block).min(self.buf.len());
        let data: Vec<(Element, u32)> = self.buf.drain(..take).collect();
        let mut payloads: Vec<Vec<Vec<Element>>> = vec![vec![Vec::new(); self.pes]; self.pes];
        let mut out = Vec::with_capacity(full);
        for chunk in data.chunks(self.block) {
            let g = (self.offset + self.blocks.len() + out.len()) % self.d_total;
            let (pe, disk) = global_disk_owner(g, self.pes);
            let mut blk = Vec::with_capacity(self.block);
            for (e, src) in chunk {
                payloads[*src as usize][pe].push(e.clone());
                blk.push(e.clone());
            }
            blk.resize(self.block, Element::sentinel(cluster.cfg.payload_len()));
            out.push((g, pe, disk, blk));
        }
        cluster.net.all_to_all_v(payloads, phase)?;
        for (g, pe, disk, blk) in out {
            let first = blk[0].key;
            let logical = cluster.disks.alloc_on_disk(pe, disk);
            cluster
                .disks
                .write_block(BlockAddr::new(pe, logical), blk, phase)?;
            self.blocks.push(StripedBlock {
                pe,
                logical,
                gdisk: g,
                first,
            });
        }
        Ok(())
    }

    fn finish(self) -> StripedRun {
        StripedRun {
            blocks: self.blocks,
            len: self.len,
            offset: self.offset,
        }
    }
}

/// Run formation for the striped engine: as in the canonical engine, but
/// each sorted run is striped over all disks instead of written back.
pub fn striped_form_runs(cluster: &mut Cluster, rng: &mut ChaCha8Rng) -> Result<Vec<StripedRun>> {
    let cfg = cluster.cfg.clone();
    let p = cfg.pes;
    let per_run = cfg.mem / cfg.block;
    let blocks = cfg.blocks_per_pe() as usize;
    let ids: Vec<Vec<u64>> = (0..p)
        .map(|pe| shuffle_block_ids(pe, blocks as u64, cfg.seed, cfg.randomize))
        .collect();
    let mut runs = Vec::new();
    for lo in (0..blocks).step_by(per_run.max(1)) {
        let hi = (lo + per_run).min(blocks);
        let mut data = Vec::with_capacity(p);
        for (pe, pe_ids) in ids.iter().enumerate() {
            let mut d = Vec::with_capacity((hi - lo) * cfg.block);
            for &l in &pe_ids[lo..hi] {
                let addr = BlockAddr::new(pe, l);
                d.extend(cluster.disks.read_block(addr, Phase::RunFormation)?);
                cluster.disks.deallocate_block(addr)?;
            }
            data.push(d);
        }
        let sorted = internal_parallel_sort(&mut cluster.net, data, cfg.mem, Phase::RunFormation)?;
        let mut w = StripeWriter::new(cluster, rng);
        for (pe, slice) in sorted.into_iter().enumerate() {
            w.push(slice.into_iter().map(|e| (e, pe as u32)));
        }
        w.flush(cluster, Phase::RunFormation, true)?;
        runs.push(w.finish());
    }
    Ok(runs)
}

/// Merges up to `floor(M/(2B))` striped runs into one striped run.
pub fn striped_merge_pass(
    cluster: &mut Cluster,
    runs: Vec<StripedRun>,
    rng: &mut ChaCha8Rng,
) -> Result<(StripedRun, PassReport)> {
    let arity = cluster.cfg.arity();
    if runs.len() > arity {
        return Err(Error::ArityExceeded {
            runs: runs.len(),
            arity,
        });
    }
    let mut report = PassReport {
        runs: runs.len(),
        ..Default::default()
    };
    if runs.len() == 1 {
        return Ok((runs.into_iter().next().expect("one run"), report));
    }
    let b = cluster.cfg.block;
    let d_total = cluster.cfg.pes * cluster.cfg.disks;
    let seq = build_prediction_sequence(&runs, b);
    let disks: Vec<usize> = seq.iter().map(|e| e.gdisk).collect();
    let w = prefetch_buffer(cluster);
    let sched = prefetch_schedule(&disks, w, d_total)?;
    report.fetch_steps = sched.steps.len() as u64;
    report.max_occupancy = sched.occupancy.iter().copied().max().unwrap_or(0);

    let mut merger = BatchMerger::new(seq.iter().map(|e| e.meta).collect(), runs.len(), b, arity);
    let mut writer = StripeWriter::new(cluster, rng);
    let mut resident: HashMap<usize, (Vec<Element>, u32)> = HashMap::new();
    let mut batch: Vec<(Vec<Element>, u32)> = Vec::new();
    let mut consumed = 0;
    for step in &sched.steps {
        for &i in step {
            let m = seq[i].meta;
            let sb = runs[m.run].blocks[m.idx as usize];
            let addr = BlockAddr::new(sb.pe, sb.logical);
            let data = cluster.disks.read_block(addr, Phase::StripedMerge)?;
            cluster.disks.deallocate_block(addr)?;
            resident.insert(i, (data, sb.pe as u32));
        }
        while let Some(x) = resident.remove(&consumed) {
            batch.push(x);
            consumed += 1;
            if batch.len() == merger.upcoming().len() {
                writer.push(merger.merge_batch(std::mem::take(&mut batch)));
                report.max_retained = report.max_retained.max(
                    (0..runs.len())
                        .map(|j| merger.retained(j))
                        .max()
                        .unwrap_or(0),
                );
                writer.flush(cluster, Phase::StripedMerge, false)?;
            }
        }
    }
    assert!(
        batch.is_empty() && merger.is_done(),
        "prefetch schedule left blocks unconsumed"
    );
    writer.flush(cluster, Phase::StripedMerge, true)?;
    // round-robin placement fills all disks before reusing one
    report.write_steps = writer.blocks.len().div_ceil(d_total) as u64;
    cluster
        .disks
        .counters_mut()
        .add_io_steps(Phase::StripedMerge, report.fetch_steps + report.write_steps);
    Ok((writer.finish(), report))
}

#[derive(Clone, Debug)]
pub struct StripedOutput {
    pub run: StripedRun,
    pub phases: usize,
    pub passes: Vec<PassReport>,
}

/// Run formation followed by merge phases until one run is left.
pub fn striped_sort(cluster: &mut Cluster) -> Result<StripedOutput> {
    cluster.cfg.validate_striped()?;
    let mut rng = pe_rng(cluster.cfg.seed, 0, stream::STRIPE);
    let mut runs = striped_form_runs(cluster, &mut rng)?;
    let arity = cluster.cfg.arity();
    let mut phases = 0;
    let mut passes = Vec::new();
    while runs.len() > 1 {
        let mut next = Vec::with_capacity(runs.len().div_ceil(arity));
        let mut it = runs.into_iter().peekable();
        while it.peek().is_some() {
            let group: Vec<StripedRun> = it.by_ref().take(arity).collect();
            let (run, rep) = striped_merge_pass(cluster, group, &mut rng)?;
            next.push(run);
            passes.push(rep);
        }
        runs = next;
        phases += 1;
    }
    let run = runs.pop().unwrap_or(StripedRun {
        blocks: Vec::new(),
        len: 0,
        offset: 0,
    });
    Ok(StripedOutput {
        run,
        phases,
        passes,
    })
}
