//! Exact splitting of all runs at ranks `i·N/P` and the external all-to-all
//! that moves every run piece to the PE owning its rank range.
//!
//! Data that already sits on its destination PE is not rewritten: the local
//! piece of each run stays where run formation put it and is recorded as an
//! [`Extent`] over those blocks. Only outbound data is read, shipped and
//! written. Blocks holding nothing but outbound data are freed once shipped.

use crate::counters::Phase;
use crate::element::{Element, Key};
use crate::error::{Error, Result};
use crate::net::XferMatrix;
use crate::runform::{RunDescriptor, RunFormation};
use crate::select::{multiway_select, sampled_init, SelectStats, SeqAccess};
use crate::vdisk::BlockAddr;
use crate::Cluster;
use std::collections::HashMap;

type CachedBlock = (u64, Vec<Key>);

/// Selection access to runs on disk, charging reads to the selection phase.
/// Blocks fetched from another PE's disk are shipped to `requester` as
/// control traffic. Each run keeps its most recently read block.
pub struct DiskRunAccess<'a> {
    cluster: &'a mut Cluster,
    runs: &'a [RunDescriptor],
    requester: usize,
    /// Per run, the last block read: its index and keys.
    cache: Option<Vec<Option<CachedBlock>>>,
    pub block_reads: u64,
}

impl<'a> DiskRunAccess<'a> {
    pub fn new(
        cluster: &'a mut Cluster,
        runs: &'a [RunDescriptor],
        requester: usize,
        caching: bool,
    ) -> Self {
        let cache = caching.then(|| vec![None; runs.len()]);
        DiskRunAccess {
            cluster,
            runs,
            requester,
            cache,
            block_reads: 0,
        }
    }
}

impl SeqAccess for DiskRunAccess<'_> {
    fn runs(&self) -> usize {
        self.runs.len()
    }

    fn len(&self, run: usize) -> u64 {
        self.runs[run].len
    }

    fn key_at(&mut self, run: usize, pos: u64) -> Result<Key> {
        let b = self.cluster.cfg.block;
        let idx = pos / b as u64;
        let off = (pos % b as u64) as usize;
        if let Some(cache) = &self.cache {
            if let Some((i, keys)) = &cache[run] {
                if *i == idx {
                    return Ok(keys[off]);
                }
            }
        }
        let (pe, logical, _) = self.runs[run].locate(pos, b);
        let blk = self
            .cluster
            .disks
            .read_block(BlockAddr::new(pe, logical), Phase::Selection)?;
        self.cluster
            .net
            .control(pe, self.requester, b as u64, Phase::Selection);
        self.block_reads += 1;
        let keys: Vec<Key> = blk.iter().map(|e| e.key).collect();
        let k = keys[off];
        if let Some(cache) = &mut self.cache {
            cache[run] = Some((idx, keys));
        }
        Ok(k)
    }
}

/// `pos[i][j]`: cut of run `j` at global rank `i·N/P`, for `i` in `0..=P`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitterMatrix {
    pub pos: Vec<Vec<u64>>,
}

impl SplitterMatrix {
    /// Boundaries strictly between PEs.
    pub fn inner(&self) -> &[Vec<u64>] {
        let p = self.pos.len() - 1;
        &self.pos[1..p]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SelectionReport {
    pub max_rounds: u32,
    pub touched: u64,
    pub block_reads: u64,
}

/// PE `i` selects boundary `i` for every run, starting from the run sample;
/// the results are then shared with every PE.
pub fn compute_splitters(
    cluster: &mut Cluster,
    rf: &RunFormation,
    caching: bool,
) -> Result<(SplitterMatrix, SelectionReport)> {
    let p = cluster.cfg.pes;
    let n: u64 = rf.runs.iter().map(|r| r.len).sum();
    let sorted = rf.sample.sorted();
    let mut report = SelectionReport::default();
    let mut local: Vec<Vec<u64>> = vec![Vec::new(); p];
    for (i, out) in local.iter_mut().enumerate().skip(1) {
        let r = i as u64 * n / p as u64;
        let init = sampled_init(&sorted, r)?;
        let mut acc = DiskRunAccess::new(cluster, &rf.runs, i, caching);
        let (s, st): (_, SelectStats) = multiway_select(&mut acc, r, Some(&init))?;
        report.max_rounds = report.max_rounds.max(st.rounds);
        report.touched += st.touched;
        report.block_reads += acc.block_reads;
        *out = s.pos;
    }
    let all = cluster
        .net
        .gather_splitters(local, Phase::Selection)?
        .swap_remove(0);
    let r = rf.runs.len();
    let mut pos = vec![vec![0u64; r]];
    if r == 0 {
        pos.resize(p, Vec::new());
    } else {
        pos.extend(all.chunks(r).map(|c| c.to_vec()));
    }
    pos.push(rf.runs.iter().map(|d| d.len).collect());
    Ok((SplitterMatrix { pos }, report))
}

/// Run positions `start..end` of run `run` travelling from `src` to `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Piece {
    pub src: usize,
    pub run: usize,
    pub dst: usize,
    pub start: u64,
    pub end: u64,
}

impl Piece {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RedistributionPlan {
    /// Non-empty pieces ordered by `(run, start)`, local ones included.
    pub pieces: Vec<Piece>,
    pub xfer: XferMatrix,
    /// Distinct communication partners of each PE, senders and receivers.
    pub partners: Vec<usize>,
    pub v_moved: u64,
}

pub fn build_plan(runs: &[RunDescriptor], sp: &SplitterMatrix) -> RedistributionPlan {
    let p = sp.pos.len() - 1;
    let mut pieces = Vec::new();
    let mut xfer = vec![vec![0u64; p]; p];
    for (j, run) in runs.iter().enumerate() {
        for src in 0..p {
            let (lo, hi) = (src as u64 * run.slice_len, (src as u64 + 1) * run.slice_len);
            for dst in 0..p {
                let start = sp.pos[dst][j].max(lo);
                let end = sp.pos[dst + 1][j].min(hi);
                if start < end {
                    pieces.push(Piece {
                        src,
                        run: j,
                        dst,
                        start,
                        end,
                    });
                    xfer[src][dst] += end - start;
                }
            }
        }
    }
    let partners = (0..p)
        .map(|i| {
            (0..p)
                .filter(|&o| o != i && (xfer[i][o] > 0 || xfer[o][i] > 0))
                .count()
        })
        .collect();
    let v_moved = (0..p)
        .flat_map(|i| (0..p).map(move |o| (i, o)))
        .filter(|(i, o)| i != o)
        .map(|(i, o)| xfer[i][o])
        .sum();
    RedistributionPlan {
        pieces,
        xfer,
        partners,
        v_moved,
    }
}

/// Number of sub-rounds: the largest `ceil(S_i / (budget − P'_i·B))` over
/// PEs, where `S_i` is PE `i`'s larger of outbound and inbound volume.
pub fn plan_rounds(xfer: &XferMatrix, partners: &[usize], budget: u64, block: u64) -> Result<u64> {
    let p = xfer.len();
    let mut k = 1;
    for i in 0..p {
        let out: u64 = (0..p).filter(|&o| o != i).map(|o| xfer[i][o]).sum();
        let inb: u64 = (0..p).filter(|&o| o != i).map(|o| xfer[o][i]).sum();
        let needed = (partners[i] as u64 + 1) * block;
        if budget < needed {
            return Err(Error::InfeasibleBudget { budget, needed });
        }
        k = k.max(out.max(inb).div_ceil(budget - partners[i] as u64 * block));
    }
    Ok(k)
}

/// Consecutive run positions on one PE: `len` elements starting at run
/// position `start`, stored from offset `skip` of the first of `blocks`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extent {
    pub start: u64,
    pub len: u64,
    pub skip: usize,
    pub blocks: Vec<u64>,
}

/// `staged[pe][run]`: extents of that run's piece for `pe`, in run order.
pub type Staged = Vec<Vec<Vec<Extent>>>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AllToAllReport {
    pub k: u64,
    pub v_moved: u64,
    pub max_partners: usize,
    /// Elements read but not shipped (local neighbours in boundary blocks,
    /// re-reads across rounds).
    pub read_waste: u64,
    /// Sentinels written to fill partial blocks.
    pub write_padding: u64,
    /// Largest per-round send or receive volume of any PE.
    pub max_footprint: u64,
    /// Per PE, peak allocated blocks during the phase minus blocks held at
    /// its start.
    pub peak_extra_blocks: Vec<i64>,
    /// Per PE, blocks read plus written in the phase.
    pub io_blocks: Vec<u64>,
    pub partners: Vec<usize>,
    pub runs: usize,
    pub block: usize,
}

impl AllToAllReport {
    /// Smallest `c` with `reads + writes ≤ 2V/(P·B) + c·R·P'` blocks on
    /// every PE.
    pub fn overhead_constant(&self) -> f64 {
        let p = self.io_blocks.len().max(1) as f64;
        let even = 2.0 * self.v_moved as f64 / (p * self.block.max(1) as f64);
        self.io_blocks
            .iter()
            .zip(&self.partners)
            .map(|(&io, &pp)| (io as f64 - even) / (self.runs.max(1) * pp.max(1)) as f64)
            .fold(0.0, f64::max)
    }
}

/// Moves stream offset `c` down to the nearest source block boundary inside
/// the piece containing it, so rounds never split a block.
fn align_cut(stream: &[&Piece], c: u64, block: u64) -> u64 {
    let mut off = 0;
    for piece in stream {
        if c < off + piece.len() {
            let x = piece.start + c - off;
            return off + (x - x % block).max(piece.start) - piece.start;
        }
        off += piece.len();
    }
    c
}

/// `(run, start, end)` sub-ranges of the stream `src → dst` shipped in
/// round `t` of `k`. Cuts fall on source block boundaries; each moves by
/// less than a block, which the `P'·B` reserve of [`plan_rounds`] absorbs.
/// `parts[t][src][dst]`: `(run, start, end)` ranges.
type RoundParts = Vec<Vec<Vec<Vec<(usize, u64, u64)>>>>;

fn round_parts(plan: &RedistributionPlan, p: usize, k: u64, block: u64) -> RoundParts {
    let mut parts = vec![vec![vec![Vec::new(); p]; p]; k as usize];
    for src in 0..p {
        for dst in 0..p {
            if src == dst {
                continue;
            }
            let stream: Vec<&Piece> = plan
                .pieces
                .iter()
                .filter(|x| x.src == src && x.dst == dst)
                .collect();
            let total: u64 = stream.iter().map(|x| x.len()).sum();
            let cuts: Vec<u64> = (0..=k)
                .map(|t| align_cut(&stream, t * total / k, block))
                .collect();
            for t in 0..k {
                let (c0, c1) = (cuts[t as usize], cuts[t as usize + 1]);
                let mut off = 0;
                for piece in &stream {
                    let (a, b) = (off.max(c0), (off + piece.len()).min(c1));
                    if a < b {
                        parts[t as usize][src][dst].push((
                            piece.run,
                            piece.start + a - off,
                            piece.start + b - off,
                        ));
                    }
                    off += piece.len();
                }
            }
        }
    }
    parts
}

/// Ships every non-local piece to its destination in `k` rounds and returns
/// the staged extents of every PE.
pub fn external_all_to_all(
    cluster: &mut Cluster,
    runs: &[RunDescriptor],
    sp: &SplitterMatrix,
    plan: &RedistributionPlan,
) -> Result<(Staged, AllToAllReport)> {
    let cfg = cluster.cfg.clone();
    let p = cfg.pes;
    let b = cfg.block;
    let bu = b as u64;
    let budget = cfg.mem as u64;
    let k = plan_rounds(&plan.xfer, &plan.partners, budget, bu)?;
    let start_blocks: Vec<u64> = (0..p).map(|i| cluster.disks.allocated_blocks(i)).collect();
    cluster.disks.reset_peak();

    let mut staged: Staged = vec![vec![Vec::new(); runs.len()]; p];
    for piece in plan.pieces.iter().filter(|x| x.src == x.dst) {
        let run = &runs[piece.run];
        let base = piece.src as u64 * run.slice_len;
        let (first, last) = ((piece.start - base) / bu, (piece.end - 1 - base) / bu);
        staged[piece.src][piece.run].push(Extent {
            start: piece.start,
            len: piece.len(),
            skip: ((piece.start - base) % bu) as usize,
            blocks: run.segments[piece.src][first as usize..=last as usize].to_vec(),
        });
    }
    let local_in = |src: usize, j: usize, idx: u64| -> u64 {
        let lo = src as u64 * runs[j].slice_len + idx * bu;
        let a = sp.pos[src][j].max(lo);
        let e = sp.pos[src + 1][j].min(lo + bu);
        e.saturating_sub(a)
    };
    // outbound elements not yet shipped, per (src, run, block index)
    let mut pending: HashMap<(usize, usize, u64), u64> = HashMap::new();

    let parts = round_parts(plan, p, k, bu);
    let mut report = AllToAllReport {
        k,
        v_moved: plan.v_moved,
        max_partners: plan.partners.iter().copied().max().unwrap_or(0),
        ..Default::default()
    };
    for round in &parts {
        let mut payloads: Vec<Vec<Vec<Element>>> = vec![vec![Vec::new(); p]; p];
        for src in 0..p {
            let mut todo: Vec<(usize, u64, u64, usize)> = Vec::new();
            for (dst, list) in round[src].iter().enumerate() {
                todo.extend(list.iter().map(|&(j, a, e)| (j, a, e, dst)));
            }
            todo.sort_unstable();
            let mut cached: Option<((usize, u64), Vec<Element>)> = None;
            for (j, a, e, dst) in todo {
                let base = src as u64 * runs[j].slice_len;
                let mut pos = a;
                while pos < e {
                    let idx = (pos - base) / bu;
                    let off = ((pos - base) % bu) as usize;
                    let take = (bu - off as u64).min(e - pos);
                    if cached.as_ref().map(|c| c.0) != Some((j, idx)) {
                        let addr = BlockAddr::new(src, runs[j].segments[src][idx as usize]);
                        let blk = cluster.disks.read_block(addr, Phase::AllToAll)?;
                        report.read_waste += bu;
                        cached = Some(((j, idx), blk));
                    }
                    let blk = &cached.as_ref().expect("block cached").1;
                    payloads[src][dst].extend_from_slice(&blk[off..off + take as usize]);
                    report.read_waste -= take;
                    let local = local_in(src, j, idx);
                    let left = pending.entry((src, j, idx)).or_insert(bu - local);
                    *left -= take;
                    if *left == 0 && local == 0 {
                        let addr = BlockAddr::new(src, runs[j].segments[src][idx as usize]);
                        cluster.disks.deallocate_block(addr)?;
                    }
                    pos += take;
                }
            }
        }
        for i in 0..p {
            let sent: u64 = payloads[i].iter().map(|m| m.len() as u64).sum::<u64>()
                - payloads[i][i].len() as u64;
            let recv: u64 = (0..p)
                .filter(|&s| s != i)
                .map(|s| payloads[s][i].len() as u64)
                .sum();
            let fp = sent.max(recv);
            report.max_footprint = report.max_footprint.max(fp);
            if fp > budget {
                return Err(Error::MemoryBudget {
                    pe: i,
                    held: fp,
                    budget,
                });
            }
        }
        let recv = cluster.net.all_to_all_v(payloads, Phase::AllToAll)?;
        for (dst, from) in recv.into_iter().enumerate() {
            let mut pieces: Vec<(usize, u64, u64, Vec<Element>)> = Vec::new();
            for (src, msg) in from.into_iter().enumerate() {
                let mut it = msg.into_iter();
                for &(j, a, e) in &round[src][dst] {
                    pieces.push((j, a, e, it.by_ref().take((e - a) as usize).collect()));
                }
            }
            pieces.sort_by_key(|x| (x.0, x.1));
            let mut i = 0;
            while i < pieces.len() {
                let (j, a, mut e) = (pieces[i].0, pieces[i].1, pieces[i].2);
                let mut data = std::mem::take(&mut pieces[i].3);
                i += 1;
                while i < pieces.len() && pieces[i].0 == j && pieces[i].1 == e {
                    e = pieces[i].2;
                    data.append(&mut pieces[i].3);
                    i += 1;
                }
                let mut blocks = Vec::with_capacity(data.len().div_ceil(b));
                for chunk in data.chunks(b) {
                    let mut blk = chunk.to_vec();
                    report.write_padding += (b - blk.len()) as u64;
                    blk.resize(b, Element::sentinel(cfg.payload_len()));
                    let l = cluster.disks.alloc(dst);
                    cluster
                        .disks
                        .write_block(BlockAddr::new(dst, l), blk, Phase::AllToAll)?;
                    blocks.push(l);
                }
                staged[dst][j].push(Extent {
                    start: a,
                    len: e - a,
                    skip: 0,
                    blocks,
                });
            }
        }
    }
    for (d, per_run) in staged.iter_mut().enumerate() {
        for (j, ext) in per_run.iter_mut().enumerate() {
            ext.sort_by_key(|x| x.start);
            let mut at = sp.pos[d][j];
            for x in ext.iter() {
                assert_eq!(
                    x.start, at,
                    "staged extents of pe {d} run {j} are not contiguous"
                );
                at += x.len;
            }
            assert_eq!(
                at,
                sp.pos[d + 1][j],
                "staged extents of pe {d} run {j} are incomplete"
            );
        }
    }
    report.peak_extra_blocks = (0..p)
        .map(|i| cluster.disks.peak_allocated(i) as i64 - start_blocks[i] as i64)
        .collect();
    let counters = cluster.disks.snapshot_counters();
    report.io_blocks = counters
        .phase(Phase::AllToAll)
        .pes
        .iter()
        .map(|t| t.io_blocks())
        .collect();
    report.partners = plan.partners.clone();
    report.runs = runs.len();
    report.block = b;
    Ok((staged, report))
}
