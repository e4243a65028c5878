//! Merging kernels: a loser tree, the local multiway merge that finishes the
//! canonical engine, and batch merging for the striped engine.

use crate::counters::Phase;
use crate::element::{Element, ElementRef};
use crate::error::{Error, Result};
use crate::vdisk::{BlockAddr, VDisk};
use crate::xall::{Extent, Staged};
use crate::Cluster;
use std::cmp::Ordering;

/// Element together with its position in the merge instance and a caller
/// tag. Ordered by position only.
#[derive(Clone, Debug)]
pub struct Item {
    pub at: ElementRef,
    pub elem: Element,
    pub tag: u32,
}

impl PartialEq for Item {
    fn eq(&self, o: &Self) -> bool {
        self.at == o.at
    }
}

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        self.at.cmp(&o.at)
    }
}

/// Tournament tree of losers over `k` sources. The caller owns the sources
/// and feeds the winner's successor back with [`LoserTree::replace`];
/// `None` marks an exhausted source.
#[derive(Debug)]
pub struct LoserTree<T> {
    heads: Vec<Option<T>>,
    tree: Vec<usize>,
}

impl<T: Ord> LoserTree<T> {
    pub fn new(heads: Vec<Option<T>>) -> Self {
        let k = heads.len();
        let mut lt = LoserTree {
            heads,
            tree: vec![k; k.max(1)],
        };
        for i in (0..k).rev() {
            lt.adjust(i);
        }
        lt
    }

    /// Does source `a` win against source `b`? Index `k` is a virtual
    /// source that beats everything; exhausted sources lose.
    fn beats(&self, a: usize, b: usize) -> bool {
        let k = self.heads.len();
        if a == k || b == k {
            return a == k && b != k;
        }
        match (&self.heads[a], &self.heads[b]) {
            (Some(x), Some(y)) => (x, a) < (y, b),
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => a < b,
        }
    }

    fn adjust(&mut self, leaf: usize) {
        let k = self.heads.len();
        let mut w = leaf;
        let mut t = (leaf + k) / 2;
        while t > 0 {
            if self.beats(self.tree[t], w) {
                std::mem::swap(&mut self.tree[t], &mut w);
            }
            t /= 2;
        }
        self.tree[0] = w;
    }

    /// Index of the source holding the smallest head, if any is left.
    pub fn winner(&self) -> Option<usize> {
        let w = *self.tree.first()?;
        self.heads.get(w)?.as_ref().map(|_| w)
    }

    pub fn peek(&self) -> Option<&T> {
        self.heads.get(self.winner()?)?.as_ref()
    }

    /// Replaces the winner's head with `next` and returns the old head.
    pub fn replace(&mut self, next: Option<T>) -> Option<T> {
        let w = self.winner()?;
        let old = std::mem::replace(&mut self.heads[w], next);
        self.adjust(w);
        old
    }
}

/// Merges sorted vectors into one.
pub fn merge_sorted<T: Ord>(seqs: Vec<Vec<T>>) -> Vec<T> {
    let total = seqs.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = seqs.into_iter().map(Vec::into_iter).collect();
    let heads = iters.iter_mut().map(|it| it.next()).collect();
    let mut lt = LoserTree::new(heads);
    let mut out = Vec::with_capacity(total);
    while let Some(w) = lt.winner() {
        let next = iters[w].next();
        out.push(lt.replace(next).expect("winner has a head"));
    }
    out
}

/// Sequential reader over one run's staged extents. Every block is freed
/// as soon as it is read.
struct ExtentCursor {
    pe: usize,
    run: usize,
    extents: std::vec::IntoIter<Extent>,
    cur: Option<(Extent, usize)>,
    buf: Vec<Element>,
    buf_at: usize,
    buf_end: usize,
    pos: u64,
}

impl ExtentCursor {
    fn new(pe: usize, run: usize, extents: Vec<Extent>) -> Self {
        ExtentCursor {
            pe,
            run,
            extents: extents.into_iter(),
            cur: None,
            buf: Vec::new(),
            buf_at: 0,
            buf_end: 0,
            pos: 0,
        }
    }

    fn next(&mut self, disks: &mut VDisk, waste: &mut u64) -> Result<Option<Item>> {
        while self.buf_at == self.buf_end {
            let done = match &self.cur {
                None => true,
                Some((x, i)) => *i == x.blocks.len(),
            };
            if done {
                match self.extents.next() {
                    None => return Ok(None),
                    Some(x) => {
                        self.pos = x.start;
                        self.cur = Some((x, 0));
                        continue;
                    }
                }
            }
            let (x, i) = self.cur.as_mut().expect("current extent");
            let b = disks.block_size();
            let addr = BlockAddr::new(self.pe, x.blocks[*i]);
            self.buf = disks.read_block(addr, Phase::LocalMerge)?;
            disks.deallocate_block(addr)?;
            let from = if *i == 0 { x.skip } else { 0 };
            let consumed = self.pos - x.start;
            let usable = ((b - from) as u64).min(x.len - consumed) as usize;
            *waste += (b - usable) as u64;
            self.buf_at = from;
            self.buf_end = from + usable;
            *i += 1;
        }
        let elem = self.buf[self.buf_at].clone();
        self.buf_at += 1;
        let at = ElementRef::new(elem.key, self.run, self.pos);
        self.pos += 1;
        Ok(Some(Item { at, elem, tag: 0 }))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LocalMergeReport {
    /// Elements read but not part of any run piece.
    pub read_waste: u64,
    pub write_padding: u64,
}

/// Merges each PE's staged run pieces into its final slice, written to fresh
/// locally striped blocks. Returns the output blocks per PE in order.
pub fn local_multiway_merge(
    cluster: &mut Cluster,
    staged: Staged,
) -> Result<(Vec<Vec<u64>>, LocalMergeReport)> {
    let cfg = cluster.cfg.clone();
    let b = cfg.block;
    let runs = staged.first().map_or(0, Vec::len);
    if runs * b > cfg.mem {
        return Err(Error::MemoryBudget {
            pe: 0,
            held: (runs * b) as u64,
            budget: cfg.mem as u64,
        });
    }
    let mut report = LocalMergeReport::default();
    let mut out = Vec::with_capacity(cfg.pes);
    for (pe, per_run) in staged.into_iter().enumerate() {
        let mut cursors: Vec<ExtentCursor> = per_run
            .into_iter()
            .enumerate()
            .map(|(j, x)| ExtentCursor::new(pe, j, x))
            .collect();
        let mut heads = Vec::with_capacity(cursors.len());
        for c in cursors.iter_mut() {
            heads.push(c.next(&mut cluster.disks, &mut report.read_waste)?);
        }
        let mut lt = LoserTree::new(heads);
        let mut blocks = Vec::new();
        let mut buf: Vec<Element> = Vec::with_capacity(b);
        while let Some(w) = lt.winner() {
            let next = cursors[w].next(&mut cluster.disks, &mut report.read_waste)?;
            buf.push(lt.replace(next).expect("winner has a head").elem);
            if buf.len() == b {
                let l = cluster.disks.alloc(pe);
                cluster.disks.write_block(
                    BlockAddr::new(pe, l),
                    std::mem::take(&mut buf),
                    Phase::LocalMerge,
                )?;
                blocks.push(l);
            }
        }
        if !buf.is_empty() {
            report.write_padding += (b - buf.len()) as u64;
            buf.resize(b, Element::sentinel(cfg.payload_len()));
            let l = cluster.disks.alloc(pe);
            cluster
                .disks
                .write_block(BlockAddr::new(pe, l), buf, Phase::LocalMerge)?;
            blocks.push(l);
        }
        out.push(blocks);
    }
    Ok((out, report))
}

/// One block of a merge input, as listed in a prediction sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMeta {
    pub run: usize,
    pub idx: u64,
    /// Smallest element of the block.
    pub first: ElementRef,
}

/// Merges runs batch by batch. Each batch takes the next `batch_blocks`
/// blocks of the prediction sequence and emits every element smaller than
/// the first element of the next block not yet fetched. At most one
/// block's worth of elements per run is carried over.
#[derive(Debug)]
pub struct BatchMerger {
    seq: Vec<BlockMeta>,
    next: usize,
    block: usize,
    batch_blocks: usize,
    retained: Vec<Vec<Item>>,
}

impl BatchMerger {
    pub fn new(seq: Vec<BlockMeta>, runs: usize, block: usize, batch_blocks: usize) -> Self {
        assert!(batch_blocks > 0);
        BatchMerger {
            seq,
            next: 0,
            block,
            batch_blocks,
            retained: vec![Vec::new(); runs],
        }
    }

    pub fn is_done(&self) -> bool {
        self.next == self.seq.len() && self.retained.iter().all(Vec::is_empty)
    }

    /// Blocks the next batch consumes, in prediction order.
    pub fn upcoming(&self) -> &[BlockMeta] {
        let end = (self.next + self.batch_blocks).min(self.seq.len());
        &self.seq[self.next..end]
    }

    pub fn retained(&self, run: usize) -> usize {
        self.retained[run].len()
    }

    /// Consumes `fetched`, the data of [`upcoming`](Self::upcoming) with a
    /// tag per block, and returns the emitted elements in order.
    pub fn merge_batch(&mut self, fetched: Vec<(Vec<Element>, u32)>) -> Vec<(Element, u32)> {
        let metas = self.upcoming().to_vec();
        assert_eq!(
            metas.len(),
            fetched.len(),
            "batch must deliver every upcoming block"
        );
        let before: usize = self.retained.iter().map(Vec::len).sum();
        let n_fetched: usize = fetched.iter().map(|f| f.0.len()).sum();
        for (meta, (data, tag)) in metas.iter().zip(fetched) {
            let base = meta.idx * self.block as u64;
            let pool = &mut self.retained[meta.run];
            for (i, elem) in data.into_iter().enumerate() {
                let at = ElementRef::new(elem.key, meta.run, base + i as u64);
                pool.push(Item { at, elem, tag });
            }
        }
        self.next += metas.len();
        let threshold = self.seq.get(self.next).map(|m| m.first);
        let mut parts = Vec::with_capacity(self.retained.len());
        for pool in self.retained.iter_mut() {
            let cut = match threshold {
                Some(t) => pool.partition_point(|x| x.at < t),
                None => pool.len(),
            };
            let rest = pool.split_off(cut);
            parts.push(std::mem::replace(pool, rest));
        }
        let out: Vec<(Element, u32)> = merge_sorted(parts)
            .into_iter()
            .map(|x| (x.elem, x.tag))
            .collect();
        let after: usize = self.retained.iter().map(Vec::len).sum();
        assert_eq!(out.len() + after, before + n_fetched, "batch lost elements");
        assert!(
            self.retained.iter().all(|p| p.len() <= self.block),
            "more than a block carried over"
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loser_tree_merges() {
        let out = merge_sorted(vec![vec![1, 4, 7], vec![], vec![2, 3, 9], vec![0]]);
        assert_eq!(out, vec![0, 1, 2, 3, 4, 7, 9]);
        assert_eq!(merge_sorted::<u8>(vec![]), Vec::<u8>::new());
        assert_eq!(merge_sorted(vec![vec![5, 6]]), vec![5, 6]);
    }

    #[test]
    fn loser_tree_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.gen_range(1..12);
            let seqs: Vec<Vec<u32>> = (0..k)
                .map(|_| {
                    let mut v: Vec<u32> = (0..rng.gen_range(0..20))
                        .map(|_| rng.gen_range(0..50))
                        .collect();
                    v.sort();
                    v
                })
                .collect();
            let mut want: Vec<u32> = seqs.iter().flatten().copied().collect();
            want.sort();
            assert_eq!(merge_sorted(seqs), want);
        }
    }

    fn run_blocks(keys: &[u64], run: usize, b: usize) -> (Vec<BlockMeta>, Vec<Vec<Element>>) {
        let mut metas = Vec::new();
        let mut data = Vec::new();
        for (i, c) in keys.chunks(b).enumerate() {
            metas.push(BlockMeta {
                run,
                idx: i as u64,
                first: ElementRef::new(c[0], run, (i * b) as u64),
            });
            data.push(c.iter().map(|&k| Element::tagged(k, k, 8)).collect());
        }
        (metas, data)
    }

    fn batch_merge_all(runs: &[Vec<u64>], b: usize, batch: usize) -> Vec<u64> {
        let mut seq = Vec::new();
        let mut store = std::collections::HashMap::new();
        for (j, keys) in runs.iter().enumerate() {
            let (m, d) = run_blocks(keys, j, b);
            for (mm, dd) in m.into_iter().zip(d) {
                store.insert((mm.run, mm.idx), dd);
                seq.push(mm);
            }
        }
        seq.sort_by_key(|m| m.first);
        let mut bm = BatchMerger::new(seq, runs.len(), b, batch);
        let mut out = Vec::new();
        while !bm.is_done() {
            let fetched = bm
                .upcoming()
                .iter()
                .map(|m| (store[&(m.run, m.idx)].clone(), 0))
                .collect();
            out.extend(bm.merge_batch(fetched).into_iter().map(|(e, _)| e.key));
            for j in 0..runs.len() {
                assert!(bm.retained(j) <= b);
            }
        }
        out
    }

    #[test]
    fn whole_input_in_one_batch() {
        let out = batch_merge_all(&[vec![1, 3, 5, 7], vec![2, 4, 6, 8]], 2, 4);
        assert_eq!(out, vec![1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn four_runs_of_eight_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = 4;
        let runs: Vec<Vec<u64>> = (0..4)
            .map(|_| {
                let mut v: Vec<u64> = (0..8 * b).map(|_| rng.gen_range(0..100)).collect();
                v.sort();
                v
            })
            .collect();
        let mut want: Vec<u64> = runs.iter().flatten().copied().collect();
        want.sort();
        for batch in 1..6 {
            assert_eq!(batch_merge_all(&runs, b, batch), want);
        }
    }
}
