//! Run formation: each run takes `m/B` input blocks from every PE, sorts the
//! `M` elements across the cluster, and writes PE `i`'s slice of the sorted
//! run back into the blocks PE `i` read.

use crate::counters::Phase;
use crate::element::{Element, ElementRef, Key};
use crate::error::{Error, Result};
use crate::net::Net;
use crate::select::{select_all_ranks, Sample, SliceAccess};
use crate::vdisk::BlockAddr;
use crate::Cluster;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the generator behind every random choice of the simulator.
pub const RNG_NAME: &str = "chacha8";

/// Stream ids separating independent uses of one seed.
pub mod stream {
    pub const SHUFFLE: u64 = 1;
    pub const INPUT: u64 = 2;
    pub const STRIPE: u64 = 3;
}

/// ChaCha8 keyed by `seed`, on stream `(stream << 32) | pe`.
pub fn pe_rng(seed: u64, pe: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 32) | pe as u64);
    rng
}

/// Permutation of `0..blocks` for `pe`; identity when `randomize` is off.
pub fn shuffle_block_ids(pe: usize, blocks: u64, seed: u64, randomize: bool) -> Vec<u64> {
    let mut ids: Vec<u64> = (0..blocks).collect();
    if randomize {
        ids.shuffle(&mut pe_rng(seed, pe, stream::SHUFFLE));
    }
    ids
}

/// One global run, stored as `P` consecutive slices of `slice_len`
/// elements, slice `i` on PE `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDescriptor {
    pub index: usize,
    pub len: u64,
    pub slice_len: u64,
    /// Per PE, the input blocks that formed this run, in read order.
    pub input_blocks: Vec<Vec<u64>>,
    /// Per PE, the blocks holding the sorted slice, in data order.
    pub segments: Vec<Vec<u64>>,
}

impl RunDescriptor {
    /// PE, logical block and offset of run position `pos`.
    pub fn locate(&self, pos: u64, block: usize) -> (usize, u64, usize) {
        let pe = (pos / self.slice_len) as usize;
        let off = pos % self.slice_len;
        let b = block as u64;
        (
            pe,
            self.segments[pe][(off / b) as usize],
            (off % b) as usize,
        )
    }
}

#[derive(Clone, Debug)]
pub struct RunFormation {
    pub runs: Vec<RunDescriptor>,
    pub sample: Sample,
}

/// Sorts `data[i]` (PE `i`'s elements) into one globally sorted sequence
/// of which PE `i` keeps the `i`-th equal share. Ties are broken by
/// `(key, source PE, position in the locally sorted data)`.
pub fn internal_parallel_sort(
    net: &mut Net,
    mut data: Vec<Vec<Element>>,
    budget: usize,
    phase: Phase,
) -> Result<Vec<Vec<Element>>> {
    let p = data.len();
    for (pe, d) in data.iter().enumerate() {
        if d.len() > budget {
            return Err(Error::MemoryBudget {
                pe,
                held: d.len() as u64,
                budget: budget as u64,
            });
        }
    }
    let total: u64 = data.iter().map(|d| d.len() as u64).sum();
    if !total.is_multiple_of(p as u64) {
        return Err(Error::Protocol(format!(
            "{total} elements do not split evenly over {p} PEs"
        )));
    }
    for d in data.iter_mut() {
        d.sort_by_key(|e| e.key);
    }
    let ranks: Vec<u64> = (1..p as u64).map(|i| i * total / p as u64).collect();
    let keys: Vec<Vec<Key>> = data
        .iter()
        .map(|d| d.iter().map(|e| e.key).collect())
        .collect();
    let mut acc = SliceAccess::new(keys.iter().map(|k| k.as_slice()).collect());
    let cuts = select_all_ranks(&mut acc, &ranks, None)?;
    let bound = |i: usize, src: usize| -> usize {
        if i == 0 {
            0
        } else if i == p {
            data[src].len()
        } else {
            cuts[i - 1].0.pos[src] as usize
        }
    };
    let mut payloads: Vec<Vec<Vec<Element>>> = Vec::with_capacity(p);
    for src in 0..p {
        let mut row = Vec::with_capacity(p);
        for dst in 0..p {
            row.push(data[src][bound(dst, src)..bound(dst + 1, src)].to_vec());
        }
        payloads.push(row);
    }
    let recv = net.all_to_all_v(payloads, phase)?;
    Ok(recv
        .into_iter()
        .map(|pieces| {
            let mut v: Vec<Element> = pieces.into_iter().flatten().collect();
            v.sort_by_key(|e| e.key);
            v
        })
        .collect())
}

/// Forms all runs of the input held in logical blocks `0..N/(P·B)` of every
/// PE, in place.
pub fn form_runs(cluster: &mut Cluster) -> Result<RunFormation> {
    let cfg = cluster.cfg.clone();
    let p = cfg.pes;
    let b = cfg.block;
    let k = cfg.sample_rate as u64;
    let per_run = cfg.mem / b;
    let blocks = cfg.blocks_per_pe();
    let ids: Vec<Vec<u64>> = (0..p)
        .map(|pe| shuffle_block_ids(pe, blocks, cfg.seed, cfg.randomize))
        .collect();
    let r = cfg.runs() as usize;
    let mut runs = Vec::with_capacity(r);
    let mut sample = Sample::new(k, r);
    for j in 0..r {
        let lo = j * per_run;
        let hi = ((j + 1) * per_run).min(blocks as usize);
        let mut data = Vec::with_capacity(p);
        for (pe, pe_ids) in ids.iter().enumerate() {
            let mut d = Vec::with_capacity((hi - lo) * b);
            for &l in &pe_ids[lo..hi] {
                d.extend(
                    cluster
                        .disks
                        .read_block(BlockAddr::new(pe, l), Phase::RunFormation)?,
                );
            }
            data.push(d);
        }
        let sorted = internal_parallel_sort(&mut cluster.net, data, cfg.mem, Phase::RunFormation)?;
        let slice_len = ((hi - lo) * b) as u64;
        let mut segments = Vec::with_capacity(p);
        for (pe, slice) in sorted.into_iter().enumerate() {
            let base = pe as u64 * slice_len;
            let first = base.next_multiple_of(k);
            for pos in (first..base + slice_len).step_by(k as usize) {
                sample.runs[j].push(ElementRef::new(slice[(pos - base) as usize].key, j, pos));
            }
            let mut seg = ids[pe][lo..hi].to_vec();
            seg.sort_unstable();
            for (chunk, &l) in slice.chunks(b).zip(&seg) {
                cluster.disks.write_block(
                    BlockAddr::new(pe, l),
                    chunk.to_vec(),
                    Phase::RunFormation,
                )?;
            }
            segments.push(seg);
        }
        runs.push(RunDescriptor {
            index: j,
            len: slice_len * p as u64,
            slice_len,
            input_blocks: ids.iter().map(|v| v[lo..hi].to_vec()).collect(),
            segments,
        });
    }
    Ok(RunFormation { runs, sample })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn elems(keys: &[Key]) -> Vec<Element> {
        keys.iter().map(|&k| Element::tagged(k, k, 8)).collect()
    }

    #[test]
    fn identity_without_randomize() {
        assert_eq!(shuffle_block_ids(3, 6, 9, false), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn shuffle_is_deterministic() {
        assert_eq!(
            shuffle_block_ids(1, 50, 9, true),
            shuffle_block_ids(1, 50, 9, true)
        );
        assert_ne!(
            shuffle_block_ids(1, 50, 9, true),
            shuffle_block_ids(2, 50, 9, true)
        );
    }

    #[test]
    fn shuffle_positions_uniform() {
        let trials = 10_000u64;
        let mut counts = [[0u64; 8]; 8];
        for seed in 0..trials {
            for (pos, &id) in shuffle_block_ids(0, 8, seed, true).iter().enumerate() {
                counts[id as usize][pos] += 1;
            }
        }
        let mean = trials as f64 / 8.0;
        let sigma = (trials as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        let mut chi2 = 0.0;
        for row in &counts {
            for &c in row {
                assert!((c as f64 - mean).abs() <= 3.0 * sigma, "count {c}");
                chi2 += (c as f64 - mean).powi(2) / mean;
            }
        }
        // 49 degrees of freedom; 99.9% quantile is about 85.4
        assert!(chi2 < 85.4, "chi2 {chi2}");
    }

    #[test]
    fn single_pe_sorts_locally() {
        let mut net = Net::new(1);
        let out = internal_parallel_sort(&mut net, vec![elems(&[3, 1, 2])], 3, Phase::RunFormation)
            .unwrap();
        assert_eq!(out[0], elems(&[1, 2, 3]));
    }

    #[test]
    fn two_pes_swap() {
        let mut net = Net::new(2);
        let out = internal_parallel_sort(
            &mut net,
            vec![elems(&[4, 3]), elems(&[2, 1])],
            2,
            Phase::RunFormation,
        )
        .unwrap();
        assert_eq!(out, vec![elems(&[1, 2]), elems(&[3, 4])]);
        assert_eq!(net.transcript().len(), 1);
    }

    #[test]
    fn sorted_input_stays_local() {
        let mut net = Net::new(3);
        let data = vec![elems(&[1, 2]), elems(&[3, 4]), elems(&[5, 6])];
        let out = internal_parallel_sort(&mut net, data.clone(), 2, Phase::RunFormation).unwrap();
        assert_eq!(out, data);
        assert_eq!(net.snapshot_counters().sent(Phase::RunFormation), 0);
    }

    #[test]
    fn budget_enforced() {
        let mut net = Net::new(1);
        let r = internal_parallel_sort(&mut net, vec![elems(&[1, 2, 3])], 2, Phase::RunFormation);
        assert!(matches!(r, Err(Error::MemoryBudget { .. })));
    }
}
