//! Multiway selection: given `R` sorted sequences and a rank `r`, find cut
//! positions so that exactly `r` elements lie left of the cuts and every one
//! of them precedes every element right of the cuts.
//!
//! Each sequence is conceptually padded with `+inf` to a power of two `L`.
//! At scale `s` the selection is a set of whole `s`-chunks: the `r/s` chunks
//! with the smallest first elements. Halving the scale splits each chunk;
//! second halves that start above the largest first-element kept are
//! dropped, then the smallest next halves are added until `r/h` chunks are
//! selected again. At scale 1 the chunks are single elements and the cut is
//! exact.

use crate::element::{ElementRef, Key};
use crate::error::{Error, Result};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

/// Ordered probe: real elements precede padding, padding is ordered by
/// position so the order stays total.
pub type Probe = (bool, ElementRef);

/// Random access to `R` sorted sequences.
pub trait SeqAccess {
    fn runs(&self) -> usize;
    fn len(&self, run: usize) -> u64;
    /// Key at `pos < len(run)`.
    fn key_at(&mut self, run: usize, pos: u64) -> Result<Key>;
}

/// In-memory sequences.
pub struct SliceAccess<'a> {
    seqs: Vec<&'a [Key]>,
}

impl<'a> SliceAccess<'a> {
    pub fn new(seqs: Vec<&'a [Key]>) -> Self {
        SliceAccess { seqs }
    }
}

impl SeqAccess for SliceAccess<'_> {
    fn runs(&self) -> usize {
        self.seqs.len()
    }

    fn len(&self, run: usize) -> u64 {
        self.seqs[run].len() as u64
    }

    fn key_at(&mut self, run: usize, pos: u64) -> Result<Key> {
        Ok(self.seqs[run][pos as usize])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splitters {
    pub pos: Vec<u64>,
}

/// Starting point for [`multiway_select`]: a selection of whole
/// `step`-chunks that is a lower set by first element, as produced by
/// [`sampled_init`]. `lead[j]` is the first element of the last selected
/// chunk of run `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectInit {
    pub pos: Vec<u64>,
    pub step: u64,
    pub lead: Vec<Option<Probe>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelectStats {
    pub rounds: u32,
    /// Distinct real elements inspected.
    pub touched: u64,
}

struct Prober<'a, A: SeqAccess + ?Sized> {
    acc: &'a mut A,
    lens: Vec<u64>,
    seen: HashMap<(usize, u64), Key>,
}

impl<A: SeqAccess + ?Sized> Prober<'_, A> {
    fn probe(&mut self, run: usize, pos: u64) -> Result<Probe> {
        if pos >= self.lens[run] {
            return Ok((true, ElementRef::new(0, run, pos)));
        }
        let key = match self.seen.get(&(run, pos)) {
            Some(&k) => k,
            None => {
                let k = self.acc.key_at(run, pos)?;
                self.seen.insert((run, pos), k);
                k
            }
        };
        Ok((false, ElementRef::new(key, run, pos)))
    }
}

pub fn padded_len(max_len: u64) -> u64 {
    max_len.max(1).next_power_of_two()
}

/// Exact splitters for rank `r`. Without `init` the search starts at scale
/// `padded_len(max len)` and takes `log2` of it rounds; with `init` it starts
/// at `init.step`, which must be a power of two.
pub fn multiway_select<A: SeqAccess + ?Sized>(
    acc: &mut A,
    r: u64,
    init: Option<&SelectInit>,
) -> Result<(Splitters, SelectStats)> {
    let runs = acc.runs();
    let lens: Vec<u64> = (0..runs).map(|j| acc.len(j)).collect();
    let total: u64 = lens.iter().sum();
    if r > total {
        return Err(Error::RankOutOfRange { rank: r, total });
    }
    let mut pr = Prober {
        acc,
        lens: lens.clone(),
        seen: HashMap::new(),
    };
    let (mut z, mut s, mut lead) = match init {
        Some(i) => {
            assert!(
                i.step.is_power_of_two(),
                "selection step must be a power of two"
            );
            (i.pos.clone(), i.step, i.lead.clone())
        }
        None => {
            let l = padded_len(lens.iter().copied().max().unwrap_or(0));
            let q = (r / l) as usize;
            let mut firsts = Vec::with_capacity(runs);
            for j in 0..runs {
                firsts.push(pr.probe(j, 0)?);
            }
            firsts.sort();
            let mut z = vec![0u64; runs];
            let mut lead = vec![None; runs];
            for f in &firsts[..q] {
                let j = f.1.run as usize;
                z[j] = l;
                lead[j] = Some(*f);
            }
            (z, l, lead)
        }
    };

    let mut rounds = 0u32;
    while s > 1 {
        let h = s / 2;
        rounds += 1;
        let x = (0..runs)
            .filter(|&j| z[j] > 0)
            .filter_map(|j| lead[j])
            .max();
        for j in 0..runs {
            if z[j] == 0 {
                continue;
            }
            let mid = pr.probe(j, z[j] - h)?;
            if Some(mid) > x {
                z[j] -= h;
            } else {
                lead[j] = Some(mid);
            }
        }
        let mut count = z.iter().sum::<u64>() / h;
        let target = r / h;
        assert!(count <= target, "selection lost its lower-set shape");
        if count < target {
            let mut heap = BinaryHeap::with_capacity(runs);
            for j in 0..runs {
                heap.push(Reverse(pr.probe(j, z[j])?));
            }
            while count < target {
                let Reverse(p) = heap.pop().expect("one candidate per run");
                let j = p.1.run as usize;
                lead[j] = Some(p);
                z[j] += h;
                count += 1;
                heap.push(Reverse(pr.probe(j, z[j])?));
            }
        }
        s = h;
    }
    debug_assert_eq!(z.iter().sum::<u64>(), r);
    debug_assert!(z.iter().zip(&lens).all(|(a, b)| a <= b));
    let touched = pr.seen.len() as u64;
    Ok((Splitters { pos: z }, SelectStats { rounds, touched }))
}

/// One splitter vector per rank; ranks must be non-decreasing.
pub fn select_all_ranks<A: SeqAccess + ?Sized>(
    acc: &mut A,
    ranks: &[u64],
    sample: Option<&SortedSample>,
) -> Result<Vec<(Splitters, SelectStats)>> {
    if ranks.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::RanksNotSorted);
    }
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let init = match sample {
            Some(s) => Some(sampled_init(s, r)?),
            None => None,
        };
        out.push(multiway_select(acc, r, init.as_ref())?);
    }
    Ok(out)
}

/// Every `rate`-th element of each run, positions `0, rate, 2·rate, …`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sample {
    pub rate: u64,
    pub runs: Vec<Vec<ElementRef>>,
}

impl Sample {
    pub fn new(rate: u64, runs: usize) -> Self {
        Sample {
            rate,
            runs: vec![Vec::new(); runs],
        }
    }

    /// Sample of in-memory sequences.
    pub fn of_slices(seqs: &[&[Key]], rate: u64) -> Self {
        let runs = seqs
            .iter()
            .enumerate()
            .map(|(j, s)| {
                (0..s.len() as u64)
                    .step_by(rate as usize)
                    .map(|p| ElementRef::new(s[p as usize], j, p))
                    .collect()
            })
            .collect();
        Sample { rate, runs }
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sorted(&self) -> SortedSample {
        let mut elems: Vec<ElementRef> = self.runs.iter().flatten().copied().collect();
        elems.sort();
        SortedSample {
            rate: self.rate,
            runs: self.runs.len(),
            elems,
        }
    }
}

/// A [`Sample`] merged into one sorted sequence, built once and reused for
/// every rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortedSample {
    pub rate: u64,
    pub runs: usize,
    pub elems: Vec<ElementRef>,
}

/// Takes the `floor(r/K)` smallest sample elements and cuts each run just
/// after the chunk its last taken sample starts.
pub fn sampled_init(sample: &SortedSample, r: u64) -> Result<SelectInit> {
    if sample.elems.is_empty() && r > 0 {
        return Err(Error::EmptySample(r));
    }
    let k = sample.rate;
    let q = (r / k) as usize;
    if q > sample.elems.len() {
        return Err(Error::RankOutOfRange {
            rank: r,
            total: sample.elems.len() as u64 * k,
        });
    }
    let mut pos = vec![0u64; sample.runs];
    let mut lead = vec![None; sample.runs];
    for e in &sample.elems[..q] {
        pos[e.run as usize] = e.pos + k;
        lead[e.run as usize] = Some((false, *e));
    }
    Ok(SelectInit { pos, step: k, lead })
}
