#![allow(dead_code)]

use canonsort::element::{Element, ElementRef, Key};
use canonsort::harness::{config_for, input_elements, InputKind, InputSpec};
use canonsort::MachineConfig;
use rand::seq::SliceRandom;
use rand::Rng;

/// Direct sort of the whole input, padding included.
pub fn oracle_sort(spec: &InputSpec, cfg: &MachineConfig) -> Vec<Element> {
    let mut all: Vec<Element> = input_elements(spec, &config_for(spec, cfg))
        .into_iter()
        .flatten()
        .collect();
    all.sort_by(|a, b| a.key.cmp(&b.key).then_with(|| a.payload.cmp(&b.payload)));
    all
}

/// Output keys equal the oracle's position by position and the elements
/// form the same multiset. The order among equal keys is left open.
pub fn matches_oracle(out: &[Element], oracle: &[Element]) -> Result<(), String> {
    if out.len() != oracle.len() {
        return Err(format!("length {} vs oracle {}", out.len(), oracle.len()));
    }
    if let Some(i) = out.iter().zip(oracle).position(|(a, b)| a.key != b.key) {
        return Err(format!(
            "key mismatch at {i}: {} vs {}",
            out[i].key, oracle[i].key
        ));
    }
    let mut got = out.to_vec();
    got.sort_by(|a, b| a.key.cmp(&b.key).then_with(|| a.payload.cmp(&b.payload)));
    if got != oracle {
        return Err("element multiset differs".into());
    }
    Ok(())
}

/// Fetches strictly in sequence order: each step takes the next blocks
/// until a disk repeats or the buffer is full, then the resident prefix is
/// consumed. Returns the number of steps.
pub fn naive_schedule_steps(disks: &[usize], w: usize) -> usize {
    let mut next = 0;
    let mut consumed = 0;
    let mut steps = 0;
    while consumed < disks.len() {
        let mut used = vec![false; disks.iter().max().map_or(0, |d| d + 1)];
        while next < disks.len() && next - consumed < w && !used[disks[next]] {
            used[disks[next]] = true;
            next += 1;
        }
        steps += 1;
        consumed = next;
    }
    steps
}

/// Exact cut of `R` sorted sequences at rank `r` under the total order on
/// `(key, run, position)`.
pub fn brute_splitters(seqs: &[Vec<Key>], r: u64) -> Vec<u64> {
    let mut all: Vec<ElementRef> = seqs
        .iter()
        .enumerate()
        .flat_map(|(j, s)| {
            s.iter()
                .enumerate()
                .map(move |(p, &k)| ElementRef::new(k, j, p as u64))
        })
        .collect();
    all.sort();
    let mut pos = vec![0; seqs.len()];
    for e in &all[..r as usize] {
        pos[e.run as usize] += 1;
    }
    pos
}

/// A random point of the reference grid: `P ∈ {1,2,4,8}`, `D = 2`,
/// `B ∈ {4,16,64}`, `m ∈ {256,1024}`, `K = B`, element size 16. `N` is
/// drawn so that both engines accept it (`R·B ≤ m`), capped at `max_runs`
/// runs to keep the suite fast. Points with `P·B > m` are invalid and
/// redrawn.
pub fn grid_sample<R: Rng>(rng: &mut R, max_runs: u64) -> (MachineConfig, InputSpec) {
    let (pes, block, mem) = loop {
        let pes = *[1usize, 2, 4, 8].choose(rng).unwrap();
        let block = *[4usize, 16, 64].choose(rng).unwrap();
        let mem = *[256usize, 1024].choose(rng).unwrap();
        if pes * block <= mem {
            break (pes, block, mem);
        }
    };
    let global = (pes * mem) as u64;
    let runs = rng.gen_range(1..=((mem / block) as u64).min(max_runs));
    let n = rng.gen_range(((runs - 1) * global).max(1)..=runs * global);
    let seed = rng.gen();
    let cfg = MachineConfig {
        pes,
        disks: 2,
        block,
        mem,
        n,
        sample_rate: block,
        seed,
        randomize: rng.gen(),
        elem_size: 16,
    };
    let kind = *InputKind::ALL.choose(rng).unwrap();
    (cfg, InputSpec { kind, n, seed })
}

/// Prints one acceptance line and records the outcome.
pub struct Ledger {
    pub failed: Vec<String>,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger { failed: Vec::new() }
    }

    pub fn check(&mut self, id: &str, ok: bool, detail: impl AsRef<str>) {
        println!(
            "[{}] criterion {id}: {}",
            if ok { "PASS" } else { "FAIL" },
            detail.as_ref()
        );
        if !ok {
            self.failed.push(id.to_string());
        }
    }
}
