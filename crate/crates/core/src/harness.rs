//! Input generation, output verification, statistics and the redistribution
//! experiment.

use crate::canonical::{canonical_sort, CanonicalReport};
use crate::config::MachineConfig;
use crate::counters::{Phase, PhaseCounters};
use crate::element::{Element, SENTINEL_KEY};
use crate::error::{Error, Result};
use crate::runform::{form_runs, pe_rng, stream, RNG_NAME};
use crate::striped::{striped_sort, StripedOutput, StripedRun};
use crate::vdisk::BlockAddr;
use crate::xall::{build_plan, compute_splitters};
use crate::Cluster;
use rand::Rng;
use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputKind {
    Random,
    Sorted,
    Reverse,
    WorstCaseShift,
    DuplicateHeavy,
}

impl InputKind {
    pub const ALL: [InputKind; 5] = [
        InputKind::Random,
        InputKind::Sorted,
        InputKind::Reverse,
        InputKind::WorstCaseShift,
        InputKind::DuplicateHeavy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InputKind::Random => "random",
            InputKind::Sorted => "sorted",
            InputKind::Reverse => "reverse",
            InputKind::WorstCaseShift => "worst_case_shift",
            InputKind::DuplicateHeavy => "duplicate_heavy",
        }
    }
}

impl FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownInputKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub kind: InputKind,
    /// Real elements, before padding.
    pub n: u64,
    pub seed: u64,
}

/// `n` rounded up to a multiple of `B·P`.
pub fn padded_n(n: u64, cfg: &MachineConfig) -> u64 {
    n.next_multiple_of((cfg.block * cfg.pes) as u64)
}

/// Config for sorting `spec`: `cfg` with `N` set to the padded input size.
pub fn config_for(spec: &InputSpec, cfg: &MachineConfig) -> MachineConfig {
    MachineConfig {
        n: padded_n(spec.n, cfg),
        ..cfg.clone()
    }
}

/// Order-independent multiset fingerprint: the sum modulo 2^128 of a keyed
/// 128-bit hash of every element, plus the element count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Checksum {
    pub sum: u128,
    pub count: u64,
}

const HASH_KEYS: (u64, u64) = (0x5be0_cd19_137e_2179, 0x1f83_d9ab_fb41_bd6b);

fn elem_hash(e: &Element) -> u128 {
    let half = |k: u64| {
        let mut h = DefaultHasher::new();
        k.hash(&mut h);
        e.key.hash(&mut h);
        e.payload.as_slice().hash(&mut h);
        h.finish()
    };
    ((half(HASH_KEYS.0) as u128) << 64) | half(HASH_KEYS.1) as u128
}

impl Checksum {
    pub fn add(&mut self, e: &Element) {
        self.sum = self.sum.wrapping_add(elem_hash(e));
        self.count += 1;
    }

    pub fn of<'a>(elems: impl IntoIterator<Item = &'a Element>) -> Self {
        let mut c = Checksum::default();
        for e in elems {
            c.add(e);
        }
        c
    }
}

/// The input of every PE as a pure function of `(spec, cfg)`: PE `i` holds
/// global indices `i·N/P ..`, padding at the end of the index space.
///
/// `worst_case_shift` aligns runs with final ranges: chunk `c` (the `c`-th
/// `m` elements) of PE `i` holds ranks `c·M + ((i + P/2) mod P)·m ..`, so
/// without block shuffling every run covers one contiguous rank range and
/// every slice but the one already on the owning PE has to move.
pub fn input_elements(spec: &InputSpec, cfg: &MachineConfig) -> Vec<Vec<Element>> {
    let p = cfg.pes;
    let n = padded_n(spec.n, cfg);
    let per_pe = n / p as u64;
    let m = cfg.mem as u64;
    let payload = cfg.payload_len();
    (0..p)
        .map(|pe| {
            let mut rng = pe_rng(spec.seed, pe, stream::INPUT);
            (0..per_pe)
                .map(|t| {
                    let g = pe as u64 * per_pe + t;
                    if g >= spec.n {
                        return Element::tagged(SENTINEL_KEY, g, payload);
                    }
                    let key = match spec.kind {
                        InputKind::Random => rng.gen_range(0..SENTINEL_KEY),
                        InputKind::Sorted => g,
                        InputKind::Reverse => spec.n - 1 - g,
                        InputKind::DuplicateHeavy => rng.gen_range(0..8),
                        InputKind::WorstCaseShift => {
                            let c = t / m;
                            let width = m.min(per_pe - c * m);
                            let src = ((pe + p / 2) % p) as u64;
                            c * m * p as u64 + src * width + t % m
                        }
                    };
                    Element::tagged(key, g, payload)
                })
                .collect()
        })
        .collect()
}

/// Writes the input to logical blocks `0..N/(P·B)` of every PE and returns
/// the checksum of the real elements.
pub fn generate_input(cluster: &mut Cluster, spec: &InputSpec) -> Result<Checksum> {
    if cluster.cfg.n != padded_n(spec.n, &cluster.cfg) {
        return Err(Error::Protocol(format!(
            "config N={} does not match padded input size {}",
            cluster.cfg.n,
            padded_n(spec.n, &cluster.cfg)
        )));
    }
    let b = cluster.cfg.block;
    let mut sum = Checksum::default();
    for (pe, elems) in input_elements(spec, &cluster.cfg).into_iter().enumerate() {
        for e in elems.iter().filter(|e| !e.is_sentinel()) {
            sum.add(e);
        }
        for (l, chunk) in elems.chunks(b).enumerate() {
            let addr = BlockAddr::new(pe, l as u64);
            // input placement is not part of any sort phase
            cluster
                .disks
                .write_block(addr, chunk.to_vec(), Phase::RunFormation)?;
        }
    }
    *cluster.disks.counters_mut() = PhaseCounters::new(cluster.cfg.pes, cluster.cfg.disks);
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VerifyFailure {
    Unsorted { pe: usize, pos: u64 },
    PartitionSize { pe: usize, expected: u64, got: u64 },
    Partition { boundary: usize },
    Count { expected: u64, got: u64 },
    Checksum { expected: u128, got: u128 },
    StripeOrder { block: usize },
    StripeBalance { min: u64, max: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub failures: Vec<VerifyFailure>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn check_multiset(report: &mut VerifyReport, got: Checksum, expected: Checksum) {
    if got.count != expected.count {
        report.failures.push(VerifyFailure::Count {
            expected: expected.count,
            got: got.count,
        });
    }
    if got.sum != expected.sum {
        report.failures.push(VerifyFailure::Checksum {
            expected: expected.sum,
            got: got.sum,
        });
    }
}

/// Reads each PE's output blocks without charging any counter.
pub fn read_canonical_output(
    cluster: &mut Cluster,
    blocks: &[Vec<u64>],
) -> Result<Vec<Vec<Element>>> {
    let mut out = Vec::with_capacity(blocks.len());
    for (pe, ids) in blocks.iter().enumerate() {
        let mut v = Vec::with_capacity(ids.len() * cluster.cfg.block);
        for &l in ids {
            v.extend(cluster.disks.peek_block(BlockAddr::new(pe, l))?);
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_striped_output(cluster: &mut Cluster, run: &StripedRun) -> Result<Vec<Element>> {
    let mut v = Vec::with_capacity(run.len as usize);
    for b in &run.blocks {
        v.extend(cluster.disks.peek_block(BlockAddr::new(b.pe, b.logical))?);
    }
    Ok(v)
}

fn first_descent(v: &[Element]) -> Option<u64> {
    v.windows(2)
        .position(|w| w[0].key > w[1].key)
        .map(|i| i as u64 + 1)
}

/// Per-PE sortedness, canonical partition and multiset equality. Sentinels
/// are part of the partition sizes and stripped before the multiset check.
pub fn verify_canonical(
    cluster: &mut Cluster,
    blocks: &[Vec<u64>],
    expected: Checksum,
) -> Result<VerifyReport> {
    let out = read_canonical_output(cluster, blocks)?;
    Ok(verify_canonical_data(&out, cluster.cfg.n, expected))
}

pub fn verify_canonical_data(out: &[Vec<Element>], n: u64, expected: Checksum) -> VerifyReport {
    let mut r = VerifyReport::default();
    let share = n / out.len().max(1) as u64;
    for (pe, v) in out.iter().enumerate() {
        if v.len() as u64 != share {
            r.failures.push(VerifyFailure::PartitionSize {
                pe,
                expected: share,
                got: v.len() as u64,
            });
        }
        if let Some(pos) = first_descent(v) {
            r.failures.push(VerifyFailure::Unsorted { pe, pos });
        }
    }
    let nonempty: Vec<(usize, &Vec<Element>)> = out
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .collect();
    for w in nonempty.windows(2) {
        let hi = w[0].1.iter().map(|e| e.key).max().expect("non-empty");
        let lo = w[1].1.iter().map(|e| e.key).min().expect("non-empty");
        if hi > lo {
            r.failures
                .push(VerifyFailure::Partition { boundary: w[1].0 });
        }
    }
    check_multiset(
        &mut r,
        Checksum::of(out.iter().flatten().filter(|e| !e.is_sentinel())),
        expected,
    );
    r
}

/// Sortedness along the stripe, round-robin placement over all disks,
/// per-disk balance and multiset equality.
pub fn verify_striped(
    cluster: &mut Cluster,
    run: &StripedRun,
    expected: Checksum,
) -> Result<VerifyReport> {
    let data = read_striped_output(cluster, run)?;
    let d_total = cluster.cfg.pes * cluster.cfg.disks;
    let mut r = VerifyReport::default();
    if let Some(pos) = first_descent(&data) {
        r.failures.push(VerifyFailure::Unsorted { pe: 0, pos });
    }
    if let Some(block) = run
        .blocks
        .iter()
        .enumerate()
        .position(|(i, b)| b.gdisk != (run.offset + i) % d_total)
    {
        r.failures.push(VerifyFailure::StripeOrder { block });
    }
    let mut per_disk = vec![0u64; d_total];
    for b in &run.blocks {
        per_disk[b.gdisk] += 1;
    }
    let (min, max) = (
        *per_disk.iter().min().unwrap_or(&0),
        *per_disk.iter().max().unwrap_or(&0),
    );
    if max - min > 1 {
        r.failures.push(VerifyFailure::StripeBalance { min, max });
    }
    check_multiset(
        &mut r,
        Checksum::of(data.iter().filter(|e| !e.is_sentinel())),
        expected,
    );
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Canonical,
    Striped,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Canonical => "canonical",
            Engine::Striped => "striped",
        }
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Engine::Canonical),
            "striped" => Ok(Engine::Striped),
            _ => Err(Error::Parse(format!("unknown engine {s:?}"))),
        }
    }
}

/// Everything measured in one sort.
#[derive(Clone, Debug)]
pub struct StatsReport {
    pub engine: Engine,
    pub cfg: MachineConfig,
    pub counters: PhaseCounters,
    pub n_real: u64,
    pub v_moved: u64,
    pub k: u64,
    pub max_partners: usize,
    pub selection_rounds: u32,
    pub selection_touched: u64,
    pub padding: u64,
    pub merge_phases: usize,
    /// `c` in `reads + writes ≤ 2V/(P·B) + c·R·P'` for the all-to-all.
    pub a2a_overhead_c: f64,
    pub wall: Vec<(&'static str, Duration)>,
}

pub const CSV_HEADER: &str = "engine,phase,pe,blocks_read,blocks_written,io_elements,elements_sent,\
elements_received,elements_local,control_sent,control_received,io_steps,reads_per_disk,writes_per_disk,\
wall_ms,n,v_moved,k,max_partners,sel_rounds,sel_touched,padding,merge_phases,a2a_overhead_c,rng";

impl StatsReport {
    pub fn from_canonical(
        cfg: &MachineConfig,
        counters: PhaseCounters,
        n_real: u64,
        rep: &CanonicalReport,
    ) -> Self {
        StatsReport {
            engine: Engine::Canonical,
            cfg: cfg.clone(),
            counters,
            n_real,
            v_moved: rep.all_to_all.v_moved,
            k: rep.all_to_all.k,
            max_partners: rep.all_to_all.max_partners,
            selection_rounds: rep.selection.max_rounds,
            selection_touched: rep.selection.touched,
            padding: rep.padding(),
            merge_phases: 1,
            a2a_overhead_c: rep.all_to_all.overhead_constant(),
            wall: rep.wall.clone(),
        }
    }

    pub fn from_striped(
        cfg: &MachineConfig,
        counters: PhaseCounters,
        n_real: u64,
        out: &StripedOutput,
    ) -> Self {
        StatsReport {
            engine: Engine::Striped,
            cfg: cfg.clone(),
            counters,
            n_real,
            v_moved: 0,
            k: 0,
            max_partners: 0,
            selection_rounds: 0,
            selection_touched: 0,
            padding: 0,
            merge_phases: out.phases,
            a2a_overhead_c: 0.0,
            wall: Vec::new(),
        }
    }

    /// Element I/O of one phase: blocks read plus written, times `B`.
    pub fn phase_io(&self, phase: Phase) -> u64 {
        self.counters.io_blocks(phase) * self.cfg.block as u64
    }

    pub fn total_io(&self) -> u64 {
        self.counters.total_io_blocks() * self.cfg.block as u64
    }

    /// I/O of the data phases: everything except selection probes.
    pub fn data_io(&self) -> u64 {
        self.total_io() - self.phase_io(Phase::Selection)
    }

    pub fn total_sent(&self) -> u64 {
        self.counters.total_sent()
    }

    /// One header line, then one line per (phase, PE).
    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        let b = self.cfg.block as u64;
        for phase in Phase::ALL {
            let tally = self.counters.phase(phase);
            let wall = self
                .wall
                .iter()
                .find(|(n, _)| *n == phase.name())
                .map_or(0.0, |(_, d)| d.as_secs_f64() * 1e3);
            for (pe, t) in tally.pes.iter().enumerate() {
                let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{},{},{},{},{},{},{},{},{:.3},{}",
                    self.engine.name(),
                    phase.name(),
                    pe,
                    t.blocks_read.iter().sum::<u64>(),
                    t.blocks_written.iter().sum::<u64>(),
                    t.io_blocks() * b,
                    t.elements_sent,
                    t.elements_received,
                    t.elements_local,
                    t.control_sent,
                    t.control_received,
                    tally.io_steps,
                    join(&t.blocks_read),
                    join(&t.blocks_written),
                    wall,
                    self.n_real,
                    self.v_moved,
                    self.k,
                    self.max_partners,
                    self.selection_rounds,
                    self.selection_touched,
                    self.padding,
                    self.merge_phases,
                    self.a2a_overhead_c,
                    RNG_NAME,
                );
            }
        }
        s
    }
}

/// Result of generating, sorting and verifying one input.
#[derive(Debug)]
pub struct SortRun {
    pub cluster: Cluster,
    pub stats: StatsReport,
    pub verify: VerifyReport,
    pub output: Vec<Vec<Element>>,
}

/// Generates `spec` on a fresh cluster built from `cfg` (with `N` set to the
/// padded input size), sorts it with `engine` and verifies the result.
pub fn run_sort(
    cfg: &MachineConfig,
    spec: &InputSpec,
    engine: Engine,
    persist: Option<&std::path::Path>,
) -> Result<SortRun> {
    let cfg = config_for(spec, cfg);
    let mut cluster = match persist {
        Some(dir) => Cluster::with_persistence(cfg.clone(), dir)?,
        None => Cluster::new(cfg.clone()),
    };
    let expected = generate_input(&mut cluster, spec)?;
    match engine {
        Engine::Canonical => {
            let out = canonical_sort(&mut cluster)?;
            let stats = StatsReport::from_canonical(&cfg, cluster.counters(), spec.n, &out.report);
            let output = read_canonical_output(&mut cluster, &out.blocks)?;
            let verify = verify_canonical_data(&output, cfg.n, expected);
            Ok(SortRun {
                cluster,
                stats,
                verify,
                output,
            })
        }
        Engine::Striped => {
            let out = striped_sort(&mut cluster)?;
            let stats = StatsReport::from_striped(&cfg, cluster.counters(), spec.n, &out);
            let verify = verify_striped(&mut cluster, &out.run, expected)?;
            let output = vec![read_striped_output(&mut cluster, &out.run)?];
            Ok(SortRun {
                cluster,
                stats,
                verify,
                output,
            })
        }
    }
}

/// Redistribution volume of one input under the canonical engine, without
/// performing the all-to-all: `(V_moved, largest per-run moved volume)`.
pub fn measure_redistribution(cfg: &MachineConfig, spec: &InputSpec) -> Result<(u64, u64)> {
    let cfg = config_for(spec, cfg);
    cfg.validate()?;
    let mut cluster = Cluster::new(cfg);
    generate_input(&mut cluster, spec)?;
    let rf = form_runs(&mut cluster)?;
    let (sp, _) = compute_splitters(&mut cluster, &rf, true)?;
    let plan = build_plan(&rf.runs, &sp);
    let mut per_run = vec![0u64; rf.runs.len()];
    for piece in plan.pieces.iter().filter(|x| x.src != x.dst) {
        per_run[piece.run] += piece.len();
    }
    Ok((plan.v_moved, per_run.into_iter().max().unwrap_or(0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub kind: InputKind,
    pub block: usize,
    pub randomize: bool,
    pub trials: usize,
    pub n: u64,
    pub mean_v: f64,
    pub max_v: u64,
    pub mean_max_run_moved: f64,
    /// `sqrt(M·B·log2 P)`.
    pub shape: f64,
    /// Mean V_moved relative to the grid point with `B/4`, if present.
    pub ratio_vs_quarter_b: Option<f64>,
}

pub const EXPERIMENT_HEADER: &str =
    "kind,B,randomize,trials,N,mean_v_moved,max_v_moved,mean_v_over_n,mean_max_run_moved,sqrt_mb_logp,ratio_vs_quarter_b";

/// For every `(B, randomize)` grid point, V_moved over `trials` inputs with
/// seeds `base.seed ..`. The sample rate follows `B`.
pub fn run_experiment_redistribution(
    base: &MachineConfig,
    kind: InputKind,
    n: u64,
    blocks: &[usize],
    randomize: &[bool],
    trials: usize,
) -> Result<Vec<ExperimentRow>> {
    let mut rows: Vec<ExperimentRow> = Vec::new();
    for &rz in randomize {
        for &b in blocks {
            let cfg = MachineConfig {
                block: b,
                sample_rate: b,
                randomize: rz,
                ..base.clone()
            };
            let mut sum = 0u64;
            let mut max = 0u64;
            let mut run_sum = 0u64;
            for t in 0..trials {
                let seed = base.seed.wrapping_add(t as u64);
                let spec = InputSpec { kind, n, seed };
                let (v, per_run) = measure_redistribution(
                    &MachineConfig {
                        seed,
                        ..cfg.clone()
                    },
                    &spec,
                )?;
                sum += v;
                max = max.max(v);
                run_sum += per_run;
            }
            let logp = (base.pes as f64).log2();
            rows.push(ExperimentRow {
                kind,
                block: b,
                randomize: rz,
                trials,
                n,
                mean_v: sum as f64 / trials as f64,
                max_v: max,
                mean_max_run_moved: run_sum as f64 / trials as f64,
                shape: (cfg.global_mem() as f64 * b as f64 * logp).sqrt(),
                ratio_vs_quarter_b: None,
            });
        }
    }
    let snapshot = rows.clone();
    for row in rows.iter_mut() {
        if let Some(q) = snapshot
            .iter()
            .find(|o| o.randomize == row.randomize && o.block * 4 == row.block)
        {
            row.ratio_vs_quarter_b = Some(row.mean_v / q.mean_v);
        }
    }
    Ok(rows)
}

pub fn experiment_csv(rows: &[ExperimentRow]) -> String {
    let mut s = String::from(EXPERIMENT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3},{},{:.6},{:.3},{:.3},{}",
            r.kind.name(),
            r.block,
            if r.randomize { "on" } else { "off" },
            r.trials,
            r.n,
            r.mean_v,
            r.max_v,
            r.mean_v / r.n as f64,
            r.mean_max_run_moved,
            r.shape,
            r.ratio_vs_quarter_b
                .map_or(String::new(), |x| format!("{x:.4}")),
        );
    }
    s
}
