//! The canonical engine: run formation, splitting plus external all-to-all,
//! local merge. PE `i` ends with global ranks `i·N/P .. (i+1)·N/P`.

use crate::error::Result;
use crate::merge::{local_multiway_merge, LocalMergeReport};
use crate::runform::form_runs;
use crate::xall::{
    build_plan, compute_splitters, external_all_to_all, AllToAllReport, SelectionReport,
    SplitterMatrix,
};
use crate::Cluster;
use std::time::{Duration, Instant};

#[derive(Clone, Debug, Default)]
pub struct CanonicalReport {
    pub runs: usize,
    pub splitters: Option<SplitterMatrix>,
    pub selection: SelectionReport,
    pub all_to_all: AllToAllReport,
    pub local_merge: LocalMergeReport,
    /// Per PE, peak allocated blocks during run formation.
    pub run_formation_peak: Vec<u64>,
    /// Sample elements held in memory, per PE.
    pub sample_elems: Vec<u64>,
    pub wall: Vec<(&'static str, Duration)>,
}

impl CanonicalReport {
    /// Elements of block I/O beyond the data itself: read waste and
    /// sentinel padding of the all-to-all and the local merge.
    pub fn padding(&self) -> u64 {
        self.all_to_all.read_waste
            + self.all_to_all.write_padding
            + self.local_merge.read_waste
            + self.local_merge.write_padding
    }
}

#[derive(Clone, Debug)]
pub struct CanonicalOutput {
    /// Per PE, its output blocks in order.
    pub blocks: Vec<Vec<u64>>,
    pub report: CanonicalReport,
}

pub fn canonical_sort(cluster: &mut Cluster) -> Result<CanonicalOutput> {
    canonical_sort_with(cluster, true)
}

/// As [`canonical_sort`], with the selection block cache switchable.
pub fn canonical_sort_with(
    cluster: &mut Cluster,
    selection_cache: bool,
) -> Result<CanonicalOutput> {
    cluster.cfg.validate()?;
    let p = cluster.cfg.pes;
    let mut report = CanonicalReport::default();

    let t = Instant::now();
    cluster.disks.reset_peak();
    let rf = form_runs(cluster)?;
    report.runs = rf.runs.len();
    report.run_formation_peak = (0..p).map(|i| cluster.disks.peak_allocated(i)).collect();
    report.sample_elems = vec![0; p];
    for run in &rf.sample.runs {
        for e in run {
            let pe = (e.pos / rf.runs[e.run as usize].slice_len) as usize;
            report.sample_elems[pe] += 1;
        }
    }
    report.wall.push(("run_formation", t.elapsed()));

    let t = Instant::now();
    let (sp, sel) = compute_splitters(cluster, &rf, selection_cache)?;
    report.selection = sel;
    report.wall.push(("selection", t.elapsed()));

    let t = Instant::now();
    let plan = build_plan(&rf.runs, &sp);
    let (staged, a2a) = external_all_to_all(cluster, &rf.runs, &sp, &plan)?;
    report.all_to_all = a2a;
    report.wall.push(("all_to_all", t.elapsed()));

    let t = Instant::now();
    let (blocks, lm) = local_multiway_merge(cluster, staged)?;
    report.local_merge = lm;
    report.wall.push(("local_merge", t.elapsed()));
    report.splitters = Some(sp);
    Ok(CanonicalOutput { blocks, report })
}
