//! Dataset handling: time-series ingestion (CSV + manifest), windowing into
//! (initialization, prediction) samples, block-wise splits, per-channel
//! normalization, task extraction for the quadrotor layout, and the
//! synthetic systems used as verification oracles.

use crate::error::{Error, Result};
use crate::hybrid::{euler_rates, mm_step, HybridWindow, MmParams, QuadRecord, QuadState};
use crate::init::InitSegment;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

/// A uniformly sampled multi-channel series: row `k` pairs the input `u_k`
/// with the output `y_k` it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub dt: f64,
    pub u_names: Vec<String>,
    pub y_names: Vec<String>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(
        dt: f64,
        u_names: Vec<String>,
        y_names: Vec<String>,
        u: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
    ) -> Result<TimeSeries> {
        let s = TimeSeries {
            dt,
            u_names,
            y_names,
            u,
            y,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Data("series needs a positive timestep".into()));
        }
        if self.u.len() != self.y.len() {
            return Err(Error::Data(format!(
                "series has {} input rows but {} output rows",
                self.u.len(),
                self.y.len()
            )));
        }
        for (rows, names, kind) in [
            (&self.u, &self.u_names, "input"),
            (&self.y, &self.y_names, "output"),
        ] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != names.len() {
                    return Err(Error::Data(format!(
                        "{kind} row {i} has {} values, expected {}",
                        row.len(),
                        names.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("{kind} row {i} has a non-finite value")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u_dim(&self) -> usize {
        self.u_names.len()
    }

    pub fn y_dim(&self) -> usize {
        self.y_names.len()
    }
}

/// Sidecar description of a CSV dataset: the timestep, which columns are
/// inputs and which are outputs (anything else is auxiliary and ignored),
/// and optional per-column units for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dt: f64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub units: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Load a header-named CSV with the column roles declared in `manifest`.
/// Cell errors name the file line and column.
pub fn load_csv(path: &Path, manifest: &Manifest) -> Result<TimeSeries> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                Error::Data(format!(
                    "column '{name}' missing from {} (header: {})",
                    path.display(),
                    headers.iter().collect::<Vec<_>>().join(", ")
                ))
            })
    };
    let u_idx: Vec<usize> = manifest
        .inputs
        .iter()
        .map(|n| index_of(n))
        .collect::<Result<_>>()?;
    let y_idx: Vec<usize> = manifest
        .outputs
        .iter()
        .map(|n| index_of(n))
        .collect::<Result<_>>()?;

    let mut u = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // +2: one for the header line, one for 1-based numbering.
        let line = i + 2;
        let record = record.map_err(|e| Error::Csv {
            row: line,
            col: "-".into(),
            msg: e.to_string(),
        })?;
        let parse = |idx: usize, name: &str| -> Result<f64> {
            let cell = record.get(idx).ok_or_else(|| Error::Csv {
                row: line,
                col: name.to_string(),
                msg: "row is too short".into(),
            })?;
            let v: f64 = cell.trim().parse().map_err(|_| Error::Csv {
                row: line,
                col: name.to_string(),
                msg: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    row: line,
                    col: name.to_string(),
                    msg: format!("'{cell}' is not finite"),
                });
            }
            Ok(v)
        };
        let mut u_row = Vec::with_capacity(u_idx.len());
        for (idx, name) in u_idx.iter().zip(&manifest.inputs) {
            u_row.push(parse(*idx, name)?);
        }
        let mut y_row = Vec::with_capacity(y_idx.len());
        for (idx, name) in y_idx.iter().zip(&manifest.outputs) {
            y_row.push(parse(*idx, name)?);
        }
        u.push(u_row);
        y.push(y_row);
    }
    TimeSeries::new(
        manifest.dt,
        manifest.inputs.clone(),
        manifest.outputs.clone(),
        u,
        y,
    )
}

/// Write a series as CSV (inputs first, then outputs). Values are printed
/// with shortest round-trip formatting, so a reload reproduces them exactly.
pub fn save_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    series.validate()?;
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    let header: Vec<&str> = series
        .u_names
        .iter()
        .chain(&series.y_names)
        .map(|s| s.as_str())
        .collect();
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut cell = String::new();
    for (u_row, y_row) in series.u.iter().zip(&series.y) {
        let mut record = Vec::with_capacity(u_row.len() + y_row.len());
        for v in u_row.iter().chain(y_row) {
            cell.clear();
            write!(cell, "{v}").expect("formatting a float cannot fail");
            record.push(cell.clone());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Manifest matching [`save_csv`]'s column order for a series.
pub fn manifest_for(series: &TimeSeries) -> Manifest {
    Manifest {
        dt: series.dt,
        inputs: series.u_names.clone(),
        outputs: series.y_names.clone(),
        units: BTreeMap::new(),
    }
}

// ---------------------------------------------------------------------------
// Windowing and splits
// ---------------------------------------------------------------------------

/// One training/evaluation sample: `tau + 1` initialization rows immediately
/// followed by `T` prediction rows, contiguous in the source series.
/// `block`/`start` record provenance (source block id and absolute row).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub init_u: Vec<Vec<f64>>,
    pub init_y: Vec<Vec<f64>>,
    pub pred_u: Vec<Vec<f64>>,
    pub pred_y: Vec<Vec<f64>>,
    pub block: usize,
    pub start: usize,
}

impl SampleWindow {
    pub fn init_segment(&self) -> InitSegment<'_> {
        InitSegment {
            u: &self.init_u,
            y: &self.init_y,
        }
    }

    /// Number of prediction steps.
    pub fn horizon(&self) -> usize {
        self.pred_u.len()
    }

    /// Absolute source rows covered by this window.
    pub fn source_rows(&self) -> Range<usize> {
        self.start..self.start + self.init_u.len() + self.pred_u.len()
    }
}

fn window_rows<R: Clone>(
    rows_u: &[R],
    rows_y: &[R],
    range: Range<usize>,
    block: usize,
    tau: usize,
    t: usize,
    stride: usize,
    out: &mut Vec<(Vec<R>, Vec<R>, Vec<R>, Vec<R>, usize, usize)>,
) {
    let total = tau + 1 + t;
    let n = range.len();
    if n < total {
        return;
    }
    let mut start = range.start;
    while start + total <= range.end {
        let split = start + tau + 1;
        out.push((
            rows_u[start..split].to_vec(),
            rows_y[start..split].to_vec(),
            rows_u[split..start + total].to_vec(),
            rows_y[split..start + total].to_vec(),
            block,
            start,
        ));
        start += stride;
    }
}

fn check_window_args(tau: usize, t: usize, stride: usize) -> Result<()> {
    if tau < 1 || t < 1 || stride < 1 {
        return Err(Error::Config(
            "windowing needs history length, horizon and stride all >= 1".into(),
        ));
    }
    Ok(())
}

/// Maximal set of windows of length `tau + 1 + t` stepping by `stride`;
/// the count is `floor((N - (tau+1+t)) / stride) + 1`.
pub fn window(series: &TimeSeries, tau: usize, t: usize, stride: usize) -> Result<Vec<SampleWindow>> {
    check_window_args(tau, t, stride)?;
    let total = tau + 1 + t;
    if series.len() < total {
        return Err(Error::Data(format!(
            "series of {} rows is shorter than one window ({} rows)",
            series.len(),
            total
        )));
    }
    let mut raw = Vec::new();
    window_rows(
        &series.u,
        &series.y,
        0..series.len(),
        0,
        tau,
        t,
        stride,
        &mut raw,
    );
    Ok(raw
        .into_iter()
        .map(|(init_u, init_y, pred_u, pred_y, block, start)| SampleWindow {
            init_u,
            init_y,
            pred_u,
            pred_y,
            block,
            start,
        })
        .collect())
}

/// How to partition a series: fractions per split, the number of contiguous
/// source blocks, and the shuffle seed. Blocks — not windows — are assigned
/// to splits, so no test window ever shares source rows with a train window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub blocks: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> SplitSpec {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            blocks: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    Train,
    Val,
    Test,
}

fn block_ranges(n: usize, blocks: usize) -> Vec<Range<usize>> {
    let base = n / blocks;
    let rem = n % blocks;
    let mut out = Vec::with_capacity(blocks);
    let mut at = 0;
    for b in 0..blocks {
        let len = base + usize::from(b < rem);
        out.push(at..at + len);
        at += len;
    }
    out
}

/// Assign each block to a split: largest-remainder apportionment of the
/// fractions over the block count, then a seeded shuffle of block ids.
fn assign_blocks(spec: &SplitSpec, blocks: usize) -> Result<Vec<Part>> {
    let fracs = [spec.train, spec.val, spec.test];
    if fracs.iter().any(|f| *f < 0.0) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(
            "split fractions must be nonnegative and sum to 1".into(),
        ));
    }
    if blocks == 0 {
        return Err(Error::Config("split needs at least one block".into()));
    }
    let quotas: Vec<f64> = fracs.iter().map(|f| f * blocks as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = blocks - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|a, b| {
        let ra = quotas[*a] - counts[*a] as f64;
        let rb = quotas[*b] - counts[*b] as f64;
        rb.partial_cmp(&ra).expect("finite remainders")
    });
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    // Every requested split gets at least one block, taken from the largest.
    for i in 0..3 {
        if fracs[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3)
                .max_by_key(|j| counts[*j])
                .expect("three candidates");
            if counts[donor] <= 1 {
                return Err(Error::Config(format!(
                    "{} blocks cannot cover all requested splits",
                    blocks
                )));
            }
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    let mut ids: Vec<usize> = (0..blocks).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ids.shuffle(&mut rng);
    let mut parts = vec![Part::Train; blocks];
    for (rank, id) in ids.into_iter().enumerate() {
        parts[id] = if rank < counts[0] {
            Part::Train
        } else if rank < counts[0] + counts[1] {
            Part::Val
        } else {
            Part::Test
        };
    }
    Ok(parts)
}

fn check_partitions<W>(spec: &SplitSpec, names: [&str; 3], parts: [&Vec<W>; 3]) -> Result<()> {
    for ((frac, name), windows) in [spec.train, spec.val, spec.test]
        .iter()
        .zip(names)
        .zip(parts)
    {
        if *frac > 0.0 && windows.is_empty() {
            return Err(Error::Data(format!(
                "the {name} split received no windows; use more data, fewer blocks or a larger fraction"
            )));
        }
    }
    Ok(())
}

/// Windows partitioned into train/validation/test sets.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Split the series into contiguous blocks, assign whole blocks to splits
/// (seeded), then window each block independently — windows never straddle
/// block boundaries, so splits never share source rows.
pub fn split_windows(
    series: &TimeSeries,
    tau: usize,
    t: usize,
    stride: usize,
    spec: &SplitSpec,
) -> Result<DatasetSplit> {
    check_window_args(tau, t, stride)?;
    let parts = assign_blocks(spec, spec.blocks)?;
    let mut out = DatasetSplit::default();
    for (block, range) in block_ranges(series.len(), spec.blocks).into_iter().enumerate() {
        let mut raw = Vec::new();
        window_rows(&series.u, &series.y, range, block, tau, t, stride, &mut raw);
        let dest = match parts[block] {
            Part::Train => &mut out.train,
            Part::Val => &mut out.val,
            Part::Test => &mut out.test,
        };
        dest.extend(raw.into_iter().map(
            |(init_u, init_y, pred_u, pred_y, block, start)| SampleWindow {
                init_u,
                init_y,
                pred_u,
                pred_y,
                block,
                start,
            },
        ));
    }
    check_partitions(
        spec,
        ["train", "validation", "test"],
        [&out.train, &out.val, &out.test],
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-channel maximum absolute value over a row matrix.
pub fn channel_maxima(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut maxima = vec![0.0f64; dim];
    for row in rows {
        for (m, v) in maxima.iter_mut().zip(row) {
            *m = m.max(v.abs());
        }
    }
    maxima
}

/// Per-channel scaling to maxima: training sees `value / scale`. Channels
/// that are identically zero keep scale 1 so normalization stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub u_scale: Vec<f64>,
    pub y_scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(series: &TimeSeries) -> Normalizer {
        let floor = |m: Vec<f64>| -> Vec<f64> {
            m.into_iter()
                .map(|v| if v > 1e-12 { v } else { 1.0 })
                .collect()
        };
        Normalizer {
            u_scale: floor(channel_maxima(&series.u)),
            y_scale: floor(channel_maxima(&series.y)),
        }
    }

    pub fn identity(u_dim: usize, y_dim: usize) -> Normalizer {
        Normalizer {
            u_scale: vec![1.0; u_dim],
            y_scale: vec![1.0; y_dim],
        }
    }

    pub fn apply(&self, series: &TimeSeries) -> Result<TimeSeries> {
        if self.u_scale.len() != series.u_dim() || self.y_scale.len() != series.y_dim() {
            return Err(Error::Dim {
                op: "Normalizer",
                expected: format!("{}x{} channels", self.u_scale.len(), self.y_scale.len()),
                got: format!("{}x{}", series.u_dim(), series.y_dim()),
            });
        }
        let scale_rows = |rows: &[Vec<f64>], s: &[f64]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| r.iter().zip(s).map(|(v, w)| v / w).collect())
                .collect()
        };
        TimeSeries::new(
            series.dt,
            series.u_names.clone(),
            series.y_names.clone(),
            scale_rows(&series.u, &self.u_scale),
            scale_rows(&series.y, &self.y_scale),
        )
    }

    /// Map normalized output rows back to physical units.
    pub fn denorm_y(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().zip(&self.y_scale).map(|(v, s)| v * s).collect())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Quadrotor layout and task extraction
// ---------------------------------------------------------------------------

/// Canonical input column names of a quadrotor series.
pub const QUAD_INPUT_NAMES: [&str; 4] = ["m1", "m2", "m3", "m4"];
/// Canonical output column names: attitude, body rates, position, velocity.
pub const QUAD_OUTPUT_NAMES: [&str; 12] = [
    "phi", "theta", "psi", "p", "q", "r", "x", "y", "z", "vx", "vy", "vz",
];

/// Interpret a 4-input/12-output series in canonical order as records.
pub fn quad_records(series: &TimeSeries) -> Result<Vec<QuadRecord>> {
    if series.u_dim() != 4 || series.y_dim() != 12 {
        return Err(Error::Data(format!(
            "quadrotor layout needs 4 input and 12 output channels, got {}x{}",
            series.u_dim(),
            series.y_dim()
        )));
    }
    Ok(series
        .u
        .iter()
        .zip(&series.y)
        .map(|(u, y)| QuadRecord {
            motors: [u[0], u[1], u[2], u[3]],
            eta: [y[0], y[1], y[2]],
            omega: [y[3], y[4], y[5]],
            xi: [y[6], y[7], y[8]],
            xi_dot: [y[9], y[10], y[11]],
        })
        .collect())
}

/// Prediction tasks carved out of the quadrotor layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Motors -> body rates.
    BodyRate,
    /// Motors -> velocity; with `teacher_forced`, measured body rates join
    /// the inputs (predictions substitute for them at inference time).
    Velocity,
    /// Motors -> Euler angle rates `W(eta) omega`.
    EulerRates,
    /// The grey-box model; windows come from [`split_hybrid_windows`].
    Hybrid,
    /// Use the series' own input/output channels unchanged.
    Generic,
}

/// Build the input/output series for a task from a canonical quadrotor
/// series. `teacher_forced` only affects [`Task::Velocity`].
pub fn extract_task(series: &TimeSeries, task: Task, teacher_forced: bool) -> Result<TimeSeries> {
    if task == Task::Generic {
        return Ok(series.clone());
    }
    if task == Task::Hybrid {
        return Err(Error::Config(
            "the hybrid task uses quadrotor records, not an extracted series".into(),
        ));
    }
    let records = quad_records(series)?;
    let names = |xs: &[&str]| -> Vec<String> { xs.iter().map(|s| s.to_string()).collect() };
    let motors = |r: &QuadRecord| r.motors.to_vec();
    match task {
        Task::BodyRate => TimeSeries::new(
            series.dt,
            names(&QUAD_INPUT_NAMES),
            names(&["p", "q", "r"]),
            records.iter().map(motors).collect(),
            records.iter().map(|r| r.omega.to_vec()).collect(),
        ),
        Task::Velocity => {
            let (u_names, u) = if teacher_forced {
                let mut n = names(&QUAD_INPUT_NAMES);
                n.extend(names(&["p", "q", "r"]));
                let rows = records
                    .iter()
                    .map(|r| {
                        let mut row = r.motors.to_vec();
                        row.extend_from_slice(&r.omega);
                        row
                    })
                    .collect();
                (n, rows)
            } else {
                (names(&QUAD_INPUT_NAMES), records.iter().map(motors).collect())
            };
            TimeSeries::new(
                series.dt,
                u_names,
                names(&["vx", "vy", "vz"]),
                u,
                records.iter().map(|r| r.xi_dot.to_vec()).collect(),
            )
        }
        Task::EulerRates => {
            let mut y = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                if !(r.eta[1].abs() < std::f64::consts::FRAC_PI_2) {
                    return Err(Error::Data(format!(
                        "row {i}: pitch {:.4} rad is outside the Euler-rate transform's admissible range",
                        r.eta[1]
                    )));
                }
                y.push(euler_rates(r.eta, r.omega).to_vec());
            }
            TimeSeries::new(
                series.dt,
                names(&QUAD_INPUT_NAMES),
                names(&["phi_dot", "theta_dot", "psi_dot"]),
                records.iter().map(motors).collect(),
                y,
            )
        }
        Task::Hybrid | Task::Generic => unreachable!("handled above"),
    }
}

/// Hybrid windows partitioned into train/validation/test sets.
#[derive(Debug, Clone, Default)]
pub struct HybridSplit {
    pub train: Vec<HybridWindow>,
    pub val: Vec<HybridWindow>,
    pub test: Vec<HybridWindow>,
}

/// Window quadrotor records (same geometry as [`window`]).
pub fn hybrid_windows(
    records: &[QuadRecord],
    tau: usize,
    t: usize,
    stride: usize,
) -> Result<Vec<HybridWindow>> {
    check_window_args(tau, t, stride)?;
    let total = tau + 1 + t;
    if records.len() < total {
        return Err(Error::Data(format!(
            "{} records are fewer than one window ({total})",
            records.len()
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + total <= records.len() {
        out.push(HybridWindow {
            hist: records[start..start + tau + 1].to_vec(),
            pred: records[start + tau + 1..start + total].to_vec(),
        });
        start += stride;
    }
    Ok(out)
}

/// Block-wise split of quadrotor records into hybrid windows, with the same
/// no-straddling guarantee as [`split_windows`].
pub fn split_hybrid_windows(
    records: &[QuadRecord],
    tau: usize,
    t: usize,
    stride: usize,
    spec: &SplitSpec,
) -> Result<HybridSplit> {
    check_window_args(tau, t, stride)?;
    let parts = assign_blocks(spec, spec.blocks)?;
    let total = tau + 1 + t;
    let mut out = HybridSplit::default();
    for (block, range) in block_ranges(records.len(), spec.blocks).into_iter().enumerate() {
        let dest = match parts[block] {
            Part::Train => &mut out.train,
            Part::Val => &mut out.val,
            Part::Test => &mut out.test,
        };
        let mut start = range.start;
        while start + total <= range.end {
            dest.push(HybridWindow {
                hist: records[start..start + tau + 1].to_vec(),
                pred: records[start + tau + 1..start + total].to_vec(),
            });
            start += stride;
        }
    }
    check_partitions(
        spec,
        ["train", "validation", "test"],
        [&out.train, &out.val, &out.test],
    )?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic systems
// ---------------------------------------------------------------------------

/// Piecewise-constant random steps smoothed by a first-order filter — a
/// persistently exciting input for identification experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    /// Steps each random target is held.
    pub hold: usize,
    /// Targets are uniform in `[-amplitude, amplitude]`.
    pub amplitude: f64,
    /// First-order smoothing factor in (0, 1]: `u += smooth * (target - u)`.
    pub smooth: f64,
}

impl Default for Excitation {
    fn default() -> Excitation {
        Excitation {
            hold: 20,
            amplitude: 1.0,
            smooth: 0.3,
        }
    }
}

fn excitation_sequence(n: usize, exc: &Excitation, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let hold = exc.hold.max(1);
    let mut u = 0.0;
    let mut target = 0.0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k % hold == 0 {
            target = rng.gen_range(-exc.amplitude..=exc.amplitude);
        }
        u += exc.smooth.clamp(0.0, 1.0) * (target - u);
        out.push(u);
    }
    out
}

/// Controller and mixing constants of the simulated quadrotor plant. The
/// plant integrates the same rigid-body model *with* `mm.drag` set — that
/// drag is the "unmodeled dynamics" a grey-box model's correction network
/// has to learn, since the nominal model inside the grey box omits it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimQuadParams {
    pub mm: MmParams,
    /// Arm length (m) for the plus-configuration mixer.
    pub arm: f64,
    /// Thrust per unit motor command (N).
    pub k_f: f64,
    /// Yaw torque per unit motor command (N*m).
    pub k_t: f64,
    /// Attitude PD gains per axis (torque = kp*(ref - eta) - kd*omega).
    pub att_kp: [f64; 3],
    pub att_kd: [f64; 3],
    /// Altitude PD gains (commanded vertical acceleration).
    pub alt_kp: f64,
    pub alt_kd: f64,
    /// Steps each random attitude setpoint is held.
    pub setpoint_hold: usize,
    /// Roll/pitch setpoint amplitude (rad); yaw uses twice this.
    pub setpoint_amplitude: f64,
    /// Motor commands clamp to `[0, motor_max]`.
    pub motor_max: f64,
}

impl Default for SimQuadParams {
    fn default() -> SimQuadParams {
        SimQuadParams {
            mm: MmParams {
                drag: Some([0.25, 0.25, 0.35]),
                ..MmParams::sim_default()
            },
            arm: 0.17,
            k_f: 2.7,
            k_t: 0.3,
            att_kp: [0.16, 0.16, 0.1],
            att_kd: [0.05, 0.05, 0.04],
            alt_kp: 2.0,
            alt_kd: 2.5,
            setpoint_hold: 50,
            setpoint_amplitude: 0.25,
            motor_max: 1.2,
        }
    }
}

/// The synthetic systems available as verification oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthSystem {
    /// `y_k = a[0] y_{k-1} + a[1] y_{k-2} + b[0] u_k + b[1] u_{k-1}`.
    Linear { a: [f64; 2], b: [f64; 2] },
    /// Forced Van der Pol oscillator `x.. = mu (1 - x^2) x. - x + u`,
    /// integrated with classical Runge-Kutta; the output is `x`.
    VanDerPol { mu: f64 },
    /// Closed-loop simulated quadrotor; emits the 16-channel layout.
    SimQuad(SimQuadParams),
}

/// A reproducible synthetic dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub system: SynthSystem,
    pub length: usize,
    /// Sampling interval; for the quadrotor it overrides `mm.dt`.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub process_noise: f64,
    #[serde(default)]
    pub measurement_noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub excitation: Excitation,
}

fn default_dt() -> f64 {
    1.0
}

/// Simulate the configured system under its excitation policy and record
/// (noisy) measurements; identical configs produce identical series.
pub fn synth_generate(cfg: &SynthConfig) -> Result<TimeSeries> {
    if cfg.length == 0 {
        return Err(Error::Config("synthetic series needs length >= 1".into()));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::Config("synthetic series needs dt > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match &cfg.system {
        SynthSystem::Linear { a, b } => generate_linear(cfg, *a, *b, &mut rng),
        SynthSystem::VanDerPol { mu } => generate_vdp(cfg, *mu, &mut rng),
        SynthSystem::SimQuad(params) => generate_quad(cfg, params, &mut rng),
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn generate_linear(
    cfg: &SynthConfig,
    a: [f64; 2],
    b: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Result<TimeSeries> {
    let u = excitation_sequence(cfg.length, &cfg.excitation, rng);
    let mut y = Vec::with_capacity(cfg.length);
    let (mut y1, mut y2, mut u1) = (0.0, 0.0, 0.0);
    for &uk in &u {
        let mut yk = a[0] * y1 + a[1] * y2 + b[0] * uk + b[1] * u1;
        yk += cfg.process_noise * gauss(rng);
        y2 = y1;
        y1 = yk;
        u1 = uk;
        y.push(yk + cfg.measurement_noise * gauss(rng));
    }
    TimeSeries::new(
        cfg.dt,
        vec!["u".into()],
        vec!["y".into()],
        u.into_iter().map(|v| vec![v]).collect(),
        y.into_iter().map(|v| vec![v]).collect(),
    )
}

fn generate_vdp(cfg: &SynthConfig, mu: f64, rng: &mut ChaCha8Rng) -> Result<TimeSeries> {
    let u = excitation_sequence(cfg.length, &cfg.excitation, rng);
    let f = |x: f64, v: f64, uk: f64| -> (f64, f64) { (v, mu * (1.0 - x * x) * v - x + uk) };
    let (mut x, mut v) = (1.0, 0.0);
    let dt = cfg.dt;
    let mut y = Vec::with_capacity(cfg.length);
    for &uk in &u {
        let (k1x, k1v) = f(x, v, uk);
        let (k2x, k2v) = f(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v, uk);
        let (k3x, k3v) = f(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v, uk);
        let (k4x, k4v) = f(x + dt * k3x, v + dt * k3v, uk);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        v += cfg.process_noise * dt.sqrt() * gauss(rng);
        y.push(x + cfg.measurement_noise * gauss(rng));
    }
    TimeSeries::new(
        cfg.dt,
        vec!["u".into()],
        vec!["x".into()],
        u.into_iter().map(|v| vec![v]).collect(),
        y.into_iter().map(|v| vec![v]).collect(),
    )
}

/// Plus-configuration mixer: motor commands -> (torques, thrust).
fn mix_forward(p: &SimQuadParams, m: [f64; 4]) -> ([f64; 3], f64) {
    let torque = [
        p.arm * p.k_f * (m[3] - m[1]),
        p.arm * p.k_f * (m[0] - m[2]),
        p.k_t * (m[0] - m[1] + m[2] - m[3]),
    ];
    let thrust = p.k_f * (m[0] + m[1] + m[2] + m[3]);
    (torque, thrust)
}

/// Inverse mixer: desired torques/thrust -> clamped motor commands.
fn mix_inverse(p: &SimQuadParams, torque: [f64; 3], thrust: f64) -> [f64; 4] {
    let base = thrust / (4.0 * p.k_f);
    let tx = torque[0] / (2.0 * p.arm * p.k_f);
    let ty = torque[1] / (2.0 * p.arm * p.k_f);
    let tz = torque[2] / (4.0 * p.k_t);
    let clamp = |v: f64| v.clamp(0.0, p.motor_max);
    [
        clamp(base + ty + tz),
        clamp(base - tx - tz),
        clamp(base - ty + tz),
        clamp(base + tx - tz),
    ]
}

fn generate_quad(
    cfg: &SynthConfig,
    params: &SimQuadParams,
    rng: &mut ChaCha8Rng,
) -> Result<TimeSeries> {
    let mut plant = params.mm;
    plant.dt = cfg.dt;
    plant.validate()?;
    let mut s = QuadState::zero();
    let mut refs = [0.0f64; 3];
    let hold = params.setpoint_hold.max(1);
    let amp = params.setpoint_amplitude;
    let mut u = Vec::with_capacity(cfg.length);
    let mut y = Vec::with_capacity(cfg.length);
    for k in 0..cfg.length {
        if k % hold == 0 {
            refs = [
                rng.gen_range(-amp..=amp),
                rng.gen_range(-amp..=amp),
                rng.gen_range(-2.0 * amp..=2.0 * amp),
            ];
        }
        // Attitude PD + altitude hold, then through the mixer and back so the
        // applied forces correspond to realizable (clamped) motor commands.
        let torque_cmd = [
            params.att_kp[0] * (refs[0] - s.eta[0]) - params.att_kd[0] * s.omega[0],
            params.att_kp[1] * (refs[1] - s.eta[1]) - params.att_kd[1] * s.omega[1],
            params.att_kp[2] * (refs[2] - s.eta[2]) - params.att_kd[2] * s.omega[2],
        ];
        let a_cmd = params.alt_kp * (0.0 - s.xi[2]) - params.alt_kd * s.xi_dot[2];
        let tilt = (s.eta[0].cos() * s.eta[1].cos()).max(0.5);
        let thrust_cmd = (plant.mass * (plant.gravity + a_cmd) / tilt).max(0.0);
        let motors = mix_inverse(params, torque_cmd, thrust_cmd);
        let (mut torque, mut thrust) = mix_forward(params, motors);
        for ti in &mut torque {
            *ti += cfg.process_noise * 0.01 * gauss(rng);
        }
        thrust += cfg.process_noise * gauss(rng);
        s = mm_step(&plant, &s, torque, thrust, k + 1)?;
        let mut row = Vec::with_capacity(12);
        row.extend_from_slice(&s.eta);
        row.extend_from_slice(&s.omega);
        row.extend_from_slice(&s.xi);
        row.extend_from_slice(&s.xi_dot);
        for v in &mut row {
            *v += cfg.measurement_noise * gauss(rng);
        }
        u.push(motors.to_vec());
        y.push(row);
    }
    TimeSeries::new(
        cfg.dt,
        QUAD_INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        QUAD_OUTPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        u,
        y,
    )
}
