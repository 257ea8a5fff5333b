//! Sample preparation: power resampling, min-max scaling, the five-feature
//! sample table, train/test splits, sequence windows and batching.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid_io::{PowerEntry, PowerSeries, TargetSet};
use crate::interpolate::InterpolatedSeries;
use crate::neural::{BatchSource, SeqBatch};

pub const N_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["t", "x", "y", "wind", "pressure"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("power series is empty")]
    EmptySeries,
    #[error("irregular cadence for plant {plant:?}: {msg}")]
    IrregularCadence { plant: String, msg: String },
    #[error("cannot fit a scaler on empty or non-finite data")]
    BadScalerInput,
    #[error("time axes differ: {0}")]
    TimeAxisMismatch(String),
    #[error("no power series for target {0:?}")]
    MissingTarget(String),
    #[error("test fraction {0} outside (0, 1)")]
    FracOutOfRange(f64),
    #[error("stream of target {target} has {len} rows, need more than {seq_len}")]
    StreamTooShort { target: usize, len: usize, seq_len: usize },
    #[error("malformed {what}: {msg}")]
    Parse { what: &'static str, msg: String },
}

/// Averages each plant's series over non-overlapping windows of
/// `interval_h` hours, labelled by window start. A trailing partial window
/// is dropped.
pub fn resample_power(series: &PowerSeries, interval_h: f64) -> Result<PowerSeries, DatasetError> {
    if series.is_empty() {
        return Err(DatasetError::EmptySeries);
    }
    let mut out = Vec::new();
    for plant in series.plants() {
        let rows = series.plant(&plant);
        let irregular = |msg: String| DatasetError::IrregularCadence {
            plant: plant.clone(),
            msg,
        };
        if rows.len() < 2 {
            return Err(irregular("cannot infer cadence from a single sample".into()));
        }
        let step = rows[1].timestamp - rows[0].timestamp;
        let tol = 1e-9 * step.abs().max(1.0);
        if rows
            .windows(2)
            .any(|w| ((w[1].timestamp - w[0].timestamp) - step).abs() > tol)
        {
            return Err(irregular("sample spacing is not constant".into()));
        }
        let ratio = interval_h / step;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 {
            return Err(irregular(format!(
                "interval {interval_h} h is not a multiple of the {step} h cadence"
            )));
        }
        let k = k as usize;
        for w in rows.chunks_exact(k) {
            let mean = w.iter().map(|e| e.power_mw).sum::<f64>() / k as f64;
            out.push(PowerEntry {
                timestamp: w[0].timestamp,
                plant_id: plant.clone(),
                power_mw: mean,
            });
        }
    }
    Ok(PowerSeries { entries: out })
}

/// Affine map of `[min, max]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn fit(values: &[f64]) -> Result<Self, DatasetError> {
        Self::fit_iter(values.iter().copied())
    }

    pub fn fit_iter(values: impl IntoIterator<Item = f64>) -> Result<Self, DatasetError> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut n = 0usize;
        for v in values {
            if !v.is_finite() {
                return Err(DatasetError::BadScalerInput);
            }
            min = min.min(v);
            max = max.max(v);
            n += 1;
        }
        if n == 0 {
            return Err(DatasetError::BadScalerInput);
        }
        Ok(Self { min, max })
    }

    /// A constant column has no range; it scales to zero.
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            2.0 * (v - self.min) / (self.max - self.min) - 1.0
        }
    }

    #[inline]
    pub fn invert(&self, s: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            (s + 1.0) * (self.max - self.min) / 2.0 + self.min
        }
    }
}

/// One scaler per feature column plus one for the power target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScalers {
    pub features: [Scaler; N_FEATURES],
    pub target: Scaler,
}

impl FeatureScalers {
    /// Fits on the given rows of an unscaled table.
    pub fn fit(table: &SampleTable, rows: &[usize]) -> Result<Self, DatasetError> {
        let mut features = [Scaler { min: 0.0, max: 0.0 }; N_FEATURES];
        for (c, s) in features.iter_mut().enumerate() {
            *s = Scaler::fit_iter(rows.iter().map(|&r| table.features[r][c]))?;
        }
        let target = Scaler::fit_iter(rows.iter().map(|&r| table.targets[r]))?;
        Ok(Self { features, target })
    }

    pub fn apply_table(&self, table: &SampleTable) -> SampleTable {
        SampleTable {
            features: table
                .features
                .iter()
                .map(|row| {
                    let mut out = [0.0; N_FEATURES];
                    for c in 0..N_FEATURES {
                        out[c] = self.features[c].apply(row[c]);
                    }
                    out
                })
                .collect(),
            targets: table.targets.iter().map(|&y| self.target.apply(y)).collect(),
            provenance: table.provenance.clone(),
        }
    }

    /// `feature.min=` / `feature.max=` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let names = FEATURE_NAMES.iter().chain(std::iter::once(&"power"));
        let scalers = self.features.iter().chain(std::iter::once(&self.target));
        for (name, sc) in names.zip(scalers) {
            let _ = writeln!(s, "{name}.min={}", sc.min);
            let _ = writeln!(s, "{name}.max={}", sc.max);
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self, DatasetError> {
        let mut map = HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| DatasetError::Parse {
                what: "scalers",
                msg: format!("line without `=`: {line:?}"),
            })?;
            let v: f64 = v.trim().parse().map_err(|_| DatasetError::Parse {
                what: "scalers",
                msg: format!("bad number in {line:?}"),
            })?;
            map.insert(k.trim().to_string(), v);
        }
        let get = |name: &str| -> Result<Scaler, DatasetError> {
            let lookup = |suffix: &str| {
                map.get(&format!("{name}.{suffix}")).copied().ok_or_else(|| DatasetError::Parse {
                    what: "scalers",
                    msg: format!("missing {name}.{suffix}"),
                })
            };
            Ok(Scaler {
                min: lookup("min")?,
                max: lookup("max")?,
            })
        };
        let mut features = [Scaler { min: 0.0, max: 0.0 }; N_FEATURES];
        for (s, name) in features.iter_mut().zip(FEATURE_NAMES) {
            *s = get(name)?;
        }
        Ok(Self {
            features,
            target: get("power")?,
        })
    }
}

/// Flat regression rows `(t, x, y, wind, pressure) -> power`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleTable {
    pub features: Vec<[f64; N_FEATURES]>,
    pub targets: Vec<f64>,
    /// `(time_index, target_index)` of each row.
    pub provenance: Vec<(usize, usize)>,
}

impl SampleTable {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> SampleTable {
        SampleTable {
            features: rows.iter().map(|&r| self.features[r]).collect(),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            provenance: rows.iter().map(|&r| self.provenance[r]).collect(),
        }
    }

    /// Row indices grouped by target, streams in order of first appearance,
    /// rows within a stream in table order.
    pub fn streams(&self) -> Vec<(usize, Vec<usize>)> {
        let mut order: Vec<usize> = Vec::new();
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (r, &(_, p)) in self.provenance.iter().enumerate() {
            groups
                .entry(p)
                .or_insert_with(|| {
                    order.push(p);
                    Vec::new()
                })
                .push(r);
        }
        order
            .into_iter()
            .map(|p| {
                let rows = groups.remove(&p).unwrap_or_default();
                (p, rows)
            })
            .collect()
    }

    /// CSV `t,x,y,wind,pressure,power,time_index,target_index`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 96);
        s.push_str("t,x,y,wind,pressure,power,time_index,target_index\n");
        for ((f, y), (ti, pi)) in self.features.iter().zip(&self.targets).zip(&self.provenance) {
            let _ = writeln!(s, "{},{},{},{},{},{},{},{}", f[0], f[1], f[2], f[3], f[4], y, ti, pi);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, DatasetError> {
        let bad = |msg: String| DatasetError::Parse {
            what: "sample table",
            msg,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        if header.trim() != "t,x,y,wind,pressure,power,time_index,target_index" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut table = SampleTable::default();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 8 {
                return Err(bad(format!("row {} has {} fields", i + 2, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {}: {s:?}", i + 2)));
            let idx = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("row {}: {s:?}", i + 2)));
            table.features.push([num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?]);
            table.targets.push(num(f[5])?);
            table.provenance.push((idx(f[6])?, idx(f[7])?));
        }
        Ok(table)
    }
}

impl BatchSource<f64> for SampleTable {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn gather(&self, idx: &[usize]) -> SeqBatch<f64> {
        let mut data = Vec::with_capacity(idx.len() * N_FEATURES);
        let mut targets = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.features[i]);
            targets.push(self.targets[i]);
        }
        SeqBatch::new(idx.len(), 1, N_FEATURES, data, targets)
    }
}

/// Builds the unscaled table: rows ordered by (target, time), with
/// `x = lon`, `y = lat` and `t` in epoch-hours.
///
/// `power` must already be on the fields' time axis (see
/// [`resample_power`]).
pub fn assemble_raw(
    wind: &InterpolatedSeries,
    pressure: &InterpolatedSeries,
    power: &PowerSeries,
    targets: &TargetSet,
) -> Result<SampleTable, DatasetError> {
    if wind.times != pressure.times {
        return Err(DatasetError::TimeAxisMismatch(
            "wind and pressure series".into(),
        ));
    }
    let ids = targets.ids();
    for (name, s) in [("wind", wind), ("pressure", pressure)] {
        if s.target_ids != ids {
            return Err(DatasetError::TimeAxisMismatch(format!(
                "{name} series targets differ from the target set"
            )));
        }
    }
    let nt = wind.times.len();
    let mut by_plant: HashMap<&str, Vec<&PowerEntry>> = HashMap::new();
    for e in &power.entries {
        by_plant.entry(e.plant_id.as_str()).or_default().push(e);
    }
    let mut table = SampleTable::default();
    table.features.reserve(nt * ids.len());
    for (p, tp) in targets.points.iter().enumerate() {
        let rows = by_plant
            .get(tp.id.as_str())
            .ok_or_else(|| DatasetError::MissingTarget(tp.id.clone()))?;
        if rows.len() != nt || rows.iter().zip(&wind.times).any(|(e, &t)| e.timestamp != t) {
            return Err(DatasetError::TimeAxisMismatch(format!(
                "power of {:?} ({} rows) vs field time axis ({} steps)",
                tp.id,
                rows.len(),
                nt
            )));
        }
        for (t, e) in rows.iter().enumerate() {
            table.features.push([
                wind.times[t],
                tp.lon_deg,
                tp.lat_deg,
                wind.get(t, p),
                pressure.get(t, p),
            ]);
            table.targets.push(e.power_mw);
            table.provenance.push((t, p));
        }
    }
    Ok(table)
}

/// [`assemble_raw`] followed by scaling with `scalers`.
pub fn assemble_samples(
    wind: &InterpolatedSeries,
    pressure: &InterpolatedSeries,
    power: &PowerSeries,
    targets: &TargetSet,
    scalers: &FeatureScalers,
) -> Result<SampleTable, DatasetError> {
    Ok(scalers.apply_table(&assemble_raw(wind, pressure, power, targets)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Last rows of every target stream go to the test set.
    Chronological,
    /// Seeded uniform sample of rows.
    Random,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chronological" => Ok(Self::Chronological),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown split mode {other:?}")),
        }
    }
}

/// Sorted `(train, test)` row indices.
pub fn split_indices(
    table: &SampleTable,
    test_frac: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(DatasetError::FracOutOfRange(test_frac));
    }
    let n = table.len();
    let mut is_test = vec![false; n];
    match mode {
        SplitMode::Chronological => {
            for (_, rows) in table.streams() {
                let k = (rows.len() as f64 * test_frac).floor() as usize;
                for &r in &rows[rows.len() - k..] {
                    is_test[r] = true;
                }
            }
        }
        SplitMode::Random => {
            let k = (n as f64 * test_frac).floor() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for r in rand::seq::index::sample(&mut rng, n, k) {
                is_test[r] = true;
            }
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&r| is_test[r]);
    Ok((train, test))
}

pub fn split_train_test(
    table: &SampleTable,
    test_frac: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<(SampleTable, SampleTable), DatasetError> {
    let (train, test) = split_indices(table, test_frac, mode, seed)?;
    Ok((table.subset(&train), table.subset(&test)))
}

/// Fixed-length windows, each labelled with the row that follows it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceSet {
    pub seq_len: usize,
    /// `[B][L][5]` row-major.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    /// Provenance of each label row.
    pub label_provenance: Vec<(usize, usize)>,
}

impl SequenceSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Feature row `step` of window `k`.
    pub fn row(&self, k: usize, step: usize) -> &[f64] {
        let o = (k * self.seq_len + step) * N_FEATURES;
        &self.inputs[o..o + N_FEATURES]
    }
}

impl BatchSource<f64> for SequenceSet {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn gather(&self, idx: &[usize]) -> SeqBatch<f64> {
        let w = self.seq_len * N_FEATURES;
        let mut data = Vec::with_capacity(idx.len() * w);
        let mut targets = Vec::with_capacity(idx.len());
        for &k in idx {
            data.extend_from_slice(&self.inputs[k * w..(k + 1) * w]);
            targets.push(self.targets[k]);
        }
        SeqBatch::new(idx.len(), self.seq_len, N_FEATURES, data, targets)
    }
}

/// Cuts every target stream of length `n` into `n - seq_len` windows; window
/// `k` covers rows `k..k + seq_len` and is labelled with row `k + seq_len`.
pub fn make_sequences(table: &SampleTable, seq_len: usize) -> Result<SequenceSet, DatasetError> {
    let mut set = SequenceSet {
        seq_len,
        ..Default::default()
    };
    for (target, rows) in table.streams() {
        if rows.len() <= seq_len || seq_len == 0 {
            return Err(DatasetError::StreamTooShort {
                target,
                len: rows.len(),
                seq_len,
            });
        }
        for k in 0..rows.len() - seq_len {
            for &r in &rows[k..k + seq_len] {
                set.inputs.extend_from_slice(&table.features[r]);
            }
            let label = rows[k + seq_len];
            set.targets.push(table.targets[label]);
            set.label_provenance.push(table.provenance[label]);
        }
    }
    Ok(set)
}

impl SequenceSet {
    /// Windows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> SequenceSet {
        let w = self.seq_len * N_FEATURES;
        let mut out = SequenceSet {
            seq_len: self.seq_len,
            ..Default::default()
        };
        for &k in idx {
            out.inputs.extend_from_slice(&self.inputs[k * w..(k + 1) * w]);
            out.targets.push(self.targets[k]);
            out.label_provenance.push(self.label_provenance[k]);
        }
        out
    }
}

/// Windows of `table` split into `(train, test)` by the set their label row
/// belongs to. Input rows of a test window may come from the training rows.
pub fn split_sequences(
    table: &SampleTable,
    seq_len: usize,
    test_rows: &[usize],
) -> Result<(SequenceSet, SequenceSet), DatasetError> {
    let all = make_sequences(table, seq_len)?;
    let mut is_test = vec![false; table.len()];
    for &r in test_rows {
        is_test[r] = true;
    }
    let labels = table
        .streams()
        .into_iter()
        .flat_map(|(_, rows)| rows[seq_len..].to_vec());
    let (te, tr): (Vec<usize>, Vec<usize>) = labels.enumerate().map(|(k, r)| (k, is_test[r])).fold(
        (Vec::new(), Vec::new()),
        |(mut te, mut tr), (k, t)| {
            if t {
                te.push(k)
            } else {
                tr.push(k)
            }
            (te, tr)
        },
    );
    Ok((all.subset(&tr), all.subset(&te)))
}

/// Yields index batches covering `0..n` once. With `shuffle`, the order is a
/// seeded permutation.
#[derive(Debug, Clone)]
pub struct Batches {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(b)
    }
}

pub fn batches<S: BatchSource<f64> + ?Sized>(
    set: &S,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Batches {
    batch_indices(set.len(), batch_size, shuffle, seed)
}

pub fn batch_indices(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Batches {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Batches {
        order,
        batch_size,
        pos: 0,
    }
}
