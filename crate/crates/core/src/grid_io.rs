//! On-disk formats: the binary grid bundle and the target/power CSV files.
//!
//! Grid bundle layout, all little-endian:
//!
//! | field | type |
//! |-------|------|
//! | magic `CGRD` | 4 bytes |
//! | version = 1 | u32 |
//! | pole_lat, pole_lon | f64, f64 |
//! | T, NLAT, NLON | u64 ×3 |
//! | times | f64 × T |
//! | lats | f64 × NLAT |
//! | lons | f64 × NLON |
//! | var_count | u32 |
//! | per variable: name_len, name, data | u32, UTF-8, f32 × T·NLAT·NLON |
//!
//! Variable data is `[t][lat][lon]` row-major.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use thiserror::Error;

use crate::geo::normalize_longitude;

pub const MAGIC: &[u8; 4] = b"CGRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridIoError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a grid bundle (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} axis is not strictly increasing")]
    NonMonotoneAxis(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: u64, msg: String },
    #[error("duplicate target id {0:?}")]
    DuplicateId(String),
    #[error("latitude {lat} of {id:?} outside [-90, 90]")]
    OutOfRangeLatitude { id: String, lat: f64 },
    #[error("negative power {power} for {plant:?} at line {line}")]
    NegativePower { plant: String, power: f64, line: u64 },
    #[error("timestamps of plant {0:?} are not strictly increasing")]
    NonMonotoneTimestamps(String),
}

/// One named field on the bundle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    /// `[t][lat][lon]` row-major.
    pub data: Vec<f32>,
}

/// Gridded climate fields sharing one time/lat/lon grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBundle {
    pub pole_lat_deg: f64,
    pub pole_lon_deg: f64,
    /// Epoch-hours.
    pub times: Vec<f64>,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    pub variables: Vec<Variable>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

impl GridBundle {
    /// Checks every bundle invariant.
    pub fn validate(&self) -> Result<(), GridIoError> {
        if !self.pole_lat_deg.is_finite() || !self.pole_lon_deg.is_finite() {
            return Err(GridIoError::NonFinite("pole".into()));
        }
        if !strictly_increasing(&self.times) {
            return Err(GridIoError::NonMonotoneAxis("time"));
        }
        if !strictly_increasing(&self.lats) {
            return Err(GridIoError::NonMonotoneAxis("lat"));
        }
        if !strictly_increasing(&self.lons) {
            return Err(GridIoError::NonMonotoneAxis("lon"));
        }
        let cells = self.cell_count();
        for v in &self.variables {
            if v.data.len() != cells {
                return Err(GridIoError::DimensionMismatch(format!(
                    "variable {:?} has {} values, grid has {}",
                    v.name,
                    v.data.len(),
                    cells
                )));
            }
            if v.data.iter().any(|x| !x.is_finite()) {
                return Err(GridIoError::NonFinite(v.name.clone()));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.times.len() * self.lats.len() * self.lons.len()
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// Flat offset of `(t, lat, lon)` in a variable's data.
    #[inline]
    pub fn offset(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.lats.len() + i) * self.lons.len() + j
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        let header = 4 + 4 + 16 + 24;
        let axes = 8 * (self.times.len() + self.lats.len() + self.lons.len());
        let vars: usize = self
            .variables
            .iter()
            .map(|v| 4 + v.name.len() + 4 * v.data.len())
            .sum();
        header + axes + 4 + vars
    }
}

pub fn save_grid_bundle(bundle: &GridBundle, path: impl AsRef<Path>) -> Result<(), GridIoError> {
    bundle.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    write_grid_bundle(bundle, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_grid_bundle<W: Write>(bundle: &GridBundle, w: &mut W) -> Result<(), GridIoError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&bundle.pole_lat_deg.to_le_bytes())?;
    w.write_all(&bundle.pole_lon_deg.to_le_bytes())?;
    for n in [bundle.times.len(), bundle.lats.len(), bundle.lons.len()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for axis in [&bundle.times, &bundle.lats, &bundle.lons] {
        for x in axis.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.write_all(&(bundle.variables.len() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(1 << 16);
    for v in &bundle.variables {
        w.write_all(&(v.name.len() as u32).to_le_bytes())?;
        w.write_all(v.name.as_bytes())?;
        for chunk in v.data.chunks(1 << 14) {
            buf.clear();
            for x in chunk {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn load_grid_bundle(path: impl AsRef<Path>) -> Result<GridBundle, GridIoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_grid_bundle(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], GridIoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(GridIoError::DimensionMismatch(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, GridIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, GridIoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, GridIoError> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| GridIoError::DimensionMismatch(format!("{what} length overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_grid_bundle(bytes: &[u8]) -> Result<GridBundle, GridIoError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let mut m = [0u8; 4];
        for (d, s) in m.iter_mut().zip(bytes) {
            *d = *s;
        }
        return Err(GridIoError::BadMagic(m));
    }
    let mut c = Cursor { buf: bytes, pos: 4 };
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(GridIoError::UnsupportedVersion(version));
    }
    let pole = c.f64s(2, "pole")?;
    let dims = [c.u64("T")?, c.u64("NLAT")?, c.u64("NLON")?];
    let mut sizes = [0usize; 3];
    for (s, d) in sizes.iter_mut().zip(dims) {
        *s = usize::try_from(d)
            .map_err(|_| GridIoError::DimensionMismatch(format!("dimension {d} too large")))?;
    }
    let times = c.f64s(sizes[0], "times")?;
    let lats = c.f64s(sizes[1], "lats")?;
    let lons = c.f64s(sizes[2], "lons")?;
    let cells = sizes[0]
        .checked_mul(sizes[1])
        .and_then(|x| x.checked_mul(sizes[2]))
        .ok_or_else(|| GridIoError::DimensionMismatch("cell count overflows".into()))?;
    let var_count = c.u32("var_count")?;
    let mut variables = Vec::with_capacity(var_count as usize);
    for _ in 0..var_count {
        let name_len = c.u32("name_len")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|e| GridIoError::DimensionMismatch(format!("variable name not UTF-8: {e}")))?
            .to_string();
        let len = cells
            .checked_mul(4)
            .ok_or_else(|| GridIoError::DimensionMismatch("payload overflows".into()))?;
        let data = c
            .take(len, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        variables.push(Variable { name, data });
    }
    if c.pos != bytes.len() {
        return Err(GridIoError::DimensionMismatch(format!(
            "{} trailing bytes after last variable",
            bytes.len() - c.pos
        )));
    }
    let bundle = GridBundle {
        pole_lat_deg: pole[0],
        pole_lon_deg: pole[1],
        times,
        lats,
        lons,
        variables,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// A wind-farm location.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPoint {
    pub id: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetSet {
    pub points: Vec<TargetPoint>,
}

impl TargetSet {
    /// Validates ids and latitude, normalizing longitudes.
    pub fn new(points: Vec<TargetPoint>) -> Result<Self, GridIoError> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(points.len());
        for p in points {
            if !seen.insert(p.id.clone()) {
                return Err(GridIoError::DuplicateId(p.id));
            }
            if !(-90.0..=90.0).contains(&p.lat_deg) {
                return Err(GridIoError::OutOfRangeLatitude {
                    id: p.id,
                    lat: p.lat_deg,
                });
            }
            let lon = normalize_longitude(p.lon_deg)
                .map_err(|_| GridIoError::NonFinite(format!("longitude of {}", p.id)))?;
            out.push(TargetPoint { lon_deg: lon, ..p });
        }
        Ok(Self { points: out })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.points.iter().map(|p| p.id.clone()).collect()
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r)
}

fn check_header(
    rdr: &mut csv::Reader<impl Read>,
    expected: &[&str],
) -> Result<(), GridIoError> {
    let mut rec = csv::StringRecord::new();
    let ok = rdr.read_record(&mut rec).map_err(|e| GridIoError::ParseError {
        line: 1,
        msg: e.to_string(),
    })?;
    // Tolerate a UTF-8 byte-order mark on the first field.
    let fields: Vec<&str> = rec
        .iter()
        .enumerate()
        .map(|(i, f)| if i == 0 { f.trim_start_matches('\u{feff}') } else { f })
        .collect();
    if !ok || fields != expected {
        return Err(GridIoError::ParseError {
            line: 1,
            msg: format!("expected header {:?}, found {:?}", expected.join(","), fields.join(",")),
        });
    }
    Ok(())
}

fn parse_f64(s: &str, line: u64, what: &str) -> Result<f64, GridIoError> {
    let v: f64 = s.parse().map_err(|_| GridIoError::ParseError {
        line,
        msg: format!("invalid {what} {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(GridIoError::ParseError {
            line,
            msg: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

fn records<R: Read>(
    rdr: &mut csv::Reader<R>,
    width: usize,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord), GridIoError>> + '_ {
    rdr.records().filter_map(move |r| {
        let rec = match r {
            Ok(rec) => rec,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Some(Err(GridIoError::ParseError {
                    line,
                    msg: e.to_string(),
                }));
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            return None;
        }
        if rec.len() != width {
            return Some(Err(GridIoError::ParseError {
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            }));
        }
        Some(Ok((line, rec)))
    })
}

pub fn read_targets<R: Read>(r: R) -> Result<TargetSet, GridIoError> {
    let mut rdr = csv_reader(r);
    check_header(&mut rdr, &["id", "lat", "lon"])?;
    let mut points = Vec::new();
    for item in records(&mut rdr, 3) {
        let (line, rec) = item?;
        if rec[0].is_empty() {
            return Err(GridIoError::ParseError {
                line,
                msg: "empty id".into(),
            });
        }
        points.push(TargetPoint {
            id: rec[0].to_string(),
            lat_deg: parse_f64(&rec[1], line, "latitude")?,
            lon_deg: parse_f64(&rec[2], line, "longitude")?,
        });
    }
    TargetSet::new(points)
}

pub fn load_targets(path: impl AsRef<Path>) -> Result<TargetSet, GridIoError> {
    read_targets(File::open(path)?)
}

pub fn write_targets<W: Write>(targets: &TargetSet, mut w: W) -> io::Result<()> {
    writeln!(w, "id,lat,lon")?;
    for p in &targets.points {
        writeln!(w, "{},{},{}", p.id, p.lat_deg, p.lon_deg)?;
    }
    Ok(())
}

pub fn save_targets(targets: &TargetSet, path: impl AsRef<Path>) -> Result<(), GridIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_targets(targets, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Hours since 1970-01-01T00:00:00Z.
pub fn epoch_hours(t: DateTime<Utc>) -> f64 {
    t.timestamp() as f64 / 3600.0 + t.timestamp_subsec_nanos() as f64 / 3.6e12
}

pub fn parse_timestamp(s: &str) -> Option<f64> {
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| epoch_hours(t.with_timezone(&Utc)))
}

pub fn format_timestamp(hours: f64) -> String {
    let secs = (hours * 3600.0).round() as i64;
    Utc.timestamp_opt(secs, 0)
        .single()
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| format!("{hours}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerEntry {
    /// Epoch-hours.
    pub timestamp: f64,
    pub plant_id: String,
    pub power_mw: f64,
}

/// Power production records, possibly interleaving several plants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerSeries {
    pub entries: Vec<PowerEntry>,
}

impl PowerSeries {
    pub fn new(entries: Vec<PowerEntry>) -> Result<Self, GridIoError> {
        let s = Self { entries };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GridIoError> {
        let mut last: std::collections::HashMap<&str, f64> = Default::default();
        for (i, e) in self.entries.iter().enumerate() {
            if !e.power_mw.is_finite() || !e.timestamp.is_finite() {
                return Err(GridIoError::NonFinite(format!("power entry {i}")));
            }
            if e.power_mw < 0.0 {
                return Err(GridIoError::NegativePower {
                    plant: e.plant_id.clone(),
                    power: e.power_mw,
                    line: i as u64 + 2,
                });
            }
            if let Some(prev) = last.insert(&e.plant_id, e.timestamp) {
                if e.timestamp <= prev {
                    return Err(GridIoError::NonMonotoneTimestamps(e.plant_id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Plant ids in order of first appearance.
    pub fn plants(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.plant_id.as_str()))
            .map(|e| e.plant_id.clone())
            .collect()
    }

    /// Entries of one plant, in file order.
    pub fn plant(&self, id: &str) -> Vec<&PowerEntry> {
        self.entries.iter().filter(|e| e.plant_id == id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn read_power_series<R: Read>(r: R) -> Result<PowerSeries, GridIoError> {
    let mut rdr = csv_reader(r);
    check_header(&mut rdr, &["timestamp", "plant_id", "power_mw"])?;
    let mut entries = Vec::new();
    let mut last: std::collections::HashMap<String, f64> = Default::default();
    for item in records(&mut rdr, 3) {
        let (line, rec) = item?;
        let timestamp = parse_timestamp(&rec[0]).ok_or_else(|| GridIoError::ParseError {
            line,
            msg: format!("invalid ISO-8601 timestamp {:?}", &rec[0]),
        })?;
        let plant_id = rec[1].to_string();
        let power_mw = parse_f64(&rec[2], line, "power")?;
        if power_mw < 0.0 {
            return Err(GridIoError::NegativePower {
                plant: plant_id,
                power: power_mw,
                line,
            });
        }
        if let Some(prev) = last.insert(plant_id.clone(), timestamp) {
            if timestamp <= prev {
                return Err(GridIoError::NonMonotoneTimestamps(plant_id));
            }
        }
        entries.push(PowerEntry {
            timestamp,
            plant_id,
            power_mw,
        });
    }
    Ok(PowerSeries { entries })
}

pub fn load_power_series(path: impl AsRef<Path>) -> Result<PowerSeries, GridIoError> {
    read_power_series(File::open(path)?)
}

pub fn write_power_series<W: Write>(series: &PowerSeries, mut w: W) -> io::Result<()> {
    writeln!(w, "timestamp,plant_id,power_mw")?;
    for e in &series.entries {
        writeln!(
            w,
            "{},{},{}",
            format_timestamp(e.timestamp),
            e.plant_id,
            e.power_mw
        )?;
    }
    Ok(())
}

pub fn save_power_series(series: &PowerSeries, path: impl AsRef<Path>) -> Result<(), GridIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_power_series(series, &mut w)?;
    w.flush()?;
    Ok(())
}
