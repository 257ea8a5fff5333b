//! Error metrics, histograms, per-target field statistics and the SVG/CSV
//! evaluation artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::interpolate::InterpolatedSeries;
use crate::Real;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("bins must be at least 1")]
    NoBins,
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed {what}: {msg}")]
    Parse { what: String, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Standard regression errors. `r2` is `None` when the labels have zero
/// variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics<T> {
    pub mse: T,
    pub rmse: T,
    pub mae: T,
    pub r2: Option<T>,
    pub n: usize,
}

pub fn regression_metrics<T: Real>(pred: &[T], truth: &[T]) -> Result<Metrics<T>, ReportError> {
    if pred.len() != truth.len() {
        return Err(ReportError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let n = T::from_usize(pred.len()).unwrap();
    let mut ss_res = T::zero();
    let mut abs = T::zero();
    for (p, t) in pred.iter().zip(truth) {
        let e = *p - *t;
        ss_res += e * e;
        abs += e.abs();
    }
    let mean = truth.iter().copied().sum::<T>() / n;
    let ss_tot = truth.iter().map(|t| (*t - mean) * (*t - mean)).sum::<T>();
    let mse = ss_res / n;
    Ok(Metrics {
        mse,
        rmse: mse.sqrt(),
        mae: abs / n,
        r2: (ss_tot > T::zero()).then(|| T::one() - ss_res / ss_tot),
        n: pred.len(),
    })
}

impl Metrics<f64> {
    /// `key=value` lines; an undefined r2 is written as `nan`.
    pub fn to_text(&self) -> String {
        format!(
            "n={}\nmse={:e}\nrmse={:e}\nmae={:e}\nr2={}\n",
            self.n,
            self.mse,
            self.rmse,
            self.mae,
            self.r2.map_or("nan".to_string(), |v| format!("{v:e}"))
        )
    }

    pub fn from_text(text: &str) -> Result<Self, ReportError> {
        let bad = |msg: String| ReportError::Parse {
            what: "metrics".into(),
            msg,
        };
        let get = |k: &str| -> Result<String, ReportError> {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(key, _)| key.trim() == k)
                .map(|(_, v)| v.trim().to_string())
                .ok_or_else(|| bad(format!("missing {k}")))
        };
        let num = |s: String| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let n = get("n")?.parse().map_err(|_| bad("bad n".into()))?;
        let mse = num(get("mse")?)?;
        let rmse = num(get("rmse")?)?;
        let mae = num(get("mae")?)?;
        let r2 = num(get("r2")?)?;
        Ok(Metrics {
            mse,
            rmse,
            mae,
            r2: (!r2.is_nan()).then_some(r2),
            n,
        })
    }
}

/// Uniform-bin histogram. Bins are half-open `[e_k, e_k+1)` except the
/// last, which includes its right edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lower,upper,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[k], self.edges[k + 1], c);
        }
        s
    }
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut k = (((x - lo) / (hi - lo)) * bins as f64).floor().max(0.0) as usize;
    k = k.min(bins - 1);
    // settle against the stored edges so rounding never disagrees with them
    while k > 0 && x < edges[k] {
        k -= 1;
    }
    while k + 1 < bins && x >= edges[k + 1] {
        k += 1;
    }
    k
}

/// Histogram of `values` with `bins` uniform bins spanning `[min, max]`.
/// When all values are equal the range is widened to `[c − 0.5, c + 0.5]`.
pub fn error_histogram<T: Real>(values: &[T], bins: usize) -> Result<Histogram, ReportError> {
    if bins == 0 {
        return Err(ReportError::NoBins);
    }
    if values.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        let v = v.as_f64();
        if !v.is_finite() {
            return Err(ReportError::NonFinite(i));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * width).collect();
    edges.push(hi);
    let mut counts = vec![0u64; bins];
    for v in values {
        counts[bin_of(&edges, v.as_f64())] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Per-target mean/min/max over time plus a histogram of every value.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStats {
    pub variable: String,
    pub target_ids: Vec<String>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub histogram: Histogram,
}

pub fn field_stats(series: &InterpolatedSeries, bins: usize) -> Result<FieldStats, ReportError> {
    field_stats_scaled(series, bins, 1.0)
}

/// Like [`field_stats`] with every value multiplied by `scale` first
/// (e.g. `1e-3` to report Pa as kPa).
pub fn field_stats_scaled(series: &InterpolatedSeries, bins: usize, scale: f64) -> Result<FieldStats, ReportError> {
    let nt = series.n_times();
    let np = series.n_targets();
    if nt == 0 || np == 0 {
        return Err(ReportError::EmptyInput);
    }
    let mut mean = Vec::with_capacity(np);
    let mut min = Vec::with_capacity(np);
    let mut max = Vec::with_capacity(np);
    let mut all = Vec::with_capacity(nt * np);
    for p in 0..np {
        let col: Vec<f64> = series.column(p).iter().map(|v| v * scale).collect();
        mean.push(col.iter().sum::<f64>() / nt as f64);
        min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        all.extend(col);
    }
    Ok(FieldStats {
        variable: series.variable.clone(),
        target_ids: series.target_ids.clone(),
        mean,
        min,
        max,
        histogram: error_histogram(&all, bins)?,
    })
}

impl FieldStats {
    /// One row per target; `coords` (lat, lon) per target are included
    /// when given so the file can drive a map plot.
    pub fn to_csv(&self, coords: Option<&[(f64, f64)]>) -> String {
        let mut s = String::from("target_id,lat_deg,lon_deg,mean,min,max\n");
        for p in 0..self.target_ids.len() {
            let (lat, lon) = coords.map_or((String::new(), String::new()), |c| (c[p].0.to_string(), c[p].1.to_string()));
            let _ = writeln!(s, "{},{},{},{},{},{}", self.target_ids[p], lat, lon, self.mean[p], self.min[p], self.max[p]);
        }
        s
    }
}

// ---- SVG ----

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(a, b): (f64, f64)| if a < b { (a, b) } else { (a - 0.5, b + 0.5) };
        let (x0, x1) = widen(x);
        let (y0, y1) = widen(y);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black" stroke-width="1"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#
    );
    let _ = writeln!(s, r#"<g class="ticks" font-family="sans-serif" font-size="10">"#);
    for k in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(fx),
            b + 15.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 5.0,
            f.py(fy) + 3.0,
            tick(fy)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 20.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Predicted against true values with the identity line.
pub fn svg_scatter(truth: &[f64], pred: &[f64], title: &str) -> String {
    let (lo, hi) = range(truth.iter().chain(pred).copied());
    let f = Frame::new((lo, hi), (lo, hi));
    let mut s = String::new();
    svg_open(&mut s, title);
    axes(&mut s, &f, "true", "predicted");
    let _ = writeln!(
        s,
        r##"<line class="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999999" stroke-dasharray="4 4"/>"##,
        f.px(f.x0),
        f.py(f.y0),
        f.px(f.x1),
        f.py(f.y1)
    );
    let _ = writeln!(s, r##"<g class="points" fill="#1f77b4" fill-opacity="0.6">"##);
    for (t, p) in truth.iter().zip(pred) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, f.px(*t), f.py(*p));
    }
    s.push_str("</g>\n</svg>\n");
    s
}

pub fn svg_histogram(h: &Histogram, title: &str, xlabel: &str) -> String {
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame::new((h.edges[0], *h.edges.last().unwrap()), (0.0, top));
    let mut s = String::new();
    svg_open(&mut s, title);
    axes(&mut s, &f, xlabel, "count");
    let _ = writeln!(s, r##"<g class="bars" fill="#ff7f0e" stroke="white" stroke-width="0.5">"##);
    for (k, c) in h.counts.iter().enumerate() {
        let x = f.px(h.edges[k]);
        let w = f.px(h.edges[k + 1]) - x;
        let y = f.py(*c as f64);
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" data-count="{}"/>"#,
            x,
            y,
            w,
            f.py(0.0) - y,
            c
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// True and predicted series as two polylines over the sample index.
pub fn svg_overlay(truth: &[f64], pred: &[f64], title: &str) -> String {
    let n = truth.len().min(pred.len());
    let (lo, hi) = range(truth[..n].iter().chain(&pred[..n]).copied());
    let f = Frame::new((0.0, n.saturating_sub(1).max(1) as f64), (lo, hi));
    let mut s = String::new();
    svg_open(&mut s, title);
    axes(&mut s, &f, "sample", "power");
    for (class, color, ys) in [("true", "#1f77b4", &truth[..n]), ("pred", "#d62728", &pred[..n])] {
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| format!("{:.2},{:.2}", f.px(i as f64), f.py(*y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r##"<g class="legend" font-family="sans-serif" font-size="11"><text x="{:.1}" y="50" fill="#1f77b4">true</text><text x="{:.1}" y="50" fill="#d62728">predicted</text></g>"##,
        W - MARGIN - 90.0,
        W - MARGIN - 50.0
    );
    s.push_str("</svg>\n");
    s
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub target: String,
    pub time: String,
    pub truth: f64,
    pub pred: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), ReportError> {
    let mut s = String::from("target,time,true,pred\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.target, r.time, r.truth, r.pred);
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |msg: String| ReportError::Parse {
        what: path.display().to_string(),
        msg,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("target,time,true,pred") {
        return Err(bad("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(format!("line {} has {} fields", i + 2, f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("line {}: {s:?}", i + 2)));
        rows.push(PredictionRow {
            target: f[0].to_string(),
            time: f[1].to_string(),
            truth: num(f[2])?,
            pred: num(f[3])?,
        });
    }
    if rows.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    Ok(rows)
}

/// Reads `predictions.csv` from `run_dir` and writes the scatter, error
/// histogram and series overlay (SVG plus CSV) next to it. The overlay
/// shows the first `overlay_len` rows. Returns the written paths.
pub fn emit_plots(run_dir: &Path, bins: usize, overlay_len: usize) -> Result<Vec<PathBuf>, ReportError> {
    let rows = read_predictions(&run_dir.join("predictions.csv"))?;
    let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    let pred: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.pred - r.truth).collect();
    let mut out = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), ReportError> {
        let p = run_dir.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
        out.push(p);
        Ok(())
    };

    let mut csv = String::from("true,pred\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{}", r.truth, r.pred);
    }
    put("scatter.csv", csv)?;
    put("scatter.svg", svg_scatter(&truth, &pred, "True vs predicted power"))?;

    let hist = error_histogram(&errors, bins)?;
    put("error_hist.csv", hist.to_csv())?;
    put("error_hist.svg", svg_histogram(&hist, "Prediction errors", "predicted - true"))?;

    let n = overlay_len.min(rows.len());
    let mut csv = String::from("index,target,time,true,pred\n");
    for (i, r) in rows[..n].iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{},{}", i, r.target, r.time, r.truth, r.pred);
    }
    put("series_overlay.csv", csv)?;
    put("series_overlay.svg", svg_overlay(&truth[..n], &pred[..n], "Predicted and true series"))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolate::Method;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metrics_examples() {
        let t = [1.0, 2.0, 4.0];
        let m = regression_metrics(&t, &t).unwrap();
        assert_eq!((m.mse, m.rmse, m.mae, m.r2, m.n), (0.0, 0.0, 0.0, Some(1.0), 3));
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        let m = regression_metrics(&p, &t).unwrap();
        assert_eq!((m.mse, m.mae), (1.0, 1.0));
        let c = regression_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(c.r2, None);
        assert!(matches!(regression_metrics(&[1.0], &[1.0, 2.0]), Err(ReportError::LengthMismatch(1, 2))));
        assert!(matches!(regression_metrics::<f64>(&[], &[]), Err(ReportError::EmptyInput)));
    }

    #[test]
    fn metrics_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t: Vec<f64> = (0..101).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let p: Vec<f64> = t.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let m = regression_metrics(&p, &t).unwrap();
        let (mut se, mut ae, mut sum) = (0.0, 0.0, 0.0);
        for i in 0..101 {
            se += (p[i] - t[i]).powi(2);
            ae += (p[i] - t[i]).abs();
            sum += t[i];
        }
        let mean = sum / 101.0;
        let mut tot = 0.0;
        for v in &t {
            tot += (v - mean).powi(2);
        }
        assert!((m.mse - se / 101.0).abs() < 1e-12);
        assert!((m.mae - ae / 101.0).abs() < 1e-12);
        assert!((m.r2.unwrap() - (1.0 - se / tot)).abs() < 1e-12);
        assert!((m.rmse * m.rmse - m.mse).abs() < 1e-12);
    }

    #[test]
    fn metrics_text_round_trip() {
        let m = regression_metrics(&[1.0, 2.5, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(Metrics::from_text(&m.to_text()).unwrap(), m);
        let c = regression_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(Metrics::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn histogram_examples() {
        let h = error_histogram(&[2.5; 7], 4).unwrap();
        assert_eq!(h.total(), 7);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        let h = error_histogram(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.edges, vec![0.0, 1.5, 3.0]);
        assert!(matches!(error_histogram::<f64>(&[], 3), Err(ReportError::EmptyInput)));
        assert!(matches!(error_histogram(&[1.0], 0), Err(ReportError::NoBins)));
        assert!(matches!(error_histogram(&[1.0, f64::NAN], 2), Err(ReportError::NonFinite(1))));
    }

    #[test]
    fn histogram_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Box-Muller normal draws
        let v: Vec<f64> = (0..10_000)
            .map(|_| {
                let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let h = error_histogram(&v, 50).unwrap();
        let mut counts = vec![0u64; 50];
        for x in &v {
            let mut k = 0;
            while k < 49 && *x >= h.edges[k + 1] {
                k += 1;
            }
            counts[k] += 1;
        }
        assert_eq!(h.counts, counts);
        assert_eq!(h.total(), 10_000);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }

    fn series(values: Vec<Vec<f64>>) -> InterpolatedSeries {
        let nt = values.len();
        let np = values[0].len();
        InterpolatedSeries {
            variable: "wind_speed".into(),
            times: (0..nt).map(|t| t as f64 * 3.0).collect(),
            target_ids: (0..np).map(|p| format!("p{p}")).collect(),
            values: values.concat(),
            method: vec![Method::Linear; nt * np],
        }
    }

    #[test]
    fn field_stats_examples() {
        let s = field_stats(&series(vec![vec![4.0, 4.0]; 5]), 10).unwrap();
        assert_eq!(s.mean, vec![4.0, 4.0]);
        let s = field_stats(&series(vec![vec![0.0], vec![2.0]]), 10).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!((s.min[0], s.max[0]), (0.0, 2.0));
        let s = field_stats_scaled(&series(vec![vec![101325.0], vec![99000.0]]), 4, 1e-3).unwrap();
        assert!((s.mean[0] - 100.1625).abs() < 1e-9);
    }

    #[test]
    fn field_stats_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vals: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| rng.gen_range(0.0..20.0)).collect()).collect();
        let s = field_stats(&series(vals.clone()), 12).unwrap();
        for p in 0..6 {
            let mut sum = 0.0;
            for t in 0..30 {
                sum += vals[t][p];
            }
            assert!((s.mean[p] - sum / 30.0).abs() < 1e-12);
        }
        assert_eq!(s.histogram.total(), 180);
        let csv = s.to_csv(None);
        assert_eq!(csv.lines().count(), 7);
    }

    fn write_preds(dir: &Path, n: usize) {
        let rows: Vec<PredictionRow> = (0..n)
            .map(|i| PredictionRow {
                target: format!("t{}", i % 3),
                time: format!("2020-01-01T{:02}:00:00Z", i % 24),
                truth: (i as f64 * 0.3).sin() * 10.0 + 20.0,
                pred: (i as f64 * 0.3).sin() * 9.0 + 20.5,
            })
            .collect();
        write_predictions(&dir.join("predictions.csv"), &rows).unwrap();
    }

    #[test]
    fn plots_small_scatter() {
        let dir = tempfile::tempdir().unwrap();
        write_preds(dir.path(), 3);
        emit_plots(dir.path(), 5, 200).unwrap();
        let csv = fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn plots_deterministic_and_parseable() {
        let dir = tempfile::tempdir().unwrap();
        write_preds(dir.path(), 300);
        let files = emit_plots(dir.path(), 20, 200).unwrap();
        let first: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        emit_plots(dir.path(), 20, 200).unwrap();
        let second: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);

        let svg = fs::read_to_string(dir.path().join("series_overlay.svg")).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let lines: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("polyline")).collect();
        assert_eq!(lines.len(), 2);
        let pts: usize = lines
            .iter()
            .map(|n| n.attribute("points").unwrap().split_whitespace().count())
            .sum();
        assert_eq!(pts, 2 * 200);

        let svg = fs::read_to_string(dir.path().join("error_hist.svg")).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let total: u64 = doc
            .descendants()
            .filter_map(|n| n.attribute("data-count"))
            .map(|c| c.parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 300);

        let svg = fs::read_to_string(dir.path().join("scatter.svg")).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 300);
    }

    #[test]
    fn plots_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(dir.path(), 5, 10), Err(ReportError::Io { .. })));
    }

    proptest! {
        #[test]
        fn histogram_conserves_mass(v in proptest::collection::vec(-1e6f64..1e6, 1..300), bins in 1usize..64) {
            let h = error_histogram(&v, bins).unwrap();
            prop_assert_eq!(h.total(), v.len() as u64);
            prop_assert_eq!(h.counts.len(), bins);
            prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn mae_zero_iff_equal(v in proptest::collection::vec(-1e3f64..1e3, 1..50), k in 0usize..50, d in -1.0f64..1.0) {
            let m = regression_metrics(&v, &v).unwrap();
            prop_assert_eq!(m.mae, 0.0);
            let mut w = v.clone();
            let i = k % w.len();
            w[i] += if d == 0.0 { 1.0 } else { d };
            let m = regression_metrics(&w, &v).unwrap();
            prop_assert!(m.mae > 0.0);
            prop_assert!(m.r2.map_or(true, |r| r <= 1.0));
        }
    }
}
