//! The `wgf` command: one subcommand per pipeline stage.
//!
//! Every stage reads a flat config (`--config`) and writes under the output
//! directory (`--out`, or the config's `out_dir`). Later stages read what
//! earlier ones wrote there:
//!
//! | stage         | reads                                  | writes |
//! |---------------|----------------------------------------|--------|
//! | `stats`       | grid, targets                          | `field_stats_<var>.csv`, `field_hist_<var>.csv/.svg` |
//! | `interpolate` | grid, targets                          | `interp_<var>.csv`, `snaps.csv` |
//! | `prepare`     | `interp_*.csv`, targets, power         | `samples.csv`, `split.csv`, `scalers.txt` |
//! | `train`       | `samples.csv`, `split.csv`             | `model.ckpt`, `train_report.csv`, `train_summary.txt` |
//! | `evaluate`    | model, samples, split, scalers, targets | `metrics.txt`, `predictions.csv` |
//! | `plot`        | `predictions.csv`                      | `scatter.svg/.csv`, `error_hist.svg/.csv`, `series_overlay.svg/.csv` |
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{Config, ConfigError};
use crate::dataset::{
    resample_power, split_indices, split_sequences, FeatureScalers, SampleTable, SequenceSet, SplitMode, N_FEATURES,
};
use crate::grid_io::{format_timestamp, load_grid_bundle, load_power_series, load_targets, GridIoError, TargetSet};
use crate::interpolate::{interpolate_field, snap_targets, InterpolatedSeries};
use crate::neural::{
    init_params, predict_all, read_checkpoint, train, write_checkpoint, Architecture, BatchSource, NetworkParams,
    NeuralError, SchedulerConfig, TrainConfig,
};
use crate::report::{
    emit_plots, field_stats_scaled, regression_metrics, svg_histogram, write_predictions, PredictionRow, ReportError,
};

#[derive(Debug, Parser)]
#[command(name = "wgf", version, about = "Climate-grid wind power forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Run configuration (key=value lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Stage {
    /// Per-target field statistics and value histograms.
    Stats(Common),
    /// Sample every field at every target.
    Interpolate(Common),
    /// Resample power, assemble and scale the sample table, split it.
    Prepare(Common),
    /// Train the configured network.
    Train(Common),
    /// Score the trained network on the test split.
    Evaluate(Common),
    /// Scatter, error histogram and series overlay plots.
    Plot(Common),
}

/// Failure of a stage, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or data (exit 1).
    Invalid(String),
    /// Missing or unreadable/unwritable files (exit 2).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<GridIoError> for CliError {
    fn from(e: GridIoError) -> Self {
        match e {
            GridIoError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Invalid(e.to_string())
            }
        }
    )*};
}
invalid_from!(
    crate::dataset::DatasetError,
    crate::interpolate::InterpError,
    NeuralError
);

type Res<T> = Result<T, CliError>;

/// Every key a config may contain.
pub const CONFIG_KEYS: &[&str] = &[
    "out_dir",
    "seed",
    "grid",
    "targets",
    "power",
    "wind_var",
    "pressure_var",
    "bins",
    "resample_hours",
    "test_frac",
    "split",
    "architecture",
    "hidden",
    "layers",
    "transformer_layers",
    "heads",
    "ff_width",
    "omega0",
    "layer_norm",
    "seq_len",
    "epochs",
    "lr",
    "weight_decay",
    "batch_size",
    "batches_per_epoch",
    "scheduler",
    "clr_base",
    "clr_max",
    "clr_step_size",
    "clr_gamma",
    "plateau_factor",
    "plateau_patience",
    "plateau_min_lr",
    "overlay_len",
];

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Res<()> {
    fs::write(path, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Res<Self> {
        let cfg = Config::load(&common.config)?;
        cfg.check_known(CONFIG_KEYS)?;
        let out = match &common.out {
            Some(o) => o.clone(),
            None => cfg.path("out_dir")?,
        };
        fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self { cfg, out })
    }

    fn wind_var(&self) -> Res<String> {
        Ok(self.cfg.get_or("wind_var", "wind_speed".to_string())?)
    }

    fn pressure_var(&self) -> Res<String> {
        Ok(self.cfg.get_or("pressure_var", "pressure".to_string())?)
    }

    fn targets(&self) -> Res<TargetSet> {
        Ok(load_targets(self.cfg.path("targets")?)?)
    }

    fn series(&self, var: &str) -> Res<InterpolatedSeries> {
        let path = self.out.join(format!("interp_{var}.csv"));
        InterpolatedSeries::from_csv(var, &read(&path)?)
            .map_err(|m| CliError::Invalid(format!("{}: {m}", path.display())))
    }

    fn samples(&self) -> Res<SampleTable> {
        Ok(SampleTable::from_csv(&read(&self.out.join("samples.csv"))?)?)
    }

    fn split(&self, n: usize) -> Res<(Vec<usize>, Vec<usize>)> {
        parse_split(&read(&self.out.join("split.csv"))?, n)
    }
}

fn interpolate_vars(ctx: &Ctx) -> Res<(TargetSet, Vec<InterpolatedSeries>)> {
    let bundle = load_grid_bundle(ctx.cfg.path("grid")?)?;
    let targets = ctx.targets()?;
    let mut out = Vec::new();
    for var in [ctx.wind_var()?, ctx.pressure_var()?] {
        out.push(interpolate_field(&bundle, &var, &targets)?);
    }
    Ok((targets, out))
}

fn run_stats(ctx: &Ctx) -> Res<()> {
    let bins: usize = ctx.cfg.get_or("bins", 50)?;
    let (targets, series) = interpolate_vars(ctx)?;
    let pressure = ctx.pressure_var()?;
    let coords: Vec<(f64, f64)> = targets.points.iter().map(|p| (p.lat_deg, p.lon_deg)).collect();
    for s in &series {
        // pressure is shown in kPa
        let (scale, unit) = if s.variable == pressure { (1e-3, "kPa") } else { (1.0, "m/s") };
        let st = field_stats_scaled(s, bins, scale)?;
        let v = &s.variable;
        write(&ctx.out.join(format!("field_stats_{v}.csv")), st.to_csv(Some(&coords)))?;
        write(&ctx.out.join(format!("field_hist_{v}.csv")), st.histogram.to_csv())?;
        let svg = svg_histogram(&st.histogram, &format!("Distribution of {v}"), &format!("{v} ({unit})"));
        write(&ctx.out.join(format!("field_hist_{v}.svg")), svg)?;
    }
    Ok(())
}

fn run_interpolate(ctx: &Ctx) -> Res<()> {
    let bundle = load_grid_bundle(ctx.cfg.path("grid")?)?;
    let targets = ctx.targets()?;
    let snaps = snap_targets(&bundle, &targets)?;
    let mut csv = String::from("target_id,rot_lat_deg,rot_lon_deg,lat_index,lon_index,distance_deg\n");
    for (p, s) in targets.points.iter().zip(&snaps) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            p.id, s.rotated.lat_deg, s.rotated.lon_deg, s.lat_index, s.lon_index, s.distance
        );
    }
    write(&ctx.out.join("snaps.csv"), csv)?;
    for var in [ctx.wind_var()?, ctx.pressure_var()?] {
        let s = interpolate_field(&bundle, &var, &targets)?;
        if s.fallback_count() > 0 {
            eprintln!("{var}: {} cells fell back to the nearest node", s.fallback_count());
        }
        write(&ctx.out.join(format!("interp_{var}.csv")), s.to_csv())?;
    }
    Ok(())
}

fn split_mode(cfg: &Config) -> Res<SplitMode> {
    let s: String = cfg.get_or("split", "chronological".to_string())?;
    s.parse().map_err(CliError::Invalid)
}

fn parse_split(text: &str, n: usize) -> Res<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("row,set") {
        return Err(CliError::Invalid("split.csv: unexpected header".into()));
    }
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (r, s) = line
            .split_once(',')
            .ok_or_else(|| CliError::Invalid(format!("split.csv: bad line {line:?}")))?;
        let r: usize = r
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("split.csv: bad row {r:?}")))?;
        match s.trim() {
            "train" => train.push(r),
            "test" => test.push(r),
            other => return Err(CliError::Invalid(format!("split.csv: unknown set {other:?}"))),
        }
    }
    if train.len() + test.len() != n {
        return Err(CliError::Invalid(format!(
            "split.csv covers {} rows, samples.csv has {n}",
            train.len() + test.len()
        )));
    }
    Ok((train, test))
}

fn run_prepare(ctx: &Ctx) -> Res<()> {
    let seed: u64 = ctx.cfg.get("seed")?;
    let hours: f64 = ctx.cfg.get_or("resample_hours", 3.0)?;
    let frac: f64 = ctx.cfg.get_or("test_frac", 0.2)?;
    let mode = split_mode(&ctx.cfg)?;
    let targets = ctx.targets()?;
    let wind = ctx.series(&ctx.wind_var()?)?;
    let pressure = ctx.series(&ctx.pressure_var()?)?;
    let power = load_power_series(ctx.cfg.path("power")?)?;
    let power = resample_power(&power, hours)?;
    let raw = crate::dataset::assemble_raw(&wind, &pressure, &power, &targets)?;
    let (train_rows, test_rows) = split_indices(&raw, frac, mode, seed)?;
    let scalers = FeatureScalers::fit(&raw, &train_rows)?;
    let table = scalers.apply_table(&raw);
    write(&ctx.out.join("samples.csv"), table.to_csv())?;
    write(&ctx.out.join("scalers.txt"), scalers.to_kv())?;
    let mut is_test = vec![false; raw.len()];
    for &r in &test_rows {
        is_test[r] = true;
    }
    let mut csv = String::from("row,set\n");
    for (r, t) in is_test.iter().enumerate() {
        let _ = writeln!(csv, "{r},{}", if *t { "test" } else { "train" });
    }
    write(&ctx.out.join("split.csv"), csv)?;
    eprintln!("prepared {} samples ({} train, {} test)", raw.len(), train_rows.len(), test_rows.len());
    Ok(())
}

fn architecture(cfg: &Config) -> Res<Architecture> {
    let name = cfg.str("architecture")?;
    let input = N_FEATURES;
    let arch = match name {
        "siren_mlp" => Architecture::SirenMlp {
            input,
            hidden: cfg.get_or("hidden", 128)?,
            layers: cfg.get_or("layers", 6)?,
            omega0: cfg.get_or("omega0", 30.0)?,
        },
        "linear" => Architecture::linear(input),
        "lstm_stack" => Architecture::LstmStack {
            input,
            hidden: cfg.get_or("hidden", 128)?,
            layers: cfg.get_or("layers", 6)?,
        },
        "lstm_transformer" => Architecture::LstmTransformer {
            input,
            hidden: cfg.get_or("hidden", 64)?,
            lstm_layers: cfg.get_or("layers", 6)?,
            encoder_layers: cfg.get_or("transformer_layers", 2)?,
            heads: cfg.get_or("heads", 4)?,
            ff_width: cfg.get_or("ff_width", 20)?,
            layer_norm: cfg.get_or("layer_norm", true)?,
        },
        other => {
            return Err(CliError::Invalid(format!(
                "unknown architecture {other:?} (expected siren_mlp, linear, lstm_stack or lstm_transformer)"
            )))
        }
    };
    arch.validate()?;
    Ok(arch)
}

fn train_config(cfg: &Config) -> Res<TrainConfig> {
    let lr: f64 = cfg.get("lr")?;
    let scheduler = match cfg.str("scheduler")? {
        "none" => SchedulerConfig::None,
        "clr_exp_range" => {
            let SchedulerConfig::ClrExpRange {
                base,
                max,
                step_size,
                gamma,
            } = SchedulerConfig::clr_default(lr)
            else {
                unreachable!()
            };
            SchedulerConfig::ClrExpRange {
                base: cfg.get_or("clr_base", base)?,
                max: cfg.get_or("clr_max", max)?,
                step_size: cfg.get_or("clr_step_size", step_size)?,
                gamma: cfg.get_or("clr_gamma", gamma)?,
            }
        }
        "reduce_on_plateau" => SchedulerConfig::ReduceOnPlateau {
            factor: cfg.get_or("plateau_factor", 0.5)?,
            patience: cfg.get_or("plateau_patience", 10)?,
            min_lr: cfg.get_or("plateau_min_lr", 1e-6)?,
        },
        other => {
            return Err(CliError::Invalid(format!(
                "unknown scheduler {other:?} (expected none, clr_exp_range or reduce_on_plateau)"
            )))
        }
    };
    let c = TrainConfig {
        epochs: cfg.get("epochs")?,
        learning_rate: lr,
        weight_decay: cfg.get_or("weight_decay", 1e-6)?,
        scheduler,
        batch_size: cfg.get_or("batch_size", 256)?,
        batches_per_epoch: cfg.opt("batches_per_epoch")?,
        seed: cfg.get("seed")?,
    };
    c.validate()?;
    Ok(c)
}

/// Training/test sources for the configured architecture. Windows are
/// assigned to the split of the row they are labelled with.
enum Sources {
    Flat(SampleTable, SampleTable),
    Windows(SequenceSet, SequenceSet),
}

impl Sources {
    fn build(arch: &Architecture, cfg: &Config, table: &SampleTable, train: &[usize], test: &[usize]) -> Res<Self> {
        if !arch.is_sequential() {
            return Ok(Sources::Flat(table.subset(train), table.subset(test)));
        }
        let seq_len: usize = cfg.get("seq_len")?;
        let (tr, te) = split_sequences(table, seq_len, test)?;
        Ok(Sources::Windows(tr, te))
    }
}

fn run_train(ctx: &Ctx) -> Res<()> {
    let arch = architecture(&ctx.cfg)?;
    let config = train_config(&ctx.cfg)?;
    let table = ctx.samples()?;
    let (train_rows, test_rows) = ctx.split(table.len())?;
    let params = init_params::<f64>(&arch, config.seed)?;
    let (params, report) = match Sources::build(&arch, &ctx.cfg, &table, &train_rows, &test_rows)? {
        Sources::Flat(tr, te) => train(params, &tr, Some(&te), &config)?,
        Sources::Windows(tr, te) => train(params, &tr, Some(&te), &config)?,
    };
    let ckpt = ctx.out.join("model.ckpt");
    write_checkpoint(&ckpt, &params, config.seed, report.epochs_run())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", ckpt.display())))?;
    write(&ctx.out.join("train_report.csv"), report.to_csv())?;
    let mut summary = format!(
        "architecture={}\nparameters={}\nepochs={}\nsteps={}\nfinal_loss={:e}\nwall_seconds={:.3}\n",
        arch.name(),
        params.len(),
        report.epochs_run(),
        report.steps,
        report.final_loss().unwrap_or(f64::NAN),
        report.wall_seconds
    );
    for (name, m) in [("train", report.train_metrics), ("test", report.test_metrics)] {
        if let Some(m) = m {
            let _ = writeln!(summary, "{name}_rmse_scaled={:e}", m.rmse);
        }
    }
    write(&ctx.out.join("train_summary.txt"), summary)?;
    Ok(())
}

/// Predictions for a set of windows or rows, plus the (time, target)
/// of each label.
fn predict_labelled<S: BatchSource<f64>>(
    params: &NetworkParams<f64>,
    src: &S,
    prov: &[(usize, usize)],
) -> Res<(Vec<f64>, Vec<f64>, Vec<(usize, usize)>)> {
    let (p, t) = predict_all(params, src, 512)?;
    Ok((p, t, prov.to_vec()))
}

fn run_evaluate(ctx: &Ctx) -> Res<()> {
    let ckpt = ctx.out.join("model.ckpt");
    if !ckpt.exists() {
        return Err(CliError::Io(format!("{} not found; run `train` first", ckpt.display())));
    }
    let params = read_checkpoint::<f64>(&ckpt)?.params;
    let table = ctx.samples()?;
    let (train_rows, test_rows) = ctx.split(table.len())?;
    let scalers = FeatureScalers::from_kv(&read(&ctx.out.join("scalers.txt"))?)?;
    let targets = ctx.targets()?;
    let (pred, truth, prov) = match Sources::build(&params.arch, &ctx.cfg, &table, &train_rows, &test_rows)? {
        Sources::Flat(_, te) => predict_labelled(&params, &te, &te.provenance)?,
        Sources::Windows(_, te) => predict_labelled(&params, &te, &te.label_provenance)?,
    };
    if pred.is_empty() {
        return Err(CliError::Invalid("test split is empty".into()));
    }
    let pred: Vec<f64> = pred.iter().map(|v| scalers.target.invert(*v)).collect();
    let truth: Vec<f64> = truth.iter().map(|v| scalers.target.invert(*v)).collect();
    let metrics = regression_metrics(&pred, &truth)?;
    write(&ctx.out.join("metrics.txt"), metrics.to_text())?;
    // the t feature is scaled; recover timestamps from the scaler
    let times: std::collections::HashMap<(usize, usize), f64> = table
        .provenance
        .iter()
        .zip(&table.features)
        .map(|(p, f)| (*p, scalers.features[0].invert(f[0])))
        .collect();
    let rows: Vec<PredictionRow> = prov
        .iter()
        .zip(pred.iter().zip(&truth))
        .map(|(&(t, p), (&pr, &tr))| PredictionRow {
            target: targets.points.get(p).map_or_else(|| p.to_string(), |tp| tp.id.clone()),
            time: format_timestamp(times[&(t, p)].round()),
            truth: tr,
            pred: pr,
        })
        .collect();
    write_predictions(&ctx.out.join("predictions.csv"), &rows)?;
    eprintln!("test rmse {:.6} MW over {} samples", metrics.rmse, metrics.n);
    Ok(())
}

fn run_plot(ctx: &Ctx) -> Res<()> {
    let bins: usize = ctx.cfg.get_or("bins", 50)?;
    let overlay: usize = ctx.cfg.get_or("overlay_len", 200)?;
    emit_plots(&ctx.out, bins, overlay)?;
    Ok(())
}

fn dispatch(stage: &Stage) -> Res<()> {
    let (common, f): (&Common, fn(&Ctx) -> Res<()>) = match stage {
        Stage::Stats(c) => (c, run_stats),
        Stage::Interpolate(c) => (c, run_interpolate),
        Stage::Prepare(c) => (c, run_prepare),
        Stage::Train(c) => (c, run_train),
        Stage::Evaluate(c) => (c, run_evaluate),
        Stage::Plot(c) => (c, run_plot),
    };
    let ctx = Ctx::new(common)?;
    f(&ctx)
}

/// Caps the global rayon pool from `WGF_THREADS`, if set. Only the first
/// call in a process has an effect.
fn configure_threads() -> Res<()> {
    if let Ok(v) = std::env::var("WGF_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Invalid(format!("WGF_THREADS must be a positive integer, got {v:?}")))?;
        // a pool that is already built keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Errors are reported on stderr.
pub fn cli_run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|_| dispatch(&cli.stage));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
