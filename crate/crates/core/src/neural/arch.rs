use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NeuralError;
use crate::Real;

/// Architecture descriptor. Everything needed to rebuild the parameter
/// layout; weights are stored separately.
#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    /// `layers` sine-activated hidden layers followed by a linear head.
    /// `layers == 0` is a plain linear model.
    SirenMlp {
        input: usize,
        hidden: usize,
        layers: usize,
        omega0: f64,
    },
    LstmStack {
        input: usize,
        hidden: usize,
        layers: usize,
    },
    /// LSTM stack, positional encoding, then post-norm encoder layers with
    /// `d_model == hidden`.
    LstmTransformer {
        input: usize,
        hidden: usize,
        lstm_layers: usize,
        encoder_layers: usize,
        heads: usize,
        ff_width: usize,
        layer_norm: bool,
    },
}

impl Architecture {
    /// 6 × 128 SIREN on the five features.
    pub fn reference_siren() -> Self {
        Architecture::SirenMlp {
            input: 5,
            hidden: 128,
            layers: 6,
            omega0: 30.0,
        }
    }

    /// 6 × 128 LSTM stack.
    pub fn reference_lstm() -> Self {
        Architecture::LstmStack {
            input: 5,
            hidden: 128,
            layers: 6,
        }
    }

    /// 6 × 64 LSTM stack under two 4-head encoder layers.
    pub fn reference_hybrid() -> Self {
        Architecture::LstmTransformer {
            input: 5,
            hidden: 64,
            lstm_layers: 6,
            encoder_layers: 2,
            heads: 4,
            ff_width: 20,
            layer_norm: true,
        }
    }

    /// Affine map from `input` features to one output.
    pub fn linear(input: usize) -> Self {
        Architecture::SirenMlp {
            input,
            hidden: 0,
            layers: 0,
            omega0: 30.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::SirenMlp { .. } => "siren_mlp",
            Architecture::LstmStack { .. } => "lstm_stack",
            Architecture::LstmTransformer { .. } => "lstm_transformer",
        }
    }

    pub fn input(&self) -> usize {
        match *self {
            Architecture::SirenMlp { input, .. }
            | Architecture::LstmStack { input, .. }
            | Architecture::LstmTransformer { input, .. } => input,
        }
    }

    /// Whether the model consumes windows rather than flat rows.
    pub fn is_sequential(&self) -> bool {
        !matches!(self, Architecture::SirenMlp { .. })
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::BadDescriptor(m.to_string()));
        match *self {
            Architecture::SirenMlp {
                input,
                hidden,
                layers,
                omega0,
            } => {
                if input == 0 {
                    return bad("input must be positive");
                }
                if layers > 0 && hidden == 0 {
                    return bad("hidden must be positive");
                }
                if !(omega0.is_finite() && omega0 > 0.0) {
                    return bad("omega0 must be positive");
                }
            }
            Architecture::LstmStack {
                input,
                hidden,
                layers,
            } => {
                if input == 0 || hidden == 0 || layers == 0 {
                    return bad("input, hidden and layers must be positive");
                }
            }
            Architecture::LstmTransformer {
                input,
                hidden,
                lstm_layers,
                heads,
                ff_width,
                ..
            } => {
                if input == 0 || hidden == 0 || lstm_layers == 0 || heads == 0 || ff_width == 0 {
                    return bad("input, hidden, layers, heads and ff_width must be positive");
                }
                if hidden % heads != 0 {
                    return bad("hidden size must be divisible by the head count");
                }
                if hidden % 2 != 0 {
                    return bad("hidden size must be even for the positional encoding");
                }
            }
        }
        Ok(())
    }

    /// Key/value form used in checkpoint headers.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![("architecture".to_string(), self.name().to_string())];
        let mut push = |k: &str, v: String| kv.push((k.to_string(), v));
        match *self {
            Architecture::SirenMlp {
                input,
                hidden,
                layers,
                omega0,
            } => {
                push("input", input.to_string());
                push("hidden", hidden.to_string());
                push("layers", layers.to_string());
                push("omega0", format!("{omega0:?}"));
            }
            Architecture::LstmStack {
                input,
                hidden,
                layers,
            } => {
                push("input", input.to_string());
                push("hidden", hidden.to_string());
                push("layers", layers.to_string());
            }
            Architecture::LstmTransformer {
                input,
                hidden,
                lstm_layers,
                encoder_layers,
                heads,
                ff_width,
                layer_norm,
            } => {
                push("input", input.to_string());
                push("hidden", hidden.to_string());
                push("layers", lstm_layers.to_string());
                push("transformer_layers", encoder_layers.to_string());
                push("heads", heads.to_string());
                push("ff_width", ff_width.to_string());
                push("layer_norm", layer_norm.to_string());
            }
        }
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self, NeuralError> {
        fn get<V: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<V, NeuralError> {
            let raw = kv
                .get(k)
                .ok_or_else(|| NeuralError::BadDescriptor(format!("missing key {k}")))?;
            raw.trim()
                .parse()
                .map_err(|_| NeuralError::BadDescriptor(format!("bad value for {k}: {raw}")))
        }
        let name: String = get(kv, "architecture")?;
        let arch = match name.as_str() {
            "siren_mlp" => Architecture::SirenMlp {
                input: get(kv, "input")?,
                hidden: get(kv, "hidden")?,
                layers: get(kv, "layers")?,
                omega0: get(kv, "omega0")?,
            },
            "lstm_stack" => Architecture::LstmStack {
                input: get(kv, "input")?,
                hidden: get(kv, "hidden")?,
                layers: get(kv, "layers")?,
            },
            "lstm_transformer" => Architecture::LstmTransformer {
                input: get(kv, "input")?,
                hidden: get(kv, "hidden")?,
                lstm_layers: get(kv, "layers")?,
                encoder_layers: get(kv, "transformer_layers")?,
                heads: get(kv, "heads")?,
                ff_width: get(kv, "ff_width")?,
                layer_norm: get(kv, "layer_norm")?,
            },
            other => return Err(NeuralError::BadDescriptor(format!("unknown architecture {other}"))),
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// A named block of the flat parameter vector, row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Affine map `out × inp` plus bias, by offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub out: usize,
    pub inp: usize,
}

impl Dense {
    pub fn w_range(&self) -> std::ops::Range<usize> {
        self.w..self.w + self.out * self.inp
    }

    pub fn b_range(&self) -> std::ops::Range<usize> {
        self.b..self.b + self.out
    }
}

/// Gate blocks of one LSTM layer. The four gate matrices (forget, input,
/// candidate, output) are adjacent, so `w` addresses a `4H × (H + input)`
/// matrix acting on `[h, x]`; `b` addresses the `4H` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn cols(&self) -> usize {
        self.hidden + self.input
    }

    pub fn w_range(&self) -> std::ops::Range<usize> {
        self.w..self.w + 4 * self.hidden * self.cols()
    }

    pub fn b_range(&self) -> std::ops::Range<usize> {
        self.b..self.b + 4 * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub d: usize,
    pub heads: usize,
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    /// (gamma offset, beta offset), absent when layer norm is disabled.
    pub ln1: Option<(usize, usize)>,
    pub ff1: Dense,
    pub ff2: Dense,
    pub ln2: Option<(usize, usize)>,
}

/// Offsets of every tensor for one architecture, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub mlp: Vec<Dense>,
    pub lstm: Vec<LstmLayer>,
    pub encoders: Vec<EncoderLayer>,
    pub head: Dense,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let offset = self.total;
        self.tensors.push(TensorSpec {
            name,
            offset,
            rows,
            cols,
        });
        self.total += rows * cols;
        offset
    }

    fn dense(&mut self, prefix: &str, out: usize, inp: usize) -> Dense {
        let w = self.tensor(format!("{prefix}.W"), out, inp);
        let b = self.tensor(format!("{prefix}.b"), out, 1);
        Dense { w, b, out, inp }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> (usize, usize) {
        let g = self.tensor(format!("{prefix}.gamma"), d, 1);
        let b = self.tensor(format!("{prefix}.beta"), d, 1);
        (g, b)
    }

    fn lstm(&mut self, l: usize, input: usize, hidden: usize) -> LstmLayer {
        let cols = hidden + input;
        let mut w = 0;
        for (k, gate) in ["f", "i", "C", "o"].iter().enumerate() {
            let off = self.tensor(format!("lstm{l}.W_{gate}"), hidden, cols);
            if k == 0 {
                w = off;
            }
        }
        let mut b = 0;
        for (k, gate) in ["f", "i", "C", "o"].iter().enumerate() {
            let off = self.tensor(format!("lstm{l}.b_{gate}"), hidden, 1);
            if k == 0 {
                b = off;
            }
        }
        LstmLayer { w, b, input, hidden }
    }
}

impl Layout {
    pub fn of(arch: &Architecture) -> Self {
        let mut bld = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let mut mlp = Vec::new();
        let mut lstm = Vec::new();
        let mut encoders = Vec::new();
        let head_in;
        match *arch {
            Architecture::SirenMlp {
                input,
                hidden,
                layers,
                ..
            } => {
                let mut n_in = input;
                for l in 0..layers {
                    mlp.push(bld.dense(&format!("mlp{l}"), hidden, n_in));
                    n_in = hidden;
                }
                head_in = n_in;
            }
            Architecture::LstmStack {
                input,
                hidden,
                layers,
            } => {
                for l in 0..layers {
                    lstm.push(bld.lstm(l, if l == 0 { input } else { hidden }, hidden));
                }
                head_in = hidden;
            }
            Architecture::LstmTransformer {
                input,
                hidden,
                lstm_layers,
                encoder_layers,
                heads,
                ff_width,
                layer_norm,
            } => {
                for l in 0..lstm_layers {
                    lstm.push(bld.lstm(l, if l == 0 { input } else { hidden }, hidden));
                }
                let d = hidden;
                for e in 0..encoder_layers {
                    let p = format!("enc{e}");
                    let q = bld.dense(&format!("{p}.q"), d, d);
                    let k = bld.dense(&format!("{p}.k"), d, d);
                    let v = bld.dense(&format!("{p}.v"), d, d);
                    let o = bld.dense(&format!("{p}.o"), d, d);
                    let ln1 = layer_norm.then(|| bld.norm(&format!("{p}.ln1"), d));
                    let ff1 = bld.dense(&format!("{p}.ff1"), ff_width, d);
                    let ff2 = bld.dense(&format!("{p}.ff2"), d, ff_width);
                    let ln2 = layer_norm.then(|| bld.norm(&format!("{p}.ln2"), d));
                    encoders.push(EncoderLayer {
                        d,
                        heads,
                        q,
                        k,
                        v,
                        o,
                        ln1,
                        ff1,
                        ff2,
                        ln2,
                    });
                }
                head_in = hidden;
            }
        }
        let head = bld.dense("head", 1, head_in);
        Layout {
            tensors: bld.tensors,
            total: bld.total,
            mlp,
            lstm,
            encoders,
            head,
        }
    }
}

/// Flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: Architecture,
    pub layout: Layout,
    pub values: Vec<T>,
}

impl<T: Real> NetworkParams<T> {
    /// All-zero parameters for `arch`.
    pub fn zeros(arch: Architecture) -> Result<Self, NeuralError> {
        arch.validate()?;
        let layout = Layout::of(&arch);
        let values = vec![T::zero(); layout.total];
        Ok(Self {
            arch,
            layout,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.layout.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.spec(name).map(|s| &self.values[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.spec(name)?.range();
        Some(&mut self.values[r])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Converts to another scalar type through f64.
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Gradient vector, laid out like the parameters it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

pub fn xavier_bound(n_in: usize, n_out: usize) -> f64 {
    (6.0 / (n_in + n_out) as f64).sqrt()
}

fn fill_uniform<T: Real>(rng: &mut ChaCha8Rng, bound: f64, out: &mut [T]) {
    for v in out {
        *v = T::lit(rng.gen_range(-bound..=bound));
    }
}

fn fill_const<T: Real>(c: f64, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::lit(c));
}

/// Seeded initialization. SIREN layers use the sine-network rule (first
/// layer `±1/n_in`, later layers `±sqrt(6/n_in)/omega0`, biases
/// `±1/sqrt(n_in)`); LSTM gates, projections and heads of the recurrent
/// models use Xavier uniform with zero biases; layer norms start at
/// gamma 1, beta 0.
pub fn init_params<T: Real>(arch: &Architecture, seed: u64) -> Result<NetworkParams<T>, NeuralError> {
    let mut p = NetworkParams::<T>::zeros(arch.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = p.layout.clone();
    let vals = &mut p.values;
    match *arch {
        Architecture::SirenMlp { layers, omega0, .. } => {
            let siren = |l: usize, n_in: usize| {
                if l == 0 {
                    1.0 / n_in as f64
                } else {
                    (6.0 / n_in as f64).sqrt() / omega0
                }
            };
            for (l, d) in layout.mlp.iter().enumerate() {
                fill_uniform(&mut rng, siren(l, d.inp), &mut vals[d.w_range()]);
                fill_uniform(&mut rng, 1.0 / (d.inp as f64).sqrt(), &mut vals[d.b_range()]);
            }
            let h = &layout.head;
            fill_uniform(&mut rng, siren(layers, h.inp), &mut vals[h.w_range()]);
            fill_uniform(&mut rng, 1.0 / (h.inp as f64).sqrt(), &mut vals[h.b_range()]);
        }
        Architecture::LstmStack { .. } | Architecture::LstmTransformer { .. } => {
            for l in &layout.lstm {
                let per_gate = l.hidden * l.cols();
                let bound = xavier_bound(l.cols(), l.hidden);
                for g in 0..4 {
                    let start = l.w + g * per_gate;
                    fill_uniform(&mut rng, bound, &mut vals[start..start + per_gate]);
                }
            }
            for e in &layout.encoders {
                for d in [&e.q, &e.k, &e.v, &e.o, &e.ff1, &e.ff2] {
                    fill_uniform(&mut rng, xavier_bound(d.inp, d.out), &mut vals[d.w_range()]);
                }
                for (g, _) in [e.ln1, e.ln2].into_iter().flatten() {
                    fill_const(1.0, &mut vals[g..g + e.d]);
                }
            }
            let h = &layout.head;
            fill_uniform(&mut rng, xavier_bound(h.inp, h.out), &mut vals[h.w_range()]);
        }
    }
    Ok(p)
}

const CHECKPOINT_MAGIC: &str = "wgf-checkpoint v1";
const CHECKPOINT_END: &str = "end";

/// Parameters plus the run metadata stored alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: NetworkParams<T>,
    pub seed: u64,
    pub epoch: usize,
}

/// Text header (`key=value` lines between a magic line and `end`) followed
/// by the parameters as little-endian f64 in declaration order.
pub fn write_checkpoint<T: Real>(
    path: &Path,
    params: &NetworkParams<T>,
    seed: u64,
    epoch: usize,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for (k, v) in params.arch.to_kv() {
        writeln!(w, "{k}={v}")?;
    }
    writeln!(w, "seed={seed}")?;
    writeln!(w, "epoch={epoch}")?;
    writeln!(w, "param_count={}", params.values.len())?;
    writeln!(w, "{CHECKPOINT_END}")?;
    for v in &params.values {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, NeuralError> {
    let io = |e: std::io::Error| NeuralError::Checkpoint(e.to_string());
    let bad = |m: String| NeuralError::Checkpoint(m);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(bad(format!("not a checkpoint (first line {:?})", line.trim_end())));
    }
    let mut kv = BTreeMap::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io)? == 0 {
            return Err(bad("header not terminated".into()));
        }
        let l = line.trim_end();
        if l == CHECKPOINT_END {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header line {l:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let arch = Architecture::from_kv(&kv)?;
    let num = |k: &str| -> Result<u64, NeuralError> {
        kv.get(k)
            .ok_or_else(|| bad(format!("missing {k}")))?
            .parse()
            .map_err(|_| bad(format!("bad {k}")))
    };
    let seed = num("seed")?;
    let epoch = num("epoch")? as usize;
    let count = num("param_count")? as usize;
    let mut params = NetworkParams::<T>::zeros(arch)?;
    if count != params.values.len() {
        return Err(bad(format!(
            "header declares {count} parameters, architecture has {}",
            params.values.len()
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io)?;
    if payload.len() != count * 8 {
        return Err(bad(format!("payload has {} bytes, expected {}", payload.len(), count * 8)));
    }
    for (v, chunk) in params.values.iter_mut().zip(payload.chunks_exact(8)) {
        let x = f64::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        *v = T::lit(x);
    }
    Ok(Checkpoint { params, seed, epoch })
}
