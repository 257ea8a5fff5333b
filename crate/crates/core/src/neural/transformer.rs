use super::lstm::{stack_backward, stack_forward_seq};
use super::ops::{affine, affine_backward, attention_probs, dense_grads, layer_norm, layer_norm_backward, positional_encoding};
use super::{forward, Architecture, Dense, EncoderLayer, NetworkParams, NeuralError, SeqBatch};
use crate::Real;

struct NormCache<T> {
    xhat: Vec<T>,
    inv: T,
}

struct EncCache<T> {
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// softmax weights, `[head][i][j]`
    probs: Vec<T>,
    /// concatenated head outputs before the output projection
    o: Vec<T>,
    ln1: Vec<NormCache<T>>,
    y1: Vec<T>,
    u: Vec<T>,
    ur: Vec<T>,
    z: Vec<T>,
    ln2: Vec<NormCache<T>>,
}

fn project<T: Real>(p: &NetworkParams<T>, d: &Dense, x: &[T], rows: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * d.out];
    let w = &p.values[d.w_range()];
    let b = &p.values[d.b_range()];
    for r in 0..rows {
        affine(w, b, &x[r * d.inp..(r + 1) * d.inp], &mut out[r * d.out..(r + 1) * d.out]);
    }
    out
}

fn norm_rows<T: Real>(p: &NetworkParams<T>, ln: Option<(usize, usize)>, x: Vec<T>, n: usize, d: usize) -> (Vec<T>, Vec<NormCache<T>>) {
    let Some((g, b)) = ln else {
        return (x, Vec::new());
    };
    let gamma = &p.values[g..g + d];
    let beta = &p.values[b..b + d];
    let mut out = vec![T::zero(); n * d];
    let mut caches = Vec::with_capacity(n);
    for r in 0..n {
        let (xhat, inv) = layer_norm(&x[r * d..(r + 1) * d], gamma, beta, &mut out[r * d..(r + 1) * d]);
        caches.push(NormCache { xhat, inv });
    }
    (out, caches)
}

fn norm_rows_backward<T: Real>(
    p: &NetworkParams<T>,
    ln: Option<(usize, usize)>,
    caches: &[NormCache<T>],
    dy: Vec<T>,
    d: usize,
    grad: &mut [T],
) -> Vec<T> {
    let Some((g, _)) = ln else {
        return dy;
    };
    let gamma = &p.values[g..g + d];
    let (dgamma, dbeta) = grad[g..g + 2 * d].split_at_mut(d);
    let mut dx = vec![T::zero(); dy.len()];
    for (r, c) in caches.iter().enumerate() {
        layer_norm_backward(&c.xhat, c.inv, gamma, &dy[r * d..(r + 1) * d], dgamma, dbeta, &mut dx[r * d..(r + 1) * d]);
    }
    dx
}

/// One post-norm encoder layer over `n` rows of width `d`.
fn encoder_forward<T: Real>(p: &NetworkParams<T>, e: &EncoderLayer, x: Vec<T>, n: usize) -> (Vec<T>, EncCache<T>) {
    let d = e.d;
    let dk = d / e.heads;
    let q = project(p, &e.q, &x, n);
    let k = project(p, &e.k, &x, n);
    let v = project(p, &e.v, &x, n);
    let mut probs = vec![T::zero(); e.heads * n * n];
    let mut o = vec![T::zero(); n * d];
    for h in 0..e.heads {
        let pr = &mut probs[h * n * n..(h + 1) * n * n];
        attention_probs(&q, &k, n, d, h * dk, dk, pr);
        for i in 0..n {
            for j in 0..n {
                let a = pr[i * n + j];
                for c in h * dk..(h + 1) * dk {
                    o[i * d + c] += a * v[j * d + c];
                }
            }
        }
    }
    let att = project(p, &e.o, &o, n);
    let r1: Vec<T> = x.iter().zip(&att).map(|(a, b)| *a + *b).collect();
    let (y1, ln1) = norm_rows(p, e.ln1, r1, n, d);
    let u = project(p, &e.ff1, &y1, n);
    let ur: Vec<T> = u.iter().map(|v| v.max(T::zero())).collect();
    let z = project(p, &e.ff2, &ur, n);
    let r2: Vec<T> = y1.iter().zip(&z).map(|(a, b)| *a + b.max(T::zero())).collect();
    let (y2, ln2) = norm_rows(p, e.ln2, r2, n, d);
    let cache = EncCache {
        x,
        q,
        k,
        v,
        probs,
        o,
        ln1,
        y1,
        u,
        ur,
        z,
        ln2,
    };
    (y2, cache)
}

fn dense_backward_rows<T: Real>(p: &NetworkParams<T>, d: &Dense, x: &[T], dy: &[T], n: usize, grad: &mut [T], dx: &mut [T]) {
    let w = &p.values[d.w_range()];
    let (dw, db) = dense_grads(grad, d);
    for r in 0..n {
        affine_backward(
            w,
            &x[r * d.inp..(r + 1) * d.inp],
            &dy[r * d.out..(r + 1) * d.out],
            dw,
            db,
            Some(&mut dx[r * d.inp..(r + 1) * d.inp]),
        );
    }
}

fn encoder_backward<T: Real>(p: &NetworkParams<T>, e: &EncoderLayer, c: &EncCache<T>, dy2: Vec<T>, n: usize, grad: &mut [T]) -> Vec<T> {
    let d = e.d;
    let dk = d / e.heads;
    let dr2 = norm_rows_backward(p, e.ln2, &c.ln2, dy2, d, grad);
    // residual: y1 receives dr2 directly plus the feed-forward path
    let mut dy1 = dr2.clone();
    let dz: Vec<T> = dr2
        .iter()
        .zip(&c.z)
        .map(|(g, z)| if *z > T::zero() { *g } else { T::zero() })
        .collect();
    let mut dur = vec![T::zero(); n * e.ff1.out];
    dense_backward_rows(p, &e.ff2, &c.ur, &dz, n, grad, &mut dur);
    let du: Vec<T> = dur
        .iter()
        .zip(&c.u)
        .map(|(g, u)| if *u > T::zero() { *g } else { T::zero() })
        .collect();
    dense_backward_rows(p, &e.ff1, &c.y1, &du, n, grad, &mut dy1);
    let dr1 = norm_rows_backward(p, e.ln1, &c.ln1, dy1, d, grad);

    let mut dx = dr1.clone();
    let mut d_o = vec![T::zero(); n * d];
    dense_backward_rows(p, &e.o, &c.o, &dr1, n, grad, &mut d_o);
    let mut dq = vec![T::zero(); n * d];
    let mut dkm = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
    let mut dp = vec![T::zero(); n];
    for h in 0..e.heads {
        let pr = &c.probs[h * n * n..(h + 1) * n * n];
        let cols = h * dk..(h + 1) * dk;
        for i in 0..n {
            let mut dot = T::zero();
            for j in 0..n {
                let mut s = T::zero();
                for col in cols.clone() {
                    s += d_o[i * d + col] * c.v[j * d + col];
                    dv[j * d + col] += pr[i * n + j] * d_o[i * d + col];
                }
                dp[j] = s;
                dot += pr[i * n + j] * s;
            }
            for j in 0..n {
                let ds = pr[i * n + j] * (dp[j] - dot) * scale;
                for col in cols.clone() {
                    dq[i * d + col] += ds * c.k[j * d + col];
                    dkm[j * d + col] += ds * c.q[i * d + col];
                }
            }
        }
    }
    dense_backward_rows(p, &e.q, &c.x, &dq, n, grad, &mut dx);
    dense_backward_rows(p, &e.k, &c.x, &dkm, n, grad, &mut dx);
    dense_backward_rows(p, &e.v, &c.x, &dv, n, grad, &mut dx);
    dx
}

fn add_positions<T: Real>(seq: &mut [T], steps: usize, d: usize) {
    for t in 0..steps {
        let pe: Vec<T> = positional_encoding(t, d).expect("even d checked by the descriptor");
        for (s, v) in seq[t * d..(t + 1) * d].iter_mut().zip(pe) {
            *s += v;
        }
    }
}

fn head<T: Real>(p: &NetworkParams<T>, h: &[T]) -> T {
    let hd = &p.layout.head;
    let mut y = [T::zero()];
    affine(&p.values[hd.w_range()], &p.values[hd.b_range()], h, &mut y);
    y[0]
}

pub(crate) fn forward_sample<T: Real>(p: &NetworkParams<T>, x: &[T], steps: usize) -> T {
    let d = p.layout.head.inp;
    let mut seq = stack_forward_seq(p, x, steps, None);
    add_positions(&mut seq, steps, d);
    for e in &p.layout.encoders {
        seq = encoder_forward(p, e, seq, steps).0;
    }
    head(p, &seq[(steps - 1) * d..])
}

pub(crate) fn loss_grad_sample<T: Real>(p: &NetworkParams<T>, x: &[T], steps: usize, target: T, scale: T, grad: &mut [T]) -> T {
    let d = p.layout.head.inp;
    let mut lstm_caches = Vec::with_capacity(p.layout.lstm.len());
    let mut seq = stack_forward_seq(p, x, steps, Some(&mut lstm_caches));
    add_positions(&mut seq, steps, d);
    let mut enc_caches = Vec::with_capacity(p.layout.encoders.len());
    for e in &p.layout.encoders {
        let (y, c) = encoder_forward(p, e, seq, steps);
        enc_caches.push(c);
        seq = y;
    }
    let last = &seq[(steps - 1) * d..];
    let err = head(p, last) - target;
    let mut dseq = vec![T::zero(); steps * d];
    {
        let h = &p.layout.head;
        let (dw, db) = dense_grads(grad, h);
        affine_backward(&p.values[h.w_range()], last, &[scale * err], dw, db, Some(&mut dseq[(steps - 1) * d..]));
    }
    for (e, c) in p.layout.encoders.iter().zip(&enc_caches).rev() {
        dseq = encoder_backward(p, e, c, dseq, steps, grad);
    }
    stack_backward(p, &lstm_caches, dseq, grad);
    err * err
}

/// Predictions of the LSTM + Transformer encoder model on windows.
pub fn hybrid_forward<T: Real>(params: &NetworkParams<T>, batch: &SeqBatch<T>) -> Result<Vec<T>, NeuralError> {
    if !matches!(params.arch, Architecture::LstmTransformer { .. }) {
        return Err(NeuralError::ShapeMismatch(format!("{} is not the hybrid model", params.arch.name())));
    }
    forward(params, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{attention, init_params, lstm_step, LstmGates};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(layer_norm: bool) -> Architecture {
        Architecture::LstmTransformer {
            input: 5,
            hidden: 4,
            lstm_layers: 2,
            encoder_layers: 2,
            heads: 2,
            ff_width: 3,
            layer_norm,
        }
    }

    fn rand_batch(seed: u64, b: usize, steps: usize) -> SeqBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * steps * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SeqBatch::new(b, steps, 5, data, vec![0.0; b])
    }

    /// Top-layer LSTM outputs via the public step function.
    fn lstm_top(p: &NetworkParams<f64>, x: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let mut seq: Vec<Vec<f64>> = (0..steps).map(|t| x[t * 5..(t + 1) * 5].to_vec()).collect();
        for l in 0..p.layout.lstm.len() {
            let g = LstmGates::of(p, l);
            let (mut h, mut c) = (vec![0.0; g.hidden], vec![0.0; g.hidden]);
            let mut out = Vec::new();
            for xt in &seq {
                let (hn, cn) = lstm_step(&g, xt, &h, &c).unwrap();
                h = hn;
                c = cn;
                out.push(h.clone());
            }
            seq = out;
        }
        seq
    }

    fn lin(p: &NetworkParams<f64>, name: &str, x: &[f64]) -> Vec<f64> {
        let s = p.spec(&format!("{name}.W")).unwrap();
        let w = &p.values[s.range()];
        let b = p.tensor(&format!("{name}.b")).unwrap();
        (0..s.rows)
            .map(|r| b[r] + (0..s.cols).map(|c| w[r * s.cols + c] * x[c]).sum::<f64>())
            .collect()
    }

    fn ln(p: &NetworkParams<f64>, name: &str, x: &[f64]) -> Vec<f64> {
        let g = p.tensor(&format!("{name}.gamma")).unwrap();
        let b = p.tensor(&format!("{name}.beta")).unwrap();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| g[i] * (v - m) / (var + 1e-5).sqrt() + b[i])
            .collect()
    }

    /// Composition of the LSTM step, positional encoding and the public
    /// attention op, row by row.
    fn oracle(p: &NetworkParams<f64>, x: &[f64], steps: usize, with_ln: bool) -> f64 {
        let d = 4;
        let heads = 2;
        let dk = 2;
        let mut seq = lstm_top(p, x, steps);
        for (t, row) in seq.iter_mut().enumerate() {
            let pe: Vec<f64> = positional_encoding(t, d).unwrap();
            for c in 0..d {
                row[c] += pe[c];
            }
        }
        for e in 0..2 {
            let pre = format!("enc{e}");
            let q: Vec<Vec<f64>> = seq.iter().map(|r| lin(p, &format!("{pre}.q"), r)).collect();
            let k: Vec<Vec<f64>> = seq.iter().map(|r| lin(p, &format!("{pre}.k"), r)).collect();
            let v: Vec<Vec<f64>> = seq.iter().map(|r| lin(p, &format!("{pre}.v"), r)).collect();
            let mut concat = vec![vec![0.0; d]; steps];
            for h in 0..heads {
                let slice = |m: &Vec<Vec<f64>>| -> Vec<f64> {
                    m.iter().flat_map(|r| r[h * dk..(h + 1) * dk].to_vec()).collect()
                };
                let out = attention(&slice(&q), &slice(&k), &slice(&v), steps, dk, dk).unwrap();
                for i in 0..steps {
                    concat[i][h * dk..(h + 1) * dk].copy_from_slice(&out[i * dk..(i + 1) * dk]);
                }
            }
            let mut next = Vec::new();
            for i in 0..steps {
                let att = lin(p, &format!("{pre}.o"), &concat[i]);
                let r1: Vec<f64> = (0..d).map(|c| seq[i][c] + att[c]).collect();
                let y1 = if with_ln { ln(p, &format!("{pre}.ln1"), &r1) } else { r1 };
                let u: Vec<f64> = lin(p, &format!("{pre}.ff1"), &y1).iter().map(|v| v.max(0.0)).collect();
                let f: Vec<f64> = lin(p, &format!("{pre}.ff2"), &u).iter().map(|v| v.max(0.0)).collect();
                let r2: Vec<f64> = (0..d).map(|c| y1[c] + f[c]).collect();
                next.push(if with_ln { ln(p, &format!("{pre}.ln2"), &r2) } else { r2 });
            }
            seq = next;
        }
        lin(p, "head", &seq[steps - 1])[0]
    }

    fn perturb(p: &mut NetworkParams<f64>, seed: u64) {
        // layer norm starts at gamma 1, beta 0; move it off that point
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.layout.tensors.clone() {
            if t.name.contains(".ln") || t.name.ends_with(".b") {
                for v in &mut p.values[t.range()] {
                    *v += rng.gen_range(-0.3..0.3);
                }
            }
        }
    }

    #[test]
    fn matches_composed_oracle() {
        for with_ln in [true, false] {
            let mut p = init_params::<f64>(&arch(with_ln), 31).unwrap();
            perturb(&mut p, 1);
            let b = rand_batch(4, 3, 5);
            let got = hybrid_forward(&p, &b).unwrap();
            for s in 0..3 {
                let want = oracle(&p, b.sample(s), 5, with_ln);
                assert!((got[s] - want).abs() < 1e-12, "{} vs {}", got[s], want);
            }
        }
    }

    #[test]
    fn zero_sublayers_are_identity() {
        let mut p = init_params::<f64>(&arch(false), 8).unwrap();
        for t in p.layout.tensors.clone() {
            if t.name.starts_with("enc") {
                p.values[t.range()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let b = rand_batch(2, 2, 4);
        let got = hybrid_forward(&p, &b).unwrap();
        for s in 0..2 {
            let mut top = lstm_top(&p, b.sample(s), 4);
            let last = top.pop().unwrap();
            let pe: Vec<f64> = positional_encoding(3, 4).unwrap();
            let with_pe: Vec<f64> = last.iter().zip(&pe).map(|(a, b)| a + b).collect();
            let want = lin(&p, "head", &with_pe)[0];
            assert!((got[s] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn single_position_attention_passes_value() {
        // with L=1 the attention output is the value projection itself
        let p = init_params::<f64>(&arch(true), 3).unwrap();
        let b = rand_batch(9, 1, 1);
        let top = lstm_top(&p, b.sample(0), 1);
        let x: Vec<f64> = top[0].iter().zip(positional_encoding::<f64>(0, 4).unwrap()).map(|(a, b)| a + b).collect();
        let (_, cache) = encoder_forward(&p, &p.layout.encoders[0], x.clone(), 1);
        assert_eq!(cache.o, lin(&p, "enc0.v", &x));
        let got = hybrid_forward(&p, &b).unwrap()[0];
        assert!((got - oracle(&p, b.sample(0), 1, true)).abs() < 1e-12);
    }

    #[test]
    fn rejects_other_architectures() {
        let p = init_params::<f64>(&Architecture::reference_siren(), 0).unwrap();
        assert!(hybrid_forward(&p, &rand_batch(0, 1, 1)).is_err());
    }
}
