//! Bidirectional transformer encoder predicting `p̃(z̃_0 | z_t)`.
//!
//! Pre-norm blocks with timestep injection through adaptive layer norm: each
//! norm's scale and shift are projected from an embedding of `t`.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::DenoiserConfig;
use super::ops;
use crate::diffusion::softmax;
use crate::error::{Error, Result};
use crate::quantizer::{Modality, QuantizerKind, Vocabulary};
use crate::tokens::{position_indices, TokenSeq};

const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-6;

/// Per-position scores over the global vocabulary after modality masking.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    /// `5M × K_global`; `-inf` outside the position's modality range and PAD.
    pub scores: Vec<Vec<f64>>,
}

pub struct ForwardOutput {
    /// Raw head output, `[batch, 5M, K_global]`, before modality masking.
    pub logits: Tensor,
    /// Final normalized hidden state, `[batch, 5M, embed_dim]`.
    pub hidden: Tensor,
}

struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn apply(&mut self, x: &Tensor) -> Result<Tensor> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x.clone());
        };
        if self.p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let scale = (1.0 / keep) as f32;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

pub struct DenoiserNet {
    config: DenoiserConfig,
    ids: Vocabulary,
    device: Device,
    dtype: DType,
    params: Vec<(String, Var)>,
    element_index: Tensor,
    attribute_index: Tensor,
    position_index: Tensor,
}

impl std::fmt::Debug for DenoiserNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenoiserNet")
            .field("config", &self.config)
            .field("dtype", &self.dtype)
            .field("parameters", &self.num_parameters())
            .finish()
    }
}

impl DenoiserNet {
    /// Fresh parameters drawn from a seeded generator: weights `N(0, 0.02²)`,
    /// biases zero.
    pub fn new(config: DenoiserConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = Vec::new();
        for (name, shape) in Self::param_shapes(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            let t = Tensor::from_vec(data, shape.as_slice(), &device)?.to_dtype(dtype)?;
            params.push((name, Var::from_tensor(&t)?));
        }
        Self::assemble(config, dtype, params)
    }

    /// Build from named tensors in [`Self::param_shapes`] order.
    pub fn from_tensors(config: DenoiserConfig, dtype: DType, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = Self::param_shapes(&config);
        if expected.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(tensors.len());
        for ((name, shape), (got_name, t)) in expected.into_iter().zip(tensors) {
            if name != got_name || t.dims() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {got_name} {:?} does not match {name} {shape:?}",
                    t.dims()
                )));
            }
            params.push((name, Var::from_tensor(&t.to_dtype(dtype)?)?));
        }
        Self::assemble(config, dtype, params)
    }

    fn assemble(config: DenoiserConfig, dtype: DType, params: Vec<(String, Var)>) -> Result<Self> {
        let device = Device::Cpu;
        let l = config.seq_len();
        let (elem, attr): (Vec<u32>, Vec<u32>) = (0..l)
            .map(|p| {
                let (i, j) = position_indices(p);
                (i as u32, j as u32)
            })
            .unzip();
        let ids = Vocabulary::unfitted(config.num_categories, config.bins, QuantizerKind::Kmeans);
        Ok(DenoiserNet {
            element_index: Tensor::from_vec(elem, l, &device)?,
            attribute_index: Tensor::from_vec(attr, l, &device)?,
            position_index: Tensor::arange(0u32, l as u32, &device)?,
            config,
            ids,
            device,
            dtype,
            params,
        })
    }

    /// Parameter names and shapes in creation order.
    pub fn param_shapes(c: &DenoiserConfig) -> Vec<(String, Vec<usize>)> {
        let d = c.embed_dim;
        let k = c.vocab_size();
        let mut out: Vec<(String, Vec<usize>)> = vec![("tok_emb.weight".into(), vec![k, d])];
        if c.decoupled_pe {
            out.push(("elem_emb.weight".into(), vec![c.max_elements, d]));
            out.push(("attr_emb.weight".into(), vec![5, d]));
        } else {
            out.push(("pos_emb.weight".into(), vec![c.seq_len(), d]));
        }
        let mut linear = |name: String, o: usize, i: usize| {
            out.push((format!("{name}.weight"), vec![o, i]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        linear("time.fc1".into(), d, d);
        linear("time.fc2".into(), d, d);
        for i in 0..c.layers {
            linear(format!("layers.{i}.ada1"), 2 * d, d);
            linear(format!("layers.{i}.attn.qkv"), 3 * d, d);
            linear(format!("layers.{i}.attn.out"), d, d);
            linear(format!("layers.{i}.ada2"), 2 * d, d);
            linear(format!("layers.{i}.ff.fc1"), c.hidden_dim, d);
            linear(format!("layers.{i}.ff.fc2"), d, c.hidden_dim);
        }
        linear("final.ada".into(), 2 * d, d);
        linear("head".into(), k, d);
        out
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, v)| v.elem_count()).sum()
    }

    fn p(&self, name: &str) -> &Tensor {
        self.param(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .as_tensor()
    }

    /// Affine layer over the last dimension; leading dims are folded into
    /// one matmul.
    fn dense(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let w = self.p(&format!("{name}.weight"));
        let bias = self.p(&format!("{name}.bias"));
        let dims = x.dims().to_vec();
        let din = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / din;
        let y = x.reshape((rows, din))?.matmul(&w.t()?)?.broadcast_add(bias)?;
        let mut out = dims;
        *out.last_mut().expect("non-scalar input") = w.dim(0)?;
        Ok(y.reshape(out)?)
    }

    fn timestep_embedding(&self, ts: &[usize]) -> Result<Tensor> {
        let d = self.config.embed_dim;
        let half = d / 2;
        let mut data = vec![0.0f64; ts.len() * d];
        for (b, &t) in ts.iter().enumerate() {
            for k in 0..half {
                let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
                let a = t as f64 * freq;
                data[b * d + k] = a.sin();
                data[b * d + half + k] = a.cos();
            }
        }
        Ok(Tensor::from_vec(data, (ts.len(), d), &self.device)?.to_dtype(self.dtype)?)
    }

    fn modulate(&self, x: &Tensor, cond: &Tensor, name: &str) -> Result<Tensor> {
        let d = self.config.embed_dim;
        let m = self.dense(name, cond)?;
        let shift = m.narrow(1, 0, d)?.unsqueeze(1)?;
        let scale = (m.narrow(1, d, d)? + 1.0)?.unsqueeze(1)?;
        Ok(ops::layer_norm(x, NORM_EPS)?.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }

    fn attention(&self, h: &Tensor, name: &str, drop: &mut Dropout) -> Result<Tensor> {
        let (b, l, d) = h.dims3()?;
        let heads = self.config.heads;
        let dh = d / heads;
        let qkv = self.dense(&format!("{name}.qkv"), h)?
            .reshape((b, l, 3, heads, dh))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let att = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?;
        let att = drop.apply(&ops::softmax_last(&att)?)?;
        let out = att
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, l, d))?;
        self.dense(&format!("{name}.out"), &out)
    }

    /// Raw forward pass over a batch; `ts[b]` is the timestep of sequence `b`.
    /// Dropout is active only when a generator is supplied.
    pub fn forward(
        &self,
        batch: &[TokenSeq],
        ts: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        let l = self.config.seq_len();
        let k = self.config.vocab_size();
        if batch.is_empty() || ts.len() != batch.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sequences with {} timesteps",
                batch.len(),
                ts.len()
            )));
        }
        let mut ids = Vec::with_capacity(batch.len() * l);
        for seq in batch {
            if seq.len() != l {
                return Err(Error::ShapeMismatch(format!(
                    "sequence length {} but model expects {l}",
                    seq.len()
                )));
            }
            if let Some(&bad) = seq.tokens().iter().find(|&&t| t as usize >= k) {
                return Err(Error::ShapeMismatch(format!("token id {bad} >= vocabulary size {k}")));
            }
            ids.extend_from_slice(seq.tokens());
        }
        let b = batch.len();
        let d = self.config.embed_dim;
        let mut drop = Dropout {
            p: self.config.dropout,
            rng: dropout_rng,
        };

        let ids = Tensor::from_vec(ids, b * l, &self.device)?;
        let tok = self.p("tok_emb.weight").index_select(&ids, 0)?.reshape((b, l, d))?;
        let pos = if self.config.decoupled_pe {
            let e = self.p("elem_emb.weight").index_select(&self.element_index, 0)?;
            let a = self.p("attr_emb.weight").index_select(&self.attribute_index, 0)?;
            (e + a)?
        } else {
            self.p("pos_emb.weight").index_select(&self.position_index, 0)?
        };
        let mut x = drop.apply(&tok.broadcast_add(&pos.unsqueeze(0)?)?)?;

        let temb = self.timestep_embedding(ts)?;
        let temb = self.dense("time.fc1", &temb)?.silu()?;
        let temb = self.dense("time.fc2", &temb)?;
        let cond = temb.silu()?;

        for i in 0..self.config.layers {
            let h = self.modulate(&x, &cond, &format!("layers.{i}.ada1"))?;
            let a = self.attention(&h, &format!("layers.{i}.attn"), &mut drop)?;
            x = (x + drop.apply(&a)?)?;
            let h = self.modulate(&x, &cond, &format!("layers.{i}.ada2"))?;
            let f = ops::gelu(&self.dense(&format!("layers.{i}.ff.fc1"), &h)?)?;
            let f = self.dense(&format!("layers.{i}.ff.fc2"), &drop.apply(&f)?)?;
            x = (x + drop.apply(&f)?)?;
        }
        let hidden = self.modulate(&x, &cond, "final.ada")?;
        let logits = self.dense("head", &hidden)?;
        Ok(ForwardOutput { logits, hidden })
    }

    /// Global ids a position may predict: its modality range then PAD.
    pub fn local_ids(&self, p: usize) -> Vec<u32> {
        let m = Modality::of_position(p);
        self.ids.range(m).chain(std::iter::once(self.ids.pad())).collect()
    }

    /// Split raw `[batch, 5M, K]` logits into per-position local logit rows
    /// (modality range then PAD).
    pub fn local_logits(&self, logits: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
        let (b, l, k) = logits.dims3()?;
        let flat: Vec<f64> = logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let pad = self.ids.pad() as usize;
        let ranges: Vec<std::ops::Range<usize>> = Modality::ALL
            .iter()
            .map(|m| {
                let r = self.ids.range(*m);
                r.start as usize..r.end as usize
            })
            .collect();
        Ok((0..b)
            .map(|bi| {
                (0..l)
                    .map(|p| {
                        let row = &flat[(bi * l + p) * k..(bi * l + p + 1) * k];
                        let r = &ranges[p % 5];
                        let mut v = row[r.clone()].to_vec();
                        v.push(row[pad]);
                        v
                    })
                    .collect()
            })
            .collect())
    }

    /// Masked logit table for one sequence, dropout off.
    pub fn logit_table(&self, seq: &TokenSeq, t: usize) -> Result<LogitTable> {
        let out = self.forward(std::slice::from_ref(seq), &[t], None)?;
        let k = self.config.vocab_size();
        let local = self.local_logits(&out.logits)?.pop().expect("one sequence");
        let scores = local
            .into_iter()
            .enumerate()
            .map(|(p, row)| {
                let mut full = vec![f64::NEG_INFINITY; k];
                for (id, v) in self.local_ids(p).into_iter().zip(row) {
                    full[id as usize] = v;
                }
                full
            })
            .collect();
        Ok(LogitTable { scores })
    }

    /// `p̃(z̃_0 | z_t)` per sequence and position over local ordinary states
    /// (PAD last), all sequences at the same timestep.
    pub fn predict_x0(&self, batch: &[TokenSeq], t: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let ts = vec![t; batch.len()];
        let out = self.forward(batch, &ts, None)?;
        let local = self.local_logits(&out.logits)?;
        Ok(local
            .into_iter()
            .map(|rows| rows.iter().map(|r| softmax(r)).collect())
            .collect())
    }

    /// Mean-pooled final hidden state at `t = 1`, one vector per sequence.
    pub fn embed(&self, batch: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
        let ts = vec![1; batch.len()];
        let out = self.forward(batch, &ts, None)?;
        let pooled = out.hidden.mean(1)?.to_dtype(DType::F64)?;
        Ok(pooled.to_vec2()?)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn net(decoupled: bool) -> DenoiserNet {
        let mut c = DenoiserConfig::tiny(3, 4);
        c.decoupled_pe = decoupled;
        DenoiserNet::new(c, DType::F32, 5).unwrap()
    }

    fn seq(n: &DenoiserNet) -> TokenSeq {
        let v = Vocabulary::uniform(3, 4);
        let mut s = TokenSeq::filled(n.config().max_elements, v.mask());
        s.0[0] = 1;
        s.0[1] = v.range_start(Modality::X) + 2;
        s
    }

    #[test]
    fn deterministic_without_dropout() {
        let n = net(true);
        let s = seq(&n);
        assert_eq!(n.logit_table(&s, 7).unwrap(), n.logit_table(&s, 7).unwrap());
    }

    #[test]
    fn masking_invariants() {
        for decoupled in [true, false] {
            let n = net(decoupled);
            let v = Vocabulary::uniform(3, 4);
            let table = n.logit_table(&seq(&n), 3).unwrap();
            for (p, row) in table.scores.iter().enumerate() {
                let m = Modality::of_position(p);
                assert_eq!(row[v.mask() as usize], f64::NEG_INFINITY);
                for (id, s) in row.iter().enumerate() {
                    let allowed = v.range(m).contains(&(id as u32)) || id as u32 == v.pad();
                    assert_eq!(allowed, s.is_finite(), "p={p} id={id}");
                }
                let probs = softmax(row);
                let mass: f64 = probs
                    .iter()
                    .enumerate()
                    .filter(|(id, _)| v.range(m).contains(&(*id as u32)) || *id as u32 == v.pad())
                    .map(|(_, p)| p)
                    .sum();
                assert!((mass - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn timestep_changes_output() {
        let n = net(true);
        let s = seq(&n);
        assert_ne!(n.logit_table(&s, 1).unwrap(), n.logit_table(&s, 50).unwrap());
    }

    #[test]
    fn shape_errors() {
        let n = net(true);
        assert!(matches!(
            n.forward(&[TokenSeq(vec![0; 3])], &[1], None),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
