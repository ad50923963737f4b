//! Training loop: shuffle elements, flatten, draw `t`, corrupt, optimize.
//!
//! The loss and its gradient with respect to the logits are evaluated in f64
//! outside the autograd graph; backpropagation runs on the surrogate
//! `Σ logits · G`, whose parameter gradient equals the true one.

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{DenoiserConfig, TrainConfig};
use super::network::DenoiserNet;
use crate::diffusion::{corrupt, training_loss, DiffusionSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::quantizer::{Modality, Vocabulary};
use crate::seed;
use crate::tokens::{flatten_shuffled, TokenSeq};

const EMA_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub vb: f64,
    pub aux: f64,
}

pub struct BatchGrad {
    pub loss: f64,
    pub vb: f64,
    pub aux: f64,
    pub grads: GradStore,
}

/// Batch-mean loss and parameter gradients for given corrupted sequences.
pub fn loss_and_grads(
    net: &DenoiserNet,
    z0: &[TokenSeq],
    zt: &[TokenSeq],
    ts: &[usize],
    schedule: &DiffusionSchedule,
    vocab: &Vocabulary,
    lambda: f64,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchGrad> {
    let out = net.forward(zt, ts, dropout_rng)?;
    let (b, l, k) = out.logits.dims3()?;
    let local = net.local_logits(&out.logits)?;
    let mut g = vec![0.0f64; b * l * k];
    let (mut loss, mut vb, mut aux) = (0.0, 0.0, 0.0);
    for (bi, rows) in local.iter().enumerate() {
        let lo = training_loss(rows, &z0[bi], &zt[bi], ts[bi], schedule, vocab, lambda)
            .map_err(|e| match e {
                Error::NonfiniteLoss { .. } => Error::NonfiniteLoss { batch: bi },
                e => e,
            })?;
        loss += lo.loss / b as f64;
        vb += lo.vb / b as f64;
        aux += lo.aux / b as f64;
        for (p, grow) in lo.grad.iter().enumerate() {
            for (id, gv) in net.local_ids(p).into_iter().zip(grow) {
                g[(bi * l + p) * k + id as usize] = gv / b as f64;
            }
        }
    }
    let g = Tensor::from_vec(g, (b, l, k), out.logits.device())?.to_dtype(out.logits.dtype())?;
    let surrogate = out.logits.mul(&g)?.sum_all()?;
    let grads = surrogate.backward()?;
    Ok(BatchGrad { loss, vb, aux, grads })
}

pub struct Trainer {
    net: DenoiserNet,
    opt: AdamW,
    vocab: Vocabulary,
    schedule_config: ScheduleConfig,
    schedule: DiffusionSchedule,
    config: TrainConfig,
    data_rng: ChaCha8Rng,
    corrupt_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    step: usize,
    ema: Option<f64>,
}

impl Trainer {
    pub fn new(
        net: DenoiserNet,
        vocab: Vocabulary,
        schedule_config: ScheduleConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !vocab.is_fitted() {
            return Err(Error::UnfittedVocab("training needs a fitted vocabulary"));
        }
        let c = net.config();
        if c.num_categories != vocab.num_categories() || c.bins != vocab.bins() {
            return Err(Error::ShapeMismatch(format!(
                "model expects C={} B={}, vocabulary has C={} B={}",
                c.num_categories,
                c.bins,
                vocab.num_categories(),
                vocab.bins()
            )));
        }
        let schedule = DiffusionSchedule::for_vocab(&schedule_config, &vocab)?;
        let opt = AdamW::new(
            net.vars(),
            ParamsAdamW {
                lr: config.lr,
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.eps,
                weight_decay: config.weight_decay,
            },
        )?;
        Ok(Trainer {
            data_rng: seed::rng(config.seed, "data"),
            corrupt_rng: seed::rng(config.seed, "corruption"),
            dropout_rng: seed::rng(config.seed, "dropout"),
            net,
            opt,
            vocab,
            schedule_config,
            schedule,
            config,
            step: 0,
            ema: None,
        })
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn ema_loss(&self) -> Option<f64> {
        self.ema
    }

    /// One optimizer step on a batch of layouts.
    pub fn step(&mut self, batch: &[&Layout]) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(Error::EmptyData("empty training batch"));
        }
        let m = self.net.config().max_elements;
        let steps = self.schedule.steps();
        let mut z0 = Vec::with_capacity(batch.len());
        let mut zt = Vec::with_capacity(batch.len());
        let mut ts = Vec::with_capacity(batch.len());
        for layout in batch {
            let seq = flatten_shuffled(layout, &self.vocab, m, &mut self.data_rng)?;
            let t = self.corrupt_rng.random_range(1..=steps);
            zt.push(corrupt(&seq, t, &self.schedule, &self.vocab, &mut self.corrupt_rng)?);
            z0.push(seq);
            ts.push(t);
        }
        let bg = loss_and_grads(
            &self.net,
            &z0,
            &zt,
            &ts,
            &self.schedule,
            &self.vocab,
            self.config.aux_weight,
            Some(&mut self.dropout_rng),
        )
        .map_err(|e| match e {
            Error::NonfiniteLoss { .. } => Error::NonfiniteLoss { batch: self.step },
            e => e,
        })?;
        self.opt.step(&bg.grads)?;
        self.step += 1;
        self.ema = Some(match self.ema {
            None => bg.loss,
            Some(e) => EMA_DECAY * e + (1.0 - EMA_DECAY) * bg.loss,
        });
        Ok(LossRecord {
            step: self.step,
            loss: bg.loss,
            vb: bg.vb,
            aux: bg.aux,
        })
    }

    /// Epochs over `layouts` (reshuffled each epoch) until `epochs` or
    /// `max_steps` is reached. `progress` sees every record.
    pub fn fit(
        &mut self,
        layouts: &[Layout],
        mut progress: impl FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        if layouts.is_empty() {
            return Err(Error::EmptyData("training set is empty"));
        }
        let max_steps = self.config.max_steps.unwrap_or(usize::MAX);
        let mut records = Vec::new();
        let mut order: Vec<usize> = (0..layouts.len()).collect();
        let mut epoch = 0;
        while self.step < max_steps && (self.config.max_steps.is_some() || epoch < self.config.epochs) {
            order.shuffle(&mut self.data_rng);
            for chunk in order.chunks(self.config.batch_size) {
                if self.step >= max_steps {
                    break;
                }
                let batch: Vec<&Layout> = chunk.iter().map(|&i| &layouts[i]).collect();
                let rec = self.step(&batch)?;
                progress(&rec);
                records.push(rec);
            }
            epoch += 1;
        }
        Ok(records)
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            net: self.net,
            vocab: self.vocab,
            schedule: self.schedule_config,
            train: self.config,
            ema_loss: self.ema.unwrap_or(f64::NAN),
        }
    }
}

/// Build a fresh model and train it; parameters are seeded from the
/// training seed.
pub fn train(
    layouts: &[Layout],
    vocab: &Vocabulary,
    model: DenoiserConfig,
    config: TrainConfig,
    schedule: ScheduleConfig,
    progress: impl FnMut(&LossRecord),
) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let net = DenoiserNet::new(model, DType::F32, seed::derive(config.seed, "init"))?;
    let mut trainer = Trainer::new(net, vocab.clone(), schedule, config)?;
    let records = trainer.fit(layouts, progress)?;
    Ok((trainer.into_checkpoint(), records))
}

/// Auxiliary cross-entropy of `z_0` at `t = 1` averaged over positions,
/// without corruption noise other than the `t = 1` draw.
pub fn aux_cross_entropy(
    net: &DenoiserNet,
    layouts: &[Layout],
    vocab: &Vocabulary,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let schedule = DiffusionSchedule::for_vocab(&ScheduleConfig::default(), vocab)?;
    let m = net.config().max_elements;
    let z0: Vec<TokenSeq> = layouts
        .iter()
        .map(|l| crate::tokens::flatten(l, vocab, m))
        .collect::<Result<_>>()?;
    let zt: Vec<TokenSeq> = z0
        .iter()
        .map(|s| corrupt(s, 1, &schedule, vocab, rng))
        .collect::<Result<_>>()?;
    let probs = net.predict_x0(&zt, 1)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (seq, rows) in z0.iter().zip(&probs) {
        for (p, row) in rows.iter().enumerate() {
            let local = vocab
                .to_local(Modality::of_position(p), seq.0[p])
                .expect("flattened token");
            total -= row[local].ln();
            n += 1;
        }
    }
    Ok(total / n as f64)
}
