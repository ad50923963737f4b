//! Reverse sampling loop with strong constraints and logit adjustment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nucleus::nucleus;
use super::prior::{adjust_logits, refine_prior, relation_prob_gradient, PriorKind, PriorTable, PriorWarning};
use super::relation::RelationConstraint;
use crate::denoiser::{Checkpoint, DenoiserNet};
use crate::diffusion::{fast_reverse_distribution, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::quantizer::{Modality, Vocabulary};
use crate::seed;
use crate::task::TaskCondition;
use crate::tokens::{unflatten, unflatten_lenient, TokenSeq, ATTRIBUTES};

/// Anything that predicts `p̃(z̃_0 | z_t)`.
pub trait X0Model {
    /// Per sequence and position, a normalized distribution over the local
    /// ordinary states of that position's modality (PAD last).
    fn predict_x0(&self, batch: &[TokenSeq], t: usize) -> Result<Vec<Vec<Vec<f64>>>>;
}

impl X0Model for DenoiserNet {
    fn predict_x0(&self, batch: &[TokenSeq], t: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        DenoiserNet::predict_x0(self, batch, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodePolicy {
    /// Drop slots that mix PAD with content.
    #[default]
    Lenient,
    /// Fail with `PartialElement` on such slots.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub n: usize,
    pub delta: usize,
    pub top_p: f64,
    pub seed: u64,
    /// Sequences denoised together per network call.
    pub batch_size: usize,
    pub decode: DecodePolicy,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            n: 1,
            delta: 1,
            top_p: 1.0,
            seed: 0,
            batch_size: 100,
            decode: DecodePolicy::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub layouts: Vec<Layout>,
    pub sequences: Vec<TokenSeq>,
    /// Slots dropped by lenient decoding.
    pub dropped_elements: usize,
    pub network_calls: usize,
    pub warnings: Vec<PriorWarning>,
}

struct Guidance {
    relations: Vec<RelationConstraint>,
    lambda: f64,
    repeats: usize,
    elements: usize,
}

struct Plan {
    tables: Vec<(PriorTable, f64)>,
    guidance: Vec<Guidance>,
    forbid_pad: Vec<bool>,
    warnings: Vec<PriorWarning>,
}

fn plan(cond: &TaskCondition, vocab: &Vocabulary) -> Result<Plan> {
    let max = cond.max_elements();
    let mut tables = Vec::new();
    let mut guidance = Vec::new();
    let mut warnings = Vec::new();
    for prior in &cond.priors {
        match prior.kind {
            PriorKind::LossGuided => {
                if prior.relations.is_empty() {
                    continue;
                }
                let elements = prior.relations.iter().map(|r| r.i.max(r.j) + 1).max().unwrap_or(0);
                guidance.push(Guidance {
                    relations: prior.relations.clone(),
                    lambda: prior.lambda,
                    repeats: prior.repeats,
                    elements,
                });
            }
            kind => {
                let noisy = prior
                    .noisy
                    .as_ref()
                    .ok_or_else(|| Error::InvalidCondition("refinement prior without layout".into()))?;
                let (table, w) = refine_prior(noisy, vocab, kind, prior.margin, max)?;
                warnings.extend(w);
                tables.push((table, prior.lambda));
            }
        }
    }
    let mut forbid_pad = vec![false; cond.known.len()];
    for i in cond.known_elements(vocab) {
        for a in 1..ATTRIBUTES {
            forbid_pad[ATTRIBUTES * i + a] = true;
        }
    }
    Ok(Plan {
        tables,
        guidance,
        forbid_pad,
        warnings,
    })
}

fn drop_pad(dist: &mut [f64], pad: usize) {
    let rest: f64 = dist.iter().enumerate().filter(|(s, _)| *s != pad).map(|(_, p)| p).sum();
    if rest > 0.0 {
        dist[pad] = 0.0;
        for p in dist.iter_mut() {
            *p /= rest;
        }
    }
}

fn draw(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = dist.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (s, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = s;
            if u < acc {
                return s;
            }
        }
    }
    last
}

fn point_mass(len: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[at] = 1.0;
    v
}

/// Apply relation guidance to one sequence's reverse distributions in place.
fn guide(
    g: &Guidance,
    dists: &mut [Option<Vec<f64>>],
    z: &TokenSeq,
    vocab: &Vocabulary,
) -> Result<()> {
    for _ in 0..g.repeats {
        let current: Vec<[Vec<f64>; 4]> = (0..g.elements)
            .map(|i| {
                std::array::from_fn(|a| {
                    let p = ATTRIBUTES * i + 1 + a;
                    let m = Modality::GEOMETRIC[a];
                    match &dists[p] {
                        Some(d) => d.clone(),
                        None => {
                            let local = vocab.to_local(m, z.0[p]).expect("checked modality");
                            point_mass(vocab.ordinary_states(m) + 2, local)
                        }
                    }
                })
            })
            .collect();
        let grads = match relation_prob_gradient(&current, &g.relations, vocab) {
            Ok((_, grads)) => grads,
            // Nothing to steer yet at this step.
            Err(Error::NoGeometricMass { .. }) => return Ok(()),
            Err(e) => return Err(e),
        };
        for (i, eg) in grads.iter().enumerate() {
            for (a, grad) in eg.iter().enumerate() {
                let p = ATTRIBUTES * i + 1 + a;
                if let Some(d) = dists[p].as_mut() {
                    let pi: Vec<f64> = grad.iter().map(|x| -x).collect();
                    *d = adjust_logits(d, &pi, g.lambda, p)?;
                }
            }
        }
    }
    Ok(())
}

/// Run the reverse chain for `opts.n` sequences.
pub fn sample_sequences<M: X0Model>(
    model: &M,
    schedule: &DiffusionSchedule,
    vocab: &Vocabulary,
    cond: &TaskCondition,
    opts: &SampleOptions,
) -> Result<(Vec<TokenSeq>, usize, Vec<PriorWarning>)> {
    sample_sequences_each(model, schedule, vocab, &vec![cond.clone(); opts.n], opts)
}

/// Run the reverse chain once per condition; sequence `i` follows
/// `conds[i]`. `opts.n` is ignored. All conditions must share one length.
pub fn sample_sequences_each<M: X0Model>(
    model: &M,
    schedule: &DiffusionSchedule,
    vocab: &Vocabulary,
    conds: &[TaskCondition],
    opts: &SampleOptions,
) -> Result<(Vec<TokenSeq>, usize, Vec<PriorWarning>)> {
    let steps = schedule.steps();
    if opts.delta == 0 || !steps.is_multiple_of(opts.delta) {
        return Err(Error::InvalidArgument(format!(
            "step size {} does not divide {steps} diffusion steps",
            opts.delta
        )));
    }
    if !(opts.top_p > 0.0 && opts.top_p <= 1.0) {
        return Err(Error::InvalidArgument(format!("top_p {} not in (0,1]", opts.top_p)));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let Some(first) = conds.first() else {
        return Ok((Vec::new(), 0, Vec::new()));
    };
    let len = first.known.len();
    let mut plans = Vec::with_capacity(conds.len());
    let mut warnings = Vec::new();
    for (i, cond) in conds.iter().enumerate() {
        if cond.known.len() != len {
            return Err(Error::InvalidCondition(format!(
                "condition {i} has {} positions, expected {len}",
                cond.known.len()
            )));
        }
        cond.validate(vocab)?;
        // Identical conditions share one plan.
        if i > 0 && cond == &conds[i - 1] {
            plans.push(None);
            continue;
        }
        let mut pl = plan(cond, vocab)?;
        warnings.append(&mut pl.warnings);
        plans.push(Some(pl));
    }
    let mut plan_of = Vec::with_capacity(conds.len());
    for (i, p) in plans.iter().enumerate() {
        plan_of.push(if p.is_some() { i } else { plan_of[i - 1] });
    }
    let n = conds.len();
    let mut out = Vec::with_capacity(n);
    let mut calls = 0;
    let mut start = 0;
    while start < n {
        let end = (start + opts.batch_size).min(n);
        let mut rngs: Vec<ChaCha8Rng> = (start..end)
            .map(|i| ChaCha8Rng::seed_from_u64(seed::derive_indexed(opts.seed, "sample", i as u64)))
            .collect();
        let mut z: Vec<TokenSeq> = conds[start..end].iter().map(|c| c.known.clone()).collect();
        let mut t = steps;
        while t > 0 {
            let probs0 = model.predict_x0(&z, t)?;
            calls += 1;
            for (b, seq) in z.iter_mut().enumerate() {
                let cond = &conds[start + b];
                let plan = plans[plan_of[start + b]].as_ref().expect("plan present");
                let mut dists: Vec<Option<Vec<f64>>> = vec![None; len];
                for p in 0..len {
                    if cond.mask[p] {
                        continue;
                    }
                    let m = Modality::of_position(p);
                    let pad = vocab.ordinary_states(m);
                    let zl = vocab.to_local(m, seq.0[p]).ok_or(Error::ModalityMismatch {
                        position: p,
                        token: seq.0[p],
                        modality: m.name(),
                    })?;
                    let mut p0 = probs0[b][p].clone();
                    if plan.forbid_pad[p] {
                        drop_pad(&mut p0, pad);
                    }
                    let mut rev = fast_reverse_distribution(&p0, zl, t, opts.delta, schedule, m);
                    if plan.forbid_pad[p] {
                        drop_pad(&mut rev, pad);
                    }
                    for (table, lambda) in &plan.tables {
                        if let Some(pi) = &table[p] {
                            rev = adjust_logits(&rev, pi, *lambda, p)?;
                        }
                    }
                    dists[p] = Some(rev);
                }
                for g in &plan.guidance {
                    guide(g, &mut dists, seq, vocab)?;
                }
                for (p, d) in dists.into_iter().enumerate() {
                    if let Some(d) = d {
                        let m = Modality::of_position(p);
                        let s = draw(&nucleus(&d, opts.top_p), &mut rngs[b]);
                        seq.0[p] = vocab.to_global(m, s);
                    }
                }
                for p in 0..len {
                    assert!(
                        !cond.mask[p] || seq.0[p] == cond.known.0[p],
                        "strong constraint broken at position {p}"
                    );
                }
            }
            t -= opts.delta;
        }
        out.extend(z);
        start = end;
    }
    Ok((out, calls, warnings))
}

fn decode_all(sequences: Vec<TokenSeq>, calls: usize, warnings: Vec<PriorWarning>, vocab: &Vocabulary, decode: DecodePolicy) -> Result<SampleOutput> {
    let mut layouts = Vec::with_capacity(sequences.len());
    let mut dropped_elements = 0;
    for seq in &sequences {
        match decode {
            DecodePolicy::Strict => layouts.push(unflatten(seq, vocab)?),
            DecodePolicy::Lenient => {
                let (l, d) = unflatten_lenient(seq, vocab)?;
                dropped_elements += d;
                layouts.push(l);
            }
        }
    }
    Ok(SampleOutput {
        layouts,
        sequences,
        dropped_elements,
        network_calls: calls,
        warnings,
    })
}

/// Sample and decode layouts.
pub fn sample<M: X0Model>(
    model: &M,
    schedule: &DiffusionSchedule,
    vocab: &Vocabulary,
    cond: &TaskCondition,
    opts: &SampleOptions,
) -> Result<SampleOutput> {
    let (sequences, calls, warnings) = sample_sequences(model, schedule, vocab, cond, opts)?;
    decode_all(sequences, calls, warnings, vocab, opts.decode)
}

/// Sample and decode one layout per condition.
pub fn sample_each<M: X0Model>(
    model: &M,
    schedule: &DiffusionSchedule,
    vocab: &Vocabulary,
    conds: &[TaskCondition],
    opts: &SampleOptions,
) -> Result<SampleOutput> {
    let (sequences, calls, warnings) = sample_sequences_each(model, schedule, vocab, conds, opts)?;
    decode_all(sequences, calls, warnings, vocab, opts.decode)
}

/// [`sample`] with a checkpoint's network, schedule and vocabulary.
pub fn sample_checkpoint(ckpt: &Checkpoint, cond: &TaskCondition, opts: &SampleOptions) -> Result<SampleOutput> {
    let schedule = ckpt.diffusion_schedule()?;
    sample(&ckpt.net, &schedule, &ckpt.vocab, cond, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleConfig;
    use crate::layout::{BBox, Element};

    /// Ignores its input and predicts uniform `p̃`.
    struct Uniform {
        vocab: Vocabulary,
    }

    impl X0Model for Uniform {
        fn predict_x0(&self, batch: &[TokenSeq], _t: usize) -> Result<Vec<Vec<Vec<f64>>>> {
            Ok(batch
                .iter()
                .map(|s| {
                    (0..s.len())
                        .map(|p| {
                            let k = self.vocab.ordinary_states(Modality::of_position(p)) + 1;
                            vec![1.0 / k as f64; k]
                        })
                        .collect()
                })
                .collect())
        }
    }

    fn setup() -> (Uniform, DiffusionSchedule, Vocabulary) {
        let v = Vocabulary::uniform(3, 8);
        let s = DiffusionSchedule::for_vocab(
            &ScheduleConfig {
                steps: 10,
                ..Default::default()
            },
            &v,
        )
        .unwrap();
        (Uniform { vocab: v.clone() }, s, v)
    }

    #[test]
    fn full_conditioning_returns_known() {
        let (m, s, v) = setup();
        let l = Layout::new(vec![Element::new(2, BBox::new(0.3125, 0.5625, 0.25, 0.125))]);
        let known = crate::tokens::flatten(&l, &v, 3).unwrap();
        let cond = TaskCondition {
            task: crate::task::TaskKind::Completion,
            mask: vec![true; known.len()],
            known: known.clone(),
            priors: vec![],
        };
        let out = sample(&m, &s, &v, &cond, &SampleOptions { n: 3, ..Default::default() }).unwrap();
        for seq in &out.sequences {
            assert_eq!(seq, &known);
        }
        assert_eq!(out.layouts[0], unflatten(&known, &v).unwrap());
    }

    #[test]
    fn call_count_and_determinism() {
        let (m, s, v) = setup();
        let cond = TaskCondition::unconditional(&v, 4);
        for delta in [1, 2, 5, 10] {
            let o = SampleOptions {
                n: 4,
                delta,
                seed: 3,
                ..Default::default()
            };
            let a = sample(&m, &s, &v, &cond, &o).unwrap();
            let b = sample(&m, &s, &v, &cond, &o).unwrap();
            assert_eq!(a.network_calls, 10 / delta);
            assert_eq!(a.sequences, b.sequences);
            assert!(a.sequences.iter().all(|q| !q.tokens().contains(&v.mask())));
        }
        assert!(sample(&m, &s, &v, &cond, &SampleOptions { delta: 3, ..Default::default() }).is_err());
    }
}
