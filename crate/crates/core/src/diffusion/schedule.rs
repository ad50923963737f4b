use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{Modality, Vocabulary};

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_ALPHA_BAR_END: f64 = 1e-5;
pub const DEFAULT_GAMMA_BAR_END: f64 = 0.9999;

/// A mask-and-replace transition over `states` ordinary states (PAD
/// included) plus an absorbing MASK at local index `states`.
///
/// Entry `(to, from)` is `alpha + beta` on the diagonal, `beta` between
/// distinct ordinary states, `gamma` into MASK, and MASK stays MASK.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskReplace {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub states: usize,
}

impl MaskReplace {
    pub fn identity(states: usize) -> Self {
        MaskReplace {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            states,
        }
    }

    /// Transition with keep probability `alpha` and mask probability
    /// `gamma`; the replace probability fills the rest of each column.
    pub fn from_keep_mask(alpha: f64, gamma: f64, states: usize) -> Self {
        MaskReplace {
            alpha,
            beta: (1.0 - alpha - gamma) / states as f64,
            gamma,
            states,
        }
    }

    pub fn mask_state(&self) -> usize {
        self.states
    }

    /// `q(to | from)`.
    #[inline]
    pub fn prob(&self, to: usize, from: usize) -> f64 {
        let mask = self.states;
        if from == mask {
            return if to == mask { 1.0 } else { 0.0 };
        }
        if to == mask {
            return self.gamma;
        }
        if to == from {
            self.alpha + self.beta
        } else {
            self.beta
        }
    }

    /// `self · earlier` in closed form (apply `earlier` first).
    pub fn after(&self, earlier: &MaskReplace) -> MaskReplace {
        debug_assert_eq!(self.states, earlier.states);
        let alpha = self.alpha * earlier.alpha;
        let keep = (1.0 - self.gamma) * (1.0 - earlier.gamma);
        MaskReplace::from_keep_mask(alpha, 1.0 - keep, self.states)
    }

    /// Dense `(states+1) x (states+1)` matrix indexed `[to][from]`.
    pub fn dense(&self) -> TransitionMatrix {
        let n = self.states + 1;
        let mut m = vec![vec![0.0; n]; n];
        for (to, row) in m.iter_mut().enumerate() {
            for (from, v) in row.iter_mut().enumerate() {
                *v = self.prob(to, from);
            }
        }
        TransitionMatrix(m)
    }
}

/// Dense column-stochastic matrix, `[to][from]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(pub Vec<Vec<f64>>);

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn column(&self, from: usize) -> Vec<f64> {
        self.0.iter().map(|row| row[from]).collect()
    }

    pub fn matmul(&self, rhs: &TransitionMatrix) -> TransitionMatrix {
        let n = self.dim();
        let mut out = vec![vec![0.0; n]; n];
        for (i, row) in out.iter_mut().enumerate() {
            for k in 0..n {
                let a = self.0[i][k];
                if a == 0.0 {
                    continue;
                }
                for (j, v) in row.iter_mut().enumerate() {
                    *v += a * rhs.0[k][j];
                }
            }
        }
        TransitionMatrix(out)
    }

    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub alpha_bar_end: f64,
    pub gamma_bar_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: DEFAULT_STEPS,
            alpha_bar_end: DEFAULT_ALPHA_BAR_END,
            gamma_bar_end: DEFAULT_GAMMA_BAR_END,
        }
    }
}

/// Per-timestep keep/mask probabilities shared by all modalities, with the
/// ordinary-state count of each modality.
///
/// Cumulative keep `alpha_bar[t]` and cumulative mask `gamma_bar[t]` are
/// stored for `t = 0..=T`; per-step values are their ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
    gamma_bar: Vec<f64>,
    states: [usize; 5],
}

impl DiffusionSchedule {
    /// Linear cumulative schedule: `alpha_bar` falls from 1 to
    /// `alpha_bar_end`, `gamma_bar` rises from 0 to `gamma_bar_end`.
    pub fn linear(config: &ScheduleConfig, states: [usize; 5]) -> Result<Self> {
        let t_max = config.steps;
        if t_max < 1 {
            return Err(Error::InvalidArgument("diffusion needs at least one step".into()));
        }
        let alpha_bar = (0..=t_max)
            .map(|t| 1.0 - (t as f64 / t_max as f64) * (1.0 - config.alpha_bar_end))
            .collect();
        let gamma_bar = (0..=t_max)
            .map(|t| (t as f64 / t_max as f64) * config.gamma_bar_end)
            .collect();
        Self::from_cumulative(alpha_bar, gamma_bar, states)
    }

    pub fn for_vocab(config: &ScheduleConfig, vocab: &Vocabulary) -> Result<Self> {
        Self::linear(config, modality_states(vocab))
    }

    /// Schedule from explicit per-step keep and mask probabilities.
    pub fn from_steps(alphas: &[f64], gammas: &[f64], states: [usize; 5]) -> Result<Self> {
        if alphas.len() != gammas.len() || alphas.is_empty() {
            return Err(Error::InvalidArgument(
                "need equally many (>= 1) alphas and gammas".into(),
            ));
        }
        let mut alpha_bar = vec![1.0];
        let mut gamma_bar = vec![0.0];
        for (a, g) in alphas.iter().zip(gammas) {
            let ab = alpha_bar.last().unwrap() * a;
            let gb = 1.0 - (1.0 - gamma_bar.last().unwrap()) * (1.0 - g);
            alpha_bar.push(ab);
            gamma_bar.push(gb);
        }
        Self::from_cumulative(alpha_bar, gamma_bar, states)
    }

    fn from_cumulative(alpha_bar: Vec<f64>, gamma_bar: Vec<f64>, states: [usize; 5]) -> Result<Self> {
        if states.iter().any(|&k| k < 1) {
            return Err(Error::InvalidArgument("every modality needs >= 1 state".into()));
        }
        let s = DiffusionSchedule {
            alpha_bar,
            gamma_bar,
            states,
        };
        for t in 1..=s.steps() {
            let q = s.span(t - 1, t, Modality::Category);
            if !(q.beta >= -1e-15 && q.alpha >= 0.0 && q.gamma >= -1e-15) || !q.beta.is_finite() {
                return Err(Error::InfeasibleSchedule { step: t, beta: q.beta });
            }
        }
        Ok(s)
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// Ordinary-state count (PAD included) of a modality.
    pub fn states(&self, m: Modality) -> usize {
        self.states[m.index()]
    }

    pub fn state_counts(&self) -> [usize; 5] {
        self.states
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn gamma_bar(&self, t: usize) -> f64 {
        self.gamma_bar[t]
    }

    /// Combined transition from step `from` to step `to` (`from <= to`),
    /// i.e. `Q_to ··· Q_{from+1}`.
    pub fn span(&self, from: usize, to: usize, m: Modality) -> MaskReplace {
        assert!(from <= to && to <= self.steps(), "bad span {from}..{to}");
        let k = self.states(m);
        if from == to {
            return MaskReplace::identity(k);
        }
        let alpha = self.alpha_bar[to] / self.alpha_bar[from];
        let keep = (1.0 - self.gamma_bar[to]) / (1.0 - self.gamma_bar[from]);
        MaskReplace::from_keep_mask(alpha, 1.0 - keep, k)
    }

    /// Single-step transition `Q_t`.
    pub fn step(&self, t: usize, m: Modality) -> MaskReplace {
        assert!(t >= 1, "steps start at 1");
        self.span(t - 1, t, m)
    }

    /// Cumulative transition `Q̄_t` in closed form.
    pub fn cumulative(&self, t: usize, m: Modality) -> MaskReplace {
        let k = self.states(m);
        MaskReplace::from_keep_mask(self.alpha_bar[t], self.gamma_bar[t], k)
    }

    pub fn transition(&self, t: usize, m: Modality) -> TransitionMatrix {
        self.step(t, m).dense()
    }

    /// `Q_t Q_{t-1} ··· Q_1` by explicit dense multiplication.
    pub fn cumulative_product(&self, t: usize, m: Modality) -> TransitionMatrix {
        let mut acc = MaskReplace::identity(self.states(m)).dense();
        for s in 1..=t {
            acc = self.transition(s, m).matmul(&acc);
        }
        acc
    }

    pub fn config_echo(&self) -> (Vec<f64>, Vec<f64>) {
        (self.alpha_bar.clone(), self.gamma_bar.clone())
    }
}

/// Ordinary-state counts (PAD included) for each modality of a vocabulary.
pub fn modality_states(vocab: &Vocabulary) -> [usize; 5] {
    let mut s = [0; 5];
    for m in Modality::ALL {
        s[m.index()] = vocab.ordinary_states(m) + 1;
    }
    s
}
