//! Conditioning tasks: which tokens are known, plus attached weak priors.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::perturb::{perturb, DEFAULT_NOISE_STD};
use crate::error::{Error, Result};
use crate::layout::{BBox, Element, Layout};
use crate::quantizer::{Modality, Vocabulary};
use crate::sampler::prior::{
    PriorKind, PriorSpec, DEFAULT_MARGIN, DEFAULT_REFINE_LAMBDA, DEFAULT_RELATION_LAMBDA, DEFAULT_REPEATS,
};
use crate::sampler::relation::{true_relations, RelationConstraint};
use crate::tokens::{TokenSeq, ATTRIBUTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "uncond")]
    Unconditional,
    /// Category → size + position.
    #[serde(rename = "c")]
    Category,
    /// Category + size → position.
    #[serde(rename = "c+s")]
    CategorySize,
    #[serde(rename = "completion")]
    Completion,
    #[serde(rename = "refine")]
    Refinement,
    #[serde(rename = "relation")]
    Relationship,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Unconditional,
        TaskKind::Category,
        TaskKind::CategorySize,
        TaskKind::Completion,
        TaskKind::Refinement,
        TaskKind::Relationship,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Unconditional => "uncond",
            TaskKind::Category => "c",
            TaskKind::CategorySize => "c+s",
            TaskKind::Completion => "completion",
            TaskKind::Refinement => "refine",
            TaskKind::Relationship => "relation",
        }
    }

    /// Tasks that fix the element count by marking the PAD tail known.
    pub fn fixes_count(self) -> bool {
        !matches!(self, TaskKind::Unconditional | TaskKind::Completion)
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncond" | "unconditional" => Ok(TaskKind::Unconditional),
            "c" | "category" | "c->s+p" => Ok(TaskKind::Category),
            "c+s" | "category_size" | "c+s->p" => Ok(TaskKind::CategorySize),
            "completion" => Ok(TaskKind::Completion),
            "refine" | "refinement" => Ok(TaskKind::Refinement),
            "relation" | "relationship" => Ok(TaskKind::Relationship),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// An element with any subset of its attributes known.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialElement {
    #[serde(default)]
    pub category: Option<u32>,
    /// `[cx, cy, w, h]`, each optional.
    #[serde(default)]
    pub bbox: Option<[Option<f64>; 4]>,
}

impl From<&Element> for PartialElement {
    fn from(e: &Element) -> Self {
        let b = e.bbox.as_array();
        PartialElement {
            category: Some(e.category),
            bbox: Some(b.map(Some)),
        }
    }
}

impl PartialElement {
    fn field(&self, a: usize) -> Option<f64> {
        self.bbox.and_then(|b| b[a])
    }

    fn full(&self) -> Option<Element> {
        let b = self.bbox?;
        Some(Element::new(
            self.category?,
            BBox::new(b[0]?, b[1]?, b[2]?, b[3]?),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOptions {
    pub max_elements: usize,
    pub refine_kind: PriorKind,
    pub refine_lambda: f64,
    pub margin: f64,
    /// Std of the refinement noise added by [`make_condition`].
    pub noise_std: f64,
    pub relation_lambda: f64,
    pub repeats: usize,
    /// Fraction of element pairs that receive a relation.
    pub relation_fraction: f64,
    /// Upper end of the known-element fraction for completion.
    pub completion_fraction: f64,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        ConditionOptions {
            max_elements: crate::layout::DEFAULT_MAX_ELEMENTS,
            refine_kind: PriorKind::RefineDefault,
            refine_lambda: DEFAULT_REFINE_LAMBDA,
            margin: DEFAULT_MARGIN,
            noise_std: DEFAULT_NOISE_STD,
            relation_lambda: DEFAULT_RELATION_LAMBDA,
            repeats: DEFAULT_REPEATS,
            relation_fraction: 0.1,
            completion_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCondition {
    pub task: TaskKind,
    /// MASK wherever unknown.
    pub known: TokenSeq,
    /// `true` where the token is known.
    pub mask: Vec<bool>,
    pub priors: Vec<PriorSpec>,
}

impl TaskCondition {
    pub fn unconditional(vocab: &Vocabulary, max_elements: usize) -> Self {
        TaskCondition {
            task: TaskKind::Unconditional,
            known: TokenSeq::filled(max_elements, vocab.mask()),
            mask: vec![false; ATTRIBUTES * max_elements],
            priors: Vec::new(),
        }
    }

    pub fn max_elements(&self) -> usize {
        self.known.max_elements()
    }

    /// Slots whose category token is known and not PAD.
    pub fn known_elements(&self, vocab: &Vocabulary) -> Vec<usize> {
        (0..self.max_elements())
            .filter(|&i| {
                let p = ATTRIBUTES * i;
                self.mask[p] && self.known.0[p] != vocab.pad()
            })
            .collect()
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCondition(m));
        if self.mask.len() != self.known.len() || !self.known.len().is_multiple_of(ATTRIBUTES) {
            return bad(format!(
                "mask length {} vs known length {}",
                self.mask.len(),
                self.known.len()
            ));
        }
        self.known.check_modalities(vocab)?;
        for (p, (&m, &tok)) in self.mask.iter().zip(self.known.tokens()).enumerate() {
            if m == (tok == vocab.mask()) {
                return bad(format!("position {p}: mask={m} but token {tok}"));
            }
        }
        let elements = self.max_elements();
        for prior in &self.priors {
            prior.validate(elements)?;
        }
        Ok(())
    }

    /// Build a condition from partially specified elements placed in slots
    /// `0..elements.len()`. Which fields are used depends on `task`.
    pub fn from_partial(
        task: TaskKind,
        elements: &[PartialElement],
        relations: Vec<RelationConstraint>,
        vocab: &Vocabulary,
        opts: &ConditionOptions,
    ) -> Result<Self> {
        let max = opts.max_elements;
        let mut cond = TaskCondition::unconditional(vocab, max);
        cond.task = task;
        if task == TaskKind::Unconditional {
            return Ok(cond);
        }
        if elements.len() > max {
            return Err(Error::TooManyElements {
                count: elements.len(),
                max,
            });
        }
        if task.fixes_count() && elements.is_empty() {
            return Err(Error::EmptyLayout("task needs at least one element"));
        }
        let missing = |i: usize, what: &str| {
            Error::InvalidCondition(format!("element {i} lacks {what} required by task {task}"))
        };
        let mut set = |p: usize, tok: u32| {
            cond.known.0[p] = tok;
            cond.mask[p] = true;
        };
        for (i, e) in elements.iter().enumerate() {
            let base = ATTRIBUTES * i;
            if let Some(c) = e.category {
                if c == 0 || c > vocab.num_categories() {
                    return Err(Error::BadCategory {
                        element: i,
                        category: c,
                        num_categories: vocab.num_categories(),
                    });
                }
            }
            let fields: &[usize] = match task {
                TaskKind::Category | TaskKind::Refinement | TaskKind::Relationship => &[],
                TaskKind::CategorySize => &[2, 3],
                _ => &[0, 1, 2, 3],
            };
            match e.category {
                Some(c) => set(base, vocab.category_token(c)),
                None if task != TaskKind::Completion => return Err(missing(i, "a category")),
                None => {}
            }
            for &a in fields {
                match e.field(a) {
                    Some(v) => {
                        if !(0.0..=1.0).contains(&v) {
                            return Err(Error::OutOfRange {
                                element: i,
                                field: ["cx", "cy", "w", "h"][a],
                                value: v,
                            });
                        }
                        set(base + 1 + a, vocab.encode(v, Modality::GEOMETRIC[a])?);
                    }
                    None if task == TaskKind::CategorySize => return Err(missing(i, "w and h")),
                    None => {}
                }
            }
        }
        if task.fixes_count() {
            for p in ATTRIBUTES * elements.len()..ATTRIBUTES * max {
                set(p, vocab.pad());
            }
        }
        match task {
            TaskKind::Refinement => {
                let noisy: Vec<Element> = elements
                    .iter()
                    .enumerate()
                    .map(|(i, e)| e.full().ok_or_else(|| missing(i, "a full noisy box")))
                    .collect::<Result<_>>()?;
                let noisy = Layout::new(
                    noisy
                        .into_iter()
                        .map(|e| Element::new(e.category, e.bbox.clamped(0.0)))
                        .collect(),
                );
                cond.priors.push(PriorSpec::refine(
                    opts.refine_kind,
                    noisy,
                    opts.refine_lambda,
                    opts.margin,
                ));
            }
            TaskKind::Relationship => {
                cond.priors
                    .push(PriorSpec::guided(relations, opts.relation_lambda, opts.repeats));
            }
            _ => {}
        }
        cond.validate(vocab)?;
        Ok(cond)
    }
}

/// Derive a task condition from a ground-truth layout, placed in canonical
/// element order.
pub fn make_condition(
    task: TaskKind,
    layout: &Layout,
    vocab: &Vocabulary,
    opts: &ConditionOptions,
    rng: &mut impl Rng,
) -> Result<TaskCondition> {
    layout.validate(vocab.num_categories(), opts.max_elements)?;
    let layout = layout.canonical();
    let e = layout.len();
    let mut elements: Vec<PartialElement> = layout.elements.iter().map(PartialElement::from).collect();
    let mut relations = Vec::new();
    match task {
        TaskKind::Completion => {
            let most = (opts.completion_fraction * e as f64).floor() as usize;
            let k = rng.random_range(0..=most);
            let mut chosen = sample_indices(rng, e, k).into_vec();
            chosen.sort_unstable();
            elements = chosen.into_iter().map(|i| elements[i].clone()).collect();
        }
        TaskKind::Refinement => {
            let noisy = perturb(&layout, opts.noise_std, rng);
            elements = noisy.elements.iter().map(PartialElement::from).collect();
        }
        TaskKind::Relationship => {
            let pairs: Vec<(usize, usize)> =
                (0..e).flat_map(|i| (i + 1..e).map(move |j| (i, j))).collect();
            if !pairs.is_empty() {
                let k = ((opts.relation_fraction * pairs.len() as f64).round() as usize).max(1);
                let mut chosen = sample_indices(rng, pairs.len(), k).into_vec();
                chosen.sort_unstable();
                for idx in chosen {
                    let (i, j) = pairs[idx];
                    let rels = true_relations(i, j, &layout.elements[i].bbox, &layout.elements[j].bbox);
                    let pick = rng.random_range(0..rels.len());
                    relations.push(rels[pick]);
                }
            }
        }
        _ => {}
    }
    TaskCondition::from_partial(task, &elements, relations, vocab, opts)
}
