use std::sync::OnceLock;

use laydiff::layout::{BBox, Element, Layout};
use laydiff::task::{make_condition, ConditionOptions, TaskKind};
use laydiff::tokens::{flatten, unflatten, ATTRIBUTES};
use laydiff::{Modality, QuantizerKind, Vocabulary};
use proptest::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C: u32 = 6;
const M: usize = 25;

fn element() -> impl Strategy<Value = Element> {
    (1..=C, 0.0..=1.0f64, 0.0..=1.0f64, 0.001..=1.0f64, 0.001..=1.0f64)
        .prop_map(|(c, x, y, w, h)| Element::new(c, BBox::new(x, y, w, h)))
}

fn layout() -> impl Strategy<Value = Layout> {
    prop::collection::vec(element(), 0..=M).prop_map(Layout::new)
}

/// A vocabulary with uneven, data-fitted centroids.
fn fitted() -> Vocabulary {
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB
        .get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let layouts: Vec<Layout> = (0..200)
                .map(|_| {
                    let n = rng.random_range(1..=M);
                    Layout::new(
                        (0..n)
                            .map(|_| {
                                // Squared draws crowd the low end.
                                let mut u = || rng.random_range(0.03..=1.0f64).powi(2);
                                Element::new(1, BBox::new(u(), u(), u(), u()))
                            })
                            .collect(),
                    )
                })
                .collect();
            Vocabulary::fit(&layouts, C, 16, QuantizerKind::Kmeans, 2).unwrap().0
        })
        .clone()
}

fn nearest(centroids: &[f64], v: f64) -> f64 {
    *centroids
        .iter()
        .min_by(|a, b| (*a - v).abs().total_cmp(&(*b - v).abs()))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn round_trip_snaps_to_nearest_centroid(l in layout()) {
        for vocab in [Vocabulary::uniform(C, 32), fitted()] {
            let seq = flatten(&l, &vocab, M).unwrap();
            prop_assert_eq!(seq.len(), ATTRIBUTES * M);
            seq.check_modalities(&vocab).unwrap();
            let back = unflatten(&seq, &vocab).unwrap();
            prop_assert_eq!(back.len(), l.len());
            for (a, b) in l.elements.iter().zip(&back.elements) {
                prop_assert_eq!(a.category, b.category);
                for (k, m) in Modality::GEOMETRIC.iter().enumerate() {
                    let want = nearest(vocab.centroids(*m), a.bbox.as_array()[k]);
                    let got = b.bbox.as_array()[k];
                    // Ties between two equidistant centroids may go either way.
                    prop_assert!((got - a.bbox.as_array()[k]).abs() <= (want - a.bbox.as_array()[k]).abs() + 1e-12);
                }
            }
            // Decoded layouts are fixed points.
            prop_assert_eq!(flatten(&back, &vocab, M).unwrap(), seq);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conditions_agree_with_their_source(l in layout(), seed in any::<u64>()) {
        let vocab = Vocabulary::uniform(C, 32);
        let opts = ConditionOptions { max_elements: M, ..ConditionOptions::default() };
        let canon = l.canonical();
        let full = flatten(&canon, &vocab, M).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for task in TaskKind::ALL {
            let needs_elements = task.fixes_count();
            let cond = match make_condition(task, &l, &vocab, &opts, &mut rng) {
                Ok(c) => c,
                Err(_) if needs_elements && l.is_empty() => continue,
                Err(e) => return Err(TestCaseError::fail(format!("{task}: {e}"))),
            };
            cond.validate(&vocab).unwrap();
            let known: Vec<usize> = (0..cond.known.len()).filter(|&p| cond.mask[p]).collect();
            match task {
                TaskKind::Unconditional => prop_assert!(known.is_empty()),
                TaskKind::Category | TaskKind::Refinement | TaskKind::Relationship => {
                    for p in 0..ATTRIBUTES * M {
                        let expect = p % ATTRIBUTES == 0 || p >= ATTRIBUTES * l.len();
                        prop_assert_eq!(cond.mask[p], expect, "{} p={}", task, p);
                        if expect {
                            prop_assert_eq!(cond.known.0[p], full.0[p]);
                        }
                    }
                }
                TaskKind::CategorySize => {
                    for p in 0..ATTRIBUTES * M {
                        let a = p % ATTRIBUTES;
                        let expect = matches!(a, 0 | 3 | 4) || p >= ATTRIBUTES * l.len();
                        prop_assert_eq!(cond.mask[p], expect, "p={}", p);
                        if expect {
                            prop_assert_eq!(cond.known.0[p], full.0[p]);
                        }
                    }
                }
                TaskKind::Completion => {
                    // Known slots form a prefix of fully known elements drawn from the source.
                    let k = known.len() / ATTRIBUTES;
                    prop_assert_eq!(known, (0..ATTRIBUTES * k).collect::<Vec<_>>());
                    prop_assert!(k as f64 <= 0.2 * l.len() as f64);
                    for i in 0..k {
                        let slot = cond.known.slot(i);
                        prop_assert!((0..l.len()).any(|j| full.slot(j) == slot));
                    }
                }
            }
        }
    }
}
