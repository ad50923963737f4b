use laydiff::diffusion::{
    corrupt, posterior, posterior_span, training_loss, DiffusionSchedule, ScheduleConfig,
};
use laydiff::quantizer::{Modality, Vocabulary};
use laydiff::tokens::TokenSeq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

/// Dense step matrix `[to][from]` built straight from keep/replace/mask
/// probabilities over `k` ordinary states plus MASK.
fn step_matrix(alpha: f64, beta: f64, gamma: f64, k: usize) -> Mat {
    let mut q = vec![vec![0.0; k + 1]; k + 1];
    for from in 0..k {
        for to in 0..k {
            q[to][from] = beta + if to == from { alpha } else { 0.0 };
        }
        q[k][from] = gamma;
    }
    q[k][k] = 1.0;
    q
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            c[i][j] = (0..n).map(|l| a[i][l] * b[l][j]).sum();
        }
    }
    c
}

fn eye(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn step_dense(s: &DiffusionSchedule, t: usize, m: Modality) -> Mat {
    let q = s.step(t, m);
    step_matrix(q.alpha, q.beta, q.gamma, q.states)
}

/// `Q_t ··· Q_1` by repeated multiplication of independently built steps.
fn products(s: &DiffusionSchedule, m: Modality) -> Vec<Mat> {
    let k = s.states(m);
    let mut out = vec![eye(k + 1)];
    for t in 1..=s.steps() {
        let next = mul(&step_dense(s, t, m), out.last().unwrap());
        out.push(next);
    }
    out
}

fn schedule(steps: usize, k: usize) -> DiffusionSchedule {
    let cfg = ScheduleConfig {
        steps,
        ..ScheduleConfig::default()
    };
    DiffusionSchedule::linear(&cfg, [k; 5]).unwrap()
}

#[test]
fn closed_form_matches_dense_product() {
    for k in [7, 34] {
        let s = schedule(100, k);
        let prods = products(&s, Modality::X);
        for t in 1..=100 {
            let q = step_dense(&s, t, Modality::X);
            for from in 0..=k {
                let col: f64 = (0..=k).map(|to| q[to][from]).sum();
                assert!((col - 1.0).abs() < 1e-9, "t={t} col {from} sums to {col}");
            }
            assert_eq!(q[k][k], 1.0);
            for to in 0..k {
                assert_eq!(q[to][k], 0.0);
            }
            let c = s.cumulative(t, Modality::X);
            for to in 0..=k {
                for from in 0..=k {
                    let d = (c.prob(to, from) - prods[t][to][from]).abs();
                    assert!(d < 1e-9, "K'={k} t={t} [{to}][{from}] off by {d}");
                }
            }
        }
        let last = s.cumulative(100, Modality::X);
        for from in 0..=k {
            assert!(last.prob(k, from) >= 0.999);
        }
    }
}

/// `q(z_{t-1} | z_t, z_0)` by Bayes over the dense matrices.
fn brute_posterior(prods: &[Mat], steps: &[Mat], zt: usize, z0: usize, t: usize) -> Option<Vec<f64>> {
    let k1 = prods[0].len();
    let joint: Vec<f64> = (0..k1).map(|s| steps[t][zt][s] * prods[t - 1][s][z0]).collect();
    let z: f64 = joint.iter().sum();
    (z > 0.0).then(|| joint.iter().map(|j| j / z).collect())
}

#[test]
fn posterior_matches_enumeration() {
    for steps_n in 1..=10 {
        for k in 1..=10 {
            let s = schedule(steps_n, k);
            let prods = products(&s, Modality::Y);
            let mut steps = vec![eye(k + 1)];
            steps.extend((1..=steps_n).map(|t| step_dense(&s, t, Modality::Y)));
            for t in 1..=steps_n {
                for z0 in 0..k {
                    for zt in 0..=k {
                        let ours = posterior(&s, Modality::Y, zt, z0, t);
                        match brute_posterior(&prods, &steps, zt, z0, t) {
                            Some(b) => {
                                let p = ours.unwrap();
                                for (a, e) in p.iter().zip(&b) {
                                    assert!((a - e).abs() < 1e-9, "T={steps_n} K'={k} t={t} zt={zt} z0={z0}");
                                }
                            }
                            None => assert!(ours.is_err()),
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn multi_step_posterior_matches_enumeration() {
    let s = schedule(8, 5);
    let prods = products(&s, Modality::W);
    for t in 2..=8 {
        for delta in 1..=t {
            // Span matrix from t - delta to t.
            let mut span = eye(6);
            for u in t - delta + 1..=t {
                span = mul(&step_dense(&s, u, Modality::W), &span);
            }
            for z0 in 0..5 {
                for zt in 0..=5 {
                    let joint: Vec<f64> = (0..6).map(|v| span[zt][v] * prods[t - delta][v][z0]).collect();
                    let z: f64 = joint.iter().sum();
                    if z == 0.0 {
                        continue;
                    }
                    let p = posterior_span(&s, Modality::W, zt, z0, t, delta).unwrap();
                    for (a, j) in p.iter().zip(&joint) {
                        assert!((a - j / z).abs() < 1e-9);
                    }
                }
            }
        }
    }
}

#[test]
fn worked_two_state_case() {
    let s = DiffusionSchedule::from_steps(&[0.8, 0.8], &[0.1, 0.1], [2; 5]).unwrap();
    let p = posterior(&s, Modality::X, 2, 0, 2).unwrap();
    for (got, want) in p.iter().zip([0.4474, 0.0263, 0.5263]) {
        assert!((got - want).abs() < 1e-4, "{p:?}");
    }
}

#[test]
fn corruption_frequencies_match_cumulative() {
    let vocab = Vocabulary::uniform(3, 4);
    let s = DiffusionSchedule::for_vocab(&ScheduleConfig::default(), &vocab).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z0 = TokenSeq(vec![0, vocab.range_start(Modality::X) + 1, vocab.pad(), vocab.pad(), vocab.pad()]);
    let draws = 40_000;
    for t in [1, 30, 70, 100] {
        let mut counts = vec![[0usize; 7]; 5];
        for _ in 0..draws {
            let zt = corrupt(&z0, t, &s, &vocab, &mut rng).unwrap();
            for (p, &tok) in zt.tokens().iter().enumerate() {
                let m = Modality::of_position(p);
                counts[p][vocab.to_local(m, tok).unwrap()] += 1;
            }
        }
        for p in 0..5 {
            let m = Modality::of_position(p);
            let q = s.cumulative(t, m);
            let from = vocab.to_local(m, z0.0[p]).unwrap();
            for to in 0..=q.states {
                let f = counts[p][to] as f64 / draws as f64;
                let e = q.prob(to, from);
                // Five standard errors.
                let tol = 5.0 * (e * (1.0 - e) / draws as f64).sqrt() + 1e-9;
                assert!((f - e).abs() <= tol, "t={t} p={p} to={to}: {f} vs {e}");
            }
        }
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vocabulary, DiffusionSchedule, Vec<Vec<f64>>, TokenSeq, TokenSeq, usize) {
    let c = rng.random_range(1..4u32);
    let b = rng.random_range(2..5usize);
    let vocab = Vocabulary::uniform(c, b);
    let steps = rng.random_range(2..12);
    let s = DiffusionSchedule::for_vocab(
        &ScheduleConfig {
            steps,
            ..ScheduleConfig::default()
        },
        &vocab,
    )
    .unwrap();
    let t = rng.random_range(1..=steps);
    let mut z0 = Vec::new();
    let mut logits = Vec::new();
    for p in 0..10 {
        let m = Modality::of_position(p);
        let k = vocab.ordinary_states(m) + 1;
        z0.push(vocab.to_global(m, rng.random_range(0..k)));
        logits.push((0..k).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
    }
    let z0 = TokenSeq(z0);
    let zt = corrupt(&z0, t, &s, &vocab, rng).unwrap();
    (vocab, s, logits, z0, zt, t)
}

#[test]
fn training_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for _ in 0..20 {
        let (vocab, s, logits, z0, zt, t) = random_instance(&mut rng);
        let f = |l: &[Vec<f64>]| training_loss(l, &z0, &zt, t, &s, &vocab, 0.1).unwrap().loss;
        let out = training_loss(&logits, &z0, &zt, t, &s, &vocab, 0.1).unwrap();
        for p in 0..logits.len() {
            for j in 0..logits[p].len() {
                let mut a = logits.clone();
                let mut b = logits.clone();
                a[p][j] += h;
                b[p][j] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                let g = out.grad[p][j];
                assert!(
                    (fd - g).abs() <= 1e-3 * fd.abs().max(g.abs()).max(1e-4),
                    "p={p} j={j}: analytic {g} vs fd {fd}"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corrupted_tokens_stay_in_modality(seed in any::<u64>(), t in 1usize..=100) {
        let vocab = Vocabulary::uniform(5, 8);
        let s = DiffusionSchedule::for_vocab(&ScheduleConfig::default(), &vocab).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = TokenSeq((0..50).map(|p| {
            let m = Modality::of_position(p);
            vocab.to_global(m, rng.random_range(0..=vocab.ordinary_states(m)))
        }).collect());
        let zt = corrupt(&z0, t, &s, &vocab, &mut rng).unwrap();
        for (p, &tok) in zt.tokens().iter().enumerate() {
            let m = Modality::of_position(p);
            prop_assert!(tok == vocab.mask() || tok == vocab.pad() || vocab.range(m).contains(&tok));
        }
    }

    #[test]
    fn posterior_is_a_distribution(k in 1usize..12, steps in 1usize..30, seed in any::<u64>()) {
        let s = schedule(steps, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(1..=steps);
        let z0 = rng.random_range(0..k);
        let zt = if rng.random_bool(0.5) { k } else { z0 };
        let p = posterior(&s, Modality::H, zt, z0, t).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }
}
