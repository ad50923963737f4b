use laydiff::data::{gen_synthetic, perturb, read_jsonl, write_jsonl, Corpus, SplitRatios, SyntheticSpec};
use laydiff::layout::{BBox, Element, Layout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn perturbation_noise_has_the_requested_std() {
    let l = Layout::new(vec![Element::new(1, BBox::new(0.5, 0.5, 0.1, 0.1))]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 100_000;
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    for _ in 0..n {
        let b = perturb(&l, 0.1, &mut rng).elements[0].bbox;
        dx.push(b.cx - 0.5);
        dy.push(b.cy - 0.5);
    }
    for d in [dx, dy] {
        let mean = d.iter().sum::<f64>() / n as f64;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((std - 0.1).abs() < 0.002, "std {std}");
        assert!(mean.abs() < 0.002, "mean {mean}");
    }
    let same = perturb(&l, 0.0, &mut rng);
    assert_eq!(same, l);
}

#[test]
fn perturbed_layouts_stay_valid() {
    let l = Layout::new(vec![
        Element::new(2, BBox::new(0.01, 0.99, 0.02, 0.9)),
        Element::new(1, BBox::new(0.5, 0.5, 1.0, 0.001)),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        perturb(&l, 0.3, &mut rng).validate(2, 2).unwrap();
    }
}

#[test]
fn synthetic_category_histogram_matches_spec() {
    let spec = SyntheticSpec {
        size: 10_000,
        seed: 8,
        ..SyntheticSpec::default()
    };
    let corpus = gen_synthetic(&spec, SplitRatios::default()).unwrap();
    let mut counts = [0.0; 5];
    for l in corpus.all() {
        for e in &l.elements {
            counts[e.category as usize - 1] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(spec.category_distribution())
            .map(|(c, p)| (c / total - p).abs())
            .sum::<f64>();
    assert!(tv < 0.02, "TV {tv}");
    assert_eq!(corpus.all().count(), 10_000);
}

#[test]
fn corpus_and_jsonl_round_trip_byte_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        size: 300,
        jitter: 0.02,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let a = gen_synthetic(&spec, SplitRatios::default()).unwrap();
    let b = gen_synthetic(&spec, SplitRatios::default()).unwrap();
    assert_eq!(a, b);
    a.save(dir.path().join("a")).unwrap();
    b.save(dir.path().join("b")).unwrap();
    for f in std::fs::read_dir(dir.path().join("a")).unwrap() {
        let f = f.unwrap();
        let other = dir.path().join("b").join(f.file_name());
        assert_eq!(std::fs::read(f.path()).unwrap(), std::fs::read(other).unwrap());
    }
    let back = Corpus::load(dir.path().join("a")).unwrap();
    assert_eq!(back, a);
    let path = dir.path().join("x.jsonl");
    write_jsonl(&path, &a.test).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), a.test);
}
