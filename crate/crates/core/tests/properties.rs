use fuzzyseg::formula::{conjoin, Family, Formula};
use fuzzyseg::fuzzy::{eval_fuzzy, Objective};
use fuzzyseg::grid::{ProbField, Shape};
use fuzzyseg::io::{read_logits, read_mask, read_probs, write_logits, write_mask, write_probs, Image};
use fuzzyseg::oracle::{exact_prob, OracleBudget};
use fuzzyseg::superpixels::{is_connected, slic, SlicConfig};
use fuzzyseg_validation::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn family() -> impl Strategy<Value = Family> {
    proptest::sample::select(Family::ALL.to_vec())
}

/// Formula, probability field and shape for a random tiny instance.
fn instance(family: Family, seed: u64) -> (Formula, ProbField, Shape) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = random_dims(family, 3, &mut rng);
    let classes = rng.gen_range(2..=3);
    let shape = Shape::new(h, w, classes);
    let f = random_formula(family, h, w, classes, &mut rng);
    (f, random_probs(shape, &mut rng), shape)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn independent_atoms_are_exact(
        family in proptest::sample::select(vec![Family::Fs, Family::Scribbles, Family::BboxShallow, Family::Background]),
        seed in any::<u64>(),
    ) {
        let (f, probs, _) = instance(family, seed);
        let fuzzy = eval_fuzzy(&f, &probs).unwrap().log_prob.value();
        let exact = exact_prob(&f, &probs, OracleBudget::default()).unwrap().ln();
        prop_assert!((fuzzy - exact).abs() < 1e-9, "{family}: fuzzy {fuzzy} exact {exact}");
    }

    #[test]
    fn one_hot_fields_decide_discretely(family in family(), seed in any::<u64>()) {
        let (f, _, shape) = instance(family, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let map = random_map(shape.height, shape.width, shape.classes, &mut rng);
        let p = eval_fuzzy(&f, &ProbField::one_hot(&map, shape.classes).unwrap()).unwrap().log_prob.prob();
        prop_assert_eq!(p > 0.5, f.holds(&map), "{} gives {}", family, p);
    }

    #[test]
    fn log_prob_is_a_probability(family in family(), seed in any::<u64>()) {
        let (f, probs, _) = instance(family, seed);
        let r = eval_fuzzy(&f, &probs).unwrap();
        prop_assert!(r.log_prob.value() <= 0.0 && r.log_prob.value().is_finite());
        let parts: f64 = r.per_label_log_prob.values().map(|v| v.value()).sum();
        prop_assert!((parts - r.log_prob.value()).abs() < 1e-9);
    }

    #[test]
    fn gradient_rows_sum_to_zero(family in family(), seed in any::<u64>()) {
        let (f, _, shape) = instance(family, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let logits = random_logits(shape, 3.0, &mut rng);
        let lg = Objective::new(&f, shape).unwrap().loss_and_grad(&logits).unwrap();
        for row in lg.grad.data().chunks(shape.classes) {
            let s: f64 = row.iter().sum();
            prop_assert!(s.abs() < 1e-9, "row sums to {s}");
        }
    }

    #[test]
    fn flat_entry_point_matches(family in family(), seed in any::<u64>()) {
        let (f, _, shape) = instance(family, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let logits = random_logits(shape, 3.0, &mut rng);
        let obj = Objective::new(&f, shape).unwrap();
        let lg = obj.loss_and_grad(&logits).unwrap();
        let (loss, grad) = obj.loss_and_grad_flat(logits.data()).unwrap();
        prop_assert_eq!(loss, lg.loss);
        prop_assert_eq!(grad.as_slice(), lg.grad.data());
        let err = obj.loss_and_grad_flat(&logits.data()[1..]).unwrap_err().to_string();
        prop_assert!(err.contains(&shape.len().to_string()), "{}", err);
    }

    #[test]
    fn formula_json_round_trip(family in family(), seed in any::<u64>()) {
        let (f, probs, _) = instance(family, seed);
        let text = serde_json::to_string(&f).unwrap();
        let back: Formula = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(eval_fuzzy(&back, &probs).unwrap(), eval_fuzzy(&f, &probs).unwrap());
    }

    #[test]
    fn conjunction_adds_log_probs(a in family(), b in family(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // corner-sized grids suit every family
        let (h, w) = random_dims(Family::Corners, 3, &mut rng);
        let shape = Shape::new(h, w, 3);
        let fa = random_formula(a, h, w, 3, &mut rng);
        let fb = random_formula(b, h, w, 3, &mut rng);
        let probs = random_probs(shape, &mut rng);
        let la = eval_fuzzy(&fa, &probs).unwrap().log_prob.value();
        let lb = eval_fuzzy(&fb, &probs).unwrap().log_prob.value();
        let both = eval_fuzzy(&conjoin(vec![fa, fb]).unwrap(), &probs).unwrap().log_prob.value();
        prop_assert!((both - (la + lb)).abs() < 1e-9);
    }

    #[test]
    fn slic_segments_are_connected(seed in any::<u64>(), h in 6usize..20, w in 6usize..20, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..h * w * 3).map(|_| rng.gen()).collect();
        let img = Image::new(h, w, 3, data).unwrap();
        let cfg = SlicConfig { k, ..SlicConfig::default() };
        let sp = slic(&img, &cfg).unwrap();
        prop_assert!(is_connected(&sp));
        prop_assert_eq!(slic(&img, &cfg).unwrap(), sp);
    }
}

#[test]
fn field_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shape = Shape::new(5, 7, 3);
    let probs = random_probs(shape, &mut rng);
    let logits = random_logits(shape, 4.0, &mut rng);
    let map = random_map(5, 7, 3, &mut rng);
    let (pp, lp, mp) = (dir.path().join("p.pft"), dir.path().join("l.pft"), dir.path().join("m.pgm"));
    write_probs(&pp, &probs).unwrap();
    write_logits(&lp, &logits).unwrap();
    write_mask(&mp, &map).unwrap();
    let back = read_probs(&pp).unwrap();
    assert!(back.data().iter().zip(probs.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    let back = read_logits(&lp).unwrap();
    assert!(back.data().iter().zip(logits.data()).all(|(a, b)| (a - b).abs() < 1e-5));
    assert_eq!(read_mask(&mp).unwrap(), map);
}

#[test]
fn missing_file_error_names_path() {
    let path = std::path::Path::new("/definitely/not/here.pft");
    let err = read_probs(path).unwrap_err().to_string();
    assert!(err.contains("/definitely/not/here.pft"), "{err}");
}
