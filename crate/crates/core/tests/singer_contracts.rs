use cantor_core::singer::*;
use cantor_tensor::{finite_diff_report, Graph, GraphConfig, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 7;
const BINS: usize = 9;

fn random(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn example(seed: u64, durations: Vec<usize>) -> SingingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: usize = durations.iter().sum();
    SingingExample {
        id: format!("u{seed}"),
        phonemes: (0..durations.len()).map(|_| rng.gen_range(0..VOCAB)).collect(),
        pitch: (0..s).map(|_| rng.gen_range(40..50)).collect(),
        target: random(seed + 1, s, BINS),
        reference: random(seed + 2, 5, BINS),
        durations,
        singer: 0,
    }
}

fn tiny() -> (SingerModel, ParamStore) {
    let mut store = ParamStore::new();
    let model = SingerModel::new(SingerConfig::tiny(VOCAB, BINS), &mut store).unwrap();
    (model, store)
}

/// Output layer starts at zero, which makes most gradients vanish; give it
/// random weights so every path is exercised.
fn randomize_output(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in ["singer.output.w", "singer.output.b"] {
        let id = store.find(name).unwrap();
        for v in store.get_mut(id).value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let (model, mut store) = tiny();
    randomize_output(&mut store, 3);
    let ex = example(1, vec![2, 0, 3, 1]);
    let report = finite_diff_report(&mut store, 1e-5, None, |s| {
        let mut g = Graph::new(GraphConfig::default());
        let y = model.forward(&mut g, s, &ex.input()).expect("forward");
        let l = g.mse(y, &ex.target)?;
        Ok((g, l))
    })
    .unwrap();
    assert!(report.checked > 1000, "{report:?}");
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn length_regulation_repeats_states() {
    let mut g = Graph::new(GraphConfig::default());
    let x = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let y = length_regulate(&mut g, x, &[2, 0, 3], 5).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 1.0, 2.0, 5.0, 6.0, 5.0, 6.0, 5.0, 6.0]);
    let id = length_regulate(&mut g, x, &[1, 1, 1], 3).unwrap();
    assert_eq!(g.value(id), g.value(x));
    assert!(length_regulate(&mut g, x, &[1, 1, 1], 4).is_err());
}

#[test]
fn regulated_gradient_sums_over_copies() {
    let mut store = ParamStore::new();
    let p = store.add("x", Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, 0.3, 0.7]).unwrap());
    let w = Tensor::matrix(5, 2, (0..10).map(|i| i as f64).collect()).unwrap();
    let mut g = Graph::new(GraphConfig::default());
    let x = g.param(&store, p);
    let y = length_regulate(&mut g, x, &[2, 0, 3], 5).unwrap();
    let wv = g.constant(w);
    let prod = g.mul(y, wv).unwrap();
    let l = g.sum(prod).unwrap();
    g.backward(l).unwrap().accumulate_into(&mut store);
    // Row 0 collects output rows 0 and 1, row 2 collects rows 2 to 4.
    assert_eq!(store.get(p).grad.data(), &[2.0, 4.0, 0.0, 0.0, 18.0, 21.0]);
}

#[test]
fn zero_output_layer_predicts_silence() {
    let (model, store) = tiny();
    let ex = example(2, vec![3, 2, 4]);
    let y = model.predict(&store, &ex.input()).unwrap();
    assert_eq!(y.shape(), &[9, BINS]);
    assert!(y.data().iter().all(|&v| v == 0.0));
    let mut trainer = SingerTrainer::from_parts(model, store, None);
    let mean_sq = ex.target.data().iter().map(|v| v * v).sum::<f64>() / ex.target.numel() as f64;
    assert!((trainer.evaluate(std::slice::from_ref(&ex)).unwrap() - mean_sq).abs() < 1e-12);
    let log = trainer.train_step(&[&ex]).unwrap();
    assert!((log.loss - mean_sq).abs() < 1e-12);
}

#[test]
fn reference_embedding_has_fixed_width() {
    let (model, store) = tiny();
    for frames in [1, 50, 500] {
        let e = model.reference_embedding(&store, &random(frames as u64, frames, BINS)).unwrap();
        assert_eq!(e.len(), 8);
    }
    let zeros = Tensor::zeros(&[7, BINS]);
    assert_eq!(model.reference_embedding(&store, &zeros).unwrap(), model.reference_embedding(&store, &zeros).unwrap());
    assert!(model.reference_embedding(&store, &Tensor::zeros(&[0, BINS])).is_err());
}

#[test]
fn reference_path_is_live() {
    let (model, mut store) = tiny();
    randomize_output(&mut store, 4);
    let ex = example(3, vec![2, 2, 2]);
    let a = model.predict(&store, &ex.input()).unwrap();
    let other = random(99, 6, BINS);
    let b = model.predict(&store, &SingerInput { reference: &other, ..ex.input() }).unwrap();
    assert_eq!(a.shape(), b.shape());
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn examples_in_a_batch_do_not_interact() {
    let (model, mut store) = tiny();
    randomize_output(&mut store, 5);
    let a = example(4, vec![1, 2, 3]);
    let b = example(5, vec![4, 1]);
    let ya = model.predict(&store, &a.input()).unwrap();
    let yb = model.predict(&store, &b.input()).unwrap();
    let mut t1 = SingerTrainer::from_parts(model.clone(), store.clone(), None);
    let mut t2 = SingerTrainer::from_parts(model, store, None);
    let l1 = t1.train_step(&[&a, &b]).unwrap().loss;
    let l2 = t2.train_step(&[&b, &a]).unwrap().loss;
    assert!((l1 - l2).abs() < 1e-12);
    assert_eq!(t1.model.predict(&t1.store, &a.input()).unwrap(), t2.model.predict(&t2.store, &a.input()).unwrap());
    assert_ne!(ya, yb);
}

#[test]
fn invalid_examples_are_skipped() {
    let (model, store) = tiny();
    let mut trainer = SingerTrainer::from_parts(model, store, None);
    let good = example(6, vec![2, 2]);
    let mut bad = example(7, vec![2, 2]);
    bad.durations = vec![2, 3];
    assert!(trainer.train_step(&[&bad]).is_err());
    let log = trainer.train_step(&[&bad, &good]).unwrap();
    assert!(log.loss > 0.0);
}

#[test]
fn singer_table_replaces_reference() {
    let cfg = SingerConfig {
        singer_table: Some(2),
        ..SingerConfig::tiny(VOCAB, BINS)
    };
    let mut store = ParamStore::new();
    let model = SingerModel::new(cfg, &mut store).unwrap();
    let mut ex = example(8, vec![2, 1]);
    ex.singer = 1;
    assert!(model.predict(&store, &ex.input()).is_ok());
    ex.singer = 2;
    assert!(model.predict(&store, &ex.input()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_frames_equal_total_duration(d in prop::collection::vec(0usize..5, 1..6), seed in 0u64..100) {
        prop_assume!(d.iter().sum::<usize>() > 0);
        let (model, store) = tiny();
        let ex = example(seed, d.clone());
        let y = model.predict(&store, &ex.input()).unwrap();
        prop_assert_eq!(y.rows(), d.iter().sum::<usize>());
        let clamped = renormalize_durations(&d, 1);
        if d.iter().sum::<usize>() >= d.len() {
            let c = clamped.unwrap();
            prop_assert_eq!(c.iter().sum::<usize>(), d.iter().sum::<usize>());
            prop_assert!(c.iter().all(|&x| x >= 1));
        } else {
            prop_assert!(clamped.is_err());
        }
    }
}
