use cantor_core::duration::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive maximum of the splitting reward over all boundary vectors.
fn brute_force(a: &AttentionMatrix, min_one: bool) -> Option<f64> {
    fn rec(a: &AttentionMatrix, i: usize, start: usize, acc: f64, min_one: bool, best: &mut Option<f64>) {
        let m = usize::from(min_one);
        if i == a.t - 1 {
            if a.s < start + m {
                return;
            }
            let total = acc + a.row(i)[start..].iter().sum::<f64>();
            if best.map_or(true, |b| total > b) {
                *best = Some(total);
            }
            return;
        }
        for end in start + m..=a.s {
            let mass: f64 = a.row(i)[start..end].iter().sum();
            rec(a, i + 1, end, acc + mass, min_one, best);
        }
    }
    let mut best = None;
    rec(a, 0, 0, 0.0, min_one, &mut best);
    best
}

fn random_stochastic(rng: &mut ChaCha8Rng, t: usize, s: usize) -> AttentionMatrix {
    let mut data = Vec::with_capacity(t * s);
    for _ in 0..t {
        let row: Vec<f64> = (0..s).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / sum));
    }
    AttentionMatrix::new(t, s, data).unwrap()
}

#[test]
fn dp_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let t = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=8);
        let a = random_stochastic(&mut rng, t, s);
        let r = extract_duration_dp(&a, &DpOptions::default()).unwrap();
        assert_eq!(r.reward, brute_force(&a, false).unwrap(), "{t}x{s}");
        assert_eq!(r.durations.iter().sum::<usize>(), s);
        if t <= s {
            let opts = DpOptions { min_duration_one: true, band: None };
            let c = extract_duration_dp(&a, &opts).unwrap();
            assert_eq!(c.reward, brute_force(&a, true).unwrap());
            assert!(c.durations.iter().all(|&d| d >= 1));
        }
    }
}

#[test]
fn wide_band_equals_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let t = rng.gen_range(1..=6);
        let s = rng.gen_range(1..=12);
        let a = random_stochastic(&mut rng, t, s);
        let exact = extract_duration_dp(&a, &DpOptions::default()).unwrap();
        let banded = extract_duration_dp(&a, &DpOptions { min_duration_one: false, band: Some(s) }).unwrap();
        assert_eq!(exact, banded);
    }
}

#[test]
fn narrow_band_stays_near_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random_stochastic(&mut rng, 10, 60);
    let r = extract_duration_dp(&a, &DpOptions { min_duration_one: false, band: Some(2) }).unwrap();
    for i in 1..10 {
        let centre = i as f64 * 6.0;
        assert!((r.boundaries[i] as f64 - centre).abs() <= 4.0);
    }
}

#[test]
fn perfect_diagonal_has_reward_t() {
    let n = 6;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    let a = AttentionMatrix::new(n, n, data).unwrap();
    let b: Vec<usize> = (0..=n).collect();
    assert_eq!(splitting_reward(&a, &b).unwrap().0, n as f64);
    let r = extract_duration_dp(&a, &DpOptions::default()).unwrap();
    assert_eq!(r.reward, n as f64);
}

#[test]
fn zero_duration_boundaries() {
    assert_eq!(durations_from_boundaries(&[0, 2, 3]).unwrap(), vec![2, 1]);
    assert_eq!(durations_from_boundaries(&[0, 0, 7]).unwrap(), vec![0, 7]);
}

proptest! {
    #[test]
    fn durations_reconstruct_boundaries_and_reward(
        t in 1usize..6, s in 1usize..14, seed in 0u64..10_000
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_stochastic(&mut rng, t, s);
        let r = extract_duration_dp(&a, &DpOptions::default()).unwrap();
        prop_assert_eq!(r.durations.iter().sum::<usize>(), s);
        let b = boundaries_from_durations(&r.durations);
        prop_assert_eq!(&b, &r.boundaries);
        prop_assert_eq!(splitting_reward(&a, &b).unwrap().0, r.reward);
        prop_assert!(r.normalized_reward >= 0.0 && r.normalized_reward <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_column_on_last_phoneme_keeps_reward(
        t in 1usize..5, s in 1usize..10, seed in 0u64..10_000
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_stochastic(&mut rng, t, s);
        let r = extract_duration_dp(&a, &DpOptions::default()).unwrap();
        let mut data = Vec::new();
        for i in 0..t {
            data.extend_from_slice(a.row(i));
            data.push(0.0);
        }
        let wide = AttentionMatrix::new(t, s + 1, data).unwrap();
        let mut b = r.boundaries.clone();
        b[t] = s + 1;
        prop_assert_eq!(splitting_reward(&wide, &b).unwrap().0, r.reward);
    }
}
