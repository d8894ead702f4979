use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpu_core::crossbar::{expected_update, ReadDirection};
use rpu_core::{CellParams, Crossbar, MappingCase, Matrix, ReadConfig, UpdateConfig, UpdateCurve, WeightMapping};

fn flat(rows: usize, cols: usize, case: MappingCase) -> Crossbar {
    let p = CellParams::default();
    Crossbar::new(rows, cols, p, WeightMapping::for_case(case), UpdateCurve::flat(p.i0)).unwrap()
}

/// `|y - ref| <= tol * sum |w x|` elementwise, so cancellation does not
/// inflate the relative error.
fn assert_matches(y: &[f64], reference: &[f64], magnitude: &[f64], tol: f64) {
    for (k, ((a, b), m)) in y.iter().zip(reference).zip(magnitude).enumerate() {
        assert!((a - b).abs() <= tol * m.max(1e-300), "output {k}: {a} vs {b} (scale {m})");
    }
}

fn abs_matrix(w: &Matrix) -> Matrix {
    Matrix::from_fn(w.rows(), w.cols(), |i, j| w.get(i, j).abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ideal_reads_are_exact_products(rows in 1usize..=64, cols in 1usize..=64, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.2..=1.2));
        let x: Vec<f64> = (0..rows).map(|_| r.gen_range(-1.0..=1.0)).collect();
        let d: Vec<f64> = (0..cols).map(|_| r.gen_range(-1.0..=1.0)).collect();
        let mut a = flat(rows, cols, MappingCase::B);
        a.set_weights(&w).unwrap();
        let w = a.get_weights();
        let cfg = ReadConfig::ideal();

        let y = a.read(ReadDirection::Forward, &cfg, &x, &mut r).unwrap().y;
        let xa: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        assert_matches(&y, &w.vec_mul(&x), &abs_matrix(&w).vec_mul(&xa), 1e-9);

        let z = a.read(ReadDirection::Backward, &cfg, &d, &mut r).unwrap().y;
        let da: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        assert_matches(&z, &w.mul_vec(&d), &abs_matrix(&w).mul_vec(&da), 1e-9);
    }

    #[test]
    fn update_is_unbiased_on_a_flat_curve(
        x in prop_oneof![-1.0..-0.05f64, 0.05..1.0f64],
        d in prop_oneof![-1.0..-0.05f64, 0.05..1.0f64],
        lr in 0.002..0.02f64,
        case in prop_oneof![Just(MappingCase::A), Just(MappingCase::B), Just(MappingCase::C)],
        seed in any::<u64>(),
    ) {
        let mut a = flat(1, 1, case);
        let ucfg = UpdateConfig::new(10, a.params(), a.mapping()).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let trials = 10_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..trials {
            a.set_weights(&Matrix::zeros(1, 1)).unwrap();
            a.stochastic_update(&ucfg, &[x], &[d], lr, &mut r).unwrap();
            let dw = a.get_weights().get(0, 0);
            s += dw;
            s2 += dw * dw;
        }
        let n = trials as f64;
        let mean = s / n;
        let se = ((s2 / n - mean * mean).max(0.0) / n).sqrt();
        let want = expected_update(&ucfg, lr, x, d);
        // 4 SE keeps the false-failure rate of 256 random cases negligible.
        prop_assert!((mean - want).abs() <= 4.0 * se + 1e-15, "mean {} want {} se {}", mean, want, se);
    }
}

#[test]
fn identical_seeds_give_identical_arrays() {
    let run = |seed: u64| {
        let mut a = Crossbar::new(
            8,
            5,
            CellParams::default(),
            WeightMapping::for_case(MappingCase::B),
            UpdateCurve::knee(48e-9, 0.08),
        )
        .unwrap();
        let ucfg = UpdateConfig::new(10, a.params(), a.mapping()).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut outputs = Vec::new();
        for _ in 0..50 {
            let x: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
            outputs.extend(a.read(ReadDirection::Forward, &ReadConfig::default(), &x, &mut r).unwrap().y);
            a.stochastic_update(&ucfg, &x, &d, 0.01, &mut r).unwrap();
        }
        (outputs, a.voltages().to_vec())
    };
    let (o1, v1) = run(11);
    let (o2, v2) = run(11);
    assert_eq!(o1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), o2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(v1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), v2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(run(12).1, v1);
}
