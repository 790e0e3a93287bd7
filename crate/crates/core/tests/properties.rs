use ddlqr::lqr::gamma;
use ddlqr::matrix::{
    block_hankel, block_toeplitz_strict_lower, pseudo_inverse, symmetric_eigenvalues, BlockToeplitzSpec,
};
use ddlqr::observability::orthogonal_projector;
use ddlqr::{
    augment_dataset, augment_model, dare_solve, generate_signal, integrator_imc, resonant_imc, simulate, DareOptions,
    GammaForm, LqrWeights, Matrix, Noise, SignalSpec, StateSpaceModel, Vector,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn sized_matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| matrix(r, c))
}

fn stable_model(n: usize, p: usize, q: usize) -> impl Strategy<Value = StateSpaceModel> {
    (matrix(n, n), matrix(n, p), matrix(q, n), 0.1f64..0.95).prop_map(|(a, b, c, rho)| {
        let r = ddlqr::matrix::spectral_radius(&a).max(1e-6);
        StateSpaceModel::new(a * (rho / r), b, c).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hankel_reads_off_samples(signal in (6usize..30, 1usize..4).prop_flat_map(|(t, d)| matrix(t, d)),
                                depth in 1usize..4, start in 0usize..2) {
        let t = signal.nrows();
        let dim = signal.ncols();
        prop_assume!(t >= start + depth);
        let width = t - start - depth + 1;
        let h = block_hankel(&signal, start, depth, width).unwrap();
        prop_assert_eq!(h.shape(), (depth * dim, width));
        for i in 0..depth {
            for j in 0..width {
                for c in 0..dim {
                    prop_assert_eq!(h[(i * dim + c, j)], signal[(start + i + j, c)]);
                }
            }
        }
    }

    #[test]
    fn pseudo_inverse_penrose_conditions(a in sized_matrix(8)) {
        let x = pseudo_inverse(&a, 1e-12).matrix;
        let scale = a.norm().max(1.0);
        prop_assert!((&a * &x * &a - &a).norm() / scale < 1e-10);
        prop_assert!((&x * &a * &x - &x).norm() / x.norm().max(1.0) < 1e-10);
        let ax = &a * &x;
        let xa = &x * &a;
        prop_assert!((&ax - ax.transpose()).norm() < 1e-10);
        prop_assert!((&xa - xa.transpose()).norm() < 1e-10);
    }

    #[test]
    fn pseudo_inverse_of_low_rank_product(l in matrix(6, 2), r in matrix(2, 5)) {
        let a = &l * &r;
        let pi = pseudo_inverse(&a, 1e-12);
        prop_assert!(pi.rank <= 2);
        prop_assert!((&a * &pi.matrix * &a - &a).norm() / a.norm().max(1.0) < 1e-9);
    }

    #[test]
    fn toeplitz_blocks_constant_on_diagonals(blocks in prop::collection::vec(matrix(2, 1), 4)) {
        let order = blocks.len() + 1;
        let t = block_toeplitz_strict_lower(&BlockToeplitzSpec::from_blocks(blocks.clone(), order).unwrap()).unwrap();
        prop_assert_eq!(t.shape(), (2 * order, order));
        for i in 0..order {
            for j in 0..order {
                let block = t.view((2 * i, j), (2, 1));
                if i > j {
                    prop_assert_eq!(block.into_owned(), blocks[i - j - 1].clone());
                } else {
                    prop_assert!(block.iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn projector_identities(seed in 0u64..1000, depth in 1usize..4) {
        let u = generate_signal(&SignalSpec::prbs(300, 1, 1.0, seed)).unwrap();
        let up = block_hankel(&u, 0, depth, 300 - depth + 1).unwrap();
        let p = orthogonal_projector(&up).matrix;
        prop_assert!((&up * &p).amax() < 1e-12);
        prop_assert!((&p * &p - &p).amax() < 1e-12);
        prop_assert!((&p - p.transpose()).amax() < 1e-12);
    }

    #[test]
    fn simulation_is_linear(model in stable_model(3, 2, 2), u1 in matrix(40, 2), u2 in matrix(40, 2),
                            alpha in -2.0f64..2.0) {
        let x0 = Vector::zeros(3);
        let y1 = simulate(&model, &u1, &x0, Noise::none()).unwrap().y;
        let y2 = simulate(&model, &u2, &x0, Noise::none()).unwrap().y;
        let combo = &u1 * alpha + &u2;
        let y = simulate(&model, &combo, &x0, Noise::none()).unwrap().y;
        prop_assert!((y - (y1 * alpha + y2)).amax() < 1e-9);
    }

    #[test]
    fn prbs_is_two_level_and_reproducible(seed in any::<u64>(), amp in 0.1f64..10.0, channels in 1usize..3) {
        let spec = SignalSpec::prbs(500, channels, amp, seed);
        let a = generate_signal(&spec).unwrap();
        prop_assert!(a.iter().all(|&v| v == amp || v == -amp));
        prop_assert_eq!(a, generate_signal(&spec).unwrap());
    }

    #[test]
    fn dare_solution_is_symmetric_psd(model in stable_model(2, 1, 1), qw in 0.1f64..10.0, rw in 0.01f64..10.0) {
        let w = LqrWeights::scaled_identity(1, qw, 1, rw).unwrap();
        let sol = dare_solve(&model, &w, &DareOptions::default()).unwrap();
        prop_assert!((&sol.p - sol.p.transpose()).amax() < 1e-12 * sol.p.amax().max(1.0));
        prop_assert!(symmetric_eigenvalues(&sol.p)[0] > -1e-10);
        prop_assert!(sol.residual < 1e-10);
    }

    #[test]
    fn gamma_forms_agree(model in stable_model(2, 1, 2), blocks in 1usize..6) {
        let s = ddlqr::model_toeplitz(&model, blocks).unwrap();
        let w = LqrWeights::scaled_identity(2, 3.0, 1, 0.5).unwrap();
        let (g1, _) = gamma(&s, &w, blocks, GammaForm::InversionLemma).unwrap();
        let (g2, _) = gamma(&s, &w, blocks, GammaForm::Direct).unwrap();
        prop_assert!((&g1 - &g2).amax() / g2.amax().max(1.0) < 1e-8);
    }

    #[test]
    fn augmented_data_matches_augmented_model(model in stable_model(2, 1, 1), u in matrix(60, 1), resonant in any::<bool>()) {
        let imc = if resonant { resonant_imc(0.3, 1.0).unwrap() } else { integrator_imc() };
        let data = simulate(&model, &u, &Vector::zeros(2), Noise::none()).unwrap();
        let aug = augment_dataset(&data, &imc).unwrap();
        let am = augment_model(&model, &imc).unwrap();
        let direct = simulate(&am, &u, &Vector::zeros(am.states()), Noise::none()).unwrap();
        prop_assert!((&aug.y - &direct.y).amax() < 1e-9 * aug.y.amax().max(1.0));
        prop_assert!((&aug.x - &direct.x).amax() < 1e-9 * aug.x.amax().max(1.0));
    }
}
