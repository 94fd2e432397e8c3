use agedict::dataset::{compute_average_faces, read_sample, write_sample, SampleFormat};
use agedict::dictionary_learning::{personalized_closed_form, project_columns_to_unit_ball};
use agedict::model_store;
use agedict::planted::{generate, PlantedConfig};
use agedict::sparse_coding::{kkt_residual, lasso_objective, soft_threshold, solve_lasso};
use agedict::DatasetBundle;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn lasso_instance() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, f64)> {
    (1usize..=8, 1usize..=10, prop::sample::select(vec![0.0, 0.01, 0.1, 1.0])).prop_flat_map(|(d, k, lambda)| {
        (
            matrix(d, k, 2.0),
            prop::collection::vec(-2.0..2.0, d).prop_map(DVector::from_vec),
            Just(lambda),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lasso_meets_optimality_conditions((design, target, lambda) in lasso_instance()) {
        let sol = solve_lasso(&design, &target, lambda, 1e-9, 10_000).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(kkt_residual(&design, &target, lambda, &sol.coef) <= 1e-8);
        let zero = DVector::zeros(design.ncols());
        prop_assert!(lasso_objective(&design, &target, lambda, &sol.coef)
            <= lasso_objective(&design, &target, lambda, &zero) + 1e-12);
    }

    #[test]
    fn lasso_large_penalty_gives_zero((design, target, _l) in lasso_instance()) {
        // zero is optimal once lambda exceeds the largest correlation
        let lambda = 2.0 * design.tr_mul(&target).amax() + 1e-9;
        let sol = solve_lasso(&design, &target, lambda, 1e-9, 10_000).unwrap();
        prop_assert!(sol.coef.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn soft_threshold_shrinks(x in -10.0..10.0f64, t in 0.0..5.0f64) {
        let s = soft_threshold(x, t);
        prop_assert!(s.abs() <= x.abs());
        prop_assert!(s == 0.0 || (x - s).abs() - t <= 1e-12);
        prop_assert!(s * x >= 0.0);
    }

    #[test]
    fn personalized_layer_zeroes_gradient(
        (z, r) in (1usize..6, 1usize..6).prop_flat_map(|(m, n)| (matrix(m, n, 5.0), matrix(m, n, 5.0))),
        gamma in 0.0..100.0f64,
    ) {
        let p = personalized_closed_form(&z, &r, gamma);
        let grad = (&p - &z) * 2.0 + (&p - &r) * 2.0 + &p * (2.0 * gamma);
        prop_assert!(grad.amax() <= 1e-10 * (1.0 + z.amax() + r.amax()));
    }

    #[test]
    fn unit_ball_projection(d in (1usize..6, 1usize..6).prop_flat_map(|(m, k)| matrix(m, k, 3.0))) {
        let mut once = d.clone();
        project_columns_to_unit_ball(&mut once);
        for (before, after) in d.column_iter().zip(once.column_iter()) {
            prop_assert!(after.norm() <= 1.0 + 1e-12);
            if before.norm() <= 1.0 {
                prop_assert_eq!(before, after);
            }
        }
        let mut twice = once.clone();
        project_columns_to_unit_ball(&mut twice);
        prop_assert!((twice - once).amax() <= 1e-15);
    }

    #[test]
    fn text_samples_round_trip(values in prop::collection::vec(0.0..=1.0f64, 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        write_sample(&path, &values, SampleFormat::Text, None).unwrap();
        prop_assert_eq!(read_sample(&path).unwrap().values, values);
    }

    #[test]
    fn average_faces_are_group_means(
        (x0, y0, y1) in (1usize..5, 1usize..4).prop_flat_map(|(f, n)| {
            let unit = move |c| prop::collection::vec(0.0..=1.0f64, f * c).prop_map(move |v| DMatrix::from_vec(f, c, v));
            (unit(n), unit(n), unit(n))
        }),
    ) {
        // two bridges: group 1 collects the older side of bridge 0 and the younger side of bridge 1
        let x1 = y0.clone();
        let bundle = DatasetBundle::from_pairs(vec![(x0.clone(), y0.clone()), (x1.clone(), y1.clone())], 1.0, None).unwrap();
        let avg = compute_average_faces(&bundle).unwrap();
        let middle = DMatrix::from_columns(&y0.column_iter().chain(x1.column_iter()).collect::<Vec<_>>());
        prop_assert!((&avg.faces[0] - x0.column_mean()).amax() <= 1e-12);
        prop_assert!((&avg.faces[1] - middle.column_mean()).amax() <= 1e-12);
        prop_assert!((&avg.faces[2] - y1.column_mean()).amax() <= 1e-12);
        for face in &avg.faces {
            prop_assert!(face.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn model_files_round_trip_bitwise(groups in 2usize..5, k in 2usize..6, m in 2usize..6, seed in any::<u64>()) {
        let planted = generate(&PlantedConfig { f: 16, groups, k, m, n: 4, sparsity: 1, seed, ..PlantedConfig::default() }).unwrap();
        let bytes = model_store::to_bytes(&planted.truth).unwrap();
        prop_assert_eq!(bytes.len() as u64, model_store::encoded_len(&planted.truth));
        let back = model_store::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &planted.truth);
        prop_assert_eq!(model_store::to_bytes(&back).unwrap(), bytes);
    }
}
