use chanalloc::assignment::{
    assignment_value, brute_force_optimal, for_each_assignment, is_eps_optimal, is_injective, optimal_value, solve_optimal,
};
use chanalloc::model::QosModel;
use chanalloc::Error;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = QosModel> {
    (any::<u64>(), 1usize..6, 0usize..3, 2usize..6).prop_map(|(seed, n, extra, m)| QosModel::random(seed, n, n + extra, m, 0.5).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn hungarian_matches_enumeration(model in instance()) {
        let q = model.rows();
        let h = solve_optimal(&q).unwrap();
        let b = brute_force_optimal(&q).unwrap();
        prop_assert_eq!(model.to_grid(h.value), model.to_grid(b.value));
        prop_assert_eq!(&h.channel_of, &b.channel_of);
        prop_assert!(is_injective(&h.channel_of));
        prop_assert_eq!(assignment_value(&q, &h.channel_of).unwrap(), h.value);
        prop_assert_eq!(optimal_value(&q).unwrap(), h.value);
    }

    #[test]
    fn no_assignment_beats_the_optimum(model in instance()) {
        let q = model.rows();
        let best = solve_optimal(&q).unwrap();
        let mut first = None;
        for_each_assignment(&q, model.n_channels(), |ch, v| {
            assert!(v <= best.value + 1e-9);
            if first.is_none() && model.to_grid(v) == model.to_grid(best.value) {
                first = Some(ch.to_vec());
            }
        });
        // the reported optimum is the lexicographically first optimal vector
        prop_assert_eq!(first.unwrap(), best.channel_of.clone());
    }

    #[test]
    fn eps_optimality_is_a_value_gap(model in instance(), eps in 0.0f64..3.0) {
        let q = model.rows();
        let best = solve_optimal(&q).unwrap();
        prop_assert!(is_eps_optimal(&q, &best.channel_of, 0.0).unwrap());
        for_each_assignment(&q, model.n_channels(), |ch, v| {
            assert_eq!(is_eps_optimal(&q, ch, eps).unwrap(), best.value - v <= eps + 1e-9);
        });
    }
}

#[test]
fn examples() {
    let a = solve_optimal(&[vec![5.0]]).unwrap();
    assert_eq!((a.channel_of, a.value), (vec![1], 5.0));

    let q = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
    let a = solve_optimal(&q).unwrap();
    assert_eq!((a.channel_of.clone(), a.value), (vec![1, 2], 5.0));
    assert_eq!(brute_force_optimal(&q).unwrap().value, 5.0);
    assert_eq!(assignment_value(&q, &[2, 1]).unwrap(), 4.0);
    assert_eq!(assignment_value(&q, &[0, 0]).unwrap(), 0.0);
    assert!(!is_eps_optimal(&q, &[2, 1], 0.5).unwrap());
    assert!(is_eps_optimal(&q, &[2, 1], 1.0).unwrap());

    let diag: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { 10.0 } else { 1.0 }).collect()).collect();
    let a = solve_optimal(&diag).unwrap();
    assert_eq!((a.channel_of, a.value), (vec![1, 2, 3], 30.0));
    assert_eq!(assignment_value(&diag, &[1, 2, 3]).unwrap(), 30.0);

    let row = vec![vec![1.0, 3.0, 2.0, 3.0]];
    assert_eq!(brute_force_optimal(&row).unwrap().channel_of, vec![2]);
}

#[test]
fn errors() {
    assert!(solve_optimal(&[vec![1.0], vec![2.0]]).is_err());
    assert!(matches!(assignment_value(&[vec![1.0, 2.0]], &[3]), Err(Error::Index { .. })));
    let big: Vec<Vec<f64>> = (0..9).map(|_| vec![1.0; 9]).collect();
    assert!(matches!(brute_force_optimal(&big), Err(Error::Size { .. })));
}
