use cellshock::lopatinski::Lopatinski;
use cellshock::{solve_profile, CoupledBurgers, IsentropicEuler, ScalarBurgers, ShockProfile, C64};
use proptest::prelude::*;

fn lopatinskis() -> Vec<Lopatinski> {
    vec![
        Lopatinski::new(&ScalarBurgers { c: 0.4, d: 0.7 }, 0.1).unwrap(),
        Lopatinski::new(&CoupledBurgers::tuned(), 0.1).unwrap(),
        Lopatinski::new(&IsentropicEuler { gamma: 1.4, mach: 1.5 }, 0.1).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_is_homogeneous_of_degree_one(xi in -2.0..2.0f64, re in 0.05..2.0f64, im in -2.0..2.0f64, s in 0.1..10.0f64) {
        let lambda = C64::new(re, im);
        for lop in lopatinskis() {
            let a = lop.value(s * xi, lambda * s).unwrap();
            let b = lop.value(xi, lambda).unwrap() * s;
            prop_assert!((a - b).norm() <= 1e-9 * b.norm().max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn delta_has_conjugation_symmetry(xi in -2.0..2.0f64, re in 0.05..2.0f64, im in -2.0..2.0f64) {
        let lambda = C64::new(re, im);
        for lop in lopatinskis() {
            let a = lop.value(-xi, lambda.conj()).unwrap();
            let b = lop.value(xi, lambda).unwrap().conj();
            prop_assert!((a - b).norm() <= 1e-10 * b.norm().max(1e-12), "{a} vs {b}");
        }
    }
}

#[test]
fn profile_csv_round_trip() {
    let sys = CoupledBurgers::tuned();
    let p = solve_profile(&sys, 0.2, 10.0, 4000).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.csv");
    p.write_csv(&path).unwrap();
    let q = ShockProfile::read_csv(&path, &sys, 0.2).unwrap();
    assert_eq!(p.grid.len(), q.grid.len());
    for x in [-3.3, -0.01, 0.0, 0.7, 5.5] {
        assert!((p.eval(x) - q.eval(x)).amax() < 1e-14, "at {x}");
    }
    assert!(ShockProfile::read_csv(&path, &ScalarBurgers { c: 1.0, d: 0.0 }, 0.2).is_err());
}
