mod common;

use common::*;
use dulab::geometry::HalfInt;
use dulab::replica::*;
use dulab::C64;
use faer::Mat;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

fn twirl_mat() -> Mat<C64> {
    let e = haar_twirl_single();
    Mat::from_fn(16, 16, |r, c| C64::from(e[r][c]))
}

/// Full-space matrix of a transfer matrix, column by column.
fn full_matrix(t: &TransferMatrix) -> Mat<C64> {
    let n = t.dim();
    let mut m = Mat::<C64>::zeros(n, n);
    for c in 0..n {
        let mut e = vec![C64::new(0.0, 0.0); n];
        e[c] = C64::new(1.0, 0.0);
        for (r, v) in t.apply(&e).into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    m
}

fn sorted_by_magnitude(mut v: Vec<C64>) -> Vec<C64> {
    v.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    v
}

#[test]
fn twirl_is_an_idempotent_rank_two_projector() {
    let e = twirl_mat();
    assert!(max_diff(&(&e * &e), &e) < 1e-12);
    let ev = eigenvalues(&e);
    let ones = ev.iter().filter(|z| (*z - 1.0).norm() < 1e-10).count();
    let zeros = ev.iter().filter(|z| z.norm() < 1e-10).count();
    assert_eq!((ones, zeros), (2, 14));
}

#[test]
fn twirl_fixes_both_pairing_patterns() {
    let e = haar_twirl_single();
    for pat in [id_vec(), sw_vec()] {
        for r in 0..16 {
            let v: f64 = (0..16).map(|c| e[r][c] * pat[c]).sum();
            assert!((v - pat[r]).abs() < 1e-14);
        }
    }
}

#[test]
fn t1_closed_form_matches_twirl() {
    for j in [0.0, 0.2, 0.5, 1.0, 2.7] {
        let d = max_diff(&t1_closed_form(j), &t1_from_twirl(j));
        assert!(d < 1e-12, "J={j}: {d:e}");
    }
}

#[test]
fn t1_spectrum_has_two_nonzero_eigenvalues() {
    for j in [0.0, 0.3, 0.5, 1.0, FRAC_PI_8] {
        let ev = sorted_by_magnitude(eigenvalues(&t1_closed_form(j)));
        assert!((ev[0] - 4.0).norm() < 1e-10, "J={j}: {}", ev[0]);
        assert!((ev[1] - 4.0 * lambda(j)).norm() < 1e-10, "J={j}: {}", ev[1]);
        assert!(ev[2..].iter().all(|z| z.norm() < 1e-10));
    }
    let ev = sorted_by_magnitude(eigenvalues(&t1_closed_form(0.0)));
    assert!((ev[1] - 4.0 / 3.0).norm() < 1e-10);
}

#[test]
fn t1_element_at_pi_over_eight() {
    // Row and column both on the first pattern only: index 0 is in ID and SW,
    // so pick an index that is in ID but not SW.
    let idx = (0..16).find(|&s| id_vec()[s] == 1.0 && sw_vec()[s] == 0.0).unwrap();
    let v = t1_closed_form(FRAC_PI_8)[(idx, idx)];
    assert!((v.re - 11.0 / 9.0).abs() < 1e-14 && v.im == 0.0);
}

#[test]
fn built_t1_and_t3_at_zero_equal_the_closed_form() {
    for j in [0.3, 0.5, 1.0] {
        let want = t1_closed_form(j);
        let t1 = build_t1(j).unwrap();
        assert_eq!(t1.dim(), 16);
        assert!(max_diff(&full_matrix(&t1), &want) < 1e-12);
        let t3 = build_t3(j, HalfInt::int(0)).unwrap();
        assert!(max_diff(&full_matrix(&t3), &want) < 1e-12);
    }
}

#[test]
fn t1_leading_spectrum_weights() {
    let j = 0.5;
    let lines = build_t1(j).unwrap().leading_spectrum(2).unwrap();
    assert_eq!(lines.len(), 2);
    assert!((lines[0].value - 4.0).norm() < 1e-10);
    assert!((lines[0].weight - 1.0).abs() < 1e-10);
    assert!((lines[1].value - 4.0 * lambda(j)).norm() < 1e-10);
    assert!((lines[1].weight - 3.0).abs() < 1e-10);
}

#[test]
fn t1_prediction_follows_the_light_cone_law() {
    let (j, l) = (0.5, 8);
    let t1 = build_t1(j).unwrap();
    for t in 0..5 {
        let got = t1.predict(l, t).unwrap();
        let want = f_local(l, t, HalfInt::int(0), j);
        assert!(rel(got, want) < 1e-10, "t={t}: {got} {want}");
    }
}

#[test]
fn t2_leading_eigenvalue_and_weight() {
    for j in [0.3, 0.5, 1.0] {
        let t2 = build_t2(j, HalfInt::int(-1)).unwrap();
        let lines = t2.leading_spectrum(3).unwrap();
        assert!((lines[0].value - 2.0).norm() < 1e-8, "J={j}: {}", lines[0].value);
        assert!((lines[0].weight - nu_max(1)).abs() < 1e-8, "J={j}: {}", lines[0].weight);
        assert_eq!(nu_max(1), 14.0);
    }
}

#[test]
fn t2_spectrum_is_real_and_bounded() {
    let t2 = build_t2(0.5, HalfInt::int(-1)).unwrap();
    let red = t2.reduced().expect("dense at |d| = 1");
    for z in eigenvalues(red) {
        assert!(z.im.abs() < 1e-8, "{z}");
        assert!(z.norm() <= 2.0 + 1e-8, "{z}");
    }
}

#[test]
fn t2_reduced_and_full_space_agree() {
    let t2 = build_t2(0.5, HalfInt::int(-1)).unwrap();
    let (l, _) = t2.boundaries();
    let full = t2.project(&t2.apply(&t2.apply(l)));
    let reduced = t2.apply_reduced(&t2.project(&t2.apply(l)));
    let d = full.iter().zip(&reduced).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(d < 1e-10, "{d:e}");
}

#[test]
fn t2_decay_at_half_coupling() {
    let dec = t2_decay(&build_t2(0.5, HalfInt::int(-1)).unwrap()).unwrap();
    assert!(dec.gamma > 0.0 && dec.gamma < 1.0);
    assert!((dec.nu_max - 14.0).abs() < 1e-8);
    assert!(dec.c > 0.0);
}

#[test]
fn t2_half_integer_d_matches_its_closed_form() {
    // At d = -1/2 the value is exact and time independent.
    let (j, l) = (0.5, 8);
    let t2 = build_t2(j, HalfInt(-1)).unwrap();
    for t in 1..4 {
        let got = t2.predict(l, t).unwrap();
        let want = f_xybar_local(l, t, HalfInt(-1), j, 0.0, 0.0);
        assert!(rel(got, want) < 1e-10, "t={t}: {got} {want}");
    }
}

#[test]
fn gamma_decreases_with_distance() {
    let g1 = t2_decay(&build_t2(0.5, HalfInt::int(-1)).unwrap()).unwrap().gamma;
    let g2 = t2_decay(&build_t2(0.5, HalfInt::int(-2)).unwrap()).unwrap().gamma;
    assert!(g2 < g1, "{g2} {g1}");
}

#[test]
fn matrix_free_spectrum_is_stable_in_the_iteration_cap() {
    let base = build_t2(0.5, HalfInt::int(-2)).unwrap();
    assert!(base.reduced().is_none());
    let reference = t2_decay(&base).unwrap();
    assert!((reference.nu_max - nu_max(2)).abs() < 1e-8);
    for steps in [40, 64] {
        let d = t2_decay(&base.clone().with_krylov_steps(steps)).unwrap();
        assert!((d.gamma - reference.gamma).abs() < 1e-10, "{steps}: {}", d.gamma);
        assert!((d.nu_max - reference.nu_max).abs() < 1e-8);
        assert!((d.nu - reference.nu).abs() < 1e-6 * reference.nu.abs());
    }
}

#[test]
fn t3_at_minus_one() {
    for j in [0.3, 0.5, 1.0] {
        let t3 = build_t3(j, HalfInt::int(-1)).unwrap();
        let lines = t3.leading_spectrum(4).unwrap();
        assert!((lines[0].value - 4.0).norm() < 1e-8);
        assert!((lines[1].value - 4.0 * lambda(j)).norm() < 1e-8);
        assert!(lines.iter().all(|l| l.weight >= -1e-8), "J={j}: {lines:?}");
        let (e4, e_d) = t3_e_d(&t3).unwrap();
        assert!((e4 - 4.0).abs() < 1e-8);
        let approx = 6.0 / lambda(j);
        assert!(rel(e_d, approx) < 0.1, "J={j}: {e_d} {approx}");
    }
}

#[test]
fn bad_ranges_are_rejected() {
    assert!(build_t2(0.5, HalfInt::int(1)).is_err());
    assert!(build_t3(0.5, HalfInt(-1)).is_err());
    assert!(build_t3(0.5, HalfInt::int(1)).is_err());
    assert!(matches!(build_t2(0.5, HalfInt::int(-5)), Err(dulab::Error::Budget(_))));
    let t2 = build_t2(0.5, HalfInt::int(-2)).unwrap();
    assert!(t2.power(1).is_err());
    assert!(build_t1(0.5).unwrap().leading_spectrum(0).is_err());
}

#[test]
fn closed_forms() {
    assert!((lambda(0.0) - 1.0 / 3.0).abs() < 1e-15);
    assert!((lambda(FRAC_PI_4) - 1.0).abs() < 1e-15);
    assert!(rel(f_local(6, 0, HalfInt::int(0), 0.7), 4f64.powi(6)) < 1e-15);
    assert_eq!(f_local(6, 3, HalfInt::int(2), 0.7), 4f64.powi(5));
    assert_eq!(exp_delta_opmi_macro(0), 0.25);
    assert_eq!(exp_delta_opmi_macro(-1), 1.0 / 16.0);
    assert_eq!(exp_delta_opmi_macro(2), 1.0);
    let j = 0.5;
    let ln = lambda(j).ln().abs();
    assert!((gamma_v(2.0, j) - 2.0 * ln).abs() < 1e-15);
    assert!((gamma_v(0.0, j) - ln).abs() < 1e-15);
    assert!(gamma_v(2.5, j).is_infinite());
    assert_eq!(opmi_macro(3, 1, j), 1.0);
    assert!(rel(opmi_macro(2, 0, j), 1.0 + 3.0 * lambda(j).powi(4)) < 1e-15);
    assert!(rel(f_xybar_local(6, 2, HalfInt::int(1), j, 0.0, 0.0), 4.0 * 64.0) < 1e-15);
}

#[test]
fn prediction_argument_checks() {
    let p = Prediction::FXybarLocal { l: 8, t: 2, d: HalfInt::int(-1), j: 0.5, gamma: 1.2, c: 1.0 };
    assert!(p.evaluate().is_err());
    assert!(Prediction::OpmiMacro { t: 0, d: -1, j: 0.5 }.evaluate().is_err());
    assert_eq!(Prediction::Lambda { j: 0.0 }.evaluate().unwrap(), lambda(0.0));
}
