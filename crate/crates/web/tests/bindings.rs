use bst_web::*;

#[test]
fn profile_starts_at_one_and_decays() {
    let v = kernel_profile_values("rbf", 1.0, 1.0, 3.0, 31).unwrap();
    assert_eq!(v.len(), 31);
    assert_eq!(v[0], 1.0);
    assert!(v.windows(2).all(|w| w[1] < w[0]));
    // distance 1 sits at index 10
    assert!((v[10] - (-0.5f64).exp()).abs() < 1e-12);
}

#[test]
fn rq_profile_dominates_rbf() {
    let rbf = kernel_profile_values("rbf", 2.0, 1.0, 2.0, 21).unwrap();
    let rq = kernel_profile_values("rq", 2.0, 1.0, 2.0, 21).unwrap();
    assert!(rq.iter().zip(&rbf).all(|(q, b)| q >= b));
}

#[test]
fn bad_arguments_are_errors() {
    assert!(kernel_profile_values("cosine", 1.0, 1.0, 1.0, 5).is_err());
    assert!(kernel_profile_values("rbf", -1.0, 1.0, 1.0, 5).is_err());
    assert!(morse_density_values("rbf", 1.0, 0, 11, 0).is_err());
}

#[test]
fn density_grid_has_resolution_squared_cells() {
    let g = morse_density_values("rq", 1.0, 50, 11, 0).unwrap();
    assert_eq!(g.len(), 121);
    assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn cloning_returns_two_actions() {
    let a = cloning_actions(1.0, 50, 0).unwrap();
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(mode_centers().len(), 8);
}
