mod support;

fn assert_ok(res: Result<String, String>) {
    match res {
        Ok(msg) => println!("{msg}"),
        Err(msg) => panic!("{msg}"),
    }
}

#[test]
fn mu_identity_holds() {
    assert_ok(support::check_mu_identity());
}

#[test]
fn kt_rule_on_boundary_grid() {
    assert_ok(support::check_kt_grid());
}

#[test]
fn lambda_search_meets_size_constraint() {
    assert_ok(support::check_lambda_search());
}

#[test]
fn linear_moments_unify_the_two_designs() {
    assert_ok(support::check_unification());
}

#[test]
fn two_atom_plan_matches_grid_search() {
    assert_ok(support::check_grid_oracle());
}

#[test]
fn estimators_zero_their_equations() {
    assert_ok(support::check_plug_back());
}

#[test]
fn jacobian_matches_finite_differences() {
    assert_ok(support::check_jacobian());
}

#[test]
fn schur_complement_matches_full_inverse() {
    assert_ok(support::check_schur());
}
