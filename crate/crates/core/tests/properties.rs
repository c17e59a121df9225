mod common;

fn check(name: &str) {
    let (_, cases, run) = common::all()
        .into_iter()
        .find(|p| p.0 == name)
        .expect("known property");
    if let Err(e) = run(cases) {
        panic!("{name}: {e}");
    }
}

#[test]
fn weiszfeld_objective_never_increases() {
    check("weiszfeld_objective_never_increases");
}

#[test]
fn gm_stays_near_the_good_points() {
    check("gm_stays_near_the_good_points");
}

#[test]
fn subspace_median_within_23_delta() {
    check("subspace_median_within_23_delta");
}

#[test]
fn davis_kahan_holds() {
    check("davis_kahan_holds");
}

#[test]
fn gradient_matches_finite_differences() {
    check("gradient_matches_finite_differences");
}

#[test]
fn least_squares_matches_normal_equations() {
    check("least_squares_matches_normal_equations");
}

#[test]
fn identical_nodes_reproduce_the_baseline() {
    check("identical_nodes_reproduce_the_baseline");
}
