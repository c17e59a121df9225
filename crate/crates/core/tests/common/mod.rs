#![allow(dead_code)]

use std::ops::Range;

use byzfed::attacks::{AttackAdversary, AttackKind, AttackParams};
use byzfed::estimators::{
    federated_power_method, local_power_bases, res_pow_meth, subspace_median,
    subspace_median_federated, subspace_mom, svd_res_cov_est_federated, EstimatorConfig,
};
use byzfed::fed::{FederationConfig, NoAdversary};
use byzfed::gm::{gm_objective, weiszfeld_gm, GmConfig};
use byzfed::linalg::{exact_top_eigenspace, orthonormalize, sd_f, BasisMatrix, DenseMatrix};
use byzfed::lrcs::{generate_lrcs_instance, ls_step, node_gradient, node_objective, LrcsInstance};
use byzfed::rng::{gaussian_matrix, rng_from, Rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng as _;

fn point_cloud(rng: &mut Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    let m = gaussian_matrix(dim, count, rng) * scale;
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

fn random_basis(rng: &mut Rng, n: usize, r: usize) -> BasisMatrix {
    orthonormalize(&gaussian_matrix(n, r, rng)).unwrap()
}

fn tilt(u: &BasisMatrix, size: f64, rng: &mut Rng) -> BasisMatrix {
    let (n, r) = u.as_matrix().shape();
    orthonormalize(&(u.as_matrix() + gaussian_matrix(n, r, rng) * size)).unwrap()
}

fn sym(rng: &mut Rng, n: usize) -> DenseMatrix {
    let g = gaussian_matrix(n, n, rng);
    (&g + g.transpose()) * 0.5
}

/// Minimizer reached by running Weiszfeld far past convergence.
fn reference_gm(points: &[Vec<f64>]) -> f64 {
    let cfg = GmConfig {
        max_iterations: 20_000,
        step_tolerance: 1e-15,
        ..GmConfig::default()
    };
    weiszfeld_gm(points, &cfg).unwrap().objective
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn small_instance(seed: u64, n: usize, q: usize, r: usize, m: usize) -> LrcsInstance {
    generate_lrcs_instance(n, q, r, m, 2, seed).unwrap()
}

fn node_rows(inst: &LrcsInstance, seed: u64) -> Range<usize> {
    inst.node_rows((seed % 2) as usize)
}

pub fn weiszfeld_objective_never_increases(
    (seed, count, dim, iters): (u64, usize, usize, usize),
) -> Result<(), TestCaseError> {
    let mut rng = rng_from(seed, &[1]);
    let points = point_cloud(&mut rng, count, dim);
    let res = weiszfeld_gm(&points, &GmConfig::with_iterations(iters)).unwrap();
    let tol = 1e-12 * res.objective_trace[0].max(1.0);
    for w in res.objective_trace.windows(2) {
        prop_assert!(w[1] <= w[0] + tol, "{:?}", res.objective_trace);
    }
    let at = gm_objective(&points, &res.point).unwrap();
    prop_assert!((at - res.objective).abs() <= tol);
    Ok(())
}

pub fn gm_stays_near_the_good_points(
    (seed, eps, dim, iters): (u64, f64, usize, usize),
) -> Result<(), TestCaseError> {
    let mut rng = rng_from(seed, &[2]);
    let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cn = norm(&center);
    let mut points = Vec::new();
    for _ in 0..6 {
        let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = rng.random_range(0.0..eps) * cn / norm(&dir);
        points.push(
            center
                .iter()
                .zip(&dir)
                .map(|(c, d)| c + len * d)
                .collect::<Vec<f64>>(),
        );
    }
    for _ in 0..4 {
        let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = rng.random_range(0.0..1.0) * cn / norm(&dir);
        points.push(dir.iter().map(|d| len * d).collect());
    }
    let res = weiszfeld_gm(&points, &GmConfig::with_iterations(iters)).unwrap();
    let eps_gm = (res.objective / reference_gm(&points) - 1.0).max(0.0);
    let max_norm = points.iter().map(|p| norm(p)).fold(0.0, f64::max);
    let err = norm(
        &res.point
            .iter()
            .zip(&center)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    prop_assert!(
        err <= 6.0 * eps * cn + 5.0 * eps_gm * max_norm + 1e-12,
        "{err} eps {eps} eps_gm {eps_gm}"
    );
    Ok(())
}

pub fn subspace_median_within_23_delta(
    (seed, n, r, size): (u64, usize, usize, f64),
) -> Result<(), TestCaseError> {
    let mut rng = rng_from(seed, &[3]);
    let u_star = random_basis(&mut rng, n, r);
    let mut bases: Vec<DenseMatrix> = (0..4)
        .map(|_| tilt(&u_star, size, &mut rng).into_matrix())
        .collect();
    let delta = bases
        .iter()
        .map(|b| {
            sd_f(
                &u_star,
                &BasisMatrix::from_orthonormal(b.clone(), 1e-9).unwrap(),
            )
            .unwrap()
        })
        .fold(0.0, f64::max);
    bases.insert(
        rng.random_range(0..5),
        gaussian_matrix(n, r, &mut rng) * 100.0,
    );
    let out = subspace_median(&bases, &GmConfig::with_iterations(20), seed).unwrap();
    prop_assert!(sd_f(&u_star, &out.basis).unwrap() <= 23.0 * delta + 1e-12);
    Ok(())
}

pub fn davis_kahan_holds(
    (seed, n, r, gap, frac): (u64, usize, usize, f64, f64),
) -> Result<(), TestCaseError> {
    let r = r.min(n - 1);
    let mut rng = rng_from(seed, &[4]);
    let q = orthonormalize(&gaussian_matrix(n, n, &mut rng))
        .unwrap()
        .into_matrix();
    let mut eig: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    for e in eig.iter_mut().take(r) {
        *e += gap + 1.0;
    }
    let delta = eig[r - 1] - eig[r];
    let phi = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
    let e = sym(&mut rng, n);
    let e = &e * ((1.0 - 1.0 / 2f64.sqrt()) * delta * frac / e.norm().max(1e-300));
    let e2 = e.singular_values().max();
    let before = exact_top_eigenspace(&phi, r).unwrap();
    let after = exact_top_eigenspace(&(&phi + &e), r).unwrap();
    let dist = sd_f(&before, &after).unwrap();
    prop_assert!(
        dist <= 2.0 * (r as f64).sqrt() * e2 / delta + 1e-10,
        "{dist}"
    );
    Ok(())
}

pub fn gradient_matches_finite_differences(
    (seed, n, q, r): (u64, usize, usize, usize),
) -> Result<(), TestCaseError> {
    let inst = small_instance(seed, n, q, r, 24);
    let mut rng = rng_from(seed, &[5]);
    let rows = node_rows(&inst, seed);
    let u = gaussian_matrix(n, r, &mut rng);
    let b = gaussian_matrix(r, q, &mut rng);
    let dir = gaussian_matrix(n, r, &mut rng);
    let dir = &dir / dir.norm();
    let g = node_gradient(&u, &b, &inst, &rows).unwrap();
    let h = 1e-5;
    let fd = (node_objective(&(&u + &dir * h), &b, &inst, &rows).unwrap()
        - node_objective(&(&u - &dir * h), &b, &inst, &rows).unwrap())
        / (2.0 * h);
    let analytic = g.dot(&dir);
    prop_assert!(
        (fd - analytic).abs() <= 1e-5 * analytic.abs().max(g.norm()),
        "fd {fd} vs {analytic}"
    );
    Ok(())
}

pub fn least_squares_matches_normal_equations(
    (seed, n, q, r): (u64, usize, usize, usize),
) -> Result<(), TestCaseError> {
    let r = r.min(q);
    let inst = small_instance(seed, n, q, r, 30);
    let mut rng = rng_from(seed, &[6]);
    let u = random_basis(&mut rng, n, r).into_matrix();
    let rows = node_rows(&inst, seed);
    let (b, x) = ls_step(&u, &inst, &rows).unwrap();
    for k in 0..q {
        let a = inst
            .sensing_transposed(k)
            .columns_range(rows.clone())
            .transpose();
        let y = inst
            .measurements()
            .view((rows.start, k), (rows.len(), 1))
            .clone_owned();
        let m = &a * &u;
        let bk = (m.transpose() * &m)
            .lu()
            .solve(&(m.transpose() * y))
            .unwrap();
        let diff = (&bk - b.column(k)).norm();
        prop_assert!(diff <= 1e-8 * bk.norm().max(1.0), "column {k}: {diff}");
    }
    prop_assert!((&x - &u * &b).norm() <= 1e-12 * x.norm().max(1.0));
    Ok(())
}

pub fn identical_nodes_reproduce_the_baseline(
    (seed, n, r, t_pow): (u64, usize, usize, usize),
) -> Result<(), TestCaseError> {
    let mut rng = rng_from(seed, &[7]);
    let g = gaussian_matrix(n, n + 2, &mut rng);
    let phi = &g * g.transpose();
    let nodes = vec![phi.clone(); 6];
    let u_rand = gaussian_matrix(n, r, &mut rng);
    let cfg = EstimatorConfig {
        omega: Some(1e9),
        seed,
        ..EstimatorConfig::new(r, t_pow)
    };
    let base = federated_power_method(&nodes[..1], &cfg, &u_rand)
        .unwrap()
        .basis;
    let fed = FederationConfig::new(6, [], 3, seed).unwrap();
    let close = |b: &BasisMatrix| sd_f(&base, b).unwrap();

    prop_assert!(close(&federated_power_method(&nodes, &cfg, &u_rand).unwrap().basis) <= 1e-8);
    let local = local_power_bases(&nodes, &cfg, &u_rand).unwrap();
    prop_assert!(
        close(
            &subspace_median_federated(&local, &fed, &mut NoAdversary, &cfg)
                .unwrap()
                .basis
        ) <= 1e-8
    );
    prop_assert!(
        close(
            &res_pow_meth(&nodes, &fed, &mut NoAdversary, &cfg, &u_rand)
                .unwrap()
                .basis
        ) <= 1e-8
    );
    prop_assert!(
        close(
            &subspace_mom(&nodes, &fed, &mut NoAdversary, &cfg, &u_rand)
                .unwrap()
                .basis
        ) <= 1e-8
    );
    prop_assert!(
        close(
            &svd_res_cov_est_federated(&nodes, &fed, &mut NoAdversary, &cfg, &u_rand)
                .unwrap()
                .basis
        ) <= 1e-8
    );

    let mut none = AttackAdversary::new(AttackKind::None, AttackParams::default());
    prop_assert!(
        close(
            &subspace_mom(&nodes, &fed, &mut none, &cfg, &u_rand)
                .unwrap()
                .basis
        ) <= 1e-8
    );
    Ok(())
}

/// Name, case count and a runner for every property.
pub fn all() -> Vec<(&'static str, u32, fn(u32) -> Result<(), String>)> {
    vec![
        ("weiszfeld_objective_never_increases", 1000, |cases| {
            run(
                cases,
                (any::<u64>(), 1usize..12, 1usize..8, 1usize..40),
                weiszfeld_objective_never_increases,
            )
        }),
        ("gm_stays_near_the_good_points", 200, |cases| {
            run(
                cases,
                (any::<u64>(), 0.001f64..0.1, 2usize..10, 3usize..30),
                gm_stays_near_the_good_points,
            )
        }),
        ("subspace_median_within_23_delta", 200, |cases| {
            run(
                cases,
                (any::<u64>(), 6usize..20, 1usize..4, 0.001f64..0.2),
                subspace_median_within_23_delta,
            )
        }),
        ("davis_kahan_holds", 200, |cases| {
            run(
                cases,
                (
                    any::<u64>(),
                    4usize..16,
                    1usize..3,
                    0.5f64..5.0,
                    0.0f64..1.0,
                ),
                davis_kahan_holds,
            )
        }),
        ("gradient_matches_finite_differences", 100, |cases| {
            run(
                cases,
                (any::<u64>(), 4usize..10, 2usize..6, 1usize..3),
                gradient_matches_finite_differences,
            )
        }),
        ("least_squares_matches_normal_equations", 100, |cases| {
            run(
                cases,
                (any::<u64>(), 4usize..12, 1usize..6, 1usize..4),
                least_squares_matches_normal_equations,
            )
        }),
        ("identical_nodes_reproduce_the_baseline", 40, |cases| {
            run(
                cases,
                (any::<u64>(), 5usize..14, 1usize..4, 1usize..12),
                identical_nodes_reproduce_the_baseline,
            )
        }),
    ]
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    TestRunner::new(Config::with_cases(cases))
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}
