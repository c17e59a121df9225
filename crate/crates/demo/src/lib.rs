//! Browser demo: three small experiments compiled to wasm.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no bindings beyond what `wasm-bindgen` generates.

use byzfed::attacks::{AttackAdversary, AttackKind, AttackParams};
use byzfed::estimators::{
    federated_power_method, local_power_bases, res_pow_meth, subspace_median_federated,
    EstimatorConfig,
};
use byzfed::fed::FederationConfig;
use byzfed::gm::{weiszfeld_gm, GmConfig};
use byzfed::linalg::sd_2;
use byzfed::lrcs::{
    altgdmin_baseline, byz_altgdmin, generate_lrcs_instance, GdConfig, InitMethod, LrcsConfig,
    ParamSource,
};
use byzfed::pca::{estimate_pca_params, generate_pca_model, sample_shards, SpectrumSpec};
use byzfed::rng::{gaussian_matrix, rng_from};
use byzfed::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct GmView {
    median: Vec<f64>,
    mean: Vec<f64>,
    objective_trace: Vec<f64>,
}

#[derive(Serialize)]
struct EstimatorRow {
    estimator: &'static str,
    sd_2: f64,
}

#[derive(Serialize)]
struct Curves {
    attacked: Vec<f64>,
    baseline: Vec<f64>,
}

fn to_js<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Geometric median and mean of 2-D points given as `[x0, y0, x1, y1, ...]`.
pub fn gm_playground_json(xy: &[f64], iterations: usize) -> Result<String> {
    if xy.is_empty() || !xy.len().is_multiple_of(2) {
        return Err(Error::ConfigInvalid(
            "need an even, non-empty list of coordinates".into(),
        ));
    }
    let points: Vec<[f64; 2]> = xy.chunks(2).map(|c| [c[0], c[1]]).collect();
    let res = weiszfeld_gm(&points, &GmConfig::with_iterations(iterations.max(1)))?;
    let k = points.len() as f64;
    let mean = vec![
        points.iter().map(|p| p[0]).sum::<f64>() / k,
        points.iter().map(|p| p[1]).sum::<f64>() / k,
    ];
    to_js(&GmView {
        median: res.point,
        mean,
        objective_trace: res.objective_trace,
    })
}

/// Spectral subspace error of the plain power method, Subspace-Median and the
/// resilient power method on one small federated PCA instance.
pub fn pca_under_attack_json(
    n: usize,
    r: usize,
    per_node: usize,
    nodes: usize,
    byzantine: usize,
    attack: &str,
    seed: u64,
) -> Result<String> {
    let attack = AttackKind::parse(attack)?;
    let model = generate_pca_model(n, r, &SpectrumSpec::LowRank15, seed)?;
    let shards = sample_shards(&model, per_node * nodes, nodes, seed.wrapping_add(1))?;
    let params = estimate_pca_params(&shards, r, None)?;
    let ops = shards.operators();
    let cfg = EstimatorConfig {
        omega: Some(params.res_pow_omega(r)),
        seed,
        ..EstimatorConfig::new(r, 10)
    };
    let u_rand = gaussian_matrix(n, r, &mut rng_from(seed, &[7]));
    let fed = FederationConfig::spread(nodes, byzantine, nodes, seed)?;
    let u_star = model.u_star();
    let mut rows = Vec::new();
    let mut push = |estimator, basis| -> Result<()> {
        rows.push(EstimatorRow {
            estimator,
            sd_2: sd_2(&u_star, &basis)?,
        });
        Ok(())
    };

    push(
        "power (no attack)",
        federated_power_method(&ops, &cfg, &u_rand)?.basis,
    )?;
    let local = local_power_bases(&ops, &cfg, &u_rand)?;
    let mut adv = AttackAdversary::new(attack, AttackParams::default());
    push(
        "subspace median",
        subspace_median_federated(&local, &fed, &mut adv, &cfg)?.basis,
    )?;
    let mut adv = AttackAdversary::new(attack, AttackParams::default());
    push(
        "resilient power method",
        res_pow_meth(&ops, &fed, &mut adv, &cfg, &u_rand)?.basis,
    )?;
    to_js(&rows)
}

/// Error traces of Byz-AltGDmin (median-of-means init) under the
/// reverse-gradient attack and of the unattacked pooled baseline.
pub fn altgdmin_curve_json(
    n: usize,
    q: usize,
    r: usize,
    m: usize,
    nodes: usize,
    byzantine: usize,
    minibatches: usize,
    iterations: usize,
    seed: u64,
) -> Result<String> {
    let inst = generate_lrcs_instance(n, q, r, m, nodes, seed)?;
    let fed = FederationConfig::spread(nodes, byzantine, minibatches, seed)?;
    let cfg = LrcsConfig {
        init_method: InitMethod::Mom,
        gd: GdConfig {
            iterations,
            ..GdConfig::default()
        },
        params: ParamSource::Oracle,
        ..LrcsConfig::default()
    };
    let mut adv = AttackAdversary::new(AttackKind::ReverseGradient, AttackParams::default());
    let attacked = byz_altgdmin(&inst, &fed, &mut adv, &cfg)?.error_trace();
    let baseline = altgdmin_baseline(&inst, &cfg)?.error_trace();
    to_js(&Curves { attacked, baseline })
}

#[wasm_bindgen]
pub fn gm_playground(xy: &[f64], iterations: usize) -> std::result::Result<String, JsError> {
    gm_playground_json(xy, iterations).map_err(js)
}

#[wasm_bindgen]
pub fn pca_under_attack(
    n: usize,
    r: usize,
    per_node: usize,
    nodes: usize,
    byzantine: usize,
    attack: &str,
    seed: u64,
) -> std::result::Result<String, JsError> {
    pca_under_attack_json(n, r, per_node, nodes, byzantine, attack, seed).map_err(js)
}

#[wasm_bindgen]
pub fn altgdmin_curve(
    n: usize,
    q: usize,
    r: usize,
    m: usize,
    nodes: usize,
    byzantine: usize,
    minibatches: usize,
    iterations: usize,
    seed: u64,
) -> std::result::Result<String, JsError> {
    altgdmin_curve_json(n, q, r, m, nodes, byzantine, minibatches, iterations, seed).map_err(js)
}
