//! Monte-Carlo experiment grids and their CSV / JSON reports.
//!
//! A config names one experiment family (PCA or LRCS), a list of estimators
//! and a list of attacks; every (estimator, attack) pair is a cell and becomes
//! one CSV row. Run `i` draws all of its randomness from
//! `derive_seed(seed, [run tag, i])`, so adding runs never changes earlier
//! ones and reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize};

use crate::attacks::{AttackAdversary, AttackKind, AttackParams};
use crate::error::{Error, Result};
use crate::estimators::{
    federated_power_method, local_power_bases, res_pow_meth, subspace_median_federated,
    subspace_mom, svd_res_cov_est_federated, EstimatorConfig,
};
use crate::fed::FederationConfig;
use crate::gm::GmConfig;
use crate::linalg::{sd_2, sd_f, BasisMatrix};
use crate::lrcs::{
    altgdmin_baseline, byz_altgdmin, generate_lrcs_truth, sample_lrcs_measurements, GdConfig,
    InitConfig, InitMethod, LrcsConfig, LrcsTruth, ParamSource,
};
use crate::pca::{
    estimate_pca_params, generate_pca_model, sample_shards, PcaModel, SpectrumSpec,
    DEFAULT_TPOW_CONSTANT, DEFAULT_TPOW_EPS,
};
use crate::rng::{derive_seed, gaussian_matrix, rng_from, TAG_INIT, TAG_RUN};

pub const CSV_HEADER: [&str; 16] = [
    "experiment",
    "estimator",
    "attack",
    "n",
    "r",
    "q",
    "L",
    "L_byz",
    "L_tilde",
    "T_pow",
    "T_gm",
    "max_sdf",
    "mean_sdf",
    "mean_time_s",
    "runs",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Pca,
    Lrcs,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Pca => "pca",
            ExperimentKind::Lrcs => "lrcs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Plain federated power method, no attack.
    Power,
    SubsMed,
    ResPowMeth,
    SubsMom,
    SvdResCovEst,
    /// Basic AltGDmin on pooled data, no attack.
    Altgdmin,
    AltgdminMedian,
    AltgdminMom,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Power => "power",
            EstimatorKind::SubsMed => "subs_med",
            EstimatorKind::ResPowMeth => "res_pow_meth",
            EstimatorKind::SubsMom => "subs_mom",
            EstimatorKind::SvdResCovEst => "svd_res_cov_est",
            EstimatorKind::Altgdmin => "altgdmin",
            EstimatorKind::AltgdminMedian => "altgdmin_median",
            EstimatorKind::AltgdminMom => "altgdmin_mom",
        }
    }

    pub fn experiment(self) -> ExperimentKind {
        match self {
            EstimatorKind::Altgdmin
            | EstimatorKind::AltgdminMedian
            | EstimatorKind::AltgdminMom => ExperimentKind::Lrcs,
            _ => ExperimentKind::Pca,
        }
    }

    /// Baselines run once per config, without attack.
    pub fn is_baseline(self) -> bool {
        matches!(self, EstimatorKind::Power | EstimatorKind::Altgdmin)
    }
}

/// Which subspace distance fills `max_sdf` / `mean_sdf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    #[serde(rename = "sd_f")]
    SdF,
    /// Spectral-norm distance; what the PCA table suites report.
    #[serde(rename = "sd_2")]
    Sd2,
}

fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

fn no_attack() -> Vec<AttackKind> {
    vec![AttackKind::None]
}

fn ten() -> usize {
    10
}

fn ten_f() -> f64 {
    10.0
}

fn low_rank() -> SpectrumSpec {
    SpectrumSpec::LowRank15
}

/// One experiment. Keys that are CSV columns carry the column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(deserialize_with = "one_or_many")]
    pub estimator: Vec<EstimatorKind>,
    #[serde(default = "no_attack", deserialize_with = "one_or_many")]
    pub attack: Vec<AttackKind>,
    pub n: usize,
    pub r: usize,
    pub q: usize,
    #[serde(rename = "L")]
    pub num_nodes: usize,
    #[serde(rename = "L_byz", default)]
    pub num_byzantine: usize,
    /// Defaults to `L`.
    #[serde(rename = "L_tilde", default, skip_serializing_if = "Option::is_none")]
    pub minibatches: Option<usize>,
    /// PCA: the data-driven heuristic when unset. LRCS: 10 when unset.
    #[serde(rename = "T_pow", default, skip_serializing_if = "Option::is_none")]
    pub power_iterations: Option<usize>,
    #[serde(rename = "T_gm", default = "ten")]
    pub gm_iterations: usize,
    pub runs: usize,
    pub seed: u64,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "low_rank")]
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub metric: Metric,
    /// LRCS: total measurements per column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// LRCS: GD iterations.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub gd_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_error: Option<f64>,
    #[serde(default)]
    pub params: ParamSource,
    #[serde(default)]
    pub sample_splitting: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_attack: Option<f64>,
    #[serde(default = "ten_f")]
    pub rev_multiplier: f64,
    /// Record wall time per estimator call. Off by default so reports are
    /// reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        fs::read_to_string(path)?.parse()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn l_tilde(&self) -> usize {
        self.minibatches.unwrap_or(self.num_nodes)
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}_n{}_r{}_q{}_L{}_byz{}",
                self.experiment.name(),
                self.n,
                self.r,
                self.q,
                self.num_nodes,
                self.num_byzantine
            )
        })
    }

    fn attack_params(&self) -> AttackParams {
        AttackParams {
            c_attack: self.c_attack,
            rev_multiplier: self.rev_multiplier,
        }
    }

    fn federation(&self, seed: u64) -> Result<FederationConfig> {
        FederationConfig::spread(self.num_nodes, self.num_byzantine, self.l_tilde(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.estimator.is_empty() || self.attack.is_empty() {
            return bad("estimator and attack lists must be non-empty".into());
        }
        if let Some(e) = self
            .estimator
            .iter()
            .find(|e| e.experiment() != self.experiment)
        {
            return bad(format!(
                "estimator {} does not apply to {}",
                e.name(),
                self.experiment.name()
            ));
        }
        if self.r == 0 || self.r >= self.n {
            return bad(format!(
                "need 1 <= r < n, got r = {}, n = {}",
                self.r, self.n
            ));
        }
        if self.gm_iterations == 0 || self.power_iterations == Some(0) {
            return bad("T_pow and T_gm must be at least 1".into());
        }
        if self.num_nodes == 0 {
            return bad("L must be at least 1".into());
        }
        self.federation(self.seed)
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        match self.experiment {
            ExperimentKind::Pca => {
                if !self.q.is_multiple_of(self.num_nodes) {
                    return bad(format!(
                        "q = {} is not a multiple of L = {}",
                        self.q, self.num_nodes
                    ));
                }
                if self.r + 1 > (self.q / self.num_nodes).min(self.n) {
                    return bad(format!("each node needs more than r = {} samples", self.r));
                }
                self.spectrum
                    .values(self.n, self.r)
                    .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
            }
            ExperimentKind::Lrcs => {
                let Some(m) = self.m else {
                    return bad("lrcs needs m".into());
                };
                if m % self.num_nodes != 0 {
                    return bad(format!(
                        "m = {m} is not a multiple of L = {}",
                        self.num_nodes
                    ));
                }
                if self.r > self.q {
                    return bad(format!("r = {} exceeds q = {}", self.r, self.q));
                }
                if self.gd_iterations == Some(0) {
                    return bad("T must be at least 1".into());
                }
            }
        }
        Ok(())
    }

    /// `(estimator, attack)` pairs in config order; baselines only once, unattacked.
    pub fn cells(&self) -> Vec<(EstimatorKind, AttackKind)> {
        let mut out = Vec::new();
        for &e in &self.estimator {
            if e.is_baseline() {
                out.push((e, AttackKind::None));
                continue;
            }
            for &a in &self.attack {
                if !out.contains(&(e, a)) {
                    out.push((e, a));
                }
            }
        }
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd_2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_s: Option<f64>,
    #[serde(rename = "T_pow", default, skip_serializing_if = "Option::is_none")]
    pub power_iterations: Option<usize>,
    /// LRCS: `SD_F / sqrt(r)` after initialization and after each GD step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    fn new(run: usize, seed: u64) -> Self {
        RunRecord {
            run,
            seed,
            sd_f: None,
            sd_2: None,
            time_s: None,
            power_iterations: None,
            trace: None,
            error: None,
        }
    }

    fn failed(run: usize, seed: u64, e: &Error) -> Self {
        RunRecord {
            error: Some(e.to_string()),
            ..Self::new(run, seed)
        }
    }

    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::SdF => self.sd_f,
            Metric::Sd2 => self.sd_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub estimator: EstimatorKind,
    pub attack: AttackKind,
    pub max_sdf: Option<f64>,
    pub mean_sdf: Option<f64>,
    pub mean_time_s: Option<f64>,
    pub failed_runs: usize,
    pub per_run: Vec<RunRecord>,
}

impl CellRecord {
    pub fn from_runs(
        estimator: EstimatorKind,
        attack: AttackKind,
        metric: Metric,
        per_run: Vec<RunRecord>,
    ) -> Self {
        let values: Vec<f64> = per_run.iter().filter_map(|r| r.value(metric)).collect();
        let times: Vec<f64> = per_run.iter().filter_map(|r| r.time_s).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        CellRecord {
            estimator,
            attack,
            max_sdf: values.iter().cloned().reduce(f64::max),
            mean_sdf: mean(&values),
            mean_time_s: mean(&times),
            failed_runs: per_run.iter().filter(|r| r.error.is_some()).count(),
            per_run,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
}

/// Runs every cell of `cfg` over `cfg.runs` Monte-Carlo runs. Invalid configs
/// are rejected up front; a failing run is recorded and the sweep goes on.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let cells = cfg.cells();
    let per_run: Vec<Vec<RunRecord>> = match cfg.experiment {
        ExperimentKind::Pca => {
            let model = generate_pca_model(cfg.n, cfg.r, &cfg.spectrum, cfg.seed)?;
            map_runs(cfg.runs, |i| pca_run(cfg, &model, &cells, i))
        }
        ExperimentKind::Lrcs => {
            let truth = generate_lrcs_truth(cfg.n, cfg.q, cfg.r, cfg.seed)?;
            map_runs(cfg.runs, |i| lrcs_run(cfg, &truth, &cells, i))
        }
    };
    let cells = cells
        .iter()
        .enumerate()
        .map(|(c, &(e, a))| {
            let runs = per_run.iter().map(|r| r[c].clone()).collect();
            CellRecord::from_runs(e, a, cfg.metric, runs)
        })
        .collect();
    Ok(ExperimentRecord {
        name: cfg.display_name(),
        config: cfg.clone(),
        cells,
    })
}

fn map_runs<T: Send>(runs: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..runs).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..runs).map(f).collect()
    }
}

pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, &[TAG_RUN, run as u64])
}

fn timed<T>(on: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    if on {
        let start = Instant::now();
        let out = f();
        (out, Some(start.elapsed().as_secs_f64()))
    } else {
        (f(), None)
    }
}

fn score(rec: &mut RunRecord, truth: &BasisMatrix, est: &BasisMatrix) -> Result<()> {
    rec.sd_f = Some(sd_f(truth, est)?);
    rec.sd_2 = Some(sd_2(truth, est)?);
    Ok(())
}

/// One PCA run: fresh shards and one `U_rand` shared by every cell.
fn pca_run(
    cfg: &ExperimentConfig,
    model: &PcaModel,
    cells: &[(EstimatorKind, AttackKind)],
    run: usize,
) -> Vec<RunRecord> {
    let seed = run_seed(cfg.seed, run);
    let setup = || -> Result<_> {
        let shards = sample_shards(model, cfg.q, cfg.num_nodes, seed)?;
        let params = estimate_pca_params(&shards, cfg.r, None)?;
        let t_pow = cfg.power_iterations.unwrap_or_else(|| {
            params.power_iterations(cfg.n, DEFAULT_TPOW_EPS, DEFAULT_TPOW_CONSTANT)
        });
        Ok((shards, params, t_pow))
    };
    let (shards, params, t_pow) = match setup() {
        Ok(s) => s,
        Err(e) => {
            return cells
                .iter()
                .map(|_| RunRecord::failed(run, seed, &e))
                .collect()
        }
    };
    let ops = shards.operators();
    let u_rand = gaussian_matrix(cfg.n, cfg.r, &mut rng_from(seed, &[TAG_INIT]));
    let est_cfg = EstimatorConfig {
        rank: cfg.r,
        power_iterations: t_pow,
        gm: GmConfig::with_iterations(cfg.gm_iterations),
        omega: Some(params.res_pow_omega(cfg.r)),
        seed,
    };
    let u_star = model.u_star();
    let mut local_bases = None;
    let mut covariances = None;

    cells
        .iter()
        .map(|&(estimator, attack)| {
            let mut rec = RunRecord::new(run, seed);
            rec.power_iterations = Some(t_pow);
            let mut adversary = AttackAdversary::new(attack, cfg.attack_params());
            let outcome = (|| -> Result<()> {
                let fed = cfg.federation(seed)?;
                let (est, time) = match estimator {
                    EstimatorKind::Power => timed(cfg.timing, || {
                        federated_power_method(&ops, &est_cfg, &u_rand)
                    }),
                    EstimatorKind::SubsMed => {
                        let mut prep = 0.0;
                        if local_bases.is_none() {
                            let (b, t) =
                                timed(cfg.timing, || local_power_bases(&ops, &est_cfg, &u_rand));
                            local_bases = Some(b?);
                            prep = t.unwrap_or(0.0);
                        }
                        let bases = local_bases.as_ref().expect("computed above");
                        let (est, t) = timed(cfg.timing, || {
                            subspace_median_federated(bases, &fed, &mut adversary, &est_cfg)
                        });
                        (est, t.map(|t| t + prep))
                    }
                    EstimatorKind::ResPowMeth => timed(cfg.timing, || {
                        res_pow_meth(&ops, &fed, &mut adversary, &est_cfg, &u_rand)
                    }),
                    EstimatorKind::SubsMom => timed(cfg.timing, || {
                        subspace_mom(&ops, &fed, &mut adversary, &est_cfg, &u_rand)
                    }),
                    EstimatorKind::SvdResCovEst => {
                        let covs = covariances.get_or_insert_with(|| {
                            (0..shards.num_nodes())
                                .map(|l| shards.covariance(l))
                                .collect::<Vec<_>>()
                        });
                        timed(cfg.timing, || {
                            svd_res_cov_est_federated(covs, &fed, &mut adversary, &est_cfg, &u_rand)
                        })
                    }
                    other => {
                        return Err(Error::ConfigInvalid(format!(
                            "{} is not a PCA estimator",
                            other.name()
                        )))
                    }
                };
                rec.time_s = time;
                score(&mut rec, &u_star, &est?.basis)
            })();
            if let Err(e) = outcome {
                rec.error = Some(e.to_string());
            }
            rec
        })
        .collect()
}

/// One LRCS run: fresh sensing matrices for the fixed truth.
fn lrcs_run(
    cfg: &ExperimentConfig,
    truth: &LrcsTruth,
    cells: &[(EstimatorKind, AttackKind)],
    run: usize,
) -> Vec<RunRecord> {
    let seed = run_seed(cfg.seed, run);
    let m = cfg.m.expect("validated");
    let inst = match sample_lrcs_measurements(truth, m, cfg.num_nodes, seed) {
        Ok(i) => i,
        Err(e) => {
            return cells
                .iter()
                .map(|_| RunRecord::failed(run, seed, &e))
                .collect()
        }
    };
    let t_pow = cfg.power_iterations.unwrap_or(10);
    let gm = GmConfig::with_iterations(cfg.gm_iterations);
    let base = LrcsConfig {
        init_method: InitMethod::Mom,
        init: InitConfig {
            c_tilde: None,
            power_iterations: t_pow,
            gm,
            seed,
        },
        gd: GdConfig {
            iterations: cfg.gd_iterations.unwrap_or(100),
            gm,
            sample_splitting: cfg.sample_splitting,
            exit_error: cfg.exit_error,
            ..GdConfig::default()
        },
        params: cfg.params,
        mu: 2.0,
    };
    cells
        .iter()
        .map(|&(estimator, attack)| {
            let mut rec = RunRecord::new(run, seed);
            rec.power_iterations = Some(t_pow);
            let mut adversary = AttackAdversary::new(attack, cfg.attack_params());
            let outcome = (|| -> Result<()> {
                let spread = cfg.federation(seed)?;
                let (out, time) = match estimator {
                    EstimatorKind::Altgdmin => {
                        timed(cfg.timing, || altgdmin_baseline(&inst, &base))
                    }
                    EstimatorKind::AltgdminMedian => {
                        let fed = FederationConfig::new(
                            cfg.num_nodes,
                            spread.byzantine_ids.iter().copied(),
                            cfg.num_nodes,
                            seed,
                        )?;
                        let lc = LrcsConfig {
                            init_method: InitMethod::Median,
                            ..base
                        };
                        timed(cfg.timing, || {
                            byz_altgdmin(&inst, &fed, &mut adversary, &lc)
                        })
                    }
                    EstimatorKind::AltgdminMom => timed(cfg.timing, || {
                        byz_altgdmin(&inst, &spread, &mut adversary, &base)
                    }),
                    other => {
                        return Err(Error::ConfigInvalid(format!(
                            "{} is not an LRCS estimator",
                            other.name()
                        )))
                    }
                };
                let out = out?;
                rec.time_s = time;
                rec.trace = Some(out.error_trace());
                score(&mut rec, &inst.truth.u_star, &out.state.u)
            })();
            if let Err(e) = outcome {
                rec.error = Some(e.to_string());
            }
            rec
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::ConfigInvalid(format!(
                "unknown report format `{other}`"
            ))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The CSV rows of a record, header first.
pub fn csv_rows(record: &ExperimentRecord) -> Vec<Vec<String>> {
    let c = &record.config;
    let mut rows = vec![CSV_HEADER.iter().map(|s| s.to_string()).collect()];
    for cell in &record.cells {
        rows.push(vec![
            c.experiment.name().to_string(),
            cell.estimator.name().to_string(),
            cell.attack.name().to_string(),
            c.n.to_string(),
            c.r.to_string(),
            c.q.to_string(),
            c.num_nodes.to_string(),
            c.num_byzantine.to_string(),
            c.l_tilde().to_string(),
            c.power_iterations
                .map(|t| t.to_string())
                .unwrap_or_else(|| "auto".into()),
            c.gm_iterations.to_string(),
            opt(cell.max_sdf),
            opt(cell.mean_sdf),
            opt(cell.mean_time_s),
            c.runs.to_string(),
            c.seed.to_string(),
        ]);
    }
    rows
}

pub fn write_csv<W: std::io::Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, record) in records.iter().enumerate() {
        for row in csv_rows(record).into_iter().skip(usize::from(i > 0)) {
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::ConfigInvalid(format!("{other:?}")),
    }
}

/// Writes `<dir>/<name>.<csv|json>` and returns the path.
pub fn emit_report(record: &ExperimentRecord, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (ext, bytes) = match format {
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            write_csv(std::slice::from_ref(record), &mut buf)?;
            ("csv", buf)
        }
        ReportFormat::Json => ("json", serde_json::to_vec_pretty(record)?),
    };
    let path = dir.join(format!("{}.{ext}", record.name));
    fs::write(&path, bytes)?;
    Ok(path)
}

pub fn read_record(path: &Path) -> Result<ExperimentRecord> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Exp1,
    Exp2,
    Mom1,
    LrcsFig,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Suite::Exp1),
            "exp2" => Ok(Suite::Exp2),
            "mom1" => Ok(Suite::Mom1),
            "lrcs_fig" => Ok(Suite::LrcsFig),
            other => Err(Error::UnknownSuite(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Paper,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::ConfigInvalid(format!("unknown scale `{other}`"))),
        }
    }
}

const SUITE_SEED: u64 = 2023;

struct PcaCell {
    name: &'static str,
    spectrum: SpectrumSpec,
    r: usize,
    q: usize,
    l: usize,
    l_byz: usize,
    l_tilde: Option<usize>,
    t_pow: usize,
    estimators: Vec<EstimatorKind>,
}

fn pca_config(c: PcaCell, scale: Scale) -> ExperimentConfig {
    let (n, r, q, runs) = match scale {
        Scale::Paper => (1000, c.r, c.q, 100),
        Scale::Desk => {
            let q = (c.q / 5) / c.l * c.l;
            (200, c.r.min(10), q, 50)
        }
    };
    ExperimentConfig {
        experiment: ExperimentKind::Pca,
        estimator: c.estimators,
        attack: vec![
            AttackKind::Alternating,
            AttackKind::Ones,
            AttackKind::Orthogonal,
        ],
        n,
        r,
        q,
        num_nodes: c.l,
        num_byzantine: c.l_byz,
        minibatches: c.l_tilde,
        power_iterations: Some(c.t_pow),
        gm_iterations: 10,
        runs,
        seed: SUITE_SEED,
        name: Some(c.name.to_string()),
        spectrum: c.spectrum,
        metric: Metric::Sd2,
        m: None,
        gd_iterations: None,
        exit_error: None,
        params: ParamSource::Estimated,
        sample_splitting: false,
        c_attack: None,
        rev_multiplier: 10.0,
        timing: false,
        output: None,
    }
}

/// The full-size reference grids (`paper`) or a reduced
/// version (`desk`: n = 200, r capped at 10, q scaled with n, 50 runs).
pub fn table_suite(suite: Suite, scale: Scale) -> Vec<ExperimentConfig> {
    use EstimatorKind::*;
    let three = || vec![Power, SubsMed, ResPowMeth];
    let pca = |name, spectrum, r, q, l, l_byz, t_pow| PcaCell {
        name,
        spectrum,
        r,
        q,
        l,
        l_byz,
        l_tilde: None,
        t_pow,
        estimators: three(),
    };
    let cells = match suite {
        Suite::Exp1 => vec![
            pca(
                "exp1_full_rank_tpow10",
                SpectrumSpec::FullRank15,
                60,
                1800,
                3,
                1,
                10,
            ),
            pca(
                "exp1_rank_r1_tpow10",
                SpectrumSpec::LowRank15,
                60,
                1800,
                3,
                1,
                10,
            ),
            pca(
                "exp1_rank_r1_tpow1",
                SpectrumSpec::LowRank15,
                60,
                1800,
                3,
                1,
                1,
            ),
        ],
        Suite::Exp2 => {
            let mut v = Vec::new();
            for (tag, r, q, l, l_byz) in [
                ("i", 2, 360, 3, 1),
                ("ii", 2, 720, 6, 2),
                ("iii", 60, 3600, 6, 2),
            ] {
                for t in [10, 1] {
                    let name: &'static str =
                        Box::leak(format!("exp2_{tag}_tpow{t}").into_boxed_str());
                    v.push(pca(name, SpectrumSpec::LowRank15, r, q, l, l_byz, t));
                }
            }
            v
        }
        Suite::Mom1 => [2, 4]
            .into_iter()
            .map(|l_byz| PcaCell {
                name: if l_byz == 2 { "mom1_byz2" } else { "mom1_byz4" },
                spectrum: SpectrumSpec::LowRank15,
                r: 60,
                q: 3600,
                l: 18,
                l_byz,
                l_tilde: Some(6),
                t_pow: 10,
                estimators: vec![Power, SubsMom, SubsMed, ResPowMeth],
            })
            .collect(),
        Suite::LrcsFig => {
            return [1, 2]
                .into_iter()
                .map(|l_byz| {
                    let (n, q, runs) = match scale {
                        Scale::Paper => (600, 600, 100),
                        Scale::Desk => (200, 200, 50),
                    };
                    ExperimentConfig {
                        experiment: ExperimentKind::Lrcs,
                        estimator: vec![AltgdminMedian, AltgdminMom, Altgdmin],
                        attack: vec![AttackKind::ReverseGradient],
                        n,
                        r: 4,
                        q,
                        num_nodes: 18,
                        num_byzantine: l_byz,
                        minibatches: Some(6),
                        power_iterations: Some(10),
                        gm_iterations: 10,
                        runs,
                        seed: SUITE_SEED,
                        name: Some(format!("lrcs_fig_byz{l_byz}")),
                        spectrum: SpectrumSpec::LowRank15,
                        metric: Metric::SdF,
                        m: Some(198),
                        gd_iterations: Some(100),
                        exit_error: None,
                        params: ParamSource::Oracle,
                        sample_splitting: false,
                        c_attack: None,
                        rev_multiplier: 10.0,
                        timing: false,
                        output: None,
                    }
                })
                .collect();
        }
    };
    cells.into_iter().map(|c| pca_config(c, scale)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pca() -> ExperimentConfig {
        let mut cfg = table_suite(Suite::Exp1, Scale::Desk).remove(1);
        cfg.n = 30;
        cfg.r = 3;
        cfg.q = 60;
        cfg.runs = 3;
        cfg.estimator.push(EstimatorKind::SubsMom);
        cfg
    }

    #[test]
    fn header_is_exact() {
        let record = ExperimentRecord {
            name: "x".into(),
            config: tiny_pca(),
            cells: vec![],
        };
        let mut buf = Vec::new();
        write_csv(&[record], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "experiment,estimator,attack,n,r,q,L,L_byz,L_tilde,T_pow,T_gm,max_sdf,mean_sdf,mean_time_s,runs,seed\n"
        );
    }

    #[test]
    fn toml_round_trip_and_lists() {
        let src = r#"
experiment = "pca"
estimator = "subs_med"
attack = ["ones", "orthogonal"]
n = 40
r = 2
q = 60
L = 3
L_byz = 1
T_pow = 5
runs = 2
seed = 9
"#;
        let cfg: ExperimentConfig = src.parse().unwrap();
        assert_eq!(cfg.estimator, vec![EstimatorKind::SubsMed]);
        assert_eq!(cfg.cells().len(), 2);
        assert_eq!(cfg.gm_iterations, 10);
        let again: ExperimentConfig = cfg.to_toml().unwrap().parse().unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = tiny_pca();
        let mut c = base.clone();
        c.runs = 0;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        let mut c = base.clone();
        c.num_byzantine = 2;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        let mut c = base.clone();
        c.estimator = vec![EstimatorKind::AltgdminMom];
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        let mut c = base;
        c.q = 61;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        assert!(matches!(
            "n = ".parse::<ExperimentConfig>(),
            Err(Error::ConfigInvalid(_))
        ));
    }

    #[test]
    fn baselines_run_once_unattacked() {
        let cells = tiny_pca().cells();
        assert_eq!(cells[0], (EstimatorKind::Power, AttackKind::None));
        assert_eq!(cells.len(), 1 + 3 * 3);
    }

    #[test]
    fn aggregates_match_per_run_values() {
        let record = run_experiment(&tiny_pca()).unwrap();
        for cell in &record.cells {
            let v: Vec<f64> = cell.per_run.iter().filter_map(|r| r.sd_2).collect();
            assert_eq!(v.len(), 3);
            assert_eq!(cell.max_sdf, v.iter().cloned().reduce(f64::max));
            let mean = cell.mean_sdf.unwrap();
            assert!(
                mean <= cell.max_sdf.unwrap()
                    && mean >= v.iter().cloned().fold(f64::INFINITY, f64::min)
            );
            assert!(cell.per_run.iter().all(|r| r.trace.is_none()));
        }
    }

    #[test]
    fn unknown_suite() {
        assert!(matches!(
            "exp9".parse::<Suite>(),
            Err(Error::UnknownSuite(_))
        ));
    }

    #[test]
    fn suite_grids() {
        let exp1 = table_suite(Suite::Exp1, Scale::Paper);
        assert!(exp1.iter().all(|c| c.n == 1000
            && c.num_nodes == 3
            && c.num_byzantine == 1
            && c.r == 60
            && c.q == 1800));
        assert!(exp1.iter().any(|c| c.spectrum == SpectrumSpec::FullRank15));
        let mom = table_suite(Suite::Mom1, Scale::Paper);
        assert_eq!(
            mom.iter().map(|c| c.num_byzantine).collect::<Vec<_>>(),
            vec![2, 4]
        );
        assert!(mom.iter().all(|c| c.num_nodes == 18 && c.l_tilde() == 6));
        let lrcs = table_suite(Suite::LrcsFig, Scale::Paper);
        assert!(lrcs
            .iter()
            .all(|c| c.n == 600 && c.q == 600 && c.r == 4 && c.m == Some(198)));
        for s in [Suite::Exp1, Suite::Exp2, Suite::Mom1, Suite::LrcsFig] {
            for cfg in table_suite(s, Scale::Desk) {
                cfg.validate().unwrap();
                assert_eq!(cfg.runs, 50);
            }
        }
    }
}
