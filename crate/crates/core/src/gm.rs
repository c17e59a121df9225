//! Geometric median via Weiszfeld's iteration.
//!
//! Points are plain `f64` slices; matrices are passed through their
//! column-major storage (`DMatrix::as_slice`) and reshaped by the caller.

use crate::error::{Error, Result};

/// Starting point of the Weiszfeld iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GmInit {
    /// Average of the input points.
    #[default]
    Mean,
    /// Best data point pushed one step along its descent direction, the start
    /// under which the iteration provably never lands on a data point.
    DescentFromBestPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmConfig {
    /// `T_gm`.
    pub max_iterations: usize,
    /// Stop when an update moves the iterate by less than this.
    pub step_tolerance: f64,
    /// Relative floor on `||z_i - z_t||`; multiplied by the point-cloud scale.
    pub denom_guard: f64,
    pub init: GmInit,
}

impl Default for GmConfig {
    fn default() -> Self {
        GmConfig {
            max_iterations: 10,
            step_tolerance: 1e-10,
            denom_guard: 1e-12,
            init: GmInit::Mean,
        }
    }
}

impl GmConfig {
    pub fn with_iterations(max_iterations: usize) -> Self {
        GmConfig {
            max_iterations,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.step_tolerance > 0.0) || !(self.denom_guard > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "invalid GM configuration {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmResult {
    pub point: Vec<f64>,
    pub iterations_used: usize,
    /// `sum_l ||point - z_l||` over the points that entered the median.
    pub objective: f64,
    /// Points dropped by the norm filter.
    pub filtered_count: usize,
    /// Objective at the start point followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyInput)?;
    let d = first.as_ref().len();
    for p in points {
        if p.as_ref().len() != d {
            return Err(Error::dims(format!("dimension {d}"), p.as_ref().len()));
        }
    }
    Ok(d)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn objective_unchecked<P: AsRef<[f64]>>(points: &[P], z: &[f64]) -> f64 {
    points.iter().map(|p| dist(p.as_ref(), z)).sum()
}

/// `sum_l ||z - z_l||_2`.
pub fn gm_objective<P: AsRef<[f64]>>(points: &[P], z: &[f64]) -> Result<f64> {
    let d = check_points(points)?;
    if z.len() != d {
        return Err(Error::dims(format!("dimension {d}"), z.len()));
    }
    Ok(objective_unchecked(points, z))
}

fn mean_point<P: AsRef<[f64]>>(points: &[P], d: usize) -> Vec<f64> {
    let mut z = vec![0.0; d];
    for p in points {
        for (acc, v) in z.iter_mut().zip(p.as_ref()) {
            *acc += v;
        }
    }
    let inv = 1.0 / points.len() as f64;
    z.iter_mut().for_each(|v| *v *= inv);
    z
}

fn descent_start<P: AsRef<[f64]>>(points: &[P], d: usize) -> Vec<f64> {
    let best = (0..points.len())
        .min_by(|&a, &b| {
            let fa = objective_unchecked(points, points[a].as_ref());
            let fb = objective_unchecked(points, points[b].as_ref());
            fa.total_cmp(&fb)
        })
        .expect("nonempty");
    let zp = points[best].as_ref();
    // R_p = sum_{i != p, z_i != z_p} (z_p - z_i) / ||z_p - z_i||, the gradient
    // of the objective at z_p with that point's own term removed.
    let mut grad = vec![0.0; d];
    let mut inv_dist_sum = 0.0;
    for (i, p) in points.iter().enumerate() {
        let zi = p.as_ref();
        let dd = dist(zp, zi);
        if i == best || dd == 0.0 {
            continue;
        }
        inv_dist_sum += 1.0 / dd;
        for k in 0..d {
            grad[k] += (zp[k] - zi[k]) / dd;
        }
    }
    let gnorm = norm(&grad);
    if gnorm <= 1.0 || inv_dist_sum == 0.0 {
        // z_p already satisfies the optimality condition.
        return zp.to_vec();
    }
    let step = (gnorm - 1.0) / inv_dist_sum;
    zp.iter()
        .zip(&grad)
        .map(|(z, g)| z - step * g / gnorm)
        .collect()
}

/// Weiszfeld's algorithm.
pub fn weiszfeld_gm<P: AsRef<[f64]>>(points: &[P], cfg: &GmConfig) -> Result<GmResult> {
    cfg.validate()?;
    let d = check_points(points)?;
    if points
        .iter()
        .any(|p| p.as_ref().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::ConfigInvalid("non-finite GM input".into()));
    }

    let mut z = match cfg.init {
        GmInit::Mean => mean_point(points, d),
        GmInit::DescentFromBestPoint => descent_start(points, d),
    };
    let scale = points
        .iter()
        .map(|p| norm(p.as_ref()))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let guard = cfg.denom_guard * scale;

    let mut trace = vec![objective_unchecked(points, &z)];
    let mut iterations_used = 0;
    let mut next = vec![0.0; d];
    for _ in 0..cfg.max_iterations {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut weight_sum = 0.0;
        for p in points {
            let p = p.as_ref();
            let w = 1.0 / dist(p, &z).max(guard);
            weight_sum += w;
            for (acc, v) in next.iter_mut().zip(p) {
                *acc += w * v;
            }
        }
        let inv = 1.0 / weight_sum;
        next.iter_mut().for_each(|v| *v *= inv);

        let step = dist(&next, &z);
        std::mem::swap(&mut z, &mut next);
        iterations_used += 1;
        trace.push(objective_unchecked(points, &z));
        if step < cfg.step_tolerance {
            break;
        }
    }

    Ok(GmResult {
        objective: *trace.last().expect("nonempty trace"),
        point: z,
        iterations_used,
        filtered_count: 0,
        objective_trace: trace,
    })
}

/// Relative slack on the norm filter, so a point whose norm equals `omega`
/// up to rounding is kept.
pub const FILTER_SLACK: f64 = 1e-10;

/// GM of the points whose Euclidean norm is at most `omega`.
pub fn thresholded_gm<P: AsRef<[f64]>>(
    points: &[P],
    omega: f64,
    cfg: &GmConfig,
) -> Result<GmResult> {
    check_points(points)?;
    if !(omega > 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "threshold must be positive, got {omega}"
        )));
    }
    let kept: Vec<&[f64]> = points
        .iter()
        .map(|p| p.as_ref())
        .filter(|p| norm(p) <= omega * (1.0 + FILTER_SLACK))
        .collect();
    if kept.is_empty() {
        return Err(Error::AllFiltered { omega });
    }
    let filtered_count = points.len() - kept.len();
    let mut res = weiszfeld_gm(&kept, cfg)?;
    res.filtered_count = filtered_count;
    Ok(res)
}

/// Sample median; the mean of the two central values for even counts.
pub fn scalar_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}
