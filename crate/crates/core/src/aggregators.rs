//! Master-side aggregation rules.
//!
//! The robust rule is an epsilon-approximate geometric median computed by
//! Weiszfeld's iteration. Every iterate `v` carries a certificate
//! `F(v) - F* <= ||s(v)|| * D(v)` where `s(v)` is the minimum-norm
//! subgradient of `F(v) = sum_w ||v - v_w||` and `D(v)` bounds the distance
//! to the minimizer by `min(max_w ||v - v_w||, 2 F(v) / W)`. The first
//! bound holds because the minimizer lies in the convex hull of the points,
//! the second because `F(v*) >= W ||v* - v|| - F(v)`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, ModelVector};

/// Distances below this count as coincident with a data point.
pub const COINCIDENCE_FLOOR: f64 = 1e-12;
/// Weiszfeld iteration cap.
pub const GEOMED_MAX_ITERS: usize = 100_000;

/// Iterations between the (costlier) dual certificates while progress is
/// steady.
const DUAL_CHECK_EVERY: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GeomedResult {
    pub point: ModelVector,
    /// `sum_w ||point - v_w||`.
    pub objective: f64,
    pub iterations: usize,
    /// Certified upper bound on `objective - inf F`.
    pub certified_gap: f64,
    /// `certified_gap <= eps`.
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomedOptions {
    pub eps: f64,
    pub max_iters: usize,
    /// Record the objective after every iteration.
    pub record_objective: bool,
}

impl GeomedOptions {
    pub fn new(eps: f64) -> Self {
        GeomedOptions { eps, max_iters: GEOMED_MAX_ITERS, record_objective: false }
    }
}

/// Geometric median plus the per-iteration objective history when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct GeomedRun {
    pub result: GeomedResult,
    pub history: Vec<f64>,
}

struct Eval {
    objective: f64,
    certificate: f64,
    nearest: usize,
    nearest_dist: f64,
    max_dist: f64,
}

fn validate_points<V: AsRef<[f64]>>(points: &[V]) -> Result<usize> {
    let first = points.first().ok_or_else(|| Error::InvalidInput("no points to aggregate".into()))?;
    let p = first.as_ref().len();
    for v in points {
        check_dim(p, v.as_ref().len())?;
        if !linalg::all_finite(v.as_ref()) {
            return Err(Error::NonFinite("aggregation input"));
        }
    }
    Ok(p)
}

/// Objective, certificate and the next Weiszfeld (Vardi-Zhang at data
/// points) iterate, all from one pass over the distances.
fn weiszfeld_pass<V: AsRef<[f64]>>(points: &[V], v: &[f64], next: &mut [f64]) -> Eval {
    let p = v.len();
    let w = points.len() as f64;
    let mut objective = 0.0;
    let mut max_dist: f64 = 0.0;
    let mut coincident = 0usize;
    let mut nearest = (0usize, f64::INFINITY);
    let mut weight_sum = 0.0;
    let mut pull = vec![0.0; p];
    let mut grad = vec![0.0; p];
    next.iter_mut().for_each(|n| *n = 0.0);
    for (k, pt) in points.iter().enumerate() {
        let pt = pt.as_ref();
        let d = linalg::dist(pt, v);
        if d < nearest.1 {
            nearest = (k, d);
        }
        objective += d;
        max_dist = max_dist.max(d);
        if d < COINCIDENCE_FLOOR {
            coincident += 1;
            continue;
        }
        let inv = 1.0 / d;
        weight_sum += inv;
        for i in 0..p {
            next[i] += inv * pt[i];
            let diff = (v[i] - pt[i]) * inv;
            grad[i] += diff;
            pull[i] -= diff;
        }
    }
    let grad_norm = linalg::norm(&grad);
    let sub_norm = if coincident > 0 { (grad_norm - coincident as f64).max(0.0) } else { grad_norm };
    let certificate = sub_norm * max_dist.min(2.0 * objective / w);
    if weight_sum == 0.0 {
        next.copy_from_slice(v);
    } else {
        next.iter_mut().for_each(|n| *n /= weight_sum);
        if coincident > 0 {
            // Vardi-Zhang: move off the data point only when the pull of the
            // other points exceeds its multiplicity.
            let r = linalg::norm(&pull);
            let keep = if r > 0.0 { (coincident as f64 / r).min(1.0) } else { 1.0 };
            for i in 0..p {
                next[i] = (1.0 - keep) * next[i] + keep * v[i];
            }
        }
    }
    Eval {
        objective,
        certificate,
        nearest: nearest.0,
        nearest_dist: nearest.1,
        max_dist,
    }
}

/// Certified gap from a feasible dual point, or `None` when the local
/// Hessian is singular.
///
/// Weak duality gives `F(y) >= sum_k <u_k, y - v_k>` whenever
/// `||u_k|| <= 1` and `sum_k u_k = 0`. The unit vectors
/// `u_k = (v - v_k) / d_k` satisfy the norm bound but sum to the gradient
/// `g`. Tilting each one by `-P_k lambda / d_k`, with `P_k` the projection
/// orthogonal to `u_k` and `H lambda = g` for `H = sum_k P_k / d_k`, removes
/// `g` to first order at a cost of about `g^T H^-1 g / 2`. Whatever sum is
/// left is spread evenly over the points and paid for with the hull
/// diameter bound `||y - v|| <= max_dist`, and the vectors are scaled back
/// into the unit ball.
fn dual_gap<V: AsRef<[f64]>>(points: &[V], v: &[f64], eval: &Eval) -> Option<f64> {
    let p = v.len();
    let w = points.len();
    let mut units = Vec::with_capacity(w);
    let mut dists = Vec::with_capacity(w);
    let mut grad = DVector::<f64>::zeros(p);
    let mut hess = DMatrix::<f64>::zeros(p, p);
    for pt in points {
        let pt = pt.as_ref();
        let d = linalg::dist(pt, v);
        if d < COINCIDENCE_FLOOR {
            units.push(DVector::zeros(p));
            dists.push(d);
            continue;
        }
        let u = DVector::from_iterator(p, v.iter().zip(pt).map(|(a, b)| (a - b) / d));
        grad += &u;
        hess += (DMatrix::identity(p, p) - &u * u.transpose()) / d;
        units.push(u);
        dists.push(d);
    }
    let lambda = hess.cholesky()?.solve(&grad);
    if !lambda.iter().all(|c| c.is_finite()) {
        return None;
    }
    let mut sum = DVector::<f64>::zeros(p);
    for (u, &d) in units.iter_mut().zip(&dists) {
        if d >= COINCIDENCE_FLOOR {
            let along = u.dot(&lambda);
            let tilt = (&lambda - &*u * along) / d;
            *u -= tilt;
        }
        sum += &*u;
    }
    let shift = sum / w as f64;
    let mut residual = DVector::<f64>::zeros(p);
    let mut scale: f64 = 1.0;
    let mut value = 0.0;
    for (u, pt) in units.iter_mut().zip(points) {
        *u -= &shift;
        residual += &*u;
        scale = scale.max(u.norm());
        value += u.iter().zip(v.iter().zip(pt.as_ref())).map(|(ui, (a, b))| ui * (a - b)).sum::<f64>();
    }
    let lower = (value - residual.norm() * eval.max_dist) / scale;
    let gap = eval.objective - lower;
    gap.is_finite().then_some(gap.max(0.0))
}

/// Near a data point the subgradient at `v` stays large even when `v` is
/// almost optimal, so the certificate is tightened with the lower bound
/// available at the nearest data point. Returns the improved certificate for
/// `v` and, if the data point itself is certified and no worse, that point.
fn certify_near_point<V: AsRef<[f64]>>(points: &[V], eval: &Eval, eps: f64) -> (f64, Option<(ModelVector, Eval)>) {
    if eval.nearest_dist >= 1e-4 * eval.max_dist || eval.nearest_dist < COINCIDENCE_FLOOR {
        return (eval.certificate, None);
    }
    let anchor = points[eval.nearest].as_ref().to_vec();
    let mut scratch = vec![0.0; anchor.len()];
    let at = weiszfeld_pass(points, &anchor, &mut scratch);
    let lower = at.objective - at.certificate;
    let cert = eval.certificate.min((eval.objective - lower).max(0.0));
    if at.certificate <= eps && at.objective <= eval.objective {
        (cert, Some((anchor, at)))
    } else {
        (cert, None)
    }
}

/// Weiszfeld from the coordinate-wise mean until the certified gap drops to
/// `eps`. The cheap gradient-norm certificate is checked every iteration and
/// the dual one every few iterations or when progress slows. Falls back to
/// stopping after three consecutive iterations in which the objective
/// decreases by less than `eps / 1000` (or the resolution of the objective)
/// and the certificate does not shrink by 10%; results that stop without
/// certification are flagged and logged.
pub fn geometric_median_with<V: AsRef<[f64]>>(points: &[V], opts: &GeomedOptions) -> Result<GeomedRun> {
    let p = validate_points(points)?;
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {}", opts.eps)));
    }
    let mut v = linalg::mean(points);
    let mut next = vec![0.0; p];
    let mut history = Vec::new();
    let mut stalled = 0;
    let mut prev_obj = f64::INFINITY;
    let mut best_cert = f64::INFINITY;
    let mut iterations = 0;
    loop {
        let mut eval = weiszfeld_pass(points, &v, &mut next);
        if eval.certificate > opts.eps {
            let (cert, snap) = certify_near_point(points, &eval, opts.eps);
            eval.certificate = cert;
            if let Some((anchor, at)) = snap {
                v = anchor;
                eval = at;
            }
        }
        if eval.certificate > opts.eps && (stalled > 0 || iterations % DUAL_CHECK_EVERY == DUAL_CHECK_EVERY - 1) {
            if let Some(gap) = dual_gap(points, &v, &eval) {
                eval.certificate = eval.certificate.min(gap);
            }
        }
        if opts.record_objective {
            history.push(eval.objective);
        }
        debug_assert!(
            eval.objective <= prev_obj + 1e-12 * prev_obj.abs().max(1.0),
            "Weiszfeld objective increased: {prev_obj} -> {}",
            eval.objective
        );
        let done_certified = eval.certificate <= opts.eps;
        let resolution = 16.0 * f64::EPSILON * eval.objective;
        let cert_progress = eval.certificate < 0.9 * best_cert;
        best_cert = best_cert.min(eval.certificate);
        if prev_obj - eval.objective < (1e-3 * opts.eps).max(resolution) && !cert_progress {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if done_certified || stalled >= 3 || iterations >= opts.max_iters {
            if !done_certified {
                warn!(
                    "geometric median stopped after {iterations} iterations with certified gap {:e} > eps {:e}",
                    eval.certificate, opts.eps
                );
            }
            return Ok(GeomedRun {
                result: GeomedResult {
                    point: v,
                    objective: eval.objective,
                    iterations,
                    certified_gap: eval.certificate,
                    certified: done_certified,
                },
                history,
            });
        }
        prev_obj = eval.objective;
        std::mem::swap(&mut v, &mut next);
        iterations += 1;
    }
}

pub fn geometric_median<V: AsRef<[f64]>>(points: &[V], eps: f64) -> Result<GeomedResult> {
    Ok(geometric_median_with(points, &GeomedOptions::new(eps))?.result)
}

/// `sum_w ||v - v_w||`.
pub fn geomed_objective<V: AsRef<[f64]>>(points: &[V], v: &[f64]) -> f64 {
    points.iter().map(|pt| linalg::dist(pt.as_ref(), v)).sum()
}

/// Independent check of a geometric-median result: the objective at
/// `result.point` minus a lower bound on the infimum obtained from a
/// restarted run at `eps / 100` (started from the first point rather than
/// the mean). The return value upper-bounds the true suboptimality.
pub fn geomed_gap_bound<V: AsRef<[f64]>>(points: &[V], result: &GeomedResult, eps: f64) -> Result<f64> {
    let p = validate_points(points)?;
    check_dim(p, result.point.len())?;
    let fine = eps / 100.0;
    let mut v = points[0].as_ref().to_vec();
    let mut next = vec![0.0; p];
    let mut best_lower = f64::NEG_INFINITY;
    for _ in 0..GEOMED_MAX_ITERS {
        let eval = weiszfeld_pass(points, &v, &mut next);
        let (cert, _) = certify_near_point(points, &eval, fine);
        best_lower = best_lower.max(eval.objective - cert);
        if cert <= fine {
            break;
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok((geomed_objective(points, &result.point) - best_lower).max(0.0))
}

/// Aggregation rule applied by the master.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Aggregator {
    Geomed { eps: f64 },
    Mean,
    /// Drop the `ceil(fraction * W)` largest-norm vectors, average the rest.
    NormThreshold { fraction: f64 },
    /// Coordinate-wise sign of the sum, `sign(0) = +1`.
    SignMajority,
}

/// Aggregated direction with geometric-median diagnostics when applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub direction: ModelVector,
    pub geomed: Option<GeomedResult>,
}

impl Aggregator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Aggregator::Geomed { eps } if !(eps > 0.0) => {
                Err(Error::InvalidConfig(format!("geomed eps must be positive, got {eps}")))
            }
            Aggregator::NormThreshold { fraction } if !(0.0..1.0).contains(&fraction) => Err(
                Error::InvalidConfig(format!("threshold fraction must lie in [0, 1), got {fraction}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn aggregate<V: AsRef<[f64]>>(&self, vectors: &[V]) -> Result<Aggregate> {
        self.validate()?;
        let p = validate_points(vectors)?;
        Ok(match *self {
            Aggregator::Geomed { eps } => {
                let r = geometric_median(vectors, eps)?;
                Aggregate { direction: r.point.clone(), geomed: Some(r) }
            }
            Aggregator::Mean => Aggregate { direction: linalg::mean(vectors), geomed: None },
            Aggregator::NormThreshold { fraction } => {
                let drop = (fraction * vectors.len() as f64).ceil() as usize;
                if drop >= vectors.len() {
                    return Err(Error::InvalidInput(format!(
                        "thresholding {} of {} vectors leaves nothing to average",
                        drop,
                        vectors.len()
                    )));
                }
                let mut order: Vec<(usize, f64)> =
                    vectors.iter().enumerate().map(|(i, v)| (i, linalg::norm_sq(v.as_ref()))).collect();
                order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut kept: Vec<usize> = order[drop..].iter().map(|(i, _)| *i).collect();
                kept.sort_unstable();
                let kept: Vec<&[f64]> = kept.iter().map(|&i| vectors[i].as_ref()).collect();
                Aggregate { direction: linalg::mean(&kept), geomed: None }
            }
            Aggregator::SignMajority => {
                let mut sum = vec![0.0; p];
                for v in vectors {
                    linalg::axpy(1.0, v.as_ref(), &mut sum);
                }
                let direction = sum.iter().map(|s| if *s < 0.0 { -1.0 } else { 1.0 }).collect();
                Aggregate { direction, geomed: None }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points() {
        let pts = vec![vec![1.5, -2.0]; 5];
        let r = geometric_median(&pts, 1e-9).unwrap();
        assert_eq!(r.point, vec![1.5, -2.0]);
        assert_eq!(r.objective, 0.0);
        assert!(r.certified);
    }

    #[test]
    fn one_dimensional_median() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let r = geometric_median(&pts, 1e-9).unwrap();
        assert!((r.point[0] - 1.0).abs() < 1e-6, "{:?}", r);
        assert!((r.objective - 10.0).abs() <= 1e-9);
        assert!(r.certified);
    }

    #[test]
    fn two_points_reach_segment_length() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        let r = geometric_median(&pts, 1e-8).unwrap();
        assert!((r.objective - 5.0).abs() <= 1e-8);
    }

    #[test]
    fn coincident_majority_is_optimal() {
        // Three copies of the origin outweigh two unit vectors.
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = geometric_median(&pts, 1e-9).unwrap();
        assert!(linalg::norm(&r.point) < 1e-9, "{:?}", r.point);
        assert!(r.certified);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(geometric_median(&empty, 1e-5).is_err());
        assert!(geometric_median(&[vec![1.0], vec![1.0, 2.0]], 1e-5).is_err());
        assert!(geometric_median(&[vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn objective_history_is_monotone() {
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![(i as f64 * 1.7).sin() * 3.0, (i as f64).cos()]).collect();
        let mut opts = GeomedOptions::new(1e-10);
        opts.record_objective = true;
        let run = geometric_median_with(&pts, &opts).unwrap();
        assert!(run.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(run.result.certified);
    }

    #[test]
    fn gap_bound_of_identical_points_is_zero() {
        let pts = vec![vec![2.0, 2.0]; 4];
        let r = geometric_median(&pts, 1e-6).unwrap();
        assert_eq!(geomed_gap_bound(&pts, &r, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn mean_rule() {
        let a = Aggregator::Mean.aggregate(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(a.direction, vec![0.5, 0.5]);
    }

    #[test]
    fn norm_threshold_drops_largest() {
        let a = Aggregator::NormThreshold { fraction: 0.5 }
            .aggregate(&[vec![100.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        assert_eq!(a.direction, vec![0.0, 1.0]);
    }

    #[test]
    fn norm_threshold_ties_drop_lower_index() {
        let a = Aggregator::NormThreshold { fraction: 0.3 }
            .aggregate(&[vec![1.0], vec![-1.0], vec![0.5]])
            .unwrap();
        assert_eq!(a.direction, vec![-0.25]);
    }

    #[test]
    fn norm_threshold_must_keep_one() {
        assert!(Aggregator::NormThreshold { fraction: 0.9 }.aggregate(&[vec![1.0]]).is_err());
        assert!(Aggregator::NormThreshold { fraction: 1.0 }.validate().is_err());
    }

    #[test]
    fn sign_majority_rule() {
        let a = Aggregator::SignMajority.aggregate(&[vec![1.0], vec![-2.0], vec![3.0]]).unwrap();
        assert_eq!(a.direction, vec![1.0]);
        let z = Aggregator::SignMajority.aggregate(&[vec![1.0, 1.0], vec![-1.0, -2.0]]).unwrap();
        assert_eq!(z.direction, vec![1.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            Aggregator::Mean.aggregate(&[vec![1.0], vec![1.0, 1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
