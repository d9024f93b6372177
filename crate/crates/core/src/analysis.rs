//! Convergence studies, empirical orders, error-expansion fits, cost/accuracy
//! comparisons and generalisation runs.

use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::data::{generate_batch, DistributionParams};
use crate::error::{Error, Result};
use crate::reference::ReferencePropagator;
use crate::spectral::{subflow_count, Quartic, SpectralProblem, StateVector};
use crate::splitcore::SchemeDescriptor;
use crate::train::sample_errors;

/// Error statistics of one scheme at one step count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub scheme: String,
    pub n: usize,
    pub h: f64,
    pub subflow_evals: usize,
    pub q15_9: f64,
    pub median: f64,
    pub q84_1: f64,
    pub mean: f64,
}

/// Nearest-rank quantile of already sorted data, `p` in percent.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per-sample L2 errors at `h = T / N` for each `N`, summarised by quantiles.
pub fn convergence_study(
    problem: &SpectralProblem,
    scheme: &SchemeDescriptor,
    pairs: &[(StateVector, StateVector)],
    ns: &[usize],
    t: f64,
) -> Result<Vec<ConvergenceRecord>> {
    if pairs.is_empty() {
        return Err(Error::invalid("convergence study needs at least one sample"));
    }
    if ns.is_empty() || ns.contains(&0) || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("step counts must be positive and strictly ascending"));
    }
    ns.iter()
        .map(|&n| {
            let h = t / n as f64;
            let mut errs = sample_errors(problem, &scheme.coeffs, pairs, h, n)?;
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            errs.sort_by(f64::total_cmp);
            Ok(ConvergenceRecord {
                scheme: scheme.name.clone(),
                n,
                h,
                subflow_evals: subflow_count(scheme.stages(), n, scheme.symmetric),
                q15_9: nearest_rank(&errs, 15.9),
                median: nearest_rank(&errs, 50.0),
                q84_1: nearest_rank(&errs, 84.1),
                mean,
            })
        })
        .collect()
}

pub fn convergence_csv(records: &[ConvergenceRecord]) -> String {
    let mut out = String::from("scheme,N,h,subflowEvals,q15.9,median,q84.1,mean\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.scheme, r.n, r.h, r.subflow_evals, r.q15_9, r.median, r.q84_1, r.mean
        );
    }
    out
}

/// Parse the output of [`convergence_csv`].
pub fn parse_convergence_csv(text: &str) -> Result<Vec<ConvergenceRecord>> {
    let bad = |line: usize, msg: &str| Error::Format {
        path: "<convergence csv>".into(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if !header.starts_with("scheme,N,") {
        return Err(bad(1, "missing header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(i + 1, "expected 8 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(i + 1, &e.to_string()));
        let int = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(i + 1, &e.to_string()));
        out.push(ConvergenceRecord {
            scheme: f[0].to_string(),
            n: int(f[1])?,
            h: num(f[2])?,
            subflow_evals: int(f[3])?,
            q15_9: num(f[4])?,
            median: num(f[5])?,
            q84_1: num(f[6])?,
            mean: num(f[7])?,
        });
    }
    Ok(out)
}

/// Slope estimate from errors at successively halved step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    pub order: f64,
    pub slopes: Vec<f64>,
    /// Fewer than three pairs, a non-finite slope, a slope that is not
    /// positive (errors not shrinking), or slope drift above 25%.
    pub non_asymptotic: bool,
}

/// Mean of `log2(E(2h) / E(h))` over consecutive pairs of `(h, E)` points.
///
/// Points may come in any order; each consecutive pair after sorting by
/// decreasing `h` must be a halving.
pub fn empirical_order(points: &[(f64, f64)]) -> Result<OrderEstimate> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least two (h, error) points"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut slopes = Vec::with_capacity(pts.len() - 1);
    for w in pts.windows(2) {
        let ratio = w[0].0 / w[1].0;
        if (ratio - 2.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "step sizes {} and {} are not a halving",
                w[0].0, w[1].0
            )));
        }
        slopes.push((w[0].1 / w[1].1).log2());
    }
    let order = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let finite = slopes.iter().all(|s| s.is_finite());
    let drift = if finite && slopes.len() > 1 {
        let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / order.abs()
    } else {
        f64::INFINITY
    };
    Ok(OrderEstimate {
        order,
        non_asymptotic: slopes.len() < 3
            || !finite
            || slopes.iter().any(|&s| s <= 0.0)
            || !(drift <= 0.25),
        slopes,
    })
}

/// Empirical order of a scheme against labelled data, using the RMS error
/// over the samples at `h = T / N`. `ns` must double from one entry to the next.
pub fn scheme_empirical_order(
    problem: &SpectralProblem,
    scheme: &SchemeDescriptor,
    pairs: &[(StateVector, StateVector)],
    ns: &[usize],
    t: f64,
) -> Result<OrderEstimate> {
    let pts = ns
        .iter()
        .map(|&n| {
            let h = t / n as f64;
            let e = sample_errors(problem, &scheme.coeffs, pairs, h, n)?;
            let rms = (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt();
            Ok((h, rms))
        })
        .collect::<Result<Vec<_>>>()?;
    empirical_order(&pts)
}

/// `E(h) ~ C2 h^2 + C4 h^4 + C6 h^6`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionFit {
    pub c2: f64,
    pub c4: f64,
    pub c6: f64,
    /// Sum of squared log residuals at the optimum.
    pub objective: f64,
    /// Ratio of extreme eigenvalues of the Gauss-Newton matrix.
    pub condition: f64,
    /// Parameter directions with curvature below `1e-12` of the largest.
    pub flat_directions: usize,
}

impl ExpansionFit {
    pub fn eval(&self, h: f64) -> f64 {
        let h2 = h * h;
        self.c2 * h2 + self.c4 * h2 * h2 + self.c6 * h2 * h2 * h2
    }
}

const FIT_MAX_ITERS: usize = 2000;

/// Fit `log E` by `log(sum_j c_j^2 h^(2j))` after dropping the two largest `h`.
pub fn fit_error_expansion(points: &[(f64, f64)]) -> Result<ExpansionFit> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    if pts.iter().any(|(h, e)| !(*h > 0.0 && *e > 0.0 && h.is_finite() && e.is_finite())) {
        return Err(Error::invalid("fit needs positive finite (h, error) points"));
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    let pts = pts.split_off(2.min(pts.len()));
    if pts.len() < 5 {
        return Err(Error::invalid(format!(
            "fit needs at least 5 points after excluding the two largest steps, got {}",
            pts.len()
        )));
    }
    // work in a scaled step variable so the three basis functions are O(1)
    let hs = pts[0].0;
    let xs: Vec<[f64; 3]> = pts
        .iter()
        .map(|(h, _)| {
            let s = (h / hs).powi(2);
            [s, s * s, s * s * s]
        })
        .collect();
    let logs: Vec<f64> = pts.iter().map(|(_, e)| e.ln()).collect();
    let emax = pts.iter().map(|p| p.1).fold(0.0, f64::max);

    let objective = |c: &Vector3<f64>| -> f64 {
        xs.iter()
            .zip(&logs)
            .map(|(x, l)| {
                let m = c[0] * c[0] * x[0] + c[1] * c[1] * x[1] + c[2] * c[2] * x[2];
                (m.ln() - l).powi(2)
            })
            .sum()
    };
    let normal = |c: &Vector3<f64>| -> (Matrix3<f64>, Vector3<f64>) {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (x, l) in xs.iter().zip(&logs) {
            let m = c[0] * c[0] * x[0] + c[1] * c[1] * x[1] + c[2] * c[2] * x[2];
            let r = m.ln() - l;
            let j = Vector3::new(2.0 * c[0] * x[0] / m, 2.0 * c[1] * x[1] / m, 2.0 * c[2] * x[2] / m);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        (jtj, jtr)
    };

    let scales = [1.0, 1e-2, 1e-4, 1e-8];
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut converged_any = false;
    for &a in &scales {
        for &b in &scales {
            for &c in &scales {
                let mut p = Vector3::new(a, b, c) * emax.sqrt();
                let mut f = objective(&p);
                let mut mu = 1e-3;
                let mut converged = false;
                for _ in 0..FIT_MAX_ITERS {
                    let (jtj, jtr) = normal(&p);
                    if jtr.amax() < 1e-15 || f < 1e-30 {
                        converged = true;
                        break;
                    }
                    let mut accepted = false;
                    for _ in 0..60 {
                        let mut damped = jtj;
                        for d in 0..3 {
                            damped[(d, d)] += mu * jtj[(d, d)].max(1e-300) + 1e-300;
                        }
                        let Some(step) = damped.lu().solve(&(-jtr)) else {
                            mu *= 10.0;
                            continue;
                        };
                        let cand = p + step;
                        let fc = objective(&cand);
                        if fc.is_finite() && fc < f {
                            let rel = (f - fc) / f.max(1e-300);
                            p = cand;
                            f = fc;
                            mu = (mu * 0.3).max(1e-15);
                            accepted = true;
                            if rel < 1e-15 {
                                converged = true;
                            }
                            break;
                        }
                        mu *= 10.0;
                    }
                    if !accepted || converged {
                        converged = true;
                        break;
                    }
                }
                converged_any |= converged;
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, p));
                }
            }
        }
    }
    let (objective_value, p) = best.expect("at least one start");
    if !converged_any || !objective_value.is_finite() {
        return Err(Error::NoConvergence {
            what: "error-expansion fit",
            iterations: FIT_MAX_ITERS,
            residual: objective_value,
        });
    }
    let (jtj, _) = normal(&p);
    let eig = SymmetricEigen::new(jtj).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().map(f64::abs).fold(f64::INFINITY, f64::min);
    let flat_directions = eig.iter().filter(|e| e.abs() <= 1e-12 * max).count();
    if flat_directions > 0 {
        log::warn!("error-expansion fit has {flat_directions} near-flat direction(s)");
    }
    Ok(ExpansionFit {
        c2: p[0] * p[0] / hs.powi(2),
        c4: p[1] * p[1] / hs.powi(4),
        c6: p[2] * p[2] / hs.powi(6),
        objective: objective_value,
        condition: max / min,
        flat_directions,
    })
}

/// Error-versus-cost curve of one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    pub scheme: String,
    /// `(subflow evaluations, error)` with strictly increasing cost.
    pub points: Vec<(f64, f64)>,
}

impl CostCurve {
    /// Curve from convergence records, using the mean error.
    pub fn from_records(records: &[ConvergenceRecord]) -> Result<Self> {
        let scheme = records
            .first()
            .map(|r| r.scheme.clone())
            .ok_or_else(|| Error::invalid("empty record list"))?;
        let mut points: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.subflow_evals as f64, r.mean))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("duplicate costs in a cost curve"));
        }
        Ok(Self { scheme, points })
    }

    /// Log-log interpolated error at `cost`; flags extrapolation.
    pub fn error_at(&self, cost: f64) -> (f64, bool) {
        interp_loglog(&self.points, cost)
    }

    /// Cost at which the curve reaches `error`, on the first segment that
    /// brackets it when walking towards higher cost.
    pub fn cost_for(&self, error: f64) -> (f64, bool) {
        let swapped: Vec<(f64, f64)> = self.points.iter().map(|&(c, e)| (e, c)).collect();
        for w in swapped.windows(2) {
            let (hi, lo) = (w[0].0.max(w[1].0), w[0].0.min(w[1].0));
            if error <= hi && error >= lo {
                return (interp_segment(w[0], w[1], error), false);
            }
        }
        // extrapolate from the end nearest in error
        let first = swapped[0];
        let last = swapped[swapped.len() - 1];
        let seg = if error > first.0 {
            (swapped[0], swapped[1.min(swapped.len() - 1)])
        } else {
            (swapped[swapped.len().saturating_sub(2)], last)
        };
        (interp_segment(seg.0, seg.1, error), true)
    }
}

fn interp_segment(a: (f64, f64), b: (f64, f64), x: f64) -> f64 {
    if a.0 == b.0 {
        return a.1;
    }
    let t = (x.ln() - a.0.ln()) / (b.0.ln() - a.0.ln());
    (a.1.ln() + t * (b.1.ln() - a.1.ln())).exp()
}

fn interp_loglog(points: &[(f64, f64)], x: f64) -> (f64, bool) {
    let n = points.len();
    if n == 1 {
        return (points[0].1, x != points[0].0);
    }
    let i = points.partition_point(|p| p.0 < x);
    if i < n && points[i].0 == x {
        return (points[i].1, false);
    }
    let (a, b, extrapolated) = if i == 0 {
        (points[0], points[1], true)
    } else if i == n {
        (points[n - 2], points[n - 1], true)
    } else {
        (points[i - 1], points[i], false)
    };
    (interp_segment(a, b, x), extrapolated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageRow {
    pub scheme: String,
    pub error: f64,
    pub rel_accuracy: f64,
    pub rel_speed: f64,
    pub extrapolated: bool,
}

/// Error of every scheme at a subflow budget, with accuracy and speed
/// relative to `baseline`.
pub fn advantage_table(curves: &[CostCurve], baseline: &str, budget: f64) -> Result<Vec<AdvantageRow>> {
    let base = curves
        .iter()
        .find(|c| c.scheme == baseline)
        .ok_or_else(|| Error::invalid(format!("baseline scheme `{baseline}` not among the curves")))?;
    let (base_err, base_extra) = base.error_at(budget);
    Ok(curves
        .iter()
        .map(|c| {
            if c.points == base.points {
                return AdvantageRow {
                    scheme: c.scheme.clone(),
                    error: base_err,
                    rel_accuracy: 1.0,
                    rel_speed: 1.0,
                    extrapolated: base_extra,
                };
            }
            let (err, extra) = c.error_at(budget);
            let (base_cost, cost_extra) = base.cost_for(err);
            AdvantageRow {
                scheme: c.scheme.clone(),
                error: err,
                rel_accuracy: base_err / err,
                rel_speed: base_cost / budget,
                extrapolated: extra || base_extra || cost_extra,
            }
        })
        .collect())
}

pub fn advantage_csv(rows: &[AdvantageRow], budget: f64) -> String {
    let mut out = format!("scheme,error_at_{budget},relAccuracy,relSpeed,extrapolated\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6e},{:.4},{:.4},{}",
            r.scheme, r.error, r.rel_accuracy, r.rel_speed, r.extrapolated
        );
    }
    out
}

/// Named potentials of the generalisation experiments.
pub fn named_potential(name: &str) -> Option<Quartic> {
    match name.to_ascii_uppercase().as_str() {
        "V1" => Some(Quartic::DOUBLE_WELL),
        "V2" => Some(Quartic::new(1.0, -10.0, -10.0)),
        "V3" => Some(Quartic::new(3.0, -50.0, 20.0)),
        "V4" => Some(Quartic::new(1.0, -30.0, 0.0)),
        _ => None,
    }
}

/// Named final times of the generalisation experiments.
pub fn named_time(name: &str) -> Option<f64> {
    match name.to_ascii_uppercase().as_str() {
        "T1" => Some(10.0),
        "T2" => Some(30.0),
        _ => None,
    }
}

/// One initial-value-problem configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub name: String,
    pub t: f64,
    pub params: DistributionParams,
    pub potential: Quartic,
}

impl StudyConfig {
    /// Parse names like `T1-U1-V2` (any separator among `-`, `,`, `/`).
    pub fn named(name: &str) -> Result<Self> {
        let parts: Vec<&str> = name.split(['-', ',', '/']).map(str::trim).collect();
        let err = || Error::invalid(format!("unknown configuration `{name}`, expected e.g. T1-U1-V2"));
        if parts.len() != 3 {
            return Err(err());
        }
        Ok(Self {
            name: name.to_string(),
            t: named_time(parts[0]).ok_or_else(err)?,
            params: DistributionParams::named(parts[1]).ok_or_else(err)?,
            potential: named_potential(parts[2]).ok_or_else(err)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub records: Vec<ConvergenceRecord>,
}

/// Convergence study per configuration on freshly generated labelled data.
#[allow(clippy::too_many_arguments)]
pub fn generalization_study(
    schemes: &[SchemeDescriptor],
    configs: &[StudyConfig],
    m: usize,
    half_width: f64,
    ns: &[usize],
    count: usize,
    seed: u64,
) -> Result<Vec<StudyResult>> {
    configs
        .iter()
        .map(|config| {
            let problem = SpectralProblem::with_quartic(m, half_width, config.potential)?;
            let reference = ReferencePropagator::build(&problem)?;
            let data = generate_batch(&problem, &reference, config.params, count, seed, config.t)?;
            let mut records = Vec::new();
            for s in schemes {
                records.extend(convergence_study(&problem, s, &data.pairs, ns, config.t)?);
            }
            Ok(StudyResult {
                config: config.clone(),
                records,
            })
        })
        .collect()
}
