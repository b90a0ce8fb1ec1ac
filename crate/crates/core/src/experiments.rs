//! Metrics, convergence detection and multi-trial drivers.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{dual_value, primal_maximizers};
use crate::engine_async::{build_schedule, run_async, AsyncRunConfig, ScheduleParams};
use crate::engine_sync::{run, Method, SyncRunConfig};
use crate::error::{Error, Result};
use crate::problem::{aggregate_value, exact_optimum, generate_quadratic_with, ConditionRegime, ProblemInstance};
use crate::topology::{regular_cycle, Graph};
use crate::trace::{IterationRecord, Trace};

/// `(1/n) sum_i ||x_i - x*||^2 / ||x*||^2`.
pub fn normalized_error(x: &[DVector<f64>], x_star: &DVector<f64>) -> Result<f64> {
    let denom = x_star.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroOptimum);
    }
    if x.is_empty() {
        return Err(Error::Dimension { expected: 1, actual: 0 });
    }
    let mut total = 0.0;
    for xi in x {
        if xi.len() != x_star.len() {
            return Err(Error::Dimension {
                expected: x_star.len(),
                actual: xi.len(),
            });
        }
        total += (xi - x_star).norm_squared();
    }
    Ok(total / (denom * x.len() as f64))
}

/// Smallest recorded `t` with `e(t) <= threshold`.
pub fn convergence_time(trace: &Trace, threshold: f64) -> Option<usize> {
    first_below(&trace.records, threshold).map(|r| r.t)
}

fn first_below(records: &[IterationRecord], threshold: f64) -> Option<&IterationRecord> {
    records.iter().find(|r| r.err <= threshold)
}

/// Unit used to count communication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExchangeUnit {
    /// Network-wide rounds (sync) or broadcasts per node (async).
    #[default]
    Rounds,
    /// Per-edge messages (sync) or delivered bundles (async).
    Messages,
}

impl ExchangeUnit {
    pub fn count(self, r: &IterationRecord) -> u64 {
        match self {
            Self::Rounds => r.comm_rounds,
            Self::Messages => r.delivered_msgs.unwrap_or(r.comm_msgs),
        }
    }
}

impl std::str::FromStr for ExchangeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rounds" => Ok(Self::Rounds),
            "messages" | "msgs" => Ok(Self::Messages),
            other => Err(Error::config("unit", format!("unknown exchange unit {other:?}"))),
        }
    }
}

/// Everything one trial needs besides its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n: usize,
    pub p: usize,
    pub degree: usize,
    pub regime: ConditionRegime,
    pub method: Method,
    pub stepsize: f64,
    pub gamma: f64,
    pub big_gamma: f64,
    /// Iterations (sync) or ticks (async).
    pub max_iters: usize,
    pub threshold: f64,
    pub init_scale: f64,
    /// Async drift model; its seed is replaced by the trial seed.
    pub schedule: Option<ScheduleParams>,
    pub unit: ExchangeUnit,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            n: 50,
            p: 4,
            degree: 4,
            regime: ConditionRegime::Split,
            method: Method::Dbfgs,
            stepsize: 0.01,
            gamma: 1e-2,
            big_gamma: 1e-3,
            max_iters: 5000,
            threshold: 1e-2,
            init_scale: 1.0,
            schedule: None,
            unit: ExchangeUnit::Rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub method: Method,
    pub converged: bool,
    pub iters: Option<usize>,
    pub exchanges: Option<u64>,
    pub final_err: f64,
    pub skips: u64,
    pub diverged: bool,
}

impl TrialSummary {
    pub fn from_trace(seed: u64, method: Method, trace: &Trace, threshold: f64, unit: ExchangeUnit) -> Self {
        let hit = first_below(&trace.records, threshold);
        let last = trace.last();
        Self {
            seed,
            method,
            converged: hit.is_some(),
            iters: hit.map(|r| r.t),
            exchanges: hit.map(|r| unit.count(r)),
            final_err: last.map_or(f64::NAN, |r| r.err),
            skips: last.map_or(0, |r| r.skips),
            diverged: false,
        }
    }

    fn diverged(seed: u64, method: Method) -> Self {
        Self {
            seed,
            method,
            converged: false,
            iters: None,
            exchanges: None,
            final_err: f64::NAN,
            skips: 0,
            diverged: true,
        }
    }
}

/// Regenerates the instance from the seed, then runs one engine.
pub fn run_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialSummary> {
    let prob = generate_quadratic_with(cfg.n, cfg.p, seed, cfg.regime)?;
    let graph = regular_cycle(cfg.n, cfg.degree)?;
    let outcome = trace_for(cfg, &prob, &graph, seed);
    match outcome {
        Ok(trace) => Ok(TrialSummary::from_trace(
            seed,
            cfg.method,
            &trace,
            cfg.threshold,
            cfg.unit,
        )),
        Err(Error::Divergence { .. }) => Ok(TrialSummary::diverged(seed, cfg.method)),
        Err(e) => Err(e),
    }
}

/// Trace of one configured run with early stopping at the threshold.
pub fn trace_for(cfg: &TrialConfig, prob: &ProblemInstance, graph: &Graph, seed: u64) -> Result<Trace> {
    match cfg.schedule {
        None => run(
            &SyncRunConfig {
                method: cfg.method,
                stepsize: cfg.stepsize,
                max_iters: cfg.max_iters,
                gamma: cfg.gamma,
                big_gamma: cfg.big_gamma,
                threshold: Some(cfg.threshold),
                init_scale: cfg.init_scale,
            },
            prob,
            graph,
        ),
        Some(params) => {
            let schedule = build_schedule(ScheduleParams {
                n: cfg.n,
                horizon: cfg.max_iters,
                seed,
                ..params
            })?;
            run_async(
                &AsyncRunConfig {
                    method: cfg.method,
                    stepsize: cfg.stepsize,
                    gamma: cfg.gamma,
                    big_gamma: cfg.big_gamma,
                    threshold: Some(cfg.threshold),
                    init_scale: cfg.init_scale,
                },
                prob,
                graph,
                &schedule,
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: Vec<Bin>,
}

impl Histogram {
    /// Contiguous bins `[k w, (k+1) w)` covering every value.
    pub fn from_values(values: &[f64], bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::config("bin_width", "must be positive"));
        }
        let keys: Vec<i64> = values.iter().map(|v| (v / bin_width).floor() as i64).collect();
        let bins = match (keys.iter().min(), keys.iter().max()) {
            (Some(&lo), Some(&hi)) => (lo..=hi)
                .map(|k| Bin {
                    lo: k as f64 * bin_width,
                    hi: (k + 1) as f64 * bin_width,
                    count: keys.iter().filter(|&&x| x == k).count(),
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self { bin_width, bins })
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub summaries: Vec<TrialSummary>,
    pub histogram: Histogram,
}

impl TrialReport {
    pub fn converged_exchanges(&self) -> Vec<f64> {
        self.summaries
            .iter()
            .filter_map(|s| s.exchanges)
            .map(|e| e as f64)
            .collect()
    }

    pub fn median_exchanges(&self) -> Option<f64> {
        median(&self.converged_exchanges())
    }

    pub fn converged_count(&self) -> usize {
        self.summaries.iter().filter(|s| s.converged).count()
    }
}

/// Independent trials in parallel, reported in seed-list order.
pub fn run_trials(cfg: &TrialConfig, seeds: &[u64], bin_width: f64) -> Result<TrialReport> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one trial"));
    }
    let summaries = seeds
        .par_iter()
        .map(|&seed| run_trial(cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = summaries.iter().filter_map(|s| s.exchanges).map(|e| e as f64).collect();
    let histogram = Histogram::from_values(&values, bin_width)?;
    Ok(TrialReport { summaries, histogram })
}

pub const SUMMARY_HEADER: &str = "seed,method,converged,iters,exchanges,final_err,skips";

pub fn summary_csv(summaries: &[TrialSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.16e},{}",
            s.seed,
            s.method,
            s.converged,
            opt(s.iters.map(|v| v.to_string())),
            opt(s.exchanges.map(|v| v.to_string())),
            s.final_err,
            s.skips
        );
    }
    out
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}

/// Optimal dual value `h* = f(x*)` (zero duality gap).
pub fn optimal_dual_value(prob: &ProblemInstance) -> Result<f64> {
    Ok(aggregate_value(prob, &exact_optimum(prob)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub samples: usize,
    pub violations: usize,
    /// Largest `lhs - rhs`; negative when every sample holds with room.
    pub max_violation: f64,
}

pub const GAP_SLACK: f64 = 1e-8;

/// Checks `(mu/2) ||x(lambda) - x*||^2 <= h(lambda) - h* + 1e-8` per sample.
pub fn duality_gap_check(prob: &ProblemInstance, graph: &Graph, samples: &[DVector<f64>]) -> Result<GapReport> {
    let x_star = exact_optimum(prob)?;
    let h_star = aggregate_value(prob, &x_star);
    let mu = prob.mu();
    let mut report = GapReport {
        samples: samples.len(),
        violations: 0,
        max_violation: f64::NEG_INFINITY,
    };
    for lambda in samples {
        let x = primal_maximizers(prob, graph, lambda)?;
        let dist: f64 = x.iter().map(|xi| (xi - &x_star).norm_squared()).sum();
        let lhs = 0.5 * mu * dist;
        let rhs = dual_value(prob, graph, lambda)? - h_star;
        let gap = lhs - rhs;
        report.max_violation = report.max_violation.max(gap);
        if gap > GAP_SLACK {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// `t (h(t) - h*)` and `sqrt(t) ||x(t) - x*||` at the requested iterations.
pub fn rate_envelope(
    trace: &Trace,
    h_star: f64,
    x_star: &DVector<f64>,
    n: usize,
    ts: &[usize],
) -> Option<Vec<(usize, f64, f64)>> {
    let scale = x_star.norm() * (n as f64).sqrt();
    ts.iter()
        .map(|&t| {
            let r = trace.at(t)?;
            let tf = t as f64;
            Some((t, tf * (r.h - h_star), tf.sqrt() * r.err.sqrt() * scale))
        })
        .collect()
}

/// One row of a method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub final_t: usize,
    pub final_err: f64,
    pub exchanges_to_delta: Option<u64>,
    pub skips: u64,
}

impl CompareRow {
    pub fn from_trace(method: Method, trace: &Trace, delta: f64, unit: ExchangeUnit) -> Self {
        let last = trace.last();
        Self {
            method,
            final_t: last.map_or(0, |r| r.t),
            final_err: last.map_or(f64::NAN, |r| r.err),
            exchanges_to_delta: first_below(&trace.records, delta).map(|r| unit.count(r)),
            skips: last.map_or(0, |r| r.skips),
        }
    }
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut out = format!(
        "{:<8} {:>8} {:>14} {:>12} {:>8}\n",
        "method", "t", "err", "exchanges", "skips"
    );
    for r in rows {
        let ex = r.exchanges_to_delta.map_or_else(|| "-".to_string(), |e| e.to_string());
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>14.6e} {:>12} {:>8}",
            r.method.name(),
            r.final_t,
            r.final_err,
            ex,
            r.skips
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::QuadraticObjective;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn trace_of(errs: &[f64]) -> Trace {
        Trace {
            records: errs
                .iter()
                .enumerate()
                .map(|(t, &e)| IterationRecord::sync(t, 0.0, 0.0, e, 4 * t as u64, 8 * t as u64, 0))
                .collect(),
        }
    }

    #[test]
    fn error_examples() {
        let xs = v(&[1., -2.]);
        assert_eq!(normalized_error(&[xs.clone(), xs.clone()], &xs).unwrap(), 0.0);
        let x = vec![xs.clone() * 2.0, xs.clone(), xs.clone(), xs.clone()];
        assert!((normalized_error(&x, &xs).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(normalized_error(&vec![v(&[0., 0.]); 3], &xs).unwrap(), 1.0);
        assert!(matches!(
            normalized_error(std::slice::from_ref(&xs), &v(&[0., 0.])),
            Err(Error::ZeroOptimum)
        ));
    }

    #[test]
    fn convergence_examples() {
        let trace = trace_of(&[0.5, 0.02, 0.009, 0.004]);
        assert_eq!(convergence_time(&trace, 1e-2), Some(2));
        assert_eq!(convergence_time(&trace, 1.0), Some(0));
        assert_eq!(convergence_time(&trace, 1e-3), None);
        let s = TrialSummary::from_trace(7, Method::Dbfgs, &trace, 1e-2, ExchangeUnit::Rounds);
        assert_eq!((s.iters, s.exchanges), (Some(2), Some(8)));
        let s = TrialSummary::from_trace(7, Method::Dbfgs, &trace, 1e-2, ExchangeUnit::Messages);
        assert_eq!(s.exchanges, Some(16));
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::from_values(&[120., 180., 250., 610.], 100.).unwrap();
        assert_eq!(h.bins.len(), 6);
        assert_eq!(
            h.bins[0],
            Bin {
                lo: 100.,
                hi: 200.,
                count: 2
            }
        );
        assert_eq!(h.bins[3].count, 0);
        assert_eq!(h.total(), 4);
        let back: Histogram = serde_json::from_str(&h.to_json().unwrap()).unwrap();
        assert_eq!(back, h);
        assert!(Histogram::from_values(&[], 10.).unwrap().bins.is_empty());
        assert!(Histogram::from_values(&[1.], 0.).is_err());
    }

    #[test]
    fn median_and_csv() {
        assert_eq!(median(&[3., 1., 2.]), Some(2.));
        assert_eq!(median(&[4., 1., 2., 3.]), Some(2.5));
        assert_eq!(median(&[f64::NAN]), None);
        let csv = summary_csv(&[TrialSummary::diverged(3, Method::DualDescent)]);
        assert_eq!(csv, format!("{SUMMARY_HEADER}\n3,dd,false,,,NaN,0\n"));
    }

    #[test]
    fn gap_check_on_path_graph() {
        let q = |b: f64| QuadraticObjective::new(v(&[1.]), v(&[b])).unwrap();
        let prob = ProblemInstance::from_quadratics(vec![q(1.), q(0.), q(-1.)]).unwrap();
        let g = Graph::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap();
        // x(0) = (-1, 0, 1), x* = 0 (so e is undefined but the gap is not):
        // lhs = 1/2 * 2 = 1, h(0) = 1, h* = 0
        let r = duality_gap_check(&prob, &g, &[DVector::zeros(4)]).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.max_violation.abs() < 1e-15);
    }

    #[test]
    fn single_trial_matches_run() {
        let cfg = TrialConfig {
            n: 8,
            p: 2,
            max_iters: 300,
            ..TrialConfig::default()
        };
        let report = run_trials(&cfg, &[5], 10.).unwrap();
        let prob = generate_quadratic_with(8, 2, 5, cfg.regime).unwrap();
        let g = regular_cycle(8, 4).unwrap();
        let trace = trace_for(&cfg, &prob, &g, 5).unwrap();
        assert_eq!(report.summaries[0].iters, convergence_time(&trace, cfg.threshold));
        assert_eq!(report.histogram.total(), report.converged_count());
    }
}
