//! Synchronous engine: D-BFGS and dual descent with round accounting.
//!
//! One D-BFGS iteration runs four neighbor exchanges (descent components,
//! dual blocks, primal maximizers, gradients); dual descent needs two. All
//! reads within an iteration see the previous round's values.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::curvature::{assemble_direction, split_direction, NeighborhoodCurvature, UpdateOutcome};
use crate::dual::{dual_value, DualState};
use crate::error::{Error, Result};
use crate::experiments::normalized_error;
use crate::problem::{exact_optimum, ProblemInstance};
use crate::topology::{Graph, NodeId};
use crate::trace::{IterationRecord, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "dbfgs")]
    Dbfgs,
    #[serde(rename = "dd")]
    DualDescent,
}

impl Method {
    /// Communication rounds per synchronous iteration.
    pub fn rounds_per_iteration(self) -> u64 {
        match self {
            Method::Dbfgs => 4,
            Method::DualDescent => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Dbfgs => "dbfgs",
            Method::DualDescent => "dd",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dbfgs" | "d-bfgs" => Ok(Method::Dbfgs),
            "dd" | "dual_descent" | "dual-descent" => Ok(Method::DualDescent),
            _ => Err(Error::config(
                "method",
                format!("unknown method {s:?} (use dbfgs or dd)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncRunConfig {
    pub method: Method,
    pub stepsize: f64,
    pub max_iters: usize,
    pub gamma: f64,
    pub big_gamma: f64,
    /// Stop once the normalized error drops to this value. `None` or a
    /// non-finite value disables early stopping.
    pub threshold: Option<f64>,
    /// `B^i(0) = init_scale * I`.
    pub init_scale: f64,
}

impl Default for SyncRunConfig {
    fn default() -> Self {
        Self {
            method: Method::Dbfgs,
            stepsize: 0.01,
            max_iters: 500,
            gamma: 1e-2,
            big_gamma: 1e-3,
            threshold: None,
            init_scale: 1.0,
        }
    }
}

impl SyncRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(Error::config("eps", "step size must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("iters", "must be at least 1"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config("gamma", "must be positive"));
        }
        if !(self.big_gamma >= 0.0) {
            return Err(Error::config("Gamma", "must be non-negative"));
        }
        if !(self.init_scale >= self.gamma) {
            return Err(Error::config("init_scale", "must be at least gamma"));
        }
        if let Some(th) = self.threshold {
            if !(th > 0.0) {
                return Err(Error::config("threshold", "must be positive"));
            }
        }
        Ok(())
    }

    fn active_threshold(&self) -> Option<f64> {
        self.threshold.filter(|t| t.is_finite())
    }
}

pub(crate) fn check_finite(v: &DVector<f64>, iteration: usize, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, what })
    }
}

/// Reference primal optimum, when the problem admits one in closed form.
pub(crate) fn reference_optimum(prob: &ProblemInstance) -> Option<DVector<f64>> {
    exact_optimum(prob).ok()
}

pub(crate) fn error_or_nan(x: &[DVector<f64>], x_star: Option<&DVector<f64>>) -> f64 {
    x_star.and_then(|xs| normalized_error(x, xs).ok()).unwrap_or(f64::NAN)
}

/// Block of a neighborhood direction addressed to one node.
pub type DirectionBlock = (NodeId, DVector<f64>);

/// Whole-network simulator state for the synchronous algorithms.
#[derive(Debug, Clone)]
pub struct SyncEngine<'a> {
    prob: &'a ProblemInstance,
    graph: &'a Graph,
    config: SyncRunConfig,
    state: DualState,
    curvature: Vec<NeighborhoodCurvature>,
    t: usize,
    rounds: u64,
    msgs: u64,
    x_star: Option<DVector<f64>>,
}

impl<'a> SyncEngine<'a> {
    /// Engine at `lambda(0) = 0`.
    pub fn new(config: SyncRunConfig, prob: &'a ProblemInstance, graph: &'a Graph) -> Result<Self> {
        let state = DualState::zero(prob, graph)?;
        Self::from_state(config, prob, graph, state)
    }

    pub fn from_state(
        config: SyncRunConfig,
        prob: &'a ProblemInstance,
        graph: &'a Graph,
        state: DualState,
    ) -> Result<Self> {
        config.validate()?;
        if prob.n() != graph.n() {
            return Err(Error::Dimension {
                expected: graph.n(),
                actual: prob.n(),
            });
        }
        let curvature = (0..graph.n())
            .map(|i| {
                NeighborhoodCurvature::with_initial_scale(
                    crate::topology::neighborhood_index(graph, i, prob.p()),
                    config.gamma,
                    config.big_gamma,
                    config.init_scale,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            prob,
            graph,
            config,
            state,
            curvature,
            t: 0,
            rounds: 0,
            msgs: 0,
            x_star: reference_optimum(prob),
        })
    }

    pub fn state(&self) -> &DualState {
        &self.state
    }

    pub fn curvature(&self) -> &[NeighborhoodCurvature] {
        &self.curvature
    }

    pub fn curvature_mut(&mut self) -> &mut [NeighborhoodCurvature] {
        &mut self.curvature
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn comm_rounds(&self) -> u64 {
        self.rounds
    }

    pub fn skips(&self) -> u64 {
        self.curvature.iter().map(|c| c.skip_count() as u64).sum()
    }

    /// Per-node neighborhood directions `e^i`, split into per-node blocks.
    pub fn local_directions(&self) -> Result<Vec<Vec<DirectionBlock>>> {
        self.curvature
            .iter()
            .map(|c| {
                let g_nbhd = c.index().gather(&self.state.g);
                Ok(split_direction(c.index(), &c.descent_direction(&g_nbhd)?))
            })
            .collect()
    }

    /// Assembled global direction `d(t)` from the distributed exchange.
    pub fn assembled_direction(&self) -> Result<DVector<f64>> {
        let p = self.prob.p();
        let parts = self.local_directions()?;
        let mut d = DVector::zeros(self.graph.m() * p);
        for i in 0..self.graph.n() {
            let own = &parts[i][0].1;
            let received: Vec<(NodeId, DVector<f64>)> = self
                .graph
                .neighbors(i)
                .iter()
                .map(|&j| {
                    let block = parts[j]
                        .iter()
                        .find(|(to, _)| *to == i)
                        .map(|(_, b)| b.clone())
                        .ok_or(Error::MissingContribution { from: j, to: i })?;
                    Ok((j, block))
                })
                .collect::<Result<_>>()?;
            let di = assemble_direction(self.graph, i, own, &received)?;
            let r = self.graph.node_range(i, p);
            d.rows_mut(r.start, r.len()).copy_from(&di);
        }
        Ok(d)
    }

    /// One D-BFGS iteration.
    pub fn dbfgs_iteration(&mut self) -> Result<()> {
        let next_t = self.t + 1;
        let m = self.graph.m() as u64;
        // descent components, exchange round 1, local assembly
        let d = self.assembled_direction()?;
        // dual update, exchange round 2
        let lambda = &self.state.lambda + &d * self.config.stepsize;
        check_finite(&lambda, next_t, "dual variable")?;
        // primal recovery (round 3) and gradient refresh (round 4)
        let next = DualState::at(self.prob, self.graph, lambda)?;
        check_finite(&next.g, next_t, "dual gradient")?;
        for c in &mut self.curvature {
            let idx = c.index();
            let pair = c.variations(
                &idx.gather(&self.state.lambda),
                &idx.gather(&next.lambda),
                &idx.gather(&self.state.g),
                &idx.gather(&next.g),
            )?;
            let _: UpdateOutcome = c.dbfgs_update(&pair);
        }
        self.state = next;
        self.t = next_t;
        self.rounds += 4;
        self.msgs += 4 * m;
        Ok(())
    }

    /// One dual gradient descent iteration.
    pub fn dual_descent_iteration(&mut self) -> Result<()> {
        let next_t = self.t + 1;
        let lambda = &self.state.lambda - &self.state.g * self.config.stepsize;
        check_finite(&lambda, next_t, "dual variable")?;
        let next = DualState::at(self.prob, self.graph, lambda)?;
        check_finite(&next.g, next_t, "dual gradient")?;
        self.state = next;
        self.t = next_t;
        self.rounds += 2;
        self.msgs += 2 * self.graph.m() as u64;
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        match self.config.method {
            Method::Dbfgs => self.dbfgs_iteration(),
            Method::DualDescent => self.dual_descent_iteration(),
        }
    }

    pub fn record(&self) -> Result<IterationRecord> {
        let h = dual_value(self.prob, self.graph, &self.state.lambda)?;
        if !h.is_finite() {
            return Err(Error::Divergence {
                iteration: self.t,
                what: "dual objective",
            });
        }
        Ok(IterationRecord::sync(
            self.t,
            h,
            self.state.g.norm(),
            error_or_nan(&self.state.x, self.x_star.as_ref()),
            self.rounds,
            self.msgs,
            self.skips(),
        ))
    }
}

/// Run from `lambda(0) = 0` until `max_iters` or the error threshold.
pub fn run(config: &SyncRunConfig, prob: &ProblemInstance, graph: &Graph) -> Result<Trace> {
    Ok(run_with_state(config, prob, graph)?.0)
}

/// Like [`run`], also returning the final dual state.
pub fn run_with_state(config: &SyncRunConfig, prob: &ProblemInstance, graph: &Graph) -> Result<(Trace, DualState)> {
    let mut engine = SyncEngine::new(*config, prob, graph)?;
    let mut trace = Trace {
        records: Vec::with_capacity(config.max_iters + 1),
    };
    trace.records.push(engine.record()?);
    let threshold = config.active_threshold();
    for _ in 0..config.max_iters {
        engine.step()?;
        let rec = engine.record()?;
        trace.records.push(rec);
        if threshold.is_some_and(|th| rec.err <= th) {
            break;
        }
    }
    Ok((trace, engine.state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::global_direction_oracle;
    use crate::problem::{generate_quadratic, QuadraticObjective};
    use crate::topology::regular_cycle;

    fn p3() -> (ProblemInstance, Graph) {
        let q = |b: f64| QuadraticObjective::new(DVector::from_element(1, 1.0), DVector::from_element(1, b)).unwrap();
        (
            ProblemInstance::from_quadratics(vec![q(1.), q(0.), q(-1.)]).unwrap(),
            Graph::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap(),
        )
    }

    #[test]
    fn dual_descent_single_step_on_path() {
        let (prob, g) = p3();
        let cfg = SyncRunConfig {
            method: Method::DualDescent,
            stepsize: 0.1,
            ..Default::default()
        };
        let mut e = SyncEngine::new(cfg, &prob, &g).unwrap();
        e.step().unwrap();
        let expected = DVector::from_row_slice(&[0.1, -0.1, 0.1, -0.1]);
        assert!((&e.state().lambda - expected).amax() < 1e-15);
        assert_eq!(e.comm_rounds(), 2);
    }

    #[test]
    fn dbfgs_first_step_matches_global_oracle() {
        let (prob, g) = p3();
        let cfg = SyncRunConfig {
            stepsize: 0.1,
            gamma: 1e-2,
            big_gamma: 0.0,
            ..Default::default()
        };
        let mut e = SyncEngine::new(cfg, &prob, &g).unwrap();
        let oracle = global_direction_oracle(&g, e.curvature(), &e.state().g);
        let expected = &e.state().lambda + oracle * 0.1;
        e.step().unwrap();
        assert!((&e.state().lambda - &expected).amax() <= 1e-15);
        // With B = I every neighborhood contributes -g on its blocks:
        // node 0's block sits in 2 neighborhoods, node 1's and 2's in 3 and 2.
        let hand = DVector::from_row_slice(&[0.1 * 2.0, -0.1 * 3.0, 0.1 * 3.0, -0.1 * 2.0]);
        assert!((&e.state().lambda - hand).amax() <= 1e-15);
        assert_eq!(e.comm_rounds(), 4);
        assert!(e.state().is_consistent(&prob, &g));
    }

    #[test]
    fn fixed_point_at_zero_gradient() {
        // identical objectives: lambda = 0 is already optimal
        let q =
            QuadraticObjective::new(DVector::from_row_slice(&[1., 2.]), DVector::from_row_slice(&[0.5, 0.5])).unwrap();
        let prob = ProblemInstance::from_quadratics(vec![q; 5]).unwrap();
        let g = regular_cycle(5, 2).unwrap();
        for method in [Method::Dbfgs, Method::DualDescent] {
            let cfg = SyncRunConfig {
                method,
                ..Default::default()
            };
            let mut e = SyncEngine::new(cfg, &prob, &g).unwrap();
            let before = e.state().clone();
            e.step().unwrap();
            assert_eq!(e.state(), &before);
            if method == Method::Dbfgs {
                assert_eq!(e.skips(), 5);
            }
        }
    }

    #[test]
    fn disabled_threshold_runs_all_iterations() {
        let prob = generate_quadratic(6, 2, 1).unwrap();
        let g = regular_cycle(6, 2).unwrap();
        let cfg = SyncRunConfig {
            max_iters: 17,
            threshold: Some(f64::INFINITY),
            ..Default::default()
        };
        let trace = run(&cfg, &prob, &g).unwrap();
        assert_eq!(trace.iterations().len(), 17);
        assert_eq!(trace.last().unwrap().comm_rounds, 4 * 17);
        let dd = run(
            &SyncRunConfig {
                method: Method::DualDescent,
                ..cfg
            },
            &prob,
            &g,
        )
        .unwrap();
        assert_eq!(dd.last().unwrap().comm_rounds, 2 * 17);
    }

    #[test]
    fn runs_are_bit_identical() {
        let prob = generate_quadratic(8, 4, 3).unwrap();
        let g = regular_cycle(8, 4).unwrap();
        let cfg = SyncRunConfig {
            max_iters: 40,
            ..Default::default()
        };
        assert_eq!(
            run(&cfg, &prob, &g).unwrap().to_csv(),
            run(&cfg, &prob, &g).unwrap().to_csv()
        );
    }

    #[test]
    fn threshold_stops_early() {
        let prob = generate_quadratic(6, 2, 4).unwrap();
        let g = regular_cycle(6, 2).unwrap();
        let cfg = SyncRunConfig {
            max_iters: 5000,
            threshold: Some(1e-2),
            ..Default::default()
        };
        let trace = run(&cfg, &prob, &g).unwrap();
        let last = trace.last().unwrap();
        assert!(last.err <= 1e-2);
        assert!(trace.records[trace.records.len() - 2].err > 1e-2);
    }

    #[test]
    fn huge_step_reports_divergence() {
        let prob = generate_quadratic(6, 2, 4).unwrap();
        let g = regular_cycle(6, 2).unwrap();
        let cfg = SyncRunConfig {
            method: Method::DualDescent,
            stepsize: 1e3,
            max_iters: 5000,
            ..Default::default()
        };
        assert!(matches!(run(&cfg, &prob, &g), Err(Error::Divergence { .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let prob = generate_quadratic(4, 2, 4).unwrap();
        let g = regular_cycle(4, 2).unwrap();
        for cfg in [
            SyncRunConfig {
                stepsize: 0.0,
                ..Default::default()
            },
            SyncRunConfig {
                max_iters: 0,
                ..Default::default()
            },
            SyncRunConfig {
                gamma: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(run(&cfg, &prob, &g), Err(Error::Config { .. })));
        }
    }
}
