//! Asynchronous D-BFGS and dual descent on a discrete-event timeline.
//!
//! Each node `i` is available at the ticks in its set `T_i`. At an available
//! tick it reads every bundle its neighbors sent strictly before that tick,
//! updates its own dual block with whatever descent components it holds,
//! recovers its primal maximizer and gradient against its (possibly stale)
//! neighbor views, updates its curvature, computes a fresh neighborhood
//! direction and sends `(lambda_i, x_i, g_i, e^i_j)` to every neighbor. Nodes
//! that are busy apply nothing.
//!
//! A bundle sent at tick `s` becomes readable at the recipient's first
//! availability strictly after `s`. With `pi_i(t)` the last availability of
//! `i` before `t`, the view node `i` holds of neighbor `j` during tick `t`
//! was therefore sent at `pi_j(pi_i(t))`.
//!
//! Global metrics come from an observer that concatenates the nodes' own
//! dual blocks; it never feeds anything back.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curvature::{split_direction, NeighborhoodCurvature};
use crate::dual::{lagrangian, DualState};
use crate::engine_sync::{check_finite, error_or_nan, reference_optimum, Method};
use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::topology::{neighborhood_index, Graph, NodeId};
use crate::trace::{IterationRecord, Trace};

/// Parameters that fully determine a generated schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n: usize,
    pub horizon: usize,
    #[serde(rename = "mu_d")]
    pub mean_gap: f64,
    #[serde(rename = "sigma_d")]
    pub std_gap: f64,
    #[serde(rename = "B_bound")]
    pub b_bound: usize,
    pub seed: u64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            n: 50,
            horizon: 5000,
            mean_gap: 3.0,
            std_gap: 1.0,
            b_bound: 12,
            seed: 0,
        }
    }
}

/// Availability sets `T_i` over ticks `0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    ticks: Vec<Vec<usize>>,
    available: Vec<Vec<bool>>,
    horizon: usize,
    b_bound: Option<usize>,
    params: Option<ScheduleParams>,
}

/// Largest gap between availabilities that keeps every neighbor view within
/// the window `t - B + 1`: views can be two gaps old.
pub fn max_gap_for_bound(b_bound: usize) -> usize {
    ((b_bound.saturating_sub(1)) / 2).max(1)
}

pub fn build_schedule(params: ScheduleParams) -> Result<Schedule> {
    let ScheduleParams {
        n,
        horizon,
        mean_gap,
        std_gap,
        b_bound,
        seed,
    } = params;
    if !(mean_gap >= 1.0) {
        return Err(Error::config("mu_d", "mean gap must be at least 1"));
    }
    if !(std_gap >= 0.0) {
        return Err(Error::config("sigma_d", "must be non-negative"));
    }
    if b_bound < 3 {
        return Err(Error::config(
            "B_bound",
            "must be at least 3 (a one-tick delivery delay already ages views by two ticks)",
        ));
    }
    if n == 0 || horizon == 0 {
        return Err(Error::config("horizon", "need at least one node and one tick"));
    }
    let max_gap = max_gap_for_bound(b_bound);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ticks = (0..n)
        .map(|_| {
            let mut list = vec![0];
            let mut t = 0usize;
            loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                let gap = (mean_gap + std_gap * z).round().max(1.0) as usize;
                t += gap.min(max_gap);
                if t >= horizon {
                    break;
                }
                list.push(t);
            }
            list
        })
        .collect();
    let mut s = Schedule::from_ticks(ticks, horizon, Some(b_bound))?;
    s.params = Some(params);
    Ok(s)
}

impl Schedule {
    /// Custom availability sets. `b_bound = None` disables the staleness check.
    pub fn from_ticks(mut ticks: Vec<Vec<usize>>, horizon: usize, b_bound: Option<usize>) -> Result<Self> {
        for list in &mut ticks {
            list.sort_unstable();
            list.dedup();
            list.retain(|&t| t < horizon);
        }
        let available = ticks
            .iter()
            .map(|list| {
                let mut row = vec![false; horizon];
                for &t in list {
                    row[t] = true;
                }
                row
            })
            .collect();
        Ok(Self {
            ticks,
            available,
            horizon,
            b_bound,
            params: None,
        })
    }

    /// Every node available at every tick.
    pub fn synchronous(n: usize, horizon: usize) -> Self {
        Self::from_ticks(vec![(0..horizon).collect(); n], horizon, Some(3)).expect("valid")
    }

    pub fn n(&self) -> usize {
        self.ticks.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn b_bound(&self) -> Option<usize> {
        self.b_bound
    }

    pub fn params(&self) -> Option<&ScheduleParams> {
        self.params.as_ref()
    }

    pub fn ticks(&self, i: NodeId) -> &[usize] {
        &self.ticks[i]
    }

    pub fn is_available(&self, i: NodeId, t: usize) -> bool {
        self.available[i].get(t).copied().unwrap_or(false)
    }

    /// Latest availability of `i` strictly before `t`; 0 when there is none.
    pub fn pi(&self, i: NodeId, t: usize) -> usize {
        let list = &self.ticks[i];
        let k = list.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else {
            list[k - 1]
        }
    }

    /// Send time of the view node `i` holds of `j` during tick `t`.
    pub fn pi_neighbor(&self, i: NodeId, j: NodeId, t: usize) -> usize {
        self.pi(j, self.pi(i, t))
    }

    /// Check `max(0, t - B + 1) <= pi_j^i(t) <= t` for all edges and ticks.
    pub fn check_bound(&self, g: &Graph) -> Result<()> {
        let Some(b) = self.b_bound else { return Ok(()) };
        for t in 1..=self.horizon {
            let lo = (t + 1).saturating_sub(b);
            for &(i, j) in g.directed_edges() {
                let s = self.pi_neighbor(i, j, t);
                if s < lo || s > t {
                    return Err(Error::Staleness {
                        tick: t,
                        node: i,
                        neighbor: j,
                        stamp: s,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let params = self
            .params
            .ok_or_else(|| Error::config("schedule", "only generated schedules serialize"))?;
        Ok(serde_json::to_string_pretty(&params)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        build_schedule(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsyncRunConfig {
    pub method: Method,
    pub stepsize: f64,
    pub gamma: f64,
    pub big_gamma: f64,
    pub threshold: Option<f64>,
    pub init_scale: f64,
}

impl Default for AsyncRunConfig {
    fn default() -> Self {
        Self {
            method: Method::Dbfgs,
            stepsize: 0.007,
            gamma: 1e-2,
            big_gamma: 1e-3,
            threshold: None,
            init_scale: 1.0,
        }
    }
}

impl AsyncRunConfig {
    pub fn validate(&self) -> Result<()> {
        crate::engine_sync::SyncRunConfig {
            method: self.method,
            stepsize: self.stepsize,
            max_iters: 1,
            gamma: self.gamma,
            big_gamma: self.big_gamma,
            threshold: self.threshold,
            init_scale: self.init_scale,
        }
        .validate()
    }
}

#[derive(Debug, Clone)]
struct Bundle {
    from: NodeId,
    sent_at: usize,
    lambda: DVector<f64>,
    x: DVector<f64>,
    g: DVector<f64>,
    /// Descent component for the recipient (D-BFGS only).
    e: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
struct View {
    stamp: usize,
    lambda: DVector<f64>,
    x: DVector<f64>,
    g: DVector<f64>,
}

#[derive(Debug, Clone)]
struct AsyncNode {
    lambda: DVector<f64>,
    x: DVector<f64>,
    g: DVector<f64>,
    /// One view per neighbor, in neighbor order.
    views: Vec<View>,
    curvature: Option<NeighborhoodCurvature>,
    own_e: DVector<f64>,
    received_e: DVector<f64>,
    /// Latest descent components for each neighbor, in neighbor order.
    out_e: Vec<DVector<f64>>,
    prev_lambda_nbhd: DVector<f64>,
    prev_g_nbhd: DVector<f64>,
}

/// Complete simulated network.
#[derive(Debug, Clone)]
pub struct AsyncWorld<'a> {
    prob: &'a ProblemInstance,
    graph: &'a Graph,
    schedule: &'a Schedule,
    config: AsyncRunConfig,
    nodes: Vec<AsyncNode>,
    inbox: Vec<Vec<Bundle>>,
    /// Position of `i` in `neighbors(j)`, keyed by directed edge `(i, j)`.
    reverse_slot: Vec<usize>,
    t: usize,
    sends: u64,
    sent_msgs: u64,
    delivered: u64,
    max_staleness: u64,
    x_star: Option<DVector<f64>>,
}

impl<'a> AsyncWorld<'a> {
    /// All nodes start from a consistent exchange at `lambda = 0`.
    pub fn new(
        config: AsyncRunConfig,
        prob: &'a ProblemInstance,
        graph: &'a Graph,
        schedule: &'a Schedule,
    ) -> Result<Self> {
        config.validate()?;
        if prob.n() != graph.n() || schedule.n() != graph.n() {
            return Err(Error::Dimension {
                expected: graph.n(),
                actual: if prob.n() != graph.n() { prob.n() } else { schedule.n() },
            });
        }
        let p = prob.p();
        let init = DualState::zero(prob, graph)?;
        let block = |i: NodeId, v: &DVector<f64>| {
            let r = graph.node_range(i, p);
            v.rows(r.start, r.len()).into_owned()
        };
        let mut nodes: Vec<AsyncNode> = (0..graph.n())
            .map(|i| {
                let idx = neighborhood_index(graph, i, p);
                let views = graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| View {
                        stamp: 0,
                        lambda: block(j, &init.lambda),
                        x: init.x[j].clone(),
                        g: block(j, &init.g),
                    })
                    .collect();
                let curvature = match config.method {
                    Method::Dbfgs => Some(NeighborhoodCurvature::with_initial_scale(
                        idx.clone(),
                        config.gamma,
                        config.big_gamma,
                        config.init_scale,
                    )?),
                    Method::DualDescent => None,
                };
                Ok(AsyncNode {
                    lambda: block(i, &init.lambda),
                    x: init.x[i].clone(),
                    g: block(i, &init.g),
                    views,
                    curvature,
                    own_e: DVector::zeros(graph.degree(i) * p),
                    received_e: DVector::zeros(graph.degree(i) * p),
                    out_e: Vec::new(),
                    prev_lambda_nbhd: idx.gather(&init.lambda),
                    prev_g_nbhd: idx.gather(&init.g),
                })
            })
            .collect::<Result<_>>()?;

        // initial descent components travel with the initial exchange
        if config.method == Method::Dbfgs {
            let parts: Vec<_> = nodes
                .iter()
                .map(|node| {
                    let c = node.curvature.as_ref().expect("dbfgs node");
                    let e = c.descent_direction(&node.prev_g_nbhd)?;
                    Ok(split_direction(c.index(), &e))
                })
                .collect::<Result<_>>()?;
            for (i, blocks) in parts.into_iter().enumerate() {
                for (j, e) in blocks {
                    if j == i {
                        nodes[i].own_e = e;
                    } else {
                        nodes[j].received_e += e;
                    }
                }
            }
        }

        let reverse_slot = graph
            .directed_edges()
            .iter()
            .map(|&(i, j)| graph.neighbors(j).binary_search(&i).expect("symmetric"))
            .collect();
        Ok(Self {
            prob,
            graph,
            schedule,
            config,
            nodes,
            inbox: vec![Vec::new(); graph.n()],
            reverse_slot,
            t: 0,
            sends: 0,
            sent_msgs: 0,
            delivered: 0,
            max_staleness: 0,
            x_star: reference_optimum(prob),
        })
    }

    pub fn tick(&self) -> usize {
        self.t
    }

    /// Observer's global dual vector `[lambda_1^1; ...; lambda_n^n]`.
    pub fn global_lambda(&self) -> DVector<f64> {
        let p = self.prob.p();
        let mut out = DVector::zeros(self.graph.m() * p);
        for (i, node) in self.nodes.iter().enumerate() {
            let r = self.graph.node_range(i, p);
            out.rows_mut(r.start, r.len()).copy_from(&node.lambda);
        }
        out
    }

    /// Send time of node `i`'s current view of its `k`-th neighbor.
    pub fn view_stamp(&self, i: NodeId, k: usize) -> usize {
        self.nodes[i].views[k].stamp
    }

    pub fn skips(&self) -> u64 {
        self.nodes
            .iter()
            .filter_map(|n| n.curvature.as_ref())
            .map(|c| c.skip_count() as u64)
            .sum()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// Views held at the start of tick `t` must come from `pi_j(pi_i(t))`
    /// and lie inside the staleness window.
    fn audit_views(&mut self) -> Result<()> {
        let t = self.t;
        for (i, node) in self.nodes.iter().enumerate() {
            for (k, &j) in self.graph.neighbors(i).iter().enumerate() {
                let stamp = node.views[k].stamp;
                if t >= 1 {
                    debug_assert_eq!(stamp, self.schedule.pi_neighbor(i, j, t));
                }
                self.max_staleness = self.max_staleness.max((t - stamp) as u64);
                if let Some(b) = self.schedule.b_bound() {
                    if stamp + b < t + 1 || stamp > t {
                        return Err(Error::Staleness {
                            tick: t,
                            node: i,
                            neighbor: j,
                            stamp,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Advance one tick.
    pub fn step(&mut self) -> Result<()> {
        self.audit_views()?;
        let t = self.t;
        let mut outgoing: Vec<(NodeId, Bundle)> = Vec::new();
        for i in 0..self.graph.n() {
            if !self.schedule.is_available(i, t) {
                continue;
            }
            self.drain_inbox(i, t);
            self.update_node(i)?;
            let node = &self.nodes[i];
            for (k, &j) in self.graph.neighbors(i).iter().enumerate() {
                outgoing.push((
                    j,
                    Bundle {
                        from: i,
                        sent_at: t,
                        lambda: node.lambda.clone(),
                        x: node.x.clone(),
                        g: node.g.clone(),
                        e: node.out_e.get(k).cloned(),
                    },
                ));
            }
            self.sends += 1;
        }
        self.sent_msgs += outgoing.len() as u64;
        for (j, b) in outgoing {
            self.inbox[j].push(b);
        }
        self.t += 1;
        Ok(())
    }

    /// Read every bundle sent strictly before `t`.
    fn drain_inbox(&mut self, i: NodeId, t: usize) {
        let (mut ready, waiting): (Vec<_>, Vec<_>) = std::mem::take(&mut self.inbox[i])
            .into_iter()
            .partition(|b| b.sent_at < t);
        self.inbox[i] = waiting;
        ready.sort_by_key(|b| (b.from, b.sent_at));
        self.delivered += ready.len() as u64;
        let node = &mut self.nodes[i];
        for b in ready {
            let k = self.graph.neighbors(i).binary_search(&b.from).expect("neighbor");
            if let Some(e) = &b.e {
                node.received_e += e;
            }
            let view = &mut node.views[k];
            if b.sent_at >= view.stamp {
                *view = View {
                    stamp: b.sent_at,
                    lambda: b.lambda,
                    x: b.x,
                    g: b.g,
                };
            }
        }
    }

    fn update_node(&mut self, i: NodeId) -> Result<()> {
        let p = self.prob.p();
        let iteration = self.t + 1;
        let eps = self.config.stepsize;
        let node = &mut self.nodes[i];
        match self.config.method {
            Method::Dbfgs => {
                let d = &node.own_e + &node.received_e;
                node.received_e.fill(0.0);
                node.lambda += d * eps;
            }
            Method::DualDescent => node.lambda -= &node.g * eps,
        }
        check_finite(&node.lambda, iteration, "dual variable")?;

        let mut c = DVector::zeros(p);
        for (k, &j) in self.graph.neighbors(i).iter().enumerate() {
            let e = self.graph.edge_index(i, j).expect("edge");
            let back = self.reverse_slot[e] * p;
            c += node.lambda.rows(k * p, p) - node.views[k].lambda.rows(back, p);
        }
        node.x = self.prob.objective(i).maximizer(&c);
        for (k, view) in node.views.iter().enumerate() {
            node.g.rows_mut(k * p, p).copy_from(&(&node.x - &view.x));
        }
        check_finite(&node.g, iteration, "dual gradient")?;

        let Some(curv) = node.curvature.as_mut() else {
            return Ok(());
        };
        let idx = curv.index().clone();
        let neighbors = self.graph.neighbors(i);
        let pick = |own: &'_ DVector<f64>, field: fn(&View) -> &DVector<f64>| {
            idx.gather_blocks(|j| {
                if j == i {
                    own
                } else {
                    field(&node.views[neighbors.binary_search(&j).expect("neighbor")])
                }
            })
        };
        let lambda_nbhd = pick(&node.lambda, |v| &v.lambda);
        let g_nbhd = pick(&node.g, |v| &v.g);
        let pair = curv.variations(&node.prev_lambda_nbhd, &lambda_nbhd, &node.prev_g_nbhd, &g_nbhd)?;
        curv.dbfgs_update(&pair);
        let e = curv.descent_direction(&g_nbhd)?;
        let mut parts = split_direction(&idx, &e).into_iter();
        node.own_e = parts.next().expect("owner block").1;
        node.out_e = parts.map(|(_, b)| b).collect();
        node.prev_lambda_nbhd = lambda_nbhd;
        node.prev_g_nbhd = g_nbhd;
        Ok(())
    }

    /// Observer metrics at the current tick.
    pub fn record(&self) -> Result<IterationRecord> {
        let state = DualState::at(self.prob, self.graph, self.global_lambda())?;
        let h = lagrangian(self.prob, self.graph, &state.x, &state.lambda);
        if !h.is_finite() {
            return Err(Error::Divergence {
                iteration: self.t,
                what: "dual objective",
            });
        }
        let mut r = IterationRecord::sync(
            self.t,
            h,
            state.g.norm(),
            error_or_nan(&state.x, self.x_star.as_ref()),
            self.sends / self.graph.n() as u64,
            self.sent_msgs,
            self.skips(),
        );
        r.delivered_msgs = Some(self.delivered);
        r.max_staleness = Some(self.max_staleness);
        Ok(r)
    }
}

/// Run over the schedule's horizon, stopping early at the error threshold.
pub fn run_async(config: &AsyncRunConfig, prob: &ProblemInstance, graph: &Graph, schedule: &Schedule) -> Result<Trace> {
    let mut world = AsyncWorld::new(*config, prob, graph, schedule)?;
    let mut trace = Trace {
        records: vec![world.record()?],
    };
    let threshold = config.threshold.filter(|th| th.is_finite());
    for _ in 0..schedule.horizon() {
        world.step()?;
        let rec = world.record()?;
        trace.records.push(rec);
        if threshold.is_some_and(|th| rec.err <= th) {
            break;
        }
    }
    Ok(trace)
}
