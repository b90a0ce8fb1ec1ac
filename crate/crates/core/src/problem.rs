//! Separable strongly concave objectives.
//!
//! Each node holds one summand `f_i` of the aggregate objective. Engines only
//! talk to objectives through [`NodeObjective`]: value, gradient and the
//! Lagrangian maximizer `argmax_x f_i(x) + c^T x`. The diagonal quadratic
//! family `f_i(x) = -1/2 x^T A_i x - b_i^T x` is the concrete benchmark type.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait NodeObjective: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `argmax_x f(x) + c^T x`.
    fn maximizer(&self, c: &DVector<f64>) -> DVector<f64>;
    /// Strong concavity modulus `mu > 0`.
    fn strong_concavity(&self) -> f64;

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        None
    }
}

/// `f(x) = -1/2 x^T diag(a) x - b^T x` with `a > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    a: DVector<f64>,
    b: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(a: DVector<f64>, b: DVector<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                actual: b.len(),
            });
        }
        if a.is_empty() {
            return Err(Error::InvalidProblem("empty objective".into()));
        }
        if !a.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidProblem(
                "diagonal entries must be positive and finite".into(),
            ));
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidProblem("linear term must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.b
    }
}

impl NodeObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        -0.5 * x.component_mul(&self.a).dot(x) - self.b.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        -x.component_mul(&self.a) - &self.b
    }

    fn maximizer(&self, c: &DVector<f64>) -> DVector<f64> {
        (c - &self.b).component_div(&self.a)
    }

    fn strong_concavity(&self) -> f64 {
        self.a.min()
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        Some(self)
    }
}

/// How the diagonal entries of the benchmark quadratics are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ConditionRegime {
    /// First half of the diagonal from `[0.1, 1]`, second half from `[1, 10]`.
    #[default]
    #[serde(rename = "1e2")]
    Split,
    /// Every diagonal entry from `[1, 1 + WELL_CONDITIONED_SPREAD]`.
    #[serde(rename = "1e0")]
    Uniform,
}

/// Width of the diagonal interval in the well-conditioned regime.
pub const WELL_CONDITIONED_SPREAD: f64 = 0.1;

impl std::str::FromStr for ConditionRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1e2" | "100" | "split" => Ok(Self::Split),
            "1e0" | "1" | "uniform" => Ok(Self::Uniform),
            _ => Err(Error::config("cond", format!("unknown regime {s:?} (use 1e2 or 1e0)"))),
        }
    }
}

impl std::fmt::Display for ConditionRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Split => "1e2",
            Self::Uniform => "1e0",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    p: usize,
    objectives: Vec<Arc<dyn NodeObjective>>,
    mu: f64,
    seed: Option<u64>,
    regime: Option<ConditionRegime>,
}

impl ProblemInstance {
    pub fn new(objectives: Vec<Arc<dyn NodeObjective>>) -> Result<Self> {
        if objectives.len() < 2 {
            return Err(Error::InvalidProblem("need at least 2 nodes".into()));
        }
        let p = objectives[0].dim();
        if p == 0 {
            return Err(Error::InvalidProblem("dimension must be positive".into()));
        }
        if let Some(o) = objectives.iter().find(|o| o.dim() != p) {
            return Err(Error::Dimension {
                expected: p,
                actual: o.dim(),
            });
        }
        let mu = objectives
            .iter()
            .map(|o| o.strong_concavity())
            .fold(f64::INFINITY, f64::min);
        if !(mu > 0.0) {
            return Err(Error::InvalidProblem("strong concavity must be positive".into()));
        }
        Ok(Self {
            p,
            objectives,
            mu,
            seed: None,
            regime: None,
        })
    }

    pub fn from_quadratics(objs: Vec<QuadraticObjective>) -> Result<Self> {
        Self::new(
            objs.into_iter()
                .map(|o| Arc::new(o) as Arc<dyn NodeObjective>)
                .collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.objectives.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn regime(&self) -> Option<ConditionRegime> {
        self.regime
    }

    pub fn objective(&self, i: usize) -> &dyn NodeObjective {
        self.objectives[i].as_ref()
    }

    pub fn objectives(&self) -> impl Iterator<Item = &dyn NodeObjective> {
        self.objectives.iter().map(|o| o.as_ref())
    }

    pub fn quadratics(&self) -> Result<Vec<&QuadraticObjective>> {
        self.objectives()
            .map(|o| o.as_quadratic().ok_or(Error::NotQuadratic))
            .collect()
    }

    /// Ratio of extreme diagonal entries of `sum_i A_i`.
    pub fn aggregate_condition_number(&self) -> Result<f64> {
        let sum = self.aggregate_diag()?;
        Ok(sum.max() / sum.min())
    }

    fn aggregate_diag(&self) -> Result<DVector<f64>> {
        let qs = self.quadratics()?;
        Ok(qs.iter().fold(DVector::zeros(self.p), |acc, q| acc + q.diag()))
    }

    pub fn to_json(&self) -> Result<String> {
        let qs = self.quadratics()?;
        let file = ProblemFile {
            n: self.n(),
            p: self.p,
            seed: self.seed,
            regime: self.regime,
            a: qs.iter().map(|q| q.diag().as_slice().to_vec()).collect(),
            b: qs.iter().map(|q| q.linear().as_slice().to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        if file.a.len() != file.n || file.b.len() != file.n {
            return Err(Error::Parse(format!(
                "expected {} nodes, found {} diagonals and {} linear terms",
                file.n,
                file.a.len(),
                file.b.len()
            )));
        }
        let objs = file
            .a
            .into_iter()
            .zip(file.b)
            .map(|(a, b)| {
                if a.len() != file.p {
                    return Err(Error::Dimension {
                        expected: file.p,
                        actual: a.len(),
                    });
                }
                QuadraticObjective::new(DVector::from_vec(a), DVector::from_vec(b))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut prob = Self::from_quadratics(objs)?;
        prob.seed = file.seed;
        prob.regime = file.regime;
        Ok(prob)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    n: usize,
    p: usize,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regime: Option<ConditionRegime>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

/// Random benchmark instance in the split (condition ~1e2) regime.
pub fn generate_quadratic(n: usize, p: usize, seed: u64) -> Result<ProblemInstance> {
    generate_quadratic_with(n, p, seed, ConditionRegime::Split)
}

/// Random benchmark instance. A pure function of its arguments: the
/// generator is ChaCha8 seeded with `seed`, and per node draws the diagonal
/// in index order followed by `b_i` from `[0, 1]^p`.
pub fn generate_quadratic_with(n: usize, p: usize, seed: u64, regime: ConditionRegime) -> Result<ProblemInstance> {
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::InvalidProblem(format!("p = {p} must be positive and even")));
    }
    if n < 2 {
        return Err(Error::InvalidProblem(format!("n = {n} must be at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objs = (0..n)
        .map(|_| {
            let a = DVector::from_fn(p, |k, _| match regime {
                ConditionRegime::Split if k < p / 2 => rng.random_range(0.1..=1.0),
                ConditionRegime::Split => rng.random_range(1.0..=10.0),
                ConditionRegime::Uniform => rng.random_range(1.0..=1.0 + WELL_CONDITIONED_SPREAD),
            });
            let b = DVector::from_fn(p, |_, _| rng.random_range(0.0..=1.0));
            QuadraticObjective::new(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut prob = ProblemInstance::from_quadratics(objs)?;
    prob.seed = Some(seed);
    prob.regime = Some(regime);
    Ok(prob)
}

pub fn quadratic_maximizer(obj: &QuadraticObjective, c: &DVector<f64>) -> DVector<f64> {
    obj.maximizer(c)
}

/// Maximizer of the aggregate objective, `-(sum A_i)^{-1} sum b_i`.
pub fn exact_optimum(prob: &ProblemInstance) -> Result<DVector<f64>> {
    let qs = prob.quadratics()?;
    let a = prob.aggregate_diag()?;
    let b = qs.iter().fold(DVector::zeros(prob.p()), |acc, q| acc + q.linear());
    Ok(-b.component_div(&a))
}

pub fn aggregate_value(prob: &ProblemInstance, x: &DVector<f64>) -> f64 {
    prob.objectives().map(|o| o.value(x)).sum()
}
