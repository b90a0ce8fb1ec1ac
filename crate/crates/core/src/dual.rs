//! Dual decomposition of the consensus problem.
//!
//! The Lagrangian `L(x, lambda) = sum_i f_i(x_i) + sum_(i,j) lambda_ij^T (x_i - x_j)`
//! separates over nodes. Node `i` maximizes `f_i(x) + c_i^T x` with
//! `c_i = sum_j (lambda_ij - lambda_ji)`; the dual function
//! `h(lambda) = L(x(lambda), lambda)` is convex and its partial derivative
//! with respect to `lambda_ij` is the slack `x_i(lambda) - x_j(lambda)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::ProblemInstance;
use crate::topology::{incidence_operator, Graph, NodeId};

fn check_dual_dim(g: &Graph, p: usize, lambda: &DVector<f64>) -> Result<()> {
    if lambda.len() != g.m() * p {
        return Err(Error::Dimension {
            expected: g.m() * p,
            actual: lambda.len(),
        });
    }
    Ok(())
}

fn check_sizes(prob: &ProblemInstance, g: &Graph) -> Result<()> {
    if prob.n() != g.n() {
        return Err(Error::Dimension {
            expected: g.n(),
            actual: prob.n(),
        });
    }
    Ok(())
}

/// Block `lambda_ij` of the global dual vector.
pub fn edge_block(g: &Graph, p: usize, lambda: &DVector<f64>, i: NodeId, j: NodeId) -> Option<DVector<f64>> {
    g.edge_index(i, j).map(|e| lambda.rows(e * p, p).into_owned())
}

/// `c_i = sum_{j in n_i} (lambda_ij - lambda_ji)`.
pub fn multiplier_coefficient(g: &Graph, p: usize, lambda: &DVector<f64>, i: NodeId) -> Result<DVector<f64>> {
    check_dual_dim(g, p, lambda)?;
    let mut c = DVector::zeros(p);
    for &j in g.neighbors(i) {
        let out = g.edge_index(i, j).expect("neighbor edge") * p;
        let inc = g.edge_index(j, i).expect("symmetric edge") * p;
        c += lambda.rows(out, p) - lambda.rows(inc, p);
    }
    Ok(c)
}

pub fn local_maximizer(prob: &ProblemInstance, g: &Graph, lambda: &DVector<f64>, i: NodeId) -> Result<DVector<f64>> {
    let c = multiplier_coefficient(g, prob.p(), lambda, i)?;
    Ok(prob.objective(i).maximizer(&c))
}

pub fn primal_maximizers(prob: &ProblemInstance, g: &Graph, lambda: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    check_sizes(prob, g)?;
    (0..g.n()).map(|i| local_maximizer(prob, g, lambda, i)).collect()
}

/// Stacked slack `g_ij = x_i - x_j` over directed edges.
pub fn dual_gradient(g: &Graph, x: &[DVector<f64>]) -> DVector<f64> {
    let p = x.first().map_or(0, |v| v.len());
    let mut out = DVector::zeros(g.m() * p);
    for (e, &(i, j)) in g.directed_edges().iter().enumerate() {
        out.rows_mut(e * p, p).copy_from(&(&x[i] - &x[j]));
    }
    out
}

/// Lagrangian evaluated at an arbitrary primal point.
pub fn lagrangian(prob: &ProblemInstance, g: &Graph, x: &[DVector<f64>], lambda: &DVector<f64>) -> f64 {
    let f: f64 = x.iter().enumerate().map(|(i, xi)| prob.objective(i).value(xi)).sum();
    f + lambda.dot(&dual_gradient(g, x))
}

pub fn dual_value(prob: &ProblemInstance, g: &Graph, lambda: &DVector<f64>) -> Result<f64> {
    let x = primal_maximizers(prob, g, lambda)?;
    Ok(lagrangian(prob, g, &x, lambda))
}

/// Dual Hessian for quadratic objectives, `A Q^{-1} A^T` with `A` the
/// incidence operator and `Q = blockdiag(A_i)`. It does not depend on
/// `lambda` because `x(lambda)` is affine.
pub fn dual_hessian_oracle(prob: &ProblemInstance, g: &Graph) -> Result<DMatrix<f64>> {
    check_sizes(prob, g)?;
    let p = prob.p();
    let qs = prob.quadratics()?;
    let a = incidence_operator(g, p);
    let mut scaled = a.clone();
    for (i, q) in qs.iter().enumerate() {
        for k in 0..p {
            scaled.column_mut(i * p + k).scale_mut(1.0 / q.diag()[k]);
        }
    }
    Ok(scaled * a.transpose())
}

/// Lipschitz constant `4n / mu` of the dual gradient.
pub fn lipschitz_bound(prob: &ProblemInstance, g: &Graph) -> f64 {
    4.0 * g.n() as f64 / prob.mu()
}

/// Dual iterate with its primal maximizers and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: DVector<f64>,
    pub x: Vec<DVector<f64>>,
    pub g: DVector<f64>,
}

impl DualState {
    /// Consistent state at `lambda`.
    pub fn at(prob: &ProblemInstance, g: &Graph, lambda: DVector<f64>) -> Result<Self> {
        let x = primal_maximizers(prob, g, &lambda)?;
        let grad = dual_gradient(g, &x);
        Ok(Self { lambda, x, g: grad })
    }

    pub fn zero(prob: &ProblemInstance, g: &Graph) -> Result<Self> {
        Self::at(prob, g, DVector::zeros(g.m() * prob.p()))
    }

    pub fn is_consistent(&self, prob: &ProblemInstance, g: &Graph) -> bool {
        match primal_maximizers(prob, g, &self.lambda) {
            Ok(x) => x == self.x && dual_gradient(g, &x) == self.g,
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{exact_optimum, generate_quadratic, QuadraticObjective};
    use crate::topology::regular_cycle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn p3() -> (ProblemInstance, Graph) {
        let q = |b: f64| QuadraticObjective::new(v(&[1.]), v(&[b])).unwrap();
        (
            ProblemInstance::from_quadratics(vec![q(1.), q(0.), q(-1.)]).unwrap(),
            Graph::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap(),
        )
    }

    fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
    }

    #[test]
    fn coefficient_examples() {
        let g = Graph::from_undirected_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(multiplier_coefficient(&g, 1, &v(&[0., 0.]), 0).unwrap(), v(&[0.]));
        // lambda_01 = 2, lambda_10 = 0.5
        assert_eq!(multiplier_coefficient(&g, 1, &v(&[2., 0.5]), 0).unwrap(), v(&[1.5]));
        let g = regular_cycle(6, 4).unwrap();
        let mut lambda = DVector::zeros(g.m());
        for &(i, j) in g.directed_edges() {
            let e = g.edge_index(i, j).unwrap();
            lambda[e] = if i < j { 0.7 } else { -0.7 };
        }
        // antisymmetric multipliers: c_i = sum_j 2 lambda_ij
        for i in 0..6 {
            let expected: f64 = g.neighbors(i).iter().map(|&j| if i < j { 1.4 } else { -1.4 }).sum();
            assert!((multiplier_coefficient(&g, 1, &lambda, i).unwrap()[0] - expected).abs() < 1e-15);
        }
        assert!(multiplier_coefficient(&g, 1, &v(&[0.]), 0).is_err());
    }

    #[test]
    fn p3_maximizers_gradient_and_value() {
        let (prob, g) = p3();
        let s = DualState::zero(&prob, &g).unwrap();
        assert_eq!(s.x, vec![v(&[-1.]), v(&[0.]), v(&[1.])]);
        // edges (0,1), (1,0), (1,2), (2,1)
        assert_eq!(s.g, v(&[-1., 1., -1., 1.]));
        assert_eq!(dual_value(&prob, &g, &s.lambda).unwrap(), 1.0);
    }

    #[test]
    fn maximizer_is_local() {
        let g = regular_cycle(10, 2).unwrap();
        let prob = generate_quadratic(10, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda = random_vec(&mut rng, g.m() * 2, 1.0);
        let before = local_maximizer(&prob, &g, &lambda, 0).unwrap();
        let mut moved = lambda.clone();
        // edge (4,5) touches neither node 0 nor its neighbors' edges to 0
        let e = g.edge_index(4, 5).unwrap();
        moved[2 * e] += 3.0;
        assert_eq!(local_maximizer(&prob, &g, &moved, 0).unwrap(), before);
        assert_ne!(
            local_maximizer(&prob, &g, &moved, 4).unwrap(),
            local_maximizer(&prob, &g, &lambda, 4).unwrap()
        );
    }

    #[test]
    fn consensus_gives_zero_gradient_and_antisymmetry() {
        let g = regular_cycle(8, 4).unwrap();
        let x = vec![v(&[1.5, -2.]); 8];
        assert_eq!(dual_gradient(&g, &x).norm(), 0.0);
        let prob = generate_quadratic(8, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = DualState::at(&prob, &g, random_vec(&mut rng, g.m() * 2, 2.0)).unwrap();
        for &(i, j) in g.directed_edges() {
            assert_eq!(
                edge_block(&g, 2, &s.g, i, j).unwrap(),
                -edge_block(&g, 2, &s.g, j, i).unwrap()
            );
        }
        assert!(s.is_consistent(&prob, &g));
    }

    #[test]
    fn lipschitz_examples() {
        let (prob, g) = p3();
        assert_eq!(lipschitz_bound(&prob, &g), 12.0);
        let g = regular_cycle(50, 4).unwrap();
        let q = QuadraticObjective::new(v(&[0.1, 1.]), v(&[0., 0.])).unwrap();
        let prob = ProblemInstance::from_quadratics(vec![q; 50]).unwrap();
        assert!((lipschitz_bound(&prob, &g) - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn weak_duality() {
        let g = regular_cycle(6, 2).unwrap();
        let prob = generate_quadratic(6, 2, 8).unwrap();
        let fstar = crate::problem::aggregate_value(&prob, &exact_optimum(&prob).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let lambda = random_vec(&mut rng, g.m() * 2, 3.0);
            assert!(dual_value(&prob, &g, &lambda).unwrap() >= fstar - 1e-12);
        }
    }

    #[test]
    fn hessian_properties() {
        let g = regular_cycle(7, 4).unwrap();
        let prob = generate_quadratic(7, 2, 5).unwrap();
        let h = dual_hessian_oracle(&prob, &g).unwrap();
        assert!((&h - h.transpose()).amax() < 1e-14);
        let eig = h.clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() > -1e-10);
        assert!(eig.max() <= lipschitz_bound(&prob, &g));
        // shifting lambda_ij and lambda_ji equally leaves every c_i fixed
        let mut u = DVector::zeros(g.m() * 2);
        let (e1, e2) = (g.edge_index(2, 3).unwrap(), g.edge_index(3, 2).unwrap());
        u[2 * e1 + 1] = 1.0;
        u[2 * e2 + 1] = 1.0;
        assert!((&h * u).norm() < 1e-14);
    }
}
