//! Regularized BFGS curvature, centralized and per neighborhood.
//!
//! The regularized update
//!
//! ```text
//! B' = B + r r^T / (r^T v) - B v v^T B / (v^T B v) + gamma I,   r = dg - gamma v
//! ```
//!
//! satisfies the secant condition `B' v = dg` and keeps `lambda_min(B') >= gamma`
//! whenever `lambda_min(B) >= gamma`. In the decentralized variant each node
//! runs the same update on its neighborhood, with the variable variation
//! scaled by the normalization weights `1 / (m_j + 1)` so that the sum of the
//! embedded inverses forms a global approximation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::topology::{neighborhood_index, normalization_matrix, Graph, NeighborhoodIndex, NodeId};

/// Relative guard used for both `r^T v` and `v^T B v`.
pub const CURVATURE_EPS: f64 = 1e-10;

fn curvature_threshold(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    CURVATURE_EPS * (1.0 + a.norm() * b.norm())
}

/// Why an update was not applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// `r^T v` not safely positive.
    Curvature,
    /// `v^T B v` not safely positive.
    Degenerate,
    /// Result failed to factorize.
    NotPositiveDefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    Skipped(Rejection),
}

/// `(v, r~)` with `v = lambda_new - lambda_old` and `r~ = dg - gamma v`.
pub fn centralized_variations(
    lambda_old: &DVector<f64>,
    lambda_new: &DVector<f64>,
    g_old: &DVector<f64>,
    g_new: &DVector<f64>,
    gamma: f64,
) -> (DVector<f64>, DVector<f64>) {
    let v = lambda_new - lambda_old;
    let r = g_new - g_old - &v * gamma;
    (v, r)
}

pub fn regularized_bfgs_update(
    b: &DMatrix<f64>,
    v: &DVector<f64>,
    r: &DVector<f64>,
    gamma: f64,
) -> std::result::Result<DMatrix<f64>, Rejection> {
    let rv = r.dot(v);
    if !(rv > curvature_threshold(r, v)) {
        return Err(Rejection::Curvature);
    }
    let bv = b * v;
    let vbv = v.dot(&bv);
    if !(vbv > curvature_threshold(v, &bv)) {
        return Err(Rejection::Degenerate);
    }
    let mut out = b.clone();
    out.ger(1.0 / rv, r, r, 1.0);
    out.ger(-1.0 / vbv, &bv, &bv, 1.0);
    for k in 0..out.nrows() {
        out[(k, k)] += gamma;
    }
    Ok(out)
}

/// Neighborhood variation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationPair {
    pub v_tilde: DVector<f64>,
    pub r_tilde: DVector<f64>,
    pub curvature_ok: bool,
}

/// `v~ = D (lambda_new - lambda_old)`, `r~ = dg - gamma v~`.
pub fn neighborhood_variations(
    idx: &NeighborhoodIndex,
    d: &DVector<f64>,
    lambda_old: &DVector<f64>,
    lambda_new: &DVector<f64>,
    g_old: &DVector<f64>,
    g_new: &DVector<f64>,
    gamma: f64,
) -> Result<VariationPair> {
    let dim = idx.dim();
    for len in [d.len(), lambda_old.len(), lambda_new.len(), g_old.len(), g_new.len()] {
        if len != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: len,
            });
        }
    }
    let v_tilde = (lambda_new - lambda_old).component_mul(d);
    let r_tilde = g_new - g_old - &v_tilde * gamma;
    let curvature_ok = r_tilde.dot(&v_tilde) > curvature_threshold(&r_tilde, &v_tilde);
    Ok(VariationPair {
        v_tilde,
        r_tilde,
        curvature_ok,
    })
}

/// Curvature state of one node over its neighborhood.
#[derive(Debug, Clone)]
pub struct NeighborhoodCurvature {
    b: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    gamma: f64,
    big_gamma: f64,
    idx: NeighborhoodIndex,
    d: DVector<f64>,
    skip_count: usize,
    update_count: usize,
}

impl NeighborhoodCurvature {
    /// `B(0) = I`.
    pub fn new(idx: NeighborhoodIndex, gamma: f64, big_gamma: f64) -> Result<Self> {
        Self::with_initial_scale(idx, gamma, big_gamma, 1.0)
    }

    /// `B(0) = scale * I`; requires `scale >= gamma`.
    pub fn with_initial_scale(idx: NeighborhoodIndex, gamma: f64, big_gamma: f64, scale: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::config("gamma", "must be positive"));
        }
        if !(big_gamma >= 0.0) {
            return Err(Error::config("Gamma", "must be non-negative"));
        }
        if !(scale >= gamma) {
            return Err(Error::config("init_scale", "must be at least gamma"));
        }
        let dim = idx.dim();
        Self::with_matrix(idx, gamma, big_gamma, DMatrix::identity(dim, dim) * scale)
    }

    /// Start from an arbitrary symmetric positive definite matrix.
    pub fn with_matrix(idx: NeighborhoodIndex, gamma: f64, big_gamma: f64, b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() != idx.dim() || b.ncols() != idx.dim() {
            return Err(Error::Dimension {
                expected: idx.dim(),
                actual: b.nrows(),
            });
        }
        let chol = Cholesky::new(b.clone()).ok_or(Error::NotPositiveDefinite { node: idx.owner })?;
        let d = normalization_matrix(&idx);
        Ok(Self {
            b,
            chol,
            gamma,
            big_gamma,
            idx,
            d,
            skip_count: 0,
            update_count: 0,
        })
    }

    pub fn for_node(g: &Graph, i: NodeId, p: usize, gamma: f64, big_gamma: f64) -> Result<Self> {
        Self::new(neighborhood_index(g, i, p), gamma, big_gamma)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn index(&self) -> &NeighborhoodIndex {
        &self.idx
    }

    pub fn normalization(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn big_gamma(&self) -> f64 {
        self.big_gamma
    }

    pub fn skip_count(&self) -> usize {
        self.skip_count
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn variations(
        &self,
        lambda_old: &DVector<f64>,
        lambda_new: &DVector<f64>,
        g_old: &DVector<f64>,
        g_new: &DVector<f64>,
    ) -> Result<VariationPair> {
        neighborhood_variations(&self.idx, &self.d, lambda_old, lambda_new, g_old, g_new, self.gamma)
    }

    /// Apply the neighborhood update, or leave `B` untouched and count a skip
    /// when the pair carries no usable curvature.
    pub fn dbfgs_update(&mut self, pair: &VariationPair) -> UpdateOutcome {
        if !pair.curvature_ok {
            self.skip_count += 1;
            return UpdateOutcome::Skipped(Rejection::Curvature);
        }
        let next = match regularized_bfgs_update(&self.b, &pair.v_tilde, &pair.r_tilde, self.gamma) {
            Ok(b) => b,
            Err(why) => {
                self.skip_count += 1;
                return UpdateOutcome::Skipped(why);
            }
        };
        match Cholesky::new(next.clone()) {
            Some(chol) => {
                self.b = next;
                self.chol = chol;
                self.update_count += 1;
                UpdateOutcome::Updated
            }
            None => {
                self.skip_count += 1;
                UpdateOutcome::Skipped(Rejection::NotPositiveDefinite)
            }
        }
    }

    /// `B^{-1} v` through the cached Cholesky factor.
    pub fn apply_inverse(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `e = -(B^{-1} + Gamma D) g`.
    pub fn descent_direction(&self, g_nbhd: &DVector<f64>) -> Result<DVector<f64>> {
        if g_nbhd.len() != self.idx.dim() {
            return Err(Error::Dimension {
                expected: self.idx.dim(),
                actual: g_nbhd.len(),
            });
        }
        let mut e = self.apply_inverse(g_nbhd);
        e += g_nbhd.component_mul(&self.d) * self.big_gamma;
        e.neg_mut();
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPositiveDefinite { node: self.idx.owner });
        }
        Ok(e)
    }
}

/// Cut a neighborhood direction into its per-node blocks, in block order.
pub fn split_direction(idx: &NeighborhoodIndex, e: &DVector<f64>) -> Vec<(NodeId, DVector<f64>)> {
    idx.block_order
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let r = idx.block_range(k);
            (j, e.rows(r.start, r.len()).into_owned())
        })
        .collect()
}

/// `d_i = e^i_i + sum_{j in n_i} e^j_i`; one contribution per neighbor.
pub fn assemble_direction(
    g: &Graph,
    i: NodeId,
    own: &DVector<f64>,
    received: &[(NodeId, DVector<f64>)],
) -> Result<DVector<f64>> {
    let mut d = own.clone();
    for &j in g.neighbors(i) {
        let mut found = received.iter().filter(|(from, _)| *from == j);
        let (_, block) = found.next().ok_or(Error::MissingContribution { from: j, to: i })?;
        if found.next().is_some() {
            return Err(Error::config("received", format!("duplicate contribution from {j}")));
        }
        if block.len() != own.len() {
            return Err(Error::Dimension {
                expected: own.len(),
                actual: block.len(),
            });
        }
        d += block;
    }
    Ok(d)
}

/// Global inverse approximation `H + Gamma I = sum_i (H^i + Gamma D^_i)`, where
/// `H^i` embeds `(B^i)^{-1}` at the global positions of node `i`'s
/// neighborhood.
pub fn global_inverse_approximation(g: &Graph, states: &[NeighborhoodCurvature]) -> DMatrix<f64> {
    let p = states.first().map_or(0, |s| s.idx.p);
    let dim = g.m() * p;
    let mut h = DMatrix::zeros(dim, dim);
    for s in states {
        let inv = s.inverse();
        let pos = s.idx.global_indices();
        for (a, &ga) in pos.iter().enumerate() {
            h[(ga, ga)] += s.big_gamma * s.d[a];
            for (b, &gb) in pos.iter().enumerate() {
                h[(ga, gb)] += inv[(a, b)];
            }
        }
    }
    h
}

/// Global descent direction `-(H + Gamma I) g`, built from explicit matrices.
pub fn global_direction_oracle(g: &Graph, states: &[NeighborhoodCurvature], g_global: &DVector<f64>) -> DVector<f64> {
    -(global_inverse_approximation(g, states) * g_global)
}

/// Upper eigenvalue bound `Gamma + n / gamma` of `H + Gamma I`.
pub fn inverse_upper_bound(n: usize, gamma: f64, big_gamma: f64) -> f64 {
    big_gamma + n as f64 / gamma
}

/// Sufficient constant step size `Gamma mu / (n Delta^2)`.
pub fn max_stable_stepsize(mu: f64, n: usize, gamma: f64, big_gamma: f64) -> f64 {
    let delta = inverse_upper_bound(n, gamma, big_gamma);
    big_gamma * mu / (n as f64 * delta * delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::regular_cycle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn path3() -> Graph {
        Graph::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn centralized_variation_examples() {
        let l = v(&[0.3, -1.]);
        let (vv, r) = centralized_variations(&l, &l, &v(&[1., 1.]), &v(&[2., 4.]), 0.5);
        assert_eq!(vv, v(&[0., 0.]));
        assert_eq!(r, v(&[1., 3.]));
        let (_, r) = centralized_variations(&v(&[0., 0.]), &v(&[1., 2.]), &v(&[0., 0.]), &v(&[3., 1.]), 0.0);
        assert_eq!(r, v(&[3., 1.]));
        let (vv, r) = centralized_variations(&v(&[0., 0.]), &v(&[1., 0.]), &v(&[0., 0.]), &v(&[2., 0.]), 0.5);
        assert_eq!(vv, v(&[1., 0.]));
        assert_eq!(r, v(&[1.5, 0.]));
    }

    #[test]
    fn identity_update_cancels_rank_terms() {
        let gamma = 0.25;
        let b = DMatrix::identity(3, 3);
        let x = v(&[1., -2., 0.5]);
        let out = regularized_bfgs_update(&b, &x, &x, gamma).unwrap();
        assert!((out - DMatrix::identity(3, 3) * (1.0 + gamma)).amax() < 1e-14);
    }

    #[test]
    fn update_rejects_bad_curvature() {
        let b = DMatrix::identity(2, 2);
        assert_eq!(
            regularized_bfgs_update(&b, &v(&[1., 0.]), &v(&[-1., 0.]), 0.1),
            Err(Rejection::Curvature)
        );
        assert_eq!(
            regularized_bfgs_update(&b, &v(&[0., 0.]), &v(&[1., 0.]), 0.1),
            Err(Rejection::Curvature)
        );
    }

    #[test]
    fn secant_and_floor_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gamma = 0.05;
        for _ in 0..200 {
            let dim = rng.random_range(1..8);
            let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            let b = &m * m.transpose() + DMatrix::identity(dim, dim) * gamma;
            let x = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let dg = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let r = &dg - &x * gamma;
            match regularized_bfgs_update(&b, &x, &r, gamma) {
                Ok(next) => {
                    assert!((&next * &x - &dg).norm() <= 1e-10 * (1.0 + dg.norm()) * 10.0);
                    let eig = next.symmetric_eigen().eigenvalues;
                    assert!(eig.min() >= gamma * (1.0 - 1e-10));
                }
                Err(_) => assert!(r.dot(&x) <= CURVATURE_EPS * (1.0 + r.norm() * x.norm())),
            }
        }
    }

    #[test]
    fn neighborhood_variation_examples() {
        let g = regular_cycle(7, 4).unwrap();
        let idx = neighborhood_index(&g, 2, 1);
        let d = normalization_matrix(&idx);
        let zero = DVector::zeros(idx.dim());
        let dl = DVector::from_fn(idx.dim(), |k, _| k as f64);
        let pair = neighborhood_variations(&idx, &d, &zero, &dl, &zero, &zero, 0.1).unwrap();
        assert!((pair.v_tilde - &dl / 5.0).amax() < 1e-15);
        let pair = neighborhood_variations(&idx, &d, &dl, &dl, &zero, &dl, 0.1).unwrap();
        assert_eq!(pair.v_tilde.norm(), 0.0);
        assert!(!pair.curvature_ok);

        let g = path3();
        let idx = neighborhood_index(&g, 1, 1);
        let d = normalization_matrix(&idx);
        let ones = DVector::from_element(4, 1.0);
        let z = DVector::zeros(4);
        let pair = neighborhood_variations(&idx, &d, &z, &ones, &z, &ones, 0.0).unwrap();
        assert_eq!(pair.v_tilde, d);
        assert!(neighborhood_variations(&idx, &d, &z, &ones, &z, &v(&[1.]), 0.0).is_err());
    }

    #[test]
    fn dbfgs_update_skips_and_updates() {
        let g = path3();
        let mut s = NeighborhoodCurvature::for_node(&g, 1, 1, 0.01, 0.001).unwrap();
        let z = DVector::zeros(4);
        let pair = s.variations(&z, &z, &z, &z).unwrap();
        let before = s.matrix().clone();
        assert_eq!(s.dbfgs_update(&pair), UpdateOutcome::Skipped(Rejection::Curvature));
        assert_eq!(s.matrix(), &before);
        assert_eq!(s.skip_count(), 1);

        let dl = v(&[0.3, -0.2, 0.5, 0.1]);
        let dg = v(&[1.0, -0.1, 0.9, 0.4]);
        let pair = s.variations(&z, &dl, &z, &dg).unwrap();
        assert!(pair.curvature_ok);
        assert_eq!(s.dbfgs_update(&pair), UpdateOutcome::Updated);
        assert!((s.matrix() * &pair.v_tilde - &dg).norm() <= 1e-12 * (1.0 + dg.norm()));
        let eig = s.matrix().clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() >= 0.01 * (1.0 - 1e-10));
    }

    #[test]
    fn descent_direction_examples() {
        let g = path3();
        let s = NeighborhoodCurvature::for_node(&g, 1, 1, 0.01, 0.0).unwrap();
        assert_eq!(s.descent_direction(&DVector::zeros(4)).unwrap().norm(), 0.0);
        let gn = v(&[1., -2., 3., 0.5]);
        assert_eq!(s.descent_direction(&gn).unwrap(), -gn.clone());

        let big_gamma = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = &m * m.transpose() + DMatrix::identity(4, 4) * 0.01;
        let s = NeighborhoodCurvature::with_matrix(neighborhood_index(&g, 1, 1), 0.01, big_gamma, b).unwrap();
        for _ in 0..20 {
            let gn = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let e = s.descent_direction(&gn).unwrap();
            // the weakest normalization weight on the path is 1/3
            assert!(e.dot(&gn) <= -big_gamma / 3.0 * gn.norm_squared());
        }
    }

    #[test]
    fn split_and_assemble() {
        let g = path3();
        let idx = neighborhood_index(&g, 1, 2);
        let e = DVector::from_fn(idx.dim(), |k, _| k as f64);
        let parts = split_direction(&idx, &e);
        assert_eq!(
            parts.iter().map(|(j, b)| (*j, b.len())).collect::<Vec<_>>(),
            vec![(1, 4), (0, 2), (2, 2)]
        );
        let joined: Vec<f64> = parts.iter().flat_map(|(_, b)| b.iter().copied()).collect();
        assert_eq!(joined, e.as_slice());

        let own = v(&[1., 2., 3., 4.]);
        let d = assemble_direction(&g, 1, &own, &[(0, v(&[1., 0., 0., 0.])), (2, v(&[0., 0., 0., 1.]))]).unwrap();
        assert_eq!(d, v(&[2., 2., 3., 5.]));
        assert!(matches!(
            assemble_direction(&g, 1, &own, &[(0, v(&[1., 0., 0., 0.]))]),
            Err(Error::MissingContribution { from: 2, to: 1 })
        ));
        let z = DVector::zeros(2);
        assert_eq!(assemble_direction(&g, 0, &z, &[(1, z.clone())]).unwrap(), z);
    }

    #[test]
    fn stepsize_examples() {
        // Delta = 1e-3 + 50 / 1e-2 = 5000.001
        let s = max_stable_stepsize(0.1, 50, 1e-2, 1e-3);
        let oracle = 1e-3 * 0.1 / (50.0 * 5000.001f64.powi(2));
        assert!((s - oracle).abs() <= 1e-15 * oracle);
        assert!((s - 8.0e-14).abs() < 1e-17);
        assert!((inverse_upper_bound(3, 1e-2, 1e-3) - 300.001).abs() < 1e-10);
        let one = max_stable_stepsize(0.5, 1, 0.1, 0.2);
        assert!((one - 0.2 * 0.5 / (10.2f64 * 10.2)).abs() < 1e-15);
        for gg in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            assert!(max_stable_stepsize(0.1, 50, 1e-2, gg * 1.5) > max_stable_stepsize(0.1, 50, 1e-2, gg));
        }
    }
}
