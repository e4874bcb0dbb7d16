//! Graph algebra for the consensus network.
//!
//! A [`Topology`] is an undirected graph with a fixed (arbitrary) orientation per
//! edge, which yields the oriented incidence matrix `D`. The time-varying
//! Laplacian is `L(t) = D W(t) Dᵀ` for a diagonal nonnegative weight matrix
//! `W(t)`.
//!
//! A [`SpanningDecomposition`] splits the edges into a spanning tree and the
//! remaining cycle edges and carries every linear map needed to go from node
//! states `x` to the reduced tree coordinates `Υ = ψ x`:
//!
//! ```text
//! x_e = Dᵀ x = [x_τ; x_c],   x_c = Zᵀ x_τ,   x_τ = Γ Υ
//! L_e(τ) = D_τᵀ D_τ = Γ Λ Γᵀ,   Z = L_e(τ)⁻¹ D_τᵀ D_c,   R = [I Z]
//! ψ = Γᵀ D_τᵀ,   ρ = ‖Γ‖ √(1 + ‖Zᵀ‖²)
//! ```
//!
//! Node indices and edge indices are 0-based throughout this module.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative singular-value threshold for the numerical rank of `D`.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Default cap on the number of spanning trees that will be enumerated.
pub const TREE_ENUMERATION_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    incidence: DMatrix<f64>,
}

impl Topology {
    /// Builds a topology from oriented `(tail, head)` pairs with 0-based nodes.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewNodes(n));
        }
        let mut seen = std::collections::HashMap::with_capacity(edges.len());
        for (j, &(tail, head)) in edges.iter().enumerate() {
            for node in [tail, head] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { edge: j, node, n });
                }
            }
            if tail == head {
                return Err(Error::SelfLoop { edge: j, node: tail });
            }
            let key = (tail.min(head), tail.max(head));
            if let Some(&first) = seen.get(&key) {
                return Err(Error::DuplicateEdge { first, second: j });
            }
            seen.insert(key, j);
        }

        let mut incidence = DMatrix::zeros(n, edges.len());
        for (j, &(tail, head)) in edges.iter().enumerate() {
            incidence[(tail, j)] = -1.0;
            incidence[(head, j)] = 1.0;
        }
        Ok(Self {
            n,
            edges: edges.to_vec(),
            incidence,
        })
    }

    /// Same as [`Topology::new`] but with node labels `1..=n`.
    pub fn from_one_based(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut shifted = Vec::with_capacity(edges.len());
        for (j, &(tail, head)) in edges.iter().enumerate() {
            if tail == 0 || head == 0 {
                return Err(Error::NodeOutOfRange { edge: j, node: 0, n });
            }
            shifted.push((tail - 1, head - 1));
        }
        Self::new(n, &shifted)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// Induced 2-norm of the incidence matrix.
    pub fn incidence_norm(&self) -> f64 {
        spectral_norm(&self.incidence)
    }

    /// `L = D W Dᵀ` for the given per-edge weights.
    pub fn laplacian_at(&self, weights: &[f64]) -> Result<DMatrix<f64>> {
        self.check_weights(weights)?;
        let mut l = DMatrix::zeros(self.n, self.n);
        for (&(a, b), &w) in self.edges.iter().zip(weights) {
            l[(a, a)] += w;
            l[(b, b)] += w;
            l[(a, b)] -= w;
            l[(b, a)] -= w;
        }
        Ok(l)
    }

    pub(crate) fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.edges.len() {
            return Err(Error::DimensionMismatch {
                what: "edge weights",
                expected: self.edges.len(),
                got: weights.len(),
            });
        }
        if let Some((edge, &value)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
            return Err(Error::NegativeWeight { edge, value });
        }
        Ok(())
    }

    /// Edge states `Dᵀ x` in the topology's own edge order.
    pub fn edge_differences(&self, x: &[f64]) -> Vec<f64> {
        self.edges.iter().map(|&(a, b)| x[b] - x[a]).collect()
    }

    /// Connected components (sorted node lists) using only the given edges,
    /// or every edge when `subset` is `None`.
    pub fn components(&self, subset: Option<&[usize]>) -> Vec<Vec<usize>> {
        let mut dsu = DisjointSet::new(self.n);
        match subset {
            Some(idx) => idx.iter().for_each(|&j| {
                let (a, b) = self.edges[j];
                dsu.union(a, b);
            }),
            None => self.edges.iter().for_each(|&(a, b)| {
                dsu.union(a, b);
            }),
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_slot = vec![usize::MAX; self.n];
        for v in 0..self.n {
            let r = dsu.find(v);
            if root_slot[r] == usize::MAX {
                root_slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[root_slot[r]].push(v);
        }
        groups
    }

    /// Numerical connectivity test: rank of `D` equals `n - 1`.
    pub fn is_connected(&self) -> bool {
        numerical_rank(&self.incidence) == self.n - 1
    }

    pub fn is_spanning_tree(&self, tree: &[usize]) -> bool {
        if tree.len() != self.n - 1 || tree.iter().any(|&j| j >= self.edges.len()) {
            return false;
        }
        let mut dsu = DisjointSet::new(self.n);
        tree.iter().all(|&j| {
            let (a, b) = self.edges[j];
            dsu.union(a, b)
        })
    }

    /// Breadth-first spanning tree rooted at node 0, scanning edges in list
    /// order. Returned edge indices are sorted ascending.
    pub fn bfs_tree(&self) -> Result<Vec<usize>> {
        let mut visited = vec![false; self.n];
        let mut tree = Vec::with_capacity(self.n - 1);
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(u) = queue.pop_front() {
            for (j, &(a, b)) in self.edges.iter().enumerate() {
                let other = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !visited[other] {
                    visited[other] = true;
                    tree.push(j);
                    queue.push_back(other);
                }
            }
        }
        if tree.len() != self.n - 1 {
            return Err(Error::Disconnected {
                components: self.components(None),
            });
        }
        tree.sort_unstable();
        Ok(tree)
    }

    /// Kirchhoff's matrix-tree count: determinant of the unit-weight Laplacian
    /// with the first row and column removed.
    pub fn spanning_tree_count(&self) -> f64 {
        let l = self
            .laplacian_at(&vec![1.0; self.edges.len()])
            .expect("unit weights are valid");
        let reduced = l.view((1, 1), (self.n - 1, self.n - 1)).into_owned();
        reduced.determinant().round()
    }

    /// Every spanning tree as an ascending list of edge indices, in
    /// lexicographic order.
    pub fn spanning_trees(&self, cap: usize) -> Result<Vec<Vec<usize>>> {
        if !self.is_connected() {
            return Err(Error::Disconnected {
                components: self.components(None),
            });
        }
        let count = self.spanning_tree_count();
        if count > cap as f64 {
            return Err(Error::TooManyTrees { count, cap });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut chosen = Vec::with_capacity(self.n - 1);
        self.extend_trees(0, &mut chosen, &mut out);
        Ok(out)
    }

    fn extend_trees(&self, next: usize, chosen: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if chosen.len() == self.n - 1 {
            out.push(chosen.clone());
            return;
        }
        if next == self.edges.len() {
            return;
        }
        // chosen ∪ {next..m} must still connect everything
        let mut reach = DisjointSet::new(self.n);
        for &j in chosen.iter().chain(&(next..self.edges.len()).collect::<Vec<_>>()) {
            let (a, b) = self.edges[j];
            reach.union(a, b);
        }
        if reach.count != 1 {
            return;
        }
        let mut acyclic = DisjointSet::new(self.n);
        for &j in chosen.iter() {
            let (a, b) = self.edges[j];
            acyclic.union(a, b);
        }
        let (a, b) = self.edges[next];
        if acyclic.find(a) != acyclic.find(b) {
            chosen.push(next);
            self.extend_trees(next + 1, chosen, out);
            chosen.pop();
        }
        self.extend_trees(next + 1, chosen, out);
    }
}

/// Spanning-tree / cycle partition of a topology together with the linear
/// maps into reduced coordinates.
#[derive(Debug, Clone)]
pub struct SpanningDecomposition {
    pub tree_edges: Vec<usize>,
    pub cycle_edges: Vec<usize>,
    /// `permutation[k]` is the original index of the k-th permuted edge.
    pub permutation: Vec<usize>,
    pub d_tau: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
    pub edge_laplacian_tau: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// Eigenvalues of `L_e(τ)`, ascending.
    pub lambda: DVector<f64>,
    pub z: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub rho: f64,
    pub gamma_norm: f64,
}

/// Output of [`SpanningDecomposition::edge_states`].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStates {
    /// Edge states in permuted order (tree edges first).
    pub x_e: Vec<f64>,
    pub x_tau: Vec<f64>,
    pub upsilon: Vec<f64>,
}

impl SpanningDecomposition {
    /// Partitions the edges into a spanning tree and cycle edges.
    ///
    /// With no hint the tree is the breadth-first tree from node 0. A hint is
    /// used in the given order.
    pub fn new(topology: &Topology, tree_hint: Option<&[usize]>) -> Result<Self> {
        if !topology.is_connected() {
            return Err(Error::Disconnected {
                components: topology.components(None),
            });
        }
        let tree_edges = match tree_hint {
            Some(hint) => {
                let p = topology.node_count() - 1;
                if hint.len() != p {
                    return Err(Error::InvalidTree(format!(
                        "expected {p} edges, got {}",
                        hint.len()
                    )));
                }
                if let Some(&j) = hint.iter().find(|&&j| j >= topology.edge_count()) {
                    return Err(Error::InvalidTree(format!("edge index {j} out of range")));
                }
                if !topology.is_spanning_tree(hint) {
                    return Err(Error::InvalidTree(format!(
                        "edges {hint:?} do not form a spanning tree"
                    )));
                }
                hint.to_vec()
            }
            None => topology.bfs_tree()?,
        };
        let cycle_edges: Vec<usize> = (0..topology.edge_count())
            .filter(|j| !tree_edges.contains(j))
            .collect();
        let permutation: Vec<usize> = tree_edges.iter().chain(&cycle_edges).copied().collect();

        let d = topology.incidence();
        let d_tau = select_columns(d, &tree_edges);
        let d_c = select_columns(d, &cycle_edges);
        let edge_laplacian_tau = d_tau.transpose() * &d_tau;
        let (lambda, gamma) = sorted_eigen(&edge_laplacian_tau);

        let p = tree_edges.len();
        let q = cycle_edges.len();
        let cross = d_tau.transpose() * &d_c;
        let z = if q == 0 {
            DMatrix::zeros(p, 0)
        } else {
            edge_laplacian_tau
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidTree("tree edge Laplacian is not positive definite".into()))?
                .solve(&cross)
        };
        let mut r = DMatrix::zeros(p, p + q);
        r.view_mut((0, 0), (p, p)).fill_with_identity();
        r.view_mut((0, p), (p, q)).copy_from(&z);
        let psi = gamma.transpose() * d_tau.transpose();

        let gamma_norm = spectral_norm(&gamma);
        let zt_norm_sq = if q == 0 {
            0.0
        } else {
            let ztz = z.transpose() * &z;
            SymmetricEigen::new(ztz).eigenvalues.max().max(0.0)
        };
        let rho = gamma_norm * (1.0 + zt_norm_sq).sqrt();

        Ok(Self {
            tree_edges,
            cycle_edges,
            permutation,
            d_tau,
            d_c,
            edge_laplacian_tau,
            gamma,
            lambda,
            z,
            r,
            psi,
            rho,
            gamma_norm,
        })
    }

    /// Number of tree edges `p = n - 1`.
    pub fn p(&self) -> usize {
        self.tree_edges.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda[0]
    }

    /// `‖Λ‖`, the largest eigenvalue of the tree edge Laplacian.
    pub fn lambda_norm(&self) -> f64 {
        self.lambda[self.lambda.len() - 1]
    }

    pub fn edge_states(&self, x: &[f64]) -> Result<EdgeStates> {
        let n = self.d_tau.nrows();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                what: "node state",
                expected: n,
                got: x.len(),
            });
        }
        let xv = DVector::from_column_slice(x);
        let x_tau = self.d_tau.tr_mul(&xv);
        let x_c = self.d_c.tr_mul(&xv);
        let upsilon = &self.psi * &xv;
        let x_e = x_tau.iter().chain(x_c.iter()).copied().collect();
        Ok(EdgeStates {
            x_e,
            x_tau: x_tau.as_slice().to_vec(),
            upsilon: upsilon.as_slice().to_vec(),
        })
    }

    /// `‖Υ‖` for node state `x`, without the dimension check.
    pub(crate) fn upsilon_norm(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        (&self.psi * xv).norm()
    }

    /// `M = Γᵀ R W Rᵀ Γ` for weights given in the topology's original edge order.
    pub fn reduced_weight_matrix(&self, weights: &[f64]) -> DMatrix<f64> {
        let permuted: Vec<f64> = self.permutation.iter().map(|&j| weights[j]).collect();
        let rw = DMatrix::from_fn(self.r.nrows(), self.r.ncols(), |i, j| self.r[(i, j)] * permuted[j]);
        let rgam = self.r.transpose() * &self.gamma;
        self.gamma.transpose() * rw * rgam
    }

    pub fn report(&self) -> DecompositionReport {
        DecompositionReport {
            tree_edges: self.tree_edges.clone(),
            cycle_edges: self.cycle_edges.clone(),
            permutation: self.permutation.clone(),
            lambda: self.lambda.as_slice().to_vec(),
            gamma: rows(&self.gamma),
            z: rows(&self.z),
            r: rows(&self.r),
            psi: rows(&self.psi),
            rho: self.rho,
            gamma_norm: self.gamma_norm,
        }
    }
}

/// Serializable view of a decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub tree_edges: Vec<usize>,
    pub cycle_edges: Vec<usize>,
    pub permutation: Vec<usize>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub rho: f64,
    pub gamma_norm: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, k| m[(i, cols[k])])
}

/// Symmetric eigendecomposition with ascending eigenvalues; each eigenvector
/// is flipped so its largest-magnitude entry is positive.
pub(crate) fn sorted_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let mut pivot = 0;
        for r in 1..col.len() {
            if col[r].abs() > col[pivot].abs() + 1e-12 {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(k, &(col * sign));
    }
    (values, vectors)
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc, &s| acc.max(s))
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, &s| a.max(s));
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

struct DisjointSet {
    parent: Vec<usize>,
    count: usize,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            count: n,
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// Returns false when `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        self.count -= 1;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn triangle() -> Topology {
        Topology::from_one_based(3, &[(1, 2), (2, 3), (1, 3)]).unwrap()
    }

    fn dense_laplacian(t: &Topology, w: &[f64]) -> DMatrix<f64> {
        let d = t.incidence();
        d * DMatrix::from_diagonal(&DVector::from_column_slice(w)) * d.transpose()
    }

    #[test]
    fn two_node_incidence() {
        let t = Topology::from_one_based(2, &[(1, 2)]).unwrap();
        assert_eq!(t.incidence(), &DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]));
    }

    #[test]
    fn triangle_incidence_columns() {
        let t = triangle();
        let want = DMatrix::from_column_slice(3, 3, &[-1., 1., 0., 0., -1., 1., -1., 0., 1.]);
        assert_eq!(t.incidence(), &want);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(Topology::new(1, &[]), Err(Error::TooFewNodes(1))));
        assert!(matches!(
            Topology::new(2, &[(0, 0)]),
            Err(Error::SelfLoop { edge: 0, node: 0 })
        ));
        assert!(matches!(
            Topology::new(3, &[(0, 1), (1, 0)]),
            Err(Error::DuplicateEdge { first: 0, second: 1 })
        ));
        assert!(matches!(
            Topology::new(3, &[(0, 3)]),
            Err(Error::NodeOutOfRange { node: 3, .. })
        ));
        assert!(Topology::from_one_based(3, &[(0, 1)]).is_err());
    }

    #[test]
    fn laplacian_examples() {
        let two = Topology::new(2, &[(0, 1)]).unwrap();
        assert_eq!(
            two.laplacian_at(&[1.0]).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1., -1., -1., 1.])
        );

        let t = triangle();
        assert_eq!(t.laplacian_at(&[0.0; 3]).unwrap(), DMatrix::zeros(3, 3));
        let want = DMatrix::from_row_slice(3, 3, &[2., -1., -1., -1., 2., -1., -1., -1., 2.]);
        assert_eq!(t.laplacian_at(&[1.0; 3]).unwrap(), want);
        assert_eq!(dense_laplacian(&t, &[1.0; 3]), want);

        assert!(matches!(
            t.laplacian_at(&[1.0, -0.5, 1.0]),
            Err(Error::NegativeWeight { edge: 1, .. })
        ));
        assert!(t.laplacian_at(&[1.0]).is_err());
    }

    #[test]
    fn path_decomposition_eigenvalues() {
        let path = Topology::from_one_based(3, &[(1, 2), (2, 3)]).unwrap();
        let dec = SpanningDecomposition::new(&path, Some(&[0, 1])).unwrap();
        // characteristic polynomial of [[2,-1],[-1,2]]: λ² - 4λ + 3
        assert_relative_eq!(dec.lambda[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(dec.lambda[1], 3.0, epsilon = 1e-12);
        assert!(dec.cycle_edges.is_empty());
        assert_eq!(dec.z.ncols(), 0);
        assert_relative_eq!(dec.rho, 1.0, epsilon = 1e-12);
        assert_eq!(dec.r, DMatrix::identity(2, 2));
    }

    #[test]
    fn triangle_cycle_map() {
        let t = triangle();
        let dec = SpanningDecomposition::new(&t, Some(&[0, 1])).unwrap();
        // L_e(τ) = [[2,-1],[-1,2]], D_τᵀ D_c = [1, 1]; solving by hand gives Z = [1, 1]
        assert_relative_eq!(dec.z[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(dec.z[(1, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(dec.rho, 3f64.sqrt(), epsilon = 1e-12);

        let mut rng = 0x9e3779b97f4a7c15u64;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3)
                .map(|_| {
                    rng ^= rng << 13;
                    rng ^= rng >> 7;
                    rng ^= rng << 17;
                    (rng % 2000) as f64 / 1000.0 - 1.0
                })
                .collect();
            let s = dec.edge_states(&x).unwrap();
            let x_c = (dec.z.transpose() * DVector::from_column_slice(&s.x_tau))[0];
            assert_relative_eq!(x_c, s.x_e[2], epsilon = 1e-12);
            let xe = DVector::from_column_slice(&s.x_e).norm();
            let ups = DVector::from_column_slice(&s.upsilon).norm();
            assert!(xe <= dec.rho * ups + 1e-12);
        }
    }

    #[test]
    fn disconnected_and_bad_hints() {
        let t = Topology::new(4, &[(0, 1), (2, 3)]).unwrap();
        match SpanningDecomposition::new(&t, None) {
            Err(Error::Disconnected { components }) => {
                assert_eq!(components, vec![vec![0, 1], vec![2, 3]])
            }
            other => panic!("unexpected {other:?}"),
        }
        let tri = triangle();
        assert!(matches!(
            SpanningDecomposition::new(&tri, Some(&[0])),
            Err(Error::InvalidTree(_))
        ));
        let star = Topology::new(4, &[(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        assert!(matches!(
            SpanningDecomposition::new(&star, Some(&[0, 1, 2])),
            Err(Error::InvalidTree(_))
        ));
    }

    #[test]
    fn bfs_tree_follows_list_order() {
        let k4 = Topology::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)]).unwrap();
        assert_eq!(k4.bfs_tree().unwrap(), vec![0, 3, 4]);
        let dec = SpanningDecomposition::new(&k4, None).unwrap();
        assert_eq!(dec.permutation, vec![0, 3, 4, 1, 2, 5]);
    }

    #[test]
    fn eigen_sign_and_reconstruction() {
        let k4 = Topology::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)]).unwrap();
        let dec = SpanningDecomposition::new(&k4, Some(&[0, 1, 2])).unwrap();
        let recon = &dec.gamma * DMatrix::from_diagonal(&dec.lambda) * dec.gamma.transpose();
        assert!((recon - &dec.edge_laplacian_tau).norm() <= 1e-10 * dec.edge_laplacian_tau.norm());
        let gtg = dec.gamma.transpose() * &dec.gamma;
        assert!((gtg - DMatrix::identity(3, 3)).norm() < 1e-12);
        for col in dec.gamma.column_iter() {
            let pivot = col.iter().fold(0.0f64, |a, &v| if v.abs() > a.abs() + 1e-12 { v } else { a });
            assert!(pivot > 0.0);
        }
        assert!(dec.lambda.iter().all(|&l| l > 0.0));
        assert!(dec.rho >= 1.0);
    }

    #[test]
    fn tree_enumeration() {
        let k4 = Topology::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)]).unwrap();
        assert_eq!(k4.spanning_tree_count(), 16.0);
        let trees = k4.spanning_trees(TREE_ENUMERATION_CAP).unwrap();
        assert_eq!(trees.len(), 16);
        assert!(trees.windows(2).all(|w| w[0] < w[1]));
        assert!(trees.iter().all(|t| k4.is_spanning_tree(t)));
        assert!(matches!(k4.spanning_trees(10), Err(Error::TooManyTrees { .. })));

        let tri = triangle();
        assert_eq!(tri.spanning_trees(10).unwrap(), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    fn connected_graph() -> impl Strategy<Value = (Topology, Vec<f64>)> {
        (3usize..7).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> =
                (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let extra = proptest::collection::vec(any::<bool>(), pairs.len());
            let x = proptest::collection::vec(-5.0f64..5.0, n);
            (Just(n), Just(pairs), extra, x).prop_map(|(n, pairs, keep, x)| {
                // a path guarantees connectivity; extra edges add cycles
                let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
                for (pair, k) in pairs.into_iter().zip(keep) {
                    if k && pair.1 != pair.0 + 1 {
                        edges.push(pair);
                    }
                }
                (Topology::new(n, &edges).unwrap(), x)
            })
        })
    }

    proptest! {
        #[test]
        fn reduced_state_properties((topo, x) in connected_graph()) {
            let dec = SpanningDecomposition::new(&topo, None).unwrap();
            let s = dec.edge_states(&x).unwrap();
            let xe = DVector::from_column_slice(&s.x_e).norm();
            let xt = DVector::from_column_slice(&s.x_tau).norm();
            let ups = DVector::from_column_slice(&s.upsilon).norm();
            let xc: f64 = s.x_e[dec.p()..].iter().map(|v| v * v).sum::<f64>();
            prop_assert!((xe * xe - (xt * xt + xc)).abs() <= 1e-9 * (1.0 + xe * xe));
            prop_assert!(xe <= dec.rho * ups + 1e-9);
            let back = &dec.gamma * DVector::from_column_slice(&s.upsilon);
            prop_assert!((back - DVector::from_column_slice(&s.x_tau)).norm() < 1e-9);

            // consensus <=> zero reduced state
            let shift = x[0];
            let flat = vec![shift; x.len()];
            let s0 = dec.edge_states(&flat).unwrap();
            prop_assert!(s0.upsilon.iter().all(|v| v.abs() < 1e-12));
            let spread = x.iter().fold(0.0f64, |a, v| a.max((v - shift).abs()));
            if spread > 1e-6 {
                prop_assert!(ups > 1e-9);
            }

            let w: Vec<f64> = (0..topo.edge_count()).map(|j| 0.5 + j as f64 * 0.1).collect();
            let l = topo.laplacian_at(&w).unwrap();
            for row in l.row_iter() {
                prop_assert!(row.sum().abs() < 1e-12);
            }
            prop_assert!((l.clone() - l.transpose()).norm() == 0.0);
            prop_assert!((l - dense_laplacian(&topo, &w)).norm() < 1e-12);
        }
    }
}
