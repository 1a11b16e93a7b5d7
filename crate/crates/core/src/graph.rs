//! Pose graph data model.
//!
//! Conventions: `R_i` maps world coordinates into the frame of vertex `i`, a
//! measurement on edge `(i, j)` is `Z ≈ R_j R_iᵀ` and `d ≈ R_i (p_j − p_i)`.
//! Vertex 0 is the anchor, fixed at the identity rotation and the origin.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{PgoError, Result};
use crate::so3::{Rotation, Vec3};
use crate::sparse::{SparseSymmetric, SpdSolver};

/// A relative pose measurement from vertex `from` to vertex `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Relative rotation `Z ≈ R_to R_fromᵀ`.
    pub z: Rotation,
    /// Displacement of `to` relative to `from`, expressed in the frame of `from`.
    pub d: Vec3,
    /// Rotation weight.
    pub omega: f64,
    /// Translation weight.
    pub lambda: f64,
}

/// An edge whose endpoints carry arbitrary integer labels (before relabeling).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEdge {
    pub from: i64,
    pub to: i64,
    pub z: Rotation,
    pub d: Vec3,
    pub omega: f64,
    pub lambda: f64,
}

/// Validated, connected pose graph with vertices `0..vertex_count` and anchor 0.
///
/// Edge order is preserved exactly; it defines the row order of every
/// per-edge matrix built from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    vertex_count: usize,
    edges: Vec<Edge>,
    labels: Vec<i64>,
}

impl PoseGraph {
    /// Graph over vertices `0..vertex_count` labeled by their own index.
    pub fn new(vertex_count: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::with_labels((0..vertex_count as i64).collect(), edges)
    }

    /// Graph whose vertex `k` carries the external label `labels[k]`.
    pub fn with_labels(labels: Vec<i64>, edges: Vec<Edge>) -> Result<Self> {
        let vertex_count = labels.len();
        if vertex_count < 2 {
            return Err(PgoError::InvalidGraph(format!(
                "a pose graph needs at least 2 vertices, got {vertex_count}"
            )));
        }
        for (k, e) in edges.iter().enumerate() {
            for v in [e.from, e.to] {
                if v >= vertex_count {
                    return Err(PgoError::VertexOutOfRange {
                        edge: k,
                        vertex: v,
                        vertex_count,
                    });
                }
            }
            if e.from == e.to {
                return Err(PgoError::SelfLoop {
                    edge: k,
                    vertex: labels[e.from],
                });
            }
            for (name, value) in [("omega", e.omega), ("lambda", e.lambda)] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(PgoError::InvalidWeight { edge: k, name, value });
                }
            }
            if !(e.d.iter().all(|v| v.is_finite()) && e.z.matrix().iter().all(|v| v.is_finite())) {
                return Err(PgoError::InvalidGraph(format!("edge {k} has non-finite measurement")));
            }
        }
        let components = components(vertex_count, &edges);
        if components.len() > 1 {
            return Err(PgoError::Disconnected {
                components: components
                    .into_iter()
                    .map(|c| c.into_iter().map(|v| labels[v]).collect())
                    .collect(),
            });
        }
        Ok(PoseGraph {
            vertex_count,
            edges,
            labels,
        })
    }

    /// Number of vertices including the anchor (`n + 1`).
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Number of free (non-anchor) vertices `n`.
    pub fn free_vertex_count(&self) -> usize {
        self.vertex_count - 1
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn anchor(&self) -> usize {
        0
    }

    /// Same vertices and labels with replacement edges, revalidated.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        Self::with_labels(self.labels.clone(), edges)
    }

    /// Whether `other` has the same vertex count and edge endpoints in the same order.
    pub fn same_topology(&self, other: &PoseGraph) -> bool {
        self.vertex_count == other.vertex_count
            && self.edges.len() == other.edges.len()
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(a, b)| a.from == b.from && a.to == b.to)
    }
}

/// Weakly connected components (sorted vertex lists, ordered by smallest member).
fn components(vertex_count: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..vertex_count).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for e in edges {
        let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..vertex_count {
        let root = find(&mut parent, v);
        groups.entry(root).or_default().push(v);
    }
    groups.into_values().collect()
}

/// Compacts arbitrary vertex labels to `0..n` in increasing label order; the
/// smallest label becomes the anchor. Labels in `vertex_labels` that no edge
/// touches are kept as vertices (and will make the graph disconnected).
pub fn relabel_and_anchor(
    vertex_labels: impl IntoIterator<Item = i64>,
    edges: Vec<LabeledEdge>,
) -> Result<PoseGraph> {
    let mut labels: Vec<i64> = vertex_labels.into_iter().collect();
    for (k, e) in edges.iter().enumerate() {
        if e.from == e.to {
            return Err(PgoError::SelfLoop {
                edge: k,
                vertex: e.from,
            });
        }
        labels.push(e.from);
        labels.push(e.to);
    }
    labels.sort_unstable();
    labels.dedup();
    let index: BTreeMap<i64, usize> = labels.iter().enumerate().map(|(k, &l)| (l, k)).collect();
    let edges = edges
        .into_iter()
        .map(|e| Edge {
            from: index[&e.from],
            to: index[&e.to],
            z: e.z,
            d: e.d,
            omega: e.omega,
            lambda: e.lambda,
        })
        .collect();
    PoseGraph::with_labels(labels, edges)
}

/// Rotations and positions for every vertex of a graph, anchor included.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub rotations: Vec<Rotation>,
    pub positions: Vec<Vec3>,
}

impl PoseEstimate {
    pub fn identity(vertex_count: usize) -> Self {
        PoseEstimate {
            rotations: vec![Rotation::identity(); vertex_count],
            positions: vec![Vec3::zeros(); vertex_count],
        }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// Applies the global motion that brings vertex 0 to the identity and the origin.
    ///
    /// The cost of a graph is unchanged by this transformation.
    pub fn anchored(&self) -> PoseEstimate {
        let r0 = self.rotations[0];
        let p0 = self.positions[0];
        let r0t = r0.transpose();
        PoseEstimate {
            rotations: self.rotations.iter().map(|r| r * &r0t).collect(),
            positions: self.positions.iter().map(|p| r0.apply(&(p - p0))).collect(),
        }
    }
}

/// `Σ λ‖d − R_i(p_j − p_i)‖²`.
pub fn translation_cost(g: &PoseGraph, x: &PoseEstimate) -> f64 {
    g.edges()
        .iter()
        .map(|e| {
            let r = e.d - x.rotations[e.from].apply(&(x.positions[e.to] - x.positions[e.from]));
            e.lambda * r.norm_squared()
        })
        .sum()
}

/// `Σ ω‖Z − R_j R_iᵀ‖_F²`.
pub fn rotation_cost(g: &PoseGraph, rotations: &[Rotation]) -> f64 {
    g.edges()
        .iter()
        .map(|e| {
            let rel = rotations[e.to].matrix() * rotations[e.from].matrix().transpose();
            e.omega * (e.z.matrix() - rel).norm_squared()
        })
        .sum()
}

/// The full pose graph cost: translation plus rotation terms over all edges.
pub fn pgo_cost(g: &PoseGraph, x: &PoseEstimate) -> f64 {
    assert_eq!(x.len(), g.vertex_count(), "estimate size does not match graph");
    translation_cost(g, x) + rotation_cost(g, &x.rotations)
}

/// Reduced incidence matrix `A` (m × n): row `k` holds `+1` in column `j−1` and
/// `−1` in column `i−1` for edge `(i, j)`, with the anchor column dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedIncidence {
    /// Per row: (column with −1, column with +1).
    rows: Vec<(Option<usize>, Option<usize>)>,
    cols: usize,
}

fn free_column(v: usize) -> Option<usize> {
    v.checked_sub(1)
}

impl ReducedIncidence {
    pub fn from_graph(g: &PoseGraph) -> Self {
        ReducedIncidence {
            rows: g
                .edges()
                .iter()
                .map(|e| (free_column(e.from), free_column(e.to)))
                .collect(),
            cols: g.free_vertex_count(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// (column of −1, column of +1) for row `k`.
    pub fn row(&self, k: usize) -> (Option<usize>, Option<usize>) {
        self.rows[k]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.cols);
        for (k, &(minus, plus)) in self.rows.iter().enumerate() {
            if let Some(c) = minus {
                a[(k, c)] -= 1.0;
            }
            if let Some(c) = plus {
                a[(k, c)] += 1.0;
            }
        }
        a
    }

    /// `A·X` for an n-row table `X`.
    pub fn mul_rows(&self, x: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(x.len(), self.cols);
        self.rows
            .iter()
            .map(|&(minus, plus)| {
                plus.map_or(Vec3::zeros(), |c| x[c]) - minus.map_or(Vec3::zeros(), |c| x[c])
            })
            .collect()
    }

    /// `Aᵀ W Y` for an m-row table `Y` and per-row weights `W`.
    pub fn transpose_mul_weighted(&self, weights: &[f64], y: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(y.len(), self.rows.len());
        let mut out = vec![Vec3::zeros(); self.cols];
        for ((&(minus, plus), w), yk) in self.rows.iter().zip(weights).zip(y) {
            if let Some(c) = plus {
                out[c] += yk * *w;
            }
            if let Some(c) = minus {
                out[c] -= yk * *w;
            }
        }
        out
    }

    /// `Aᵀ W A` as a sparse symmetric matrix.
    pub fn weighted_laplacian(&self, weights: &[f64]) -> SparseSymmetric {
        assert_eq!(weights.len(), self.rows.len());
        let pattern = self.rows.iter().filter_map(|&(minus, plus)| match (minus, plus) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        });
        let mut l = SparseSymmetric::with_pattern(self.cols, pattern);
        for (&(minus, plus), &w) in self.rows.iter().zip(weights) {
            if let Some(a) = minus {
                l.add(a, a, w);
            }
            if let Some(b) = plus {
                l.add(b, b, w);
            }
            if let (Some(a), Some(b)) = (minus, plus) {
                l.add(a, b, -w);
            }
        }
        l
    }
}

/// The reduced incidence matrix of `g`. Connectivity was verified when `g` was built,
/// so the result always has full column rank.
pub fn build_reduced_incidence(g: &PoseGraph) -> ReducedIncidence {
    ReducedIncidence::from_graph(g)
}

/// Factored `AᵀWA` for repeated weighted least-squares solves `min Σ w_k‖(AX)_k − Y_k‖²`.
#[derive(Debug, Clone)]
pub struct WeightedLaplacian {
    incidence: ReducedIncidence,
    weights: Vec<f64>,
    factor: SpdSolver,
}

impl WeightedLaplacian {
    pub fn new(incidence: ReducedIncidence, weights: Vec<f64>) -> Result<Self> {
        let factor = SpdSolver::new(&incidence.weighted_laplacian(&weights))?;
        Ok(WeightedLaplacian {
            incidence,
            weights,
            factor,
        })
    }

    pub fn incidence(&self) -> &ReducedIncidence {
        &self.incidence
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Solves `(AᵀWA) X = R` for an n-row right-hand side.
    pub fn solve_normal(&self, rhs: &[Vec3]) -> Vec<Vec3> {
        let n = self.incidence.cols();
        let mut out = vec![Vec3::zeros(); n];
        let mut column = vec![0.0; n];
        for axis in 0..3 {
            for (c, r) in column.iter_mut().zip(rhs) {
                *c = r[axis];
            }
            self.factor.solve_in_place(&mut column);
            for (o, c) in out.iter_mut().zip(&column) {
                o[axis] = *c;
            }
        }
        out
    }

    /// `(AᵀWA)⁻¹ AᵀW Y`.
    pub fn solve(&self, y: &[Vec3]) -> Vec<Vec3> {
        self.solve_normal(&self.incidence.transpose_mul_weighted(&self.weights, y))
    }

    /// Solves `(AᵀWA) x = b` for a single scalar right-hand side.
    pub fn solve_scalar(&self, b: &mut [f64]) {
        self.factor.solve_in_place(b);
    }
}
