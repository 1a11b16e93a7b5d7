//! Convergence diagnostics for the orientation iterations.
//!
//! With `Δ*` the exact corrections that carry the current estimate onto the
//! optimum, `AΔ* = B + C − E` holds row by row, where `c_k` is the part of the
//! exact relative rotation the linearization drops and `e_k` is the measurement
//! noise seen through the current estimate. Since `Δ̂ = A†B`, the gap
//! `Δ* − Δ̂ = A†(C − E)` is governed by the rows of
//! `A† = (AᵀΩA)⁻¹AᵀΩ` and the sizes `c_m = max‖c_k‖`, `e_m = max‖e_k‖`.

use serde::Serialize;

use crate::error::{PgoError, Result};
use crate::graph::{Edge, PoseGraph, ReducedIncidence, WeightedLaplacian};
use crate::orient::DeltaTable;
use crate::so3::{delta_of, s2_remainder, vee, Rotation, Vec3};

/// Structural coefficient and optional remainder and noise magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinReport {
    /// Largest row norm of `A†`.
    pub a_m: f64,
    /// `‖a†_k‖` for every free vertex, in vertex order.
    pub row_norms: Vec<f64>,
    pub c_m: Option<f64>,
    pub e_m: Option<f64>,
    /// `a_m (c_m + e_m)` when both magnitudes are known.
    pub bound: Option<f64>,
}

impl BasinReport {
    pub fn new(row_norms: Vec<f64>, c_m: Option<f64>, e_m: Option<f64>) -> Self {
        let a_m = row_norms.iter().copied().fold(0.0, f64::max);
        let bound = match (c_m, e_m) {
            (Some(c), Some(e)) => Some(a_m * (c + e)),
            _ => None,
        };
        BasinReport {
            a_m,
            row_norms,
            c_m,
            e_m,
            bound,
        }
    }
}

/// Row norms `‖a†_k‖` of `A† = (AᵀΩA)⁻¹AᵀΩ`, one per free vertex.
///
/// Row `k` is `ω_l (y[j_l] − y[i_l])` over edges `l`, where `y` solves
/// `(AᵀΩA) y = e_k`; `A†` is never formed.
pub fn pseudo_inverse_row_norms(g: &PoseGraph) -> Result<Vec<f64>> {
    let omegas: Vec<f64> = g.edges().iter().map(|e| e.omega).collect();
    let incidence = ReducedIncidence::from_graph(g);
    let system = WeightedLaplacian::new(incidence.clone(), omegas.clone())?;
    let n = g.free_vertex_count();
    let mut y = vec![0.0; n];
    let mut norms = Vec::with_capacity(n);
    for k in 0..n {
        y.iter_mut().for_each(|v| *v = 0.0);
        y[k] = 1.0;
        system.solve_scalar(&mut y);
        let sum: f64 = (0..incidence.rows())
            .map(|l| {
                let (minus, plus) = incidence.row(l);
                let v = plus.map_or(0.0, |c| y[c]) - minus.map_or(0.0, |c| y[c]);
                (omegas[l] * v).powi(2)
            })
            .sum();
        let norm = sum.sqrt();
        if !norm.is_finite() {
            return Err(PgoError::Conditioning(format!("row {k} of the pseudo-inverse is not finite")));
        }
        norms.push(norm);
    }
    Ok(norms)
}

/// `a_m` and the row norms it is the maximum of.
pub fn compute_am(g: &PoseGraph) -> Result<(f64, Vec<f64>)> {
    let norms = pseudo_inverse_row_norms(g)?;
    Ok((norms.iter().copied().fold(0.0, f64::max), norms))
}

/// `c_k = vee(−S₂(δ_i, δ_j))` for every edge.
pub fn remainder_vectors(deltas: &DeltaTable, edges: &[Edge]) -> Result<Vec<Vec3>> {
    edges
        .iter()
        .map(|e| Ok(vee(&-s2_remainder(&deltas.vertex(e.from), &deltas.vertex(e.to))?)))
        .collect()
}

/// `c_m = max_k ‖c_k‖`.
pub fn compute_cm(deltas: &DeltaTable, edges: &[Edge]) -> Result<f64> {
    Ok(max_norm(&remainder_vectors(deltas, edges)?))
}

/// `e_k = vee(−R̂_jᵀ (Z_k − Z̄_k) R̂_i)` with `Z̄` the noise-free measurement.
pub fn noise_vectors(g_noisy: &PoseGraph, g_truth: &PoseGraph, rotations: &[Rotation]) -> Result<Vec<Vec3>> {
    if !g_noisy.same_topology(g_truth) {
        return Err(PgoError::TopologyMismatch(format!(
            "{} vertices / {} edges against {} vertices / {} edges, or differing endpoints",
            g_noisy.vertex_count(),
            g_noisy.edge_count(),
            g_truth.vertex_count(),
            g_truth.edge_count()
        )));
    }
    if rotations.len() != g_noisy.vertex_count() {
        return Err(PgoError::InvalidOptions(format!(
            "{} rotations for {} vertices",
            rotations.len(),
            g_noisy.vertex_count()
        )));
    }
    Ok(g_noisy
        .edges()
        .iter()
        .zip(g_truth.edges())
        .map(|(noisy, truth)| {
            let phi = noisy.z.matrix() - truth.z.matrix();
            let ri = rotations[noisy.from].matrix();
            let rj = rotations[noisy.to].matrix();
            vee(&-(rj.transpose() * phi * ri))
        })
        .collect())
}

/// `e_m = max_k ‖e_k‖`.
pub fn compute_em(g_noisy: &PoseGraph, g_truth: &PoseGraph, rotations: &[Rotation]) -> Result<f64> {
    Ok(max_norm(&noise_vectors(g_noisy, g_truth, rotations)?))
}

/// Corrections `δ*_i` with `R̂_i Ψ(δ*_i) = R_i` for the free vertices.
///
/// Returns `None` if any vertex is more than 90° away from its target, where
/// the correction is not representable.
pub fn alignment_deltas(estimate: &[Rotation], target: &[Rotation]) -> Option<DeltaTable> {
    assert_eq!(estimate.len(), target.len());
    estimate
        .iter()
        .zip(target)
        .skip(1)
        .map(|(r, t)| delta_of(&(r.transpose() * *t)))
        .collect::<Option<Vec<_>>>()
        .map(DeltaTable::new)
}

fn max_norm(v: &[Vec3]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Nearest-rank percentile of `values` (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_reduced_incidence;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn edge(from: usize, to: usize) -> Edge {
        Edge {
            from,
            to,
            z: Rotation::identity(),
            d: Vec3::zeros(),
            omega: 1.0,
            lambda: 1.0,
        }
    }

    fn dense_row_norms(g: &PoseGraph) -> Vec<f64> {
        let a = build_reduced_incidence(g).to_dense();
        let w = DMatrix::from_diagonal(&DVector::from_iterator(
            g.edge_count(),
            g.edges().iter().map(|e| e.omega),
        ));
        let pinv = (a.transpose() * &w * &a).try_inverse().unwrap() * a.transpose() * w;
        (0..pinv.nrows()).map(|r| pinv.row(r).norm()).collect()
    }

    #[test]
    fn single_edge_and_chain() {
        let g = PoseGraph::new(2, vec![edge(0, 1)]).unwrap();
        assert_eq!(compute_am(&g).unwrap().0, 1.0);
        let g = PoseGraph::new(3, vec![edge(0, 1), edge(1, 2)]).unwrap();
        let (a_m, norms) = compute_am(&g).unwrap();
        assert_relative_eq!(a_m, 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(norms[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_cycle_matches_dense() {
        let mut edges = vec![edge(0, 1), edge(1, 2), edge(2, 3), edge(3, 0), edge(1, 3), edge(0, 2)];
        for (k, e) in edges.iter_mut().enumerate() {
            e.omega = 0.5 + k as f64;
        }
        let g = PoseGraph::new(4, edges).unwrap();
        let norms = pseudo_inverse_row_norms(&g).unwrap();
        for (a, b) in norms.iter().zip(dense_row_norms(&g)) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn independent_of_translation_data() {
        let mut edges = vec![edge(0, 1), edge(1, 2), edge(2, 0)];
        let g1 = PoseGraph::new(3, edges.clone()).unwrap();
        for e in edges.iter_mut() {
            e.lambda = 7.0;
            e.d = Vec3::new(1.0, -2.0, 3.0);
        }
        let g2 = PoseGraph::new(3, edges).unwrap();
        assert_eq!(compute_am(&g1).unwrap(), compute_am(&g2).unwrap());
    }

    #[test]
    fn remainder_magnitudes() {
        let edges = vec![edge(0, 1), edge(1, 2)];
        assert_eq!(compute_cm(&DeltaTable::zeros(2), &edges).unwrap(), 0.0);
        let d = Vec3::new(0.3, 0.0, 0.0);
        let same = DeltaTable::new(vec![d, d]);
        assert!(compute_cm(&same, &[edge(1, 2)]).unwrap() < 1e-16);
        let di = Vec3::new(0.1, 0.2, -0.2);
        let dj = Vec3::new(-0.25, 0.05, 0.1);
        let t = DeltaTable::new(vec![di, dj]);
        let expected = vee(&-s2_remainder(&di, &dj).unwrap()).norm();
        assert_eq!(compute_cm(&t, &[edge(1, 2)]).unwrap(), expected);
        let too_big = DeltaTable::new(vec![Vec3::new(2.0, 0.0, 0.0), dj]);
        assert!(matches!(compute_cm(&too_big, &edges), Err(PgoError::Domain { .. })));
    }

    #[test]
    fn noise_magnitude_single_edge() {
        let truth = PoseGraph::new(2, vec![edge(0, 1)]).unwrap();
        let mut noisy_edge = edge(0, 1);
        noisy_edge.z = Rotation::from_axis_angle(&Vec3::z(), 30f64.to_radians());
        let noisy = PoseGraph::new(2, vec![noisy_edge]).unwrap();
        let ident = [Rotation::identity(); 2];
        assert_relative_eq!(compute_em(&noisy, &truth, &ident).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(compute_em(&truth, &truth, &ident).unwrap(), 0.0);
        let other = PoseGraph::new(3, vec![edge(0, 1), edge(1, 2)]).unwrap();
        assert!(matches!(
            compute_em(&noisy, &other, &[Rotation::identity(); 3]),
            Err(PgoError::TopologyMismatch(_))
        ));
    }

    #[test]
    fn alignment_recovers_corrections() {
        let estimate = [Rotation::identity(), Rotation::from_axis_angle(&Vec3::x(), 0.4)];
        let delta = Vec3::new(0.1, -0.2, 0.3);
        let target = [Rotation::identity(), estimate[1] * crate::so3::rodrigues(&delta).unwrap()];
        let found = alignment_deltas(&estimate, &target).unwrap();
        assert_relative_eq!(found.vertex(1), delta, epsilon = 1e-14);
        let far = [Rotation::identity(), Rotation::from_axis_angle(&Vec3::x(), 2.0)];
        assert!(alignment_deltas(&estimate, &far).is_none());
    }

    #[test]
    fn percentiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
    }
}
