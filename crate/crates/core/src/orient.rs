//! Iterative least-squares solution of the orientation sub-problem, followed
//! by closed-form position recovery.
//!
//! Each iteration linearizes the rotation cost around the current estimate
//! `R̂`: with `R_i = R̂_i Ψ(δ_i)` and the second-order remainder dropped, the
//! correction table `Δ` solves the weighted least-squares problem
//!
//! ```text
//! min_Δ tr((AΔ − B)ᵀ Ω (AΔ − B)),   B_k = vee(I − R̂_jᵀ Z_k R̂_i)
//! ```
//!
//! whose normal matrix `AᵀΩA` depends only on the graph, so it is factored
//! once per solve.

use std::time::Instant;

use crate::chordal::chordal_init;
use crate::error::{PgoError, Result};
use crate::graph::{pgo_cost, ReducedIncidence, PoseEstimate, PoseGraph, WeightedLaplacian};
use crate::report::{Method, SolveReport, SolverOptions, Termination};
use crate::so3::{clamp_delta, project_to_so3, rodrigues, vee, Mat3, Rotation, Vec3};

/// Correction vectors `δ_1 … δ_n` for the free vertices (the anchor's is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable(Vec<Vec3>);

impl DeltaTable {
    pub fn new(rows: Vec<Vec3>) -> Self {
        DeltaTable(rows)
    }

    pub fn zeros(n: usize) -> Self {
        DeltaTable(vec![Vec3::zeros(); n])
    }

    /// Row `k` belongs to vertex `k + 1`.
    pub fn rows(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Correction of `vertex`; zero for the anchor.
    pub fn vertex(&self, vertex: usize) -> Vec3 {
        match vertex {
            0 => Vec3::zeros(),
            v => self.0[v - 1],
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }
}

/// Per-edge residual vectors `b_k = vee(I − R̂_jᵀ Z_k R̂_i)`, in edge order.
pub fn build_b(g: &PoseGraph, rotations: &[Rotation]) -> Vec<Vec3> {
    g.edges()
        .iter()
        .map(|e| {
            let rj = rotations[e.to].matrix();
            let ri = rotations[e.from].matrix();
            vee(&(Mat3::identity() - rj.transpose() * e.z.matrix() * ri))
        })
        .collect()
}

/// `Δ̂ = (AᵀΩA)⁻¹ AᵀΩ B`.
pub fn solve_delta(a: &ReducedIncidence, omega: &[f64], b: &[Vec3]) -> Result<DeltaTable> {
    let system = WeightedLaplacian::new(a.clone(), omega.to_vec())?;
    Ok(DeltaTable(system.solve(b)))
}

/// Rows `R_iᵀ d_k`: each edge's displacement rotated into the world frame.
fn world_displacements(g: &PoseGraph, rotations: &[Rotation]) -> Vec<Vec3> {
    g.edges()
        .iter()
        .map(|e| rotations[e.from].matrix().transpose() * e.d)
        .collect()
}

/// Positions minimizing the translation cost for fixed rotations, anchor at the origin.
pub fn recover_positions(g: &PoseGraph, rotations: &[Rotation]) -> Result<Vec<Vec3>> {
    PositionSystem::new(g)?.solve(rotations)
}

/// Factored `AᵀΛA` for repeated position recovery on one graph.
#[derive(Debug, Clone)]
pub struct PositionSystem<'g> {
    graph: &'g PoseGraph,
    system: WeightedLaplacian,
}

impl<'g> PositionSystem<'g> {
    pub fn new(graph: &'g PoseGraph) -> Result<Self> {
        let lambdas = graph.edges().iter().map(|e| e.lambda).collect();
        let system = WeightedLaplacian::new(ReducedIncidence::from_graph(graph), lambdas)?;
        Ok(PositionSystem { graph, system })
    }

    pub fn solve(&self, rotations: &[Rotation]) -> Result<Vec<Vec3>> {
        let free = self.system.solve(&world_displacements(self.graph, rotations));
        let mut positions = Vec::with_capacity(free.len() + 1);
        positions.push(Vec3::zeros());
        positions.extend(free);
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(PgoError::Conditioning("position solve produced non-finite values".into()));
        }
        Ok(positions)
    }

    pub fn estimate(&self, rotations: &[Rotation]) -> Result<PoseEstimate> {
        Ok(PoseEstimate {
            rotations: rotations.to_vec(),
            positions: self.solve(rotations)?,
        })
    }
}

/// Right-multiplies every free vertex by `Ψ(δ_v)` and re-projects onto SO(3).
/// Corrections outside the unit ball are clamped; returns how many were.
pub fn apply_corrections(rotations: &mut [Rotation], deltas: &DeltaTable) -> Result<usize> {
    let mut clamped = 0;
    for (r, d) in rotations.iter_mut().skip(1).zip(deltas.rows()) {
        let (d, was_clamped) = clamp_delta(d);
        clamped += was_clamped as usize;
        let updated = r.matrix() * rodrigues(&d)?.matrix();
        *r = project_to_so3(&updated)?;
    }
    Ok(clamped)
}

pub(crate) fn validate_options(opts: &SolverOptions) -> Result<()> {
    if opts.itr_max == 0 {
        return Err(PgoError::InvalidOptions("itr_max must be positive".into()));
    }
    if !(opts.tolerance > 0.0) {
        return Err(PgoError::InvalidOptions(format!(
            "tolerance must be positive, got {}",
            opts.tolerance
        )));
    }
    Ok(())
}

pub(crate) fn check_initial(g: &PoseGraph, initial: &[Rotation]) -> Result<()> {
    if initial.len() != g.vertex_count() {
        return Err(PgoError::InvalidOptions(format!(
            "{} initial rotations for {} vertices",
            initial.len(),
            g.vertex_count()
        )));
    }
    Ok(())
}

/// The orientation solver with its factored normal matrices.
#[derive(Debug, Clone)]
pub struct OrientationSolver<'g> {
    graph: &'g PoseGraph,
    rotation_system: WeightedLaplacian,
    positions: PositionSystem<'g>,
}

impl<'g> OrientationSolver<'g> {
    pub fn new(graph: &'g PoseGraph) -> Result<Self> {
        let omegas = graph.edges().iter().map(|e| e.omega).collect();
        let rotation_system = WeightedLaplacian::new(ReducedIncidence::from_graph(graph), omegas)?;
        Ok(OrientationSolver {
            graph,
            rotation_system,
            positions: PositionSystem::new(graph)?,
        })
    }

    /// One linearized solve at `rotations`: the correction table `Δ̂`.
    pub fn step(&self, rotations: &[Rotation]) -> DeltaTable {
        let b = build_b(self.graph, rotations);
        let delta = self.rotation_system.solve(&b);
        if cfg!(debug_assertions) {
            self.check_normal_residual(&b, &delta);
        }
        DeltaTable(delta)
    }

    fn check_normal_residual(&self, b: &[Vec3], delta: &[Vec3]) {
        let a = self.rotation_system.incidence();
        let w = self.rotation_system.weights();
        let fitted = a.mul_rows(delta);
        let diff: Vec<Vec3> = fitted.iter().zip(b).map(|(f, b)| f - b).collect();
        let residual = a.transpose_mul_weighted(w, &diff);
        let worst = residual.iter().map(|r| r.amax()).fold(0.0, f64::max);
        let scale = a.transpose_mul_weighted(w, b).iter().map(|r| r.amax()).fold(0.0, f64::max);
        let w_max = w.iter().copied().fold(0.0, f64::max);
        let b_max = b.iter().map(|r| r.amax()).fold(0.0, f64::max);
        if worst > 1e-10 * scale.max(w_max * b_max) + f64::MIN_POSITIVE {
            log::warn!("normal-equation residual {worst:e} exceeds bound (scale {scale:e})");
        }
    }

    pub fn positions(&self) -> &PositionSystem<'g> {
        &self.positions
    }

    /// Iterates from `initial` until the largest correction drops to the tolerance
    /// or the iteration budget is spent, then recovers positions.
    pub fn run(&self, initial: Vec<Rotation>, opts: &SolverOptions) -> Result<(PoseEstimate, SolveReport)> {
        validate_options(opts)?;
        check_initial(self.graph, &initial)?;
        let started = Instant::now();
        let mut rotations = initial;
        let initial_cost = pgo_cost(self.graph, &self.positions.estimate(&rotations)?);

        let mut max_delta_history = Vec::new();
        let mut cost_history = Vec::new();
        let mut clamp_count = 0;
        let (termination, estimate) = loop {
            let deltas = self.step(&rotations);
            let max_delta = deltas.max_norm();
            clamp_count += apply_corrections(&mut rotations, &deltas)?;
            let estimate = self.positions.estimate(&rotations)?;
            max_delta_history.push(max_delta);
            cost_history.push(pgo_cost(self.graph, &estimate));
            if max_delta <= opts.tolerance {
                break (Termination::Tolerance, estimate);
            }
            if max_delta_history.len() >= opts.itr_max {
                break (Termination::ItrMax, estimate);
            }
        };

        let final_cost = *cost_history.last().expect("at least one iteration");
        if final_cost > initial_cost {
            log::warn!("orientation solve raised the cost from {initial_cost} to {final_cost}");
        }
        let report = SolveReport {
            method: Method::Alg1,
            iterations: max_delta_history.len(),
            termination,
            max_delta_history,
            cost_history,
            clamp_count,
            initial_cost,
            final_cost,
            cost_regressed: final_cost > initial_cost,
            joint_position_cost: None,
            time_init_s: 0.0,
            time_solve_s: started.elapsed().as_secs_f64(),
        };
        Ok((estimate, report))
    }
}

/// Chordal initialization followed by the orientation iterations and position recovery.
pub fn alg1_solve(g: &PoseGraph, opts: &SolverOptions) -> Result<(PoseEstimate, SolveReport)> {
    let started = Instant::now();
    let initial = chordal_init(g)?;
    let time_init_s = started.elapsed().as_secs_f64();
    let (estimate, mut report) = OrientationSolver::new(g)?.run(initial, opts)?;
    report.time_init_s = time_init_s;
    Ok((estimate, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_reduced_incidence, Edge};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

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

    fn rz(deg: f64) -> Rotation {
        Rotation::from_axis_angle(&Vec3::z(), deg.to_radians())
    }

    #[test]
    fn b_row_for_rotated_measurement() {
        let theta: f64 = 0.4;
        let mut e = edge(0, 1);
        e.z = Rotation::from_axis_angle(&Vec3::z(), theta);
        let g = PoseGraph::new(2, vec![e]).unwrap();
        let b = build_b(&g, &[Rotation::identity(); 2]);
        assert_relative_eq!(b[0], Vec3::new(0.0, 0.0, -theta.sin()), epsilon = 1e-15);
    }

    #[test]
    fn b_depends_only_on_relative_product() {
        let mut e = edge(0, 1);
        e.z = Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.8);
        let g = PoseGraph::new(2, vec![e.clone()]).unwrap();
        let rot = [
            Rotation::from_axis_angle(&Vec3::x(), 0.3),
            Rotation::from_axis_angle(&Vec3::y(), -1.1),
        ];
        let b = build_b(&g, &rot);
        let product = rot[1].matrix().transpose() * e.z.matrix() * rot[0].matrix();
        assert_eq!(b[0], vee(&(Mat3::identity() - product)));
    }

    #[test]
    fn solve_delta_trivial_cases() {
        let g = PoseGraph::new(2, vec![edge(0, 1)]).unwrap();
        let a = build_reduced_incidence(&g);
        let b = vec![Vec3::new(0.1, -0.2, 0.3)];
        assert_relative_eq!(solve_delta(&a, &[1.0], &b).unwrap().rows()[0], b[0], epsilon = 1e-16);
        let zero = solve_delta(&a, &[1.0], &[Vec3::zeros()]).unwrap();
        assert_eq!(zero.rows()[0], Vec3::zeros());
    }

    #[test]
    fn solve_delta_chain_matches_pseudo_inverse() {
        let g = PoseGraph::new(3, vec![edge(0, 1), edge(1, 2)]).unwrap();
        let a = build_reduced_incidence(&g);
        let b = vec![Vec3::new(0.3, -0.7, 0.1), Vec3::new(0.25, 0.5, -0.9)];
        let delta = solve_delta(&a, &[1.0, 1.0], &b).unwrap();
        let pinv = a.to_dense().pseudo_inverse(1e-14).unwrap();
        let bm = DMatrix::from_fn(2, 3, |r, c| b[r][c]);
        let expected = pinv * bm;
        for (r, d) in delta.rows().iter().enumerate() {
            for c in 0..3 {
                assert_relative_eq!(d[c], expected[(r, c)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chain_positions_integrate_displacements() {
        let mut e0 = edge(0, 1);
        e0.d = Vec3::new(1.0, 0.0, 0.0);
        let mut e1 = edge(1, 2);
        e1.d = Vec3::new(0.0, 1.0, 0.0);
        let g = PoseGraph::new(3, vec![e0, e1]).unwrap();
        let p = recover_positions(&g, &[Rotation::identity(); 3]).unwrap();
        assert_eq!(p[0], Vec3::zeros());
        assert_relative_eq!(p[1], Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(p[2], Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn single_edge_fixed_point() {
        let mut e = edge(0, 1);
        e.z = rz(30.0);
        let g = PoseGraph::new(2, vec![e]).unwrap();
        let (x, report) = alg1_solve(&g, &SolverOptions::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.termination, Termination::Tolerance);
        assert!(report.max_delta_history[0] < 1e-15);
        assert!(report.final_cost < 1e-25);
        assert_relative_eq!(*x.rotations[1].matrix(), *rz(30.0).matrix(), epsilon = 1e-15);
    }

    #[test]
    fn single_edge_one_step_from_identity() {
        let mut e = edge(0, 1);
        e.z = rz(30.0);
        let g = PoseGraph::new(2, vec![e]).unwrap();
        let solver = OrientationSolver::new(&g).unwrap();
        let mut rotations = vec![Rotation::identity(); 2];
        let delta = solver.step(&rotations);
        // b = vee(I − Rz(30°)) = (0, 0, −sin 30°)
        assert_relative_eq!(delta.rows()[0], Vec3::new(0.0, 0.0, -0.5), epsilon = 1e-15);
        apply_corrections(&mut rotations, &delta).unwrap();
        assert_relative_eq!(*rotations[1].matrix(), *rz(30.0).matrix(), epsilon = 1e-15);
    }

    #[test]
    fn clamps_oversized_corrections() {
        let mut rotations = vec![Rotation::identity(); 2];
        let deltas = DeltaTable::new(vec![Vec3::new(3.0, 0.0, 0.0)]);
        assert_eq!(apply_corrections(&mut rotations, &deltas).unwrap(), 1);
        assert_relative_eq!(rotations[1].angle(), std::f64::consts::FRAC_PI_2, epsilon = 1e-4);
    }

    #[test]
    fn rejects_bad_options() {
        let g = PoseGraph::new(2, vec![edge(0, 1)]).unwrap();
        let opts = SolverOptions { itr_max: 0, tolerance: 1e-4 };
        assert!(matches!(alg1_solve(&g, &opts), Err(PgoError::InvalidOptions(_))));
    }
}
