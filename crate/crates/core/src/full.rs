//! Joint least-squares solution of rotation corrections and positions.
//!
//! Around the current rotations `R̂`, both residuals of the pose graph cost are
//! linearized in the corrections `δ` and solved together with the positions:
//!
//! ```text
//! rotation rows:     √(2ω_k) (δ_j − δ_i − b_k)
//! translation rows:  √(λ_k) (p_j − p_i + S(u_k) δ_i − u_k),   u_k = R̂_iᵀ d_k
//! ```
//!
//! The unknown vector is `[δ_1 … δ_n, p_1 … p_n]`; the anchor's correction and
//! position are zero and eliminated.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::chordal::chordal_init;
use crate::error::{PgoError, Result};
use crate::graph::{pgo_cost, PoseEstimate, PoseGraph};
use crate::orient::{apply_corrections, build_b, check_initial, validate_options, DeltaTable, PositionSystem};
use crate::report::{Method, SolveReport, SolverOptions, Termination};
use crate::so3::{skew, Rotation, Vec3};
use crate::sparse::{SparseSymmetric, SpdSolver};

/// Row scaling of the stacked system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StackedWeighting {
    /// Rows scaled by `√(2ω)` and `√λ`, so the least-squares minimizer is that of
    /// the linearized cost.
    #[default]
    Objective,
    /// Rows scaled by `2ω` and `λ` directly.
    Literal,
}

impl StackedWeighting {
    fn scales(self, omega: f64, lambda: f64) -> (f64, f64) {
        match self {
            StackedWeighting::Objective => ((2.0 * omega).sqrt(), lambda.sqrt()),
            StackedWeighting::Literal => (2.0 * omega, lambda),
        }
    }
}

/// The stacked sparse system `G x ≈ h` with `6m` rows and `6n` columns.
///
/// Rows `3k..3k+3` hold edge `k`'s rotation residual, rows `3m+3k..3m+3k+3` its
/// translation residual. Column `3(v−1)+a` is `δ_v[a]`, column `3n+3(v−1)+a` is `p_v[a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    cols: usize,
}

impl StackedSystem {
    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Structural nonzeros (entries that may be nonzero for some rotations).
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `(row, column, value)` for every structural entry.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.rows.len(), self.cols);
        for (r, c, v) in self.triplets() {
            g[(r, c)] += v;
        }
        g
    }

    fn normal_pattern(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .flat_map(|row| row.iter().flat_map(move |&(a, _)| row.iter().map(move |&(b, _)| (a, b))))
    }

    /// Adds `GᵀG` into `normal` and returns `Gᵀh`.
    fn accumulate_normal(&self, normal: &mut SparseSymmetric) -> Vec<f64> {
        let mut gth = vec![0.0; self.cols];
        for (row, h) in self.rows.iter().zip(&self.rhs) {
            for (x, &(ca, va)) in row.iter().enumerate() {
                gth[ca] += va * h;
                for &(cb, vb) in &row[x..] {
                    normal.add(ca, cb, va * vb);
                }
            }
        }
        gth
    }
}

/// Assembles the stacked system at `rotations`.
pub fn build_system(g: &PoseGraph, rotations: &[Rotation], weighting: StackedWeighting) -> StackedSystem {
    let n = g.free_vertex_count();
    let m = g.edge_count();
    let delta_col = |v: usize| 3 * (v - 1);
    let pos_col = |v: usize| 3 * n + 3 * (v - 1);
    let b = build_b(g, rotations);

    let mut rows = vec![Vec::new(); 6 * m];
    let mut rhs = vec![0.0; 6 * m];
    for (k, e) in g.edges().iter().enumerate() {
        let (sr, st) = weighting.scales(e.omega, e.lambda);
        let u = rotations[e.from].matrix().transpose() * e.d;
        let su = skew(&u);
        for a in 0..3 {
            let r = 3 * k + a;
            if e.to != 0 {
                rows[r].push((delta_col(e.to) + a, sr));
            }
            if e.from != 0 {
                rows[r].push((delta_col(e.from) + a, -sr));
            }
            rhs[r] = sr * b[k][a];

            let r = 3 * m + 3 * k + a;
            if e.from != 0 {
                for c in (0..3).filter(|&c| c != a) {
                    rows[r].push((delta_col(e.from) + c, st * su[(a, c)]));
                }
            }
            if e.to != 0 {
                rows[r].push((pos_col(e.to) + a, st));
            }
            if e.from != 0 {
                rows[r].push((pos_col(e.from) + a, -st));
            }
            rhs[r] = st * u[a];
        }
    }
    StackedSystem { rows, rhs, cols: 6 * n }
}

/// Normal-equation solver for the stacked system with the sparsity pattern cached.
#[derive(Debug, Clone)]
pub struct JointSolver<'g> {
    graph: &'g PoseGraph,
    weighting: StackedWeighting,
    normal: SparseSymmetric,
    factor: Option<SpdSolver>,
}

impl<'g> JointSolver<'g> {
    pub fn new(graph: &'g PoseGraph, weighting: StackedWeighting) -> Self {
        let probe = build_system(graph, &vec![Rotation::identity(); graph.vertex_count()], weighting);
        let normal = SparseSymmetric::with_pattern(probe.cols(), probe.normal_pattern());
        JointSolver {
            graph,
            weighting,
            normal,
            factor: None,
        }
    }

    /// Solves the stacked system at `rotations`: corrections and positions
    /// (anchor position included).
    pub fn step(&mut self, rotations: &[Rotation]) -> Result<(DeltaTable, Vec<Vec3>)> {
        let n = self.graph.free_vertex_count();
        let system = build_system(self.graph, rotations, self.weighting);
        self.normal.clear_values();
        let mut x = system.accumulate_normal(&mut self.normal);
        match &mut self.factor {
            Some(f) => f.refactor(&self.normal)?,
            None => self.factor = Some(SpdSolver::new(&self.normal)?),
        }
        self.factor.as_ref().expect("factored").solve_in_place(&mut x);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(PgoError::Conditioning("joint solve produced non-finite values".into()));
        }
        let block = |v: usize| Vec3::new(x[3 * v], x[3 * v + 1], x[3 * v + 2]);
        let deltas = DeltaTable::new((0..n).map(block).collect());
        let mut positions = vec![Vec3::zeros()];
        positions.extend((n..2 * n).map(block));
        Ok((deltas, positions))
    }

    /// Iterates from `initial`; final positions come from the closed-form
    /// recovery at the final rotations.
    pub fn run(&mut self, initial: Vec<Rotation>, opts: &SolverOptions) -> Result<(PoseEstimate, SolveReport)> {
        validate_options(opts)?;
        check_initial(self.graph, &initial)?;
        let started = Instant::now();
        let recovery = PositionSystem::new(self.graph)?;
        let mut rotations = initial;
        let initial_cost = pgo_cost(self.graph, &recovery.estimate(&rotations)?);

        let mut max_delta_history = Vec::new();
        let mut cost_history = Vec::new();
        let mut clamp_count = 0;
        let mut joint_positions;
        let (termination, estimate) = loop {
            let (deltas, positions) = self.step(&rotations)?;
            joint_positions = positions;
            let max_delta = deltas.max_norm();
            clamp_count += apply_corrections(&mut rotations, &deltas)?;
            let estimate = recovery.estimate(&rotations)?;
            max_delta_history.push(max_delta);
            cost_history.push(pgo_cost(self.graph, &estimate));
            if max_delta <= opts.tolerance {
                break (Termination::Tolerance, estimate);
            }
            if max_delta_history.len() >= opts.itr_max {
                break (Termination::ItrMax, estimate);
            }
        };

        let joint = PoseEstimate {
            rotations: estimate.rotations.clone(),
            positions: joint_positions,
        };
        let final_cost = *cost_history.last().expect("at least one iteration");
        if final_cost > initial_cost {
            log::warn!("joint solve raised the cost from {initial_cost} to {final_cost}");
        }
        let report = SolveReport {
            method: Method::Alg2,
            iterations: max_delta_history.len(),
            termination,
            max_delta_history,
            cost_history,
            clamp_count,
            initial_cost,
            final_cost,
            cost_regressed: final_cost > initial_cost,
            joint_position_cost: Some(pgo_cost(self.graph, &joint)),
            time_init_s: 0.0,
            time_solve_s: started.elapsed().as_secs_f64(),
        };
        Ok((estimate, report))
    }
}

/// Chordal initialization followed by the joint iterations.
pub fn alg2_solve(
    g: &PoseGraph,
    opts: &SolverOptions,
    weighting: StackedWeighting,
) -> Result<(PoseEstimate, SolveReport)> {
    let started = Instant::now();
    let initial = chordal_init(g)?;
    let time_init_s = started.elapsed().as_secs_f64();
    let (estimate, mut report) = JointSolver::new(g, weighting).run(initial, opts)?;
    report.time_init_s = time_init_s;
    Ok((estimate, report))
}
