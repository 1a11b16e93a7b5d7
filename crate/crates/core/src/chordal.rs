//! Chordal relaxation of rotation synchronization.
//!
//! Solves the unconstrained linear least-squares problem
//! `min Σ ω_k ‖Z_k X_i − X_j‖_F²` over 3×3 matrices with `X_0 = I`, then
//! projects every `X_i` onto SO(3).

use crate::error::{PgoError, Result};
use crate::graph::PoseGraph;
use crate::so3::{project_to_so3, Mat3, Rotation};
use crate::sparse::{SparseSymmetric, SpdSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChordalOptions {
    /// Use the edge rotation weights `ω_k`; when false every edge has weight 1.
    pub weighted: bool,
}

impl Default for ChordalOptions {
    fn default() -> Self {
        ChordalOptions { weighted: true }
    }
}

/// Weighted chordal initialization; the anchor rotation is exactly the identity.
pub fn chordal_init(g: &PoseGraph) -> Result<Vec<Rotation>> {
    chordal_init_with(g, ChordalOptions::default())
}

pub fn chordal_init_with(g: &PoseGraph, opts: ChordalOptions) -> Result<Vec<Rotation>> {
    let relaxed = chordal_relaxation(g, opts)?;
    relaxed
        .iter()
        .enumerate()
        .map(|(v, x)| {
            if v == 0 {
                return Ok(Rotation::identity());
            }
            project_to_so3(x).map_err(|e| match e {
                PgoError::Degenerate { sigma_min, .. } => PgoError::Degenerate {
                    sigma_min,
                    vertex: Some(v),
                },
                other => other,
            })
        })
        .collect()
}

/// The linear least-squares solution before projection, anchor included.
pub fn chordal_relaxation(g: &PoseGraph, opts: ChordalOptions) -> Result<Vec<Mat3>> {
    let n = g.free_vertex_count();
    let block = |v: usize| 3 * (v - 1);
    let weight = |omega: f64| if opts.weighted { omega } else { 1.0 };

    let pattern = g.edges().iter().filter(|e| e.from != 0 && e.to != 0).flat_map(|e| {
        let (bi, bj) = (block(e.from), block(e.to));
        (0..9).map(move |k| (bi + k / 3, bj + k % 3))
    });
    let mut normal = SparseSymmetric::with_pattern(3 * n, pattern);
    // right-hand side: one 3n-vector per column of X
    let mut rhs = vec![vec![0.0; 3 * n]; 3];

    for e in g.edges() {
        let w = weight(e.omega);
        let z = e.z.matrix();
        match (e.from, e.to) {
            (0, j) => {
                // ‖X_j − Z‖²
                let bj = block(j);
                for r in 0..3 {
                    normal.add(bj + r, bj + r, w);
                    for c in 0..3 {
                        rhs[c][bj + r] += w * z[(r, c)];
                    }
                }
            }
            (i, 0) => {
                // ‖Z X_i − I‖²
                let bi = block(i);
                for r in 0..3 {
                    normal.add(bi + r, bi + r, w);
                    for c in 0..3 {
                        rhs[c][bi + r] += w * z[(c, r)];
                    }
                }
            }
            (i, j) => {
                let (bi, bj) = (block(i), block(j));
                for r in 0..3 {
                    normal.add(bi + r, bi + r, w);
                    normal.add(bj + r, bj + r, w);
                    for s in 0..3 {
                        normal.add(bi + r, bj + s, -w * z[(s, r)]);
                    }
                }
            }
        }
    }

    let solver = SpdSolver::new(&normal)?;
    for column in rhs.iter_mut() {
        solver.solve_in_place(column);
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(Mat3::identity());
    for v in 1..=n {
        let b = block(v);
        out.push(Mat3::from_fn(|r, c| rhs[c][b + r]));
    }
    Ok(out)
}
