//! Random graphs and dense least-squares oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pgo_rls::{Edge, PoseGraph, Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut impl Rng) -> Rotation {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    Rotation::from_quaternion(q[0], q[1], q[2], q[3])
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Vector uniformly inside the ball of radius `r`.
pub fn random_in_ball(rng: &mut impl Rng, r: f64) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            return v * r;
        }
    }
}

/// Connected graph: a random spanning tree plus `extra` random edges, with
/// random measurements and weights in `[0.5, 3)`.
pub fn random_graph(rng: &mut impl Rng, vertices: usize, extra: usize) -> PoseGraph {
    let mut pairs = Vec::new();
    for v in 1..vertices {
        let u = rng.random_range(0..v);
        pairs.push(if rng.random::<bool>() { (u, v) } else { (v, u) });
    }
    while pairs.len() < vertices - 1 + extra {
        let a = rng.random_range(0..vertices);
        let b = rng.random_range(0..vertices);
        if a != b {
            pairs.push((a, b));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(from, to)| Edge {
            from,
            to,
            z: random_rotation(rng),
            d: random_vec(rng, 1.0),
            omega: rng.random_range(0.5..3.0),
            lambda: rng.random_range(0.5..3.0),
        })
        .collect();
    PoseGraph::new(vertices, edges).unwrap()
}

pub fn random_rotations(rng: &mut impl Rng, count: usize) -> Vec<Rotation> {
    let mut r: Vec<Rotation> = (0..count).map(|_| random_rotation(rng)).collect();
    r[0] = Rotation::identity();
    r
}

/// Reduced incidence matrix assembled straight from the edge list.
pub fn dense_incidence(g: &PoseGraph) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(g.edge_count(), g.free_vertex_count());
    for (k, e) in g.edges().iter().enumerate() {
        if e.to > 0 {
            a[(k, e.to - 1)] += 1.0;
        }
        if e.from > 0 {
            a[(k, e.from - 1)] -= 1.0;
        }
    }
    a
}

/// `argmin_X Σ_k w_k ‖(A X)_k − Y_k‖²` by SVD of the row-scaled system.
pub fn weighted_lstsq(a: &DMatrix<f64>, w: &[f64], y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sa = a.clone();
    let mut sy = y.clone();
    for (k, wk) in w.iter().enumerate() {
        let s = wk.sqrt();
        sa.row_mut(k).scale_mut(s);
        sy.row_mut(k).scale_mut(s);
    }
    sa.svd(true, true).solve(&sy, 1e-14).unwrap()
}

pub fn rows_to_matrix(rows: &[Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c])
}

/// Skew-vector of `M`, written out entrywise.
pub fn skew_vector(m: &nalgebra::Matrix3<f64>) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Minimizer `[δ; p]` of the linearized joint cost
/// `Σ 2ω‖δ_j − δ_i − b‖² + λ‖p_j − p_i + u × δ_i − u‖²`, `u = R̂_iᵀ d`,
/// from the stacked square-root-weighted Jacobian solved by SVD.
pub fn dense_joint_minimizer(g: &PoseGraph, rotations: &[Rotation]) -> DVector<f64> {
    let n = g.free_vertex_count();
    let m = g.edge_count();
    let mut j = DMatrix::zeros(6 * m, 6 * n);
    let mut r = DVector::zeros(6 * m);
    for (k, e) in g.edges().iter().enumerate() {
        let ri = rotations[e.from].matrix();
        let rj = rotations[e.to].matrix();
        let b = skew_vector(&(nalgebra::Matrix3::identity() - rj.transpose() * e.z.matrix() * ri));
        let u = ri.transpose() * e.d;
        let sr = (2.0 * e.omega).sqrt();
        let st = e.lambda.sqrt();
        for a in 0..3 {
            let row = 6 * k + a;
            if e.to > 0 {
                j[(row, 3 * (e.to - 1) + a)] = sr;
                j[(row + 3, 3 * n + 3 * (e.to - 1) + a)] = st;
            }
            if e.from > 0 {
                j[(row, 3 * (e.from - 1) + a)] = -sr;
                j[(row + 3, 3 * n + 3 * (e.from - 1) + a)] = -st;
                let unit = Vec3::from_fn(|c, _| if c == a { 1.0 } else { 0.0 });
                let col = u.cross(&unit);
                for s in 0..3 {
                    j[(6 * k + 3 + s, 3 * (e.from - 1) + a)] = st * col[s];
                }
            }
            r[row] = sr * b[a];
            r[row + 3] = st * u[a];
        }
    }
    j.svd(true, true).solve(&r, 1e-14).unwrap()
}

/// Largest entrywise difference relative to the largest oracle entry.
pub fn relative_error(found: &[f64], oracle: &[f64]) -> f64 {
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    found
        .iter()
        .zip(oracle)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

pub fn flatten(rows: &[Vec3]) -> Vec<f64> {
    rows.iter().flat_map(|v| v.iter().copied()).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
