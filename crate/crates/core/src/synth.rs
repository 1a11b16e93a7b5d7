//! Synthetic pose graphs on a unit lattice, and measurement noise injection.
//!
//! All randomness comes from ChaCha20 seeded with [`SeedableRng::seed_from_u64`].
//! Each consumer draws from its own stream so results do not depend on
//! iteration order:
//!
//! | draws                              | stream            |
//! |------------------------------------|-------------------|
//! | ground-truth rotation of vertex `v` | `2⁶³ + v`         |
//! | start perturbation of vertex `v`    | `2⁶² + v`         |
//! | noise on edge `k`                   | `k`               |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::error::{PgoError, Result};
use crate::graph::{Edge, PoseEstimate, PoseGraph};
use crate::so3::{Rotation, Vec3};

const TRUTH_STREAM: u64 = 1 << 63;
const START_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `n` vertices along the x axis.
    Chain { n: usize },
    /// An `nx × ny × nz` block of the unit lattice.
    Grid3d { nx: usize, ny: usize, nz: usize },
}

impl Shape {
    fn dims(self) -> [usize; 3] {
        match self {
            Shape::Chain { n } => [n, 1, 1],
            Shape::Grid3d { nx, ny, nz } => [nx, ny, nz],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub shape: Shape,
    /// Add an edge for every lattice-adjacent pair not already joined by the path.
    pub loop_closures: bool,
    pub seed: u64,
}

/// A noise-free graph and the poses that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub graph: PoseGraph,
    pub truth: PoseEstimate,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
fn random_rotation(rng: &mut impl Rng) -> Rotation {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    Rotation::from_quaternion(q[0], q[1], q[2], q[3])
}

fn random_axis(rng: &mut impl Rng) -> Vec3 {
    let a: [f64; 3] = UnitSphere.sample(rng);
    Vec3::new(a[0], a[1], a[2])
}

/// Lattice points in serpentine order: x sweeps alternate direction along each
/// row, rows alternate along each layer, so consecutive points are adjacent.
fn serpentine(dims: [usize; 3]) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = dims;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for yi in 0..ny {
            let y = if z % 2 == 0 { yi } else { ny - 1 - yi };
            let row = z * ny + yi;
            for xi in 0..nx {
                let x = if row % 2 == 0 { xi } else { nx - 1 - xi };
                out.push([x, y, z]);
            }
        }
    }
    out
}

fn measurement(truth: &PoseEstimate, from: usize, to: usize) -> Edge {
    let (ri, rj) = (&truth.rotations[from], &truth.rotations[to]);
    Edge {
        from,
        to,
        z: rj * &ri.transpose(),
        d: ri.apply(&(truth.positions[to] - truth.positions[from])),
        omega: 1.0,
        lambda: 1.0,
    }
}

/// Builds a noise-free graph: vertices on the lattice numbered along a
/// serpentine path, odometry edges `(k, k+1)` first, then loop closures from
/// the lower to the higher id in lexicographic order.
pub fn generate(opts: &GenerateOptions) -> Result<Generated> {
    let dims = opts.shape.dims();
    let count: usize = dims.iter().product();
    if dims.contains(&0) || count < 2 {
        return Err(PgoError::InvalidOptions(format!(
            "lattice {}×{}×{} has {count} vertices; at least 2 are needed",
            dims[0], dims[1], dims[2]
        )));
    }
    let points = serpentine(dims);
    let id_of = |p: [usize; 3]| p[0] + dims[0] * (p[1] + dims[1] * p[2]);
    let mut vertex_at = vec![0; count];
    for (v, p) in points.iter().enumerate() {
        vertex_at[id_of(*p)] = v;
    }

    let origin = points[0].map(|c| c as f64);
    let positions = points
        .iter()
        .map(|p| Vec3::new(p[0] as f64 - origin[0], p[1] as f64 - origin[1], p[2] as f64 - origin[2]))
        .collect();
    let rotations = (0..count)
        .map(|v| match v {
            0 => Rotation::identity(),
            v => random_rotation(&mut stream_rng(opts.seed, TRUTH_STREAM | v as u64)),
        })
        .collect();
    let truth = PoseEstimate { rotations, positions };

    let mut edges: Vec<Edge> = (0..count - 1).map(|v| measurement(&truth, v, v + 1)).collect();
    if opts.loop_closures {
        let mut closures = Vec::new();
        for p in &points {
            for axis in 0..3 {
                let mut q = *p;
                q[axis] += 1;
                if q[axis] >= dims[axis] {
                    continue;
                }
                let (a, b) = (vertex_at[id_of(*p)], vertex_at[id_of(q)]);
                let (lo, hi) = (a.min(b), a.max(b));
                if hi != lo + 1 {
                    closures.push((lo, hi));
                }
            }
        }
        closures.sort_unstable();
        edges.extend(closures.into_iter().map(|(i, j)| measurement(&truth, i, j)));
    }
    let graph = PoseGraph::new(count, edges)?;
    Ok(Generated { graph, truth })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation of the rotation noise angle, in degrees.
    pub rot_sigma_deg: f64,
    /// Per-axis standard deviation of the translation noise.
    pub trans_sigma: f64,
    pub seed: u64,
}

/// Noise drawn for one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub axis: Vec3,
    /// Signed rotation angle in radians.
    pub angle: f64,
    pub translation: Vec3,
}

impl NoiseDraw {
    pub fn rotation(&self) -> Rotation {
        Rotation::from_axis_angle(&self.axis, self.angle)
    }
}

fn validate_noise(spec: &NoiseSpec) -> Result<()> {
    for (name, v) in [("rot_sigma_deg", spec.rot_sigma_deg), ("trans_sigma", spec.trans_sigma)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(PgoError::InvalidOptions(format!("{name} must be finite and ≥ 0, got {v}")));
        }
    }
    Ok(())
}

/// The draws [`perturb`] applies to the first `edge_count` edges.
pub fn noise_draws(spec: &NoiseSpec, edge_count: usize) -> Result<Vec<NoiseDraw>> {
    validate_noise(spec)?;
    let sigma = spec.rot_sigma_deg.to_radians();
    Ok((0..edge_count)
        .map(|k| {
            let mut rng = stream_rng(spec.seed, k as u64);
            let axis = random_axis(&mut rng);
            let angle = sigma * rng.sample::<f64, _>(StandardNormal);
            let translation = Vec3::from_fn(|_, _| spec.trans_sigma * rng.sample::<f64, _>(StandardNormal));
            NoiseDraw { axis, angle, translation }
        })
        .collect())
}

/// Right-multiplies every `Z` by a random rotation and adds Gaussian noise to
/// every `d`. Topology, weights and edge order are unchanged.
pub fn perturb(g: &PoseGraph, spec: &NoiseSpec) -> Result<PoseGraph> {
    let draws = noise_draws(spec, g.edge_count())?;
    let edges = g
        .edges()
        .iter()
        .zip(&draws)
        .map(|(e, n)| {
            let mut e = e.clone();
            if n.angle != 0.0 {
                e.z = e.z * n.rotation();
            }
            if spec.trans_sigma > 0.0 {
                e.d += n.translation;
            }
            e
        })
        .collect();
    g.with_edges(edges)
}

/// Truth with every free vertex's rotation turned by a uniformly random angle
/// in `[0, max_angle_deg]` about a random axis. Positions are copied.
pub fn random_start(truth: &PoseEstimate, max_angle_deg: f64, seed: u64) -> Result<PoseEstimate> {
    if !(max_angle_deg >= 0.0 && max_angle_deg.is_finite()) {
        return Err(PgoError::InvalidOptions(format!(
            "max_angle_deg must be finite and ≥ 0, got {max_angle_deg}"
        )));
    }
    let max = max_angle_deg.to_radians();
    let rotations = truth
        .rotations
        .iter()
        .enumerate()
        .map(|(v, r)| {
            if v == 0 {
                return *r;
            }
            let mut rng = stream_rng(seed, START_STREAM | v as u64);
            let axis = random_axis(&mut rng);
            let angle = max * rng.random::<f64>();
            *r * Rotation::from_axis_angle(&axis, angle)
        })
        .collect();
    Ok(PoseEstimate {
        rotations,
        positions: truth.positions.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_reduced_incidence, pgo_cost};
    use std::collections::BTreeSet;

    fn grid(nx: usize, ny: usize, nz: usize, seed: u64) -> Generated {
        generate(&GenerateOptions {
            shape: Shape::Grid3d { nx, ny, nz },
            loop_closures: true,
            seed,
        })
        .unwrap()
    }

    /// Adjacent lattice pairs counted directly from the dimensions.
    fn lattice_adjacencies(nx: usize, ny: usize, nz: usize) -> usize {
        (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)
    }

    #[test]
    fn grid_edge_counts() {
        for (nx, ny, nz) in [(2, 2, 2), (3, 3, 3), (4, 2, 3), (1, 5, 2)] {
            let g = grid(nx, ny, nz, 1);
            assert_eq!(g.graph.vertex_count(), nx * ny * nz);
            assert_eq!(g.graph.edge_count(), lattice_adjacencies(nx, ny, nz));
        }
        assert_eq!(grid(2, 2, 2, 0).graph.edge_count(), 12);
    }

    #[test]
    fn edges_join_unit_neighbours_once() {
        let g = grid(3, 4, 2, 9);
        let mut seen = BTreeSet::new();
        for (k, e) in g.graph.edges().iter().enumerate() {
            let step = g.truth.positions[e.to] - g.truth.positions[e.from];
            assert!((step.norm() - 1.0).abs() < 1e-15);
            assert!(seen.insert((e.from.min(e.to), e.from.max(e.to))));
            if k < g.graph.vertex_count() - 1 {
                assert_eq!((e.from, e.to), (k, k + 1));
            } else {
                assert!(e.from < e.to);
            }
        }
    }

    #[test]
    fn chain_is_a_path() {
        let g = generate(&GenerateOptions {
            shape: Shape::Chain { n: 3 },
            loop_closures: true,
            seed: 4,
        })
        .unwrap();
        assert_eq!(g.graph.edge_count(), 2);
        let a = build_reduced_incidence(&g.graph).to_dense();
        assert_eq!(a, nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 1.0]));
        assert!(generate(&GenerateOptions {
            shape: Shape::Chain { n: 1 },
            loop_closures: false,
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn truth_is_anchored_and_consistent() {
        let g = grid(3, 3, 2, 17);
        assert_eq!(g.truth.rotations[0], Rotation::identity());
        assert_eq!(g.truth.positions[0], Vec3::zeros());
        assert!(pgo_cost(&g.graph, &g.truth) <= 1e-18 * g.graph.edge_count() as f64);
        assert_ne!(g.truth.rotations[1], Rotation::identity());
    }

    #[test]
    fn deterministic() {
        assert_eq!(grid(2, 3, 2, 5), grid(2, 3, 2, 5));
        assert_ne!(grid(2, 3, 2, 5).truth, grid(2, 3, 2, 6).truth);
        let g = grid(2, 2, 2, 5).graph;
        let spec = NoiseSpec {
            rot_sigma_deg: 10.0,
            trans_sigma: 0.1,
            seed: 3,
        };
        assert_eq!(perturb(&g, &spec).unwrap(), perturb(&g, &spec).unwrap());
    }

    #[test]
    fn zero_noise_is_identity() {
        let g = grid(2, 2, 2, 5).graph;
        let spec = NoiseSpec {
            rot_sigma_deg: 0.0,
            trans_sigma: 0.0,
            seed: 77,
        };
        assert_eq!(perturb(&g, &spec).unwrap(), g);
    }

    #[test]
    fn perturb_preserves_structure() {
        let g = grid(3, 2, 2, 5).graph;
        let noisy = perturb(
            &g,
            &NoiseSpec {
                rot_sigma_deg: 20.0,
                trans_sigma: 0.5,
                seed: 1,
            },
        )
        .unwrap();
        assert!(noisy.same_topology(&g));
        for (a, b) in noisy.edges().iter().zip(g.edges()) {
            assert_eq!((a.omega, a.lambda), (b.omega, b.lambda));
            assert_ne!(a.z, b.z);
            assert_ne!(a.d, b.d);
        }
    }

    #[test]
    fn noise_angle_spread() {
        let spec = NoiseSpec {
            rot_sigma_deg: 50.0,
            trans_sigma: 0.0,
            seed: 2024,
        };
        let draws = noise_draws(&spec, 10_000).unwrap();
        let n = draws.len() as f64;
        let mean = draws.iter().map(|d| d.angle).sum::<f64>() / n;
        let var = draws.iter().map(|d| (d.angle - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std_deg = var.sqrt().to_degrees();
        assert!((std_deg - 50.0).abs() < 1.0, "sample std {std_deg}");
    }

    #[test]
    fn random_start_stays_within_bound() {
        let g = grid(2, 2, 2, 5);
        let start = random_start(&g.truth, 15.0, 8).unwrap();
        assert_eq!(start.rotations[0], g.truth.rotations[0]);
        for (s, t) in start.rotations.iter().zip(&g.truth.rotations).skip(1) {
            let angle = (s.transpose() * *t).angle();
            assert!(angle <= 15f64.to_radians() + 1e-12);
            assert!(angle > 0.0);
        }
    }
}
