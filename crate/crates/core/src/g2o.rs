//! Reading and writing pose graphs in the g2o SE3 text format.
//!
//! ```text
//! VERTEX_SE3:QUAT id x y z qx qy qz qw
//! EDGE_SE3:QUAT i j x y z qx qy qz qw  I11 I12 … I16 I22 … I66
//! ```
//!
//! g2o stores body-to-world poses and the relative transform `T_i⁻¹ T_j`.
//! The library works with world-to-body rotations, so a vertex quaternion `q`
//! becomes `R = R(q)ᵀ` and an edge quaternion becomes `Z = R(q)ᵀ`; translations
//! are taken as they are. Each 6×6 information matrix is reduced to the two
//! scalar weights of the cost.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Matrix6, SymmetricEigen};

use crate::error::{PgoError, Result};
use crate::graph::{relabel_and_anchor, LabeledEdge, PoseEstimate, PoseGraph};
use crate::so3::{Rotation, Vec3};

pub const VERTEX_TAG: &str = "VERTEX_SE3:QUAT";
pub const EDGE_TAG: &str = "EDGE_SE3:QUAT";

/// Weights are never smaller than this.
pub const MIN_WEIGHT: f64 = 1e-12;

/// How an information matrix becomes `(λ, ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightReduction {
    /// Mean of the translation diagonal for `λ`, of the rotation diagonal for `ω`.
    #[default]
    BlockMean,
    /// As `BlockMean`, except `ω` is the first rotation diagonal entry alone.
    FirstDiagonal,
}

/// Upper-triangle positions of the six diagonal entries.
const DIAGONAL: [usize; 6] = [0, 6, 11, 15, 18, 20];

fn mean3(a: f64, b: f64, c: f64) -> f64 {
    if a == b && b == c {
        a
    } else {
        (a + b + c) / 3.0
    }
}

impl WeightReduction {
    /// `(λ, ω)` from the 21 upper-triangular entries, before flooring.
    pub fn reduce(self, info: &[f64; 21]) -> (f64, f64) {
        let d = DIAGONAL.map(|k| info[k]);
        let lambda = mean3(d[0], d[1], d[2]);
        let omega = match self {
            WeightReduction::BlockMean => mean3(d[3], d[4], d[5]),
            WeightReduction::FirstDiagonal => d[3],
        };
        (lambda, omega)
    }
}

fn expand_info(info: &[f64; 21]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let mut k = 0;
    for r in 0..6 {
        for c in r..6 {
            m[(r, c)] = info[k];
            m[(c, r)] = info[k];
            k += 1;
        }
    }
    m
}

fn is_psd(info: &[f64; 21]) -> bool {
    let eig = SymmetricEigen::new(expand_info(info)).eigenvalues;
    let max = eig.amax();
    eig.min() >= -1e-9 * max.max(1.0)
}

/// A graph read from g2o text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedG2o {
    pub graph: PoseGraph,
    /// Vertex poses from the file; vertices without a record are at the identity.
    pub estimate: PoseEstimate,
    /// Lines with a tag other than the two SE3 records.
    pub skipped_lines: usize,
    /// Edges whose information matrix was not positive semidefinite.
    pub non_psd_edges: usize,
}

fn parse_numbers<const N: usize>(fields: &[&str], line: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        let v: f64 = f.parse().map_err(|_| PgoError::Parse {
            line,
            message: format!("`{f}` is not a number"),
        })?;
        *o = v;
        if !v.is_finite() {
            return Err(PgoError::Parse {
                line,
                message: format!("non-finite value `{f}`"),
            });
        }
    }
    Ok(out)
}

fn parse_id(field: &str, line: usize) -> Result<i64> {
    field.parse().map_err(|_| PgoError::Parse {
        line,
        message: format!("`{field}` is not an integer vertex id"),
    })
}

fn quaternion_transpose(q: &[f64], line: usize) -> Result<Rotation> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Err(PgoError::Parse {
            line,
            message: "zero quaternion".into(),
        });
    }
    Ok(Rotation::from_quaternion(q[0], q[1], q[2], q[3]).transpose())
}

fn check_arity(tag: &str, fields: &[&str], expected: usize, line: usize) -> Result<()> {
    if fields.len() != expected {
        return Err(PgoError::Parse {
            line,
            message: format!("{tag} expects {expected} values, found {}", fields.len()),
        });
    }
    Ok(())
}

pub fn parse_g2o(text: &str) -> Result<ParsedG2o> {
    read_g2o(text.as_bytes(), WeightReduction::default())
}

pub fn parse_g2o_with(text: &str, reduction: WeightReduction) -> Result<ParsedG2o> {
    read_g2o(text.as_bytes(), reduction)
}

pub fn read_g2o_file(path: impl AsRef<Path>, reduction: WeightReduction) -> Result<ParsedG2o> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| PgoError::Io(format!("{}: {e}", path.display())))?;
    read_g2o(file, reduction)
}

pub fn read_g2o(reader: impl Read, reduction: WeightReduction) -> Result<ParsedG2o> {
    let mut vertices: Vec<(i64, Rotation, Vec3)> = Vec::new();
    let mut edges = Vec::new();
    let mut skipped_lines = 0;
    let mut non_psd_edges = 0;

    for (index, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let tag = fields.next().expect("non-empty line");
        let rest: Vec<&str> = fields.collect();
        match tag {
            VERTEX_TAG => {
                check_arity(tag, &rest, 8, line_no)?;
                let id = parse_id(rest[0], line_no)?;
                let v: [f64; 7] = parse_numbers(&rest[1..], line_no)?;
                let r = quaternion_transpose(&v[3..], line_no)?;
                vertices.push((id, r, Vec3::new(v[0], v[1], v[2])));
            }
            EDGE_TAG => {
                check_arity(tag, &rest, 30, line_no)?;
                let from = parse_id(rest[0], line_no)?;
                let to = parse_id(rest[1], line_no)?;
                let v: [f64; 7] = parse_numbers(&rest[2..9], line_no)?;
                let info: [f64; 21] = parse_numbers(&rest[9..], line_no)?;
                if !is_psd(&info) {
                    non_psd_edges += 1;
                    log::warn!("line {line_no}: information matrix is not positive semidefinite");
                }
                let (lambda, omega) = reduction.reduce(&info);
                edges.push(LabeledEdge {
                    from,
                    to,
                    z: quaternion_transpose(&v[3..], line_no)?,
                    d: Vec3::new(v[0], v[1], v[2]),
                    omega: omega.max(MIN_WEIGHT),
                    lambda: lambda.max(MIN_WEIGHT),
                });
            }
            _ => skipped_lines += 1,
        }
    }
    if skipped_lines > 0 {
        log::warn!("skipped {skipped_lines} lines with unsupported tags");
    }

    let graph = relabel_and_anchor(vertices.iter().map(|v| v.0), edges)?;
    let mut estimate = PoseEstimate::identity(graph.vertex_count());
    for (label, r, p) in vertices {
        let v = graph
            .labels()
            .binary_search(&label)
            .expect("every vertex label is in the graph");
        estimate.rotations[v] = r;
        estimate.positions[v] = p;
    }
    Ok(ParsedG2o {
        graph,
        estimate,
        skipped_lines,
        non_psd_edges,
    })
}

/// Shortest round-tripping decimal, with `-0` printed as `0`.
fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

fn pose_fields(t: &Vec3, r_g2o: &Rotation) -> String {
    let q = r_g2o.to_quaternion();
    [t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
        .iter()
        .map(|&v| num(v))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes every vertex of `x` and every edge of `g`, labeled with the graph's
/// original vertex ids. Information matrices are diagonal `(λ, λ, λ, ω, ω, ω)`.
pub fn write_g2o(g: &PoseGraph, x: &PoseEstimate, out: &mut impl Write) -> Result<()> {
    if x.len() != g.vertex_count() {
        return Err(PgoError::InvalidOptions(format!(
            "estimate has {} poses for {} vertices",
            x.len(),
            g.vertex_count()
        )));
    }
    let labels = g.labels();
    for (v, (r, p)) in x.rotations.iter().zip(&x.positions).enumerate() {
        writeln!(out, "{VERTEX_TAG} {} {}", labels[v], pose_fields(p, &r.transpose()))?;
    }
    for e in g.edges() {
        let mut info = [0.0; 21];
        for (k, &slot) in DIAGONAL.iter().enumerate() {
            info[slot] = if k < 3 { e.lambda } else { e.omega };
        }
        let info: Vec<String> = info.iter().map(|&v| num(v)).collect();
        writeln!(
            out,
            "{EDGE_TAG} {} {} {} {}",
            labels[e.from],
            labels[e.to],
            pose_fields(&e.d, &e.z.transpose()),
            info.join(" ")
        )?;
    }
    Ok(())
}

pub fn write_g2o_file(path: impl AsRef<Path>, g: &PoseGraph, x: &PoseEstimate) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| PgoError::Io(format!("{}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    write_g2o(g, x, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn to_g2o_string(g: &PoseGraph, x: &PoseEstimate) -> String {
    let mut buf = Vec::new();
    write_g2o(g, x, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}
