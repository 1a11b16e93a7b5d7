use serde::{Deserialize, Serialize};

/// Loop bounds shared by the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum number of linearize-and-solve iterations.
    pub itr_max: usize,
    /// Stop once the largest correction norm `max_i ‖δ_i‖` is at or below this value.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            itr_max: 10,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The largest correction fell to the tolerance.
    Tolerance,
    /// The iteration budget ran out.
    ItrMax,
    /// No iterations were run (chordal initialization only).
    Initialization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Chordal,
    Alg1,
    Alg2,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Chordal => "chordal",
            Method::Alg1 => "alg1",
            Method::Alg2 => "alg2",
        })
    }
}

/// What a solve did. Serializes to a flat JSON object; only the `time_*` fields
/// vary between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    pub termination: Termination,
    /// `max_i ‖δ̂_i‖` of each iteration, before clamping.
    pub max_delta_history: Vec<f64>,
    /// Full pose graph cost after each iteration.
    pub cost_history: Vec<f64>,
    /// Corrections that left the unit ball and were scaled back.
    pub clamp_count: usize,
    /// Cost at the chordal initialization.
    pub initial_cost: f64,
    /// Cost of the returned estimate.
    pub final_cost: f64,
    /// Set when the returned estimate costs more than the initialization.
    pub cost_regressed: bool,
    /// Cost using the positions solved jointly with the last rotation update
    /// (joint solver only) instead of the final position recovery.
    pub joint_position_cost: Option<f64>,
    pub time_init_s: f64,
    pub time_solve_s: f64,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Copy with the wall-clock fields zeroed, for comparing runs.
    pub fn without_timing(&self) -> SolveReport {
        SolveReport {
            time_init_s: 0.0,
            time_solve_s: 0.0,
            ..self.clone()
        }
    }
}
