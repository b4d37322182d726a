//! Three-state RyR channel gating ODE, one system per interface node.
//!
//! The state fractions (c1, o, c2) evolve as dq/dt = A(u) q + f(u) driven by
//! the local cytosolic calcium trace u, and the channel open probability is
//! P = 1 - c1 - c2. Each node advances by backward Euler with the trace
//! frozen at the previous step, which is equivalent to backward Euler on the
//! underlying four-state Markov chain and therefore keeps the state in the
//! simplex for any step size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConstants {
    pub ka_plus: f64,
    pub ka_minus: f64,
    pub kb_plus: f64,
    pub kb_minus: f64,
    pub kc_plus: f64,
    pub kc_minus: f64,
}

impl RateConstants {
    /// The Keizer-Levine RyR rate set used by every built-in experiment.
    pub fn keizer_levine() -> Self {
        Self {
            ka_plus: 1500.0,
            ka_minus: 28.8,
            kb_plus: 1500.0,
            kb_minus: 385.9,
            kc_plus: 1.75,
            kc_minus: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), GatingError> {
        let all = [
            self.ka_plus,
            self.ka_minus,
            self.kb_plus,
            self.kb_minus,
            self.kc_plus,
            self.kc_minus,
        ];
        if all.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(GatingError::InvalidRates);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub c1: f64,
    pub o: f64,
    pub c2: f64,
}

impl ChannelState {
    pub fn new(c1: f64, o: f64, c2: f64) -> Self {
        Self { c1, o, c2 }
    }

    pub fn sum(&self) -> f64 {
        self.c1 + self.o + self.c2
    }

    pub fn in_simplex(&self, tol: f64) -> bool {
        self.c1 >= -tol && self.o >= -tol && self.c2 >= -tol && self.sum() <= 1.0 + tol
    }
}

#[derive(Debug, Error)]
pub enum GatingError {
    #[error("gating rates must be positive and finite")]
    InvalidRates,
    #[error("initial gating state ({0:?}) is outside the simplex")]
    InitialStateOutsideSimplex(ChannelState),
    #[error("backward Euler system is singular at node {node} (det = {determinant:.3e})")]
    SingularStep { node: usize, determinant: f64 },
    #[error("gating step needs dt > 0 (got {0})")]
    InvalidStep(f64),
    #[error("trace length {got} does not match {expected} interface nodes")]
    TraceLength { got: usize, expected: usize },
}

/// Coefficient matrix A(u) and source f(u) of dq/dt = A q + f for a
/// nonnegative calcium value.
pub fn gating_matrix(u: f64, rates: &RateConstants) -> ([[f64; 3]; 3], [f64; 3]) {
    debug_assert!(u >= 0.0, "caller must clamp the trace at zero");
    let a = u.powi(4) * rates.ka_plus;
    let bp = u.powi(3) * rates.kb_plus;
    let matrix = [
        [-a - rates.ka_minus, -rates.ka_minus, -rates.ka_minus],
        [-bp, -bp - rates.kb_minus, -bp],
        [
            -rates.kc_plus,
            -rates.kc_plus,
            -rates.kc_plus - rates.kc_minus,
        ],
    ];
    let source = [rates.ka_minus, bp, rates.kc_plus];
    (matrix, source)
}

/// Open probability P = 1 - c1 - c2, clamped to [0, 1].
pub fn open_probability(state: &ChannelState) -> f64 {
    let p = 1.0 - state.c1 - state.c2;
    debug_assert!(
        (-1e-10..=1.0 + 1e-10).contains(&p),
        "open probability {p} required clamping beyond 1e-10"
    );
    p.clamp(0.0, 1.0)
}

/// One backward Euler step of a single channel: solves
/// (I - dt A(max(u, 0))) q_next = q + dt f by explicit 3x3 elimination.
pub fn step_channel(
    state: &ChannelState,
    u: f64,
    dt: f64,
    rates: &RateConstants,
) -> Result<ChannelState, GatingError> {
    if !(dt > 0.0) {
        return Err(GatingError::InvalidStep(dt));
    }
    let (a, f) = gating_matrix(u.max(0.0), rates);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = f64::from(u8::from(i == j)) - dt * a[i][j];
        }
    }
    let q = [state.c1, state.o, state.c2];
    let rhs = [q[0] + dt * f[0], q[1] + dt * f[1], q[2] + dt * f[2]];

    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det == 0.0 || !det.is_finite() {
        return Err(GatingError::SingularStep {
            node: 0,
            determinant: det,
        });
    }
    let solve_col = |col: usize| -> f64 {
        let mut mm = m;
        for row in 0..3 {
            mm[row][col] = rhs[row];
        }
        (mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
            - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
            + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]))
            / det
    };
    let mut next = ChannelState::new(solve_col(0), solve_col(1), solve_col(2));

    debug_assert!(
        next.in_simplex(1e-10),
        "gating state left the simplex: {next:?} (u = {u}, dt = {dt})"
    );
    next.c1 = next.c1.max(0.0);
    next.o = next.o.max(0.0);
    next.c2 = next.c2.max(0.0);
    let sum = next.sum();
    if sum > 1.0 {
        let scale = 1.0 / sum;
        next.c1 *= scale;
        next.o *= scale;
        next.c2 *= scale;
    }
    Ok(next)
}

/// Channel states for every interface node, in arc order.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingField {
    states: Vec<ChannelState>,
    rates: RateConstants,
}

impl GatingField {
    pub fn uniform(
        n: usize,
        initial: ChannelState,
        rates: RateConstants,
    ) -> Result<Self, GatingError> {
        rates.validate()?;
        if !initial.in_simplex(0.0) {
            return Err(GatingError::InitialStateOutsideSimplex(initial));
        }
        Ok(Self {
            states: vec![initial; n],
            rates,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    pub fn rates(&self) -> &RateConstants {
        &self.rates
    }

    /// Advance every node by one backward Euler step with its frozen trace.
    pub fn step(&mut self, u_trace: &[f64], dt: f64) -> Result<(), GatingError> {
        if u_trace.len() != self.states.len() {
            return Err(GatingError::TraceLength {
                got: u_trace.len(),
                expected: self.states.len(),
            });
        }
        for (node, (state, &u)) in self.states.iter_mut().zip(u_trace).enumerate() {
            *state = step_channel(state, u, dt, &self.rates).map_err(|e| match e {
                GatingError::SingularStep { determinant, .. } => {
                    GatingError::SingularStep { node, determinant }
                }
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn open_probabilities(&self) -> Vec<f64> {
        self.states.iter().map(open_probability).collect()
    }

    pub fn probability_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.states {
            let p = open_probability(s);
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }
}
