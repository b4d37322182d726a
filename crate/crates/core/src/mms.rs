//! Manufactured-solution verification: closed-form exact fields with
//! matching forcings and boundary data, time-averaged error norms, and the
//! convergence study driving the full solver across a mesh family.
//!
//! Two cases ship: case 1 couples the two calcium fields through the gated
//! RyR term on the interface; case 2 adds the buffer and a SERCA-like
//! saturating interface term. Boundary data contains the open probability of
//! the *exact* trace, advanced by the same backward Euler gating as the
//! solver so both sides share one definition of P.

use std::f64::consts::PI;

use thiserror::Error;

use crate::gating::{ChannelState, GatingError, GatingField, RateConstants};
use crate::mesh::Mesh2D;
use crate::stepper::{
    BoundarySample, Diffusion, FieldState, Geometry, Model, RunOutcome, SimError, VolumeSample,
};

#[derive(Debug, Error)]
pub enum MmsError {
    #[error("unknown manufactured example {0}; known ids: 1, 2")]
    UnknownExample(u8),
}

/// Closed-form exact solution bundle for one manufactured case.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedCase {
    pub id: u8,
    pub has_buffer: bool,
    pub t_end: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    pub rates: RateConstants,
    pub gating_init: ChannelState,
}

impl ManufacturedCase {
    pub fn example(id: u8) -> Result<Self, MmsError> {
        if id != 1 && id != 2 {
            return Err(MmsError::UnknownExample(id));
        }
        Ok(Self {
            id,
            has_buffer: id == 2,
            t_end: 1.3,
            r_inner: 1.0,
            r_outer: 2.0,
            rates: RateConstants::keizer_levine(),
            gating_init: ChannelState::new(0.5, 0.0, 0.5),
        })
    }

    pub fn u(&self, x: f64, y: f64, t: f64) -> f64 {
        ((x * x + y * y) / 4.0 + t).exp() / 10.0
    }

    pub fn grad_u(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let u = self.u(x, y, t);
        [u * x / 2.0, u * y / 2.0]
    }

    pub fn ue(&self, x: f64, y: f64, t: f64) -> f64 {
        match self.id {
            1 => (x + y).exp() * (t.sin() + 2.0) / 8.0,
            _ => (x + y).exp() * (t.sin() + 2.0) / 16.0 + 1.0,
        }
    }

    pub fn grad_ue(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let g = match self.id {
            1 => self.ue(x, y, t),
            _ => self.ue(x, y, t) - 1.0,
        };
        [g, g]
    }

    pub fn b(&self, x: f64, y: f64, t: f64) -> f64 {
        debug_assert!(self.has_buffer);
        (x * y * t / 16.0).exp()
    }

    pub fn grad_b(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let b = self.b(x, y, t);
        [b * y * t / 16.0, b * x * t / 16.0]
    }

    /// Volume forcing of the u equation (includes the +b*u compensation for
    /// the explicit reaction term in case 2).
    pub fn f_u(&self, x: f64, y: f64, t: f64) -> f64 {
        let base = -self.u(x, y, t) * (x * x + y * y) / 4.0;
        match self.id {
            1 => base,
            _ => base + self.b(x, y, t) * self.u(x, y, t),
        }
    }

    pub fn f_b(&self, x: f64, y: f64, t: f64) -> f64 {
        debug_assert!(self.has_buffer);
        let b = self.b(x, y, t);
        -b / 16.0 * (-x * y + t * t * (x * x + y * y) / 16.0) + b * self.u(x, y, t)
    }

    pub fn f_e(&self, x: f64, y: f64, t: f64) -> f64 {
        let shape = (x + y).exp() * (t.cos() - 2.0 * (t.sin() + 2.0));
        match self.id {
            1 => shape / 8.0,
            _ => shape / 16.0,
        }
    }

    /// Normal derivative data of u (outer and interface smooth parts share
    /// one formula; the normal decides which boundary it serves).
    pub fn data_u(&self, x: f64, y: f64, nx: f64, ny: f64, t: f64) -> f64 {
        let u = self.u(x, y, t);
        (nx * x + ny * y) * u / 2.0
    }

    pub fn data_b(&self, x: f64, y: f64, nx: f64, ny: f64, t: f64) -> f64 {
        let b = self.b(x, y, t);
        (nx * y + ny * x) * b * t / 16.0
    }

    pub fn data_ue(&self, x: f64, y: f64, nx: f64, ny: f64, t: f64) -> f64 {
        let g = match self.id {
            1 => self.ue(x, y, t),
            _ => self.ue(x, y, t) - 1.0,
        };
        (nx + ny) * g
    }

    /// Saturating SERCA-like interface coupling of case 2.
    pub fn serca_like(&self, u: f64, ue: f64) -> f64 {
        u / ((1.0 + u) * ue)
    }
}

/// The manufactured problem as seen by the stepper. Keeps a second gating
/// field fed with the exact trace; its open probability enters the boundary
/// data through the `p_aux` channel.
pub struct MmsModel {
    case: ManufacturedCase,
    iface_coords: Vec<[f64; 2]>,
    exact_gating: GatingField,
    aux_p: Vec<f64>,
}

impl MmsModel {
    pub fn new(case: ManufacturedCase, geometry: &Geometry) -> Result<Self, GatingError> {
        let iface_coords = geometry.interface_coords();
        let exact_gating = GatingField::uniform(iface_coords.len(), case.gating_init, case.rates)?;
        let aux_p = exact_gating.open_probabilities();
        Ok(Self {
            case,
            iface_coords,
            exact_gating,
            aux_p,
        })
    }

    pub fn case(&self) -> &ManufacturedCase {
        &self.case
    }
}

impl Model for MmsModel {
    fn source_u(&self, s: &VolumeSample) -> f64 {
        let forcing = self.case.f_u(s.x, s.y, s.t);
        if self.case.has_buffer {
            forcing - s.b * s.u
        } else {
            forcing
        }
    }

    fn source_b(&self, s: &VolumeSample) -> f64 {
        self.case.f_b(s.x, s.y, s.t) - s.b * s.u
    }

    fn source_e(&self, s: &VolumeSample) -> f64 {
        self.case.f_e(s.x, s.y, s.t)
    }

    fn outer_flux_u(&self, s: &BoundarySample) -> f64 {
        self.case.data_u(s.x, s.y, s.nx, s.ny, s.t)
    }

    fn outer_flux_b(&self, s: &BoundarySample) -> f64 {
        self.case.data_b(s.x, s.y, s.nx, s.ny, s.t)
    }

    fn iface_flux_b(&self, s: &BoundarySample) -> f64 {
        self.case.data_b(s.x, s.y, s.nx, s.ny, s.t)
    }

    fn iface_flux_u(&self, s: &BoundarySample) -> f64 {
        let c = &self.case;
        let u_ex = c.u(s.x, s.y, s.t);
        let ue_ex = c.ue(s.x, s.y, s.t);
        // Boundary data: exact normal derivative minus the exact coupling
        // terms; the scheme adds the coupling back with numerical arguments.
        let mut flux =
            s.p * (s.ue - s.u) + c.data_u(s.x, s.y, s.nx, s.ny, s.t) - s.p_aux * (ue_ex - u_ex);
        if c.has_buffer {
            flux += -c.serca_like(s.u, s.ue) + c.serca_like(u_ex, ue_ex);
        }
        flux
    }

    fn iface_flux_e(&self, s: &BoundarySample) -> f64 {
        let c = &self.case;
        let u_ex = c.u(s.x, s.y, s.t);
        let ue_ex = c.ue(s.x, s.y, s.t);
        let mut flux =
            s.p * (s.u - s.ue) + c.data_ue(s.x, s.y, s.nx, s.ny, s.t) + s.p_aux * (ue_ex - u_ex);
        if c.has_buffer {
            flux += c.serca_like(s.u, s.ue) - c.serca_like(u_ex, ue_ex);
        }
        flux
    }

    fn has_cytosol_sources(&self) -> bool {
        true
    }

    fn has_er_source(&self) -> bool {
        true
    }

    fn has_buffer_boundary_data(&self) -> bool {
        self.case.has_buffer
    }

    fn advance_aux(&mut self, t: f64, dt: f64) -> Result<(), GatingError> {
        let trace: Vec<f64> = self
            .iface_coords
            .iter()
            .map(|&[x, y]| self.case.u(x, y, t))
            .collect();
        self.exact_gating.step(&trace, dt)?;
        self.aux_p = self.exact_gating.open_probabilities();
        Ok(())
    }

    fn aux_interface(&self) -> Option<&[f64]> {
        Some(&self.aux_p)
    }
}

/// L2 and H1-seminorm of `exact - nodal interpolant` at one time, using the
/// degree-2 midpoint rule per element.
pub fn field_error_at(
    mesh: &Mesh2D,
    nodal: &[f64],
    exact: impl Fn(f64, f64) -> f64,
    exact_grad: impl Fn(f64, f64) -> [f64; 2],
) -> (f64, f64) {
    let rule = crate::fem::triangle_midpoint_rule();
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.signed_area(t);
        let p = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        let v = [nodal[tri[0]], nodal[tri[1]], nodal[tri[2]]];
        // Constant P1 gradient of the nodal field on this element.
        let inv2a = 1.0 / (2.0 * area);
        let gx =
            (v[0] * (p[1][1] - p[2][1]) + v[1] * (p[2][1] - p[0][1]) + v[2] * (p[0][1] - p[1][1]))
                * inv2a;
        let gy =
            (v[0] * (p[2][0] - p[1][0]) + v[1] * (p[0][0] - p[2][0]) + v[2] * (p[1][0] - p[0][0]))
                * inv2a;
        for (bary, w) in rule.points.into_iter().zip(rule.weights) {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let vh = bary[0] * v[0] + bary[1] * v[1] + bary[2] * v[2];
            let e = exact(x, y) - vh;
            let ge = exact_grad(x, y);
            let (ex, ey) = (ge[0] - gx, ge[1] - gy);
            let scaled = 2.0 * area * w;
            l2 += scaled * e * e;
            h1 += scaled * (ex * ex + ey * ey);
        }
    }
    (l2.sqrt(), h1.sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FieldErrors {
    pub l2: f64,
    pub h1_semi: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CaseErrors {
    pub u: FieldErrors,
    pub b: Option<FieldErrors>,
    pub ue: FieldErrors,
}

/// Stored per-step fields of one run (steps 1..=N), for the trajectory-based
/// error norm entry point.
#[derive(Debug, Clone, Default)]
pub struct RunTrajectory {
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub ue: Vec<Vec<f64>>,
}

/// Time-averaged error norms of a recorded trajectory: mean over steps of
/// the per-step norms.
pub fn error_norms(
    geometry: &Geometry,
    trajectory: &RunTrajectory,
    case: &ManufacturedCase,
) -> CaseErrors {
    let n = trajectory.times.len();
    assert!(n > 0, "empty trajectory");
    let mut acc = ErrorAccumulator::new(case.has_buffer);
    for (i, &t) in trajectory.times.iter().enumerate() {
        acc.add_step(
            geometry,
            t,
            &trajectory.u[i],
            (!trajectory.b.is_empty()).then(|| trajectory.b[i].as_slice()),
            &trajectory.ue[i],
            case,
        );
    }
    acc.finish()
}

/// Accumulates per-step error norms during a run.
pub struct ErrorAccumulator {
    steps: usize,
    u: FieldErrors,
    b: Option<FieldErrors>,
    ue: FieldErrors,
}

impl ErrorAccumulator {
    pub fn new(has_buffer: bool) -> Self {
        Self {
            steps: 0,
            u: FieldErrors::default(),
            b: has_buffer.then(FieldErrors::default),
            ue: FieldErrors::default(),
        }
    }

    pub fn add_step(
        &mut self,
        geometry: &Geometry,
        t: f64,
        u: &[f64],
        b: Option<&[f64]>,
        ue: &[f64],
        case: &ManufacturedCase,
    ) {
        let (l2, h1) = field_error_at(
            &geometry.cytosol,
            u,
            |x, y| case.u(x, y, t),
            |x, y| case.grad_u(x, y, t),
        );
        self.u.l2 += l2;
        self.u.h1_semi += h1;
        if let (Some(acc), Some(b)) = (self.b.as_mut(), b) {
            let (l2, h1) = field_error_at(
                &geometry.cytosol,
                b,
                |x, y| case.b(x, y, t),
                |x, y| case.grad_b(x, y, t),
            );
            acc.l2 += l2;
            acc.h1_semi += h1;
        }
        let (l2, h1) = field_error_at(
            &geometry.er,
            ue,
            |x, y| case.ue(x, y, t),
            |x, y| case.grad_ue(x, y, t),
        );
        self.ue.l2 += l2;
        self.ue.h1_semi += h1;
        self.steps += 1;
    }

    pub fn finish(self) -> CaseErrors {
        let n = self.steps.max(1) as f64;
        let avg = |f: FieldErrors| FieldErrors {
            l2: f.l2 / n,
            h1_semi: f.h1_semi / n,
        };
        CaseErrors {
            u: avg(self.u),
            b: self.b.map(avg),
            ue: avg(self.ue),
        }
    }
}

/// Time step of the refinement family: dt = (32 T / (5 pi^2)) h^2.
pub fn dt_for(h: f64, t_end: f64) -> f64 {
    32.0 * t_end / (5.0 * PI * PI) * h * h
}

/// Observed order between two consecutive levels of a halving family.
pub fn fitted_rate(coarse_error: f64, fine_error: f64) -> f64 {
    (coarse_error / fine_error).log2()
}

#[derive(Debug, Clone)]
pub struct LevelErrors {
    pub h: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// (field name, errors); names are "u", "b", "u_e".
    pub fields: Vec<(&'static str, FieldErrors)>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub example: u8,
    pub levels: Vec<LevelErrors>,
}

impl ConvergenceReport {
    /// Rates per field between level `i-1` and `i`.
    pub fn rates(&self, field: &str) -> Vec<(f64, f64)> {
        let series: Vec<&FieldErrors> = self
            .levels
            .iter()
            .filter_map(|l| l.fields.iter().find(|(n, _)| *n == field).map(|(_, e)| e))
            .collect();
        series
            .windows(2)
            .map(|w| {
                (
                    fitted_rate(w[0].l2, w[1].l2),
                    fitted_rate(w[0].h1_semi, w[1].h1_semi),
                )
            })
            .collect()
    }

    pub fn field_names(&self) -> Vec<&'static str> {
        self.levels
            .first()
            .map(|l| l.fields.iter().map(|(n, _)| *n).collect())
            .unwrap_or_default()
    }

    /// CSV with columns field,h,dt,err_L2,err_H1semi,rate_L2,rate_H1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,h,dt,err_L2,err_H1semi,rate_L2,rate_H1\n");
        for name in self.field_names() {
            let rates = self.rates(name);
            for (i, level) in self.levels.iter().enumerate() {
                let errors = level
                    .fields
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, e)| e)
                    .unwrap();
                let (r2, r1) = if i == 0 {
                    (String::new(), String::new())
                } else {
                    (
                        format!("{:.4}", rates[i - 1].0),
                        format!("{:.4}", rates[i - 1].1),
                    )
                };
                out.push_str(&format!(
                    "{name},{},{},{},{},{r2},{r1}\n",
                    crate::fmt_full(level.h),
                    crate::fmt_full(level.dt),
                    crate::fmt_full(errors.l2),
                    crate::fmt_full(errors.h1_semi),
                ));
            }
        }
        out
    }

    /// Human-readable aligned table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("manufactured case {}\n", self.example));
        out.push_str(&format!(
            "{:<5} {:>12} {:>12} {:>12} {:>8} {:>12} {:>8}\n",
            "field", "h", "dt", "err_L2", "rate", "err_H1semi", "rate"
        ));
        for name in self.field_names() {
            let rates = self.rates(name);
            for (i, level) in self.levels.iter().enumerate() {
                let errors = level
                    .fields
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, e)| e)
                    .unwrap();
                let (r2, r1) = if i == 0 {
                    ("-".to_string(), "-".to_string())
                } else {
                    (
                        format!("{:.2}", rates[i - 1].0),
                        format!("{:.2}", rates[i - 1].1),
                    )
                };
                out.push_str(&format!(
                    "{:<5} {:>12.6e} {:>12.6e} {:>12.6e} {:>8} {:>12.6e} {:>8}\n",
                    name, level.h, level.dt, errors.l2, r2, errors.h1_semi, r1
                ));
            }
        }
        out
    }
}

/// Run one manufactured case at one mesh size and return its time-averaged
/// errors.
pub fn run_level(case: &ManufacturedCase, h: f64) -> Result<LevelErrors, SimError> {
    let geometry = Geometry::generate(case.r_inner, case.r_outer, h)?;
    let dt_nominal = dt_for(h, case.t_end);
    let n_steps = (case.t_end / dt_nominal).round().max(1.0) as usize;
    let dt = case.t_end / n_steps as f64;

    let b_init = |x: f64, y: f64| case.b(x, y, 0.0);
    let initial = FieldState::from_fns(
        &geometry,
        |x, y| case.u(x, y, 0.0),
        case.has_buffer
            .then_some(&b_init as &dyn Fn(f64, f64) -> f64),
        |x, y| case.ue(x, y, 0.0),
        case.gating_init,
        case.rates,
    )?;
    let model = MmsModel::new(*case, &geometry)?;
    let diffusion = Diffusion {
        d_c: 1.0,
        d_b: case.has_buffer.then_some(1.0),
        d_e: 1.0,
    };
    let mut sim = crate::stepper::Simulation::new(geometry, diffusion, dt, initial, model)?;
    let mut acc = ErrorAccumulator::new(case.has_buffer);
    let case_copy = *case;
    let summary = sim.run(n_steps, |geometry, state, _| {
        acc.add_step(
            geometry,
            state.t,
            &state.u,
            state.b.as_deref(),
            &state.ue,
            &case_copy,
        );
    })?;
    if let RunOutcome::Unstable { step, time, reason } = summary.outcome {
        return Err(SimError::Unstable { step, time, reason });
    }
    let errors = acc.finish();
    let mut fields = vec![("u", errors.u)];
    if let Some(b) = errors.b {
        fields.push(("b", b));
    }
    fields.push(("u_e", errors.ue));
    Ok(LevelErrors {
        h,
        dt,
        n_steps,
        fields,
    })
}

/// Full convergence study over a strictly refining list of mesh sizes.
pub fn convergence_study(example: u8, hs: &[f64]) -> Result<ConvergenceReport, SimError> {
    let case = ManufacturedCase::example(example).map_err(|e| SimError::Config(e.to_string()))?;
    if hs.len() < 2 {
        return Err(SimError::Config(
            "need at least two levels to fit a rate".into(),
        ));
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(SimError::Config(
            "levels must be strictly decreasing in h".into(),
        ));
    }
    let mut levels = Vec::with_capacity(hs.len());
    for &h in hs {
        levels.push(run_level(&case, h)?);
    }
    Ok(ConvergenceReport { example, levels })
}

/// The mesh family pi/8, pi/16, ... used by the published study.
pub fn standard_levels(count: usize) -> Vec<f64> {
    (0..count).map(|k| PI / 8.0 / (1u32 << k) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_geometry;

    #[test]
    fn exact_values_at_origin() {
        let c = ManufacturedCase::example(1).unwrap();
        assert!((c.u(0.0, 0.0, 0.0) - 0.1).abs() < 1e-15);
        assert!((c.ue(0.0, 0.0, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unknown_example_rejected() {
        assert!(ManufacturedCase::example(3).is_err());
    }

    #[test]
    fn synthetic_rates() {
        assert!((fitted_rate(0.04, 0.01) - 2.0).abs() < 1e-12);
        assert!((fitted_rate(0.04, 0.02) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dt_family_hits_t_end_exactly() {
        // N = T / dt is an integer for the pi/8 halving family.
        for h in standard_levels(4) {
            let n = 1.3 / dt_for(h, 1.3);
            assert!((n - n.round()).abs() < 1e-9, "h = {h}: N = {n}");
        }
    }

    #[test]
    fn error_of_linear_field_is_zero() {
        let (cyto, _, _) = generate_geometry(1.0, 2.0, PI / 8.0).unwrap();
        let nodal: Vec<f64> = cyto
            .vertices
            .iter()
            .map(|v| 1.0 + 2.0 * v[0] - 3.0 * v[1])
            .collect();
        let (l2, h1) = field_error_at(
            &cyto,
            &nodal,
            |x, y| 1.0 + 2.0 * x - 3.0 * y,
            |_, _| [2.0, -3.0],
        );
        assert!(l2 <= 1e-13, "l2 = {l2}");
        assert!(h1 <= 1e-13, "h1 = {h1}");
    }

    /// Interpolation-only rates: the L2 error of the exact nodal interpolant
    /// decays at rate 2, the H1-semi error at rate 1 (sanity of the norm
    /// code independent of the solver).
    #[test]
    fn interpolant_error_rates() {
        let case = ManufacturedCase::example(1).unwrap();
        let t = 0.7;
        let mut l2s = Vec::new();
        let mut h1s = Vec::new();
        for h in standard_levels(3) {
            let (cyto, _, _) = generate_geometry(1.0, 2.0, h).unwrap();
            let nodal: Vec<f64> = cyto
                .vertices
                .iter()
                .map(|v| case.u(v[0], v[1], t))
                .collect();
            let (l2, h1) = field_error_at(
                &cyto,
                &nodal,
                |x, y| case.u(x, y, t),
                |x, y| case.grad_u(x, y, t),
            );
            l2s.push(l2);
            h1s.push(h1);
        }
        for w in l2s.windows(2) {
            let rate = fitted_rate(w[0], w[1]);
            assert!((1.8..=2.2).contains(&rate), "L2 interpolation rate {rate}");
        }
        for w in h1s.windows(2) {
            let rate = fitted_rate(w[0], w[1]);
            assert!(
                (0.85..=1.15).contains(&rate),
                "H1 interpolation rate {rate}"
            );
        }
    }

    #[test]
    fn averaging_is_stable_under_duplicated_steps() {
        let case = ManufacturedCase::example(1).unwrap();
        let geometry = Geometry::generate(1.0, 2.0, PI / 8.0).unwrap();
        let u: Vec<f64> = geometry
            .cytosol
            .vertices
            .iter()
            .map(|v| case.u(v[0], v[1], 0.4))
            .collect();
        let ue: Vec<f64> = geometry
            .er
            .vertices
            .iter()
            .map(|v| case.ue(v[0], v[1], 0.4))
            .collect();
        let mut one = ErrorAccumulator::new(false);
        one.add_step(&geometry, 0.4, &u, None, &ue, &case);
        let single = one.finish();
        let mut two = ErrorAccumulator::new(false);
        two.add_step(&geometry, 0.4, &u, None, &ue, &case);
        two.add_step(&geometry, 0.4, &u, None, &ue, &case);
        let double = two.finish();
        assert!((single.u.l2 - double.u.l2).abs() <= 1e-15);
        assert!((single.ue.h1_semi - double.ue.h1_semi).abs() <= 1e-15);
    }

    // Fourth-order finite difference oracles for the strong-form residuals.
    fn d2(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h))
            / (12.0 * h * h)
    }

    fn d1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
    }

    fn halton(index: usize, base: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        let mut i = index;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }

    /// Strong-form residual of every field at quasi-random space-time points:
    /// time derivative minus Laplacian minus forcing must vanish to 1e-8.
    #[test]
    fn strong_form_residuals_vanish() {
        let h = 1e-3;
        for id in [1u8, 2] {
            let case = ManufacturedCase::example(id).unwrap();
            for k in 1..=20 {
                let r = 1.05 + 0.9 * halton(k, 2);
                let theta = 2.0 * PI * halton(k, 3);
                let t = 0.05 + 1.2 * halton(k, 5);
                let (x, y) = (r * theta.cos(), r * theta.sin());

                // u on the annulus: du/dt - lap u = f_u - [b u].
                let mut rhs = case.f_u(x, y, t);
                if case.has_buffer {
                    rhs -= case.b(x, y, t) * case.u(x, y, t);
                }
                let res = d1(|s| case.u(x, y, s), t, h)
                    - d2(|s| case.u(s, y, t), x, h)
                    - d2(|s| case.u(x, s, t), y, h)
                    - rhs;
                assert!(
                    res.abs() <= 1e-8,
                    "case {id} u residual {res:e} at ({x},{y},{t})"
                );

                if case.has_buffer {
                    let rhs = case.f_b(x, y, t) - case.b(x, y, t) * case.u(x, y, t);
                    let res = d1(|s| case.b(x, y, s), t, h)
                        - d2(|s| case.b(s, y, t), x, h)
                        - d2(|s| case.b(x, s, t), y, h)
                        - rhs;
                    assert!(res.abs() <= 1e-8, "case {id} b residual {res:e}");
                }

                // u_e on the disk.
                let re = 0.95 * halton(k, 2);
                let (xe, ye) = (re * theta.cos(), re * theta.sin());
                let res = d1(|s| case.ue(xe, ye, s), t, h)
                    - d2(|s| case.ue(s, ye, t), xe, h)
                    - d2(|s| case.ue(xe, s, t), ye, h)
                    - case.f_e(xe, ye, t);
                assert!(res.abs() <= 1e-8, "case {id} u_e residual {res:e}");
            }
        }
    }

    /// Boundary data consistency: adding the coupling terms back to the data
    /// parts must reproduce the exact normal derivatives, for any value of
    /// the open probability (it cancels identically).
    #[test]
    fn boundary_data_matches_normal_derivative_oracle() {
        let h = 1e-3;
        for id in [1u8, 2] {
            let case = ManufacturedCase::example(id).unwrap();
            for k in 1..=20 {
                let theta = 2.0 * PI * halton(k, 2);
                let t = 1.3 * halton(k, 3);
                let p_arbitrary = 0.37;

                // Cytosol side of the interface: outward normal points inward.
                let (x, y) = (theta.cos(), theta.sin());
                let (nx, ny) = (-x, -y);
                let u_ex = case.u(x, y, t);
                let ue_ex = case.ue(x, y, t);
                let mut data = case.data_u(x, y, nx, ny, t) - p_arbitrary * (ue_ex - u_ex);
                let mut full = data + p_arbitrary * (ue_ex - u_ex);
                if case.has_buffer {
                    data += case.serca_like(u_ex, ue_ex);
                    full = data + p_arbitrary * (ue_ex - u_ex) - case.serca_like(u_ex, ue_ex);
                }
                let fd = d1(|s| case.u(x + s * nx, y + s * ny, t), 0.0, h);
                assert!(
                    (full - fd).abs() <= 1e-8,
                    "case {id} interface u data: {full} vs {fd}"
                );

                // ER side: outward normal points radially outward.
                let (nx, ny) = (x, y);
                let mut full_e = case.data_ue(x, y, nx, ny, t)
                    + p_arbitrary * (ue_ex - u_ex)
                    + p_arbitrary * (u_ex - ue_ex);
                if case.has_buffer {
                    full_e += case.serca_like(u_ex, ue_ex) - case.serca_like(u_ex, ue_ex);
                }
                let fd_e = d1(|s| case.ue(x + s * nx, y + s * ny, t), 0.0, h);
                assert!(
                    (full_e - fd_e).abs() <= 1e-8,
                    "case {id} interface u_e data: {full_e} vs {fd_e}"
                );

                // Outer boundary (radius 2).
                let (xo, yo) = (2.0 * theta.cos(), 2.0 * theta.sin());
                let (nxo, nyo) = (xo / 2.0, yo / 2.0);
                let g1 = case.data_u(xo, yo, nxo, nyo, t);
                let fd_o = d1(|s| case.u(xo + s * nxo, yo + s * nyo, t), 0.0, h);
                assert!((g1 - fd_o).abs() <= 1e-8, "case {id} outer data");

                if case.has_buffer {
                    let g2 = case.data_b(xo, yo, nxo, nyo, t);
                    let fd_b = d1(|s| case.b(xo + s * nxo, yo + s * nyo, t), 0.0, h);
                    assert!((g2 - fd_b).abs() <= 1e-8, "case {id} buffer data");
                }
            }
        }
    }
}
