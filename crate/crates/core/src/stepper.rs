//! Implicit-explicit time loop: per step, three independent SPD solves (u,
//! b, u_e) with every boundary and reaction nonlinearity evaluated at the
//! previous step, followed by one backward Euler gating sweep.
//!
//! The system matrices M + dt*D*K are assembled and preconditioned exactly
//! once per run; the per-step work is right-hand-side assembly, the solves
//! and the gating update. An assembly counter makes that contract checkable.

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::fem::{
    assemble_boundary_load, assemble_operators, assemble_volume_load, AssembledOperators,
    AssemblyError,
};
use crate::gating::{ChannelState, GatingError, GatingField, RateConstants};
use crate::mesh::{generate_geometry, EdgeMarker, InterfaceMap, Mesh2D, MeshError};
use crate::sparse::{SolverHandle, SparseError, SparseMatrixSym};

/// Fields above this magnitude are reported as a blown-up run.
pub const BLOWUP_LIMIT: f64 = 1e4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Gating(#[from] GatingError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("instability at step {step} (t = {time:.6}): {reason}")]
    Unstable {
        step: usize,
        time: f64,
        reason: String,
    },
    #[error("time {t} outside the stored trajectory span [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
}

/// Both subdomain meshes plus their exact interface node pairing.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub cytosol: Mesh2D,
    pub er: Mesh2D,
    pub interface: InterfaceMap,
}

impl Geometry {
    pub fn generate(r_inner: f64, r_outer: f64, h: f64) -> Result<Self, MeshError> {
        let (cytosol, er, interface) = generate_geometry(r_inner, r_outer, h)?;
        Ok(Self {
            cytosol,
            er,
            interface,
        })
    }

    /// Cytosol-mesh coordinates of the interface nodes, in arc order.
    pub fn interface_coords(&self) -> Vec<[f64; 2]> {
        self.interface
            .pairs
            .iter()
            .map(|&(c, _)| self.cytosol.vertices[c])
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Diffusion {
    pub d_c: f64,
    pub d_b: Option<f64>,
    pub d_e: f64,
}

/// Arguments handed to a model at one boundary quadrature point. For outer
/// boundary evaluations `ue`, `p` and `p_aux` are zero.
#[derive(Debug, Clone, Copy)]
pub struct BoundarySample {
    pub x: f64,
    pub y: f64,
    pub nx: f64,
    pub ny: f64,
    pub t: f64,
    pub u: f64,
    pub ue: f64,
    /// RyR open probability interpolated from the gating field.
    pub p: f64,
    /// Interpolated auxiliary nodal quantity (exact-trace open probability
    /// for manufactured runs; zero otherwise).
    pub p_aux: f64,
}

/// Arguments at one volume quadrature point; `b` is zero without a buffer.
#[derive(Debug, Clone, Copy)]
pub struct VolumeSample {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub u: f64,
    pub b: f64,
}

/// Problem definition handed to the stepper: volume sources and boundary
/// fluxes, all evaluated explicitly at the previous step.
pub trait Model {
    fn source_u(&self, s: &VolumeSample) -> f64 {
        let _ = s;
        0.0
    }
    fn source_b(&self, s: &VolumeSample) -> f64 {
        let _ = s;
        0.0
    }
    fn source_e(&self, s: &VolumeSample) -> f64 {
        let _ = s;
        0.0
    }
    fn outer_flux_u(&self, s: &BoundarySample) -> f64;
    fn outer_flux_b(&self, s: &BoundarySample) -> f64 {
        let _ = s;
        0.0
    }
    fn iface_flux_u(&self, s: &BoundarySample) -> f64;
    fn iface_flux_b(&self, s: &BoundarySample) -> f64 {
        let _ = s;
        0.0
    }
    fn iface_flux_e(&self, s: &BoundarySample) -> f64;

    /// Whether the cytosol equations carry volume sources.
    fn has_cytosol_sources(&self) -> bool {
        true
    }
    /// Whether the ER equation carries a volume source.
    fn has_er_source(&self) -> bool {
        false
    }
    /// Whether the buffer carries boundary data (zero-flux otherwise).
    fn has_buffer_boundary_data(&self) -> bool {
        false
    }

    /// Advance model-owned auxiliary state (e.g. an exact-trace gating field)
    /// from `t` to `t + dt`.
    fn advance_aux(&mut self, t: f64, dt: f64) -> Result<(), GatingError> {
        let _ = (t, dt);
        Ok(())
    }
    /// Auxiliary nodal values on the interface ring, arc order.
    fn aux_interface(&self) -> Option<&[f64]> {
        None
    }
    /// Warn once per run if the interface trace of u_e drops below this.
    fn ue_floor(&self) -> Option<f64> {
        None
    }
}

/// Nodal coefficient vectors for every field plus the gating state.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub b: Option<Vec<f64>>,
    pub ue: Vec<f64>,
    pub gating: GatingField,
    pub t: f64,
    pub step: usize,
}

impl FieldState {
    pub fn uniform(
        geometry: &Geometry,
        u0: f64,
        b0: Option<f64>,
        ue0: f64,
        gating_init: ChannelState,
        rates: RateConstants,
    ) -> Result<Self, GatingError> {
        Ok(Self {
            u: vec![u0; geometry.cytosol.vertex_count()],
            b: b0.map(|v| vec![v; geometry.cytosol.vertex_count()]),
            ue: vec![ue0; geometry.er.vertex_count()],
            gating: GatingField::uniform(geometry.interface.len(), gating_init, rates)?,
            t: 0.0,
            step: 0,
        })
    }

    pub fn from_fns(
        geometry: &Geometry,
        u0: impl Fn(f64, f64) -> f64,
        b0: Option<&dyn Fn(f64, f64) -> f64>,
        ue0: impl Fn(f64, f64) -> f64,
        gating_init: ChannelState,
        rates: RateConstants,
    ) -> Result<Self, GatingError> {
        let eval = |mesh: &Mesh2D, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            mesh.vertices.iter().map(|v| f(v[0], v[1])).collect()
        };
        Ok(Self {
            u: eval(&geometry.cytosol, &u0),
            b: b0.map(|f| eval(&geometry.cytosol, f)),
            ue: eval(&geometry.er, &ue0),
            gating: GatingField::uniform(geometry.interface.len(), gating_init, rates)?,
            t: 0.0,
            step: 0,
        })
    }
}

/// Prebuilt solver handles for the time-constant system matrices
/// M + dt * D * K of each field.
#[derive(Debug, Clone)]
pub struct SteppingPlan {
    dt: f64,
    handle_u: SolverHandle,
    handle_b: Option<SolverHandle>,
    handle_e: SolverHandle,
    assembly_count: usize,
}

impl SteppingPlan {
    pub fn build(
        cyto_ops: &AssembledOperators,
        er_ops: &AssembledOperators,
        diffusion: Diffusion,
        dt: f64,
    ) -> Result<Self, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Config(format!(
                "time step must be positive, got {dt}"
            )));
        }
        for (d, name) in [(diffusion.d_c, "d_c"), (diffusion.d_e, "d_e")] {
            if !(d > 0.0) {
                return Err(SimError::Config(format!(
                    "diffusion {name} must be positive"
                )));
            }
        }
        let mut assembly_count = 0;
        let mut system = |mass: &SparseMatrixSym,
                          stiffness: &SparseMatrixSym,
                          d: f64|
         -> Result<SolverHandle, SimError> {
            assembly_count += 1;
            let a = SparseMatrixSym::linear_combination(1.0, mass, dt * d, stiffness);
            Ok(SolverHandle::with_defaults(Arc::new(a))?)
        };
        let handle_u = system(&cyto_ops.mass, &cyto_ops.stiffness, diffusion.d_c)?;
        let handle_b = match diffusion.d_b {
            Some(d_b) => {
                if !(d_b > 0.0) {
                    return Err(SimError::Config("diffusion d_b must be positive".into()));
                }
                Some(system(&cyto_ops.mass, &cyto_ops.stiffness, d_b)?)
            }
            None => None,
        };
        let handle_e = system(&er_ops.mass, &er_ops.stiffness, diffusion.d_e)?;
        Ok(Self {
            dt,
            handle_u,
            handle_b,
            handle_e,
            assembly_count,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// How many system matrices have been assembled over the plan's lifetime.
    pub fn assembly_count(&self) -> usize {
        self.assembly_count
    }

    pub fn handle_u(&self) -> &SolverHandle {
        &self.handle_u
    }

    pub fn handle_e(&self) -> &SolverHandle {
        &self.handle_e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldId {
    U,
    B,
    Ue,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub solver_iterations: usize,
    pub solve_seconds: f64,
    pub step_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    Unstable {
        step: usize,
        time: f64,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct Extremum {
    pub value: f64,
    pub time: f64,
}

/// Trajectory summary of one run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub final_t: f64,
    pub outcome: RunOutcome,
    pub max_u: Extremum,
    pub min_u: Extremum,
    pub max_ue: Extremum,
    pub min_ue: Extremum,
    pub max_b: Option<Extremum>,
    pub min_b: Option<Extremum>,
    pub max_p: Extremum,
    pub min_p: Extremum,
    pub total_solver_iterations: usize,
    pub solve_seconds: f64,
    pub step_seconds: f64,
}

impl RunSummary {
    fn new(state: &FieldState) -> Self {
        let (u_lo, u_hi) = min_max(&state.u);
        let (e_lo, e_hi) = min_max(&state.ue);
        let (p_lo, p_hi) = state.gating.probability_range();
        let ex = |value| Extremum {
            value,
            time: state.t,
        };
        Self {
            steps: 0,
            final_t: state.t,
            outcome: RunOutcome::Completed,
            max_u: ex(u_hi),
            min_u: ex(u_lo),
            max_ue: ex(e_hi),
            min_ue: ex(e_lo),
            max_b: state.b.as_ref().map(|b| ex(min_max(b).1)),
            min_b: state.b.as_ref().map(|b| ex(min_max(b).0)),
            max_p: ex(p_hi),
            min_p: ex(p_lo),
            total_solver_iterations: 0,
            solve_seconds: 0.0,
            step_seconds: 0.0,
        }
    }

    fn absorb(&mut self, state: &FieldState, stats: &StepStats) {
        self.steps = state.step;
        self.final_t = state.t;
        let track_max = |ex: &mut Extremum, value: f64| {
            if value > ex.value {
                *ex = Extremum {
                    value,
                    time: state.t,
                };
            }
        };
        let track_min = |ex: &mut Extremum, value: f64| {
            if value < ex.value {
                *ex = Extremum {
                    value,
                    time: state.t,
                };
            }
        };
        let (u_lo, u_hi) = min_max(&state.u);
        track_max(&mut self.max_u, u_hi);
        track_min(&mut self.min_u, u_lo);
        let (e_lo, e_hi) = min_max(&state.ue);
        track_max(&mut self.max_ue, e_hi);
        track_min(&mut self.min_ue, e_lo);
        if let Some(b) = &state.b {
            let (b_lo, b_hi) = min_max(b);
            track_max(self.max_b.as_mut().unwrap(), b_hi);
            track_min(self.min_b.as_mut().unwrap(), b_lo);
        }
        let (p_lo, p_hi) = state.gating.probability_range();
        track_max(&mut self.max_p, p_hi);
        track_min(&mut self.min_p, p_lo);
        self.total_solver_iterations += stats.solver_iterations;
        self.solve_seconds += stats.solve_seconds;
        self.step_seconds += stats.step_seconds;
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// One full problem instance: geometry, operators, plan, model and state.
pub struct Simulation<M: Model> {
    pub geometry: Geometry,
    cyto_ops: AssembledOperators,
    er_ops: AssembledOperators,
    plan: SteppingPlan,
    pub model: M,
    pub state: FieldState,
    threads: usize,
    low_ue_warned: bool,
}

impl<M: Model> Simulation<M> {
    pub fn new(
        geometry: Geometry,
        diffusion: Diffusion,
        dt: f64,
        state: FieldState,
        model: M,
    ) -> Result<Self, SimError> {
        if diffusion.d_b.is_some() != state.b.is_some() {
            return Err(SimError::Config(
                "buffer diffusion and buffer initial state must be given together".into(),
            ));
        }
        if state.u.len() != geometry.cytosol.vertex_count()
            || state.ue.len() != geometry.er.vertex_count()
            || state.gating.len() != geometry.interface.len()
        {
            return Err(SimError::Config(
                "state dimensions do not match the geometry".into(),
            ));
        }
        let cyto_ops = assemble_operators(&geometry.cytosol)?;
        let er_ops = assemble_operators(&geometry.er)?;
        let plan = SteppingPlan::build(&cyto_ops, &er_ops, diffusion, dt)?;
        Ok(Self {
            geometry,
            cyto_ops,
            er_ops,
            plan,
            model,
            state,
            threads: thread_count(),
            low_ue_warned: false,
        })
    }

    pub fn plan(&self) -> &SteppingPlan {
        &self.plan
    }

    pub fn cyto_ops(&self) -> &AssembledOperators {
        &self.cyto_ops
    }

    pub fn er_ops(&self) -> &AssembledOperators {
        &self.er_ops
    }

    /// Force single-threaded solves regardless of the environment.
    pub fn set_deterministic(&mut self) {
        self.threads = 1;
    }

    fn interface_scratch(&self) -> InterfaceScratch {
        let nc = self.geometry.cytosol.vertex_count();
        let ne = self.geometry.er.vertex_count();
        let probs = self.state.gating.open_probabilities();
        let aux = self.model.aux_interface();
        let mut s = InterfaceScratch {
            p_c: vec![0.0; nc],
            aux_c: vec![0.0; nc],
            ue_on_c: vec![0.0; nc],
            u_on_e: vec![0.0; ne],
            p_e: vec![0.0; ne],
            aux_e: vec![0.0; ne],
            min_iface_ue: f64::INFINITY,
        };
        for (k, &(c, e)) in self.geometry.interface.pairs.iter().enumerate() {
            s.p_c[c] = probs[k];
            s.p_e[e] = probs[k];
            s.ue_on_c[c] = self.state.ue[e];
            s.u_on_e[e] = self.state.u[c];
            s.min_iface_ue = s.min_iface_ue.min(self.state.ue[e]);
            if let Some(aux) = aux {
                s.aux_c[c] = aux[k];
                s.aux_e[e] = aux[k];
            }
        }
        s
    }

    /// Assemble the three right-hand sides from the state at t_n.
    fn assemble_rhs(&self, scratch: &InterfaceScratch) -> Result<RhsSet, AssemblyError> {
        let t = self.state.t;
        let dt = self.plan.dt;
        let cyto = &self.geometry.cytosol;
        let er = &self.geometry.er;
        let model = &self.model;
        let zeros_c;
        let b_nodal: &[f64] = match &self.state.b {
            Some(b) => b,
            None => {
                zeros_c = vec![0.0; cyto.vertex_count()];
                &zeros_c
            }
        };

        let boundary_sample =
            |ep: &crate::fem::EdgePoint, u: f64, ue: f64, p: f64, p_aux: f64| BoundarySample {
                x: ep.x,
                y: ep.y,
                nx: ep.normal[0],
                ny: ep.normal[1],
                t,
                u,
                ue,
                p,
                p_aux,
            };

        // u equation.
        let mut rhs_u = self.cyto_ops.mass.matvec(&self.state.u).expect("dimension");
        let outer = assemble_boundary_load(cyto, EdgeMarker::Outer, |ep| {
            let s = boundary_sample(ep, ep.interp(&self.state.u), 0.0, 0.0, 0.0);
            model.outer_flux_u(&s)
        })?;
        let iface = assemble_boundary_load(cyto, EdgeMarker::Interface, |ep| {
            let s = boundary_sample(
                ep,
                ep.interp(&self.state.u),
                ep.interp(&scratch.ue_on_c),
                ep.interp(&scratch.p_c),
                ep.interp(&scratch.aux_c),
            );
            model.iface_flux_u(&s)
        })?;
        for i in 0..rhs_u.len() {
            rhs_u[i] += dt * (outer[i] + iface[i]);
        }
        if model.has_cytosol_sources() {
            let vol = assemble_volume_load(cyto, |tp| {
                let s = VolumeSample {
                    x: tp.x,
                    y: tp.y,
                    t,
                    u: tp.interp(&self.state.u),
                    b: tp.interp(b_nodal),
                };
                model.source_u(&s)
            })?;
            for i in 0..rhs_u.len() {
                rhs_u[i] += dt * vol[i];
            }
        }

        // Buffer equation (zero-flux boundary unless the model says else).
        let rhs_b = match &self.state.b {
            Some(b) => {
                let mut rhs = self.cyto_ops.mass.matvec(b).expect("dimension");
                if model.has_buffer_boundary_data() {
                    let outer = assemble_boundary_load(cyto, EdgeMarker::Outer, |ep| {
                        let s = boundary_sample(ep, 0.0, 0.0, 0.0, 0.0);
                        model.outer_flux_b(&s)
                    })?;
                    let iface = assemble_boundary_load(cyto, EdgeMarker::Interface, |ep| {
                        let s = boundary_sample(ep, 0.0, 0.0, 0.0, 0.0);
                        model.iface_flux_b(&s)
                    })?;
                    for i in 0..rhs.len() {
                        rhs[i] += dt * (outer[i] + iface[i]);
                    }
                }
                if model.has_cytosol_sources() {
                    let vol = assemble_volume_load(cyto, |tp| {
                        let s = VolumeSample {
                            x: tp.x,
                            y: tp.y,
                            t,
                            u: tp.interp(&self.state.u),
                            b: tp.interp(b_nodal),
                        };
                        model.source_b(&s)
                    })?;
                    for i in 0..rhs.len() {
                        rhs[i] += dt * vol[i];
                    }
                }
                Some(rhs)
            }
            None => None,
        };

        // ER equation.
        let mut rhs_e = self.er_ops.mass.matvec(&self.state.ue).expect("dimension");
        let iface_e = assemble_boundary_load(er, EdgeMarker::Interface, |ep| {
            let s = boundary_sample(
                ep,
                ep.interp(&scratch.u_on_e),
                ep.interp(&self.state.ue),
                ep.interp(&scratch.p_e),
                ep.interp(&scratch.aux_e),
            );
            model.iface_flux_e(&s)
        })?;
        for i in 0..rhs_e.len() {
            rhs_e[i] += dt * iface_e[i];
        }
        if model.has_er_source() {
            let vol = assemble_volume_load(er, |tp| {
                let s = VolumeSample {
                    x: tp.x,
                    y: tp.y,
                    t,
                    u: 0.0,
                    b: 0.0,
                };
                model.source_e(&s)
            })?;
            for i in 0..rhs_e.len() {
                rhs_e[i] += dt * vol[i];
            }
        }

        Ok(RhsSet {
            u: rhs_u,
            b: rhs_b,
            e: rhs_e,
        })
    }

    /// Advance one step, solving the three fields in the given order. The
    /// solves share only the frozen state at t_n, so any permutation yields
    /// bitwise-identical results.
    pub fn step_in_order(&mut self, order: &[FieldId]) -> Result<StepStats, SimError> {
        let started = Instant::now();
        let step_index = self.state.step + 1;
        let t = self.state.t;
        let dt = self.plan.dt;
        let unstable = |reason: String| SimError::Unstable {
            step: step_index,
            time: t + dt,
            reason,
        };

        let scratch = self.interface_scratch();
        if let Some(floor) = self.model.ue_floor() {
            if scratch.min_iface_ue < floor && !self.low_ue_warned {
                self.low_ue_warned = true;
                eprintln!(
                    "warning: interface u_e trace dropped below the SERCA regularizer floor \
                     ({:.3e} < {floor:.3e}) at t = {t:.6}",
                    scratch.min_iface_ue
                );
            }
        }

        let rhs = match self.assemble_rhs(&scratch) {
            Ok(rhs) => rhs,
            Err(
                e @ (AssemblyError::NonFiniteBoundaryFlux { .. }
                | AssemblyError::NonFiniteSource { .. }),
            ) => return Err(unstable(e.to_string())),
            Err(e) => return Err(e.into()),
        };

        let mut stats = StepStats::default();
        let mut new_u = None;
        let mut new_b = None;
        let mut new_e = None;

        // The requested order must visit each field exactly once.
        debug_assert!(
            order.len() == 3
                && order.contains(&FieldId::U)
                && order.contains(&FieldId::B)
                && order.contains(&FieldId::Ue)
        );
        let map_solve_err = |e: SparseError| -> SimError {
            match e {
                SparseError::NonFiniteRhs { index } => {
                    unstable(format!("non-finite right-hand side entry {index}"))
                }
                other => other.into(),
            }
        };
        if self.threads > 1 {
            // The three systems share only the frozen right-hand sides, so
            // they may run concurrently; results are identical either way.
            let solve_started = Instant::now();
            let plan = &self.plan;
            let (r_u, r_b, r_e) = std::thread::scope(|scope| {
                let h_u = scope.spawn(|| plan.handle_u.solve_with_stats(&rhs.u));
                let h_b = plan
                    .handle_b
                    .as_ref()
                    .zip(rhs.b.as_ref())
                    .map(|(h, r)| scope.spawn(move || h.solve_with_stats(r)));
                let h_e = scope.spawn(|| plan.handle_e.solve_with_stats(&rhs.e));
                (
                    h_u.join().expect("solver thread"),
                    h_b.map(|h| h.join().expect("solver thread")),
                    h_e.join().expect("solver thread"),
                )
            });
            let (x_u, s_u) = r_u.map_err(map_solve_err)?;
            stats.solver_iterations += s_u.iterations;
            new_u = Some(x_u);
            if let Some(r_b) = r_b {
                let (x_b, s_b) = r_b.map_err(map_solve_err)?;
                stats.solver_iterations += s_b.iterations;
                new_b = Some(x_b);
            }
            let (x_e, s_e) = r_e.map_err(map_solve_err)?;
            stats.solver_iterations += s_e.iterations;
            new_e = Some(x_e);
            stats.solve_seconds += solve_started.elapsed().as_secs_f64();
        } else {
            for &field in order {
                let solve_started = Instant::now();
                let (handle, rhs_vec) = match field {
                    FieldId::U => (&self.plan.handle_u, &rhs.u),
                    FieldId::B => match (&self.plan.handle_b, &rhs.b) {
                        (Some(h), Some(r)) => (h, r),
                        _ => continue,
                    },
                    FieldId::Ue => (&self.plan.handle_e, &rhs.e),
                };
                let (x, solve_stats) = handle.solve_with_stats(rhs_vec).map_err(map_solve_err)?;
                stats.solver_iterations += solve_stats.iterations;
                stats.solve_seconds += solve_started.elapsed().as_secs_f64();
                match field {
                    FieldId::U => new_u = Some(x),
                    FieldId::B => new_b = Some(x),
                    FieldId::Ue => new_e = Some(x),
                }
            }
        }

        let new_u = new_u.expect("u solve ran");
        let new_e = new_e.expect("ue solve ran");

        for (name, field) in [
            ("u", Some(&new_u)),
            ("b", new_b.as_ref()),
            ("u_e", Some(&new_e)),
        ] {
            if let Some(field) = field {
                for &v in field.iter() {
                    if !v.is_finite() {
                        return Err(unstable(format!("field {name} became non-finite")));
                    }
                    if v.abs() > BLOWUP_LIMIT {
                        return Err(unstable(format!(
                            "field {name} exceeded the {BLOWUP_LIMIT:.0e} bound ({v:.3e})"
                        )));
                    }
                }
            }
        }

        // Gating advances with the trace of the *old* field, then the model's
        // auxiliary state; both use the explicit trace at t_n.
        let trace: Vec<f64> = self
            .geometry
            .interface
            .pairs
            .iter()
            .map(|&(c, _)| self.state.u[c])
            .collect();
        self.state.gating.step(&trace, dt)?;
        self.model.advance_aux(t, dt)?;

        self.state.u = new_u;
        if let Some(b) = new_b {
            self.state.b = Some(b);
        }
        self.state.ue = new_e;
        self.state.t += dt;
        self.state.step = step_index;
        stats.step_seconds = started.elapsed().as_secs_f64();
        Ok(stats)
    }

    pub fn step(&mut self) -> Result<StepStats, SimError> {
        self.step_in_order(&[FieldId::U, FieldId::B, FieldId::Ue])
    }

    /// Run `n_steps` steps, reporting each new state to the observer.
    /// Instability is a normal outcome, recorded in the summary; hard errors
    /// (solver breakdown, bad dimensions) propagate.
    pub fn run(
        &mut self,
        n_steps: usize,
        mut observer: impl FnMut(&Geometry, &FieldState, &StepStats),
    ) -> Result<RunSummary, SimError> {
        let mut summary = RunSummary::new(&self.state);
        for _ in 0..n_steps {
            match self.step() {
                Ok(stats) => {
                    summary.absorb(&self.state, &stats);
                    observer(&self.geometry, &self.state, &stats);
                }
                Err(SimError::Unstable { step, time, reason }) => {
                    summary.outcome = RunOutcome::Unstable { step, time, reason };
                    return Ok(summary);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(summary)
    }
}

struct InterfaceScratch {
    p_c: Vec<f64>,
    aux_c: Vec<f64>,
    ue_on_c: Vec<f64>,
    u_on_e: Vec<f64>,
    p_e: Vec<f64>,
    aux_e: Vec<f64>,
    min_iface_ue: f64,
}

struct RhsSet {
    u: Vec<f64>,
    b: Option<Vec<f64>>,
    e: Vec<f64>,
}

/// Worker thread count from CALWAVE_THREADS (default 1, deterministic).
pub fn thread_count() -> usize {
    std::env::var("CALWAVE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1)
}

/// Piecewise-linear-in-time reconstruction of a stored trajectory.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, field: Vec<f64>) {
        debug_assert!(self.times.last().map_or(true, |&last| t > last));
        self.times.push(t);
        self.snapshots.push(field);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Evaluate the hat-function-in-time interpolant of a trajectory at `t`.
pub fn history_interpolant(trajectory: &Trajectory, t: f64) -> Result<Vec<f64>, SimError> {
    let times = &trajectory.times;
    if times.is_empty() {
        return Err(SimError::OutOfRange {
            t,
            lo: f64::NAN,
            hi: f64::NAN,
        });
    }
    let (lo, hi) = (times[0], *times.last().unwrap());
    if t < lo || t > hi {
        return Err(SimError::OutOfRange { t, lo, hi });
    }
    let idx = match times.binary_search_by(|probe| probe.total_cmp(&t)) {
        Ok(exact) => return Ok(trajectory.snapshots[exact].clone()),
        Err(idx) => idx,
    };
    let (t0, t1) = (times[idx - 1], times[idx]);
    let w = (t - t0) / (t1 - t0);
    let (f0, f1) = (&trajectory.snapshots[idx - 1], &trajectory.snapshots[idx]);
    Ok(f0
        .iter()
        .zip(f1)
        .map(|(a, b)| (1.0 - w) * a + w * b)
        .collect())
}
