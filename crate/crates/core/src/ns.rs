//! Fractional-step incompressible Navier-Stokes core shared by every
//! coupling scheme.
//!
//! One step runs the scheme's operations in the order of the algorithm it
//! implements and finishes with the pressure projection, so the velocity
//! leaves every step discretely divergence-free. The execution order is
//! recorded in a trace that the scheme-order tests assert against.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::body::{
    advance_body, apply_pose, level_set, rot, solid_velocity, DeformationKinematics,
    PoseIntegrator, RigidState, Shape,
};
use crate::coupling::{
    constraint_project, direct_forcing_lambda, fdm_rigid_solve, ibm_elastic_lambda,
    penalty_lambda, ConstraintConfig, ConstraintLocus, ExternalLoads, FiberElasticity,
    InertiaMismatch, KernelChoice, LambdaField, SchemeKind,
};
use crate::error::{IbfdError, Result};
use crate::grid::{
    self, divergence, enforce_velocity_bc, CellField, FaceField, FaceQuantity, FluidState,
    GridSpec, VelocityBc,
};
use crate::kernels::{interpolate, DeltaKernel, MarkerSet};
use crate::mls::mls_interpolate;
use crate::poisson::{Eig1d, PoissonSolver, SepOperator};
use crate::rigid::{net_force_torque, update_free_body, MomentumHistory, TimeIntegrator};

/// Numerical parameters of the fluid core.
#[derive(Debug, Clone)]
pub struct NsParams {
    /// Upwind fraction blended into the centered convective flux.
    pub upwind_blend: f64,
    pub implicit_diffusion: bool,
    /// Picard sweeps re-evaluating convection at the updated predictor
    /// velocity (0 keeps the linearized form).
    pub picard_iters: usize,
    pub cfl_advective: f64,
    pub cfl_viscous: f64,
    pub tol_poisson: f64,
    /// Gravity entering free-body updates through the density mismatch.
    pub gravity: (f64, f64),
    pub pose_integrator: PoseIntegrator,
    pub body_integrator: TimeIntegrator,
}

impl Default for NsParams {
    fn default() -> Self {
        NsParams {
            upwind_blend: 0.0,
            implicit_diffusion: false,
            picard_iters: 0,
            cfl_advective: 0.5,
            cfl_viscous: 0.25,
            tol_poisson: crate::poisson::TOL_POISSON,
            gravity: (0.0, 0.0),
            pose_integrator: PoseIntegrator::Euler,
            body_integrator: TimeIntegrator::Euler,
        }
    }
}

/// Cached solvers for one grid: the projection Poisson solve and, when
/// implicit diffusion is on, the per-component Helmholtz operators.
pub struct SolverContext {
    pub grid: GridSpec,
    pub poisson: PoissonSolver,
    helmholtz_u: ComponentOperator,
    helmholtz_v: ComponentOperator,
}

impl SolverContext {
    pub fn new(g: &GridSpec) -> Self {
        SolverContext {
            grid: g.clone(),
            poisson: PoissonSolver::new(g),
            helmholtz_u: ComponentOperator::for_u(g),
            helmholtz_v: ComponentOperator::for_v(g),
        }
    }
}

/// 1D closures of a velocity-component Laplacian along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AxisKind {
    Periodic,
    /// Normal component between two ends that are Dirichlet (`true`) or
    /// mirror/outflow (`false`): unknowns are the interior faces.
    Normal { lo_dirichlet: bool, hi_dirichlet: bool },
    /// Tangential component over cell rows with ghost closures.
    Tangential { lo_dirichlet: bool, hi_dirichlet: bool },
}

fn axis_matrix(kind: AxisKind, n_unknowns: usize, h: f64) -> DMatrix<f64> {
    let s = 1.0 / (h * h);
    let n = n_unknowns;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        if i > 0 {
            a[(i, i - 1)] += s;
        }
        if i + 1 < n {
            a[(i, i + 1)] += s;
        }
        let mut diag = -2.0;
        match kind {
            AxisKind::Periodic => {
                if i == 0 {
                    a[(0, n - 1)] += s;
                }
                if i == n - 1 {
                    a[(n - 1, 0)] += s;
                }
            }
            AxisKind::Normal { lo_dirichlet, hi_dirichlet } => {
                // Dirichlet neighbors are eliminated to the RHS (diag stays -2);
                // outflow ends mirror the unknown itself.
                if i == 0 && !lo_dirichlet {
                    diag = -1.0;
                }
                if i == n - 1 && !hi_dirichlet {
                    diag = -1.0;
                }
            }
            AxisKind::Tangential { lo_dirichlet, hi_dirichlet } => {
                if i == 0 {
                    diag = if lo_dirichlet { -3.0 } else { -1.0 };
                }
                if i == n - 1 {
                    diag = if hi_dirichlet { -3.0 } else { -1.0 };
                }
            }
        }
        a[(i, i)] = diag * s;
    }
    a
}

/// Separable Helmholtz operator of one velocity component.
struct ComponentOperator {
    op: SepOperator,
    x_kind: AxisKind,
    y_kind: AxisKind,
    /// Index of the first unknown along each axis in the stored lattice.
    x0: usize,
    y0: usize,
    nx_un: usize,
    ny_un: usize,
}

impl ComponentOperator {
    fn for_u(g: &GridSpec) -> Self {
        let (x_kind, x0, nx_un) = if g.periodic_x() {
            (AxisKind::Periodic, 0usize, g.nx)
        } else {
            let lo = !matches!(g.bc.left, VelocityBc::Outflow);
            let hi = !matches!(g.bc.right, VelocityBc::Outflow);
            (AxisKind::Normal { lo_dirichlet: lo, hi_dirichlet: hi }, 1usize, g.nx - 1)
        };
        let (y_kind, y0, ny_un) = if g.periodic_y() {
            (AxisKind::Periodic, 0usize, g.ny)
        } else {
            let lo = !matches!(g.bc.bottom, VelocityBc::Outflow);
            let hi = !matches!(g.bc.top, VelocityBc::Outflow);
            (AxisKind::Tangential { lo_dirichlet: lo, hi_dirichlet: hi }, 0usize, g.ny)
        };
        let ax = axis_matrix(x_kind, nx_un, g.dx);
        let ay = axis_matrix(y_kind, ny_un, g.dy);
        ComponentOperator {
            op: SepOperator { x: Eig1d::new(ax), y: Eig1d::new(ay) },
            x_kind,
            y_kind,
            x0,
            y0,
            nx_un,
            ny_un,
        }
    }

    fn for_v(g: &GridSpec) -> Self {
        let (x_kind, x0, nx_un) = if g.periodic_x() {
            (AxisKind::Periodic, 0usize, g.nx)
        } else {
            let lo = !matches!(g.bc.left, VelocityBc::Outflow);
            let hi = !matches!(g.bc.right, VelocityBc::Outflow);
            (AxisKind::Tangential { lo_dirichlet: lo, hi_dirichlet: hi }, 0usize, g.nx)
        };
        let (y_kind, y0, ny_un) = if g.periodic_y() {
            (AxisKind::Periodic, 0usize, g.ny)
        } else {
            let lo = !matches!(g.bc.bottom, VelocityBc::Outflow);
            let hi = !matches!(g.bc.top, VelocityBc::Outflow);
            (AxisKind::Normal { lo_dirichlet: lo, hi_dirichlet: hi }, 1usize, g.ny - 1)
        };
        let ax = axis_matrix(x_kind, nx_un, g.dx);
        let ay = axis_matrix(y_kind, ny_un, g.dy);
        ComponentOperator {
            op: SepOperator { x: Eig1d::new(ax), y: Eig1d::new(ay) },
            x_kind,
            y_kind,
            x0,
            y0,
            nx_un,
            ny_un,
        }
    }
}

/// Events of one solver step, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepEvent {
    CflChecked,
    ElasticLambda,
    BrinkmanForcing,
    PenaltyLambda,
    Predictor { implicit: bool, picard: usize },
    ConstraintInterpolate,
    RigidSolve,
    DirectForcingLambda,
    ConstraintProjection,
    PressureProjection,
    FreeBodyUpdate,
    MarkerAdvect,
    BodyAdvance,
}

/// Per-body diagnostics of one step.
#[derive(Debug, Clone)]
pub struct BodyDiag {
    pub net_lambda_force: (f64, f64),
    pub net_lambda_torque: f64,
    pub max_lambda: f64,
    pub hydro_force: Option<(f64, f64)>,
    pub hydro_torque: Option<f64>,
    /// Max |interp(u) - u_solid| over markers after the full step.
    pub slip: Option<f64>,
    pub xc: (f64, f64),
    pub theta: f64,
    pub u: (f64, f64),
    pub omega: f64,
}

/// Outcome of one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub trace: Vec<StepEvent>,
    pub max_div: f64,
    pub kinetic_energy: f64,
    pub bodies: Vec<BodyDiag>,
    pub poisson_residual: f64,
}

/// How a rigid body's motion is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigidMotion {
    /// Velocities held at their prescribed values.
    Prescribed,
    /// Velocities updated by the scheme's solid momentum balance.
    Free,
}

/// Reference trajectory for penalty-tracked surfaces: time to per-marker
/// positions and velocities.
pub type ReferenceMotion = Arc<dyn Fn(f64) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) + Send + Sync>;

/// Dynamics attached to an immersed body.
pub enum BodyDynamics {
    Rigid {
        state: RigidState,
        motion: RigidMotion,
        deformation: Option<DeformationKinematics>,
    },
    Fiber {
        elasticity: FiberElasticity,
    },
    Tracked {
        reference: ReferenceMotion,
    },
}

/// An immersed body participating in a simulation.
pub struct SimBody {
    pub shape: Shape,
    pub markers: MarkerSet,
    pub dynamics: BodyDynamics,
    /// External loads for this step (spring tethers, actuators).
    pub external: ExternalLoads,
    pub history: MomentumHistory,
}

impl SimBody {
    pub fn rigid(
        shape: Shape,
        state: RigidState,
        motion: RigidMotion,
        deformation: Option<DeformationKinematics>,
        mut markers: MarkerSet,
    ) -> Self {
        apply_pose(&state, &mut markers);
        SimBody {
            shape,
            markers,
            dynamics: BodyDynamics::Rigid { state, motion, deformation },
            external: ExternalLoads::default(),
            history: MomentumHistory::default(),
        }
    }

    pub fn fiber(shape: Shape, markers: MarkerSet, elasticity: FiberElasticity) -> Self {
        SimBody {
            shape,
            markers,
            dynamics: BodyDynamics::Fiber { elasticity },
            external: ExternalLoads::default(),
            history: MomentumHistory::default(),
        }
    }

    pub fn tracked_static(shape: Shape, markers: MarkerSet) -> Self {
        let xs = markers.positions.clone();
        let n = xs.len();
        let reference: ReferenceMotion = Arc::new(move |_t| (xs.clone(), vec![(0.0, 0.0); n]));
        SimBody {
            shape,
            markers,
            dynamics: BodyDynamics::Tracked { reference },
            external: ExternalLoads::default(),
            history: MomentumHistory::default(),
        }
    }

    pub fn rigid_state(&self) -> Option<&RigidState> {
        match &self.dynamics {
            BodyDynamics::Rigid { state, .. } => Some(state),
            _ => None,
        }
    }

    fn center(&self) -> (f64, f64) {
        match &self.dynamics {
            BodyDynamics::Rigid { state, .. } => state.xc,
            _ => {
                let n = self.markers.len() as f64;
                let s = self
                    .markers
                    .positions
                    .iter()
                    .fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
                (s.0 / n, s.1 / n)
            }
        }
    }
}

/// Check the advective and (explicit) viscous step limits.
pub fn cfl_check(state: &FluidState, g: &GridSpec, params: &NsParams, dt: f64) -> Result<()> {
    let umax = state.velocity.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let vmax = state.velocity.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rate = umax / g.dx + vmax / g.dy;
    if rate > 0.0 {
        let dt_adv = params.cfl_advective / rate;
        if dt > dt_adv {
            return Err(IbfdError::CflViolation { kind: "advective", dt, suggested: dt_adv });
        }
    }
    if !params.implicit_diffusion && state.mu_f > 0.0 {
        let dt_visc = params.cfl_viscous * state.rho_f * g.dx * g.dx / state.mu_f;
        if dt > dt_visc {
            return Err(IbfdError::CflViolation { kind: "viscous", dt, suggested: dt_visc });
        }
    }
    Ok(())
}

/// Momentum predictor: advances `rho (u* - u^n)/dt + rho conv = mu lap - grad p^n + f`.
///
/// Diffusion is explicit by default; the implicit option solves the
/// separable Helmholtz system per component. Convection is linearized at
/// `u^n` unless Picard sweeps are requested.
pub fn predictor(
    state: &FluidState,
    extra_force: Option<&FaceField>,
    params: &NsParams,
    ctx: &SolverContext,
    dt: f64,
) -> Result<FaceField> {
    let g = &ctx.grid;
    if !state.velocity.conforms(g) {
        return Err(IbfdError::config("state does not conform to solver grid"));
    }
    let rho = state.rho_f;
    let mu = state.mu_f;
    let gradp = grid::gradient(&state.pressure, g)?;

    let mut u_hat = state.velocity.clone();
    let mut conv_src = state.velocity.clone();
    for sweep in 0..=params.picard_iters {
        if sweep > 0 {
            conv_src = u_hat.clone();
        }
        let conv = grid::convect(&conv_src, g, params.upwind_blend)?;
        if params.implicit_diffusion {
            // (rho/dt - mu L) u* = rho u^n/dt - rho conv - grad p + f
            let mut rhs = state.velocity.clone();
            rhs.scale(rho / dt);
            rhs.axpy(-rho, &conv);
            rhs.axpy(-1.0, &gradp);
            if let Some(f) = extra_force {
                rhs.axpy(1.0, f);
            }
            u_hat = solve_helmholtz(ctx, g, rho / dt, mu, &rhs)?;
        } else {
            let lap = grid::laplacian(&state.velocity, g)?;
            u_hat = state.velocity.clone();
            u_hat.axpy(-dt, &conv);
            u_hat.axpy(dt * mu / rho, &lap);
            u_hat.axpy(-dt / rho, &gradp);
            if let Some(f) = extra_force {
                u_hat.axpy(dt / rho, f);
            }
        }
        enforce_velocity_bc(&mut u_hat, g);
    }
    u_hat.assert_finite("predictor");
    Ok(u_hat)
}

/// Solve `(alpha - mu L) u = rhs` per component with BC-aware closures.
fn solve_helmholtz(
    ctx: &SolverContext,
    g: &GridSpec,
    alpha: f64,
    mu: f64,
    rhs: &FaceField,
) -> Result<FaceField> {
    let mut out = FaceField::zeros(g, FaceQuantity::Velocity);

    // u component
    {
        let comp = &ctx.helmholtz_u;
        let mut mat = DMatrix::zeros(comp.nx_un, comp.ny_un);
        for jj in 0..comp.ny_un {
            for ii in 0..comp.nx_un {
                mat[(ii, jj)] = rhs.u_at(comp.x0 + ii, comp.y0 + jj);
            }
        }
        // boundary contributions of eliminated Dirichlet neighbors
        if let AxisKind::Normal { lo_dirichlet, hi_dirichlet } = comp.x_kind {
            for jj in 0..comp.ny_un {
                if lo_dirichlet {
                    let bu = dirichlet_u(g.bc.left);
                    mat[(0, jj)] += mu * bu / (g.dx * g.dx);
                }
                if hi_dirichlet {
                    let bu = dirichlet_u(g.bc.right);
                    mat[(comp.nx_un - 1, jj)] += mu * bu / (g.dx * g.dx);
                }
            }
        }
        if let AxisKind::Tangential { lo_dirichlet, hi_dirichlet } = comp.y_kind {
            for ii in 0..comp.nx_un {
                if lo_dirichlet {
                    let bu = dirichlet_u(g.bc.bottom);
                    mat[(ii, 0)] += 2.0 * mu * bu / (g.dy * g.dy);
                }
                if hi_dirichlet {
                    let bu = dirichlet_u(g.bc.top);
                    mat[(ii, comp.ny_un - 1)] += 2.0 * mu * bu / (g.dy * g.dy);
                }
            }
        }
        let sol = comp.op.solve_shifted(alpha, -mu, &mat, 0.0);
        for jj in 0..comp.ny_un {
            for ii in 0..comp.nx_un {
                out.set_u(comp.x0 + ii, comp.y0 + jj, sol[(ii, jj)]);
            }
        }
    }

    // v component
    {
        let comp = &ctx.helmholtz_v;
        let mut mat = DMatrix::zeros(comp.nx_un, comp.ny_un);
        for jj in 0..comp.ny_un {
            for ii in 0..comp.nx_un {
                mat[(ii, jj)] = rhs.v_at(comp.x0 + ii, comp.y0 + jj);
            }
        }
        if let AxisKind::Tangential { lo_dirichlet, hi_dirichlet } = comp.x_kind {
            for jj in 0..comp.ny_un {
                if lo_dirichlet {
                    let bv = dirichlet_v(g.bc.left);
                    mat[(0, jj)] += 2.0 * mu * bv / (g.dx * g.dx);
                }
                if hi_dirichlet {
                    let bv = dirichlet_v(g.bc.right);
                    mat[(comp.nx_un - 1, jj)] += 2.0 * mu * bv / (g.dx * g.dx);
                }
            }
        }
        if let AxisKind::Normal { lo_dirichlet, hi_dirichlet } = comp.y_kind {
            for ii in 0..comp.nx_un {
                if lo_dirichlet {
                    let bv = dirichlet_v(g.bc.bottom);
                    mat[(ii, 0)] += mu * bv / (g.dy * g.dy);
                }
                if hi_dirichlet {
                    let bv = dirichlet_v(g.bc.top);
                    mat[(ii, comp.ny_un - 1)] += mu * bv / (g.dy * g.dy);
                }
            }
        }
        let sol = comp.op.solve_shifted(alpha, -mu, &mat, 0.0);
        for jj in 0..comp.ny_un {
            for ii in 0..comp.nx_un {
                out.set_v(comp.x0 + ii, comp.y0 + jj, sol[(ii, jj)]);
            }
        }
    }
    enforce_velocity_bc(&mut out, g);
    Ok(out)
}

fn normalize_bc(bc: VelocityBc) -> VelocityBc {
    bc
}

fn dirichlet_u(bc: VelocityBc) -> f64 {
    match bc {
        VelocityBc::Inflow { u, .. } => u,
        _ => 0.0,
    }
}

fn dirichlet_v(bc: VelocityBc) -> f64 {
    match bc {
        VelocityBc::Inflow { v, .. } => v,
        _ => 0.0,
    }
}

/// Chorin-type pressure projection in pressure-increment form.
pub fn project(
    u_hat: &mut FaceField,
    state: &mut FluidState,
    params: &NsParams,
    ctx: &SolverContext,
    dt: f64,
) -> Result<f64> {
    let g = &ctx.grid;
    let div = divergence(u_hat, g)?;
    let mut rhs = div;
    rhs.data.iter_mut().for_each(|v| *v *= state.rho_f / dt);
    let sol = ctx.poisson.solve_with_tol(&rhs, g, params.tol_poisson)?;
    let gradphi = grid::gradient(&sol.field, g)?;
    u_hat.axpy(-dt / state.rho_f, &gradphi);
    enforce_velocity_bc(u_hat, g);
    for (p, phi) in state.pressure.data.iter_mut().zip(&sol.field.data) {
        *p += phi;
    }
    Ok(sol.residual)
}

fn interp_at(
    vel: &FaceField,
    markers: &MarkerSet,
    kernel: &KernelChoice,
    mask: Option<&dyn Fn(f64, f64) -> f64>,
    g: &GridSpec,
) -> Result<Vec<(f64, f64)>> {
    match kernel {
        KernelChoice::Delta(k) => interpolate(vel, markers, *k, g),
        KernelChoice::Mls { cfg, .. } => {
            let all = |_: f64, _: f64| 1.0;
            let mask_fn: &dyn Fn(f64, f64) -> f64 = mask.unwrap_or(&all);
            mls_interpolate(vel, markers, cfg, mask_fn, g)
        }
    }
}

/// Lab-frame deformation velocity at markers.
fn deformation_velocity(
    state: &RigidState,
    deformation: Option<&DeformationKinematics>,
    markers: &MarkerSet,
    t: f64,
) -> Vec<(f64, f64)> {
    match deformation {
        None => vec![(0.0, 0.0); markers.len()],
        Some(d) => markers
            .body_coords
            .iter()
            .map(|r| rot(state.theta, d.eval(*r, t)))
            .collect(),
    }
}

/// Advance one step with the configured coupling scheme.
pub fn step(
    state: &mut FluidState,
    bodies: &mut [SimBody],
    cfg: &ConstraintConfig,
    params: &NsParams,
    ctx: &SolverContext,
    dt: f64,
) -> Result<StepReport> {
    cfg.validate()?;
    let g = ctx.grid.clone();
    let mut trace = vec![StepEvent::CflChecked];
    cfl_check(state, &g, params, dt)?;
    let t_new = state.t + dt;
    let rho = state.rho_f;
    let mut diags: Vec<BodyDiag> = Vec::with_capacity(bodies.len());
    let mut poisson_residual = 0.0;

    match &cfg.scheme {
        SchemeKind::IbmElastic => {
            // elastic multiplier at the current configuration
            let mut force = FaceField::zeros(&g, FaceQuantity::Force);
            let mut lambdas = Vec::new();
            for body in bodies.iter() {
                let el = match &body.dynamics {
                    BodyDynamics::Fiber { elasticity } => elasticity,
                    _ => {
                        return Err(IbfdError::config(
                            "the elastic scheme needs fiber bodies",
                        ))
                    }
                };
                let values = ibm_elastic_lambda(&body.markers, el, state.t)?;
                let lf = LambdaField::build(values, &body.markers, body.center(), &cfg.kernel, None, &g)?;
                force.axpy(1.0, &lf.image);
                lambdas.push(lf);
            }
            trace.push(StepEvent::ElasticLambda);

            let mut u_hat = predictor(state, Some(&force), params, ctx, dt)?;
            trace.push(StepEvent::Predictor {
                implicit: params.implicit_diffusion,
                picard: params.picard_iters,
            });
            poisson_residual = project(&mut u_hat, state, params, ctx, dt)?;
            trace.push(StepEvent::PressureProjection);
            state.velocity = u_hat;

            // impose the constraint: markers follow the interpolated velocity
            trace.push(StepEvent::ConstraintInterpolate);
            for (body, lf) in bodies.iter_mut().zip(lambdas) {
                let uv = interp_at(&state.velocity, &body.markers, &cfg.kernel, None, &g)?;
                for (pos, v) in body.markers.positions.iter_mut().zip(&uv) {
                    pos.0 += dt * v.0;
                    pos.1 += dt * v.1;
                }
                diags.push(BodyDiag {
                    net_lambda_force: lf.net_force,
                    net_lambda_torque: lf.net_torque,
                    max_lambda: lf.max_magnitude,
                    hydro_force: None,
                    hydro_torque: None,
                    slip: None,
                    xc: body.center(),
                    theta: 0.0,
                    u: (0.0, 0.0),
                    omega: 0.0,
                });
            }
            trace.push(StepEvent::MarkerAdvect);
        }

        SchemeKind::FdmFts => {
            let mut u_hat = predictor(state, None, params, ctx, dt)?;
            trace.push(StepEvent::Predictor {
                implicit: params.implicit_diffusion,
                picard: params.picard_iters,
            });
            trace.push(StepEvent::ConstraintInterpolate);
            let mut lambdas: Vec<LambdaField> = Vec::new();
            for body in bodies.iter_mut() {
                let (state_b, motion, deformation) = match &body.dynamics {
                    BodyDynamics::Rigid { state, motion, deformation } => {
                        (state.clone(), *motion, deformation.clone())
                    }
                    _ => return Err(IbfdError::config("the fictitious-domain scheme needs rigid bodies")),
                };
                let u_hat_m = interp_at(&u_hat, &body.markers, &cfg.kernel, None, &g)?;
                let u_def = deformation_velocity(&state_b, deformation.as_ref(), &body.markers, t_new);
                let values = match motion {
                    RigidMotion::Prescribed => {
                        let u_s = solid_velocity(&state_b, deformation.as_ref(), &body.markers, t_new);
                        direct_forcing_lambda(&u_hat_m, &u_s, rho / dt)
                    }
                    RigidMotion::Free => {
                        let mismatch = if (state_b.rho_s - rho).abs() > 1e-12 * rho {
                            let v = body.markers.total_weight();
                            let im: f64 = body
                                .markers
                                .positions
                                .iter()
                                .zip(&body.markers.weights)
                                .map(|(p, dv)| {
                                    let r = (p.0 - state_b.xc.0, p.1 - state_b.xc.1);
                                    (r.0 * r.0 + r.1 * r.1) * dv
                                })
                                .sum();
                            Some(InertiaMismatch {
                                delta_mass: (state_b.rho_s - rho) * v,
                                delta_inertia: (state_b.rho_s - rho) * im,
                                u_old: state_b.u,
                                omega_old: state_b.omega,
                                gravity: params.gravity,
                            })
                        } else {
                            None
                        };
                        let solve = fdm_rigid_solve(
                            &u_hat_m,
                            &u_def,
                            &body.markers,
                            state_b.xc,
                            rho,
                            dt,
                            body.external,
                            mismatch,
                        )?;
                        if let BodyDynamics::Rigid { state, .. } = &mut body.dynamics {
                            state.u = solve.u_new;
                            state.omega = solve.omega_new;
                        }
                        solve.lambda
                    }
                };
                let center = body.rigid_state().map(|s| s.xc).unwrap_or((0.0, 0.0));
                lambdas.push(LambdaField::build(values, &body.markers, center, &cfg.kernel, None, &g)?);
            }
            trace.push(StepEvent::RigidSolve);
            for lf in &lambdas {
                constraint_project(&mut u_hat, lf, rho, dt);
            }
            enforce_velocity_bc(&mut u_hat, &g);
            trace.push(StepEvent::ConstraintProjection);
            poisson_residual = project(&mut u_hat, state, params, ctx, dt)?;
            trace.push(StepEvent::PressureProjection);
            state.velocity = u_hat;
            finish_rigid_step(state, bodies, cfg, params, ctx, dt, t_new, &lambdas, &mut diags, &mut trace)?;
        }

        SchemeKind::DirectForcing { kappa } => {
            let kappa = kappa.unwrap_or(rho / dt);
            let mut u_hat = predictor(state, None, params, ctx, dt)?;
            trace.push(StepEvent::Predictor {
                implicit: params.implicit_diffusion,
                picard: params.picard_iters,
            });
            trace.push(StepEvent::ConstraintInterpolate);
            let mut lambdas: Vec<LambdaField> = Vec::new();
            for body in bodies.iter() {
                let (state_b, deformation) = match &body.dynamics {
                    BodyDynamics::Rigid { state, deformation, .. } => (state, deformation.clone()),
                    _ => return Err(IbfdError::config("direct forcing needs rigid bodies")),
                };
                let u_hat_m = interp_at(&u_hat, &body.markers, &cfg.kernel, None, &g)?;
                let u_s = solid_velocity(state_b, deformation.as_ref(), &body.markers, t_new);
                let values = direct_forcing_lambda(&u_hat_m, &u_s, kappa);
                lambdas.push(LambdaField::build(
                    values,
                    &body.markers,
                    state_b.xc,
                    &cfg.kernel,
                    None,
                    &g,
                )?);
            }
            trace.push(StepEvent::DirectForcingLambda);
            for lf in &lambdas {
                constraint_project(&mut u_hat, lf, rho, dt);
            }
            enforce_velocity_bc(&mut u_hat, &g);
            trace.push(StepEvent::ConstraintProjection);
            poisson_residual = project(&mut u_hat, state, params, ctx, dt)?;
            trace.push(StepEvent::PressureProjection);
            state.velocity = u_hat;
            finish_rigid_step(state, bodies, cfg, params, ctx, dt, t_new, &lambdas, &mut diags, &mut trace)?;
        }

        SchemeKind::Brinkman { kappa } => {
            let kappa = kappa.unwrap_or(rho / dt);
            // chi-masked Eulerian forcing evaluated at u^n
            let mut force = FaceField::zeros(&g, FaceQuantity::Force);
            let mut lambdas: Vec<LambdaField> = Vec::new();
            for body in bodies.iter() {
                let state_b = match &body.dynamics {
                    BodyDynamics::Rigid { state, .. } => state,
                    _ => return Err(IbfdError::config("Brinkman penalization needs rigid bodies")),
                };
                let ls = level_set(&body.shape, state_b.xc, state_b.theta, &g)?;
                let chi = ls.chi_smoothed();
                let mut values = Vec::new();
                let mut cells = Vec::new();
                let mut cell_weights = Vec::new();
                for j in 0..g.ny {
                    for i in 0..g.nx {
                        let c = chi.at(i, j);
                        if c > 0.0 {
                            cells.push((g.xc(i), g.yc(j)));
                            cell_weights.push(c * g.cell_area());
                        }
                    }
                }
                // face-sampled penalty force
                for j in 0..g.ny {
                    for i in 0..=g.nx {
                        let (x, y) = (g.xu(i), g.yu(j));
                        let c = chi_face(&ls, x, y, g.dx);
                        if c > 0.0 {
                            let r = (x - state_b.xc.0, y - state_b.xc.1);
                            let us = state_b.u.0 - state_b.omega * r.1;
                            let f = kappa * c * (us - state.velocity.u_at(i, j));
                            force.u[force.iu(i, j)] += f;
                        }
                    }
                }
                for j in 0..=g.ny {
                    for i in 0..g.nx {
                        let (x, y) = (g.xv(i), g.yv(j));
                        let c = chi_face(&ls, x, y, g.dx);
                        if c > 0.0 {
                            let r = (x - state_b.xc.0, y - state_b.xc.1);
                            let vs = state_b.u.1 + state_b.omega * r.0;
                            let f = kappa * c * (vs - state.velocity.v_at(i, j));
                            force.v[force.iv(i, j)] += f;
                        }
                    }
                }
                // lambda diagnostics from the chi cells against u^n
                for ((x, y), _) in cells.iter().zip(&cell_weights) {
                    let r = (x - state_b.xc.0, y - state_b.xc.1);
                    let us = (state_b.u.0 - state_b.omega * r.1, state_b.u.1 + state_b.omega * r.0);
                    // cell-centered fluid velocity by face averaging
                    let (i, j) = cell_of(&g, *x, *y);
                    let uf = (
                        0.5 * (state.velocity.u_at(i, j) + state.velocity.u_at(i + 1, j)),
                        0.5 * (state.velocity.v_at(i, j) + state.velocity.v_at(i, j + 1)),
                    );
                    values.push((kappa * (us.0 - uf.0), kappa * (us.1 - uf.1)));
                }
                let pseudo = MarkerSet {
                    positions: cells,
                    body_coords: Vec::new(),
                    weights: cell_weights,
                    role: crate::kernels::MarkerRole::Volume,
                };
                let mut net = (0.0, 0.0);
                let mut torque = 0.0;
                let mut max_mag = 0.0f64;
                for (v, (pos, dv)) in values
                    .iter()
                    .zip(pseudo.positions.iter().zip(&pseudo.weights))
                {
                    net.0 += v.0 * dv;
                    net.1 += v.1 * dv;
                    torque += crate::body::cross((pos.0 - state_b.xc.0, pos.1 - state_b.xc.1), *v) * dv;
                    max_mag = max_mag.max((v.0 * v.0 + v.1 * v.1).sqrt());
                }
                lambdas.push(LambdaField {
                    values,
                    image: FaceField::zeros(&g, FaceQuantity::Force),
                    net_force: net,
                    net_torque: torque,
                    max_magnitude: max_mag,
                });
            }
            trace.push(StepEvent::BrinkmanForcing);
            let mut u_hat = predictor(state, Some(&force), params, ctx, dt)?;
            trace.push(StepEvent::Predictor {
                implicit: params.implicit_diffusion,
                picard: params.picard_iters,
            });
            poisson_residual = project(&mut u_hat, state, params, ctx, dt)?;
            trace.push(StepEvent::PressureProjection);
            state.velocity = u_hat;
            finish_rigid_step(state, bodies, cfg, params, ctx, dt, t_new, &lambdas, &mut diags, &mut trace)?;
        }

        SchemeKind::Penalty { k, c } => {
            if cfg.locus != ConstraintLocus::Surface {
                return Err(IbfdError::config("penalty forcing requires surface markers"));
            }
            trace.push(StepEvent::ConstraintInterpolate);
            let mut lambdas: Vec<LambdaField> = Vec::new();
            let mut force = FaceField::zeros(&g, FaceQuantity::Force);
            for body in bodies.iter() {
                let reference = match &body.dynamics {
                    BodyDynamics::Tracked { reference } => reference.clone(),
                    _ => return Err(IbfdError::config("penalty forcing needs tracked bodies")),
                };
                let (x_ref, u_ref) = reference(t_new);
                let uf = interp_at(&state.velocity, &body.markers, &cfg.kernel, None, &g)?;
                let values = penalty_lambda(&body.markers.positions, &x_ref, &uf, &u_ref, *k, *c);
                let lf = LambdaField::build(values, &body.markers, body.center(), &cfg.kernel, None, &g)?;
                force.axpy(1.0, &lf.image);
                lambdas.push(lf);
            }
            trace.push(StepEvent::PenaltyLambda);
            let mut u_hat = predictor(state, Some(&force), params, ctx, dt)?;
            trace.push(StepEvent::Predictor {
                implicit: params.implicit_diffusion,
                picard: params.picard_iters,
            });
            poisson_residual = project(&mut u_hat, state, params, ctx, dt)?;
            trace.push(StepEvent::PressureProjection);
            state.velocity = u_hat;
            // markers ride the fluid so the spring stretch is meaningful
            for (body, lf) in bodies.iter_mut().zip(&lambdas) {
                let uv = interp_at(&state.velocity, &body.markers, &cfg.kernel, None, &g)?;
                let mut slip = 0.0f64;
                let (_, u_ref) = match &body.dynamics {
                    BodyDynamics::Tracked { reference } => reference(t_new),
                    _ => unreachable!(),
                };
                for ((pos, v), ur) in body.markers.positions.iter_mut().zip(&uv).zip(&u_ref) {
                    pos.0 += dt * v.0;
                    pos.1 += dt * v.1;
                    slip = slip.max(((v.0 - ur.0).powi(2) + (v.1 - ur.1).powi(2)).sqrt());
                }
                diags.push(BodyDiag {
                    net_lambda_force: lf.net_force,
                    net_lambda_torque: lf.net_torque,
                    max_lambda: lf.max_magnitude,
                    hydro_force: None,
                    hydro_torque: None,
                    slip: Some(slip),
                    xc: body.center(),
                    theta: 0.0,
                    u: (0.0, 0.0),
                    omega: 0.0,
                });
            }
            trace.push(StepEvent::MarkerAdvect);
        }
    }

    state.t = t_new;
    let div = divergence(&state.velocity, &ctx.grid)?;
    Ok(StepReport {
        trace,
        max_div: div.max_abs(),
        kinetic_energy: grid::kinetic_energy(&state.velocity, &ctx.grid, state.rho_f),
        bodies: diags,
        poisson_residual,
    })
}

/// Post-solve body updates shared by the rigid schemes: momentum history,
/// free-body velocity updates (forcing schemes), pose advance, and
/// diagnostics.
#[allow(clippy::too_many_arguments)]
fn finish_rigid_step(
    state: &FluidState,
    bodies: &mut [SimBody],
    cfg: &ConstraintConfig,
    params: &NsParams,
    ctx: &SolverContext,
    dt: f64,
    t_new: f64,
    lambdas: &[LambdaField],
    diags: &mut Vec<BodyDiag>,
    trace: &mut Vec<StepEvent>,
) -> Result<()> {
    let g = &ctx.grid;
    let rho = state.rho_f;
    let mut any_free_forcing = false;
    for (body, lf) in bodies.iter_mut().zip(lambdas) {
        let (state_b, motion, deformation) = match &body.dynamics {
            BodyDynamics::Rigid { state, motion, deformation } => {
                (state.clone(), *motion, deformation.clone())
            }
            _ => unreachable!("rigid scheme with non-rigid body"),
        };

        // momentum of the fictitious fluid inside the body, by marker quadrature
        let (p_lin, p_ang) = if body.markers.role == crate::kernels::MarkerRole::Volume
            && !body.markers.is_empty()
        {
            let uv = interp_at(&state.velocity, &body.markers, &cfg.kernel, None, g)?;
            let mut p = (0.0, 0.0);
            let mut l = 0.0;
            for ((v, dv), pos) in uv.iter().zip(&body.markers.weights).zip(&body.markers.positions) {
                p.0 += rho * v.0 * dv;
                p.1 += rho * v.1 * dv;
                l += rho * crate::body::cross((pos.0 - state_b.xc.0, pos.1 - state_b.xc.1), *v) * dv;
            }
            (p, l)
        } else {
            // chi-cell quadrature for surface loci and Brinkman
            let ls = level_set(&body.shape, state_b.xc, state_b.theta, g)?;
            let chi = ls.chi_sharp();
            let mut p = (0.0, 0.0);
            let mut l = 0.0;
            for j in 0..g.ny {
                for i in 0..g.nx {
                    if chi.at(i, j) > 0.0 {
                        let uc = 0.5 * (state.velocity.u_at(i, j) + state.velocity.u_at(i + 1, j));
                        let vc = 0.5 * (state.velocity.v_at(i, j) + state.velocity.v_at(i, j + 1));
                        let da = g.cell_area();
                        p.0 += rho * uc * da;
                        p.1 += rho * vc * da;
                        l += rho
                            * crate::body::cross(
                                (g.xc(i) - state_b.xc.0, g.yc(j) - state_b.xc.1),
                                (uc, vc),
                            )
                            * da;
                    }
                }
            }
            (p, l)
        };
        body.history.push(t_new, p_lin, p_ang);

        let mut hydro = None;
        let mut hydro_t = None;
        if motion == RigidMotion::Free {
            if matches!(cfg.scheme, SchemeKind::DirectForcing { .. } | SchemeKind::Brinkman { .. }) {
                // velocity forcing: update rigid velocities from the net
                // hydrodynamic load
                if let Ok(((fx, fy), tq)) =
                    net_force_torque(&body.history, lf.net_force, lf.net_torque)
                {
                    hydro = Some((fx, fy));
                    hydro_t = Some(tq);
                    if let BodyDynamics::Rigid { state: sb, .. } = &mut body.dynamics {
                        update_free_body(
                            sb,
                            (fx, fy),
                            tq,
                            body.external,
                            params.gravity,
                            dt,
                            params.body_integrator,
                            &mut body.history,
                        );
                        any_free_forcing = true;
                    }
                }
            } else {
                // FDM already solved the velocities; report the load anyway
                if let Ok((f, tq)) = net_force_torque(&body.history, lf.net_force, lf.net_torque) {
                    hydro = Some(f);
                    hydro_t = Some(tq);
                }
            }
        }

        // slip diagnostic against the target solid velocity
        let uv = interp_at(&state.velocity, &body.markers, &cfg.kernel, None, g)?;
        let (st, def) = match &body.dynamics {
            BodyDynamics::Rigid { state, deformation, .. } => (state.clone(), deformation.clone()),
            _ => unreachable!(),
        };
        let us = solid_velocity(&st, def.as_ref(), &body.markers, t_new);
        let slip = uv
            .iter()
            .zip(&us)
            .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
            .fold(0.0f64, f64::max);

        // advance the pose with the (possibly updated) velocities
        let halfwidth = cfg.kernel.half_width();
        if let BodyDynamics::Rigid { state: sb, deformation, .. } = &mut body.dynamics {
            advance_body(
                sb,
                &mut body.markers,
                deformation.as_ref(),
                state.t,
                dt,
                params.pose_integrator,
                Some((g, halfwidth)),
            )?;
        }
        let st = body.rigid_state().unwrap().clone();
        diags.push(BodyDiag {
            net_lambda_force: lf.net_force,
            net_lambda_torque: lf.net_torque,
            max_lambda: lf.max_magnitude,
            hydro_force: hydro,
            hydro_torque: hydro_t,
            slip: Some(slip),
            xc: st.xc,
            theta: st.theta,
            u: st.u,
            omega: st.omega,
        });
        let _ = deformation;
    }
    if any_free_forcing {
        trace.push(StepEvent::FreeBodyUpdate);
    }
    trace.push(StepEvent::BodyAdvance);
    Ok(())
}

fn chi_face(ls: &crate::body::LevelSet, x: f64, y: f64, h: f64) -> f64 {
    (0.5 - ls.eval(x, y) / h).clamp(0.0, 1.0)
}

fn cell_of(g: &GridSpec, x: f64, y: f64) -> (usize, usize) {
    let i = (((x - g.origin.0) / g.dx - 0.5).round() as i64).clamp(0, g.nx as i64 - 1) as usize;
    let j = (((y - g.origin.1) / g.dy - 0.5).round() as i64).clamp(0, g.ny as i64 - 1) as usize;
    (i, j)
}

/// Step without bodies: predictor plus projection.
pub fn step_unconstrained(
    state: &mut FluidState,
    extra_force: Option<&FaceField>,
    params: &NsParams,
    ctx: &SolverContext,
    dt: f64,
) -> Result<StepReport> {
    cfl_check(state, &ctx.grid, params, dt)?;
    let mut trace = vec![StepEvent::CflChecked];
    let mut u_hat = predictor(state, extra_force, params, ctx, dt)?;
    trace.push(StepEvent::Predictor {
        implicit: params.implicit_diffusion,
        picard: params.picard_iters,
    });
    let res = project(&mut u_hat, state, params, ctx, dt)?;
    trace.push(StepEvent::PressureProjection);
    state.velocity = u_hat;
    state.t += dt;
    let div = divergence(&state.velocity, &ctx.grid)?;
    Ok(StepReport {
        trace,
        max_div: div.max_abs(),
        kinetic_energy: grid::kinetic_energy(&state.velocity, &ctx.grid, state.rho_f),
        bodies: Vec::new(),
        poisson_residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SideBcs;
    use std::f64::consts::PI;

    fn taylor_green(g: &GridSpec, nu: f64, t: f64) -> FaceField {
        let decay = (-8.0 * PI * PI * nu * t).exp();
        FaceField::from_fn(
            g,
            FaceQuantity::Velocity,
            |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).cos() * decay,
            |x, y| -(2.0 * PI * x).cos() * (2.0 * PI * y).sin() * decay,
        )
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = GridSpec::unit_box(16, 16, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
        let ctx = SolverContext::new(&g);
        let mut state = FluidState::quiescent(&g, 1.0, 0.01).unwrap();
        let params = NsParams::default();
        let rep = step_unconstrained(&mut state, None, &params, &ctx, 1e-3).unwrap();
        assert!(state.velocity.max_abs() == 0.0);
        assert!(rep.max_div == 0.0);
    }

    #[test]
    fn uniform_periodic_flow_is_invariant() {
        let g = GridSpec::unit_box(16, 16, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
        let ctx = SolverContext::new(&g);
        let mut state = FluidState::quiescent(&g, 1.0, 0.01).unwrap();
        state.velocity = FaceField::from_fn(&g, FaceQuantity::Velocity, |_, _| 0.7, |_, _| -0.3);
        let params = NsParams::default();
        step_unconstrained(&mut state, None, &params, &ctx, 1e-3).unwrap();
        for u in &state.velocity.u {
            assert!((u - 0.7).abs() < 1e-12);
        }
        for v in &state.velocity.v {
            assert!((v + 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_green_single_step_accuracy() {
        let nu = 0.02;
        let g = GridSpec::unit_box(64, 64, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
        let ctx = SolverContext::new(&g);
        let mut state = FluidState::quiescent(&g, 1.0, nu).unwrap();
        state.velocity = taylor_green(&g, nu, 0.0);
        let params = NsParams::default();
        let dt = 2e-4;
        step_unconstrained(&mut state, None, &params, &ctx, dt).unwrap();
        let exact = taylor_green(&g, nu, dt);
        let mut err = 0.0f64;
        for (a, b) in state.velocity.u.iter().zip(&exact.u) {
            err = err.max((a - b).abs());
        }
        // one first-order step: O(dt^2) + O(dt h^2)
        assert!(err < 5.0 * (dt * dt + dt / 64.0f64.powi(2)), "err {err}");
    }

    #[test]
    fn taylor_green_spatial_convergence() {
        let nu = 0.02;
        let t_end = 0.05;
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let g = GridSpec::unit_box(n, n, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
            let ctx = SolverContext::new(&g);
            let mut state = FluidState::quiescent(&g, 1.0, nu).unwrap();
            state.velocity = taylor_green(&g, nu, 0.0);
            let params = NsParams::default();
            // dt scales with h^2 through the viscous limit
            let dt_max = 0.9 * params.cfl_viscous * g.dx * g.dx / nu;
            let steps = (t_end / dt_max).ceil() as usize;
            let dt = t_end / steps as f64;
            for _ in 0..steps {
                step_unconstrained(&mut state, None, &params, &ctx, dt).unwrap();
            }
            let exact = taylor_green(&g, nu, t_end);
            let mut l2 = 0.0;
            let mut cnt = 0.0;
            for (a, b) in state.velocity.u.iter().zip(&exact.u) {
                l2 += (a - b).powi(2);
                cnt += 1.0;
            }
            errs.push((l2 / cnt).sqrt());
        }
        let order = (errs[1] / errs[2]).log2();
        assert!((order - 2.0).abs() < 0.35, "order {order}, errs {errs:?}");
    }

    #[test]
    fn implicit_diffusion_matches_explicit_at_small_dt() {
        let nu = 0.05;
        let g = GridSpec::unit_box(32, 32, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
        let ctx = SolverContext::new(&g);
        let params_ex = NsParams::default();
        let params_im = NsParams {
            implicit_diffusion: true,
            ..NsParams::default()
        };
        let dt = 1e-5;
        let mut s1 = FluidState::quiescent(&g, 1.0, nu).unwrap();
        s1.velocity = taylor_green(&g, nu, 0.0);
        let mut s2 = s1.clone();
        step_unconstrained(&mut s1, None, &params_ex, &ctx, dt).unwrap();
        step_unconstrained(&mut s2, None, &params_im, &ctx, dt).unwrap();
        let mut diff = 0.0f64;
        for (a, b) in s1.velocity.u.iter().zip(&s2.velocity.u) {
            diff = diff.max((a - b).abs());
        }
        // schemes differ at O(dt^2 nu L u)
        assert!(diff < 1e-6, "diff {diff}");
    }

    #[test]
    fn implicit_diffusion_heat_decay_on_channel() {
        // u(y, t) = sin(pi y) exp(-nu pi^2 t) between no-slip walls
        let nu = 0.1;
        let bc = SideBcs {
            left: VelocityBc::Periodic,
            right: VelocityBc::Periodic,
            bottom: VelocityBc::NoSlipWall,
            top: VelocityBc::NoSlipWall,
        };
        let g = GridSpec::unit_box(32, 32, 1.0, 1.0, bc).unwrap();
        let ctx = SolverContext::new(&g);
        let mut state = FluidState::quiescent(&g, 1.0, nu).unwrap();
        state.velocity = FaceField::from_fn(&g, FaceQuantity::Velocity, |_, y| (PI * y).sin(), |_, _| 0.0);
        let params = NsParams {
            implicit_diffusion: true,
            ..NsParams::default()
        };
        let dt = 2e-3;
        let t_end = 0.1;
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            step_unconstrained(&mut state, None, &params, &ctx, dt).unwrap();
        }
        let decay = (-nu * PI * PI * t_end).exp();
        let mut err = 0.0f64;
        for j in 0..g.ny {
            for i in 0..=g.nx {
                let exact = (PI * g.yu(j)).sin() * decay;
                err = err.max((state.velocity.u_at(i, j) - exact).abs());
            }
        }
        // first-order-in-time splitting plus ghost closure: a few percent
        assert!(err < 0.02, "err {err}");
    }

    #[test]
    fn cfl_violation_reports_suggestion() {
        let g = GridSpec::unit_box(16, 16, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
        let ctx = SolverContext::new(&g);
        let mut state = FluidState::quiescent(&g, 1.0, 0.01).unwrap();
        state.velocity = FaceField::from_fn(&g, FaceQuantity::Velocity, |_, _| 10.0, |_, _| 0.0);
        let params = NsParams::default();
        let err = step_unconstrained(&mut state, None, &params, &ctx, 0.1);
        match err {
            Err(IbfdError::CflViolation { suggested, .. }) => assert!(suggested > 0.0),
            other => panic!("expected CFL violation, got {other:?}"),
        }
    }

    #[test]
    fn momentum_conserved_per_step_periodic() {
        let g = GridSpec::unit_box(24, 24, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
        let ctx = SolverContext::new(&g);
        let mut state = FluidState::quiescent(&g, 1.2, 0.01).unwrap();
        state.velocity = taylor_green(&g, 0.01, 0.0);
        // add a mean drift so momentum is nonzero
        state.velocity.u.iter_mut().for_each(|u| *u += 0.3);
        let params = NsParams::default();
        let mom_before = momentum(&state, &g);
        step_unconstrained(&mut state, None, &params, &ctx, 5e-4).unwrap();
        let mom_after = momentum(&state, &g);
        assert!((mom_before.0 - mom_after.0).abs() < 1e-12, "{mom_before:?} {mom_after:?}");
        assert!((mom_before.1 - mom_after.1).abs() < 1e-12);
    }

    fn momentum(state: &FluidState, g: &GridSpec) -> (f64, f64) {
        let mut mx = 0.0;
        let mut my = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                mx += state.velocity.u_at(i, j);
            }
        }
        for j in 0..g.ny {
            for i in 0..g.nx {
                my += state.velocity.v_at(i, j);
            }
        }
        (mx * state.rho_f * g.cell_area(), my * state.rho_f * g.cell_area())
    }

    #[test]
    fn projection_annihilates_gradient_fields() {
        let g = GridSpec::unit_box(24, 24, 1.0, 1.0, SideBcs::all_periodic()).unwrap();
        let ctx = SolverContext::new(&g);
        let mut state = FluidState::quiescent(&g, 1.0, 0.0).unwrap();
        let psi = CellField::from_fn(&g, crate::grid::CellQuantity::Pressure, |x, y| {
            (2.0 * PI * x).sin() * (4.0 * PI * y).cos()
        });
        let mut u_hat = grid::gradient(&psi, &g).unwrap();
        let params = NsParams::default();
        project(&mut u_hat, &mut state, &params, &ctx, 0.01).unwrap();
        assert!(u_hat.max_abs() < 1e-9, "residual velocity {}", u_hat.max_abs());
    }
}
