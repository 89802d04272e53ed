//! Staggered (MAC) Cartesian grid, discrete fields, and the shared
//! difference operators.
//!
//! Layout: pressure and scalars live at cell centers `(i + 1/2, j + 1/2)`,
//! the x velocity component at vertical faces `(i, j + 1/2)`, and the y
//! component at horizontal faces `(i + 1/2, j)`, in units of the spacing.
//! With this layout the divergence of a face field is exact per cell and the
//! cell-to-face gradient is its negative adjoint, which is what keeps one
//! pressure projection enough to drive the divergence to solver tolerance.

use crate::error::{IbfdError, Result};

/// Velocity boundary condition on one side of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityBc {
    /// Stationary no-slip wall (velocity zero on the boundary).
    NoSlipWall,
    /// Prescribed uniform inflow velocity.
    Inflow { u: f64, v: f64 },
    /// Periodic: must be paired with the opposite side.
    Periodic,
    /// Traction-free outflow: zero-gradient velocity, pressure pinned to zero.
    Outflow,
}

impl VelocityBc {
    /// Boundary value pair used for Dirichlet-type ghost closures.
    fn dirichlet_value(&self) -> Option<(f64, f64)> {
        match self {
            VelocityBc::NoSlipWall => Some((0.0, 0.0)),
            VelocityBc::Inflow { u, v } => Some((*u, *v)),
            _ => None,
        }
    }
}

/// One tag per domain side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideBcs {
    pub left: VelocityBc,
    pub right: VelocityBc,
    pub bottom: VelocityBc,
    pub top: VelocityBc,
}

impl SideBcs {
    pub fn all_periodic() -> Self {
        SideBcs {
            left: VelocityBc::Periodic,
            right: VelocityBc::Periodic,
            bottom: VelocityBc::Periodic,
            top: VelocityBc::Periodic,
        }
    }

    pub fn all_walls() -> Self {
        SideBcs {
            left: VelocityBc::NoSlipWall,
            right: VelocityBc::NoSlipWall,
            bottom: VelocityBc::NoSlipWall,
            top: VelocityBc::NoSlipWall,
        }
    }
}

/// Pressure boundary condition implied by the velocity tag of a side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressureBc {
    /// Zero normal pressure gradient (walls and prescribed inflow).
    Neumann,
    /// Pressure pinned to zero on the boundary face (outflow).
    Dirichlet,
    Periodic,
}

impl From<VelocityBc> for PressureBc {
    fn from(bc: VelocityBc) -> Self {
        match bc {
            VelocityBc::NoSlipWall | VelocityBc::Inflow { .. } => PressureBc::Neumann,
            VelocityBc::Periodic => PressureBc::Periodic,
            VelocityBc::Outflow => PressureBc::Dirichlet,
        }
    }
}

/// Geometry and boundary metadata of the staggered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub origin: (f64, f64),
    pub bc: SideBcs,
}

impl GridSpec {
    /// Build a grid, validating cell counts, spacing, and periodic pairing.
    ///
    /// Square cells are required: the transfer kernels assume isotropic
    /// spacing, so anisotropic cells are rejected here rather than failing
    /// quietly later.
    pub fn new(
        nx: usize,
        ny: usize,
        dx: f64,
        dy: f64,
        origin: (f64, f64),
        bc: SideBcs,
    ) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(IbfdError::config(format!(
                "grid must be at least 4x4 cells, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0) || !(dy > 0.0) {
            return Err(IbfdError::config("grid spacing must be positive"));
        }
        if (dx - dy).abs() > 1e-12 * dx.max(dy) {
            return Err(IbfdError::config(format!(
                "anisotropic cells rejected: dx = {dx}, dy = {dy}"
            )));
        }
        let x_pair = (bc.left == VelocityBc::Periodic, bc.right == VelocityBc::Periodic);
        let y_pair = (bc.bottom == VelocityBc::Periodic, bc.top == VelocityBc::Periodic);
        if x_pair.0 != x_pair.1 || y_pair.0 != y_pair.1 {
            return Err(IbfdError::config(
                "periodic boundary tags must appear in matching pairs",
            ));
        }
        Ok(GridSpec {
            nx,
            ny,
            dx,
            dy,
            origin,
            bc,
        })
    }

    /// Grid over `[0, lx] x [0, ly]`.
    pub fn unit_box(nx: usize, ny: usize, lx: f64, ly: f64, bc: SideBcs) -> Result<Self> {
        GridSpec::new(nx, ny, lx / nx as f64, ly / ny as f64, (0.0, 0.0), bc)
    }

    pub fn periodic_x(&self) -> bool {
        self.bc.left == VelocityBc::Periodic
    }

    pub fn periodic_y(&self) -> bool {
        self.bc.bottom == VelocityBc::Periodic
    }

    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    // Coordinate helpers for each stagger location.
    pub fn xc(&self, i: usize) -> f64 {
        self.origin.0 + (i as f64 + 0.5) * self.dx
    }
    pub fn yc(&self, j: usize) -> f64 {
        self.origin.1 + (j as f64 + 0.5) * self.dy
    }
    pub fn xu(&self, i: usize) -> f64 {
        self.origin.0 + i as f64 * self.dx
    }
    pub fn yu(&self, j: usize) -> f64 {
        self.yc(j)
    }
    pub fn xv(&self, i: usize) -> f64 {
        self.xc(i)
    }
    pub fn yv(&self, j: usize) -> f64 {
        self.origin.1 + j as f64 * self.dy
    }

    pub fn pressure_bc(&self) -> [PressureBc; 4] {
        [
            self.bc.left.into(),
            self.bc.right.into(),
            self.bc.bottom.into(),
            self.bc.top.into(),
        ]
    }
}

/// What a cell-centered field holds; used for output naming and sanity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellQuantity {
    Pressure,
    Scalar,
    Divergence,
    Chi,
    LevelSet,
}

/// What a face-centered field holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceQuantity {
    Velocity,
    FluxForcing,
    Gradient,
    Force,
}

/// Scalar field at cell centers, row-major with `i` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
    pub quantity: CellQuantity,
}

impl CellField {
    pub fn zeros(g: &GridSpec, quantity: CellQuantity) -> Self {
        CellField {
            nx: g.nx,
            ny: g.ny,
            data: vec![0.0; g.nx * g.ny],
            quantity,
        }
    }

    pub fn from_fn(g: &GridSpec, quantity: CellQuantity, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut field = CellField::zeros(g, quantity);
        for j in 0..g.ny {
            for i in 0..g.nx {
                field.data[j * g.nx + i] = f(g.xc(i), g.yc(j));
            }
        }
        field
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[j * self.nx + i]
    }

    pub fn conforms(&self, g: &GridSpec) -> bool {
        self.nx == g.nx && self.ny == g.ny
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn assert_finite(&self, context: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value in cell field after {context}"
        );
    }
}

/// Vector field at face centers: `u` on vertical faces, `v` on horizontal.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub quantity: FaceQuantity,
}

impl FaceField {
    pub fn zeros(g: &GridSpec, quantity: FaceQuantity) -> Self {
        FaceField {
            nx: g.nx,
            ny: g.ny,
            u: vec![0.0; (g.nx + 1) * g.ny],
            v: vec![0.0; g.nx * (g.ny + 1)],
            quantity,
        }
    }

    pub fn from_fn(
        g: &GridSpec,
        quantity: FaceQuantity,
        mut fu: impl FnMut(f64, f64) -> f64,
        mut fv: impl FnMut(f64, f64) -> f64,
    ) -> Self {
        let mut f = FaceField::zeros(g, quantity);
        for j in 0..g.ny {
            for i in 0..=g.nx {
                f.u[j * (g.nx + 1) + i] = fu(g.xu(i), g.yu(j));
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                f.v[j * g.nx + i] = fv(g.xv(i), g.yv(j));
            }
        }
        f
    }

    #[inline]
    pub fn iu(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j < self.ny);
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn iv(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn u_at(&self, i: usize, j: usize) -> f64 {
        self.u[j * (self.nx + 1) + i]
    }

    #[inline]
    pub fn v_at(&self, i: usize, j: usize) -> f64 {
        self.v[j * self.nx + i]
    }

    #[inline]
    pub fn set_u(&mut self, i: usize, j: usize, val: f64) {
        let k = j * (self.nx + 1) + i;
        self.u[k] = val;
    }

    #[inline]
    pub fn set_v(&mut self, i: usize, j: usize, val: f64) {
        let k = j * self.nx + i;
        self.v[k] = val;
    }

    pub fn conforms(&self, g: &GridSpec) -> bool {
        self.nx == g.nx && self.ny == g.ny
    }

    pub fn max_abs(&self) -> f64 {
        let mu = self.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mv = self.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        mu.max(mv)
    }

    pub fn assert_finite(&self, context: &str) {
        debug_assert!(
            self.u.iter().chain(self.v.iter()).all(|v| v.is_finite()),
            "non-finite value in face field after {context}"
        );
    }

    /// axpy over both components: `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &FaceField) {
        for (s, o) in self.u.iter_mut().zip(&other.u) {
            *s += a * o;
        }
        for (s, o) in self.v.iter_mut().zip(&other.v) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.u.iter_mut().for_each(|x| *x *= a);
        self.v.iter_mut().for_each(|x| *x *= a);
    }
}

/// Carrier of the extended-domain fluid state.
#[derive(Debug, Clone)]
pub struct FluidState {
    pub velocity: FaceField,
    pub pressure: CellField,
    pub rho_f: f64,
    pub mu_f: f64,
    pub t: f64,
}

impl FluidState {
    pub fn quiescent(g: &GridSpec, rho_f: f64, mu_f: f64) -> Result<Self> {
        if !(rho_f > 0.0) {
            return Err(IbfdError::config("fluid density must be positive"));
        }
        if mu_f < 0.0 {
            return Err(IbfdError::config("fluid viscosity must be non-negative"));
        }
        Ok(FluidState {
            velocity: FaceField::zeros(g, FaceQuantity::Velocity),
            pressure: CellField::zeros(g, CellQuantity::Pressure),
            rho_f,
            mu_f,
            t: 0.0,
        })
    }
}

fn check_face_conformance(f: &FaceField, g: &GridSpec) -> Result<()> {
    if !f.conforms(g) {
        return Err(IbfdError::config(format!(
            "face field ({}x{}) does not conform to grid ({}x{})",
            f.nx, f.ny, g.nx, g.ny
        )));
    }
    Ok(())
}

fn check_cell_conformance(f: &CellField, g: &GridSpec) -> Result<()> {
    if !f.conforms(g) {
        return Err(IbfdError::config(format!(
            "cell field ({}x{}) does not conform to grid ({}x{})",
            f.nx, f.ny, g.nx, g.ny
        )));
    }
    Ok(())
}

/// Second-order MAC divergence, exact per cell.
pub fn divergence(vel: &FaceField, g: &GridSpec) -> Result<CellField> {
    check_face_conformance(vel, g)?;
    let mut div = CellField::zeros(g, CellQuantity::Divergence);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let du = (vel.u_at(i + 1, j) - vel.u_at(i, j)) / g.dx;
            let dv = (vel.v_at(i, j + 1) - vel.v_at(i, j)) / g.dy;
            div.data[j * g.nx + i] = du + dv;
        }
    }
    div.assert_finite("divergence");
    Ok(div)
}

/// Cell-to-face gradient; the negative discrete adjoint of [`divergence`]
/// on interior-supported face fields.
///
/// Boundary faces follow the pressure closure implied by the side tag:
/// zero gradient on Dirichlet-velocity sides, pressure pinned to zero on
/// outflow sides, wraparound on periodic sides.
pub fn gradient(p: &CellField, g: &GridSpec) -> Result<FaceField> {
    check_cell_conformance(p, g)?;
    let mut grad = FaceField::zeros(g, FaceQuantity::Gradient);
    let (nx, ny) = (g.nx, g.ny);
    for j in 0..ny {
        for i in 1..nx {
            grad.set_u(i, j, (p.at(i, j) - p.at(i - 1, j)) / g.dx);
        }
        if g.periodic_x() {
            let wrap = (p.at(0, j) - p.at(nx - 1, j)) / g.dx;
            grad.set_u(0, j, wrap);
            grad.set_u(nx, j, wrap);
        } else {
            let left = match PressureBc::from(g.bc.left) {
                PressureBc::Dirichlet => (p.at(0, j) - 0.0) / (0.5 * g.dx),
                _ => 0.0,
            };
            let right = match PressureBc::from(g.bc.right) {
                PressureBc::Dirichlet => (0.0 - p.at(nx - 1, j)) / (0.5 * g.dx),
                _ => 0.0,
            };
            grad.set_u(0, j, left);
            grad.set_u(nx, j, right);
        }
    }
    for i in 0..nx {
        for j in 1..ny {
            grad.set_v(i, j, (p.at(i, j) - p.at(i, j - 1)) / g.dy);
        }
        if g.periodic_y() {
            let wrap = (p.at(i, 0) - p.at(i, ny - 1)) / g.dy;
            grad.set_v(i, 0, wrap);
            grad.set_v(i, ny, wrap);
        } else {
            let bottom = match PressureBc::from(g.bc.bottom) {
                PressureBc::Dirichlet => (p.at(i, 0) - 0.0) / (0.5 * g.dy),
                _ => 0.0,
            };
            let top = match PressureBc::from(g.bc.top) {
                PressureBc::Dirichlet => (0.0 - p.at(i, ny - 1)) / (0.5 * g.dy),
                _ => 0.0,
            };
            grad.set_v(i, 0, bottom);
            grad.set_v(i, ny, top);
        }
    }
    grad.assert_finite("gradient");
    Ok(grad)
}

/// Ghost value for the tangential velocity component one cell beyond a side.
///
/// Linear extrapolation through the Dirichlet wall value; mirror for
/// outflow. Periodic sides never reach here (they wrap indices instead).
#[inline]
fn tangential_ghost(bc: VelocityBc, interior: f64, component_is_u: bool) -> f64 {
    match bc.dirichlet_value() {
        Some((bu, bv)) => {
            let b = if component_is_u { bu } else { bv };
            2.0 * b - interior
        }
        None => interior, // outflow: zero normal gradient
    }
}

/// 5-point Laplacian of each velocity component with BC-aware ghost closure.
///
/// Entries at non-periodic boundary faces of the normal component are zero:
/// those faces carry prescribed (or slaved) values and have no dynamics.
pub fn laplacian(vel: &FaceField, g: &GridSpec) -> Result<FaceField> {
    check_face_conformance(vel, g)?;
    let mut lap = FaceField::zeros(g, FaceQuantity::Force);
    let (nx, ny) = (g.nx, g.ny);
    let (dx2, dy2) = (g.dx * g.dx, g.dy * g.dy);

    // u component on vertical faces.
    for j in 0..ny {
        for i in 0..=nx {
            if !g.periodic_x() && (i == 0 || i == nx) {
                continue;
            }
            let c = vel.u_at(i, j);
            let w = if i == 0 { vel.u_at(nx - 1, j) } else { vel.u_at(i - 1, j) };
            let e = if i == nx {
                vel.u_at(1, j)
            } else if i == nx - 1 && g.periodic_x() {
                vel.u_at(nx, j)
            } else {
                vel.u_at(i + 1, j)
            };
            let s = if j == 0 {
                if g.periodic_y() {
                    vel.u_at(i, ny - 1)
                } else {
                    tangential_ghost(g.bc.bottom, c, true)
                }
            } else {
                vel.u_at(i, j - 1)
            };
            let n = if j == ny - 1 {
                if g.periodic_y() {
                    vel.u_at(i, 0)
                } else {
                    tangential_ghost(g.bc.top, c, true)
                }
            } else {
                vel.u_at(i, j + 1)
            };
            lap.set_u(i, j, (e - 2.0 * c + w) / dx2 + (n - 2.0 * c + s) / dy2);
        }
    }

    // v component on horizontal faces.
    for j in 0..=ny {
        if !g.periodic_y() && (j == 0 || j == ny) {
            continue;
        }
        for i in 0..nx {
            let c = vel.v_at(i, j);
            let s = if j == 0 { vel.v_at(i, ny - 1) } else { vel.v_at(i, j - 1) };
            let n = if j == ny {
                vel.v_at(i, 1)
            } else if j == ny - 1 && g.periodic_y() {
                vel.v_at(i, ny)
            } else {
                vel.v_at(i, j + 1)
            };
            let w = if i == 0 {
                if g.periodic_x() {
                    vel.v_at(nx - 1, j)
                } else {
                    tangential_ghost(g.bc.left, c, false)
                }
            } else {
                vel.v_at(i - 1, j)
            };
            let e = if i == nx - 1 {
                if g.periodic_x() {
                    vel.v_at(0, j)
                } else {
                    tangential_ghost(g.bc.right, c, false)
                }
            } else {
                vel.v_at(i + 1, j)
            };
            lap.set_v(i, j, (e - 2.0 * c + w) / dx2 + (n - 2.0 * c + s) / dy2);
        }
    }
    lap.assert_finite("laplacian");
    Ok(lap)
}

/// Discrete advection term in conservative (flux) form, evaluated at the
/// current velocity. `upwind_blend` in `[0, 1]` mixes first-order upwind
/// flux into the second-order centered flux.
///
/// Flux form telescopes on periodic domains, so the advection term
/// conserves total momentum to round-off there.
pub fn convect(vel: &FaceField, g: &GridSpec, upwind_blend: f64) -> Result<FaceField> {
    check_face_conformance(vel, g)?;
    let mut conv = FaceField::zeros(g, FaceQuantity::Force);
    let (nx, ny) = (g.nx, g.ny);
    let gamma = upwind_blend.clamp(0.0, 1.0);

    // Blended face value of the advected quantity given the advecting speed.
    let adv = |q: f64, phi_lo: f64, phi_hi: f64| -> f64 {
        let centered = 0.5 * (phi_lo + phi_hi);
        let upwind = if q >= 0.0 { phi_lo } else { phi_hi };
        (1.0 - gamma) * centered + gamma * upwind
    };

    // u ghost one row beyond a y side.
    let u_ghost_y = |i: usize, side_bottom: bool| -> f64 {
        let (j_edge, bc) = if side_bottom { (0, g.bc.bottom) } else { (ny - 1, g.bc.top) };
        tangential_ghost(bc, vel.u_at(i, j_edge), true)
    };
    let v_ghost_x = |j: usize, side_left: bool| -> f64 {
        let (i_edge, bc) = if side_left { (0, g.bc.left) } else { (nx - 1, g.bc.right) };
        tangential_ghost(bc, vel.v_at(i_edge, j), false)
    };

    // x component: d(uu)/dx + d(uv)/dy at vertical faces.
    for j in 0..ny {
        for i in 0..=nx {
            if !g.periodic_x() && (i == 0 || i == nx) {
                continue;
            }
            let ii = if i == nx { 0 } else { i };
            let u_c = vel.u_at(ii, j);
            let u_w = if ii == 0 { vel.u_at(nx - 1, j) } else { vel.u_at(ii - 1, j) };
            let u_e = if ii == nx - 1 && g.periodic_x() && i != nx {
                vel.u_at(nx, j)
            } else if ii + 1 > nx {
                vel.u_at(1, j)
            } else {
                vel.u_at(ii + 1, j)
            };
            // cell-centered u*u fluxes on either side of the face
            let q_e = 0.5 * (u_c + u_e);
            let q_w = 0.5 * (u_w + u_c);
            let f_e = q_e * adv(q_e, u_c, u_e);
            let f_w = q_w * adv(q_w, u_w, u_c);

            // corner fluxes u*v above and below the face
            let (u_n, v_n) = {
                let v_l = if ii == 0 {
                    if g.periodic_x() { vel.v_at(nx - 1, j + 1) } else { v_ghost_x(j + 1, true) }
                } else {
                    vel.v_at(ii - 1, j + 1)
                };
                let v_r = if ii == nx {
                    if g.periodic_x() { vel.v_at(0, j + 1) } else { v_ghost_x(j + 1, false) }
                } else {
                    vel.v_at(ii, j + 1)
                };
                let u_up = if j == ny - 1 {
                    if g.periodic_y() { vel.u_at(ii, 0) } else { u_ghost_y(ii, false) }
                } else {
                    vel.u_at(ii, j + 1)
                };
                (adv(0.5 * (v_l + v_r), u_c, u_up), 0.5 * (v_l + v_r))
            };
            let (u_s, v_s) = {
                let v_l = if ii == 0 {
                    if g.periodic_x() { vel.v_at(nx - 1, j) } else { v_ghost_x(j, true) }
                } else {
                    vel.v_at(ii - 1, j)
                };
                let v_r = if ii == nx {
                    if g.periodic_x() { vel.v_at(0, j) } else { v_ghost_x(j, false) }
                } else {
                    vel.v_at(ii, j)
                };
                let u_dn = if j == 0 {
                    if g.periodic_y() { vel.u_at(ii, ny - 1) } else { u_ghost_y(ii, true) }
                } else {
                    vel.u_at(ii, j - 1)
                };
                (adv(0.5 * (v_l + v_r), u_dn, u_c), 0.5 * (v_l + v_r))
            };
            let val = (f_e - f_w) / g.dx + (v_n * u_n - v_s * u_s) / g.dy;
            conv.set_u(i, j, val);
            if i == 0 && g.periodic_x() {
                conv.set_u(nx, j, val);
            }
        }
    }

    // y component: d(uv)/dx + d(vv)/dy at horizontal faces.
    for j in 0..=ny {
        if !g.periodic_y() && (j == 0 || j == ny) {
            continue;
        }
        let jj = if j == ny { 0 } else { j };
        for i in 0..nx {
            let v_c = vel.v_at(i, jj);
            let v_s = if jj == 0 { vel.v_at(i, ny - 1) } else { vel.v_at(i, jj - 1) };
            let v_n = if jj == ny - 1 && g.periodic_y() && j != ny {
                vel.v_at(i, ny)
            } else if jj + 1 > ny {
                vel.v_at(i, 1)
            } else {
                vel.v_at(i, jj + 1)
            };
            let q_n = 0.5 * (v_c + v_n);
            let q_s = 0.5 * (v_s + v_c);
            let f_n = q_n * adv(q_n, v_c, v_n);
            let f_s = q_s * adv(q_s, v_s, v_c);

            let (v_e, u_e) = {
                let u_b = if jj == 0 {
                    if g.periodic_y() { vel.u_at(i + 1, ny - 1) } else { u_ghost_y(i + 1, true) }
                } else {
                    vel.u_at(i + 1, jj - 1)
                };
                let u_t = vel.u_at(i + 1, jj);
                let v_r = if i == nx - 1 {
                    if g.periodic_x() { vel.v_at(0, jj) } else { v_ghost_x(jj, false) }
                } else {
                    vel.v_at(i + 1, jj)
                };
                (adv(0.5 * (u_b + u_t), v_c, v_r), 0.5 * (u_b + u_t))
            };
            let (v_w, u_w) = {
                let u_b = if jj == 0 {
                    if g.periodic_y() { vel.u_at(i, ny - 1) } else { u_ghost_y(i, true) }
                } else {
                    vel.u_at(i, jj - 1)
                };
                let u_t = vel.u_at(i, jj);
                let v_l = if i == 0 {
                    if g.periodic_x() { vel.v_at(nx - 1, jj) } else { v_ghost_x(jj, true) }
                } else {
                    vel.v_at(i - 1, jj)
                };
                (adv(0.5 * (u_b + u_t), v_l, v_c), 0.5 * (u_b + u_t))
            };
            let val = (u_e * v_e - u_w * v_w) / g.dx + (f_n - f_s) / g.dy;
            conv.set_v(i, j, val);
            if j == 0 && g.periodic_y() {
                conv.set_v(i, ny, val);
            }
        }
    }
    conv.assert_finite("convect");
    Ok(conv)
}

/// Re-impose the side boundary conditions on the normal velocity faces.
///
/// Dirichlet sides get their prescribed values, outflow sides copy the
/// adjacent interior face, and periodic sides identify the duplicated face.
pub fn enforce_velocity_bc(vel: &mut FaceField, g: &GridSpec) {
    let (nx, ny) = (g.nx, g.ny);
    if g.periodic_x() {
        for j in 0..ny {
            let w = vel.u_at(0, j);
            vel.set_u(nx, j, w);
        }
    } else {
        for j in 0..ny {
            match g.bc.left {
                VelocityBc::Outflow => { let t = vel.u_at(1, j); vel.set_u(0, j, t); },
                bc => {
                    if let Some((bu, _)) = bc.dirichlet_value() {
                        vel.set_u(0, j, bu);
                    }
                }
            }
            match g.bc.right {
                VelocityBc::Outflow => { let t = vel.u_at(nx - 1, j); vel.set_u(nx, j, t); },
                bc => {
                    if let Some((bu, _)) = bc.dirichlet_value() {
                        vel.set_u(nx, j, bu);
                    }
                }
            }
        }
    }
    if g.periodic_y() {
        for i in 0..nx {
            let s = vel.v_at(i, 0);
            vel.set_v(i, ny, s);
        }
    } else {
        for i in 0..nx {
            match g.bc.bottom {
                VelocityBc::Outflow => { let t = vel.v_at(i, 1); vel.set_v(i, 0, t); },
                bc => {
                    if let Some((_, bv)) = bc.dirichlet_value() {
                        vel.set_v(i, 0, bv);
                    }
                }
            }
            match g.bc.top {
                VelocityBc::Outflow => { let t = vel.v_at(i, ny - 1); vel.set_v(i, ny, t); },
                bc => {
                    if let Some((_, bv)) = bc.dirichlet_value() {
                        vel.set_v(i, ny, bv);
                    }
                }
            }
        }
    }
}

/// Discrete inner product over faces, weighted by cell area.
pub fn face_inner(a: &FaceField, b: &FaceField, g: &GridSpec) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.u.iter().zip(&b.u) {
        s += x * y;
    }
    for (x, y) in a.v.iter().zip(&b.v) {
        s += x * y;
    }
    s * g.cell_area()
}

/// Discrete inner product over cells, weighted by cell area.
pub fn cell_inner(a: &CellField, b: &CellField, g: &GridSpec) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        * g.cell_area()
}

/// Total kinetic energy `1/2 rho |u|^2` by face quadrature.
pub fn kinetic_energy(vel: &FaceField, g: &GridSpec, rho: f64) -> f64 {
    let mut s = 0.0;
    // interior faces carry full cell area; duplicated periodic faces counted once
    for j in 0..g.ny {
        let i_hi = if g.periodic_x() { g.nx - 1 } else { g.nx };
        for i in 0..=i_hi {
            let w = if !g.periodic_x() && (i == 0 || i == g.nx) { 0.5 } else { 1.0 };
            s += w * vel.u_at(i, j).powi(2);
        }
    }
    for i in 0..g.nx {
        let j_hi = if g.periodic_y() { g.ny - 1 } else { g.ny };
        for j in 0..=j_hi {
            let w = if !g.periodic_y() && (j == 0 || j == g.ny) { 0.5 } else { 1.0 };
            s += w * vel.v_at(i, j).powi(2);
        }
    }
    0.5 * rho * s * g.cell_area()
}
