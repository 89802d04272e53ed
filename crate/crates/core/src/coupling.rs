//! Constraint coupling schemes: the Lagrange-multiplier force computations
//! each scheme needs, independent of the time-stepping orchestration.
//!
//! Every scheme produces a [`LambdaField`]: per-marker multiplier force
//! densities plus their spread Eulerian image. The total spread force
//! equals the marker quadrature sum to round-off, which is what the
//! force-free identities of the rigid solves rely on.

use nalgebra::{DMatrix, DVector};

use crate::body::{cross, omega_cross};
use crate::error::{IbfdError, Result};
use crate::grid::{FaceField, GridSpec};
use crate::kernels::{spread, DeltaKernel, MarkerSet};
use crate::mls::{mls_spread, MaskMode, MlsConfig};

/// Transfer kernel choice for a scheme.
#[derive(Debug, Clone)]
pub enum KernelChoice {
    Delta(DeltaKernel),
    Mls { cfg: MlsConfig, mode: MaskMode },
}

impl KernelChoice {
    pub fn half_width(&self) -> f64 {
        match self {
            KernelChoice::Delta(k) => k.half_width(),
            KernelChoice::Mls { cfg, .. } => cfg.radius_cells,
        }
    }
}

/// Where the velocity constraint is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintLocus {
    Surface,
    Volume,
}

/// The interchangeable coupling schemes over the shared fluid core.
#[derive(Debug, Clone)]
pub enum SchemeKind {
    /// Explicit elastic-fiber forcing.
    IbmElastic,
    /// Fractional-step fictitious-domain rigid solve.
    FdmFts,
    /// Velocity/direct forcing with post-predictor correction (theta = 0).
    DirectForcing { kappa: Option<f64> },
    /// Brinkman penalization inside the predictor (theta = 1).
    Brinkman { kappa: Option<f64> },
    /// Spring-damper penalty surface forcing.
    Penalty { k: f64, c: f64 },
}

/// Full coupling configuration.
#[derive(Debug, Clone)]
pub struct ConstraintConfig {
    pub scheme: SchemeKind,
    pub locus: ConstraintLocus,
    pub kernel: KernelChoice,
    /// Marker spacing in cells.
    pub marker_spacing_cells: f64,
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.scheme, self.locus) {
            (SchemeKind::FdmFts, ConstraintLocus::Surface) => Err(IbfdError::config(
                "the fictitious-domain scheme constrains the whole body: volume locus required",
            )),
            (SchemeKind::Penalty { .. }, ConstraintLocus::Volume) => Err(IbfdError::config(
                "the penalty scheme forces the body surface: surface locus required",
            )),
            (SchemeKind::Penalty { k, c }, _) if *k == 0.0 && *c == 0.0 => Err(IbfdError::config(
                "penalty scheme with k = c = 0 leaves the constraint unenforced",
            )),
            _ => Ok(()),
        }
    }
}

/// Per-marker multiplier force densities and their spread image.
#[derive(Debug, Clone)]
pub struct LambdaField {
    /// Force per unit volume (volume markers) or per unit area (surface).
    pub values: Vec<(f64, f64)>,
    /// Spread Eulerian image (force per unit volume on faces).
    pub image: FaceField,
    /// `sum lambda_i dV_i`.
    pub net_force: (f64, f64),
    /// `sum r_i x lambda_i dV_i` about the body center used to build it.
    pub net_torque: f64,
    pub max_magnitude: f64,
}

impl LambdaField {
    /// Spread marker values and collect the integral diagnostics.
    pub fn build(
        values: Vec<(f64, f64)>,
        m: &MarkerSet,
        center: (f64, f64),
        kernel: &KernelChoice,
        mask: Option<&dyn Fn(f64, f64) -> f64>,
        g: &GridSpec,
    ) -> Result<Self> {
        let image = match kernel {
            KernelChoice::Delta(k) => spread(&values, m, *k, g)?,
            KernelChoice::Mls { cfg, .. } => {
                let all = |_: f64, _: f64| 1.0;
                let mask_fn: &dyn Fn(f64, f64) -> f64 = mask.unwrap_or(&all);
                mls_spread(&values, m, cfg, mask_fn, g)?
            }
        };
        let mut net = (0.0, 0.0);
        let mut torque = 0.0;
        let mut max_mag = 0.0f64;
        for ((v, dv), pos) in values.iter().zip(&m.weights).zip(&m.positions) {
            net.0 += v.0 * dv;
            net.1 += v.1 * dv;
            torque += cross((pos.0 - center.0, pos.1 - center.1), *v) * dv;
            max_mag = max_mag.max((v.0 * v.0 + v.1 * v.1).sqrt());
        }
        Ok(LambdaField {
            values,
            image,
            net_force: net,
            net_torque: torque,
            max_magnitude: max_mag,
        })
    }
}

/// Hookean stretching plus optional turning-angle bending for a fiber.
///
/// Both energies depend only on distances and angles, so the nodal forces
/// sum to zero and carry zero net torque for any configuration; the closed
/// ring and open chain cases share this property.
#[derive(Clone)]
pub struct FiberElasticity {
    pub k_stretch: f64,
    /// Rest length per link, possibly modulated in time.
    pub rest_lengths: Vec<f64>,
    pub k_bend: f64,
    /// Rest turning value per interior node: the cross product of adjacent
    /// unit tangents (the sine of the turning angle).
    pub rest_turning: Vec<f64>,
    pub closed: bool,
    /// Optional actuation: target turning values as a function of
    /// (node arc index, time), overriding `rest_turning`.
    pub actuation: Option<std::sync::Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for FiberElasticity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiberElasticity")
            .field("k_stretch", &self.k_stretch)
            .field("k_bend", &self.k_bend)
            .field("closed", &self.closed)
            .field("actuated", &self.actuation.is_some())
            .finish()
    }
}

impl FiberElasticity {
    pub fn uniform(n_markers: usize, k_stretch: f64, k_bend: f64, closed: bool, rest_length: f64) -> Self {
        let n_links = if closed { n_markers } else { n_markers - 1 };
        let n_bend = if closed { n_markers } else { n_markers.saturating_sub(2) };
        FiberElasticity {
            k_stretch,
            rest_lengths: vec![rest_length; n_links],
            k_bend,
            rest_turning: vec![0.0; n_bend],
            closed,
            actuation: None,
        }
    }

    fn target_turning(&self, idx: usize, t: f64) -> f64 {
        match &self.actuation {
            Some(f) => f(idx, t),
            None => self.rest_turning[idx],
        }
    }

    /// Elastic energy of a configuration; the force is its negative
    /// gradient (finite-difference checked in the tests).
    pub fn energy(&self, x: &[(f64, f64)], t: f64) -> f64 {
        let n = x.len();
        let link = |k: usize| -> ((f64, f64), f64) {
            let a = x[k];
            let b = x[(k + 1) % n];
            let d = (b.0 - a.0, b.1 - a.1);
            (d, (d.0 * d.0 + d.1 * d.1).sqrt())
        };
        let n_links = if self.closed { n } else { n - 1 };
        let mut e = 0.0;
        for k in 0..n_links {
            let (_, len) = link(k);
            let dl = len - self.rest_lengths[k];
            e += 0.5 * self.k_stretch * dl * dl;
        }
        if self.k_bend > 0.0 {
            let n_bend = if self.closed { n } else { n - 2 };
            for b in 0..n_bend {
                // node with links (k, k+1); open chains start at node 1
                let k = if self.closed { b } else { b };
                let (d0, l0) = link(k);
                let (d1, l1) = link((k + 1) % n);
                if l0 == 0.0 || l1 == 0.0 {
                    continue;
                }
                let c = cross((d0.0 / l0, d0.1 / l0), (d1.0 / l1, d1.1 / l1));
                let dc = c - self.target_turning(b, t);
                e += 0.5 * self.k_bend * dc * dc;
            }
        }
        e
    }

    /// Nodal forces: analytic negative gradient of [`FiberElasticity::energy`].
    pub fn forces(&self, x: &[(f64, f64)], t: f64) -> Result<Vec<(f64, f64)>> {
        let n = x.len();
        let mut f = vec![(0.0, 0.0); n];
        let n_links = if self.closed { n } else { n - 1 };
        // stretching
        for k in 0..n_links {
            let a = x[k];
            let b = x[(k + 1) % n];
            let d = (b.0 - a.0, b.1 - a.1);
            let len = (d.0 * d.0 + d.1 * d.1).sqrt();
            let l0 = self.rest_lengths[k];
            if l0 <= 0.0 {
                return Err(IbfdError::config("fiber link has zero reference length"));
            }
            if len == 0.0 {
                continue;
            }
            let coeff = self.k_stretch * (len - l0) / len;
            let pull = (coeff * d.0, coeff * d.1);
            f[k].0 += pull.0;
            f[k].1 += pull.1;
            let kb = (k + 1) % n;
            f[kb].0 -= pull.0;
            f[kb].1 -= pull.1;
        }
        // bending through unit-tangent cross products
        if self.k_bend > 0.0 {
            let n_bend = if self.closed { n } else { n - 2 };
            for b in 0..n_bend {
                let k = b;
                let ia = k;
                let ib = (k + 1) % n;
                let ic = (k + 2) % n;
                let d0 = (x[ib].0 - x[ia].0, x[ib].1 - x[ia].1);
                let d1 = (x[ic].0 - x[ib].0, x[ic].1 - x[ib].1);
                let l0 = (d0.0 * d0.0 + d0.1 * d0.1).sqrt();
                let l1 = (d1.0 * d1.0 + d1.1 * d1.1).sqrt();
                if l0 == 0.0 || l1 == 0.0 {
                    continue;
                }
                let t0 = (d0.0 / l0, d0.1 / l0);
                let t1 = (d1.0 / l1, d1.1 / l1);
                let c = cross(t0, t1);
                let coeff = self.k_bend * (c - self.target_turning(b, t));
                // with perp(a) = (-a_y, a_x) and c = t0 x t1:
                // dc/dd0 = (-perp(t1) - c t0) / l0, dc/dd1 = (perp(t0) - c t1) / l1
                let g0 = (
                    (t1.1 - c * t0.0) / l0 * coeff,
                    (-t1.0 - c * t0.1) / l0 * coeff,
                );
                let g1 = (
                    (-t0.1 - c * t1.0) / l1 * coeff,
                    (t0.0 - c * t1.1) / l1 * coeff,
                );
                // d0 depends on (ia, ib), d1 on (ib, ic)
                f[ia].0 += g0.0;
                f[ia].1 += g0.1;
                f[ib].0 -= g0.0;
                f[ib].1 -= g0.1;
                f[ib].0 += g1.0;
                f[ib].1 += g1.1;
                f[ic].0 -= g1.0;
                f[ic].1 -= g1.1;
            }
        }
        Ok(f)
    }
}

/// Elastic-fiber multiplier: nodal force over quadrature weight.
pub fn ibm_elastic_lambda(
    m: &MarkerSet,
    elasticity: &FiberElasticity,
    t: f64,
) -> Result<Vec<(f64, f64)>> {
    let forces = elasticity.forces(&m.positions, t)?;
    Ok(forces
        .iter()
        .zip(&m.weights)
        .map(|(f, dv)| (f.0 / dv, f.1 / dv))
        .collect())
}

/// External loads entering the solid momentum balance.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExternalLoads {
    pub force: (f64, f64),
    pub torque: f64,
}

/// Density-mismatch inertia data for non-neutrally-buoyant bodies.
#[derive(Debug, Clone, Copy)]
pub struct InertiaMismatch {
    /// `(rho_s - rho_f) * V`
    pub delta_mass: f64,
    /// `(rho_s - rho_f) * I`
    pub delta_inertia: f64,
    pub u_old: (f64, f64),
    pub omega_old: f64,
    pub gravity: (f64, f64),
}

/// Result of the fictitious-domain rigid solve.
#[derive(Debug, Clone)]
pub struct RigidSolve {
    pub u_new: (f64, f64),
    pub omega_new: f64,
    /// Multiplier values `rho_f (u_s - u_hat) / dt` at markers.
    pub lambda: Vec<(f64, f64)>,
}

/// Solve the integrated solid momentum conditions for the new rigid
/// velocities, then form the multiplier.
///
/// The discrete conditions `sum lambda dV = F_ext + dM g + dM (U^n - U)/dt`
/// (and the moment analogue) are exactly the normal equations of the
/// weighted least-squares rigid fit, extended by the density-mismatch
/// inertia when present, solved as one symmetric 3x3 system.
pub fn fdm_rigid_solve(
    u_hat: &[(f64, f64)],
    u_def: &[(f64, f64)],
    m: &MarkerSet,
    center: (f64, f64),
    rho_f: f64,
    dt: f64,
    ext: ExternalLoads,
    mismatch: Option<InertiaMismatch>,
) -> Result<RigidSolve> {
    let n = m.len();
    assert_eq!(u_hat.len(), n);
    assert_eq!(u_def.len(), n);
    let mut vol = 0.0;
    let mut sr = (0.0, 0.0);
    let mut inertia = 0.0;
    let mut sw = (0.0, 0.0);
    let mut swr = 0.0;
    for i in 0..n {
        let dv = m.weights[i];
        let r = (m.positions[i].0 - center.0, m.positions[i].1 - center.1);
        let w = (u_hat[i].0 - u_def[i].0, u_hat[i].1 - u_def[i].1);
        vol += dv;
        sr.0 += r.0 * dv;
        sr.1 += r.1 * dv;
        inertia += (r.0 * r.0 + r.1 * r.1) * dv;
        sw.0 += w.0 * dv;
        sw.1 += w.1 * dv;
        swr += cross(r, w) * dv;
    }
    if vol <= 0.0 || inertia <= 1e-14 * vol {
        return Err(IbfdError::config(
            "degenerate body: vanishing discrete volume or inertia",
        ));
    }
    let (dm, di, rhs_extra, torque_extra) = match mismatch {
        None => (0.0, 0.0, (0.0, 0.0), 0.0),
        Some(mm) => (
            mm.delta_mass / rho_f,
            mm.delta_inertia / rho_f,
            (
                mm.delta_mass * (mm.u_old.0 + dt * mm.gravity.0) / rho_f,
                mm.delta_mass * (mm.u_old.1 + dt * mm.gravity.1) / rho_f,
            ),
            mm.delta_inertia * mm.omega_old / rho_f,
        ),
    };
    // 3x3 symmetric system for (Ux, Uy, omega), scaled by 1/rho_f
    let mut a = DMatrix::zeros(3, 3);
    a[(0, 0)] = vol + dm;
    a[(1, 1)] = vol + dm;
    a[(2, 2)] = inertia + di;
    a[(0, 2)] = -sr.1;
    a[(2, 0)] = -sr.1;
    a[(1, 2)] = sr.0;
    a[(2, 1)] = sr.0;
    let b = DVector::from_column_slice(&[
        sw.0 + dt * ext.force.0 / rho_f + rhs_extra.0,
        sw.1 + dt * ext.force.1 / rho_f + rhs_extra.1,
        swr + dt * ext.torque / rho_f + torque_extra,
    ]);
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| IbfdError::config("singular rigid-solve system"))?;
    let u_new = (sol[0], sol[1]);
    let omega_new = sol[2];
    let mut lambda = Vec::with_capacity(n);
    for i in 0..n {
        let r = (m.positions[i].0 - center.0, m.positions[i].1 - center.1);
        let spin = omega_cross(omega_new, r);
        lambda.push((
            rho_f * (u_new.0 + spin.0 + u_def[i].0 - u_hat[i].0) / dt,
            rho_f * (u_new.1 + spin.1 + u_def[i].1 - u_hat[i].1) / dt,
        ));
    }
    Ok(RigidSolve {
        u_new,
        omega_new,
        lambda,
    })
}

/// Velocity-constraint projection: `u += (dt / rho_f) spread(lambda)`.
pub fn constraint_project(u_hat: &mut FaceField, lambda: &LambdaField, rho_f: f64, dt: f64) {
    u_hat.axpy(dt / rho_f, &lambda.image);
}

/// Direct/velocity forcing multiplier `kappa (u_s - u_hat)` at markers.
pub fn direct_forcing_lambda(
    u_hat: &[(f64, f64)],
    u_solid: &[(f64, f64)],
    kappa: f64,
) -> Vec<(f64, f64)> {
    u_hat
        .iter()
        .zip(u_solid)
        .map(|(uh, us)| (kappa * (us.0 - uh.0), kappa * (us.1 - uh.1)))
        .collect()
}

/// Spring-damper penalty force on surface markers tracking a reference
/// trajectory: `k (x_ref - x) + c (u_s - u_f)`.
pub fn penalty_lambda(
    positions: &[(f64, f64)],
    reference: &[(f64, f64)],
    u_fluid: &[(f64, f64)],
    u_solid: &[(f64, f64)],
    k: f64,
    c: f64,
) -> Vec<(f64, f64)> {
    positions
        .iter()
        .zip(reference)
        .zip(u_fluid.iter().zip(u_solid))
        .map(|((x, xs), (uf, us))| {
            (
                k * (xs.0 - x.0) + c * (us.0 - uf.0),
                k * (xs.1 - x.1) + c * (us.1 - uf.1),
            )
        })
        .collect()
}
