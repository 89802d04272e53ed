//! Immersed-body geometry: analytic shapes, marker generation, rigid state,
//! prescribed deformation kinematics, and level-set/characteristic fields.
//!
//! Markers are slaved to the rigid pose: positions are reconstructed from
//! body-frame coordinates every step instead of being advected, so shapes
//! cannot drift. Deformation displaces the body-frame coordinates with the
//! same integrator as the pose.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{IbfdError, Result};
use crate::grid::{CellField, CellQuantity, GridSpec};
use crate::kernels::{MarkerRole, MarkerSet};

/// 2D rotation of a vector.
#[inline]
pub fn rot(theta: f64, v: (f64, f64)) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * v.0 - s * v.1, s * v.0 + c * v.1)
}

/// `omega z-hat x v` in 2D.
#[inline]
pub fn omega_cross(omega: f64, v: (f64, f64)) -> (f64, f64) {
    (-omega * v.1, omega * v.0)
}

/// Scalar cross product `a x b`.
#[inline]
pub fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

/// Analytic body shapes in their own frame, centered at the centroid.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disc { radius: f64 },
    Ellipse { a: f64, b: f64 },
    Rectangle { w: f64, h: f64 },
    /// Open polyline (an elastic fiber); at least 3 points.
    Fiber(Vec<(f64, f64)>),
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Disc { radius } if *radius > 0.0 => Ok(()),
            Shape::Ellipse { a, b } if *a > 0.0 && *b > 0.0 => Ok(()),
            Shape::Rectangle { w, h } if *w > 0.0 && *h > 0.0 => Ok(()),
            Shape::Fiber(pts) if pts.len() >= 3 => Ok(()),
            _ => Err(IbfdError::config("shape has non-positive measure or too few points")),
        }
    }

    pub fn area(&self) -> Option<f64> {
        match self {
            Shape::Disc { radius } => Some(PI * radius * radius),
            Shape::Ellipse { a, b } => Some(PI * a * b),
            Shape::Rectangle { w, h } => Some(w * h),
            Shape::Fiber(_) => None,
        }
    }

    /// Polar second moment of area about the centroid.
    pub fn second_moment(&self) -> Option<f64> {
        match self {
            Shape::Disc { radius } => Some(0.5 * PI * radius.powi(4)),
            Shape::Ellipse { a, b } => Some(0.25 * PI * a * b * (a * a + b * b)),
            Shape::Rectangle { w, h } => Some(w * h * (w * w + h * h) / 12.0),
            Shape::Fiber(_) => None,
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self {
            Shape::Disc { radius } => 2.0 * PI * radius,
            Shape::Ellipse { a, b } => {
                // fine trapezoidal quadrature of |gamma'(t)|
                let n = 4096;
                let mut p = 0.0;
                for k in 0..n {
                    let t0 = 2.0 * PI * k as f64 / n as f64;
                    let t1 = 2.0 * PI * (k + 1) as f64 / n as f64;
                    let sp = |t: f64| ((a * t.sin()).powi(2) + (b * t.cos()).powi(2)).sqrt();
                    p += 0.5 * (sp(t0) + sp(t1)) * (t1 - t0);
                }
                p
            }
            Shape::Rectangle { w, h } => 2.0 * (w + h),
            Shape::Fiber(pts) => polyline_length(pts),
        }
    }

    /// Smallest geometric feature a marker spacing must resolve.
    pub fn min_feature(&self) -> f64 {
        match self {
            Shape::Disc { radius } => *radius,
            Shape::Ellipse { a, b } => a.min(*b),
            Shape::Rectangle { w, h } => 0.5 * w.min(*h),
            Shape::Fiber(pts) => 0.5 * polyline_length(pts),
        }
    }
}

fn polyline_length(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .sum()
}

/// Rigid-body state: pose, velocities, and inertia.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidState {
    pub xc: (f64, f64),
    pub theta: f64,
    pub u: (f64, f64),
    pub omega: f64,
    pub mass: f64,
    /// Scalar moment of inertia about the center of mass.
    pub inertia: f64,
    pub rho_s: f64,
}

impl RigidState {
    /// Build a resting state from a shape and solid density.
    pub fn from_shape(shape: &Shape, rho_s: f64, xc: (f64, f64)) -> Result<Self> {
        shape.validate()?;
        let area = shape
            .area()
            .ok_or_else(|| IbfdError::config("fiber shapes carry no rigid inertia"))?;
        let j = shape.second_moment().unwrap();
        if !(rho_s > 0.0) {
            return Err(IbfdError::config("solid density must be positive"));
        }
        Ok(RigidState {
            xc,
            theta: 0.0,
            u: (0.0, 0.0),
            omega: 0.0,
            mass: rho_s * area,
            inertia: rho_s * j,
            rho_s,
        })
    }
}

/// Prescribed deformation velocity in the body frame.
#[derive(Clone)]
pub struct DeformationKinematics {
    f: Arc<dyn Fn((f64, f64), f64) -> (f64, f64) + Send + Sync>,
    /// Correction data captured by [`normalize_deformation`].
    correction: Option<CorrectionBasis>,
}

#[derive(Clone)]
struct CorrectionBasis {
    coords: Vec<(f64, f64)>,
    weights: Vec<f64>,
    centroid: (f64, f64),
    inertia: f64,
    total: f64,
}

impl std::fmt::Debug for DeformationKinematics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeformationKinematics")
            .field("normalized", &self.correction.is_some())
            .finish()
    }
}

impl DeformationKinematics {
    pub fn new(f: impl Fn((f64, f64), f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        DeformationKinematics {
            f: Arc::new(f),
            correction: None,
        }
    }

    pub fn none() -> Self {
        DeformationKinematics::new(|_, _| (0.0, 0.0))
    }

    /// Body-frame deformation velocity at `r`, time `t`.
    pub fn eval(&self, r: (f64, f64), t: f64) -> (f64, f64) {
        let raw = (self.f)(r, t);
        match &self.correction {
            None => raw,
            Some(basis) => {
                let (mean, spin) = basis.correction_at(&self.f, t);
                let rel = (r.0 - basis.centroid.0, r.1 - basis.centroid.1);
                let w = omega_cross(spin, rel);
                (raw.0 - mean.0 - w.0, raw.1 - mean.1 - w.1)
            }
        }
    }
}

impl CorrectionBasis {
    fn correction_at(
        &self,
        f: &Arc<dyn Fn((f64, f64), f64) -> (f64, f64) + Send + Sync>,
        t: f64,
    ) -> ((f64, f64), f64) {
        let mut mom = (0.0, 0.0);
        for (r, dv) in self.coords.iter().zip(&self.weights) {
            let u = f(*r, t);
            mom.0 += u.0 * dv;
            mom.1 += u.1 * dv;
        }
        let mean = (mom.0 / self.total, mom.1 / self.total);
        let mut ang = 0.0;
        for (r, dv) in self.coords.iter().zip(&self.weights) {
            let u = f(*r, t);
            let rel = (r.0 - self.centroid.0, r.1 - self.centroid.1);
            ang += cross(rel, (u.0 - mean.0, u.1 - mean.1)) * dv;
        }
        (mean, ang / self.inertia)
    }
}

/// Remove the discrete mean velocity and mean rigid rotation of deformation
/// kinematics so both momenta vanish (to round-off) on the given marker set
/// at every time.
pub fn normalize_deformation(d: &DeformationKinematics, m: &MarkerSet) -> Result<DeformationKinematics> {
    let total = m.total_weight();
    if m.len() < 3 || total <= 0.0 {
        return Err(IbfdError::config("normalization needs at least 3 weighted markers"));
    }
    let mut centroid = (0.0, 0.0);
    for (r, dv) in m.body_coords.iter().zip(&m.weights) {
        centroid.0 += r.0 * dv;
        centroid.1 += r.1 * dv;
    }
    centroid.0 /= total;
    centroid.1 /= total;
    let mut inertia = 0.0;
    for (r, dv) in m.body_coords.iter().zip(&m.weights) {
        inertia += ((r.0 - centroid.0).powi(2) + (r.1 - centroid.1).powi(2)) * dv;
    }
    if inertia <= 1e-14 * total {
        return Err(IbfdError::config(
            "degenerate marker inertia: markers are (nearly) coincident",
        ));
    }
    Ok(DeformationKinematics {
        f: d.f.clone(),
        correction: Some(CorrectionBasis {
            coords: m.body_coords.clone(),
            weights: m.weights.clone(),
            centroid,
            inertia,
            total,
        }),
    })
}

/// Generate quasi-uniform markers for a shape in its body frame.
///
/// Quadrature weights tile the analytic measure exactly: surface markers
/// share the perimeter, volume markers tile the area by annular rings
/// (disc/ellipse) or a lattice (rectangle).
pub fn discretize(shape: &Shape, spacing: f64, role: MarkerRole) -> Result<MarkerSet> {
    shape.validate()?;
    if !(spacing > 0.0) {
        return Err(IbfdError::config("marker spacing must be positive"));
    }
    if spacing > shape.min_feature() {
        return Err(IbfdError::config(format!(
            "marker spacing {spacing} exceeds the smallest shape feature {}",
            shape.min_feature()
        )));
    }
    let (coords, weights) = match (shape, role) {
        (Shape::Disc { radius }, MarkerRole::Surface) => {
            let n = ((2.0 * PI * radius / spacing).round() as usize).max(3);
            let ds = 2.0 * PI * radius / n as f64;
            let pts = (0..n)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / n as f64;
                    (radius * th.cos(), radius * th.sin())
                })
                .collect();
            (pts, vec![ds; n])
        }
        (Shape::Disc { radius }, MarkerRole::Volume) => disc_volume_markers(*radius, spacing, 1.0, 1.0),
        (Shape::Ellipse { a, b }, MarkerRole::Volume) => {
            let unit_spacing = spacing / (a * b).sqrt();
            disc_volume_markers(1.0, unit_spacing, *a, *b)
        }
        (Shape::Ellipse { a, b }, MarkerRole::Surface) => ellipse_surface_markers(*a, *b, spacing),
        (Shape::Rectangle { w, h }, MarkerRole::Surface) => {
            let mut pts = Vec::new();
            let mut ws = Vec::new();
            let sides = [
                ((-0.5 * w, -0.5 * h), (1.0, 0.0), *w),
                ((0.5 * w, -0.5 * h), (0.0, 1.0), *h),
                ((0.5 * w, 0.5 * h), (-1.0, 0.0), *w),
                ((-0.5 * w, 0.5 * h), (0.0, -1.0), *h),
            ];
            for (start, dir, len) in sides {
                let n = ((len / spacing).round() as usize).max(1);
                let ds = len / n as f64;
                for k in 0..n {
                    let s = (k as f64 + 0.5) * ds;
                    pts.push((start.0 + dir.0 * s, start.1 + dir.1 * s));
                    ws.push(ds);
                }
            }
            (pts, ws)
        }
        (Shape::Rectangle { w, h }, MarkerRole::Volume) => {
            let nx = ((w / spacing).round() as usize).max(1);
            let ny = ((h / spacing).round() as usize).max(1);
            let (dx, dy) = (w / nx as f64, h / ny as f64);
            let mut pts = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    pts.push((
                        -0.5 * w + (i as f64 + 0.5) * dx,
                        -0.5 * h + (j as f64 + 0.5) * dy,
                    ));
                }
            }
            let dv = dx * dy;
            let n = pts.len();
            (pts, vec![dv; n])
        }
        (Shape::Fiber(pts), MarkerRole::Surface) => fiber_markers(pts, spacing),
        (Shape::Fiber(_), MarkerRole::Volume) => {
            return Err(IbfdError::config("a fiber has no volume markers"));
        }
    };
    Ok(MarkerSet {
        positions: coords.clone(),
        body_coords: coords,
        weights,
        role,
    })
}

/// Annular-ring tiling of a disc of radius `r`; each marker scaled by
/// `(sx, sy)` afterwards (ellipse support). Weights sum to the area exactly.
fn disc_volume_markers(r: f64, spacing: f64, sx: f64, sy: f64) -> (Vec<(f64, f64)>, Vec<f64>) {
    let nr = ((r / spacing).round() as usize).max(1);
    let dr = r / nr as f64;
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    let scale = sx * sy;
    for k in 0..nr {
        let r_in = k as f64 * dr;
        let r_out = (k + 1) as f64 * dr;
        let r_mid = 0.5 * (r_in + r_out);
        let n = ((2.0 * PI * r_mid / spacing).round() as usize).max(if k == 0 { 1 } else { 3 });
        let band_area = PI * (r_out * r_out - r_in * r_in);
        let dv = band_area / n as f64 * scale;
        // stagger successive rings by half a sector
        let offset = 0.5 * (k % 2) as f64 * 2.0 * PI / n as f64;
        for q in 0..n {
            let th = offset + 2.0 * PI * q as f64 / n as f64;
            pts.push((sx * r_mid * th.cos(), sy * r_mid * th.sin()));
            ws.push(dv);
        }
    }
    (pts, ws)
}

fn ellipse_surface_markers(a: f64, b: f64, spacing: f64) -> (Vec<(f64, f64)>, Vec<f64>) {
    // equal-arc-length placement from a dense parameter table
    let nt = 8192;
    let mut cum = Vec::with_capacity(nt + 1);
    cum.push(0.0);
    let mut total = 0.0;
    for k in 0..nt {
        let t0 = 2.0 * PI * k as f64 / nt as f64;
        let t1 = 2.0 * PI * (k + 1) as f64 / nt as f64;
        let sp = |t: f64| ((a * t.sin()).powi(2) + (b * t.cos()).powi(2)).sqrt();
        total += 0.5 * (sp(t0) + sp(t1)) * (t1 - t0);
        cum.push(total);
    }
    let n = ((total / spacing).round() as usize).max(3);
    let ds = total / n as f64;
    let mut pts = Vec::with_capacity(n);
    let mut idx = 0usize;
    for k in 0..n {
        let target = k as f64 * ds;
        while idx + 1 < cum.len() && cum[idx + 1] < target {
            idx += 1;
        }
        let seg = cum[idx + 1] - cum[idx];
        let frac = if seg > 0.0 { (target - cum[idx]) / seg } else { 0.0 };
        let t = 2.0 * PI * (idx as f64 + frac) / nt as f64;
        pts.push((a * t.cos(), b * t.sin()));
    }
    (pts, vec![ds; n])
}

fn fiber_markers(pts: &[(f64, f64)], spacing: f64) -> (Vec<(f64, f64)>, Vec<f64>) {
    let total = polyline_length(pts);
    let n = ((total / spacing).round() as usize + 1).max(3);
    let ds = total / (n - 1) as f64;
    let mut out = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    // arc-length resampling along the polyline
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    let seg_len = |s: usize| -> f64 {
        ((pts[s + 1].0 - pts[s].0).powi(2) + (pts[s + 1].1 - pts[s].1).powi(2)).sqrt()
    };
    for k in 0..n {
        let target = (k as f64 * ds).min(total);
        while seg + 2 < pts.len() && seg_start + seg_len(seg) < target {
            seg_start += seg_len(seg);
            seg += 1;
        }
        let l = seg_len(seg);
        let f = if l > 0.0 { ((target - seg_start) / l).clamp(0.0, 1.0) } else { 0.0 };
        out.push((
            pts[seg].0 + f * (pts[seg + 1].0 - pts[seg].0),
            pts[seg].1 + f * (pts[seg + 1].1 - pts[seg].1),
        ));
        ws.push(if k == 0 || k == n - 1 { 0.5 * ds } else { ds });
    }
    (out, ws)
}

/// Lab-frame solid velocity at each marker:
/// `U_s + omega x (R r) + R u_def(r, t)`.
pub fn solid_velocity(
    state: &RigidState,
    deformation: Option<&DeformationKinematics>,
    m: &MarkerSet,
    t: f64,
) -> Vec<(f64, f64)> {
    m.body_coords
        .iter()
        .map(|r| {
            let lab_r = rot(state.theta, *r);
            let spin = omega_cross(state.omega, lab_r);
            let def = match deformation {
                Some(d) => rot(state.theta, d.eval(*r, t)),
                None => (0.0, 0.0),
            };
            (
                state.u.0 + spin.0 + def.0,
                state.u.1 + spin.1 + def.1,
            )
        })
        .collect()
}

/// Pose integrator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseIntegrator {
    Euler,
    Rk2,
}

/// Reconstruct lab-frame marker positions from the body frame and pose.
pub fn apply_pose(state: &RigidState, m: &mut MarkerSet) {
    for (pos, r) in m.positions.iter_mut().zip(&m.body_coords) {
        let lab = rot(state.theta, *r);
        *pos = (state.xc.0 + lab.0, state.xc.1 + lab.1);
    }
}

/// Advance the rigid pose (and deformation displacement, if any) by `dt`,
/// then reconstruct marker positions. Optionally reject poses that push
/// markers outside the domain inset.
#[allow(clippy::too_many_arguments)]
pub fn advance_body(
    state: &mut RigidState,
    m: &mut MarkerSet,
    deformation: Option<&DeformationKinematics>,
    t: f64,
    dt: f64,
    integrator: PoseIntegrator,
    domain: Option<(&GridSpec, f64)>,
) -> Result<()> {
    state.xc.0 += state.u.0 * dt;
    state.xc.1 += state.u.1 * dt;
    state.theta += state.omega * dt;
    if let Some(d) = deformation {
        for r in m.body_coords.iter_mut() {
            match integrator {
                PoseIntegrator::Euler => {
                    let u = d.eval(*r, t);
                    r.0 += u.0 * dt;
                    r.1 += u.1 * dt;
                }
                PoseIntegrator::Rk2 => {
                    let u1 = d.eval(*r, t);
                    let mid = (r.0 + 0.5 * dt * u1.0, r.1 + 0.5 * dt * u1.1);
                    let u2 = d.eval(mid, t + 0.5 * dt);
                    r.0 += u2.0 * dt;
                    r.1 += u2.1 * dt;
                }
            }
        }
    }
    apply_pose(state, m);
    if let Some((g, halfwidth)) = domain {
        let wx = halfwidth * g.dx;
        let wy = halfwidth * g.dy;
        for &(x, y) in &m.positions {
            let ok_x = g.periodic_x() || (x >= g.origin.0 + wx && x <= g.origin.0 + g.lx() - wx);
            let ok_y = g.periodic_y() || (y >= g.origin.1 + wy && y <= g.origin.1 + g.ly() - wy);
            if !ok_x || !ok_y {
                return Err(IbfdError::OutOfSupport { x, y, half_width: halfwidth });
            }
        }
    }
    Ok(())
}

/// Signed distance field of a posed shape (negative inside the solid) plus
/// the analytic evaluators the penalization and sampling paths use.
#[derive(Debug, Clone)]
pub struct LevelSet {
    pub phi: CellField,
    shape: Shape,
    xc: (f64, f64),
    theta: f64,
    h: f64,
}

impl LevelSet {
    /// Cell spacing of the grid the field was sampled on.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Continuous signed distance at a lab-frame point.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let p = rot(-self.theta, (x - self.xc.0, y - self.xc.1));
        shape_sdf(&self.shape, p)
    }

    /// Unit normal pointing out of the solid into the fluid.
    pub fn normal(&self, x: f64, y: f64) -> (f64, f64) {
        // central differences of the analytic distance
        let e = 1e-6 * self.h.max(1e-12);
        let gx = (self.eval(x + e, y) - self.eval(x - e, y)) / (2.0 * e);
        let gy = (self.eval(x, y + e) - self.eval(x, y - e)) / (2.0 * e);
        let n = (gx * gx + gy * gy).sqrt();
        if n < 1e-12 {
            (0.0, 0.0)
        } else {
            (gx / n, gy / n)
        }
    }

    /// Closest point on the interface (valid where the distance is smooth).
    pub fn closest_point(&self, x: f64, y: f64) -> (f64, f64) {
        let d = self.eval(x, y);
        let n = self.normal(x, y);
        (x - d * n.0, y - d * n.1)
    }

    /// Sharp characteristic function: 1 where `phi <= 0`.
    pub fn chi_sharp(&self) -> CellField {
        let mut chi = self.phi.clone();
        chi.quantity = CellQuantity::Chi;
        for v in chi.data.iter_mut() {
            *v = if *v <= 0.0 { 1.0 } else { 0.0 };
        }
        chi
    }

    /// Smoothed characteristic function: linear ramp over one cell.
    pub fn chi_smoothed(&self) -> CellField {
        let mut chi = self.phi.clone();
        chi.quantity = CellQuantity::Chi;
        for v in chi.data.iter_mut() {
            *v = (0.5 - *v / self.h).clamp(0.0, 1.0);
        }
        chi
    }
}

/// Sample the signed distance of a posed shape on the grid.
pub fn level_set(shape: &Shape, xc: (f64, f64), theta: f64, g: &GridSpec) -> Result<LevelSet> {
    shape.validate()?;
    let phi = CellField::from_fn(g, CellQuantity::LevelSet, |x, y| {
        let p = rot(-theta, (x - xc.0, y - xc.1));
        shape_sdf(shape, p)
    });
    Ok(LevelSet {
        phi,
        shape: shape.clone(),
        xc,
        theta,
        h: g.dx,
    })
}

/// Signed distance in the body frame; negative inside.
pub fn shape_sdf(shape: &Shape, p: (f64, f64)) -> f64 {
    match shape {
        Shape::Disc { radius } => (p.0 * p.0 + p.1 * p.1).sqrt() - radius,
        Shape::Rectangle { w, h } => {
            let qx = p.0.abs() - 0.5 * w;
            let qy = p.1.abs() - 0.5 * h;
            let ox = qx.max(0.0);
            let oy = qy.max(0.0);
            (ox * ox + oy * oy).sqrt() + qx.max(qy).min(0.0)
        }
        Shape::Ellipse { a, b } => ellipse_sdf(*a, *b, p),
        Shape::Fiber(pts) => {
            // unsigned distance to the polyline; fibers have no interior
            let mut d = f64::MAX;
            for w in pts.windows(2) {
                d = d.min(segment_distance(p, w[0], w[1]));
            }
            d
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let ap = (p.0 - a.0, p.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if len2 > 0.0 {
        ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = (a.0 + t * ab.0 - p.0, a.1 + t * ab.1 - p.1);
    (q.0 * q.0 + q.1 * q.1).sqrt()
}

/// Exact point-ellipse signed distance via the closest-point root solve.
///
/// Solves `F(t) = (a px / (t + a^2))^2 + (b py / (t + b^2))^2 - 1 = 0`
/// on `t in (-min(a,b)^2, inf)`; the closest boundary point is
/// `(a^2 px / (t + a^2), b^2 py / (t + b^2))`.
fn ellipse_sdf(a: f64, b: f64, p: (f64, f64)) -> f64 {
    let inside = (p.0 / a).powi(2) + (p.1 / b).powi(2) < 1.0;
    let (px, py) = (p.0.abs(), p.1.abs());
    // axis cases reduce to 1D
    if px < 1e-15 && py < 1e-15 {
        return -a.min(b);
    }
    let f = |t: f64| -> f64 {
        let mut s = 0.0;
        if px > 0.0 {
            s += (a * px / (t + a * a)).powi(2);
        }
        if py > 0.0 {
            s += (b * py / (t + b * b)).powi(2);
        }
        s - 1.0
    };
    // bracket the root: F is decreasing in t on the valid interval
    let t_min = -(a.min(b)).powi(2);
    let mut lo = t_min + 1e-14 * (a * a + b * b);
    let mut hi = (a * px + b * py).max(a * a + b * b);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    if f(lo) < 0.0 {
        // point extremely close to the center along an axis
        lo = t_min * (1.0 - 1e-9);
        if f(lo) < 0.0 {
            // fall back to minor-axis distance
            let d_axis = if a < b { a - px } else { b - py };
            return if inside { -d_axis } else { d_axis };
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    let cx = a * a * px / (t + a * a);
    let cy = b * b * py / (t + b * b);
    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
    if inside {
        -d
    } else {
        d
    }
}
