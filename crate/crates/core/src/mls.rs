//! Moving-least-squares generating functions with optional one-sided
//! (Heaviside-masked) weights, and grid transfer operators built on them.
//!
//! Masked points get an exactly zero generating function because the
//! restricted weight `W_mls = W * H` vanishes there; the remaining points
//! still reproduce polynomials up to the configured degree through the
//! weighted Gram solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{IbfdError, Result};
use crate::grid::{FaceField, FaceQuantity, GridSpec};
use crate::kernels::{MarkerSet, TransferTarget};

/// Weight function of the least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MlsWeight {
    /// `(1 - q)^4 (4 q + 1)` on `q <= 1`; compact and C2.
    WendlandC2,
    /// Truncated Gaussian with shape parameter relative to the radius.
    Gaussian { shape: f64 },
}

impl MlsWeight {
    fn eval(&self, q: f64) -> f64 {
        if q >= 1.0 {
            return 0.0;
        }
        match self {
            MlsWeight::WendlandC2 => {
                let t = 1.0 - q;
                t * t * t * t * (4.0 * q + 1.0)
            }
            MlsWeight::Gaussian { shape } => (-(q * q) / (shape * shape)).exp(),
        }
    }
}

/// Which side of the interface a marker interacts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Couple to the body exterior (leak suppression).
    Exterior,
    /// Couple to the body interior (dense-particle mode).
    Interior,
}

/// MLS configuration: polynomial degree, weight, and support radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlsConfig {
    /// Total polynomial degree, 0 to 2.
    pub degree: u8,
    pub weight: MlsWeight,
    /// Support radius in cells.
    pub radius_cells: f64,
}

impl Default for MlsConfig {
    fn default() -> Self {
        // radius choice is ours; the generating-function literature leaves it open
        MlsConfig {
            degree: 1,
            weight: MlsWeight::WendlandC2,
            radius_cells: 2.6,
        }
    }
}

impl MlsConfig {
    /// Bivariate basis size `(2 + d)! / (2! d!)`: 1, 3, or 6.
    pub fn basis_size(&self) -> usize {
        match self.degree {
            0 => 1,
            1 => 3,
            2 => 6,
            d => panic!("unsupported MLS degree {d}"),
        }
    }

    fn basis(&self, xb: f64, yb: f64) -> Vec<f64> {
        match self.degree {
            0 => vec![1.0],
            1 => vec![1.0, xb, yb],
            _ => vec![1.0, xb, yb, xb * xb, xb * yb, yb * yb],
        }
    }
}

const GRAM_CONDITION_LIMIT: f64 = 1e12;
const REPRODUCTION_TOL: f64 = 1e-9;

/// Generating functions `psi_i` for data points `points` with Heaviside
/// values `h_values` at the evaluation point `eval`.
///
/// The basis is centered at the evaluation point and scaled by the support
/// radius, which keeps the Gram matrix well conditioned. Rank-deficient but
/// consistent neighborhoods (for example collinear points through the
/// evaluation point) are solved in the pseudo-inverse sense; the
/// reproduction identity is verified and a degenerate-neighborhood error
/// names the evaluation point when it fails.
pub fn mls_generating_functions(
    points: &[(f64, f64)],
    h_values: &[f64],
    eval: (f64, f64),
    cfg: &MlsConfig,
    radius: f64,
) -> Result<Vec<f64>> {
    assert_eq!(points.len(), h_values.len());
    let m = cfg.basis_size();
    let n = points.len();
    let mut w_mls = vec![0.0; n];
    let mut active = 0usize;
    for i in 0..n {
        let dx = points[i].0 - eval.0;
        let dy = points[i].1 - eval.1;
        let q = (dx * dx + dy * dy).sqrt() / radius;
        let w = cfg.weight.eval(q) * h_values[i];
        w_mls[i] = w;
        if w > 0.0 {
            active += 1;
        }
    }
    if active < m {
        return Err(IbfdError::DegenerateNeighborhood {
            x: eval.0,
            y: eval.1,
            reason: format!("{active} unmasked points in support, basis needs {m}"),
        });
    }

    let mut gram = DMatrix::zeros(m, m);
    let mut basis_rows = vec![Vec::new(); n];
    for i in 0..n {
        if w_mls[i] == 0.0 {
            continue;
        }
        let xb = (points[i].0 - eval.0) / radius;
        let yb = (points[i].1 - eval.1) / radius;
        let p = cfg.basis(xb, yb);
        for a in 0..m {
            for b in 0..m {
                gram[(a, b)] += w_mls[i] * p[a] * p[b];
            }
        }
        basis_rows[i] = p;
    }

    // p(X) in centered-scaled coordinates is the first basis vector
    let mut rhs = DVector::zeros(m);
    rhs[0] = 1.0;

    let eig = nalgebra::SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, v: &f64| a.max(v.abs()));
    if lmax == 0.0 {
        return Err(IbfdError::DegenerateNeighborhood {
            x: eval.0,
            y: eval.1,
            reason: "all restricted weights vanish".into(),
        });
    }
    let cutoff = lmax / GRAM_CONDITION_LIMIT;
    // pseudo-inverse solve: rank-deficient but consistent systems pass the
    // reproduction check below, genuinely degenerate ones fail it
    let mut upsilon = DVector::zeros(m);
    let proj = eig.eigenvectors.transpose() * &rhs;
    for k in 0..m {
        if eig.eigenvalues[k].abs() > cutoff {
            upsilon += eig.eigenvectors.column(k) * (proj[k] / eig.eigenvalues[k]);
        }
    }

    let mut psi = vec![0.0; n];
    for i in 0..n {
        if w_mls[i] == 0.0 {
            continue;
        }
        let dot: f64 = basis_rows[i]
            .iter()
            .zip(upsilon.iter())
            .map(|(p, u)| p * u)
            .sum();
        psi[i] = w_mls[i] * dot;
    }

    // verify the discrete moment conditions
    let mut defect = 0.0f64;
    for a in 0..m {
        let mut s = 0.0;
        for i in 0..n {
            if w_mls[i] != 0.0 {
                s += psi[i] * basis_rows[i][a];
            }
        }
        let target = if a == 0 { 1.0 } else { 0.0 };
        defect = defect.max((s - target).abs());
    }
    if defect > REPRODUCTION_TOL {
        let lmin = eig.eigenvalues.iter().fold(f64::MAX, |a, v: &f64| a.min(v.abs()));
        return Err(IbfdError::DegenerateNeighborhood {
            x: eval.0,
            y: eval.1,
            reason: format!(
                "polynomial reproduction defect {defect:.3e} (Gram condition estimate {:.3e})",
                lmax / lmin.max(f64::MIN_POSITIVE)
            ),
        });
    }
    Ok(psi)
}

/// Grid nodes of one target lattice within `radius` of `(x, y)`, as
/// (flat index, node position). Positions of periodic images are unwrapped
/// so distances and basis values stay consistent.
fn gather_nodes(
    x: f64,
    y: f64,
    g: &GridSpec,
    target: TransferTarget,
    radius: f64,
) -> Result<Vec<(usize, (f64, f64))>> {
    let w = radius / g.dx;
    if !g.periodic_x() {
        let (x0, x1) = (g.origin.0 + radius, g.origin.0 + g.lx() - radius);
        if x < x0 || x > x1 {
            return Err(IbfdError::OutOfSupport { x, y, half_width: w });
        }
    }
    if !g.periodic_y() {
        let (y0, y1) = (g.origin.1 + radius, g.origin.1 + g.ly() - radius);
        if y < y0 || y > y1 {
            return Err(IbfdError::OutOfSupport { x, y, half_width: w });
        }
    }
    let ((ox, cx), (oy, cy)) = match target {
        TransferTarget::XFace => ((0.0, g.nx + 1), (0.5, g.ny)),
        TransferTarget::YFace => ((0.5, g.nx), (0.0, g.ny + 1)),
        TransferTarget::Cell => ((0.5, g.nx), (0.5, g.ny)),
    };
    let row = match target {
        TransferTarget::XFace => g.nx + 1,
        _ => g.nx,
    };
    let sx = (x - g.origin.0) / g.dx - ox;
    let sy = (y - g.origin.1) / g.dy - oy;
    let xr: Vec<(usize, f64)> = axis_range(sx, cx, g.periodic_x(), ox, w);
    let yr: Vec<(usize, f64)> = axis_range(sy, cy, g.periodic_y(), oy, w);
    if xr.is_empty() || yr.is_empty() {
        return Err(IbfdError::OutOfSupport { x, y, half_width: w });
    }
    let mut out = Vec::with_capacity(xr.len() * yr.len());
    for (j, py) in &yr {
        for (i, px) in &xr {
            let pos = (
                g.origin.0 + (px + ox) * g.dx,
                g.origin.1 + (py + oy) * g.dy,
            );
            out.push((j * row + i, pos));
        }
    }
    Ok(out)
}

fn axis_range(s: f64, count: usize, periodic: bool, offset: f64, w: f64) -> Vec<(usize, f64)> {
    let lo = (s - w).ceil() as i64;
    let hi = (s + w).floor() as i64;
    let wrap = if offset == 0.0 { count as i64 - 1 } else { count as i64 };
    let mut out = Vec::new();
    for k in lo..=hi {
        let idx = if periodic {
            k.rem_euclid(wrap)
        } else {
            if k < 0 || k >= count as i64 {
                continue;
            }
            k
        };
        out.push((idx as usize, k as f64));
    }
    out
}

/// Interpolate a face field onto markers with one-sided MLS weights.
/// `mask` is the Heaviside field H(x) in {0, 1} selecting the interaction
/// region.
pub fn mls_interpolate(
    f: &FaceField,
    m: &MarkerSet,
    cfg: &MlsConfig,
    mask: &dyn Fn(f64, f64) -> f64,
    g: &GridSpec,
) -> Result<Vec<(f64, f64)>> {
    let radius = cfg.radius_cells * g.dx;
    let mut out = Vec::with_capacity(m.len());
    for &(x, y) in &m.positions {
        let mut uv = [0.0, 0.0];
        for (c, target) in [(0usize, TransferTarget::XFace), (1usize, TransferTarget::YFace)] {
            let nodes = gather_nodes(x, y, g, target, radius)?;
            let points: Vec<(f64, f64)> = nodes.iter().map(|(_, p)| *p).collect();
            let h: Vec<f64> = points.iter().map(|(px, py)| mask(*px, *py)).collect();
            let psi = mls_generating_functions(&points, &h, (x, y), cfg, radius)?;
            let data = if c == 0 { &f.u } else { &f.v };
            uv[c] = nodes
                .iter()
                .zip(&psi)
                .map(|((k, _), w)| data[*k] * w)
                .sum();
        }
        out.push((uv[0], uv[1]));
    }
    Ok(out)
}

/// Spread marker force densities with the transpose of the MLS
/// interpolation, preserving the adjointness identity.
pub fn mls_spread(
    forces: &[(f64, f64)],
    m: &MarkerSet,
    cfg: &MlsConfig,
    mask: &dyn Fn(f64, f64) -> f64,
    g: &GridSpec,
) -> Result<FaceField> {
    assert_eq!(forces.len(), m.len());
    let radius = cfg.radius_cells * g.dx;
    let mut field = FaceField::zeros(g, FaceQuantity::Force);
    let inv_area = 1.0 / g.cell_area();
    for (idx, &(x, y)) in m.positions.iter().enumerate() {
        let (fx, fy) = forces[idx];
        let dv = m.weights[idx];
        for (c, target) in [(0usize, TransferTarget::XFace), (1usize, TransferTarget::YFace)] {
            let fc = if c == 0 { fx } else { fy };
            if fc == 0.0 {
                continue;
            }
            let nodes = gather_nodes(x, y, g, target, radius)?;
            let points: Vec<(f64, f64)> = nodes.iter().map(|(_, p)| *p).collect();
            let h: Vec<f64> = points.iter().map(|(px, py)| mask(*px, *py)).collect();
            let psi = mls_generating_functions(&points, &h, (x, y), cfg, radius)?;
            let data = if c == 0 { &mut field.u } else { &mut field.v };
            for ((k, _), w) in nodes.iter().zip(&psi) {
                data[*k] += fc * dv * w * inv_area;
            }
        }
    }
    if g.periodic_x() {
        for j in 0..g.ny {
            let v = field.u_at(0, j);
            field.set_u(g.nx, j, v);
        }
    }
    if g.periodic_y() {
        for i in 0..g.nx {
            let v = field.v_at(i, 0);
            field.set_v(i, g.ny, v);
        }
    }
    field.assert_finite("mls spread");
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SideBcs;
    use crate::kernels::MarkerRole;
    use rand::prelude::*;

    fn scatter(n: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
            .collect()
    }

    #[test]
    fn degree_zero_gives_shepard_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let pts = scatter(12, &mut rng);
        let h = vec![1.0; 12];
        let cfg = MlsConfig {
            degree: 0,
            ..MlsConfig::default()
        };
        let psi = mls_generating_functions(&pts, &h, (0.1, -0.2), &cfg, 2.0).unwrap();
        let wsum: f64 = pts
            .iter()
            .map(|(x, y)| {
                let q = ((x - 0.1f64).powi(2) + (y + 0.2f64).powi(2)).sqrt() / 2.0;
                cfg.weight.eval(q)
            })
            .sum();
        for (i, (x, y)) in pts.iter().enumerate() {
            let q = ((x - 0.1f64).powi(2) + (y + 0.2f64).powi(2)).sqrt() / 2.0;
            let shepard = cfg.weight.eval(q) / wsum;
            assert!((psi[i] - shepard).abs() < 1e-12);
        }
        let total: f64 = psi.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_and_quadratic_reproduction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let pts = scatter(30, &mut rng);
        let h = vec![1.0; 30];
        for degree in [1u8, 2] {
            let cfg = MlsConfig {
                degree,
                ..MlsConfig::default()
            };
            let eval = (0.05, 0.1);
            let psi = mls_generating_functions(&pts, &h, eval, &cfg, 2.0).unwrap();
            let f = |x: f64, y: f64| 2.0 * x - 3.0 * y + 1.0;
            let interp: f64 = pts.iter().zip(&psi).map(|((x, y), w)| f(*x, *y) * w).sum();
            assert!((interp - f(eval.0, eval.1)).abs() < 1e-10, "degree {degree}");
            if degree == 2 {
                let q = |x: f64, y: f64| 0.5 * x * x - x * y + 2.0 * y * y + x - 0.3;
                let interp: f64 = pts.iter().zip(&psi).map(|((x, y), w)| q(*x, *y) * w).sum();
                assert!((interp - q(eval.0, eval.1)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn collinear_points_through_eval_still_reproduce_linears() {
        // rank-deficient but consistent: all points on a line through X
        let eval = (0.0, 0.0);
        let pts: Vec<(f64, f64)> = (-4..=4)
            .filter(|k| *k != 0)
            .map(|k| (0.2 * k as f64, 0.1 * k as f64))
            .collect();
        let h = vec![1.0; pts.len()];
        let cfg = MlsConfig {
            degree: 1,
            ..MlsConfig::default()
        };
        let psi = mls_generating_functions(&pts, &h, eval, &cfg, 1.5).unwrap();
        let f = |x: f64, y: f64| 2.0 * x - 3.0 * y + 1.0;
        let interp: f64 = pts.iter().zip(&psi).map(|((x, y), w)| f(*x, *y) * w).sum();
        assert!((interp - f(eval.0, eval.1)).abs() < 1e-10, "got {interp}");
    }

    #[test]
    fn masked_points_have_exactly_zero_psi() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let pts = scatter(40, &mut rng);
        // half-plane mask: drop everything left of x = 0
        let h: Vec<f64> = pts.iter().map(|(x, _)| if *x < 0.0 { 0.0 } else { 1.0 }).collect();
        let cfg = MlsConfig::default();
        let psi = mls_generating_functions(&pts, &h, (0.3, 0.0), &cfg, 2.0).unwrap();
        for (i, (x, _)) in pts.iter().enumerate() {
            if *x < 0.0 {
                assert_eq!(psi[i], 0.0);
            }
        }
        // right side still reproduces linears
        let f = |x: f64, y: f64| 2.0 * x - 3.0 * y + 1.0;
        let interp: f64 = pts.iter().zip(&psi).map(|((x, y), w)| f(*x, *y) * w).sum();
        assert!((interp - f(0.3, 0.0)).abs() < 1e-10);
    }

    #[test]
    fn too_few_unmasked_points_is_degenerate() {
        let pts = vec![(0.1, 0.0), (0.2, 0.1)];
        let h = vec![1.0, 1.0];
        let cfg = MlsConfig {
            degree: 1,
            ..MlsConfig::default()
        };
        let err = mls_generating_functions(&pts, &h, (0.0, 0.0), &cfg, 1.0);
        assert!(matches!(err, Err(IbfdError::DegenerateNeighborhood { .. })));
    }

    #[test]
    fn grid_interpolation_ignores_masked_interior_values() {
        let g = GridSpec::unit_box(32, 32, 1.0, 1.0, SideBcs::all_walls()).unwrap();
        let disc_center = (0.5, 0.5);
        let disc_r = 0.15;
        let exterior_mask = move |x: f64, y: f64| {
            let d = ((x - disc_center.0).powi(2) + (y - disc_center.1).powi(2)).sqrt();
            if d >= disc_r {
                1.0
            } else {
                0.0
            }
        };
        // markers on the disc boundary
        let n = 24;
        let markers = MarkerSet {
            positions: (0..n)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    (disc_center.0 + disc_r * th.cos(), disc_center.1 + disc_r * th.sin())
                })
                .collect(),
            body_coords: vec![(0.0, 0.0); n],
            weights: vec![1.0; n],
            role: MarkerRole::Surface,
        };
        let cfg = MlsConfig::default();
        let base = FaceField::from_fn(&g, FaceQuantity::Velocity, |x, y| x + y, |x, y| x - y);
        let v1 = mls_interpolate(&base, &markers, &cfg, &exterior_mask, &g).unwrap();
        // perturb strictly interior faces
        let mut perturbed = base.clone();
        for j in 0..g.ny {
            for i in 0..=g.nx {
                let d = ((g.xu(i) - 0.5f64).powi(2) + (g.yu(j) - 0.5f64).powi(2)).sqrt();
                if d < disc_r {
                    perturbed.set_u(i, j, 99.0);
                }
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                let d = ((g.xv(i) - 0.5f64).powi(2) + (g.yv(j) - 0.5f64).powi(2)).sqrt();
                if d < disc_r {
                    perturbed.set_v(i, j, -99.0);
                }
            }
        }
        let v2 = mls_interpolate(&perturbed, &markers, &cfg, &exterior_mask, &g).unwrap();
        for (a, b) in v1.iter().zip(&v2) {
            assert_eq!(a, b, "one-sided interpolation must ignore interior values");
        }
    }

    #[test]
    fn unmasked_grid_mls_matches_linear_field() {
        let g = GridSpec::unit_box(24, 24, 1.0, 1.0, SideBcs::all_walls()).unwrap();
        let markers = MarkerSet {
            positions: vec![(0.47, 0.55), (0.61, 0.38)],
            body_coords: vec![(0.0, 0.0); 2],
            weights: vec![1.0; 2],
            role: MarkerRole::Surface,
        };
        let f = FaceField::from_fn(&g, FaceQuantity::Velocity, |x, y| 3.0 * x - y + 0.5, |x, y| {
            x + 2.0 * y
        });
        let all = |_: f64, _: f64| 1.0;
        let vals = mls_interpolate(&f, &markers, &MlsConfig::default(), &all, &g).unwrap();
        for (k, (u, v)) in vals.iter().enumerate() {
            let (x, y) = markers.positions[k];
            assert!((u - (3.0 * x - y + 0.5)).abs() < 1e-10);
            assert!((v - (x + 2.0 * y)).abs() < 1e-10);
        }
    }

    #[test]
    fn mls_spread_interpolate_adjointness() {
        let g = GridSpec::unit_box(24, 24, 1.0, 1.0, SideBcs::all_walls()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let n = 12;
        let markers = MarkerSet {
            positions: (0..n)
                .map(|_| (0.3 + 0.4 * rng.gen::<f64>(), 0.3 + 0.4 * rng.gen::<f64>()))
                .collect(),
            body_coords: vec![(0.0, 0.0); n],
            weights: (0..n).map(|_| 0.5 + rng.gen::<f64>()).collect(),
            role: MarkerRole::Surface,
        };
        let forces: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let mut field = FaceField::zeros(&g, FaceQuantity::Velocity);
        field.u.iter_mut().for_each(|x| *x = rng.gen::<f64>() - 0.5);
        field.v.iter_mut().for_each(|x| *x = rng.gen::<f64>() - 0.5);
        let all = |_: f64, _: f64| 1.0;
        let cfg = MlsConfig::default();
        let image = mls_spread(&forces, &markers, &cfg, &all, &g).unwrap();
        let lhs = crate::grid::face_inner(&image, &field, &g);
        let interp = mls_interpolate(&field, &markers, &cfg, &all, &g).unwrap();
        let rhs: f64 = (0..n)
            .map(|i| {
                forces[i].0 * interp[i].0 * markers.weights[i]
                    + forces[i].1 * interp[i].1 * markers.weights[i]
            })
            .sum();
        assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs} rhs {rhs}");
    }
}
