//! Convex set estimation from point clouds.

use super::{Facet, FitMethod, TerminalSet};
use crate::error::{CoreError, Result};
use crate::rng::substream;
use crate::stats::chi2_quantile;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Facet directions used for dimensions above two and for converting a
    /// fitted ellipsoid into tangent halfspaces.
    pub directions: usize,
    /// Smallest admissible Chebyshev radius; thinner fits are inflated.
    pub min_radius: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            directions: 32,
            min_radius: 1e-3,
        }
    }
}

/// Deterministic unit directions covering the sphere: exact uniform angles
/// in 2-D, signed axes plus fixed pseudo-random directions otherwise.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(dim >= 1);
    if dim == 1 {
        return vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)];
    }
    if dim == 2 {
        return (0..count.max(4))
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / count.max(4) as f64;
                DVector::from_column_slice(&[angle.cos(), angle.sin()])
            })
            .collect();
    }
    let mut dirs = Vec::with_capacity(count.max(2 * dim));
    for d in 0..dim {
        let mut up = DVector::zeros(dim);
        up[d] = 1.0;
        dirs.push(up.clone());
        dirs.push(-up);
    }
    let mut rng = substream(0x5fe1_d1c5, &[dim as u64, count as u64]);
    while dirs.len() < count.max(2 * dim) {
        let mut v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n > 1e-8 {
            v /= n;
            dirs.push(v);
        }
    }
    dirs
}

fn centroid(points: &[DVector<f64>]) -> DVector<f64> {
    let mut c = DVector::zeros(points[0].len());
    for p in points {
        c += p;
    }
    c / points.len() as f64
}

fn sample_covariance(points: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let n = points[0].len();
    let mut cov = DMatrix::zeros(n, n);
    for p in points {
        let d = p - mean;
        cov += &d * d.transpose();
    }
    cov / (points.len().max(2) - 1) as f64
}

/// Dimension of the affine hull of the points (eigenvalue count of the
/// covariance above a relative threshold).
fn affine_rank(points: &[DVector<f64>]) -> usize {
    let mean = centroid(points);
    let cov = sample_covariance(points, &mean);
    let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
    let max = eig.eigenvalues.max().max(0.0);
    if max <= 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|&&v| v > 1e-10 * max).count()
}

/// Exact 2-D convex hull facets via the monotone chain.
fn hull_facets_2d(points: &[DVector<f64>]) -> Result<Vec<Facet>> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    let hull: Vec<(f64, f64)> = lower.into_iter().chain(upper).collect();
    if hull.len() < 3 {
        return Err(CoreError::DegenerateGeometry(
            "hull collapsed to fewer than three vertices".into(),
        ));
    }
    // Hull is counter-clockwise; outward normal of edge (v, w) is the edge
    // direction rotated by -90°.
    let mut facets = Vec::with_capacity(hull.len());
    for i in 0..hull.len() {
        let v = hull[i];
        let w = hull[(i + 1) % hull.len()];
        let edge = (w.0 - v.0, w.1 - v.1);
        let mut normal = DVector::from_column_slice(&[edge.1, -edge.0]);
        let norm = normal.norm();
        if norm < 1e-14 {
            continue;
        }
        normal /= norm;
        facets.push(Facet {
            offset: normal[0] * v.0 + normal[1] * v.1,
            normal,
        });
    }
    Ok(facets)
}

fn apply_radius_floor(set: &mut TerminalSet, min_radius: f64) -> Result<()> {
    let r = set.chebyshev_radius()?;
    if r < min_radius {
        set.inflate(min_radius - r);
    }
    Ok(())
}

/// Convex outer hull of the points as halfspace facets.
///
/// In 2-D the hull is exact; in higher dimensions the facets are supporting
/// halfspaces along a fixed direction set (an outer approximation of the
/// hull, which is the conservative direction for a terminal set candidate
/// before the monotonicity guard).
pub fn fit_polytope(points: &[DVector<f64>], opts: &FitOptions) -> Result<TerminalSet> {
    let dim = points
        .first()
        .map(|p| p.len())
        .ok_or_else(|| CoreError::InvalidInput("no points to fit".into()))?;
    if points.len() < dim + 1 {
        return Err(CoreError::DegenerateGeometry(format!(
            "polytope fit needs at least {} points, got {}",
            dim + 1,
            points.len()
        )));
    }
    if affine_rank(points) < dim {
        return Err(CoreError::DegenerateGeometry(
            "points are not full-dimensional".into(),
        ));
    }
    let facets = if dim == 2 {
        hull_facets_2d(points)?
    } else {
        sphere_directions(dim, opts.directions)
            .into_iter()
            .map(|normal| {
                let offset = points
                    .iter()
                    .map(|p| normal.dot(p))
                    .fold(f64::NEG_INFINITY, f64::max);
                Facet { normal, offset }
            })
            .collect()
    };
    let mut set = TerminalSet {
        facets,
        method: FitMethod::Polytope,
        generation: 0,
        seeds: Vec::new(),
        ellipsoid_scale_sq: None,
    };
    apply_radius_floor(&mut set, opts.min_radius)?;
    Ok(set)
}

/// Tangent halfspaces of a covariance ellipsoid scaled to the chi-square
/// quantile at `prob_level`; every facet is then pushed outward far enough
/// to cover all input points.
pub fn fit_ellipsoid(
    points: &[DVector<f64>],
    prob_level: f64,
    opts: &FitOptions,
) -> Result<TerminalSet> {
    let dim = points
        .first()
        .map(|p| p.len())
        .ok_or_else(|| CoreError::InvalidInput("no points to fit".into()))?;
    if points.len() < 2 {
        return Err(CoreError::DegenerateGeometry(
            "ellipsoid fit needs at least two points".into(),
        ));
    }
    if affine_rank(points) < dim {
        return Err(CoreError::DegenerateGeometry(
            "points are not full-dimensional".into(),
        ));
    }
    let mean = centroid(points);
    let cov = sample_covariance(points, &mean);
    let scale_sq = chi2_quantile(prob_level, dim);
    let scaled = &cov * scale_sq;
    let facets = sphere_directions(dim, opts.directions)
        .into_iter()
        .map(|normal| {
            let tangent = mean.dot(&normal) + normal.dot(&(&scaled * &normal)).max(0.0).sqrt();
            let cover = points
                .iter()
                .map(|p| normal.dot(p))
                .fold(f64::NEG_INFINITY, f64::max);
            Facet {
                offset: tangent.max(cover),
                normal,
            }
        })
        .collect();
    let mut set = TerminalSet {
        facets,
        method: FitMethod::Ellipsoid,
        generation: 0,
        seeds: Vec::new(),
        ellipsoid_scale_sq: Some(scale_sq),
    };
    apply_radius_floor(&mut set, opts.min_radius)?;
    Ok(set)
}
