//! Image-intensifier distortion: the synthetic forward warp and the fitted
//! polynomial dewarp learned from the lower calibration plate.
//!
//! The forward model is radial pincushion `r' = r (1 + k1 r² + k2 r⁴)` followed
//! by a rotation about the centre of `s_rot · (r / domain)²` radians.
//!
//! The dewarp is a global bivariate polynomial from distorted to ideal pixel
//! coordinates. It is evaluated on normalized offsets
//! `u = (x − cx) / domain`, `v = (y − cy) / domain` and its coefficients are
//! stored in graded-lexicographic monomial order with `u` ahead of `v`:
//! `1, u, v, u², uv, v², u³, u²v, uv², v³, ...`.

use nalgebra::{DMatrix, DVector, Point2, Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DistortionParams<T: Real> {
    /// Radial coefficient, px⁻².
    pub k1: T,
    /// Radial coefficient, px⁻⁴.
    pub k2: T,
    /// Rotation (radians) reached at the domain radius.
    pub s_rot: T,
    pub center: Point2<T>,
    /// Radius of the image disc, px.
    pub domain_radius: T,
}

impl<T: Real> DistortionParams<T> {
    pub fn none(center: Point2<T>, domain_radius: T) -> Self {
        Self {
            k1: T::zero(),
            k2: T::zero(),
            s_rot: T::zero(),
            center,
            domain_radius,
        }
    }

    fn radial(&self, r: T) -> T {
        let r2 = r * r;
        r * (T::one() + self.k1 * r2 + self.k2 * r2 * r2)
    }

    /// Checks the forward map is injective on the disc.
    ///
    /// The map acts as `(r, φ) ↦ (f(r), φ + g(r))`, which is one-to-one exactly
    /// when `f` is strictly increasing; `f'` is sampled over the disc.
    pub fn validate(&self) -> Result<()> {
        if !(self.domain_radius > T::zero()) {
            return Err(Error::InvalidParameter("distortion domain radius must be positive".into()));
        }
        let samples = 2048;
        for i in 0..=samples {
            let r = self.domain_radius * T::lit(i as f64 / samples as f64);
            let r2 = r * r;
            let slope = T::one() + T::lit(3.0) * self.k1 * r2 + T::lit(5.0) * self.k2 * r2 * r2;
            if !(slope > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "distortion folds over at r = {:.1} px",
                    r.as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Applies the forward distortion to an ideal pixel position.
pub fn distort<T: Real>(p: &Point2<T>, params: &DistortionParams<T>) -> Result<Point2<T>> {
    let d = p - params.center;
    let r = d.norm();
    if r > params.domain_radius {
        return Err(Error::Domain {
            radius: r.as_f64(),
            limit: params.domain_radius.as_f64(),
        });
    }
    if r == T::zero() {
        return Ok(*p);
    }
    let scaled = d * (params.radial(r) / r);
    let rel = r / params.domain_radius;
    let angle = params.s_rot * rel * rel;
    let (s, c) = angle.sin_cos();
    let rotated = Vector2::new(c * scaled.x - s * scaled.y, s * scaled.x + c * scaled.y);
    Ok(params.center + rotated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plate {
    Lower,
    Upper,
}

/// One radio-opaque fiducial as seen in a shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GridObservation<T: Real> {
    pub plate: Plate,
    pub fiducial_id: u32,
    /// Distorted image position, px.
    pub image_point: Point2<T>,
    /// Fiducial position in the grid frame, mm.
    pub truth_3d: Point3<T>,
}

/// Graded-lexicographic exponent pairs `(i, j)` for `u^i v^j` up to `degree`.
pub fn monomials(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity((degree + 1) * (degree + 2) / 2);
    for total in 0..=degree {
        for i in (0..=total).rev() {
            out.push((i, total - i));
        }
    }
    out
}

pub fn monomial_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DewarpModel<T: Real> {
    pub degree: usize,
    /// Normalization centre, px.
    pub center: Point2<T>,
    /// Radius of the calibrated disc (also the normalization scale), px.
    pub domain_radius: T,
    pub coeffs_x: Vec<T>,
    pub coeffs_y: Vec<T>,
    /// Root-mean-square training residual, px.
    pub fit_rms: T,
}

impl<T: Real> DewarpModel<T> {
    /// Polynomial that returns its input unchanged.
    pub fn identity(center: Point2<T>, domain_radius: T) -> Self {
        // x = cx + R·u, y = cy + R·v
        Self {
            degree: 1,
            center,
            domain_radius,
            coeffs_x: vec![center.x, domain_radius, T::zero()],
            coeffs_y: vec![center.y, T::zero(), domain_radius],
            fit_rms: T::zero(),
        }
    }

    pub fn contains(&self, p: &Point2<T>) -> bool {
        (p - self.center).norm() <= self.domain_radius
    }

    /// Evaluates the polynomial without the domain check.
    pub fn evaluate(&self, p: &Point2<T>) -> Point2<T> {
        let basis = basis_row(p, &self.center, self.domain_radius, self.degree);
        let x = dot(&basis, &self.coeffs_x);
        let y = dot(&basis, &self.coeffs_y);
        Point2::new(x, y)
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn basis_row<T: Real>(p: &Point2<T>, center: &Point2<T>, scale: T, degree: usize) -> Vec<T> {
    let u = (p.x - center.x) / scale;
    let v = (p.y - center.y) / scale;
    let mut pu = vec![T::one(); degree + 1];
    let mut pv = vec![T::one(); degree + 1];
    for k in 1..=degree {
        pu[k] = pu[k - 1] * u;
        pv[k] = pv[k - 1] * v;
    }
    monomials(degree).into_iter().map(|(i, j)| pu[i] * pv[j]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DewarpConfig<T: Real> {
    pub degree: usize,
    /// Image centre used for normalization, px.
    pub center: Point2<T>,
    /// Image disc radius, px; the fitted domain never exceeds it.
    pub image_radius: T,
}

/// Least-squares fit of the distorted → ideal map from lower-plate fiducials.
///
/// `ideal_projector` gives the undistorted pixel position of each observation.
/// The fitted domain is the largest disc about the centre inside the convex
/// hull of the training points, capped at the image radius.
pub fn fit_dewarp<T, F>(
    observations: &[GridObservation<T>],
    ideal_projector: F,
    config: &DewarpConfig<T>,
) -> Result<DewarpModel<T>>
where
    T: Real,
    F: Fn(&GridObservation<T>) -> Result<Point2<T>>,
{
    let unknowns = monomial_count(config.degree);
    let lower: Vec<&GridObservation<T>> =
        observations.iter().filter(|o| o.plate == Plate::Lower).collect();
    if lower.len() < unknowns {
        return Err(Error::UnderconstrainedFit {
            observations: lower.len(),
            unknowns,
            rank: 0,
        });
    }

    let c = config.center;
    let pts: Vec<Point2<T>> = lower.iter().map(|o| o.image_point).collect();
    let domain = inscribed_radius(&pts, &c).min(config.image_radius);
    if !(domain > T::zero()) {
        return Err(Error::DegenerateGeometry("training points do not surround the image centre".into()));
    }

    let n = lower.len();
    let mut design = DMatrix::<T>::zeros(n, unknowns);
    let mut target_x = DVector::<T>::zeros(n);
    let mut target_y = DVector::<T>::zeros(n);
    let mut ideals = Vec::with_capacity(n);
    for (row, o) in lower.iter().enumerate() {
        let basis = basis_row(&o.image_point, &c, domain, config.degree);
        for (col, b) in basis.into_iter().enumerate() {
            design[(row, col)] = b;
        }
        let ideal = ideal_projector(o)?;
        target_x[row] = ideal.x;
        target_y[row] = ideal.y;
        ideals.push(ideal);
    }

    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let threshold = s_max * T::lit(Tolerances::DEFAULT.fit_rank_ratio);
    let rank = svd.singular_values.iter().filter(|s| **s > threshold).count();
    if rank < unknowns {
        return Err(Error::UnderconstrainedFit {
            observations: n,
            unknowns,
            rank,
        });
    }
    let eps = threshold;
    let cx = svd
        .solve(&target_x, eps)
        .map_err(|e| Error::DegenerateGeometry(e.to_string()))?;
    let cy = svd
        .solve(&target_y, eps)
        .map_err(|e| Error::DegenerateGeometry(e.to_string()))?;

    let mut model = DewarpModel {
        degree: config.degree,
        center: c,
        domain_radius: domain,
        coeffs_x: cx.iter().copied().collect(),
        coeffs_y: cy.iter().copied().collect(),
        fit_rms: T::zero(),
    };
    let sq = lower
        .iter()
        .zip(&ideals)
        .map(|(o, ideal)| (model.evaluate(&o.image_point) - ideal).norm_squared())
        .fold(T::zero(), |acc, v| acc + v);
    model.fit_rms = (sq / T::lit(n as f64)).sqrt();
    Ok(model)
}

/// Distance from `center` to the nearest edge of the convex hull of `points`
/// (zero when the centre is not strictly inside the hull).
fn inscribed_radius<T: Real>(points: &[Point2<T>], center: &Point2<T>) -> T {
    let mut pts: Vec<Point2<T>> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.y.partial_cmp(&b.y).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup();
    if pts.len() < 3 {
        return T::zero();
    }
    let cross = |o: &Point2<T>, a: &Point2<T>, b: &Point2<T>| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    // Andrew's monotone chain, counter-clockwise
    let mut hull: Vec<Point2<T>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<T>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= T::zero() {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return T::zero();
    }
    let mut radius = T::lit(f64::INFINITY);
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let edge = (b - a).norm();
        // signed distance, positive on the interior (left) side
        let d = cross(&a, &b, center) / edge;
        if !(d > T::zero()) {
            return T::zero();
        }
        radius = radius.min(d);
    }
    radius
}

/// Maps a distorted pixel position to its ideal position.
pub fn dewarp<T: Real>(p: &Point2<T>, model: &DewarpModel<T>) -> Result<Point2<T>> {
    let r = (p - model.center).norm();
    if r > model.domain_radius {
        return Err(Error::Domain {
            radius: r.as_f64(),
            limit: model.domain_radius.as_f64(),
        });
    }
    Ok(model.evaluate(p))
}

/// Labels unlabelled blobs with the id of the nearest predicted fiducial.
///
/// A blob is accepted only when its nearest prediction is closer than
/// `second_nearest / ambiguity_ratio` and no two blobs claim the same id.
pub fn label_by_nearest<T: Real>(
    blobs: &[Point2<T>],
    predictions: &[(u32, Point2<T>)],
    ambiguity_ratio: T,
) -> Result<Vec<u32>> {
    if predictions.len() < 2 {
        return Err(Error::AmbiguousCorrespondence("need at least two predictions".into()));
    }
    let mut labels = Vec::with_capacity(blobs.len());
    for (k, blob) in blobs.iter().enumerate() {
        let mut best = (T::lit(f64::INFINITY), u32::MAX);
        let mut second = T::lit(f64::INFINITY);
        for (id, pred) in predictions {
            let d = (blob - pred).norm();
            if d < best.0 {
                second = best.0;
                best = (d, *id);
            } else if d < second {
                second = d;
            }
        }
        if !(best.0 * ambiguity_ratio < second) {
            return Err(Error::AmbiguousCorrespondence(format!(
                "blob {k} is {:.3} px from fiducial {} but {:.3} px from another",
                best.0.as_f64(),
                best.1,
                second.as_f64()
            )));
        }
        if labels.contains(&best.1) {
            return Err(Error::AmbiguousCorrespondence(format!(
                "fiducial {} claimed by more than one blob",
                best.1
            )));
        }
        labels.push(best.1);
    }
    Ok(labels)
}
