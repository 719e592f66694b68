//! Frames, rigid transforms, rays and rigid point-set registration.
//!
//! All lengths are millimetres, all angles radians, all frames right-handed.
//! A [`RigidTransform`] maps coordinates expressed in its `from` frame into its
//! `to` frame; composition checks that the frames chain.

use std::fmt;

use nalgebra::{Matrix3, Matrix3xX, Matrix4, Point3, Quaternion, Rotation3, SymmetricEigen, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::{Error, Real, Result};

/// Symbolic name of a coordinate frame (`tracker`, `patient_ref`, `tool`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameId(String);

impl FrameId {
    pub const TRACKER: &'static str = "tracker";
    pub const PATIENT_REF: &'static str = "patient_ref";
    pub const GRID: &'static str = "grid";

    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FrameId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Proper rigid motion between two named frames.
///
/// The rotation is stored as a unit quaternion whose scalar part is kept
/// non-negative, so equal rotations serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    into = "TransformRepr<T>",
    try_from = "TransformRepr<T>",
    bound = "T: Real"
)]
pub struct RigidTransform<T: Real> {
    from: FrameId,
    to: FrameId,
    rotation: UnitQuaternion<T>,
    translation: Vector3<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct TransformRepr<T: Real> {
    from: FrameId,
    to: FrameId,
    quaternion: [T; 4],
    translation: [T; 3],
}

impl<T: Real> From<RigidTransform<T>> for TransformRepr<T> {
    fn from(t: RigidTransform<T>) -> Self {
        let q = t.rotation.quaternion();
        Self {
            from: t.from,
            to: t.to,
            quaternion: [q.w, q.i, q.j, q.k],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl<T: Real> TryFrom<TransformRepr<T>> for RigidTransform<T> {
    type Error = Error;

    fn try_from(r: TransformRepr<T>) -> Result<Self> {
        let [w, x, y, z] = r.quaternion;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm.as_f64() < 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "quaternion for {}→{} has norm {}",
                r.from,
                r.to,
                norm.as_f64()
            )));
        }
        let [tx, ty, tz] = r.translation;
        Ok(Self::new(
            r.from,
            r.to,
            UnitQuaternion::from_quaternion(q),
            Vector3::new(tx, ty, tz),
        ))
    }
}

fn canonical<T: Real>(q: UnitQuaternion<T>) -> UnitQuaternion<T> {
    if q.w < T::zero() {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn new(
        from: impl Into<FrameId>,
        to: impl Into<FrameId>,
        rotation: UnitQuaternion<T>,
        translation: Vector3<T>,
    ) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn identity(from: impl Into<FrameId>, to: impl Into<FrameId>) -> Self {
        Self::new(from, to, UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_translation(
        from: impl Into<FrameId>,
        to: impl Into<FrameId>,
        translation: Vector3<T>,
    ) -> Self {
        Self::new(from, to, UnitQuaternion::identity(), translation)
    }

    /// Builds a transform from a rotation matrix, rejecting matrices that are
    /// not proper rotations within the configured orthonormality tolerance.
    pub fn from_matrix(
        from: impl Into<FrameId>,
        to: impl Into<FrameId>,
        rotation: &Matrix3<T>,
        translation: Vector3<T>,
    ) -> Result<Self> {
        let tol = T::lit(Tolerances::DEFAULT.rotation_orthonormality);
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if defect > tol || (rotation.determinant() - T::one()).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "matrix is not a proper rotation (orthonormality defect {:.3e})",
                defect.as_f64()
            )));
        }
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Ok(Self::new(from, to, UnitQuaternion::from_rotation_matrix(&rot), translation))
    }

    pub fn from_frame(&self) -> &FrameId {
        &self.from
    }

    pub fn to_frame(&self) -> &FrameId {
        &self.to
    }

    pub fn rotation(&self) -> &UnitQuaternion<T> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// Same motion, relabelled frames.
    pub fn with_frames(mut self, from: impl Into<FrameId>, to: impl Into<FrameId>) -> Self {
        self.from = from.into();
        self.to = to.into();
        self
    }

    pub fn apply_point(&self, p: &Point3<T>) -> Point3<T> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    pub fn apply_ray(&self, ray: &Ray3<T>) -> Ray3<T> {
        Ray3 {
            origin: self.apply_point(&ray.origin),
            direction: Unit::new_normalize(self.apply_vector(&ray.direction)),
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(self.to.clone(), self.from.clone(), inv, -(inv * self.translation))
    }

    /// `self ∘ inner`: applies `inner` first. Requires `inner.to == self.from`.
    pub fn compose(&self, inner: &RigidTransform<T>) -> Result<Self> {
        compose(self, inner)
    }

    /// Rotation angle (radians) of `self⁻¹ ∘ other`, ignoring frame labels.
    pub fn angle_to(&self, other: &Self) -> T {
        self.rotation.angle_to(&other.rotation)
    }

    /// Translation distance between the two transforms, ignoring frame labels.
    pub fn distance_to(&self, other: &Self) -> T {
        (self.translation - other.translation).norm()
    }
}

/// Chains two transforms: the result maps `b.from` to `a.to`.
pub fn compose<T: Real>(a: &RigidTransform<T>, b: &RigidTransform<T>) -> Result<RigidTransform<T>> {
    if a.from != b.to {
        return Err(Error::FrameChain {
            expected: a.from.to_string(),
            found: b.to.to_string(),
        });
    }
    let mut rotation = a.rotation * b.rotation;
    rotation.renormalize();
    Ok(RigidTransform::new(
        b.from.clone(),
        a.to.clone(),
        rotation,
        a.rotation * b.translation + a.translation,
    ))
}

/// Half-line with a unit direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RayRepr<T>", try_from = "RayRepr<T>", bound = "T: Real")]
pub struct Ray3<T: Real> {
    pub origin: Point3<T>,
    pub direction: Unit<Vector3<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct RayRepr<T: Real> {
    origin: [T; 3],
    direction: [T; 3],
}

impl<T: Real> From<Ray3<T>> for RayRepr<T> {
    fn from(r: Ray3<T>) -> Self {
        Self {
            origin: [r.origin.x, r.origin.y, r.origin.z],
            direction: [r.direction.x, r.direction.y, r.direction.z],
        }
    }
}

impl<T: Real> TryFrom<RayRepr<T>> for Ray3<T> {
    type Error = Error;

    fn try_from(r: RayRepr<T>) -> Result<Self> {
        Ray3::new(Point3::from(r.origin), Vector3::from(r.direction))
    }
}

impl<T: Real> Ray3<T> {
    /// Normalizes `direction`; a zero or non-finite direction is rejected.
    pub fn new(origin: Point3<T>, direction: Vector3<T>) -> Result<Self> {
        let n = direction.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::InvalidParameter("ray direction has zero length".into()));
        }
        Ok(Self {
            origin,
            direction: Unit::new_unchecked(direction / n),
        })
    }

    pub fn through(origin: Point3<T>, target: Point3<T>) -> Result<Self> {
        Self::new(origin, target - origin)
    }

    pub fn point_at(&self, s: T) -> Point3<T> {
        self.origin + self.direction.into_inner() * s
    }

    /// Distance from `p` to the infinite line carrying the ray.
    pub fn line_distance(&self, p: &Point3<T>) -> T {
        let w = p - self.origin;
        (w - self.direction.into_inner() * w.dot(&self.direction)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestApproach<T: Real> {
    /// Midpoint of the common perpendicular.
    pub midpoint: Point3<T>,
    /// Length of the common perpendicular.
    pub gap: T,
    /// Line parameters of the feet on the first and second ray.
    pub s: T,
    pub t: T,
}

/// Closest approach of the lines carrying two rays.
pub fn closest_point_between<T: Real>(r1: &Ray3<T>, r2: &Ray3<T>) -> Result<ClosestApproach<T>> {
    let d1 = r1.direction.into_inner();
    let d2 = r2.direction.into_inner();
    if d1.cross(&d2).norm() < T::lit(Tolerances::DEFAULT.parallel_rays) {
        return Err(Error::ParallelRays);
    }
    let w0 = r1.origin - r2.origin;
    let b = d1.dot(&d2);
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let denom = T::one() - b * b;
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    let p1 = r1.point_at(s);
    let p2 = r2.point_at(t);
    Ok(ClosestApproach {
        midpoint: nalgebra::center(&p1, &p2),
        gap: (p1 - p2).norm(),
        s,
        t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineBundleFit<T: Real> {
    pub point: Point3<T>,
    /// Root-mean-square distance of `point` to the lines.
    pub rms_distance: T,
    /// Condition number of the normal matrix.
    pub condition: T,
}

/// Least-squares point closest to a bundle of lines (closed form, 3×3 normal
/// equations).
pub fn nearest_point_to_lines<T: Real>(lines: &[Ray3<T>], max_condition: f64) -> Result<LineBundleFit<T>> {
    if lines.len() < 2 {
        return Err(Error::InsufficientFiducials {
            got: lines.len(),
            required: 2,
        });
    }
    let mut a = Matrix3::<T>::zeros();
    let mut b = Vector3::<T>::zeros();
    for line in lines {
        let d = line.direction.into_inner();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * line.origin.coords;
    }
    let eig = a.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > T::zero() {
        lmax / lmin
    } else {
        T::lit(f64::INFINITY)
    };
    if !(condition.as_f64() <= max_condition) {
        return Err(Error::IllConditioned {
            condition: condition.as_f64(),
        });
    }
    let x = a
        .cholesky()
        .map(|c| c.solve(&b))
        .ok_or(Error::IllConditioned {
            condition: condition.as_f64(),
        })?;
    let point = Point3::from(x);
    let n = T::lit(lines.len() as f64);
    let sq: T = lines
        .iter()
        .map(|l| {
            let d = l.line_distance(&point);
            d * d
        })
        .fold(T::zero(), |acc, v| acc + v);
    Ok(LineBundleFit {
        point,
        rms_distance: (sq / n).sqrt(),
        condition,
    })
}

/// Result of [`register_point_sets`]: the motion taking model points onto
/// observed points, labelled `model → observed` until relabelled.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration<T: Real> {
    pub transform: RigidTransform<T>,
    pub rms: T,
}

/// Closed-form least-squares absolute orientation (cross-covariance SVD with
/// reflection correction). Correspondence is by index.
pub fn register_point_sets<T: Real>(model: &[Point3<T>], observed: &[Point3<T>]) -> Result<Registration<T>> {
    register_point_sets_with(model, observed, &Tolerances::DEFAULT)
}

pub fn register_point_sets_with<T: Real>(
    model: &[Point3<T>],
    observed: &[Point3<T>],
    tol: &Tolerances,
) -> Result<Registration<T>> {
    if model.len() != observed.len() {
        return Err(Error::LengthMismatch {
            model: model.len(),
            observed: observed.len(),
        });
    }
    if model.len() < 3 {
        return Err(Error::InsufficientMarkers { got: model.len() });
    }
    let n = T::lit(model.len() as f64);
    let cm = centroid(model);
    let co = centroid(observed);

    let centred_model = Matrix3xX::from_columns(&model.iter().map(|p| p - cm).collect::<Vec<_>>());
    let centred_obs = Matrix3xX::from_columns(&observed.iter().map(|p| p - co).collect::<Vec<_>>());

    let spread = centred_model.clone().svd(false, false).singular_values;
    let s_max = spread.max();
    let s_mid = {
        let mut s = [spread[0], spread[1], spread[2]];
        s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        s[1]
    };
    if !(s_max > T::zero()) || s_mid / s_max < T::lit(tol.collinearity_ratio) {
        return Err(Error::DegenerateGeometry("model points are collinear".into()));
    }

    // unit quaternion maximizing alignment: top eigenvector of the symmetric 4x4 form
    let h = &centred_model * centred_obs.transpose();
    let s = |i: usize, j: usize| h[(i, j)];
    let n4 = Matrix4::new(
        s(0, 0) + s(1, 1) + s(2, 2),
        s(1, 2) - s(2, 1),
        s(2, 0) - s(0, 2),
        s(0, 1) - s(1, 0),
        s(1, 2) - s(2, 1),
        s(0, 0) - s(1, 1) - s(2, 2),
        s(0, 1) + s(1, 0),
        s(2, 0) + s(0, 2),
        s(2, 0) - s(0, 2),
        s(0, 1) + s(1, 0),
        -s(0, 0) + s(1, 1) - s(2, 2),
        s(1, 2) + s(2, 1),
        s(0, 1) - s(1, 0),
        s(2, 0) + s(0, 2),
        s(1, 2) + s(2, 1),
        -s(0, 0) - s(1, 1) + s(2, 2),
    );
    let eig = SymmetricEigen::new(n4);
    let q = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let rotation = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let translation = co.coords - rotation * cm.coords;
    let transform = RigidTransform::new("model", "observed", rotation, translation);

    let sq = model
        .iter()
        .zip(observed)
        .map(|(m, o)| (transform.apply_point(m) - o).norm_squared())
        .fold(T::zero(), |acc, v| acc + v);
    Ok(Registration {
        transform,
        rms: (sq / n).sqrt(),
    })
}

pub fn centroid<T: Real>(points: &[Point3<T>]) -> Point3<T> {
    let n = T::lit(points.len().max(1) as f64);
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / n)
}

/// Rotation from an axis-angle vector given in degrees.
pub fn rotation_from_degrees<T: Real>(rotvec_deg: &Vector3<T>) -> UnitQuaternion<T> {
    UnitQuaternion::from_scaled_axis(rotvec_deg * (T::pi() / T::lit(180.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rz(deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), deg.to_radians())
    }

    #[test]
    fn compose_with_identity_is_noop() {
        let t = RigidTransform::new("a", "b", rz(33.0), Vector3::new(1.0, -2.0, 3.0));
        let id = RigidTransform::identity("a", "a");
        let c = compose(&t, &id).unwrap();
        assert_relative_eq!(c.translation(), t.translation(), epsilon = 1e-12);
        assert!(c.angle_to(&t) < 1e-12);
        assert_eq!(c.from_frame().as_str(), "a");
        assert_eq!(c.to_frame().as_str(), "b");
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = RigidTransform::new("a", "b", rz(71.0), Vector3::new(4.0, 5.0, -6.0));
        let c = compose(&t, &t.inverse()).unwrap();
        assert!(c.translation().norm() < 1e-9);
        assert!(c.rotation().angle() < 1e-9);
        assert_eq!(c.from_frame(), c.to_frame());
    }

    #[test]
    fn compose_matches_hand_matrix_product() {
        // a = Rz(90°) + (1,0,0), b = Rz(90°): a(b(1,0,0)) = a(0,1,0) = (-1,0,0) + (1,0,0)
        let a = RigidTransform::new("m", "o", rz(90.0), Vector3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::new("i", "m", rz(90.0), Vector3::zeros());
        let c = compose(&a, &b).unwrap();
        let p = c.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Point3::new(0.0, 0.0, 0.0), epsilon = 1e-12);

        let ma = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let hand = ma * (ma * Vector3::new(1.0, 0.0, 0.0)) + Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(p.coords, hand, epsilon = 1e-12);
    }

    #[test]
    fn compose_rejects_broken_chain() {
        let a = RigidTransform::<f64>::identity("x", "y");
        let b = RigidTransform::<f64>::identity("p", "q");
        assert!(matches!(compose(&a, &b), Err(Error::FrameChain { .. })));
    }

    #[test]
    fn quaternion_is_canonical_and_json_shape_is_stable() {
        let q = UnitQuaternion::new_unchecked(-rz(40.0).into_inner());
        let t = RigidTransform::new("tool", "tracker", q, Vector3::new(1.0, 2.0, 3.0));
        assert!(t.rotation().w >= 0.0);
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["from"], "tool");
        assert_eq!(json["to"], "tracker");
        assert_eq!(json["quaternion"].as_array().unwrap().len(), 4);
        assert_eq!(json["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        let back: RigidTransform<f64> = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::from_matrix("a", "b", &m, Vector3::zeros()).is_err());
        let ok = RigidTransform::<f64>::from_matrix("a", "b", &Matrix3::identity(), Vector3::zeros());
        assert!(ok.is_ok());
    }

    #[test]
    fn register_identity_and_translation() {
        let model = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let r = register_point_sets(&model, &model).unwrap();
        assert!(r.rms < 1e-12);
        assert!(r.transform.rotation().angle() < 1e-12);

        let shifted: Vec<_> = model.iter().map(|p| p + Vector3::new(5.0, 5.0, 5.0)).collect();
        let r = register_point_sets(&model, &shifted).unwrap();
        assert_relative_eq!(*r.transform.translation(), Vector3::new(5.0, 5.0, 5.0), epsilon = 1e-12);
        assert!(r.transform.rotation().angle() < 1e-12);
        assert!(r.rms < 1e-12);
    }

    #[test]
    fn register_error_paths() {
        let two = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            register_point_sets(&two, &two),
            Err(Error::InsufficientMarkers { got: 2 })
        ));
        let line: Vec<_> = (0..4).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            register_point_sets(&line, &line),
            Err(Error::DegenerateGeometry(_))
        ));
        let three = vec![Point3::origin(); 3];
        assert!(matches!(
            register_point_sets(&line, &three),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn closest_point_intersecting_and_skew() {
        let r1 = Ray3::new(Point3::new(0.0, 2.0, 3.0), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let r2 = Ray3::new(Point3::new(1.0, 0.0, 3.0), Vector3::new(0.0, 1.0, 0.0)).unwrap();
        let c = closest_point_between(&r1, &r2).unwrap();
        assert_relative_eq!(c.midpoint, Point3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
        assert!(c.gap < 1e-12);

        let a = Ray3::new(Point3::new(0.0, 0.0, 0.0), Vector3::x()).unwrap();
        let b = Ray3::new(Point3::new(0.0, 0.0, 2.0), Vector3::y()).unwrap();
        let c = closest_point_between(&a, &b).unwrap();
        assert_relative_eq!(c.midpoint.z, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.gap, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn closest_point_parallel_errors() {
        let a = Ray3::new(Point3::new(0.0, 0.0, 0.0), Vector3::x()).unwrap();
        let b = Ray3::new(Point3::new(0.0, 1.0, 0.0), -Vector3::x()).unwrap();
        assert_eq!(closest_point_between(&a, &b), Err(Error::ParallelRays));
    }

    #[test]
    fn zero_direction_ray_rejected() {
        assert!(Ray3::<f64>::new(Point3::origin(), Vector3::zeros()).is_err());
    }

    #[test]
    fn line_bundle_requires_two_lines() {
        let a = Ray3::new(Point3::new(0.0, 0.0, 0.0), Vector3::x()).unwrap();
        assert!(matches!(
            nearest_point_to_lines(std::slice::from_ref(&a), 1e10),
            Err(Error::InsufficientFiducials { got: 1, .. })
        ));
        assert!(matches!(
            nearest_point_to_lines(&[a.clone(), a], 1e10),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn f32_registration_works() {
        let model: Vec<Point3<f32>> = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(50.0, 0.0, 0.0),
            Point3::new(0.0, 40.0, 0.0),
            Point3::new(10.0, 10.0, 30.0),
        ];
        let t = RigidTransform::new(
            "a",
            "b",
            UnitQuaternion::from_euler_angles(0.3f32, -0.2, 1.1),
            Vector3::new(10.0, 20.0, 30.0),
        );
        let obs: Vec<_> = model.iter().map(|p| t.apply_point(p)).collect();
        let r = register_point_sets(&model, &obs).unwrap();
        assert!(r.rms < 1e-3);
        assert!(r.transform.angle_to(&t) < 1e-4);
    }
}
