//! Closed convex sets with (possibly time-dependent) parameters, exact
//! Euclidean projections, and normal-cone membership residuals.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// A set parameter that is either constant or a function of time.
pub enum TimeFn<R, T> {
    Const(T),
    Varying(Arc<dyn Fn(R) -> T + Send + Sync>),
}

impl<R: Scalar, T: Clone> TimeFn<R, T> {
    pub fn constant(v: T) -> Self {
        TimeFn::Const(v)
    }

    pub fn of<F>(f: F) -> Self
    where
        F: Fn(R) -> T + Send + Sync + 'static,
    {
        TimeFn::Varying(Arc::new(f))
    }

    pub fn eval(&self, t: R) -> T {
        match self {
            TimeFn::Const(v) => v.clone(),
            TimeFn::Varying(f) => f(t),
        }
    }
}

impl<R, T: Clone> Clone for TimeFn<R, T> {
    fn clone(&self) -> Self {
        match self {
            TimeFn::Const(v) => TimeFn::Const(v.clone()),
            TimeFn::Varying(f) => TimeFn::Varying(Arc::clone(f)),
        }
    }
}

impl<R, T: fmt::Debug> fmt::Debug for TimeFn<R, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Const(v) => write!(f, "Const({v:?})"),
            TimeFn::Varying(_) => write!(f, "Varying(<fn of t>)"),
        }
    }
}

/// The closed convex sets used as feasible regions X(t).
///
/// `CappedDisk` is the 2-D inverter operating region
/// {(p, q) : 0 ≤ p ≤ pmax, p² + q² ≤ smax²}; `Product` projects blockwise.
#[derive(Clone, Debug)]
pub enum ConvexSet<R: Scalar> {
    AllSpace { dim: usize },
    NonnegOrthant { dim: usize },
    Box { lo: TimeFn<R, DVector<R>>, hi: TimeFn<R, DVector<R>> },
    Ball { center: TimeFn<R, DVector<R>>, radius: TimeFn<R, R> },
    CappedDisk { pmax: TimeFn<R, R>, smax: TimeFn<R, R> },
    Product(Vec<ConvexSet<R>>),
}

impl<R: Scalar> ConvexSet<R> {
    pub fn all_space(dim: usize) -> Self {
        ConvexSet::AllSpace { dim }
    }

    pub fn nonneg_orthant(dim: usize) -> Self {
        ConvexSet::NonnegOrthant { dim }
    }

    pub fn fixed_box(lo: DVector<R>, hi: DVector<R>) -> Self {
        ConvexSet::Box {
            lo: TimeFn::constant(lo),
            hi: TimeFn::constant(hi),
        }
    }

    pub fn fixed_ball(center: DVector<R>, radius: R) -> Self {
        ConvexSet::Ball {
            center: TimeFn::constant(center),
            radius: TimeFn::constant(radius),
        }
    }

    pub fn fixed_capped_disk(pmax: R, smax: R) -> Self {
        ConvexSet::CappedDisk {
            pmax: TimeFn::constant(pmax),
            smax: TimeFn::constant(smax),
        }
    }

    /// Ambient dimension of the set.
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::AllSpace { dim } | ConvexSet::NonnegOrthant { dim } => *dim,
            ConvexSet::Box { lo, .. } => match lo {
                TimeFn::Const(v) => v.len(),
                TimeFn::Varying(f) => f(R::zero()).len(),
            },
            ConvexSet::Ball { center, .. } => match center {
                TimeFn::Const(v) => v.len(),
                TimeFn::Varying(f) => f(R::zero()).len(),
            },
            ConvexSet::CappedDisk { .. } => 2,
            ConvexSet::Product(parts) => parts.iter().map(|p| p.dim()).sum(),
        }
    }

    /// Exact Euclidean projection onto the set at time `t`.
    pub fn project(&self, v: &DVector<R>, t: R) -> Result<DVector<R>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, set has dimension {}",
                v.len(),
                self.dim()
            )));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("input component {i}")));
        }
        self.project_inner(v, t)
    }

    fn project_inner(&self, v: &DVector<R>, t: R) -> Result<DVector<R>> {
        match self {
            ConvexSet::AllSpace { .. } => Ok(v.clone()),
            ConvexSet::NonnegOrthant { .. } => Ok(v.map(|x| x.max(R::zero()))),
            ConvexSet::Box { lo, hi } => {
                let lo = lo.eval(t);
                let hi = hi.eval(t);
                if lo.len() != v.len() || hi.len() != v.len() {
                    return Err(Error::DimensionMismatch(
                        "box bounds do not match point dimension".into(),
                    ));
                }
                for i in 0..v.len() {
                    // Infinite bounds are allowed; NaN is not.
                    if lo[i].is_nan() || hi[i].is_nan() {
                        return Err(Error::NonFinite(format!("box bound component {i}")));
                    }
                    if lo[i] > hi[i] {
                        return Err(Error::EmptySet(format!(
                            "box has lo > hi in component {i}"
                        )));
                    }
                }
                Ok(DVector::from_fn(v.len(), |i, _| v[i].max(lo[i]).min(hi[i])))
            }
            ConvexSet::Ball { center, radius } => {
                let c = center.eval(t);
                let r = radius.eval(t);
                if !r.is_finite() || r < R::zero() {
                    return Err(Error::InvalidParameters(
                        "ball radius must be finite and nonnegative".into(),
                    ));
                }
                if c.len() != v.len() {
                    return Err(Error::DimensionMismatch(
                        "ball center does not match point dimension".into(),
                    ));
                }
                let d = v - &c;
                let norm = d.norm();
                if norm <= r {
                    Ok(v.clone())
                } else {
                    Ok(c + d * (r / norm))
                }
            }
            ConvexSet::CappedDisk { pmax, smax } => {
                let pmax = pmax.eval(t);
                let smax = smax.eval(t);
                if !pmax.is_finite() || !smax.is_finite() {
                    return Err(Error::NonFinite("capped-disk parameters".into()));
                }
                if pmax < R::zero() || smax <= R::zero() {
                    return Err(Error::InvalidParameters(
                        "capped disk needs pmax >= 0 and smax > 0".into(),
                    ));
                }
                let (p, q) = project_capped_disk(v[0], v[1], pmax, smax);
                Ok(DVector::from_vec(vec![p, q]))
            }
            ConvexSet::Product(parts) => {
                let mut out = DVector::zeros(v.len());
                let mut offset = 0;
                for part in parts {
                    let d = part.dim();
                    let block = DVector::from(v.rows(offset, d).into_owned());
                    let proj = part.project_inner(&block, t)?;
                    out.rows_mut(offset, d).copy_from(&proj);
                    offset += d;
                }
                Ok(out)
            }
        }
    }

    /// Euclidean distance from `v` to the set at time `t`.
    pub fn distance(&self, v: &DVector<R>, t: R) -> Result<R> {
        Ok((self.project(v, t)? - v).norm())
    }

    /// Membership up to the scale-invariant tolerance 1e-9·(1+‖v‖).
    pub fn contains(&self, v: &DVector<R>, t: R) -> Result<bool> {
        let tol = real::<R>(1e-9) * (R::one() + v.norm());
        Ok(self.distance(v, t)? <= tol)
    }
}

/// Exact projection onto {(p, q) : 0 ≤ p ≤ pmax, p² + q² ≤ smax²}.
///
/// Case analysis: clamp p to [0, pmax]; if the clamped point is inside the
/// disk it is the projection (the displacement is an outward slab normal).
/// Otherwise the circle is active: project radially; if the radial point
/// leaves the p-range, the answer is the nearest circle/line intersection.
fn project_capped_disk<R: Scalar>(a: R, b: R, pmax: R, smax: R) -> (R, R) {
    let p1 = a.max(R::zero()).min(pmax);
    if p1 * p1 + b * b <= smax * smax {
        return (p1, b);
    }
    // Here ‖(p1, b)‖ > smax, which forces ‖(a, b)‖ > smax as well.
    let norm = (a * a + b * b).sqrt();
    let scale = smax / norm;
    let (wp, wq) = (a * scale, b * scale);
    let corner_p = pmax.min(smax);
    let sign_q = if b >= R::zero() { R::one() } else { -R::one() };
    if wp < R::zero() {
        (R::zero(), sign_q * smax)
    } else if wp > corner_p {
        let q = (smax * smax - corner_p * corner_p).max(R::zero()).sqrt();
        (corner_p, sign_q * q)
    } else {
        (wp, wq)
    }
}

/// Normal-cone membership residual ‖P_C(z + s·v) − z‖ / s.
///
/// For convex C and z ∈ C, the value is 0 iff v ∈ N_C(z); requires z to be
/// in the set up to tolerance 1e-9·(1+‖z‖).
pub fn normal_cone_residual<R: Scalar>(
    set: &ConvexSet<R>,
    z: &DVector<R>,
    v: &DVector<R>,
    t: R,
    s: R,
) -> Result<R> {
    if !s.is_finite() || s <= R::zero() {
        return Err(Error::InvalidParameters(
            "probe step s must be positive".into(),
        ));
    }
    let dist = set.distance(z, t)?;
    let tol = real::<R>(1e-9) * (R::one() + z.norm());
    if dist > tol {
        return Err(Error::Infeasible(format!(
            "z is {:e} away from the set (tolerance {:e})",
            crate::scalar::as_f64(dist),
            crate::scalar::as_f64(tol)
        )));
    }
    let probe = z + v * s;
    Ok((set.project(&probe, t)? - z).norm() / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn orthant_clamps() {
        let set = ConvexSet::nonneg_orthant(2);
        let p = set.project(&dvector![-1.0, 2.0], 0.0).unwrap();
        assert_eq!(p, dvector![0.0, 2.0]);
    }

    #[test]
    fn capped_disk_active_p_bound() {
        let set = ConvexSet::fixed_capped_disk(1.0, 3.0);
        let p = set.project(&dvector![2.0, 0.0], 0.0).unwrap();
        assert_eq!(p, dvector![1.0, 0.0]);
    }

    #[test]
    fn capped_disk_negative_p() {
        let set = ConvexSet::fixed_capped_disk(1.0, 1.0);
        let p = set.project(&dvector![-1.0, 0.5], 0.0).unwrap();
        assert_relative_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], 0.5);
    }

    #[test]
    fn ball_boundary_point_is_fixed() {
        let set = ConvexSet::fixed_ball(DVector::zeros(2), 5.0);
        let v = dvector![3.0, 4.0];
        assert_eq!(set.project(&v, 0.0).unwrap(), v);
    }

    #[test]
    fn box_respects_time_dependent_bounds() {
        let set = ConvexSet::Box {
            lo: TimeFn::of(|t: f64| dvector![t]),
            hi: TimeFn::constant(dvector![f64::INFINITY]),
        };
        assert_eq!(set.project(&dvector![0.0], 2.0).unwrap(), dvector![2.0]);
        assert_eq!(set.project(&dvector![5.0], 2.0).unwrap(), dvector![5.0]);
    }

    #[test]
    fn empty_box_rejected() {
        let set = ConvexSet::fixed_box(dvector![1.0], dvector![0.0]);
        assert!(matches!(
            set.project(&dvector![0.5], 0.0),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let set = ConvexSet::nonneg_orthant(2);
        assert!(matches!(
            set.project(&dvector![1.0], 0.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let set = ConvexSet::nonneg_orthant(1);
        assert!(matches!(
            set.project(&dvector![f64::NAN], 0.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn product_projects_blockwise() {
        let set = ConvexSet::Product(vec![
            ConvexSet::fixed_capped_disk(1.0, 3.0),
            ConvexSet::nonneg_orthant(1),
        ]);
        let p = set.project(&dvector![2.0, 0.0, -1.0], 0.0).unwrap();
        assert_eq!(p, dvector![1.0, 0.0, 0.0]);
    }

    #[test]
    fn normal_cone_examples() {
        let orthant = ConvexSet::nonneg_orthant(1);
        let r = normal_cone_residual(&orthant, &dvector![0.0], &dvector![-1.0], 0.0, 1.0).unwrap();
        assert_eq!(r, 0.0);
        let r = normal_cone_residual(&orthant, &dvector![1.0], &dvector![-1.0], 0.0, 1.0).unwrap();
        assert_relative_eq!(r, 1.0);
        let bx = ConvexSet::fixed_box(dvector![0.0], dvector![1.0]);
        let r = normal_cone_residual(&bx, &dvector![0.5], &dvector![0.0], 0.0, 0.1).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn normal_cone_requires_membership() {
        let orthant = ConvexSet::nonneg_orthant(1);
        assert!(matches!(
            normal_cone_residual(&orthant, &dvector![-0.5], &dvector![0.0], 0.0, 1.0),
            Err(Error::Infeasible(_))
        ));
    }
}
