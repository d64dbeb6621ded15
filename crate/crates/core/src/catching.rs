//! Continuous-time limit of the running scheme: the tracker with step
//! α = Δ_T·β is the catching discretization of the perturbed sweeping
//! process −dz/dt + Φ(z, t) ∈ N_{C(t)}(z) with C(t) = X(t) × R^m_+ and
//!
//! ```text
//!   Φ(z, t) = β [ −∇_x c(x,t) − J_{f,x}(x,t)ᵀ λ ;  η (f(x,t) − ε(λ − λ_prior)) ]
//! ```
//!
//! Convergence is validated by refinement gaps over a doubling ladder of T
//! and by the inclusion residual along the interpolated path.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::primal_dual::{EtaNorm, PrimalDual};
use crate::problem::{ProblemOracle, TimeGrid};
use crate::scalar::{real, real_of_usize, Scalar};
use crate::tracker::{run, TrackerParams, Trajectory};

/// Linear interpolant of a discrete trajectory, queryable at any t ∈ [0,S].
#[derive(Clone, Debug)]
pub struct PiecewiseLinearPath<R: Scalar> {
    horizon: R,
    points: Vec<PrimalDual<R>>,
}

impl<R: Scalar> PiecewiseLinearPath<R> {
    pub fn from_trajectory(trajectory: &Trajectory<R>) -> Self {
        Self {
            horizon: trajectory.grid.horizon(),
            points: trajectory.points.clone(),
        }
    }

    pub fn horizon(&self) -> R {
        self.horizon
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn delta(&self) -> R {
        self.horizon / real_of_usize::<R>(self.segments().max(1))
    }

    pub fn points(&self) -> &[PrimalDual<R>] {
        &self.points
    }

    /// Evaluates the interpolant; interpolation nodes are returned exactly.
    pub fn eval(&self, t: R) -> PrimalDual<R> {
        let segments = self.segments();
        if segments == 0 {
            return self.points[0].clone();
        }
        let delta = self.delta();
        let pos = (t / delta).floor();
        let tau = pos.to_subset().map(|v: f64| v as usize).unwrap_or(0);
        if t <= R::zero() {
            return self.points[0].clone();
        }
        if tau >= segments {
            return self.points[segments].clone();
        }
        let t_lo = delta * real_of_usize::<R>(tau);
        let w = (t - t_lo) / delta;
        if w == R::zero() {
            return self.points[tau].clone();
        }
        let a = &self.points[tau];
        let b = &self.points[tau + 1];
        PrimalDual {
            x: &a.x * (R::one() - w) + &b.x * w,
            lambda: &a.lambda * (R::one() - w) + &b.lambda * w,
        }
    }

    /// Serializes as `t, x_1..x_n, lambda_1..lambda_m` rows.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let n = self.points[0].n();
        let m = self.points[0].m();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("lambda_{i}")));
        writeln!(w, "{}", header.join(","))?;
        let delta = self.delta();
        for (tau, p) in self.points.iter().enumerate() {
            let t = delta * real_of_usize::<R>(tau);
            let mut row = vec![format!("{}", crate::scalar::as_f64(t))];
            row.extend(p.x.iter().map(|v| format!("{}", crate::scalar::as_f64(*v))));
            row.extend(p.lambda.iter().map(|v| format!("{}", crate::scalar::as_f64(*v))));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs the tracker at resolution T with step α = (S/T)·β and returns the
/// linear interpolant.
#[allow(clippy::too_many_arguments)]
pub fn refine_run<R: Scalar>(
    problem: &ProblemOracle<R>,
    z0: &PrimalDual<R>,
    beta: R,
    eta: R,
    epsilon: R,
    lambda_prior: &DVector<R>,
    slots: usize,
) -> Result<PiecewiseLinearPath<R>> {
    if slots == 0 {
        return Err(Error::InvalidParameters("T must be at least 1".into()));
    }
    let grid = TimeGrid::new(problem.horizon(), slots)?;
    let params = TrackerParams {
        alpha: grid.delta() * beta,
        eta,
        epsilon,
        lambda_prior: lambda_prior.clone(),
        beta: Some(beta),
    };
    let trajectory = run(problem, &grid, &params, z0, None).map_err(|e| match e {
        Error::Divergence { slot, component } => Error::Divergence {
            slot,
            component: format!("{component} (refinement T = {slots})"),
        },
        other => other,
    })?;
    Ok(PiecewiseLinearPath::from_trajectory(&trajectory))
}

/// Uniform-distance estimate between two refinements: max over probes of
/// ‖path_a(t) − path_b(t)‖_η.
pub fn refinement_gap<R: Scalar>(
    a: &PiecewiseLinearPath<R>,
    b: &PiecewiseLinearPath<R>,
    probe_count: usize,
    eta: R,
) -> R {
    let norm = EtaNorm::new(eta).expect("eta validated by caller");
    let probes = probe_count.max(2);
    let mut gap = R::zero();
    for k in 0..probes {
        let t = a.horizon() * real::<R>(k as f64 / (probes - 1) as f64);
        gap = gap.max(norm.dist(&a.eval(t), &b.eval(t)));
    }
    gap
}

/// The sweeping-process drive Φ(z, t).
pub fn phi<R: Scalar>(
    problem: &ProblemOracle<R>,
    z: &PrimalDual<R>,
    t: R,
    beta: R,
    eta: R,
    epsilon: R,
    lambda_prior: &DVector<R>,
) -> PrimalDual<R> {
    let grad = problem.grad_cost(&z.x, t);
    let jac = problem.jac(&z.x, t);
    let x_part = -(grad + jac.transpose() * &z.lambda) * beta;
    let lambda_part = if problem.m() > 0 {
        (problem.f(&z.x, t) - (&z.lambda - lambda_prior) * epsilon) * (eta * beta)
    } else {
        DVector::zeros(0)
    };
    PrimalDual { x: x_part, lambda: lambda_part }
}

/// Differential-inclusion residual along the path.
#[derive(Clone, Copy, Debug)]
pub struct InclusionResidual<R: Scalar> {
    /// max over probed midpoints of ‖P_{C(t)}(z + s·w) − z‖/s with
    /// w = −dz/dt + Φ(z, t); O(Δ_T) for the true catching output.
    pub max_residual: R,
    /// max distance of probed midpoints from C(t); reported, not fatal.
    pub max_infeasibility: R,
}

/// Probes the inclusion −dz/dt + Φ ∈ N_{C(t)}(z) at segment midpoints,
/// using the exact segment slope as dz/dt.
#[allow(clippy::too_many_arguments)]
pub fn inclusion_residual<R: Scalar>(
    path: &PiecewiseLinearPath<R>,
    problem: &ProblemOracle<R>,
    beta: R,
    eta: R,
    epsilon: R,
    lambda_prior: &DVector<R>,
    probe_count: usize,
    s: R,
) -> Result<InclusionResidual<R>> {
    if s <= R::zero() {
        return Err(Error::InvalidParameters("probe step s must be positive".into()));
    }
    let segments = path.segments();
    if segments == 0 {
        return Err(Error::InvalidParameters("path has no segments".into()));
    }
    let probes = probe_count.clamp(1, segments);
    let delta = path.delta();
    let half = real::<R>(0.5);
    let orthant = crate::sets::ConvexSet::nonneg_orthant(problem.m());

    let mut max_residual = R::zero();
    let mut max_infeasibility = R::zero();
    for k in 0..probes {
        // Midpoint of a representative segment for each probe.
        let seg = k * segments / probes;
        let t_mid = delta * (real_of_usize::<R>(seg) + half);
        let a = &path.points()[seg];
        let b = &path.points()[seg + 1];
        let z = PrimalDual {
            x: (&a.x + &b.x) * half,
            lambda: (&a.lambda + &b.lambda) * half,
        };
        let slope = PrimalDual {
            x: (&b.x - &a.x) / delta,
            lambda: (&b.lambda - &a.lambda) / delta,
        };
        let drive = phi(problem, &z, t_mid, beta, eta, epsilon, lambda_prior);
        let w_x = &drive.x - &slope.x;
        let w_l = &drive.lambda - &slope.lambda;

        let set = problem.feasible_set();
        let infeas = set.distance(&z.x, t_mid)?
            + z.lambda.iter().fold(R::zero(), |acc, v| acc + (-*v).max(R::zero()));
        max_infeasibility = max_infeasibility.max(infeas);

        let x_res = (set.project(&(&z.x + &w_x * s), t_mid)? - &z.x).norm() / s;
        let l_res = if problem.m() > 0 {
            (orthant.project(&(&z.lambda + &w_l * s), t_mid)? - &z.lambda).norm() / s
        } else {
            R::zero()
        };
        max_residual = max_residual.max((x_res * x_res + l_res * l_res).sqrt());
    }
    Ok(InclusionResidual { max_residual, max_infeasibility })
}

/// Observed order of a decaying ladder: least-squares slope of
/// −log₂(values) against the doubling index.
pub fn observed_order<R: Scalar>(values: &[R]) -> R {
    let k = values.len();
    assert!(k >= 2, "need at least two ladder values");
    let mut sx = R::zero();
    let mut sy = R::zero();
    let mut sxx = R::zero();
    let mut sxy = R::zero();
    for (i, v) in values.iter().enumerate() {
        let x = real::<R>(i as f64);
        let y = -v.max(real::<R>(1e-300)).ln() / real::<R>(std::f64::consts::LN_2);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let kf = real::<R>(k as f64);
    (kf * sxy - sx * sy) / (kf * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dvector, DMatrix};
    use crate::problem::ProblemOracle;
    use crate::sets::{ConvexSet, TimeFn};

    fn unconstrained_quadratic(q: f64) -> ProblemOracle<f64> {
        ProblemOracle::builder(1, 0, 1.0)
            .cost(move |x, _| 0.5 * q * x[0] * x[0])
            .grad_cost(move |x, _| dvector![q * x[0]])
            .hess_cost(move |_, _| DMatrix::from_element(1, 1, q))
            .build()
            .unwrap()
    }

    #[test]
    fn single_slot_is_a_two_point_path() {
        let oracle = unconstrained_quadratic(1.0);
        let z0 = PrimalDual::new(dvector![1.0], dvector![]).unwrap();
        let path = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], 1).unwrap();
        assert_eq!(path.points().len(), 2);
        assert_relative_eq!(path.eval(0.0).x[0], 1.0);
        assert_relative_eq!(path.eval(1.0).x[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn nodes_are_returned_exactly() {
        let oracle = unconstrained_quadratic(1.0);
        let z0 = PrimalDual::new(dvector![1.0], dvector![]).unwrap();
        let path = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], 10).unwrap();
        for tau in 0..=10 {
            let t = tau as f64 / 10.0;
            assert_eq!(path.eval(t).x[0], path.points()[tau].x[0]);
        }
    }

    #[test]
    fn interpolant_tracks_the_exact_flow() {
        // dx/dt = −βq x: x(t) = x0 e^{−βqt}.
        let oracle = unconstrained_quadratic(1.0);
        let z0 = PrimalDual::new(dvector![1.0], dvector![]).unwrap();
        let path = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], 100_000).unwrap();
        let mut worst = 0.0f64;
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            worst = worst.max((path.eval(t).x[0] - (-t).exp()).abs());
        }
        assert!(worst <= 1e-3, "sup-norm distance {worst}");
    }

    #[test]
    fn identical_paths_have_zero_gap() {
        let oracle = unconstrained_quadratic(1.0);
        let z0 = PrimalDual::new(dvector![1.0], dvector![]).unwrap();
        let path = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], 64).unwrap();
        assert_eq!(refinement_gap(&path, &path, 101, 1.0), 0.0);
    }

    #[test]
    fn static_start_at_fixed_point_gives_zero_gap_everywhere() {
        let oracle = unconstrained_quadratic(1.0);
        let z0 = PrimalDual::new(dvector![0.0], dvector![]).unwrap();
        let coarse = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], 16).unwrap();
        let fine = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], 32).unwrap();
        assert_eq!(refinement_gap(&coarse, &fine, 64, 1.0), 0.0);
    }

    #[test]
    fn interior_dynamics_at_rest_have_zero_residual() {
        let oracle = unconstrained_quadratic(1.0);
        let z0 = PrimalDual::new(dvector![0.0], dvector![]).unwrap();
        let path = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], 32).unwrap();
        let res =
            inclusion_residual(&path, &oracle, 1.0, 1.0, 0.1, &dvector![], 32, path.delta())
                .unwrap();
        assert!(res.max_residual <= 1e-10, "residual {}", res.max_residual);
        assert_eq!(res.max_infeasibility, 0.0);
    }

    #[test]
    fn sweeping_counterexample_tracks_the_moving_face() {
        // C(t) = {x >= t}, Φ = 0, z0 = 0: solution x(t) = t; the catching
        // discretization lands exactly on the nodes.
        let oracle = ProblemOracle::builder(1, 0, 1.0)
            .cost(|_, _| 0.0)
            .grad_cost(|_, _| dvector![0.0])
            .hess_cost(|_, _| DMatrix::zeros(1, 1))
            .feasible_set(ConvexSet::Box {
                lo: TimeFn::of(|t: f64| dvector![t]),
                hi: TimeFn::constant(dvector![f64::INFINITY]),
            })
            .build()
            .unwrap();
        let z0 = PrimalDual::new(dvector![0.0], dvector![]).unwrap();
        for slots in [8usize, 64, 256] {
            let path = refine_run(&oracle, &z0, 1.0, 1.0, 0.1, &dvector![], slots).unwrap();
            let delta = path.delta();
            for (tau, p) in path.points().iter().enumerate() {
                let t = tau as f64 * delta;
                assert!((p.x[0] - t).abs() <= delta + 1e-12, "node {tau}");
            }
            let res =
                inclusion_residual(&path, &oracle, 1.0, 1.0, 0.1, &dvector![], slots, delta)
                    .unwrap();
            assert!(res.max_residual <= 1e-12, "residual {}", res.max_residual);
        }
    }

    #[test]
    fn observed_order_of_a_first_order_ladder_is_one() {
        let ladder: Vec<f64> = (0..5).map(|k| 0.3 / 2f64.powi(k)).collect();
        assert_relative_eq!(observed_order(&ladder), 1.0, epsilon = 1e-12);
    }
}
