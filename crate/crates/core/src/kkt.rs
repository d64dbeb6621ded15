//! Reference KKT trajectories via the fixed-point characterization
//!
//! ```text
//!   x* = P_{X(t)}[ x* − α (∇_x c(x*, t) + J_{f,x}(x*, t)ᵀ λ*) ]
//!   λ* = P_{R^m_+}[ λ* + β f(x*, t) ]
//! ```
//!
//! which holds for every positive α, β exactly at a KKT point. The solver
//! is a damped fixed-point iteration of this map (the tracker step at
//! frozen t with ε = 0); its output is certified by the residual alone.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::primal_dual::{EtaNorm, PrimalDual};
use crate::problem::{ProblemOracle, TimeGrid};
use crate::scalar::{as_f64, real, Scalar};

/// Normalized fixed-point residual; zero iff z is a KKT point at t, for any
/// positive probe steps.
pub fn kkt_residual<R: Scalar>(
    z: &PrimalDual<R>,
    problem: &ProblemOracle<R>,
    t: R,
    alpha_check: R,
    beta_check: R,
) -> Result<R> {
    if alpha_check <= R::zero() || beta_check <= R::zero() {
        return Err(Error::InvalidParameters(
            "probe steps must be positive".into(),
        ));
    }
    if z.lambda.iter().any(|v| *v < R::zero()) {
        return Err(Error::InvalidParameters("lambda must be nonnegative".into()));
    }
    let grad = problem.grad_cost(&z.x, t);
    let jac = problem.jac(&z.x, t);
    let drive = &grad + jac.transpose() * &z.lambda;
    if let Some(i) = drive.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("stationarity drive component {i}")));
    }
    let x_img = problem
        .feasible_set()
        .project(&(&z.x - &drive * alpha_check), t)?;
    let primal = (&z.x - &x_img).norm() / alpha_check;

    let dual = if problem.m() > 0 {
        let fval = problem.f(&z.x, t);
        if let Some(i) = fval.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("constraint value component {i}")));
        }
        let lam_img = (&z.lambda + fval * beta_check).map(|v| v.max(R::zero()));
        (&z.lambda - &lam_img).norm() / beta_check
    } else {
        R::zero()
    };
    Ok(primal + dual)
}

/// Options for [`solve_kkt`].
#[derive(Clone, Debug)]
pub struct SolveOptions<R: Scalar> {
    /// Residual tolerance; `None` uses 1e-10·(1+‖z‖) adaptively.
    pub tol: Option<R>,
    pub max_iter: usize,
    /// Primal step; `None` estimates 0.5 / L from sampled curvature.
    pub alpha: Option<R>,
    /// Dual/primal step ratio.
    pub eta: R,
    /// Damping on the fixed-point update; 1 is the undamped map.
    pub damping: R,
    /// Distance beyond which the result is flagged as leaving the caller's
    /// basin of attraction.
    pub basin_radius: R,
}

impl<R: Scalar> Default for SolveOptions<R> {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 200_000,
            alpha: None,
            eta: R::one(),
            damping: R::one(),
            basin_radius: R::one(),
        }
    }
}

/// A residual-certified solution.
#[derive(Clone, Debug)]
pub struct KktSolution<R: Scalar> {
    pub z: PrimalDual<R>,
    pub residual: R,
    pub iterations: usize,
    /// Set when the solve drifted more than `basin_radius` from its start.
    pub basin_warning: bool,
}

fn curvature_estimate<R: Scalar>(problem: &ProblemOracle<R>, z: &PrimalDual<R>, t: R) -> R {
    let mut h = problem.hess_cost(&z.x, t);
    for i in 0..problem.m() {
        let li = z.lambda[i].max(R::zero());
        if li > R::zero() {
            h += problem.hess_nonconvex_i(&z.x, t, i) * li;
            h += problem.hess_convex_i(&z.x, t, i) * li;
        }
    }
    let sym = (h.clone() + h.transpose()) * real::<R>(0.5);
    let curv = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(R::zero(), |acc, v| acc.max(v.abs()));
    let coupling = if problem.m() > 0 {
        problem.jac(&z.x, t).norm()
    } else {
        R::zero()
    };
    (curv + coupling).max(real::<R>(1e-6))
}

/// Damped fixed-point iteration of the KKT map at frozen t; falls back to
/// halving the internal step up to 6 times on divergence.
pub fn solve_kkt<R: Scalar>(
    problem: &ProblemOracle<R>,
    t: R,
    z_init: &PrimalDual<R>,
    options: &SolveOptions<R>,
) -> Result<KktSolution<R>> {
    if let Some(tol) = options.tol {
        if tol <= R::zero() {
            return Err(Error::InvalidParameters("tol must be positive".into()));
        }
    }
    let mut alpha = options
        .alpha
        .unwrap_or_else(|| real::<R>(0.5) / curvature_estimate(problem, z_init, t));
    let mut best_residual = R::max_value().unwrap();
    let mut total_iterations = 0usize;

    for _attempt in 0..=6 {
        let mut z = PrimalDual {
            x: problem.feasible_set().project(&z_init.x, t)?,
            lambda: z_init.lambda.map(|v| v.max(R::zero())),
        };
        let beta = options.eta * alpha;
        let mut diverged = false;
        for it in 0..options.max_iter {
            total_iterations = it + 1;
            let grad = problem.grad_cost(&z.x, t);
            let jac = problem.jac(&z.x, t);
            let drive = &grad + jac.transpose() * &z.lambda;
            let x_img = problem.feasible_set().project(&(&z.x - &drive * alpha), t);
            let x_img = match x_img {
                Ok(v) => v,
                Err(_) => {
                    diverged = true;
                    break;
                }
            };
            let lam_img = if problem.m() > 0 {
                (&z.lambda + problem.f(&z.x, t) * beta).map(|v| v.max(R::zero()))
            } else {
                DVector::zeros(0)
            };
            let residual = (&z.x - &x_img).norm() / alpha
                + if problem.m() > 0 {
                    (&z.lambda - &lam_img).norm() / beta
                } else {
                    R::zero()
                };
            if !residual.is_finite() || z.norm() > real::<R>(1e12) {
                diverged = true;
                break;
            }
            best_residual = best_residual.min(residual);
            let tol = options
                .tol
                .unwrap_or_else(|| real::<R>(1e-10) * (R::one() + z.norm()));
            if residual <= tol {
                let norm = EtaNorm::new(R::one()).expect("unit eta");
                let drift = norm.dist(&z, z_init);
                return Ok(KktSolution {
                    z,
                    residual,
                    iterations: total_iterations,
                    basin_warning: drift > options.basin_radius,
                });
            }
            let theta = options.damping;
            z = PrimalDual {
                x: &z.x + (x_img - &z.x) * theta,
                lambda: &z.lambda + (lam_img - &z.lambda) * theta,
            };
        }
        let _ = diverged;
        alpha *= real::<R>(0.5);
    }
    Err(Error::NoConvergence {
        best_residual: as_f64(best_residual),
        iterations: total_iterations,
    })
}

/// Warm-started reference trajectory z*_τ over the grid, residual-certified
/// at every index, with per-step norms and jump detection.
pub fn kkt_trajectory<R: Scalar>(
    problem: &ProblemOracle<R>,
    grid: &TimeGrid<R>,
    z_seed: &PrimalDual<R>,
    options: &SolveOptions<R>,
) -> Result<crate::tracker::Trajectory<R>> {
    let mut points = Vec::with_capacity(grid.slots() + 1);
    let mut residuals = Vec::with_capacity(grid.slots() + 1);
    let mut steps: Vec<R> = Vec::with_capacity(grid.slots());
    let mut sorted_steps: Vec<R> = Vec::with_capacity(grid.slots());
    let mut jumps = Vec::new();
    let norm = EtaNorm::new(R::one()).expect("unit eta");

    let mut current = z_seed.clone();
    for tau in 0..=grid.slots() {
        let t = grid.time(tau);
        let solved = solve_kkt(problem, t, &current, options).map_err(|e| match e {
            Error::NoConvergence { best_residual, iterations } => Error::NoConvergence {
                best_residual,
                iterations: iterations + tau,
            },
            other => other,
        })?;
        if tau > 0 {
            let step = norm.dist(&solved.z, &current);
            let idx = sorted_steps.partition_point(|s| *s < step);
            sorted_steps.insert(idx, step);
            let median = sorted_steps[sorted_steps.len() / 2];
            if sorted_steps.len() >= 4 && step > real::<R>(10.0) * median {
                jumps.push(tau);
            }
            steps.push(step);
        }
        residuals.push(solved.residual);
        current = solved.z.clone();
        points.push(solved.z);
    }

    let mut trajectory = crate::tracker::Trajectory::new(*grid, points);
    trajectory.kkt_residual = Some(residuals);
    trajectory.step_eta = Some(steps);
    trajectory.jump_flags = jumps;
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dvector, DMatrix};
    use crate::problem::scenario::{build_by_name, BuildContext};

    fn textbook() -> ProblemOracle<f64> {
        // min ½x² s.t. 1 − x <= 0; KKT point (1, 1).
        ProblemOracle::builder(1, 1, 1.0)
            .cost(|x, _| 0.5 * x[0] * x[0])
            .grad_cost(|x, _| dvector![x[0]])
            .hess_cost(|_, _| DMatrix::from_element(1, 1, 1.0))
            .f_convex(|x, _| dvector![1.0 - x[0]])
            .jac_convex(|_, _| DMatrix::from_element(1, 1, -1.0))
            .hess_convex_i(|_, _, _| DMatrix::zeros(1, 1))
            .build()
            .unwrap()
    }

    #[test]
    fn residual_zero_at_kkt_point_for_any_steps() {
        let oracle = textbook();
        let z = PrimalDual::new(dvector![1.0], dvector![1.0]).unwrap();
        for alpha in [0.01, 0.1, 1.0] {
            for beta in [0.01, 0.1, 1.0] {
                let r = kkt_residual(&z, &oracle, 0.5, alpha, beta).unwrap();
                assert!(r <= 1e-9 * (1.0 + z.norm()), "residual {r}");
            }
        }
    }

    #[test]
    fn residual_detects_stationarity_violation() {
        let oracle = textbook();
        let z = PrimalDual::new(dvector![1.0], dvector![0.0]).unwrap();
        let r = kkt_residual(&z, &oracle, 0.5, 0.1, 0.1).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn keepout_closed_form_certifies() {
        let sc = build_by_name::<f64>("keepout-disk", &BuildContext::default()).unwrap();
        let z = sc.kkt_closed_form().unwrap()(0.4);
        let r = kkt_residual(&z, &sc.oracle, 0.4, 0.3, 0.3).unwrap();
        assert!(r <= 1e-12, "residual {r}");
    }

    #[test]
    fn solve_recovers_quadratic_closed_form() {
        let ctx = BuildContext { slots: 10, horizon: Some(1.0), seed: None };
        let sc = build_by_name::<f64>("quadratic-tracking", &ctx).unwrap();
        let truth = sc.kkt_closed_form().unwrap()(0.8);
        let z_init = PrimalDual::new(
            truth.x.map(|v| v + 0.1),
            truth.lambda.map(|v| (v - 0.1f64).max(0.0)),
        )
        .unwrap();
        let options = SolveOptions { tol: Some(1e-11), ..Default::default() };
        let sol = solve_kkt(&sc.oracle, 0.8, &z_init, &options).unwrap();
        assert!((sol.z.x[0] - 0.5).abs() <= 1e-9, "x {}", sol.z.x[0]);
        assert!((sol.z.lambda[0] - 0.3).abs() <= 1e-9, "lambda {}", sol.z.lambda[0]);
        assert!(!sol.basin_warning);
    }

    #[test]
    fn solve_unconstrained_reaches_target() {
        let oracle = ProblemOracle::builder(1, 0, 1.0)
            .cost(|x, t| 0.5 * (x[0] - t).powi(2))
            .grad_cost(|x, t| dvector![x[0] - t])
            .hess_cost(|_, _| DMatrix::from_element(1, 1, 1.0))
            .build()
            .unwrap();
        let sol = solve_kkt(
            &oracle,
            0.7,
            &PrimalDual::new(dvector![0.0], dvector![]).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!((sol.z.x[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn far_start_flags_basin_or_lands_elsewhere() {
        // Start at the disk center: the solve is only certified by its
        // residual and must carry the basin flag if it drifted far.
        let sc = build_by_name::<f64>("keepout-disk", &BuildContext::default()).unwrap();
        let z_init = PrimalDual::new(dvector![0.5, 0.0], dvector![0.0]).unwrap();
        let options = SolveOptions { basin_radius: 0.3, ..Default::default() };
        match solve_kkt(&sc.oracle, 0.0, &z_init, &options) {
            Ok(sol) => {
                let r = kkt_residual(&sol.z, &sc.oracle, 0.0, 0.1, 0.1).unwrap();
                assert!(r <= 1e-9);
                assert!(sol.basin_warning, "drifted from the disk center");
            }
            Err(Error::NoConvergence { .. }) => {}
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn trajectory_matches_closed_form_and_is_static_when_time_invariant() {
        let ctx = BuildContext { slots: 100, horizon: Some(1.0), seed: None };
        let sc = build_by_name::<f64>("quadratic-tracking", &ctx).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let seed = sc.kkt_closed_form().unwrap()(0.0);
        let options = SolveOptions { tol: Some(1e-12), ..Default::default() };
        let reference = kkt_trajectory(&sc.oracle, &grid, &seed, &options).unwrap();
        for tau in 0..=100 {
            let truth = sc.kkt_closed_form().unwrap()(grid.time(tau));
            let err = reference.points[tau].sub(&truth).norm();
            assert!(err <= 1e-8, "tau {tau}: {err}");
        }
        assert!(reference.jump_flags.is_empty());

        // Static problem: all points identical.
        let oracle = ProblemOracle::builder(1, 0, 1.0)
            .cost(|x, _| 0.5 * (x[0] - 0.3).powi(2))
            .grad_cost(|x, _| dvector![x[0] - 0.3])
            .hess_cost(|_, _| DMatrix::from_element(1, 1, 1.0))
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let seed = PrimalDual::new(dvector![0.0], dvector![]).unwrap();
        let reference = kkt_trajectory(&oracle, &grid, &seed, &SolveOptions::default()).unwrap();
        for w in reference.points.windows(2) {
            assert!(w[0].sub(&w[1]).norm() <= 1e-10);
        }
    }

    #[test]
    fn moving_keepout_trajectory_certifies_every_slot() {
        use crate::problem::scenario::{build, KeepoutDiskConfig, ScenarioConfig};
        let cfg = KeepoutDiskConfig {
            orbit_radius: 0.2,
            orbit_frequency: 1.0,
            center0: vec![0.5, 0.0],
            ..Default::default()
        };
        let sc = build::<f64>(&ScenarioConfig::KeepoutDisk(cfg), &BuildContext::default()).unwrap();
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let seed = sc.kkt_closed_form().unwrap()(0.0);
        let options = SolveOptions { tol: Some(1e-10), ..Default::default() };
        let reference = kkt_trajectory(&sc.oracle, &grid, &seed, &options).unwrap();
        let residuals = reference.kkt_residual.unwrap();
        assert!(residuals.iter().all(|r| *r <= 1e-10));
        let steps = reference.step_eta.unwrap();
        assert!(steps.iter().all(|s| *s < 0.1), "bounded step norms");
    }
}
