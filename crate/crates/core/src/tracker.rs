//! The running regularized primal-dual gradient iteration.
//!
//! One update per time slot τ, both blocks evaluated at the previous
//! iterate (Jacobi form):
//!
//! ```text
//!   x̂_τ = P_{X_τ}[ x̂_{τ−1} − α (∇c_τ(x̂_{τ−1}) + J_{f_τ}(x̂_{τ−1})ᵀ λ̂_{τ−1}) ]
//!   λ̂_τ = P_{R^m_+}[ λ̂_{τ−1} + ηα (f_τ(x̂_{τ−1}) − ε (λ̂_{τ−1} − λ_prior)) ]
//! ```

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::primal_dual::{EtaNorm, PrimalDual};
use crate::problem::{sample, ProblemOracle, SampledProblem, TimeGrid};
use crate::scalar::{real, Scalar};

/// Step sizes and regularization of the running iteration.
#[derive(Clone, Debug)]
pub struct TrackerParams<R: Scalar> {
    /// Primal step size α > 0.
    pub alpha: R,
    /// Dual/primal step ratio η > 0 (dual step is ηα).
    pub eta: R,
    /// Dual regularization ε > 0.
    pub epsilon: R,
    /// Prior estimate of the optimal multiplier; zero when unknown.
    pub lambda_prior: DVector<R>,
    /// Continuous-time rate; set when α is derived as Δ_T·β.
    pub beta: Option<R>,
}

impl<R: Scalar> TrackerParams<R> {
    pub fn new(alpha: R, eta: R, epsilon: R, lambda_prior: DVector<R>) -> Self {
        Self { alpha, eta, epsilon, lambda_prior, beta: None }
    }

    /// Validates positivity, the multiplier prior, and 1 − ηαε ∈ (0, 1].
    pub fn validate(&self, m: usize) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("eta", self.eta), ("epsilon", self.epsilon)] {
            if !v.is_finite() || v <= R::zero() {
                return Err(Error::InvalidParameters(format!("{name} must be positive")));
            }
        }
        if let Some(beta) = self.beta {
            if !beta.is_finite() || beta <= R::zero() {
                return Err(Error::InvalidParameters("beta must be positive".into()));
            }
        }
        if self.lambda_prior.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "lambda_prior has length {}, problem has m = {m}",
                self.lambda_prior.len()
            )));
        }
        if self.lambda_prior.iter().any(|v| !v.is_finite() || *v < R::zero()) {
            return Err(Error::InvalidParameters(
                "lambda_prior must be nonnegative and finite".into(),
            ));
        }
        if self.eta * self.alpha * self.epsilon >= R::one() {
            return Err(Error::InvalidParameters(
                "need eta * alpha * epsilon < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Time-indexed iterate sequence with optional per-step metadata.
#[derive(Clone, Debug)]
pub struct Trajectory<R: Scalar> {
    pub grid: TimeGrid<R>,
    /// Points indexed 0..=T; index 0 is the initial point.
    pub points: Vec<PrimalDual<R>>,
    /// ‖ẑ_τ − z*_τ‖_η per index, when a reference was supplied.
    pub error_eta: Option<Vec<R>>,
    /// KKT residual per index, when recorded.
    pub kkt_residual: Option<Vec<R>>,
    /// Evaluated tracking-error bound per index, when attached.
    pub bound: Option<Vec<R>>,
    /// ‖z_τ − z_{τ−1}‖_η per step (length T), when recorded.
    pub step_eta: Option<Vec<R>>,
    /// Initial point was projected onto X(0) × R^m_+.
    pub projected_start: bool,
    /// Slots where a reference solve jumped (possible discontinuity).
    pub jump_flags: Vec<usize>,
}

impl<R: Scalar> Trajectory<R> {
    pub fn new(grid: TimeGrid<R>, points: Vec<PrimalDual<R>>) -> Self {
        Self {
            grid,
            points,
            error_eta: None,
            kkt_residual: None,
            bound: None,
            step_eta: None,
            projected_start: false,
            jump_flags: Vec::new(),
        }
    }

    /// Number of slots T (points.len() − 1).
    pub fn slots(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    /// Per-step η-norm increments ‖z_τ − z_{τ−1}‖_η.
    pub fn step_norms(&self, eta: R) -> Vec<R> {
        let norm = EtaNorm::new(eta).expect("eta validated by caller");
        self.points
            .windows(2)
            .map(|w| norm.dist(&w[1], &w[0]))
            .collect()
    }
}

/// One regularized primal-dual gradient update at the sampled problem.
pub fn step<R: Scalar>(
    z_prev: &PrimalDual<R>,
    view: &SampledProblem<'_, R>,
    params: &TrackerParams<R>,
) -> Result<PrimalDual<R>> {
    let oracle = view.oracle();
    if z_prev.n() != oracle.n() || z_prev.m() != oracle.m() {
        return Err(Error::DimensionMismatch(format!(
            "point is ({}, {}), problem is ({}, {})",
            z_prev.n(),
            z_prev.m(),
            oracle.n(),
            oracle.m()
        )));
    }
    params.validate(oracle.m())?;

    let grad = view.grad_cost(&z_prev.x);
    let jac = view.jac(&z_prev.x);
    let drive = &grad + jac.transpose() * &z_prev.lambda;
    let primal_arg = &z_prev.x - &drive * params.alpha;
    if let Some(i) = primal_arg.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence { slot: None, component: format!("x[{i}]") });
    }
    let x_next = view.project(&primal_arg)?;

    let fval = view.f(&z_prev.x);
    let dual_step = params.eta * params.alpha;
    let reg = (&z_prev.lambda - &params.lambda_prior) * params.epsilon;
    let dual_arg = &z_prev.lambda + (fval - reg) * dual_step;
    if let Some(i) = dual_arg.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence { slot: None, component: format!("lambda[{i}]") });
    }
    let lambda_next = dual_arg.map(|v| v.max(R::zero()));

    Ok(PrimalDual { x: x_next, lambda: lambda_next })
}

/// Iterate budget guard: iterates larger than this are treated as divergent.
fn divergence_limit<R: Scalar>() -> R {
    real::<R>(1e12)
}

/// Runs the tracker over the grid, optionally recording the η-distance to a
/// reference trajectory. An infeasible initial point is projected onto
/// X(0) × R^m_+ and flagged rather than rejected.
pub fn run<R: Scalar>(
    problem: &ProblemOracle<R>,
    grid: &TimeGrid<R>,
    params: &TrackerParams<R>,
    z0: &PrimalDual<R>,
    reference: Option<&Trajectory<R>>,
) -> Result<Trajectory<R>> {
    params.validate(problem.m())?;
    if let Some(name) = z0.first_non_finite() {
        return Err(Error::NonFinite(format!("initial point entry {name}")));
    }
    if let Some(reference) = reference {
        if reference.points.len() != grid.slots() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "reference has {} points, grid needs {}",
                reference.points.len(),
                grid.slots() + 1
            )));
        }
    }
    let norm = EtaNorm::new(params.eta)?;

    let x0 = problem.feasible_set().project(&z0.x, R::zero())?;
    let lambda0 = z0.lambda.map(|v| v.max(R::zero()));
    let moved = (&x0 - &z0.x).norm() + (&lambda0 - &z0.lambda).norm();
    let projected_start = moved > real::<R>(1e-15) * (R::one() + z0.norm());
    let mut current = PrimalDual { x: x0, lambda: lambda0 };

    let mut points = Vec::with_capacity(grid.slots() + 1);
    points.push(current.clone());
    let mut errors = reference.map(|r| vec![norm.dist(&current, &r.points[0])]);

    for tau in 1..=grid.slots() {
        let view = sample(problem, grid, tau)?;
        let next = step(&current, &view, params).map_err(|e| match e {
            Error::Divergence { component, .. } => Error::Divergence { slot: Some(tau), component },
            other => other,
        })?;
        if next.norm() > divergence_limit::<R>() {
            return Err(Error::Divergence {
                slot: Some(tau),
                component: "iterate norm beyond 1e12".into(),
            });
        }
        if let (Some(errors), Some(reference)) = (errors.as_mut(), reference) {
            errors.push(norm.dist(&next, &reference.points[tau]));
        }
        points.push(next.clone());
        current = next;
    }

    let mut trajectory = Trajectory::new(*grid, points);
    trajectory.error_eta = errors;
    trajectory.projected_start = projected_start;
    Ok(trajectory)
}
