//! Optimal regularization: minimizes the continuous-time eventual
//! tracking-error bound over (η, ε) with δ and β fixed. The minimizer has
//! the structure η* = Λ_m(δ)/ε* with ε* the unique minimizer of the
//! unimodal function
//!
//! ```text
//!   b(ε) = (β⁻¹ σ_{ε⁻¹Λ_m} + sqrt(ε Λ_m) M_λ) / (Λ_m − δ M_nc sqrt(ε⁻¹Λ_m)/4)
//! ```
//!
//! on ε > Λ_m·(δM_nc/(4Λ_m))², the threshold where the denominator turns
//! positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primal_dual::EtaNorm;
use crate::scalar::{as_f64, real, Scalar};
use crate::tracker::Trajectory;

/// σ_η as a function of η, evaluated by re-weighting stored per-step
/// differences of the reference trajectory (no re-solve).
#[derive(Clone, Debug)]
pub struct SigmaProfile<R: Scalar> {
    /// Per-step (‖Δx‖², ‖Δλ‖²) divided by Δ_T².
    steps: Vec<(R, R)>,
}

impl<R: Scalar> SigmaProfile<R> {
    pub fn from_reference(reference: &Trajectory<R>) -> Result<Self> {
        if reference.points.len() < 2 {
            return Err(Error::InvalidParameters(
                "reference needs at least 2 points".into(),
            ));
        }
        let dt = reference.grid.delta();
        let dt2 = dt * dt;
        let steps = reference
            .points
            .windows(2)
            .map(|w| {
                let dx = (&w[1].x - &w[0].x).norm_squared() / dt2;
                let dl = (&w[1].lambda - &w[0].lambda).norm_squared() / dt2;
                (dx, dl)
            })
            .collect();
        Ok(Self { steps })
    }

    /// Synthetic profile from raw rate pairs, for tests and tooling.
    pub fn from_rates(steps: Vec<(R, R)>) -> Self {
        Self { steps }
    }

    /// σ_η = max_τ sqrt(‖Δx‖² + η⁻¹‖Δλ‖²)/Δ_T.
    pub fn sigma(&self, eta: R) -> R {
        self.steps
            .iter()
            .map(|(dx, dl)| (*dx + *dl / eta).sqrt())
            .fold(R::zero(), R::max)
    }
}

/// Fixed data of the tuning problem.
#[derive(Clone, Debug)]
pub struct TunerProblem<R: Scalar> {
    pub delta: R,
    pub beta: R,
    pub lambda_m: R,
    pub m_nc: R,
    pub m_lambda: R,
    pub sigma: SigmaProfile<R>,
}

impl<R: Scalar> TunerProblem<R> {
    pub fn new(
        delta: R,
        beta: R,
        lambda_m: R,
        m_nc: R,
        m_lambda: R,
        sigma: SigmaProfile<R>,
    ) -> Result<Self> {
        if delta <= R::zero() || beta <= R::zero() {
            return Err(Error::InvalidParameters("delta and beta must be positive".into()));
        }
        if lambda_m <= R::zero() {
            return Err(Error::InvalidParameters(
                "tuning requires Lambda_m(delta) > 0".into(),
            ));
        }
        if m_nc < R::zero() || m_lambda < R::zero() {
            return Err(Error::InvalidParameters("constants must be nonnegative".into()));
        }
        Ok(Self { delta, beta, lambda_m, m_nc, m_lambda, sigma })
    }

    /// Domain edge: the bound denominator is positive iff ε exceeds this.
    pub fn eps_lower(&self) -> R {
        let x_l = self.delta * self.m_nc / (real::<R>(4.0) * self.lambda_m);
        self.lambda_m * x_l * x_l
    }

    /// Degenerate when M_λ·M_nc = 0: the minimizer structure of the
    /// theorem does not apply.
    pub fn is_degenerate(&self) -> bool {
        self.m_lambda * self.m_nc == R::zero()
    }

    /// The bound b(ε) along the η = Λ_m/ε ridge.
    pub fn b_of_eps(&self, eps: R) -> Result<R> {
        let lower = self.eps_lower();
        if !(eps > lower) {
            return Err(Error::InvalidParameters(format!(
                "eps = {:e} is at or below the domain edge {:e}",
                as_f64(eps),
                as_f64(lower)
            )));
        }
        let eta = self.lambda_m / eps;
        let numerator =
            self.sigma.sigma(eta) / self.beta + (eps * self.lambda_m).sqrt() * self.m_lambda;
        let denominator = self.lambda_m
            - self.delta * self.m_nc * (self.lambda_m / eps).sqrt() * real::<R>(0.25);
        Ok(numerator / denominator)
    }

    /// γ(δ, η, ε) for arbitrary (η, ε).
    pub fn gamma(&self, eta: R, eps: R) -> R {
        self.lambda_m.min(eta * eps) - eta.sqrt() * real::<R>(0.25) * self.delta * self.m_nc
    }

    /// Feasibility margin δγ − √η ε M_λ − β⁻¹σ_η at (η, ε).
    pub fn margin(&self, eta: R, eps: R) -> R {
        self.delta * self.gamma(eta, eps)
            - eta.sqrt() * eps * self.m_lambda
            - self.sigma.sigma(eta) / self.beta
    }

    /// Eventual continuous bound (β⁻¹σ_η + √η ε M_λ)/γ at (η, ε).
    pub fn eventual_bound(&self, eta: R, eps: R) -> Result<R> {
        let gamma = self.gamma(eta, eps);
        if gamma <= R::zero() {
            return Err(Error::BoundNotApplicable("gamma is not positive".into()));
        }
        Ok((self.sigma.sigma(eta) / self.beta + eta.sqrt() * eps * self.m_lambda) / gamma)
    }

    /// Audits unimodality of b on a grid: counts sign changes of the
    /// consecutive differences (at most one for a unimodal function).
    pub fn unimodality_audit(&self, grid_points: usize, hi: R) -> bool {
        let lo = self.domain_floor();
        let mut prev: Option<R> = None;
        let mut prev_diff = R::zero();
        let mut changes = 0;
        for k in 0..grid_points {
            let frac = real::<R>(k as f64 / (grid_points - 1).max(1) as f64);
            let eps = lo + (hi - lo) * frac;
            let Ok(v) = self.b_of_eps(eps) else { continue };
            if let Some(p) = prev {
                let diff = v - p;
                if diff * prev_diff < R::zero() {
                    changes += 1;
                }
                if diff != R::zero() {
                    prev_diff = diff;
                }
            }
            prev = Some(v);
        }
        changes <= 1
    }

    fn domain_floor(&self) -> R {
        let lower = self.eps_lower();
        if lower > R::zero() {
            lower * (R::one() + real::<R>(1e-9))
        } else {
            real::<R>(1e-12) * (R::one() + self.lambda_m)
        }
    }
}

/// Tuning outcome.
#[derive(Clone, Debug)]
pub struct TunerResult<R: Scalar> {
    pub eps_star: R,
    pub eta_star: R,
    pub bound: R,
    /// Theorem structure did not apply (M_λ·M_nc = 0); the result is a
    /// plain grid minimizer.
    pub degenerate: bool,
    /// Margin of the feasibility condition at the optimum.
    pub margin_at_optimum: R,
    pub feasible_at_optimum: bool,
    /// Unimodality audit over a 1000-point grid.
    pub unimodal: bool,
}

/// Serialized tuner block for reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TunerJson {
    pub eps_star: f64,
    pub eta_star: f64,
    pub bound: f64,
    pub degenerate: bool,
    pub margin_at_optimum: f64,
    pub feasible_at_optimum: bool,
    pub unimodal: bool,
}

impl<R: Scalar> From<&TunerResult<R>> for TunerJson {
    fn from(r: &TunerResult<R>) -> Self {
        Self {
            eps_star: as_f64(r.eps_star),
            eta_star: as_f64(r.eta_star),
            bound: as_f64(r.bound),
            degenerate: r.degenerate,
            margin_at_optimum: as_f64(r.margin_at_optimum),
            feasible_at_optimum: r.feasible_at_optimum,
            unimodal: r.unimodal,
        }
    }
}

/// Golden-section search for the minimum of `f` on [lo, hi].
pub fn golden_section<R: Scalar, F>(f: F, mut lo: R, mut hi: R, tol: R) -> (R, R)
where
    F: Fn(R) -> R,
{
    let inv_phi = real::<R>(0.618_033_988_749_894_8);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..500 {
        if hi - lo <= tol * (R::one() + lo.abs()) {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimizes the eventual bound: golden-section on b over a bracket found
/// by doubling, returning (ε*, η* = Λ_m/ε*, b(ε*)). Degenerate problems
/// fall back to a wide grid search and are flagged.
pub fn tune<R: Scalar>(tp: &TunerProblem<R>, tol: R) -> Result<TunerResult<R>> {
    if tol <= R::zero() {
        return Err(Error::InvalidParameters("tol must be positive".into()));
    }
    let floor = tp.domain_floor();

    let finish = |eps_star: R, bound: R, degenerate: bool| -> TunerResult<R> {
        let eta_star = tp.lambda_m / eps_star;
        let margin = tp.margin(eta_star, eps_star);
        TunerResult {
            eps_star,
            eta_star,
            bound,
            degenerate,
            margin_at_optimum: margin,
            feasible_at_optimum: margin > R::zero(),
            unimodal: tp.unimodality_audit(1000, eps_star * real::<R>(16.0) + floor),
        }
    };

    if tp.is_degenerate() {
        // No interior-minimum structure; scan a wide logarithmic grid.
        let mut best = (floor * real::<R>(2.0), R::max_value().unwrap());
        let lo_log = as_f64(floor).max(1e-12).ln();
        let hi_log = (as_f64(tp.lambda_m).max(1.0) * 1e3).ln();
        for k in 0..=4000 {
            let eps = real::<R>((lo_log + (hi_log - lo_log) * k as f64 / 4000.0).exp());
            if let Ok(v) = tp.b_of_eps(eps) {
                if v < best.1 {
                    best = (eps, v);
                }
            }
        }
        return Ok(finish(best.0, best.1, true));
    }

    // Bracket by doubling from just above the domain edge until b has
    // increased twice in a row (the left edge blows up, so the minimum sits
    // inside the first such window).
    let start = if tp.eps_lower() > R::zero() {
        tp.eps_lower() * real::<R>(2.0)
    } else {
        floor * real::<R>(2.0)
    };
    let mut eps = start;
    let mut values: Vec<(R, R)> = Vec::new();
    let mut increases = 0;
    let mut hi = None;
    for _ in 0..60 {
        let v = tp.b_of_eps(eps)?;
        if let Some((_, prev)) = values.last() {
            if v > *prev {
                increases += 1;
                if increases >= 2 {
                    hi = Some(eps);
                    values.push((eps, v));
                    break;
                }
            } else {
                increases = 0;
            }
        }
        values.push((eps, v));
        eps *= real::<R>(2.0);
    }
    let hi = hi.ok_or_else(|| {
        Error::NoConvergence { best_residual: f64::NAN, iterations: 60 }
    })?;
    let lo = floor.max(hi / real::<R>(32.0));
    let (eps_star, bound) = golden_section(
        |e| tp.b_of_eps(e).unwrap_or_else(|_| R::max_value().unwrap()),
        lo,
        hi,
        tol,
    );
    Ok(finish(eps_star, bound, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn synthetic_sigma() -> SigmaProfile<f64> {
        // A trajectory whose primal and dual speeds vary along the horizon.
        let steps = (0..200)
            .map(|k| {
                let s = k as f64 / 199.0;
                let dx = 0.8 + 0.3 * (2.0 * std::f64::consts::PI * s).sin();
                let dl = 0.4 + 0.2 * (3.0 * std::f64::consts::PI * s).cos();
                (dx * dx, dl * dl)
            })
            .collect();
        SigmaProfile::from_rates(steps)
    }

    fn spec_constants() -> TunerProblem<f64> {
        TunerProblem::new(0.5, 10.0, 1.0, 0.5, 0.2, synthetic_sigma()).unwrap()
    }

    #[test]
    fn eps_lower_matches_positivity_threshold() {
        let tp = spec_constants();
        // Λ_m = 1: both formulations coincide at (δM_nc/4)².
        let expected = (0.5f64 * 0.5 / 4.0).powi(2);
        assert_relative_eq!(tp.eps_lower(), expected, epsilon = 1e-15);
        // Denominator sign flips exactly there.
        assert!(tp.b_of_eps(expected * 1.0001).unwrap() > 0.0);
        assert!(tp.b_of_eps(expected).is_err());
    }

    #[test]
    fn blowup_near_domain_edge() {
        let tp = spec_constants();
        let edge = tp.eps_lower();
        let near = tp.b_of_eps(edge * (1.0 + 1e-9)).unwrap();
        let far = tp.b_of_eps(edge * 2.0).unwrap();
        assert!(near > 1e6 * far, "near {near}, far {far}");
    }

    #[test]
    fn degenerate_case_is_increasing_and_flagged() {
        // M_nc = 0, σ constant: b(ε) = (β⁻¹s + sqrt(εΛ)M)/Λ strictly
        // increasing in ε.
        let sigma = SigmaProfile::from_rates(vec![(1.0, 0.0)]);
        let tp = TunerProblem::new(0.5, 10.0, 1.0, 0.0, 0.3, sigma).unwrap();
        let mut prev = 0.0;
        for k in 1..50 {
            let eps = k as f64 * 0.1;
            let v = tp.b_of_eps(eps).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let result = tune(&tp, 1e-8).unwrap();
        assert!(result.degenerate);
    }

    #[test]
    fn golden_section_matches_dense_grid() {
        let tp = spec_constants();
        let result = tune(&tp, 1e-8).unwrap();
        assert!(!result.degenerate);
        assert_relative_eq!(result.eta_star * result.eps_star, 1.0, epsilon = 0.0);

        // Dense grid over (eps_lower, 100·eps_lower].
        let lower = tp.eps_lower();
        let count = 100_000;
        let mut best = (0.0, f64::INFINITY);
        for k in 1..=count {
            let eps = lower + (100.0 * lower - lower) * k as f64 / count as f64;
            if let Ok(v) = tp.b_of_eps(eps) {
                if v < best.1 {
                    best = (eps, v);
                }
            }
        }
        let cell = 99.0 * lower / count as f64;
        assert!(
            (result.eps_star - best.0).abs() <= cell + 1e-8 * (1.0 + best.0),
            "golden {} vs grid {} (cell {cell})",
            result.eps_star,
            best.0
        );
        assert!(result.bound <= best.1 + 1e-12);
    }

    #[test]
    fn optimum_beats_random_feasible_pairs() {
        let tp = spec_constants();
        let result = tune(&tp, 1e-10).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut found = 0;
        while found < 20 {
            let eta = 10f64.powf(rng.gen_range(-2.0..3.0));
            let eps = 10f64.powf(rng.gen_range(-4.0..1.0));
            if tp.margin(eta, eps) > 0.0 {
                found += 1;
                let v = tp.eventual_bound(eta, eps).unwrap();
                assert!(
                    result.bound <= v + 1e-9,
                    "optimum {} must not exceed feasible bound {v} at ({eta}, {eps})",
                    result.bound
                );
            }
        }
    }

    #[test]
    fn unimodality_audit_passes_on_spec_constants() {
        let tp = spec_constants();
        assert!(tp.unimodality_audit(1000, tp.eps_lower() * 100.0));
    }
}
