//! Time-varying problem oracles: costs, constraints, derivatives, feasible
//! sets, time sampling, and finite-difference derivative verification.

pub mod profiles;
pub mod scenario;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{as_f64, real, real_of_usize, Scalar};
use crate::sets::ConvexSet;

type ScalarFn<R> = Arc<dyn Fn(&DVector<R>, R) -> R + Send + Sync>;
type VectorFn<R> = Arc<dyn Fn(&DVector<R>, R) -> DVector<R> + Send + Sync>;
type MatrixFn<R> = Arc<dyn Fn(&DVector<R>, R) -> DMatrix<R> + Send + Sync>;
type IndexedMatrixFn<R> = Arc<dyn Fn(&DVector<R>, R, usize) -> DMatrix<R> + Send + Sync>;

/// Evaluates the time-varying problem data at any (x, t).
///
/// The constraint function is split as f = f^c + f^nc where every component
/// of f^c is convex in x at every t. All callbacks must be pure and
/// re-entrant; the library evaluates them from multiple workers.
#[derive(Clone)]
pub struct ProblemOracle<R: Scalar> {
    n: usize,
    m: usize,
    horizon: R,
    cost: ScalarFn<R>,
    grad_cost: VectorFn<R>,
    f_convex: VectorFn<R>,
    f_nonconvex: VectorFn<R>,
    jac_convex: MatrixFn<R>,
    jac_nonconvex: MatrixFn<R>,
    hess_cost: MatrixFn<R>,
    hess_convex: IndexedMatrixFn<R>,
    hess_nonconvex: IndexedMatrixFn<R>,
    feasible_set: ConvexSet<R>,
}

impl<R: Scalar> ProblemOracle<R> {
    pub fn builder(n: usize, m: usize, horizon: R) -> ProblemOracleBuilder<R> {
        ProblemOracleBuilder::new(n, m, horizon)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> R {
        self.horizon
    }

    pub fn cost(&self, x: &DVector<R>, t: R) -> R {
        (self.cost)(x, t)
    }

    pub fn grad_cost(&self, x: &DVector<R>, t: R) -> DVector<R> {
        (self.grad_cost)(x, t)
    }

    pub fn f_convex(&self, x: &DVector<R>, t: R) -> DVector<R> {
        (self.f_convex)(x, t)
    }

    pub fn f_nonconvex(&self, x: &DVector<R>, t: R) -> DVector<R> {
        (self.f_nonconvex)(x, t)
    }

    /// f = f^c + f^nc.
    pub fn f(&self, x: &DVector<R>, t: R) -> DVector<R> {
        self.f_convex(x, t) + self.f_nonconvex(x, t)
    }

    pub fn jac_convex(&self, x: &DVector<R>, t: R) -> DMatrix<R> {
        (self.jac_convex)(x, t)
    }

    pub fn jac_nonconvex(&self, x: &DVector<R>, t: R) -> DMatrix<R> {
        (self.jac_nonconvex)(x, t)
    }

    /// J_{f,x} = J_{f^c,x} + J_{f^nc,x}.
    pub fn jac(&self, x: &DVector<R>, t: R) -> DMatrix<R> {
        self.jac_convex(x, t) + self.jac_nonconvex(x, t)
    }

    pub fn hess_cost(&self, x: &DVector<R>, t: R) -> DMatrix<R> {
        (self.hess_cost)(x, t)
    }

    pub fn hess_convex_i(&self, x: &DVector<R>, t: R, i: usize) -> DMatrix<R> {
        (self.hess_convex)(x, t, i)
    }

    pub fn hess_nonconvex_i(&self, x: &DVector<R>, t: R, i: usize) -> DMatrix<R> {
        (self.hess_nonconvex)(x, t, i)
    }

    pub fn feasible_set(&self) -> &ConvexSet<R> {
        &self.feasible_set
    }

    /// Frozen-time view at an arbitrary t ∈ [0, S].
    pub fn at(&self, t: R) -> SampledProblem<'_, R> {
        SampledProblem { oracle: self, t }
    }
}

/// Builder for [`ProblemOracle`]; all derivative callbacks of a constrained
/// problem must be supplied, unconstrained problems (m = 0) get empty
/// defaults for the constraint blocks.
pub struct ProblemOracleBuilder<R: Scalar> {
    n: usize,
    m: usize,
    horizon: R,
    cost: Option<ScalarFn<R>>,
    grad_cost: Option<VectorFn<R>>,
    f_convex: Option<VectorFn<R>>,
    f_nonconvex: Option<VectorFn<R>>,
    jac_convex: Option<MatrixFn<R>>,
    jac_nonconvex: Option<MatrixFn<R>>,
    hess_cost: Option<MatrixFn<R>>,
    hess_convex: Option<IndexedMatrixFn<R>>,
    hess_nonconvex: Option<IndexedMatrixFn<R>>,
    feasible_set: Option<ConvexSet<R>>,
}

impl<R: Scalar> ProblemOracleBuilder<R> {
    fn new(n: usize, m: usize, horizon: R) -> Self {
        Self {
            n,
            m,
            horizon,
            cost: None,
            grad_cost: None,
            f_convex: None,
            f_nonconvex: None,
            jac_convex: None,
            jac_nonconvex: None,
            hess_cost: None,
            hess_convex: None,
            hess_nonconvex: None,
            feasible_set: None,
        }
    }

    pub fn cost<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R) -> R + Send + Sync + 'static,
    {
        self.cost = Some(Arc::new(f));
        self
    }

    pub fn grad_cost<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R) -> DVector<R> + Send + Sync + 'static,
    {
        self.grad_cost = Some(Arc::new(f));
        self
    }

    pub fn f_convex<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R) -> DVector<R> + Send + Sync + 'static,
    {
        self.f_convex = Some(Arc::new(f));
        self
    }

    pub fn f_nonconvex<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R) -> DVector<R> + Send + Sync + 'static,
    {
        self.f_nonconvex = Some(Arc::new(f));
        self
    }

    pub fn jac_convex<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R) -> DMatrix<R> + Send + Sync + 'static,
    {
        self.jac_convex = Some(Arc::new(f));
        self
    }

    pub fn jac_nonconvex<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R) -> DMatrix<R> + Send + Sync + 'static,
    {
        self.jac_nonconvex = Some(Arc::new(f));
        self
    }

    pub fn hess_cost<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R) -> DMatrix<R> + Send + Sync + 'static,
    {
        self.hess_cost = Some(Arc::new(f));
        self
    }

    pub fn hess_convex_i<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R, usize) -> DMatrix<R> + Send + Sync + 'static,
    {
        self.hess_convex = Some(Arc::new(f));
        self
    }

    pub fn hess_nonconvex_i<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<R>, R, usize) -> DMatrix<R> + Send + Sync + 'static,
    {
        self.hess_nonconvex = Some(Arc::new(f));
        self
    }

    pub fn feasible_set(mut self, set: ConvexSet<R>) -> Self {
        self.feasible_set = Some(set);
        self
    }

    pub fn build(self) -> Result<ProblemOracle<R>> {
        let n = self.n;
        let m = self.m;
        if n == 0 {
            return Err(Error::InvalidParameters("n must be at least 1".into()));
        }
        if !self.horizon.is_finite() || self.horizon <= R::zero() {
            return Err(Error::InvalidParameters("horizon must be positive".into()));
        }
        let zero_vec: VectorFn<R> = Arc::new(move |_: &DVector<R>, _| DVector::zeros(m));
        let zero_jac: MatrixFn<R> = Arc::new(move |_: &DVector<R>, _| DMatrix::zeros(m, n));
        let zero_hess: IndexedMatrixFn<R> = Arc::new(move |_: &DVector<R>, _, _| DMatrix::zeros(n, n));
        let feasible_set = self.feasible_set.unwrap_or(ConvexSet::AllSpace { dim: n });
        if feasible_set.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "feasible set has dimension {}, problem has n = {}",
                feasible_set.dim(),
                n
            )));
        }
        let missing = |what: &str| Error::InvalidParameters(format!("missing callback: {what}"));
        Ok(ProblemOracle {
            n,
            m,
            horizon: self.horizon,
            cost: self.cost.ok_or_else(|| missing("cost"))?,
            grad_cost: self.grad_cost.ok_or_else(|| missing("grad_cost"))?,
            f_convex: self.f_convex.unwrap_or_else(|| zero_vec.clone()),
            f_nonconvex: self.f_nonconvex.unwrap_or(zero_vec),
            jac_convex: self.jac_convex.unwrap_or_else(|| zero_jac.clone()),
            jac_nonconvex: self.jac_nonconvex.unwrap_or(zero_jac),
            hess_cost: self.hess_cost.ok_or_else(|| missing("hess_cost"))?,
            hess_convex: self.hess_convex.unwrap_or_else(|| zero_hess.clone()),
            hess_nonconvex: self.hess_nonconvex.unwrap_or(zero_hess),
            feasible_set,
        })
    }
}

/// The horizon [0, S] divided into T slots of duration Δ_T = S/T.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<R: Scalar> {
    horizon: R,
    slots: usize,
}

impl<R: Scalar> TimeGrid<R> {
    pub fn new(horizon: R, slots: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= R::zero() {
            return Err(Error::InvalidParameters("horizon must be positive".into()));
        }
        if slots == 0 {
            return Err(Error::InvalidParameters("T must be at least 1".into()));
        }
        Ok(Self { horizon, slots })
    }

    /// A degenerate grid used only to carry z0-only trajectories.
    pub fn trivial(horizon: R) -> Self {
        Self { horizon, slots: 0 }
    }

    pub fn horizon(&self) -> R {
        self.horizon
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn delta(&self) -> R {
        self.horizon / real_of_usize::<R>(self.slots.max(1))
    }

    /// t = τ·Δ_T for τ in 0..=T.
    pub fn time(&self, tau: usize) -> R {
        real_of_usize::<R>(tau) * self.delta()
    }
}

/// Frozen-time view of an oracle: the sampled problem at t = τ·Δ_T.
#[derive(Clone, Copy)]
pub struct SampledProblem<'a, R: Scalar> {
    oracle: &'a ProblemOracle<R>,
    t: R,
}

impl<'a, R: Scalar> SampledProblem<'a, R> {
    pub fn t(&self) -> R {
        self.t
    }

    pub fn oracle(&self) -> &'a ProblemOracle<R> {
        self.oracle
    }

    pub fn cost(&self, x: &DVector<R>) -> R {
        self.oracle.cost(x, self.t)
    }

    pub fn grad_cost(&self, x: &DVector<R>) -> DVector<R> {
        self.oracle.grad_cost(x, self.t)
    }

    pub fn f(&self, x: &DVector<R>) -> DVector<R> {
        self.oracle.f(x, self.t)
    }

    pub fn jac(&self, x: &DVector<R>) -> DMatrix<R> {
        self.oracle.jac(x, self.t)
    }

    pub fn project(&self, v: &DVector<R>) -> Result<DVector<R>> {
        self.oracle.feasible_set().project(v, self.t)
    }
}

/// Sampled view at slot τ ∈ {1, …, T}; slot 0 is not a problem instance.
pub fn sample<'a, R: Scalar>(
    oracle: &'a ProblemOracle<R>,
    grid: &TimeGrid<R>,
    tau: usize,
) -> Result<SampledProblem<'a, R>> {
    if tau == 0 || tau > grid.slots() {
        return Err(Error::OutOfRange(format!(
            "slot {} outside 1..={}",
            tau,
            grid.slots()
        )));
    }
    Ok(oracle.at(grid.time(tau)))
}

/// Worst relative discrepancies between analytic derivatives and central
/// finite differences; `None` sections are vacuous (m = 0).
#[derive(Clone, Debug)]
pub struct DerivativeReport<R: Scalar> {
    pub grad_cost: R,
    pub jac_convex: Option<R>,
    pub jac_nonconvex: Option<R>,
    pub hess_cost: R,
    pub hess_convex: Option<R>,
    pub hess_nonconvex: Option<R>,
    pub samples: usize,
}

impl<R: Scalar> DerivativeReport<R> {
    pub fn max_error(&self) -> R {
        let mut worst = self.grad_cost.max(self.hess_cost);
        for v in [self.jac_convex, self.jac_nonconvex, self.hess_convex, self.hess_nonconvex]
            .into_iter()
            .flatten()
        {
            worst = worst.max(v);
        }
        worst
    }
}

fn rel_err<R: Scalar>(analytic: &DVector<R>, fd: &DVector<R>) -> R {
    (analytic - fd).norm() / fd.norm().max(R::one())
}

/// Checks every derivative callback against central finite differences at
/// `samples` random (x, t); deterministic for a fixed seed. First
/// derivatives are differenced from the value callbacks, second derivatives
/// from the first-derivative callbacks.
pub fn check_derivatives<R: Scalar>(
    oracle: &ProblemOracle<R>,
    samples: usize,
    seed: u64,
) -> Result<DerivativeReport<R>> {
    if samples == 0 {
        return Err(Error::InvalidParameters("samples must be >= 1".into()));
    }
    let n = oracle.n();
    let m = oracle.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DerivativeReport {
        grad_cost: R::zero(),
        jac_convex: (m > 0).then_some(R::zero()),
        jac_nonconvex: (m > 0).then_some(R::zero()),
        hess_cost: R::zero(),
        hess_convex: (m > 0).then_some(R::zero()),
        hess_nonconvex: (m > 0).then_some(R::zero()),
        samples,
    };

    for _ in 0..samples {
        let x = DVector::from_fn(n, |_, _| real::<R>(rng.sample::<f64, _>(StandardNormal)));
        let t = real::<R>(rng.gen::<f64>()) * oracle.horizon();
        let h = R::default_epsilon().powf(real::<R>(1.0 / 3.0)) * (R::one() + x.norm());

        let check_finite = |v: &DVector<R>, what: &str| -> Result<()> {
            if let Some(i) = v.iter().position(|e| !e.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{what} component {i} at x = {:?}, t = {}",
                    x.iter().map(|v| as_f64(*v)).collect::<Vec<_>>(),
                    as_f64(t)
                )));
            }
            Ok(())
        };

        // Gradient of the cost vs central differences of the cost values.
        let grad = oracle.grad_cost(&x, t);
        check_finite(&grad, "grad_cost")?;
        let mut grad_fd = DVector::zeros(n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            grad_fd[j] = (oracle.cost(&xp, t) - oracle.cost(&xm, t)) / (h + h);
        }
        check_finite(&grad_fd, "cost finite differences")?;
        report.grad_cost = report.grad_cost.max(rel_err(&grad, &grad_fd));

        // Hessian of the cost vs central differences of the gradient.
        let hess = oracle.hess_cost(&x, t);
        let mut hess_fd = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (oracle.grad_cost(&xp, t) - oracle.grad_cost(&xm, t)) / (h + h);
            hess_fd.set_column(j, &col);
        }
        let hc = flatten_rel_err(&hess, &hess_fd);
        report.hess_cost = report.hess_cost.max(hc);

        if m > 0 {
            for (split, jac_field, hess_field) in [
                (Split::Convex, &mut report.jac_convex, &mut report.hess_convex),
                (Split::Nonconvex, &mut report.jac_nonconvex, &mut report.hess_nonconvex),
            ] {
                let fval = |x: &DVector<R>| match split {
                    Split::Convex => oracle.f_convex(x, t),
                    Split::Nonconvex => oracle.f_nonconvex(x, t),
                };
                let jval = |x: &DVector<R>| match split {
                    Split::Convex => oracle.jac_convex(x, t),
                    Split::Nonconvex => oracle.jac_nonconvex(x, t),
                };
                check_finite(&fval(&x), "constraint values")?;
                let jac = jval(&x);
                let mut jac_fd = DMatrix::zeros(m, n);
                for j in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let col = (fval(&xp) - fval(&xm)) / (h + h);
                    jac_fd.set_column(j, &col);
                }
                let je = flatten_rel_err(&jac, &jac_fd);
                *jac_field = Some(jac_field.unwrap().max(je));

                let mut worst_h = R::zero();
                for i in 0..m {
                    let hess = match split {
                        Split::Convex => oracle.hess_convex_i(&x, t, i),
                        Split::Nonconvex => oracle.hess_nonconvex_i(&x, t, i),
                    };
                    let mut hess_fd = DMatrix::zeros(n, n);
                    for j in 0..n {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[j] += h;
                        xm[j] -= h;
                        let col =
                            (jval(&xp).row(i) - jval(&xm).row(i)).transpose() / (h + h);
                        hess_fd.set_column(j, &col);
                    }
                    worst_h = worst_h.max(flatten_rel_err(&hess, &hess_fd));
                }
                *hess_field = Some(hess_field.unwrap().max(worst_h));
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy)]
enum Split {
    Convex,
    Nonconvex,
}

fn flatten_rel_err<R: Scalar>(analytic: &DMatrix<R>, fd: &DMatrix<R>) -> R {
    let diff = (analytic - fd).norm();
    diff / fd.norm().max(R::one())
}

/// Smallest sampled eigenvalue of the per-component convex-constraint
/// Hessians over random (x, t, i); values below −1e-8 break the f^c split.
pub fn check_convexity<R: Scalar>(oracle: &ProblemOracle<R>, samples: usize, seed: u64) -> R {
    if oracle.m() == 0 {
        return R::zero();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = R::zero();
    for _ in 0..samples {
        let x = DVector::from_fn(oracle.n(), |_, _| {
            real::<R>(rng.sample::<f64, _>(StandardNormal))
        });
        let t = real::<R>(rng.gen::<f64>()) * oracle.horizon();
        let i = rng.gen_range(0..oracle.m());
        let h = oracle.hess_convex_i(&x, t, i);
        let sym = (h.clone() + h.transpose()) * real::<R>(0.5);
        let eig = sym.symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(R::zero(), R::min);
        worst = worst.min(min);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn quadratic_1d() -> ProblemOracle<f64> {
        // c(x, t) = ½(x − t)², one affine constraint x − 0.5 <= 0 as f^c.
        ProblemOracle::builder(1, 1, 1.0)
            .cost(|x, t| 0.5 * (x[0] - t).powi(2))
            .grad_cost(|x, t| dvector![x[0] - t])
            .f_convex(|x, _| dvector![x[0] - 0.5])
            .jac_convex(|_, _| DMatrix::from_element(1, 1, 1.0))
            .hess_cost(|_, _| DMatrix::from_element(1, 1, 1.0))
            .hess_convex_i(|_, _, _| DMatrix::zeros(1, 1))
            .feasible_set(ConvexSet::fixed_box(dvector![-10.0], dvector![10.0]))
            .build()
            .unwrap()
    }

    #[test]
    fn sample_substitutes_time() {
        let oracle = quadratic_1d();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let view = sample(&oracle, &grid, 5).unwrap();
        assert_relative_eq!(view.cost(&dvector![0.5]), 0.0);
        assert_relative_eq!(view.cost(&dvector![1.5]), 0.5);
    }

    #[test]
    fn slot_zero_rejected_and_endpoint_allowed() {
        let oracle = quadratic_1d();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        assert!(matches!(sample(&oracle, &grid, 0), Err(Error::OutOfRange(_))));
        assert!(matches!(sample(&oracle, &grid, 11), Err(Error::OutOfRange(_))));
        let view = sample(&oracle, &grid, 10).unwrap();
        assert_relative_eq!(view.t(), 1.0);
    }

    #[test]
    fn sampled_view_is_bitwise_consistent() {
        let oracle = quadratic_1d();
        let grid = TimeGrid::new(1.0, 7).unwrap();
        for tau in 1..=7 {
            let view = sample(&oracle, &grid, tau).unwrap();
            let x = dvector![0.3];
            assert_eq!(view.cost(&x), oracle.cost(&x, grid.time(tau)));
            assert_eq!(view.f(&x), oracle.f(&x, grid.time(tau)));
        }
    }

    #[test]
    fn derivative_check_clean_oracle() {
        let oracle = quadratic_1d();
        let report = check_derivatives(&oracle, 25, 7).unwrap();
        assert!(report.max_error() <= 1e-6, "max err {}", report.max_error());
    }

    #[test]
    fn derivative_check_flags_planted_gradient_fault() {
        // Gradient deliberately 10% off; chosen with ‖grad‖ >= 1 at the
        // sampled points so the relative error lands at 0.1.
        let oracle = ProblemOracle::builder(2, 0, 1.0)
            .cost(|x, _| 5.0 * x.norm_squared())
            .grad_cost(|x, _| x * 11.0)
            .hess_cost(|_, _| DMatrix::from_diagonal_element(2, 2, 10.0))
            .build()
            .unwrap();
        let report = check_derivatives(&oracle, 40, 3).unwrap();
        assert!(
            (report.grad_cost - 0.1).abs() < 0.02,
            "gradient section should sit near 0.1, got {}",
            report.grad_cost
        );
        assert!(report.jac_convex.is_none());
    }

    #[test]
    fn unconstrained_report_has_empty_sections() {
        let oracle = ProblemOracle::builder(1, 0, 1.0)
            .cost(|x, _| 0.5 * x[0] * x[0])
            .grad_cost(|x, _| dvector![x[0]])
            .hess_cost(|_, _| DMatrix::from_element(1, 1, 1.0))
            .build()
            .unwrap();
        let report = check_derivatives(&oracle, 5, 1).unwrap();
        assert!(report.jac_convex.is_none());
        assert!(report.hess_nonconvex.is_none());
        assert!(report.grad_cost <= 1e-8);
    }

    #[test]
    fn non_finite_oracle_output_is_diagnosed() {
        let oracle = ProblemOracle::builder(1, 0, 1.0)
            .cost(|x, _| x[0])
            .grad_cost(|_, _| dvector![f64::NAN])
            .hess_cost(|_, _| DMatrix::zeros(1, 1))
            .build()
            .unwrap();
        let err = check_derivatives(&oracle, 3, 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn determinism_for_fixed_seed() {
        let oracle = quadratic_1d();
        let a = check_derivatives(&oracle, 10, 42).unwrap();
        let b = check_derivatives(&oracle, 10, 42).unwrap();
        assert_eq!(a.grad_cost, b.grad_cost);
        assert_eq!(a.hess_cost, b.hess_cost);
    }
}
