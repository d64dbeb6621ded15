//! Numerical evaluation of the contraction and tracking-error machinery
//! along a residual-certified reference trajectory: the constants σ_η, M_λ,
//! M_nc(δ), M_c(δ), L_f(δ), D(δ,η), Λ_m(δ), the contraction factors
//! ρ^(P), ρ, κ, the discrete and continuous feasibility margins and
//! eventual bounds, and the KKT-isolation conditions.
//!
//! Every sup/inf over t ∈ [0,S] and ‖u‖ ≤ δ is estimated on a finite grid
//! (nested under doubling) with local refinement, and is therefore a lower
//! bound of the true sup (upper bound of the true inf). Reports carry the
//! grids, the seed, and an inflation factor for safety-critical use.

pub mod quadrature;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primal_dual::{EtaNorm, PrimalDual};
use crate::problem::ProblemOracle;
use crate::scalar::{as_f64, real, Scalar};
use crate::tracker::Trajectory;

use quadrature::gauss_legendre_unit;

/// Sampling policy for the sup/inf estimates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CertificateInputs<R: Scalar> {
    /// Ball radius δ around the reference trajectory.
    pub delta: R,
    /// Number of reference times sampled (nested selection over the grid).
    pub t_grid_count: usize,
    /// Pseudorandom unit directions per point (coordinate axes are added).
    pub dir_count: usize,
    /// Radii sampled in (0, δ]; the center u = 0 is probed as well.
    pub radius_count: usize,
    /// Gauss–Legendre nodes for the θ-integrals.
    pub quadrature_nodes: usize,
    pub seed: u64,
    /// Safety factor applied by [`Constants::inflated`].
    pub inflation: R,
}

impl<R: Scalar> CertificateInputs<R> {
    pub fn new(delta: R, seed: u64) -> Self {
        Self {
            delta,
            t_grid_count: 33,
            dir_count: 16,
            radius_count: 4,
            quadrature_nodes: 8,
            seed,
            inflation: real::<R>(1.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta <= R::zero() {
            return Err(Error::InvalidParameters("delta must be positive".into()));
        }
        if self.t_grid_count == 0 || self.dir_count == 0 || self.radius_count == 0 {
            return Err(Error::InvalidParameters("sampling counts must be >= 1".into()));
        }
        if self.quadrature_nodes < 2 {
            return Err(Error::InvalidParameters("need at least 2 quadrature nodes".into()));
        }
        if self.inflation < R::one() {
            return Err(Error::InvalidParameters("inflation factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Grid metadata attached to every sampled estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingMeta {
    /// Always "sampled-estimate": finite-grid sups/infs, not rigorous
    /// enclosures.
    pub estimate_kind: String,
    pub delta: f64,
    pub times_sampled: usize,
    pub dir_count: usize,
    pub radius_count: usize,
    pub quadrature_nodes: usize,
    pub seed: u64,
    pub inflation: f64,
    pub inflated: bool,
}

/// The §3 constants along a reference trajectory.
#[derive(Clone, Debug)]
pub struct Constants<R: Scalar> {
    pub sigma_eta: R,
    pub m_lambda: R,
    pub m_nc: R,
    pub m_c: R,
    pub l_f: R,
    pub cap_d: R,
    pub lambda_m: R,
    pub sup_lambda_norm: R,
    pub eta: R,
    pub meta: SamplingMeta,
}

impl<R: Scalar> Constants<R> {
    /// Safety-inflated copy: sup-type constants are scaled up by the
    /// inflation factor, Λ_m is deflated toward −∞, and D is recomputed.
    pub fn inflated(&self) -> Constants<R> {
        let f = real::<R>(self.meta.inflation);
        let lambda_m = if self.lambda_m >= R::zero() {
            self.lambda_m / f
        } else {
            self.lambda_m * f
        };
        let mut out = Constants {
            sigma_eta: self.sigma_eta * f,
            m_lambda: self.m_lambda * f,
            m_nc: self.m_nc * f,
            m_c: self.m_c * f,
            l_f: self.l_f * f,
            sup_lambda_norm: self.sup_lambda_norm * f,
            lambda_m,
            cap_d: R::zero(),
            eta: self.eta,
            meta: self.meta.clone(),
        };
        out.cap_d = self.eta.sqrt() * out.l_f + out.m_c * out.sup_lambda_norm;
        out.meta.inflated = true;
        out
    }
}

/// Worker pool for grid evaluation; `KKT_TRACKER_WORKERS` caps the thread
/// count. Reductions are max/min, so scheduling does not affect results.
fn worker_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(raw) = std::env::var("KKT_TRACKER_WORKERS") {
            if let Ok(n) = raw.trim().parse::<usize>() {
                builder = builder.num_threads(n.max(1));
            }
        }
        builder.build().expect("worker pool")
    })
}

/// Averaged Hessians at displacement u from the KKT point:
/// H̄_L(u,t) = ∫₀¹ ∇²xx[c + λ*ᵀf^nc](x*+θu, t) dθ and
/// H̄_fc_i(u,t) = ∫₀¹ 2(1−θ) ∇²xx f^c_i(x*+θu, t) dθ, Gauss–Legendre in θ,
/// explicitly symmetrized.
pub fn averaged_hessians<R: Scalar>(
    problem: &ProblemOracle<R>,
    z_star: &PrimalDual<R>,
    t: R,
    u: &DVector<R>,
    nodes: usize,
) -> Result<(DMatrix<R>, Vec<DMatrix<R>>)> {
    if nodes < 2 {
        return Err(Error::InvalidParameters("need at least 2 quadrature nodes".into()));
    }
    let n = problem.n();
    let m = problem.m();
    let (theta, weight) = gauss_legendre_unit::<R>(nodes);
    let mut h_l = DMatrix::<R>::zeros(n, n);
    let mut h_fc = vec![DMatrix::<R>::zeros(n, n); m];
    for (theta_k, w_k) in theta.iter().zip(&weight) {
        let x = &z_star.x + u * *theta_k;
        let mut point = problem.hess_cost(&x, t);
        for i in 0..m {
            let li = z_star.lambda[i];
            if li != R::zero() {
                point += problem.hess_nonconvex_i(&x, t, i) * li;
            }
            let w_fc = *w_k * real::<R>(2.0) * (R::one() - *theta_k);
            h_fc[i] += problem.hess_convex_i(&x, t, i) * w_fc;
        }
        h_l += point * *w_k;
    }
    let sym = |m: DMatrix<R>| (m.clone() + m.transpose()) * real::<R>(0.5);
    Ok((sym(h_l), h_fc.into_iter().map(sym).collect()))
}

fn spectral_norm<R: Scalar>(m: &DMatrix<R>) -> R {
    if m.is_empty() {
        return R::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(R::zero(), |acc, s| acc.max(*s))
}

fn sym_extreme_eigs<R: Scalar>(m: &DMatrix<R>) -> (R, R) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = R::max_value().unwrap();
    let mut hi = -R::max_value().unwrap();
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

fn sym_spectral_norm<R: Scalar>(m: &DMatrix<R>) -> R {
    let (lo, hi) = sym_extreme_eigs(m);
    lo.abs().max(hi.abs())
}

/// Estimates the bilinear-map norm ‖D²f‖ = sup_{‖h₁‖=‖h₂‖=1} ‖(h₂ᵀHᵢh₁)ᵢ‖
/// by alternating maximization over the output direction v and the input
/// pair (top eigenpair of Σᵢ vᵢHᵢ); monotone in the rounds.
fn bilinear_norm<R: Scalar>(hessians: &[DMatrix<R>]) -> R {
    let m = hessians.len();
    if m == 0 {
        return R::zero();
    }
    let sym: Vec<DMatrix<R>> = hessians
        .iter()
        .map(|h| (h.clone() + h.transpose()) * real::<R>(0.5))
        .collect();
    if m == 1 {
        return sym_spectral_norm(&sym[0]);
    }
    let norms = DVector::<R>::from_iterator(m, sym.iter().map(sym_spectral_norm));
    let mut starts: Vec<DVector<R>> = Vec::new();
    if norms.norm() > R::zero() {
        starts.push(norms.normalize());
    }
    for i in 0..m.min(6) {
        let mut e = DVector::zeros(m);
        e[i] = R::one();
        starts.push(e);
    }
    let mut best = R::zero();
    for mut v in starts {
        for _ in 0..10 {
            let mut contracted = DMatrix::<R>::zeros(sym[0].nrows(), sym[0].ncols());
            for i in 0..m {
                contracted += &sym[i] * v[i];
            }
            let eig = contracted.symmetric_eigen();
            let mut top = 0usize;
            for (k, val) in eig.eigenvalues.iter().enumerate() {
                if val.abs() > eig.eigenvalues[top].abs() {
                    top = k;
                }
            }
            let h = eig.eigenvectors.column(top).into_owned();
            let y = DVector::<R>::from_iterator(m, sym.iter().map(|hi| (hi * &h).dot(&h)));
            let val = y.norm();
            if val <= best + R::default_epsilon() {
                best = best.max(val);
                break;
            }
            best = val;
            v = y.normalize();
        }
    }
    best
}

struct TubeSamples<R: Scalar> {
    /// (reference index, time, reference point) triples.
    times: Vec<(usize, R, PrimalDual<R>)>,
    dirs: Vec<DVector<R>>,
    radii: Vec<R>,
}

fn tube_samples<R: Scalar>(
    reference: &Trajectory<R>,
    inputs: &CertificateInputs<R>,
    n: usize,
) -> TubeSamples<R> {
    let t_count = reference.points.len() - 1;
    let count = inputs.t_grid_count.min(t_count.max(1));
    let mut indices: Vec<usize> = (0..=count).map(|k| k * t_count / count).collect();
    indices.dedup();
    let times = indices
        .into_iter()
        .map(|idx| (idx, reference.grid.time(idx), reference.points[idx].clone()))
        .collect();

    // A deterministic direction stream: doubling dir_count extends the
    // prefix, keeping grids nested. Coordinate axes are always included.
    let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
    let mut dirs = Vec::with_capacity(inputs.dir_count + 2 * n);
    for _ in 0..inputs.dir_count {
        let mut d = DVector::from_fn(n, |_, _| real::<R>(rng.sample::<f64, _>(StandardNormal)));
        let norm = d.norm();
        if norm > R::zero() {
            d /= norm;
            dirs.push(d);
        }
    }
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = R::one();
        dirs.push(e.clone());
        dirs.push(-e);
    }

    let radii = (1..=inputs.radius_count)
        .map(|k| inputs.delta * real::<R>(k as f64 / inputs.radius_count as f64))
        .collect();
    TubeSamples { times, dirs, radii }
}

/// Projected-gradient refinement of a sampled sup over the δ-ball; finite
/// difference gradient, monotone accept, 20 steps.
fn refine_max<R: Scalar, F>(objective: F, u0: &DVector<R>, delta: R) -> R
where
    F: Fn(&DVector<R>) -> R,
{
    let n = u0.len();
    let mut u = u0.clone();
    let mut best = objective(&u);
    let mut step = delta * real::<R>(0.25);
    let h = delta * real::<R>(1e-4);
    for _ in 0..20 {
        let mut grad = DVector::<R>::zeros(n);
        for j in 0..n {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            grad[j] = (objective(&up) - objective(&um)) / (h + h);
        }
        let gn = grad.norm();
        if gn == R::zero() || !gn.is_finite() {
            break;
        }
        let mut cand = &u + grad * (step / gn);
        let norm = cand.norm();
        if norm > delta {
            cand *= delta / norm;
        }
        let val = objective(&cand);
        if val > best {
            best = val;
            u = cand;
        } else {
            step *= real::<R>(0.5);
        }
    }
    best
}

struct TubeExtrema<R: Scalar> {
    m_nc: R,
    m_c: R,
    l_f: R,
    lambda_m: R,
    arg_m_nc: (usize, DVector<R>),
    arg_m_c: (usize, DVector<R>),
    arg_l_f: (usize, DVector<R>),
    arg_lambda_m: (usize, DVector<R>),
}

/// Evaluates σ_η, M_λ, M_nc, M_c, L_f, D, Λ_m along the reference.
pub fn constants<R: Scalar>(
    problem: &ProblemOracle<R>,
    reference: &Trajectory<R>,
    inputs: &CertificateInputs<R>,
    eta: R,
    lambda_prior: &DVector<R>,
) -> Result<Constants<R>> {
    inputs.validate()?;
    if reference.points.len() < 2 {
        return Err(Error::InvalidParameters(
            "reference trajectory needs at least 2 points for sigma_eta".into(),
        ));
    }
    if lambda_prior.len() != problem.m() {
        return Err(Error::DimensionMismatch("lambda_prior length".into()));
    }
    let norm = EtaNorm::new(eta)?;
    let delta_t = reference.grid.delta();

    let mut sigma_eta = R::zero();
    for w in reference.points.windows(2) {
        sigma_eta = sigma_eta.max(norm.dist(&w[1], &w[0]) / delta_t);
    }
    let mut m_lambda = R::zero();
    let mut sup_lambda_norm = R::zero();
    for p in &reference.points {
        m_lambda = m_lambda.max((&p.lambda - lambda_prior).norm());
        sup_lambda_norm = sup_lambda_norm.max(p.lambda.norm());
    }

    let samples = tube_samples(reference, inputs, problem.n());
    let nodes = inputs.quadrature_nodes;

    let eval_point = |z_star: &PrimalDual<R>, t: R, u: &DVector<R>| -> Result<(R, R, R, R)> {
        let x = &z_star.x + u;
        let m = problem.m();
        let nc: Vec<DMatrix<R>> = (0..m).map(|i| problem.hess_nonconvex_i(&x, t, i)).collect();
        let c: Vec<DMatrix<R>> = (0..m).map(|i| problem.hess_convex_i(&x, t, i)).collect();
        let m_nc = bilinear_norm(&nc);
        let m_c = bilinear_norm(&c);
        let l_f = spectral_norm(&problem.jac(&x, t));
        let (h_l, h_fc) = averaged_hessians(problem, z_star, t, u, nodes)?;
        let mut combined = h_l;
        for (i, h) in h_fc.iter().enumerate() {
            combined += h * (z_star.lambda[i] * real::<R>(0.5));
        }
        let (lambda_min, _) = sym_extreme_eigs(&combined);
        Ok((m_nc, m_c, l_f, lambda_min))
    };

    let per_time = |entry: &(usize, R, PrimalDual<R>)| -> Result<TubeExtrema<R>> {
        let (_, t, z_star) = entry;
        let zero_u = DVector::<R>::zeros(problem.n());
        let (m_nc0, m_c0, l_f0, lm0) = eval_point(z_star, *t, &zero_u)?;
        let mut ext = TubeExtrema {
            m_nc: m_nc0,
            m_c: m_c0,
            l_f: l_f0,
            lambda_m: lm0,
            arg_m_nc: (entry.0, zero_u.clone()),
            arg_m_c: (entry.0, zero_u.clone()),
            arg_l_f: (entry.0, zero_u.clone()),
            arg_lambda_m: (entry.0, zero_u),
        };
        for r in &samples.radii {
            for d in &samples.dirs {
                let u = d * *r;
                let (m_nc, m_c, l_f, lm) = eval_point(z_star, *t, &u)?;
                if m_nc > ext.m_nc {
                    ext.m_nc = m_nc;
                    ext.arg_m_nc = (entry.0, u.clone());
                }
                if m_c > ext.m_c {
                    ext.m_c = m_c;
                    ext.arg_m_c = (entry.0, u.clone());
                }
                if l_f > ext.l_f {
                    ext.l_f = l_f;
                    ext.arg_l_f = (entry.0, u.clone());
                }
                if lm < ext.lambda_m {
                    ext.lambda_m = lm;
                    ext.arg_lambda_m = (entry.0, u);
                }
            }
        }
        Ok(ext)
    };

    let merged: Result<Vec<TubeExtrema<R>>> =
        worker_pool().install(|| samples.times.par_iter().map(per_time).collect());
    let merged = merged?;
    // Deterministic reduce: pick extrema with ties broken by time index.
    let mut global = None::<TubeExtrema<R>>;
    for ext in merged {
        global = Some(match global {
            None => ext,
            Some(mut acc) => {
                if ext.m_nc > acc.m_nc {
                    acc.m_nc = ext.m_nc;
                    acc.arg_m_nc = ext.arg_m_nc;
                }
                if ext.m_c > acc.m_c {
                    acc.m_c = ext.m_c;
                    acc.arg_m_c = ext.arg_m_c;
                }
                if ext.l_f > acc.l_f {
                    acc.l_f = ext.l_f;
                    acc.arg_l_f = ext.arg_l_f;
                }
                if ext.lambda_m < acc.lambda_m {
                    acc.lambda_m = ext.lambda_m;
                    acc.arg_lambda_m = ext.arg_lambda_m;
                }
                acc
            }
        });
    }
    let global = global.expect("at least one time sample");

    // Local refinement from the grid argmax/argmin; monotone accept keeps
    // refined estimates at or above the raw grid sup.
    let delta = inputs.delta;
    let lookup = |idx: usize| -> (R, PrimalDual<R>) {
        (reference.grid.time(idx), reference.points[idx].clone())
    };
    let (t_nc, z_nc) = lookup(global.arg_m_nc.0);
    let m_nc = refine_max(
        |u| {
            let x = &z_nc.x + u;
            let h: Vec<DMatrix<R>> =
                (0..problem.m()).map(|i| problem.hess_nonconvex_i(&x, t_nc, i)).collect();
            bilinear_norm(&h)
        },
        &global.arg_m_nc.1,
        delta,
    )
    .max(global.m_nc);
    let (t_c, z_c) = lookup(global.arg_m_c.0);
    let m_c = refine_max(
        |u| {
            let x = &z_c.x + u;
            let h: Vec<DMatrix<R>> =
                (0..problem.m()).map(|i| problem.hess_convex_i(&x, t_c, i)).collect();
            bilinear_norm(&h)
        },
        &global.arg_m_c.1,
        delta,
    )
    .max(global.m_c);
    let (t_lf, z_lf) = lookup(global.arg_l_f.0);
    let l_f = refine_max(
        |u| spectral_norm(&problem.jac(&(&z_lf.x + u), t_lf)),
        &global.arg_l_f.1,
        delta,
    )
    .max(global.l_f);
    let (t_lm, z_lm) = lookup(global.arg_lambda_m.0);
    let lambda_m = -refine_max(
        |u| {
            let (h_l, h_fc) = match averaged_hessians(problem, &z_lm, t_lm, u, nodes) {
                Ok(v) => v,
                Err(_) => return -R::max_value().unwrap(),
            };
            let mut combined = h_l;
            for (i, h) in h_fc.iter().enumerate() {
                combined += h * (z_lm.lambda[i] * real::<R>(0.5));
            }
            -sym_extreme_eigs(&combined).0
        },
        &global.arg_lambda_m.1,
        delta,
    )
    .min(global.lambda_m);

    let cap_d = eta.sqrt() * l_f + m_c * sup_lambda_norm;
    Ok(Constants {
        sigma_eta,
        m_lambda,
        m_nc,
        m_c,
        l_f,
        cap_d,
        lambda_m,
        sup_lambda_norm,
        eta,
        meta: SamplingMeta {
            estimate_kind: "sampled-estimate".into(),
            delta: as_f64(inputs.delta),
            times_sampled: samples.times.len(),
            dir_count: inputs.dir_count,
            radius_count: inputs.radius_count,
            quadrature_nodes: inputs.quadrature_nodes,
            seed: inputs.seed,
            inflation: as_f64(inputs.inflation),
            inflated: false,
        },
    })
}

/// The contraction factors of the one-step analysis.
#[derive(Clone, Copy, Debug)]
pub struct RhoKappa<R: Scalar> {
    pub rho_p: R,
    pub rho: R,
    pub kappa: R,
    /// sup over the tube of ‖ηεI − H̄_L(u,t)‖ (reused by callers).
    pub sup_eta_eps_gap: R,
}

/// Evaluates ρ^(P), ρ and κ over the sampled tube, using the supplied
/// constants (raw or inflated) for the scalar terms.
pub fn rho_kappa<R: Scalar>(
    problem: &ProblemOracle<R>,
    reference: &Trajectory<R>,
    inputs: &CertificateInputs<R>,
    constants: &Constants<R>,
    alpha: R,
    eta: R,
    epsilon: R,
) -> Result<RhoKappa<R>> {
    inputs.validate()?;
    if alpha <= R::zero() || eta <= R::zero() || epsilon <= R::zero() {
        return Err(Error::InvalidParameters("alpha, eta, epsilon must be positive".into()));
    }
    let shrink = R::one() - eta * alpha * epsilon;
    if shrink <= R::zero() {
        return Err(Error::InvalidParameters("need eta * alpha * epsilon < 1".into()));
    }
    let samples = tube_samples(reference, inputs, problem.n());
    let nodes = inputs.quadrature_nodes;
    let n = problem.n();

    let eval_point = |z_star: &PrimalDual<R>, t: R, u: &DVector<R>| -> Result<(R, R)> {
        let (h_l, h_fc) = averaged_hessians(problem, z_star, t, u, nodes)?;
        let step = DMatrix::<R>::identity(n, n) - &h_l * alpha;
        let mut mat = &step * &step;
        for (i, h) in h_fc.iter().enumerate() {
            mat -= h * (alpha * shrink * z_star.lambda[i]);
        }
        let mat = (mat.clone() + mat.transpose()) * real::<R>(0.5);
        let rho_p = sym_spectral_norm(&mat);
        let mut gap = DMatrix::<R>::identity(n, n) * (eta * epsilon);
        gap -= &h_l;
        let gap = sym_spectral_norm(&gap);
        Ok((rho_p, gap))
    };

    let per_time = |entry: &(usize, R, PrimalDual<R>)| -> Result<(R, R)> {
        let (_, t, z_star) = entry;
        let zero_u = DVector::<R>::zeros(n);
        let (mut rho_p, mut gap) = eval_point(z_star, *t, &zero_u)?;
        for r in &samples.radii {
            for d in &samples.dirs {
                let u = d * *r;
                let (p, g) = eval_point(z_star, *t, &u)?;
                rho_p = rho_p.max(p);
                gap = gap.max(g);
            }
        }
        Ok((rho_p, gap))
    };

    let merged: Result<Vec<(R, R)>> =
        worker_pool().install(|| samples.times.par_iter().map(per_time).collect());
    let (rho_p, sup_gap) = merged?
        .into_iter()
        .fold((R::zero(), R::zero()), |(a, b), (p, g)| (a.max(p), b.max(g)));

    let sqrt_eta = eta.sqrt();
    let rho_sq = rho_p.max(shrink * shrink)
        + alpha * shrink * sqrt_eta * inputs.delta * constants.m_nc * real::<R>(0.5)
        + alpha
            * alpha
            * (real::<R>(2.0) * sup_gap * constants.cap_d + constants.cap_d * constants.cap_d);
    let rho = rho_sq.sqrt();
    let kappa = R::one().max(shrink / rho).max(sqrt_eta * alpha * constants.l_f / rho);
    Ok(RhoKappa { rho_p, rho, kappa, sup_eta_eps_gap: sup_gap })
}

/// Discrete-time feasibility margins.
#[derive(Clone, Copy, Debug)]
pub struct FeasibilityDiscrete<R: Scalar> {
    /// (1−ρ)δ − κ√η αε M_λ − σ_η Δ_T; positive means the running condition
    /// holds.
    pub margin: R,
    pub feasible: bool,
    /// Same expression without the σ_η Δ_T term (the feasible-parameter
    /// predicate, independent of the sampling interval).
    pub margin_def34: R,
    pub feasible_def34: bool,
}

pub fn feasibility_discrete<R: Scalar>(
    rk: &RhoKappa<R>,
    delta: R,
    alpha: R,
    eta: R,
    epsilon: R,
    sigma_eta: R,
    delta_t: R,
    m_lambda: R,
) -> FeasibilityDiscrete<R> {
    let reg = rk.kappa * eta.sqrt() * alpha * epsilon * m_lambda;
    let margin_def34 = (R::one() - rk.rho) * delta - reg;
    let margin = margin_def34 - sigma_eta * delta_t;
    FeasibilityDiscrete {
        margin,
        feasible: margin > R::zero(),
        margin_def34,
        feasible_def34: margin_def34 > R::zero(),
    }
}

/// Discrete tracking-error bounds: the eventual bound plus the geometric
/// transient from z0.
#[derive(Clone, Copy, Debug)]
pub struct DiscreteBounds<R: Scalar> {
    pub eventual: R,
    rho: R,
    z0_error: R,
    bracket: R,
}

impl<R: Scalar> DiscreteBounds<R> {
    /// Bound at slot τ ≥ 1.
    pub fn per_step(&self, tau: usize) -> R {
        self.eventual + self.rho.powi(tau as i32) * (self.z0_error - self.bracket)
    }
}

pub fn bounds_discrete<R: Scalar>(
    rk: &RhoKappa<R>,
    delta: R,
    alpha: R,
    eta: R,
    epsilon: R,
    sigma_eta: R,
    delta_t: R,
    m_lambda: R,
    z0_error: R,
) -> Result<DiscreteBounds<R>> {
    let feas = feasibility_discrete(rk, delta, alpha, eta, epsilon, sigma_eta, delta_t, m_lambda);
    if !feas.feasible {
        return Err(Error::BoundNotApplicable(format!(
            "feasibility margin is {:e}",
            as_f64(feas.margin)
        )));
    }
    if z0_error > delta {
        return Err(Error::BoundNotApplicable(
            "initial error exceeds the contraction radius delta".into(),
        ));
    }
    let reg = rk.kappa * eta.sqrt() * alpha * epsilon * m_lambda;
    let one_minus_rho = R::one() - rk.rho;
    let eventual = (rk.rho * sigma_eta * delta_t + reg) / one_minus_rho;
    let bracket = (sigma_eta * delta_t + reg) / one_minus_rho;
    Ok(DiscreteBounds { eventual, rho: rk.rho, z0_error, bracket })
}

/// Continuous-time rate, margin, and bound curve.
#[derive(Clone, Copy, Debug)]
pub struct ContinuousCertificate<R: Scalar> {
    /// γ = min{Λ_m(δ), ηε} − (√η/4)δ M_nc(δ).
    pub gamma: R,
    /// δγ − √η ε M_λ − β⁻¹σ_η; positive means the tracking condition holds.
    pub margin: R,
    /// (β⁻¹σ_η + √η ε M_λ)/γ, defined when γ > 0.
    pub eventual: Option<R>,
    beta: R,
    delta: R,
}

impl<R: Scalar> ContinuousCertificate<R> {
    /// The bound curve eventual + e^{−βγt}(z0_error − eventual); requires a
    /// positive margin and z0_error < δ.
    pub fn curve(&self, t: R, z0_error: R) -> Result<R> {
        let eventual = self.eventual.ok_or_else(|| {
            Error::BoundNotApplicable("gamma is not positive".into())
        })?;
        if self.margin <= R::zero() {
            return Err(Error::BoundNotApplicable("continuous margin is not positive".into()));
        }
        if z0_error >= self.delta {
            return Err(Error::BoundNotApplicable(
                "initial error exceeds the contraction radius delta".into(),
            ));
        }
        Ok(eventual + (-self.beta * self.gamma * t).exp() * (z0_error - eventual))
    }
}

pub fn gamma_and_continuous<R: Scalar>(
    constants: &Constants<R>,
    delta: R,
    beta: R,
    eta: R,
    epsilon: R,
) -> ContinuousCertificate<R> {
    let gamma = constants.lambda_m.min(eta * epsilon)
        - eta.sqrt() * real::<R>(0.25) * delta * constants.m_nc;
    let reg = eta.sqrt() * epsilon * constants.m_lambda;
    let margin = delta * gamma - reg - constants.sigma_eta / beta;
    let eventual = if gamma > R::zero() {
        Some((constants.sigma_eta / beta + reg) / gamma)
    } else {
        None
    };
    ContinuousCertificate { gamma, margin, eventual, beta, delta }
}

/// Isolation margin Λ_m(δ) − (√η/2)δ M_nc(δ); positive means no other KKT
/// point with a distinct primal part lies in the η-ball of radius δ.
pub fn isolation_margin<R: Scalar>(constants: &Constants<R>, delta: R, eta: R) -> R {
    constants.lambda_m - eta.sqrt() * real::<R>(0.5) * delta * constants.m_nc
}

/// The sufficient clause of the isolation theorem: a positive continuous
/// margin at some δ ≤ 2η^{−1/2}M_λ already certifies isolation.
pub fn isolation_via_tracking<R: Scalar>(
    margin_continuous: R,
    delta: R,
    eta: R,
    m_lambda: R,
) -> bool {
    margin_continuous > R::zero() && delta <= real::<R>(2.0) * m_lambda / eta.sqrt()
}

/// Pairwise isolation of two KKT trajectories.
#[derive(Clone, Debug)]
pub struct PairwiseIsolation<R: Scalar> {
    pub margins: [R; 2],
    /// min over shared indices of ‖z*₍₁₎ − z*₍₂₎‖_η.
    pub min_separation: R,
    pub separation_required: R,
    /// Both margins positive and the measured separation exceeds δ₁ + δ₂.
    pub separated: bool,
}

pub fn isolation_pairwise<R: Scalar>(
    c1: &Constants<R>,
    delta1: R,
    traj1: &Trajectory<R>,
    c2: &Constants<R>,
    delta2: R,
    traj2: &Trajectory<R>,
    eta: R,
) -> Result<PairwiseIsolation<R>> {
    if traj1.points.len() != traj2.points.len() {
        return Err(Error::DimensionMismatch("trajectories have different lengths".into()));
    }
    let norm = EtaNorm::new(eta)?;
    let mut min_separation = R::max_value().unwrap();
    for (a, b) in traj1.points.iter().zip(&traj2.points) {
        min_separation = min_separation.min(norm.dist(a, b));
    }
    let margins = [isolation_margin(c1, delta1, eta), isolation_margin(c2, delta2, eta)];
    let required = delta1 + delta2;
    Ok(PairwiseIsolation {
        margins,
        min_separation,
        separation_required: required,
        separated: margins[0] > R::zero()
            && margins[1] > R::zero()
            && min_separation > required,
    })
}

/// Parameter witness from the feasible-parameter existence argument:
/// η₀ = (2Λ_m/(δM_nc))², ε₀ = Λ_m/η₀, and α found by halving until the
/// feasibility predicate turns positive.
pub fn feasible_witness<R: Scalar>(
    problem: &ProblemOracle<R>,
    reference: &Trajectory<R>,
    inputs: &CertificateInputs<R>,
    constants: &Constants<R>,
) -> Result<Option<(R, R, R)>> {
    if constants.lambda_m <= R::zero() || constants.m_nc <= R::zero() {
        return Err(Error::InvalidParameters(
            "witness construction needs Lambda_m > 0 and M_nc > 0".into(),
        ));
    }
    let eta0 = (real::<R>(2.0) * constants.lambda_m / (inputs.delta * constants.m_nc)).powi(2);
    let eps0 = constants.lambda_m / eta0;
    let mut alpha = R::one();
    for _ in 0..60 {
        if eta0 * alpha * eps0 < R::one() {
            let rk = rho_kappa(problem, reference, inputs, constants, alpha, eta0, eps0)?;
            let reg = rk.kappa * eta0.sqrt() * alpha * eps0 * constants.m_lambda;
            let margin = (R::one() - rk.rho) * inputs.delta - reg;
            if margin > R::zero() {
                return Ok(Some((alpha, eta0, eps0)));
            }
        }
        alpha *= real::<R>(0.5);
    }
    Ok(None)
}

/// Flat serialized form of [`Constants`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantsJson {
    pub sigma_eta: f64,
    pub m_lambda: f64,
    pub m_nc: f64,
    pub m_c: f64,
    pub l_f: f64,
    pub cap_d: f64,
    pub lambda_m: f64,
    pub sup_lambda_norm: f64,
}

impl<R: Scalar> From<&Constants<R>> for ConstantsJson {
    fn from(c: &Constants<R>) -> Self {
        Self {
            sigma_eta: as_f64(c.sigma_eta),
            m_lambda: as_f64(c.m_lambda),
            m_nc: as_f64(c.m_nc),
            m_c: as_f64(c.m_c),
            l_f: as_f64(c.l_f),
            cap_d: as_f64(c.cap_d),
            lambda_m: as_f64(c.lambda_m),
            sup_lambda_norm: as_f64(c.sup_lambda_norm),
        }
    }
}

/// Full certificate for one parameter tuple, serializable to JSON. The
/// contraction factors and margins are computed from the inflated
/// constants; both raw and inflated constants are reported.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub constants: ConstantsJson,
    pub constants_inflated: ConstantsJson,
    pub rho_p: f64,
    pub rho: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub margin_discrete: f64,
    pub feasible_discrete: bool,
    pub margin_def34: f64,
    pub margin_continuous: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eventual_discrete: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eventual_continuous: Option<f64>,
    pub isolation_margin: f64,
    pub isolation_via_tracking: bool,
    pub delta: f64,
    pub alpha: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub delta_t: f64,
    pub metadata: SamplingMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tuner: Option<crate::tuner::TunerJson>,
}

/// One-call evaluation of the full report for a parameter tuple.
#[allow(clippy::too_many_arguments)]
pub fn certify<R: Scalar>(
    problem: &ProblemOracle<R>,
    reference: &Trajectory<R>,
    inputs: &CertificateInputs<R>,
    alpha: R,
    eta: R,
    epsilon: R,
    beta: R,
    lambda_prior: &DVector<R>,
) -> Result<CertificateReport> {
    let raw = constants(problem, reference, inputs, eta, lambda_prior)?;
    let inflated = raw.inflated();
    let rk = rho_kappa(problem, reference, inputs, &inflated, alpha, eta, epsilon)?;
    let delta_t = reference.grid.delta();
    let feas = feasibility_discrete(
        &rk,
        inputs.delta,
        alpha,
        eta,
        epsilon,
        inflated.sigma_eta,
        delta_t,
        inflated.m_lambda,
    );
    let eventual_discrete = bounds_discrete(
        &rk,
        inputs.delta,
        alpha,
        eta,
        epsilon,
        inflated.sigma_eta,
        delta_t,
        inflated.m_lambda,
        R::zero(),
    )
    .ok()
    .map(|b| as_f64(b.eventual));
    let cont = gamma_and_continuous(&inflated, inputs.delta, beta, eta, epsilon);
    let iso = isolation_margin(&inflated, inputs.delta, eta);
    Ok(CertificateReport {
        constants: (&raw).into(),
        constants_inflated: (&inflated).into(),
        rho_p: as_f64(rk.rho_p),
        rho: as_f64(rk.rho),
        kappa: as_f64(rk.kappa),
        gamma: as_f64(cont.gamma),
        margin_discrete: as_f64(feas.margin),
        feasible_discrete: feas.feasible,
        margin_def34: as_f64(feas.margin_def34),
        margin_continuous: as_f64(cont.margin),
        eventual_discrete,
        eventual_continuous: cont.eventual.map(as_f64),
        isolation_margin: as_f64(iso),
        isolation_via_tracking: isolation_via_tracking(cont.margin, inputs.delta, eta, inflated.m_lambda),
        delta: as_f64(inputs.delta),
        alpha: as_f64(alpha),
        eta: as_f64(eta),
        epsilon: as_f64(epsilon),
        beta: as_f64(beta),
        delta_t: as_f64(delta_t),
        metadata: inflated.meta.clone(),
        tuner: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use crate::problem::{ProblemOracle, TimeGrid};

    fn scalar_quadratic(q: f64) -> ProblemOracle<f64> {
        ProblemOracle::builder(1, 0, 1.0)
            .cost(move |x, _| 0.5 * q * x[0] * x[0])
            .grad_cost(move |x, _| dvector![q * x[0]])
            .hess_cost(move |_, _| DMatrix::from_element(1, 1, q))
            .build()
            .unwrap()
    }

    fn static_reference(n_points: usize) -> Trajectory<f64> {
        let grid = TimeGrid::new(1.0, n_points - 1).unwrap();
        let z = PrimalDual::new(dvector![0.0], dvector![]).unwrap();
        Trajectory::new(grid, vec![z; n_points])
    }

    #[test]
    fn averaged_hessian_constant_and_weighted_cases() {
        // Constant Hessian Q: H̄ = Q for any u.
        let oracle = scalar_quadratic(2.5);
        let z = PrimalDual::new(dvector![0.3], dvector![]).unwrap();
        let (h, _) = averaged_hessians(&oracle, &z, 0.0, &dvector![0.7], 8).unwrap();
        assert_relative_eq!(h[(0, 0)], 2.5, epsilon = 1e-13);

        // Quadratic f^c with Hessian P: the 2(1−θ) weight integrates to 1.
        let oracle = ProblemOracle::builder(1, 1, 1.0)
            .cost(|_, _| 0.0)
            .grad_cost(|_, _| dvector![0.0])
            .hess_cost(|_, _| DMatrix::zeros(1, 1))
            .f_convex(|x, _| dvector![x[0] * x[0]])
            .jac_convex(|x, _| DMatrix::from_element(1, 1, 2.0 * x[0]))
            .hess_convex_i(|_, _, _| DMatrix::from_element(1, 1, 2.0))
            .build()
            .unwrap();
        let z = PrimalDual::new(dvector![0.0], dvector![1.0]).unwrap();
        let (_, h_fc) = averaged_hessians(&oracle, &z, 0.0, &dvector![1.0], 8).unwrap();
        assert_relative_eq!(h_fc[0][(0, 0)], 2.0, epsilon = 1e-13);
    }

    #[test]
    fn averaged_hessian_cubic_cost_hand_integral() {
        // c = x³ at x* = 0, u = 1: H̄ = ∫₀¹ 6θ dθ = 3.
        let oracle = ProblemOracle::builder(1, 0, 1.0)
            .cost(|x, _| x[0].powi(3))
            .grad_cost(|x, _| dvector![3.0 * x[0] * x[0]])
            .hess_cost(|x, _| DMatrix::from_element(1, 1, 6.0 * x[0]))
            .build()
            .unwrap();
        let z = PrimalDual::new(dvector![0.0], dvector![]).unwrap();
        let (h, _) = averaged_hessians(&oracle, &z, 0.0, &dvector![1.0], 8).unwrap();
        assert_relative_eq!(h[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rho_kappa_hand_example() {
        // Scalar quadratic, q = 1, m = 0, α = 0.1, η = 1, ε = 0.5:
        // ρ^(P) = 0.81, ρ = sqrt(max{0.81, 0.9025}) = 0.95, κ = 1.
        let oracle = scalar_quadratic(1.0);
        let reference = static_reference(11);
        let inputs = CertificateInputs::new(0.5, 3);
        let consts = constants(&oracle, &reference, &inputs, 1.0, &dvector![]).unwrap();
        assert_eq!(consts.m_nc, 0.0);
        assert_eq!(consts.l_f, 0.0);
        assert_relative_eq!(consts.lambda_m, 1.0, epsilon = 1e-12);
        let rk = rho_kappa(&oracle, &reference, &inputs, &consts, 0.1, 1.0, 0.5).unwrap();
        assert_relative_eq!(rk.rho_p, 0.81, epsilon = 1e-12);
        assert_relative_eq!(rk.rho, 0.95, epsilon = 1e-12);
        assert_relative_eq!(rk.kappa, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kappa_limits() {
        let oracle = scalar_quadratic(1.0);
        let reference = static_reference(11);
        let inputs = CertificateInputs::new(0.5, 3);
        let consts = constants(&oracle, &reference, &inputs, 1.0, &dvector![]).unwrap();
        let rk = rho_kappa(&oracle, &reference, &inputs, &consts, 1e-6, 1.0, 0.5).unwrap();
        assert!((rk.kappa - 1.0).abs() <= 1e-4);
        for alpha in [1e-4, 1e-2, 0.1, 0.5] {
            let rk = rho_kappa(&oracle, &reference, &inputs, &consts, alpha, 1.0, 0.5).unwrap();
            assert!(rk.kappa >= 1.0 && rk.kappa <= 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn invalid_regularization_product_rejected() {
        let oracle = scalar_quadratic(1.0);
        let reference = static_reference(5);
        let inputs = CertificateInputs::new(0.5, 3);
        let consts = constants(&oracle, &reference, &inputs, 1.0, &dvector![]).unwrap();
        assert!(rho_kappa(&oracle, &reference, &inputs, &consts, 1.0, 2.0, 0.6).is_err());
    }

    #[test]
    fn feasibility_and_bounds_direct_evaluation() {
        let rk = RhoKappa { rho_p: 0.81, rho: 0.9, kappa: 1.0, sup_eta_eps_gap: 0.0 };
        // margin = (1−0.9)·1 − 0.01 − 0.05 = 0.04.
        let f = feasibility_discrete(&rk, 1.0, 0.02, 1.0, 0.5, 0.05, 1.0, 1.0);
        assert_relative_eq!(f.margin, 0.04, epsilon = 1e-12);
        assert!(f.feasible);

        // ρ ≥ 1 can never be feasible.
        let bad = RhoKappa { rho_p: 1.0, rho: 1.01, kappa: 1.0, sup_eta_eps_gap: 0.0 };
        let f = feasibility_discrete(&bad, 1.0, 0.02, 1.0, 0.5, 0.0, 1.0, 0.0);
        assert!(!f.feasible && f.margin < 0.0);

        // Static regularization-free case: margin = (1−ρ)δ.
        let f = feasibility_discrete(&rk, 1.0, 0.02, 1.0, 0.5, 0.0, 1.0, 0.0);
        assert_relative_eq!(f.margin, 0.1, epsilon = 1e-12);

        // eventual = (0.95·0.01 + 0.001)/0.05 = 0.21.
        let rk = RhoKappa { rho_p: 0.9, rho: 0.95, kappa: 1.0, sup_eta_eps_gap: 0.0 };
        let b = bounds_discrete(&rk, 1.0, 0.002, 1.0, 0.5, 0.01, 1.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(b.eventual, 0.21, epsilon = 1e-12);
        // Geometric decay when σ = M_λ = 0.
        let b = bounds_discrete(&rk, 1.0, 0.002, 1.0, 0.5, 0.0, 1.0, 0.0, 0.5).unwrap();
        assert_relative_eq!(b.eventual, 0.0);
        assert_relative_eq!(b.per_step(3), 0.95f64.powi(3) * 0.5, epsilon = 1e-12);
        // per_step(∞) → eventual.
        let b = bounds_discrete(&rk, 1.0, 0.002, 1.0, 0.5, 0.01, 1.0, 1.0, 0.5).unwrap();
        assert!((b.per_step(100_000) - b.eventual).abs() < 1e-12);
        // Precondition violations yield errors, not numbers.
        assert!(bounds_discrete(&rk, 0.1, 0.002, 1.0, 0.5, 0.01, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn gamma_and_isolation_direct_evaluation() {
        let c = Constants {
            sigma_eta: 0.0,
            m_lambda: 0.0,
            m_nc: 0.4 / 0.5, // (√η/4)δM_nc = 0.1 at η = 1, δ = 0.5
            m_c: 0.0,
            l_f: 0.0,
            cap_d: 0.0,
            lambda_m: 1.0,
            sup_lambda_norm: 0.0,
            eta: 1.0,
            meta: SamplingMeta {
                estimate_kind: "sampled-estimate".into(),
                delta: 0.5,
                times_sampled: 1,
                dir_count: 1,
                radius_count: 1,
                quadrature_nodes: 2,
                seed: 0,
                inflation: 1.1,
                inflated: false,
            },
        };
        let cont = gamma_and_continuous(&c, 0.5, 1.0, 1.0, 0.5);
        assert_relative_eq!(cont.gamma, 0.4, epsilon = 1e-12);
        // σ = M_λ = 0: eventual 0 and pure exponential decay.
        assert_relative_eq!(cont.eventual.unwrap(), 0.0);
        let v = cont.curve(2.0, 0.3).unwrap();
        assert_relative_eq!(v, (-0.8f64).exp() * 0.3, epsilon = 1e-12);

        // Isolation margin 1 − 0.5·0.5·0.8 = 0.8 at η = 1, δ = 0.5.
        assert_relative_eq!(isolation_margin(&c, 0.5, 1.0), 0.8, epsilon = 1e-12);
        // Convex problem: margin equals Λ_m.
        let mut convex = c.clone();
        convex.m_nc = 0.0;
        assert_relative_eq!(isolation_margin(&convex, 0.5, 1.0), 1.0);
    }

    #[test]
    fn inflation_moves_constants_conservatively() {
        let oracle = scalar_quadratic(1.0);
        let reference = static_reference(5);
        let inputs = CertificateInputs::new(0.5, 3);
        let c = constants(&oracle, &reference, &inputs, 1.0, &dvector![]).unwrap();
        let infl = c.inflated();
        assert!(infl.lambda_m <= c.lambda_m);
        assert!(infl.m_nc >= c.m_nc && infl.l_f >= c.l_f && infl.sigma_eta >= c.sigma_eta);
        assert!(infl.meta.inflated);
    }
}
