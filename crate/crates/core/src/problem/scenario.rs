//! Built-in scenarios: a quadratic tracking problem with one affine
//! constraint (closed-form KKT trajectory), a keep-out-disk problem with a
//! nonconvex constraint (optionally in a twin-well configuration), and a
//! distribution-feeder surrogate with affine voltage constraints and
//! capped-disk inverter sets.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primal_dual::PrimalDual;
use crate::problem::profiles::Profiles;
use crate::problem::ProblemOracle;
use crate::scalar::{real, Scalar};
use crate::sets::{ConvexSet, TimeFn};

/// A closed-form KKT trajectory t ↦ z*(t).
pub type KktTrajectoryFn<R> = Arc<dyn Fn(R) -> PrimalDual<R> + Send + Sync>;

/// A built scenario: the oracle plus any closed-form KKT branches.
#[derive(Clone)]
pub struct Scenario<R: Scalar> {
    pub name: &'static str,
    pub oracle: ProblemOracle<R>,
    /// Closed-form KKT trajectories, when the configuration admits them.
    pub kkt_branches: Vec<KktTrajectoryFn<R>>,
}

impl<R: Scalar> Scenario<R> {
    /// The tracked closed-form trajectory, if one exists.
    pub fn kkt_closed_form(&self) -> Option<&KktTrajectoryFn<R>> {
        self.kkt_branches.first()
    }
}

/// Scenario selection plus per-scenario parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ScenarioConfig {
    QuadraticTracking(QuadraticTrackingConfig),
    KeepoutDisk(KeepoutDiskConfig),
    FeederSurrogate(FeederConfig),
}

impl ScenarioConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioConfig::QuadraticTracking(_) => "quadratic-tracking",
            ScenarioConfig::KeepoutDisk(_) => "keepout-disk",
            ScenarioConfig::FeederSurrogate(_) => "feeder-surrogate",
        }
    }
}

/// Horizon/slot/seed context supplied by the caller when a scenario is
/// instantiated.
#[derive(Clone, Debug, Default)]
pub struct BuildContext {
    /// Number of time slots T the scenario will be run over (used to
    /// validate profile lengths; 0 when unknown).
    pub slots: usize,
    /// Horizon S; scenario-specific default when absent.
    pub horizon: Option<f64>,
    /// Seed for any sampled structure (feeder topology, synthetic
    /// profiles). Mandatory where sampling occurs; never defaulted.
    pub seed: Option<u64>,
}

/// c(x,t) = ½(x−b(t))ᵀQ(x−b(t)), one affine constraint aᵀx ≤ g(t) carried
/// as f^c (f^nc ≡ 0), X a fixed box. Defaults reproduce the scalar
/// instance b(t) = t, a = 1, g = 0.5, Q = 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticTrackingConfig {
    pub n: usize,
    /// Diagonal of Q; length n, or length 1 to broadcast.
    pub q_diag: Vec<f64>,
    pub b0: Vec<f64>,
    pub velocity: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub frequency: f64,
    pub a: Vec<f64>,
    pub g0: f64,
    pub g_velocity: f64,
    pub g_amplitude: f64,
    pub g_frequency: f64,
    pub box_halfwidth: f64,
}

impl Default for QuadraticTrackingConfig {
    fn default() -> Self {
        Self {
            n: 1,
            q_diag: vec![1.0],
            b0: vec![0.0],
            velocity: vec![1.0],
            amplitude: vec![0.0],
            frequency: 1.0,
            a: vec![1.0],
            g0: 0.5,
            g_velocity: 0.0,
            g_amplitude: 0.0,
            g_frequency: 1.0,
            box_halfwidth: 10.0,
        }
    }
}

/// Quadratic (or twin-well) cost with the keep-out constraint
/// f^nc(x,t) = r² − ‖x − a(t)‖² (concave, hence nonconvex), f^c absent,
/// X = all of R^n.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeepoutDiskConfig {
    pub n: usize,
    /// Cost curvature.
    pub q: f64,
    /// Cost target b (static).
    pub target: Vec<f64>,
    /// Disk center at t = 0.
    pub center0: Vec<f64>,
    /// Linear drift of the disk center.
    pub drift: Vec<f64>,
    /// Circular wobble of the center in the first two coordinates.
    pub orbit_radius: f64,
    pub orbit_frequency: f64,
    /// Keep-out radius.
    pub radius: f64,
    /// Twin-well configuration: double-well cost along x₁ with the disk
    /// sitting between the wells (both wells are KKT points with λ* = 0).
    pub twin_wells: bool,
    /// Half-distance between the wells; must exceed `radius`.
    pub well_halfwidth: f64,
}

impl Default for KeepoutDiskConfig {
    fn default() -> Self {
        Self {
            n: 2,
            q: 1.0,
            target: vec![0.0, 0.0],
            center0: vec![0.5, 0.0],
            drift: vec![0.0, 0.0],
            orbit_radius: 0.0,
            orbit_frequency: 1.0,
            radius: 1.0,
            twin_wells: false,
            well_halfwidth: 1.5,
        }
    }
}

/// Inverter dispatch on a radial feeder with an affine voltage surrogate
/// V(p,q,t) = V0 + R·p + X·q − M_L·ℓ(t); voltage band constraints are f^c
/// and each inverter's operating region is a capped disk with
/// pmax = p^PV_i(t).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeederConfig {
    pub inverters: usize,
    /// Monitored buses; 0 means "same as inverters".
    pub buses: usize,
    pub c_p: f64,
    pub c_q: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v0: f64,
    /// Apparent-power ratings; empty selects the built-in pattern
    /// (third inverter 1.0, last 3.5, rest 2.0).
    pub s_max: Vec<f64>,
    /// Aggregate impedance scale; per-edge resistances are drawn around
    /// `impedance_scale / buses` so the no-injection voltage drop is
    /// roughly size-independent.
    pub impedance_scale: f64,
    /// Reactive load fraction: q^L = load_reactive_ratio · p^L.
    pub load_reactive_ratio: f64,
    /// Profile CSV path; when absent, synthetic day profiles are generated
    /// from the build seed.
    pub profile_csv: Option<PathBuf>,
    /// Rows for synthetic profiles (0 → max(slots, 96)).
    pub profile_rows: usize,
}

impl Default for FeederConfig {
    fn default() -> Self {
        Self {
            inverters: 18,
            buses: 0,
            c_p: 3.0,
            c_q: 1.0,
            v_min: 0.95,
            v_max: 1.05,
            v0: 1.0,
            s_max: Vec::new(),
            impedance_scale: 0.02,
            load_reactive_ratio: 0.5,
            profile_csv: None,
            profile_rows: 0,
        }
    }
}

/// One-line descriptions of the built-in scenarios, for `scenarios`-style
/// listings.
pub fn list() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "quadratic-tracking",
            "quadratic cost tracking a moving target under one affine constraint; closed-form KKT trajectory",
        ),
        (
            "keepout-disk",
            "quadratic or twin-well cost with a moving keep-out disk (nonconvex constraint); closed form when the target sits inside the disk",
        ),
        (
            "feeder-surrogate",
            "inverter dispatch with an affine voltage surrogate, voltage band constraints and capped-disk sets; profiles from CSV or synthesized from the seed",
        ),
    ]
}

/// Builds a scenario by name with default parameters.
pub fn build_by_name<R: Scalar>(name: &str, ctx: &BuildContext) -> Result<Scenario<R>> {
    let cfg = match name {
        "quadratic-tracking" => ScenarioConfig::QuadraticTracking(Default::default()),
        "keepout-disk" => ScenarioConfig::KeepoutDisk(Default::default()),
        "feeder-surrogate" => ScenarioConfig::FeederSurrogate(Default::default()),
        other => return Err(Error::Scenario(format!("unknown scenario name {other:?}"))),
    };
    build(&cfg, ctx)
}

/// Builds the configured scenario.
pub fn build<R: Scalar>(cfg: &ScenarioConfig, ctx: &BuildContext) -> Result<Scenario<R>> {
    match cfg {
        ScenarioConfig::QuadraticTracking(c) => build_quadratic_tracking(c, ctx),
        ScenarioConfig::KeepoutDisk(c) => build_keepout_disk(c, ctx),
        ScenarioConfig::FeederSurrogate(c) => build_feeder(c, ctx),
    }
}

fn broadcast(v: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        len if len == n => Ok(v.to_vec()),
        len => Err(Error::Scenario(format!(
            "{what} has length {len}, expected {n} (or 1 to broadcast)"
        ))),
    }
}

fn vecr<R: Scalar>(v: &[f64]) -> DVector<R> {
    DVector::from_iterator(v.len(), v.iter().map(|x| real::<R>(*x)))
}

fn build_quadratic_tracking<R: Scalar>(
    cfg: &QuadraticTrackingConfig,
    ctx: &BuildContext,
) -> Result<Scenario<R>> {
    let n = cfg.n;
    if n == 0 {
        return Err(Error::Scenario("quadratic-tracking needs n >= 1".into()));
    }
    let horizon = ctx.horizon.unwrap_or(1.0);
    if horizon <= 0.0 {
        return Err(Error::Scenario("horizon must be positive".into()));
    }
    let q = broadcast(&cfg.q_diag, n, "q_diag")?;
    if q.iter().any(|&v| v <= 0.0) {
        return Err(Error::Scenario("Q must be positive definite".into()));
    }
    let b0 = broadcast(&cfg.b0, n, "b0")?;
    let vel = broadcast(&cfg.velocity, n, "velocity")?;
    let amp = broadcast(&cfg.amplitude, n, "amplitude")?;
    let a = broadcast(&cfg.a, n, "a")?;
    if cfg.box_halfwidth <= 0.0 {
        return Err(Error::Scenario("box_halfwidth must be positive".into()));
    }

    let freq = cfg.frequency;
    let b_of_t = {
        let (b0, vel, amp) = (b0.clone(), vel.clone(), amp.clone());
        move |t: f64| -> Vec<f64> {
            (0..n)
                .map(|i| b0[i] + vel[i] * t + amp[i] * (2.0 * std::f64::consts::PI * freq * t).sin())
                .collect()
        }
    };
    let (g0, gv, ga, gf) = (cfg.g0, cfg.g_velocity, cfg.g_amplitude, cfg.g_frequency);
    let g_of_t =
        move |t: f64| g0 + gv * t + ga * (2.0 * std::f64::consts::PI * gf * t).sin();

    let qr = vecr::<R>(&q);
    let ar = vecr::<R>(&a);
    let hw = real::<R>(cfg.box_halfwidth);

    let b_cb = Arc::new(b_of_t);
    let cost = {
        let qr = qr.clone();
        let b_cb = Arc::clone(&b_cb);
        move |x: &DVector<R>, t: R| {
            let b = vecr::<R>(&b_cb(crate::scalar::as_f64(t)));
            let d = x - b;
            let mut acc = R::zero();
            for i in 0..n {
                acc += qr[i] * d[i] * d[i];
            }
            acc * real::<R>(0.5)
        }
    };
    let grad = {
        let qr = qr.clone();
        let b_cb = Arc::clone(&b_cb);
        move |x: &DVector<R>, t: R| {
            let b = vecr::<R>(&b_cb(crate::scalar::as_f64(t)));
            DVector::from_fn(n, |i, _| qr[i] * (x[i] - b[i]))
        }
    };
    let f_c = {
        let ar = ar.clone();
        move |x: &DVector<R>, t: R| {
            let g = real::<R>(g_of_t(crate::scalar::as_f64(t)));
            DVector::from_vec(vec![ar.dot(x) - g])
        }
    };
    let jac_c = {
        let ar = ar.clone();
        move |_: &DVector<R>, _| DMatrix::from_fn(1, n, |_, j| ar[j])
    };
    let hess_cost = {
        let qr = qr.clone();
        move |_: &DVector<R>, _| DMatrix::from_diagonal(&qr)
    };

    let set = ConvexSet::fixed_box(
        DVector::from_element(n, -hw),
        DVector::from_element(n, hw),
    );

    let oracle = ProblemOracle::builder(n, 1, real::<R>(horizon))
        .cost(cost)
        .grad_cost(grad)
        .f_convex(f_c)
        .jac_convex(jac_c)
        .hess_cost(hess_cost)
        .hess_convex_i(move |_, _, _| DMatrix::zeros(n, n))
        .feasible_set(set)
        .build()?;

    // Closed-form KKT trajectory from the scalar-multiplier KKT system:
    // λ*(t) = max(0, (aᵀb(t) − g(t)) / (aᵀQ⁻¹a)), x*(t) = b(t) − λ* Q⁻¹a.
    let denom: f64 = (0..n).map(|i| a[i] * a[i] / q[i]).sum();
    if denom <= 0.0 {
        return Err(Error::Scenario("constraint normal a must be nonzero".into()));
    }
    let closed = {
        let b_cb = Arc::clone(&b_cb);
        let (a, q) = (a.clone(), q.clone());
        Arc::new(move |t: R| {
            let tf = crate::scalar::as_f64(t);
            let b = b_cb(tf);
            let mu: f64 = ((0..n).map(|i| a[i] * b[i]).sum::<f64>() - g_of_t(tf)) / denom;
            let lam = mu.max(0.0);
            let x: Vec<f64> = (0..n).map(|i| b[i] - lam * a[i] / q[i]).collect();
            PrimalDual {
                x: vecr::<R>(&x),
                lambda: DVector::from_vec(vec![real::<R>(lam)]),
            }
        }) as KktTrajectoryFn<R>
    };
    // The closed form assumes the box stays inactive; verify on a grid.
    let mut branches = vec![closed];
    for k in 0..=64 {
        let z = branches[0](real::<R>(horizon * k as f64 / 64.0));
        if z.x.iter().any(|v| v.abs() >= real::<R>(cfg.box_halfwidth)) {
            branches.clear();
            break;
        }
    }
    let _ = ctx;
    Ok(Scenario {
        name: "quadratic-tracking",
        oracle,
        kkt_branches: branches,
    })
}

fn build_keepout_disk<R: Scalar>(
    cfg: &KeepoutDiskConfig,
    ctx: &BuildContext,
) -> Result<Scenario<R>> {
    let n = cfg.n;
    if n < 2 {
        return Err(Error::Scenario("keepout-disk needs n >= 2".into()));
    }
    if cfg.q <= 0.0 || cfg.radius <= 0.0 {
        return Err(Error::Scenario("q and radius must be positive".into()));
    }
    if cfg.twin_wells && cfg.well_halfwidth <= cfg.radius {
        return Err(Error::Scenario(
            "twin wells must sit outside the disk: well_halfwidth > radius".into(),
        ));
    }
    let horizon = ctx.horizon.unwrap_or(1.0);
    if horizon <= 0.0 {
        return Err(Error::Scenario("horizon must be positive".into()));
    }
    let target = broadcast(&cfg.target, n, "target")?;
    let center0 = broadcast(&cfg.center0, n, "center0")?;
    let drift = broadcast(&cfg.drift, n, "drift")?;
    let (orbit, of) = (cfg.orbit_radius, cfg.orbit_frequency);

    let center = Arc::new(move |t: f64| -> Vec<f64> {
        let mut c: Vec<f64> = (0..n).map(|i| center0[i] + drift[i] * t).collect();
        let ang = 2.0 * std::f64::consts::PI * of * t;
        c[0] += orbit * ang.cos();
        c[1] += orbit * ang.sin();
        c
    });

    let r = cfg.radius;
    let q = cfg.q;
    let f_nc = {
        let center = Arc::clone(&center);
        move |x: &DVector<R>, t: R| {
            let a = vecr::<R>(&center(crate::scalar::as_f64(t)));
            let d = x - a;
            DVector::from_vec(vec![real::<R>(r * r) - d.norm_squared()])
        }
    };
    let jac_nc = {
        let center = Arc::clone(&center);
        move |x: &DVector<R>, t: R| {
            let a = vecr::<R>(&center(crate::scalar::as_f64(t)));
            let d = x - a;
            DMatrix::from_fn(1, n, |_, j| -(d[j] + d[j]))
        }
    };
    let hess_nc =
        move |_: &DVector<R>, _: R, _: usize| DMatrix::from_diagonal_element(n, n, real::<R>(-2.0));

    let builder = ProblemOracle::builder(n, 1, real::<R>(horizon));
    let oracle = if cfg.twin_wells {
        // c(x,t) = (q/4w²)((x₁−a₁(t))² − w²)² + Σ_{j≥2} (q/2)(x_j − a_j(t))²
        let w = cfg.well_halfwidth;
        let cost = {
            let center = Arc::clone(&center);
            move |x: &DVector<R>, t: R| {
                let c = center(crate::scalar::as_f64(t));
                let y = x[0] - real::<R>(c[0]);
                let w2 = real::<R>(w * w);
                let mut acc = real::<R>(q / (4.0 * w * w)) * (y * y - w2).powi(2);
                for j in 1..n {
                    let d = x[j] - real::<R>(c[j]);
                    acc += real::<R>(0.5 * q) * d * d;
                }
                acc
            }
        };
        let grad = {
            let center = Arc::clone(&center);
            move |x: &DVector<R>, t: R| {
                let c = center(crate::scalar::as_f64(t));
                let y = x[0] - real::<R>(c[0]);
                let w2 = real::<R>(w * w);
                DVector::from_fn(n, |j, _| {
                    if j == 0 {
                        real::<R>(q / (w * w)) * (y * y - w2) * y
                    } else {
                        real::<R>(q) * (x[j] - real::<R>(c[j]))
                    }
                })
            }
        };
        let hess = {
            let center = Arc::clone(&center);
            move |x: &DVector<R>, t: R| {
                let c = center(crate::scalar::as_f64(t));
                let y = x[0] - real::<R>(c[0]);
                let mut h = DMatrix::from_diagonal_element(n, n, real::<R>(q));
                h[(0, 0)] = real::<R>(q / (w * w)) * (real::<R>(3.0) * y * y - real::<R>(w * w));
                h
            }
        };
        builder
            .cost(cost)
            .grad_cost(grad)
            .hess_cost(hess)
            .f_nonconvex(f_nc)
            .jac_nonconvex(jac_nc)
            .hess_nonconvex_i(hess_nc)
            .build()?
    } else {
        let target_r = vecr::<R>(&target);
        let cost = {
            let target_r = target_r.clone();
            move |x: &DVector<R>, _t: R| (x - &target_r).norm_squared() * real::<R>(0.5 * q)
        };
        let grad = {
            let target_r = target_r.clone();
            move |x: &DVector<R>, _t: R| (x - &target_r) * real::<R>(q)
        };
        let hess = move |_: &DVector<R>, _: R| DMatrix::from_diagonal_element(n, n, real::<R>(q));
        builder
            .cost(cost)
            .grad_cost(grad)
            .hess_cost(hess)
            .f_nonconvex(f_nc)
            .jac_nonconvex(jac_nc)
            .hess_nonconvex_i(hess_nc)
            .build()?
    };

    let mut branches: Vec<KktTrajectoryFn<R>> = Vec::new();
    if cfg.twin_wells {
        let w = cfg.well_halfwidth;
        for side in [-1.0, 1.0] {
            let center = Arc::clone(&center);
            branches.push(Arc::new(move |t: R| {
                let mut c = center(crate::scalar::as_f64(t));
                c[0] += side * w;
                PrimalDual {
                    x: vecr::<R>(&c),
                    lambda: DVector::from_vec(vec![R::zero()]),
                }
            }));
        }
    } else {
        // Near-side boundary point: x* = a − r(a−b)/‖a−b‖, λ* = q(r−d)/(2r);
        // a KKT trajectory whenever the target stays strictly inside the disk.
        let mut valid = true;
        for k in 0..=64 {
            let t = horizon * k as f64 / 64.0;
            let c = center(t);
            let d: f64 = (0..n)
                .map(|i| (c[i] - target[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            if d >= 0.995 * r || d <= 1e-9 {
                valid = false;
                break;
            }
        }
        if valid {
            let center = Arc::clone(&center);
            let target = target.clone();
            branches.push(Arc::new(move |t: R| {
                let c = center(crate::scalar::as_f64(t));
                let diff: Vec<f64> = (0..n).map(|i| c[i] - target[i]).collect();
                let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                let x: Vec<f64> = (0..n).map(|i| c[i] - r * diff[i] / d).collect();
                let lam = q * (r - d) / (2.0 * r);
                PrimalDual {
                    x: vecr::<R>(&x),
                    lambda: DVector::from_vec(vec![real::<R>(lam)]),
                }
            }));
        }
    }

    Ok(Scenario {
        name: "keepout-disk",
        oracle,
        kkt_branches: branches,
    })
}

fn build_feeder<R: Scalar>(cfg: &FeederConfig, ctx: &BuildContext) -> Result<Scenario<R>> {
    let inv = cfg.inverters;
    if inv == 0 {
        return Err(Error::Scenario("feeder-surrogate needs inverters >= 1".into()));
    }
    let buses = if cfg.buses == 0 { inv } else { cfg.buses };
    if buses < inv {
        return Err(Error::Scenario("buses must be >= inverters".into()));
    }
    if cfg.v_min >= cfg.v_max {
        return Err(Error::Scenario("v_min must be below v_max".into()));
    }
    if cfg.c_p <= 0.0 || cfg.c_q <= 0.0 || cfg.impedance_scale <= 0.0 {
        return Err(Error::Scenario("cost weights and impedance scale must be positive".into()));
    }
    let s_max = if cfg.s_max.is_empty() {
        (0..inv)
            .map(|i| {
                if i == 2 {
                    1.0
                } else if i + 1 == inv && inv > 1 {
                    3.5
                } else {
                    2.0
                }
            })
            .collect::<Vec<_>>()
    } else {
        broadcast(&cfg.s_max, inv, "s_max")?
    };
    if s_max.iter().any(|&s| s <= 0.0) {
        return Err(Error::Scenario("ratings s_max must be positive".into()));
    }
    let seed = ctx.seed.ok_or_else(|| {
        Error::InvalidParameters("feeder-surrogate requires a seed (topology and profiles)".into())
    })?;

    let horizon = ctx.horizon.unwrap_or(ctx.slots.max(1) as f64);
    if horizon <= 0.0 {
        return Err(Error::Scenario("horizon must be positive".into()));
    }

    let profiles = match &cfg.profile_csv {
        Some(path) => {
            let p = Profiles::<R>::from_csv(path, buses, inv)?;
            if ctx.slots > 0 && p.rows() < ctx.slots {
                return Err(Error::Profile(format!(
                    "profile CSV has {} rows, need at least T = {}",
                    p.rows(),
                    ctx.slots
                )));
            }
            p
        }
        None => {
            let rows = if cfg.profile_rows > 0 {
                cfg.profile_rows
            } else {
                ctx.slots.max(96)
            };
            if ctx.slots > 0 && rows < ctx.slots {
                return Err(Error::Profile(format!(
                    "profile_rows = {rows} is below T = {}",
                    ctx.slots
                )));
            }
            Profiles::<R>::synthetic(buses, inv, rows, real::<R>(horizon), seed)
        }
    };
    let profiles = Arc::new(profiles);

    // LinDistFlow-style sensitivities on a random radial tree rooted at the
    // substation: entry (j, k) sums the impedances on the common path of
    // buses j and k to the root.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x666e_6565_6465_7221);
    let r_scale = cfg.impedance_scale / buses as f64;
    let mut parent = vec![usize::MAX; buses]; // MAX = root
    let mut r_edge = vec![0.0; buses];
    let mut x_edge = vec![0.0; buses];
    for j in 0..buses {
        parent[j] = if j == 0 { usize::MAX } else { rng.gen_range(0..j) };
        // Upstream edges carry more current; thicker conductors, lower r.
        r_edge[j] = r_scale * (0.5 + rng.gen::<f64>());
        x_edge[j] = r_edge[j] * (0.5 + 0.5 * rng.gen::<f64>());
    }
    let path_edges = |mut j: usize| -> Vec<usize> {
        let mut edges = Vec::new();
        loop {
            edges.push(j);
            if parent[j] == usize::MAX {
                break;
            }
            j = parent[j];
        }
        edges
    };
    let paths: Vec<Vec<usize>> = (0..buses).map(path_edges).collect();
    let mut r_full = DMatrix::<f64>::zeros(buses, buses);
    let mut x_full = DMatrix::<f64>::zeros(buses, buses);
    for j in 0..buses {
        for k in 0..buses {
            let mut r_sum = 0.0;
            let mut x_sum = 0.0;
            for e in &paths[j] {
                if paths[k].contains(e) {
                    r_sum += r_edge[*e];
                    x_sum += x_edge[*e];
                }
            }
            r_full[(j, k)] = r_sum;
            x_full[(j, k)] = x_sum;
        }
    }
    // Inverters spread evenly over the buses.
    let placement: Vec<usize> = (0..inv).map(|i| i * buses / inv).collect();

    // Interleaved layout x = (p_1, q_1, p_2, q_2, …); A maps x to voltages.
    let n = 2 * inv;
    let m = 2 * buses;
    let mut a_mat = DMatrix::<R>::zeros(buses, n);
    for (i, &bus) in placement.iter().enumerate() {
        for j in 0..buses {
            a_mat[(j, 2 * i)] = real::<R>(r_full[(j, bus)]);
            a_mat[(j, 2 * i + 1)] = real::<R>(x_full[(j, bus)]);
        }
    }
    // Load sensitivity: q^L = ratio · p^L, so M_L = R + ratio·X.
    let mut m_load = DMatrix::<R>::zeros(buses, buses);
    for j in 0..buses {
        for k in 0..buses {
            m_load[(j, k)] =
                real::<R>(r_full[(j, k)] + cfg.load_reactive_ratio * x_full[(j, k)]);
        }
    }

    let v0 = real::<R>(cfg.v0);
    let v_min = real::<R>(cfg.v_min);
    let v_max = real::<R>(cfg.v_max);
    let voltage = {
        let a_mat = a_mat.clone();
        let m_load = m_load.clone();
        let profiles = Arc::clone(&profiles);
        Arc::new(move |x: &DVector<R>, t: R| -> DVector<R> {
            let (loads, _) = profiles.interp(t);
            let mut v = &a_mat * x - &m_load * loads;
            v.add_scalar_mut(v0);
            v
        })
    };

    let f_c = {
        let voltage = Arc::clone(&voltage);
        move |x: &DVector<R>, t: R| {
            let v = voltage(x, t);
            let mut out = DVector::zeros(m);
            for j in 0..buses {
                out[j] = v[j] - v_max;
                out[buses + j] = v_min - v[j];
            }
            out
        }
    };
    let stacked = {
        let mut s = DMatrix::<R>::zeros(m, n);
        s.rows_mut(0, buses).copy_from(&a_mat);
        s.rows_mut(buses, buses).copy_from(&(-&a_mat));
        s
    };
    let jac_c = move |_: &DVector<R>, _| stacked.clone();

    let cp = real::<R>(cfg.c_p);
    let cq = real::<R>(cfg.c_q);
    let cost = {
        let profiles = Arc::clone(&profiles);
        move |x: &DVector<R>, t: R| {
            let (_, pv) = profiles.interp(t);
            let mut acc = R::zero();
            for i in 0..inv {
                let dp = x[2 * i] - pv[i];
                acc += cp * dp * dp + cq * x[2 * i + 1] * x[2 * i + 1];
            }
            acc
        }
    };
    let grad = {
        let profiles = Arc::clone(&profiles);
        move |x: &DVector<R>, t: R| {
            let (_, pv) = profiles.interp(t);
            DVector::from_fn(n, |k, _| {
                let i = k / 2;
                if k % 2 == 0 {
                    (cp + cp) * (x[k] - pv[i])
                } else {
                    (cq + cq) * x[k]
                }
            })
        }
    };
    let hess = move |_: &DVector<R>, _| {
        DMatrix::from_fn(n, n, |r, c| {
            if r != c {
                R::zero()
            } else if r % 2 == 0 {
                cp + cp
            } else {
                cq + cq
            }
        })
    };

    let set = ConvexSet::Product(
        (0..inv)
            .map(|i| {
                let profiles = Arc::clone(&profiles);
                ConvexSet::CappedDisk {
                    pmax: TimeFn::of(move |t: R| {
                        let (_, pv) = profiles.interp(t);
                        pv[i].max(R::zero())
                    }),
                    smax: TimeFn::constant(real::<R>(s_max[i])),
                }
            })
            .collect(),
    );

    let oracle = ProblemOracle::builder(n, m, real::<R>(horizon))
        .cost(cost)
        .grad_cost(grad)
        .hess_cost(hess)
        .f_convex(f_c)
        .jac_convex(jac_c)
        .hess_convex_i(move |_, _, _| DMatrix::zeros(n, n))
        .feasible_set(set)
        .build()?;

    Ok(Scenario {
        name: "feeder-surrogate",
        oracle,
        kkt_branches: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn quadratic_closed_form_matches_hand_kkt() {
        let ctx = BuildContext { slots: 10, horizon: Some(1.0), seed: None };
        let sc = build_by_name::<f64>("quadratic-tracking", &ctx).unwrap();
        let z = sc.kkt_closed_form().unwrap()(0.8);
        assert_relative_eq!(z.x[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(z.lambda[0], 0.3, epsilon = 1e-14);
        // Inactive phase: constraint slack, multiplier zero.
        let z = sc.kkt_closed_form().unwrap()(0.2);
        assert_relative_eq!(z.x[0], 0.2, epsilon = 1e-14);
        assert_relative_eq!(z.lambda[0], 0.0);
    }

    #[test]
    fn keepout_static_geometric_closed_form() {
        let ctx = BuildContext::default();
        let sc = build_by_name::<f64>("keepout-disk", &ctx).unwrap();
        let z = sc.kkt_closed_form().unwrap()(0.3);
        assert_relative_eq!(z.x[0], -0.5, epsilon = 1e-14);
        assert_relative_eq!(z.x[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(z.lambda[0], 0.25, epsilon = 1e-14);
        // Stationarity check: ∇c + λ ∇f^nc = 0 at the closed form.
        let g = sc.oracle.grad_cost(&z.x, 0.3)
            + sc.oracle.jac(&z.x, 0.3).transpose() * z.lambda.clone();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn twin_wells_branches_are_kkt_points() {
        let cfg = KeepoutDiskConfig {
            twin_wells: true,
            radius: 0.3,
            well_halfwidth: 1.0,
            center0: vec![0.2, 0.1],
            drift: vec![0.1, 0.0],
            ..Default::default()
        };
        let sc = build::<f64>(&ScenarioConfig::KeepoutDisk(cfg), &BuildContext::default()).unwrap();
        assert_eq!(sc.kkt_branches.len(), 2);
        for branch in &sc.kkt_branches {
            let z = branch(0.7);
            assert!(sc.oracle.grad_cost(&z.x, 0.7).norm() < 1e-12);
            assert!(sc.oracle.f(&z.x, 0.7)[0] < 0.0, "wells must be feasible");
        }
    }

    #[test]
    fn feeder_constraint_count_is_twice_bus_count() {
        let cfg = FeederConfig::default();
        let ctx = BuildContext { slots: 4, horizon: None, seed: Some(7) };
        let sc = build::<f64>(&ScenarioConfig::FeederSurrogate(cfg), &ctx).unwrap();
        assert_eq!(sc.oracle.n(), 36);
        assert_eq!(sc.oracle.m(), 36);
    }

    #[test]
    fn feeder_requires_seed() {
        let cfg = FeederConfig::default();
        let err = build::<f64>(
            &ScenarioConfig::FeederSurrogate(cfg),
            &BuildContext { slots: 4, horizon: None, seed: None },
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParameters(_)));
    }

    #[test]
    fn feeder_voltage_constraints_are_affine() {
        let cfg = FeederConfig { inverters: 3, ..Default::default() };
        let ctx = BuildContext { slots: 8, horizon: Some(8.0), seed: Some(11) };
        let sc = build::<f64>(&ScenarioConfig::FeederSurrogate(cfg), &ctx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = sc.oracle.n();
        for trial in 0..20 {
            let x = DVector::from_fn(n, |_, _| 2.0 * rng.gen::<f64>() - 1.0);
            let d = DVector::from_fn(n, |_, _| 0.2 * rng.gen::<f64>() + 0.01);
            let t = 1.0 + 0.25 * trial as f64;
            let f0 = sc.oracle.f_convex(&(x.clone() - &d), t);
            let f1 = sc.oracle.f_convex(&x, t);
            let f2 = sc.oracle.f_convex(&(x.clone() + &d), t);
            let second_diff = (f2 - f1.clone() * 2.0 + f0).norm();
            assert!(second_diff < 1e-12, "second difference {second_diff}");
        }
    }

    #[test]
    fn unknown_scenario_name_errors() {
        assert!(build_by_name::<f64>("mystery", &BuildContext::default()).is_err());
    }
}
