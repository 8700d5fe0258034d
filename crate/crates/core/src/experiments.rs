//! Named approximation schemes and end-to-end evaluation runs.
//!
//! A run builds an environment, draws a deterministic policy and random
//! features from the seed, trains one approximator per timestep
//! neighborhood, calibrates offsets, and scores the system with two
//! accumulated stepwise errors (`ε_PB` from the projected Bellman error
//! and `ε_MS` from the mean squared error against the true relative
//! bias). Exact mode weights every system with exact lumpsum
//! distributions; sampling mode estimates everything from simulated
//! trials and re-fits at checkpoints to emit learning curves.
//!
//! Scheme mnemonics: `buw` (uniform-weighted norm-LSTD baseline), `p01`
//! (one anchor), `p02am/tv/ot/md` (two anchors, second placed at the
//! maximum absorption time or by a distribution distance), `paxtv/ot/md`
//! (as many anchors as the parameter budget `floor(1/rho)` allows), and
//! `pinf` (one anchor per timestep).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exact::{
    analyze_chain, bisimulation_distance, discounted_q, lumpsum_distribution, p_sharp,
    stepwise_distributions, ChainAnalysis, StepwiseDistributions,
};
use crate::kernels::{random_features, FeatureMatrix, KernelKind, StateKernel};
use crate::linalg::{self, Matrix, Vector};
use crate::lstd::{
    exact_system, predict, sampled_system_prefix, solve_norm, solve_seminorm,
};
use crate::mdp::{
    induce_chain, load_env, random_deterministic_policy, simulate_trials, InducedChain,
    MdpModel, PolicySpec, SampleLog, StreamParams,
};
use crate::neighborhoods::{
    anchors_from_exact_distances, approximate_anchors, calibrate_offsets, empirical_support,
    identify_sref, merge_unreferenced, specify_neighborhoods, support_from_distribution,
    AnchorConfig, ExactMetric, NeighborhoodSystem,
};

/// The ten approximation schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Buw,
    P01,
    P02Am,
    P02Tv,
    P02Ot,
    P02Md,
    PaxTv,
    PaxOt,
    PaxMd,
    Pinf,
}

impl Scheme {
    pub const ALL: [Scheme; 10] = [
        Scheme::Buw,
        Scheme::P01,
        Scheme::P02Am,
        Scheme::P02Tv,
        Scheme::P02Ot,
        Scheme::P02Md,
        Scheme::PaxTv,
        Scheme::PaxOt,
        Scheme::PaxMd,
        Scheme::Pinf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Buw => "buw",
            Scheme::P01 => "p01",
            Scheme::P02Am => "p02am",
            Scheme::P02Tv => "p02tv",
            Scheme::P02Ot => "p02ot",
            Scheme::P02Md => "p02md",
            Scheme::PaxTv => "paxtv",
            Scheme::PaxOt => "paxot",
            Scheme::PaxMd => "paxmd",
            Scheme::Pinf => "pinf",
        }
    }

    /// A model-free agent cannot sample uniformly (`buw`), does not know
    /// the absorption time (`p02am`), and cannot build the intermediate
    /// empirical distributions TV/OT need.
    pub fn feasible_in_sampling(&self) -> bool {
        matches!(
            self,
            Scheme::P01 | Scheme::P02Md | Scheme::PaxMd | Scheme::Pinf
        )
    }

    fn needs_mmd_samples(&self) -> bool {
        matches!(self, Scheme::P02Md | Scheme::PaxMd)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .iter()
            .find(|scheme| scheme.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Sampling,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "sampling" => Ok(Mode::Sampling),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Sampling => "sampling",
        })
    }
}

/// Feature source: seeded random features sized by `rho`, or the
/// identity matrix (tabular, used by tests and diagnostics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Random,
    Tabular,
}

/// Everything a single run needs. `env` is a mnemonic or a path to an
/// environment definition file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: String,
    pub rho: f64,
    pub scheme: Scheme,
    pub mode: Mode,
    pub seed: u64,
    pub n_trials: usize,
    pub checkpoints: usize,
    pub txepmax_multiplier: usize,
    pub kernel: KernelKind,
    pub features: FeatureMode,
    pub ridge: f64,
    pub mix_tol: f64,
    pub absorption_eps: f64,
    pub anchor_cfg: AnchorConfig,
    /// Weight the first `p02am` neighborhood with the normalized
    /// pre-absorption visitation instead of the plain lumpsum.
    pub p02am_use_p_sharp: bool,
    pub stream_params: StreamParams,
}

impl RunConfig {
    pub fn new(env: impl Into<String>, rho: f64, scheme: Scheme, mode: Mode, seed: u64) -> Self {
        Self {
            env: env.into(),
            rho,
            scheme,
            mode,
            seed,
            n_trials: 1000,
            checkpoints: 10,
            txepmax_multiplier: 10,
            kernel: KernelKind::GaussianRbf { sigma: 1.0 },
            features: FeatureMode::Random,
            ridge: 1e-8,
            mix_tol: 1e-6,
            absorption_eps: 1e-8,
            anchor_cfg: AnchorConfig::default(),
            p02am_use_p_sharp: false,
            stream_params: StreamParams::default(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decorrelated sub-seed for one of a run's random streams.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

const SEED_POLICY: u64 = 1;
const SEED_FEATURES: u64 = 2;
const SEED_SIM: u64 = 3;

/// Anchor budget from the parameters-to-states proportion:
/// `floor(1/rho)`.
pub fn max_anchors(rho: f64) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidInput(format!(
            "rho must lie in (0, 1), got {rho}"
        )));
    }
    Ok((1.0 / rho).floor() as usize)
}

/// A trained system: neighborhoods, one weight vector and one calibrated
/// offset per neighborhood, and the shared feature matrix.
#[derive(Debug, Clone)]
pub struct ApproximatorSystem {
    pub neighborhoods: NeighborhoodSystem,
    pub weights: Vec<Vector>,
    pub offsets: Vec<f64>,
    pub features: FeatureMatrix,
}

impl ApproximatorSystem {
    pub fn neighborhood_index_of(&self, t: usize) -> Result<usize> {
        self.neighborhoods
            .index_of_t(t)
            .ok_or_else(|| Error::InvalidInput(format!("timestep {t} outside the tiling")))
    }

    /// Calibrated prediction vector of the neighborhood owning `t`.
    pub fn predict_for_t(&self, t: usize) -> Result<Vector> {
        let i = self.neighborhood_index_of(t)?;
        Ok(predict(&self.features, &self.weights[i], self.offsets[i]))
    }

    pub fn main_ref(&self) -> Result<usize> {
        self.neighborhoods
            .main_ref
            .ok_or_else(|| Error::UnrecoverableConfig("system has no main reference".into()))
    }
}

/// Final metrics of a run.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub env: String,
    pub scheme: Scheme,
    pub rho: f64,
    pub seed: u64,
    pub eps_pb: f64,
    pub eps_ms: f64,
    pub e_pb_series: Vec<f64>,
    pub e_ms_series: Vec<f64>,
}

/// One learning-curve point of a sampling run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CurvePoint {
    pub checkpoint: usize,
    pub trials: usize,
    pub eps_pb: f64,
    pub eps_ms: f64,
}

/// A finished run: the trained system, its final report, and (for
/// sampling runs) the checkpoint curve.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub system: ApproximatorSystem,
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
}

struct RunContext {
    env: MdpModel,
    policy: PolicySpec,
    chain: InducedChain,
    analysis: ChainAnalysis,
    txepmax: usize,
    steps: StepwiseDistributions,
    features: FeatureMatrix,
    kernel: StateKernel,
}

fn prepare(cfg: &RunConfig) -> Result<RunContext> {
    let env = load_env(&cfg.env, &cfg.stream_params)?;
    let n = env.n_states();
    let policy = random_deterministic_policy(&env, sub_seed(cfg.seed, SEED_POLICY));
    let chain = induce_chain(&env, &policy)?;
    let isd = env.initial_dist_vector();
    let analysis = analyze_chain(&chain, &isd, cfg.absorption_eps, cfg.mix_tol)?;
    let txepmax = (cfg.txepmax_multiplier * analysis.t_mix).max(1);
    let steps = stepwise_distributions(&chain, &isd, txepmax);
    let features = match cfg.features {
        FeatureMode::Tabular => Matrix::identity(n, n),
        FeatureMode::Random => {
            if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "rho must lie in (0, 1), got {}",
                    cfg.rho
                )));
            }
            let dim = (cfg.rho * n as f64).floor() as usize;
            if dim == 0 {
                return Err(Error::InvalidConfig(format!(
                    "rho = {} yields zero feature dimensions for {n} states",
                    cfg.rho
                )));
            }
            random_features(n, dim, sub_seed(cfg.seed, SEED_FEATURES))?
        }
    };
    let kernel = match cfg.kernel {
        KernelKind::Dirac => StateKernel::dirac(n),
        KernelKind::GaussianRbf { sigma } => StateKernel::gaussian_rbf(&features, sigma)?,
    };
    Ok(RunContext {
        env,
        policy,
        chain,
        analysis,
        txepmax,
        steps,
        features,
        kernel,
    })
}

/// Anchor plan for exact mode. `bisim_cost` must be supplied for the OT
/// schemes.
pub fn plan_anchors_exact(
    scheme: Scheme,
    dists: &[Vector],
    t_abs_max: usize,
    n_anchors_max: usize,
    kernel: &StateKernel,
    bisim_cost: Option<&Matrix>,
    cfg: &AnchorConfig,
) -> Result<Vec<usize>> {
    let txepmax = dists.len().saturating_sub(1);
    let exact_scan = |n: usize, metric: ExactMetric| -> Result<Vec<usize>> {
        anchors_from_exact_distances(dists, n, &metric, cfg)
    };
    let ot_cost = || {
        bisim_cost.ok_or_else(|| {
            Error::InvalidConfig("OT schemes need a ground cost matrix".into())
        })
    };
    match scheme {
        Scheme::Buw | Scheme::P01 => Ok(vec![0]),
        Scheme::P02Am => {
            if t_abs_max == 0 {
                return Err(Error::InvalidConfig(
                    "p02am needs transient states (t_abs_max is 0)".into(),
                ));
            }
            // Clamp a late absorption into the horizon so the tiling
            // stays valid.
            Ok(vec![0, t_abs_max.min(txepmax)])
        }
        Scheme::P02Tv => exact_scan(2, ExactMetric::TotalVariation),
        Scheme::P02Ot => exact_scan(2, ExactMetric::OptimalTransport { cost: ot_cost()? }),
        Scheme::P02Md => exact_scan(2, ExactMetric::MmdExact { kernel }),
        Scheme::PaxTv => exact_scan(n_anchors_max, ExactMetric::TotalVariation),
        Scheme::PaxOt => {
            exact_scan(n_anchors_max, ExactMetric::OptimalTransport { cost: ot_cost()? })
        }
        Scheme::PaxMd => exact_scan(n_anchors_max, ExactMetric::MmdExact { kernel }),
        Scheme::Pinf => Ok((0..=txepmax).collect()),
    }
}

/// Anchor plan for sampling mode (MMD schemes only).
pub fn plan_anchors_sampling(
    scheme: Scheme,
    log: &SampleLog,
    trial_limit: usize,
    n_anchors_max: usize,
    kernel: &StateKernel,
    cfg: &AnchorConfig,
) -> Result<Vec<usize>> {
    match scheme {
        Scheme::P01 => Ok(vec![0]),
        Scheme::P02Md => approximate_anchors(log, trial_limit, 2, kernel, cfg),
        Scheme::PaxMd => approximate_anchors(log, trial_limit, n_anchors_max, kernel, cfg),
        Scheme::Pinf => Ok((0..=log.txepmax()).collect()),
        other => Err(Error::InvalidConfig(format!(
            "scheme '{other}' is not feasible in sampling mode"
        ))),
    }
}

fn anchors_budget(cfg: &RunConfig) -> Result<usize> {
    match cfg.scheme {
        Scheme::PaxTv | Scheme::PaxOt | Scheme::PaxMd => {
            let n = max_anchors(cfg.rho)?;
            if n < 2 {
                return Err(Error::InvalidConfig(format!(
                    "rho = {} leaves a budget of {n} anchors; pax schemes need at least 2",
                    cfg.rho
                )));
            }
            Ok(n)
        }
        _ => Ok(2),
    }
}

/// Exact (non-sampling) run: every neighborhood system is assembled from
/// exact lumpsum distributions.
pub fn run_exact(cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.mode != Mode::Exact {
        return Err(Error::InvalidConfig("run_exact called with sampling mode".into()));
    }
    let ctx = prepare(cfg)?;
    let gain = ctx.analysis.gain;
    let n_anchors_max = anchors_budget(cfg)?;
    let bisim_cost = match cfg.scheme {
        Scheme::P02Ot | Scheme::PaxOt => Some(bisimulation_distance(&discounted_q(
            &ctx.env,
            &ctx.policy,
            0.999,
        )?)),
        _ => None,
    };
    let anchors = plan_anchors_exact(
        cfg.scheme,
        ctx.steps.as_slice(),
        ctx.analysis.t_abs_max,
        n_anchors_max,
        &ctx.kernel,
        bisim_cost.as_ref(),
        &cfg.anchor_cfg,
    )?;
    let mut nbs = specify_neighborhoods(&anchors, ctx.txepmax)?;
    let n = ctx.env.n_states();
    for nb in nbs.iter_mut() {
        nb.support = if cfg.scheme == Scheme::Buw {
            (0..n).collect()
        } else {
            let dist = lumpsum_distribution(&ctx.steps, nb.anchor, nb.size)?;
            support_from_distribution(&dist, 1e-12)
        };
    }
    let system = merge_unreferenced(identify_sref(nbs))?;

    let uniform = Vector::from_element(n, 1.0 / n as f64);
    let mut weights = Vec::with_capacity(system.neighborhoods.len());
    for (i, nb) in system.neighborhoods.iter().enumerate() {
        let dist = match cfg.scheme {
            Scheme::Buw => uniform.clone(),
            Scheme::P02Am if cfg.p02am_use_p_sharp && i == 0 => p_sharp(
                &ctx.chain,
                &ctx.env.initial_dist_vector(),
                &ctx.analysis.classification,
                ctx.analysis.t_abs_max,
            )?,
            _ => lumpsum_distribution(&ctx.steps, nb.anchor, nb.size)?,
        };
        let sys = exact_system(&ctx.features, &dist, &ctx.chain.p, &ctx.chain.r, gain)?;
        let w = if cfg.scheme == Scheme::Buw {
            solve_norm(&sys, cfg.ridge)?
        } else {
            solve_seminorm(&sys)?
        };
        weights.push(w);
    }
    let offsets = calibrate_offsets(&system, &weights, &ctx.features)?;
    let approx = ApproximatorSystem {
        neighborhoods: system,
        weights,
        offsets,
        features: ctx.features.clone(),
    };
    let (eps_pb, e_pb_series) = eval_eps_pb(&approx, &ctx.chain, &ctx.steps, gain)?;
    let (eps_ms, e_ms_series) = eval_eps_ms(&approx, &ctx.analysis.bias, &ctx.steps)?;
    Ok(RunOutput {
        system: approx,
        report: EvalReport {
            env: ctx.env.name.clone(),
            scheme: cfg.scheme,
            rho: cfg.rho,
            seed: cfg.seed,
            eps_pb,
            eps_ms,
            e_pb_series,
            e_ms_series,
        },
        curve: Vec::new(),
    })
}

fn fit_from_samples(
    cfg: &RunConfig,
    ctx: &RunContext,
    log: &SampleLog,
    trial_limit: usize,
    n_anchors_max: usize,
) -> Result<ApproximatorSystem> {
    let anchors = plan_anchors_sampling(
        cfg.scheme,
        log,
        trial_limit,
        n_anchors_max,
        &ctx.kernel,
        &cfg.anchor_cfg,
    )?;
    let mut nbs = specify_neighborhoods(&anchors, ctx.txepmax)?;
    for nb in nbs.iter_mut() {
        nb.support = empirical_support(log, nb, trial_limit);
    }
    let system = merge_unreferenced(identify_sref(nbs))?;
    let mut weights = Vec::with_capacity(system.neighborhoods.len());
    for nb in &system.neighborhoods {
        let timesteps: Vec<usize> = nb.timesteps().collect();
        let sys = sampled_system_prefix(
            log,
            &timesteps,
            trial_limit,
            &ctx.features,
            ctx.analysis.gain,
        )?;
        weights.push(solve_seminorm(&sys)?);
    }
    let offsets = calibrate_offsets(&system, &weights, &ctx.features)?;
    Ok(ApproximatorSystem {
        neighborhoods: system,
        weights,
        offsets,
        features: ctx.features.clone(),
    })
}

/// Sampling run: simulate trials, then re-fit and re-evaluate the system
/// at evenly spaced trial-count checkpoints. Evaluation always uses the
/// exact stepwise distributions, so the curve carries no evaluation
/// noise.
pub fn run_sampling(cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.mode != Mode::Sampling {
        return Err(Error::InvalidConfig("run_sampling called with exact mode".into()));
    }
    if !cfg.scheme.feasible_in_sampling() {
        return Err(Error::InvalidConfig(format!(
            "scheme '{}' is not feasible in sampling mode",
            cfg.scheme
        )));
    }
    if cfg.n_trials == 0 {
        return Err(Error::InvalidConfig("sampling runs need at least one trial".into()));
    }
    let ctx = prepare(cfg)?;
    let n_anchors_max = anchors_budget(cfg)?;
    let log = simulate_trials(
        &ctx.env,
        &ctx.policy,
        cfg.n_trials,
        ctx.txepmax,
        sub_seed(cfg.seed, SEED_SIM),
    );

    // Evenly spaced prefixes of the trial log; MMD-based schemes need at
    // least one pair of trials per checkpoint.
    let k = cfg.checkpoints.max(1);
    let min_trials = if cfg.scheme.needs_mmd_samples() { 2 } else { 1 };
    let mut marks = Vec::new();
    for j in 1..=k {
        let m = ((cfg.n_trials as f64 * j as f64 / k as f64).round() as usize)
            .clamp(min_trials.min(cfg.n_trials), cfg.n_trials);
        if marks.last() != Some(&m) {
            marks.push(m);
        }
    }

    let mut curve = Vec::with_capacity(marks.len());
    let mut final_system = None;
    for (j, &m) in marks.iter().enumerate() {
        let approx = fit_from_samples(cfg, &ctx, &log, m, n_anchors_max)?;
        let (eps_pb, _) = eval_eps_pb(&approx, &ctx.chain, &ctx.steps, ctx.analysis.gain)?;
        let (eps_ms, _) = eval_eps_ms(&approx, &ctx.analysis.bias, &ctx.steps)?;
        curve.push(CurvePoint {
            checkpoint: j + 1,
            trials: m,
            eps_pb,
            eps_ms,
        });
        final_system = Some(approx);
    }
    let approx = final_system.expect("at least one checkpoint");
    let (eps_pb, e_pb_series) = eval_eps_pb(&approx, &ctx.chain, &ctx.steps, ctx.analysis.gain)?;
    let (eps_ms, e_ms_series) = eval_eps_ms(&approx, &ctx.analysis.bias, &ctx.steps)?;
    Ok(RunOutput {
        system: approx,
        report: EvalReport {
            env: ctx.env.name.clone(),
            scheme: cfg.scheme,
            rho: cfg.rho,
            seed: cfg.seed,
            eps_pb,
            eps_ms,
            e_pb_series,
            e_ms_series,
        },
        curve,
    })
}

/// Dispatch on the configured mode.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    match cfg.mode {
        Mode::Exact => run_exact(cfg),
        Mode::Sampling => run_sampling(cfg),
    }
}

/// `residᵀ Z† resid` through the spectral decomposition of `Z`.
fn quad_form_z_pinv(z: &Matrix, resid: &Vector) -> Result<f64> {
    let pair = linalg::psd_eig(z)?;
    let n = z.nrows();
    let mu_max = pair.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = linalg::default_rank_tol(n, n) * mu_max;
    let mut acc = 0.0;
    for i in 0..n {
        let mu = pair.eigenvalues[i];
        if mu > cut {
            let c = pair.eigenvectors.column(i).dot(resid);
            acc += c * c / mu;
        }
    }
    Ok(acc)
}

/// Stepwise projected Bellman errors of a trained system:
/// `e_PB^t = ‖X_t w_t - y_t‖²_{Z_t†}` with the exact stepwise systems,
/// accumulated as `ε_PB = Σ_t sqrt(e_PB^t)`.
pub fn eval_eps_pb(
    system: &ApproximatorSystem,
    chain: &InducedChain,
    steps: &StepwiseDistributions,
    gain: f64,
) -> Result<(f64, Vec<f64>)> {
    let features = &system.features;
    let n = features.nrows();
    let d = features.ncols();
    let pf = &chain.p * features;
    let fm = features - &pf; // rows of (I - P)F
    let excess: Vec<f64> = (0..n).map(|s| chain.r[s] - gain).collect();

    let mut series = Vec::with_capacity(steps.t_max() + 1);
    let mut total = 0.0;
    for t in 0..=steps.t_max() {
        let p_t = steps.get(t);
        let mut x = Matrix::zeros(d, d);
        let mut z = Matrix::zeros(d, d);
        let mut y = Vector::zeros(d);
        for s in 0..n {
            let w = p_t[s];
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                let fa = features[(s, a)];
                y[a] += w * excess[s] * fa;
                for b in 0..d {
                    x[(a, b)] += w * fa * fm[(s, b)];
                    z[(a, b)] += w * fa * features[(s, b)];
                }
            }
        }
        let i = system.neighborhood_index_of(t)?;
        let resid = &x * &system.weights[i] - &y;
        let e = quad_form_z_pinv(&z, &resid)?.max(0.0);
        series.push(e);
        total += e.sqrt();
    }
    Ok((total, series))
}

/// Stepwise mean squared errors against the true relative bias
/// (anchored at the system's main reference state), accumulated as
/// `ε_MS = Σ_t sqrt(e_MS^t)`.
pub fn eval_eps_ms(
    system: &ApproximatorSystem,
    bias: &Vector,
    steps: &StepwiseDistributions,
) -> Result<(f64, Vec<f64>)> {
    let main_ref = system.main_ref()?;
    let v_true = bias.add_scalar(-bias[main_ref]);
    // One prediction vector per neighborhood, reused across its window.
    let predictions: Vec<Vector> = (0..system.neighborhoods.neighborhoods.len())
        .map(|i| predict(&system.features, &system.weights[i], system.offsets[i]))
        .collect();
    let mut series = Vec::with_capacity(steps.t_max() + 1);
    let mut total = 0.0;
    for t in 0..=steps.t_max() {
        let p_t = steps.get(t);
        let v_hat = &predictions[system.neighborhood_index_of(t)?];
        let mut e = 0.0;
        for s in 0..p_t.len() {
            let w = p_t[s];
            if w != 0.0 {
                let diff = v_true[s] - v_hat[s];
                e += w * diff * diff;
            }
        }
        series.push(e);
        total += e.sqrt();
    }
    Ok((total, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhoods::{Neighborhood, RefKind};
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    #[test]
    fn max_anchors_budget_table() {
        assert_eq!(max_anchors(0.49).unwrap(), 2);
        assert_eq!(max_anchors(0.33).unwrap(), 3);
        assert_eq!(max_anchors(0.19).unwrap(), 5);
        assert_eq!(max_anchors(0.09).unwrap(), 11);
        assert_eq!(max_anchors(0.06).unwrap(), 16);
        assert_eq!(max_anchors(0.03).unwrap(), 33);
        assert!(max_anchors(0.0).is_err());
        assert!(max_anchors(1.0).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for scheme in Scheme::ALL {
            assert_eq!(Scheme::from_str(scheme.name()).unwrap(), scheme);
        }
        assert!(Scheme::from_str("p99").is_err());
    }

    fn exact_cfg(env: &str, scheme: Scheme, seed: u64) -> RunConfig {
        RunConfig::new(env, 0.49, scheme, Mode::Exact, seed)
    }

    #[test]
    fn plan_p02am_nilpotent_streams() {
        // Deterministic advance makes each stream nilpotent: absorption
        // happens exactly after the stream length.
        let mut cfg = exact_cfg("x9d", Scheme::P02Am, 0);
        cfg.stream_params.advance_prob = [1.0, 1.0];
        let out = run_exact(&cfg).unwrap();
        assert_eq!(out.system.neighborhoods.neighborhoods[0].anchor, 0);
        assert_eq!(out.system.neighborhoods.neighborhoods[1].anchor, 2);
    }

    #[test]
    fn plan_p01_and_pinf_shapes() {
        let out = run_exact(&exact_cfg("h6", Scheme::P01, 1)).unwrap();
        assert_eq!(out.system.neighborhoods.neighborhoods.len(), 1);
        let out = run_exact(&exact_cfg("h6", Scheme::Pinf, 1)).unwrap();
        let nbs = &out.system.neighborhoods.neighborhoods;
        // Stepwise tiling before merging; merging may glue ref-less tail
        // neighborhoods, so sizes are at least 1 and tile the horizon.
        let mut t = 0;
        for nb in nbs.iter() {
            assert_eq!(nb.anchor, t);
            t = nb.end() + 1;
        }
        assert!(nbs.len() > 2);
    }

    #[test]
    fn p02am_first_support_covers_transients_with_tabular_features() {
        let mut cfg = exact_cfg("x9d", Scheme::P02Am, 3);
        cfg.features = FeatureMode::Tabular;
        cfg.stream_params.advance_prob = [1.0, 1.0];
        let out = run_exact(&cfg).unwrap();
        let first = &out.system.neighborhoods.neighborhoods[0];
        for s in 0..8 {
            assert!(first.support.contains(&s), "transient {s} missing");
        }
    }

    #[test]
    fn exact_run_is_deterministic() {
        let cfg = exact_cfg("x9d", Scheme::P02Md, 7);
        let a = run_exact(&cfg).unwrap();
        let b = run_exact(&cfg).unwrap();
        assert_eq!(a.report.eps_pb.to_bits(), b.report.eps_pb.to_bits());
        assert_eq!(a.report.eps_ms.to_bits(), b.report.eps_ms.to_bits());
    }

    #[test]
    fn pinf_tabular_reaches_zero_projected_error() {
        let mut cfg = exact_cfg("x9d", Scheme::Pinf, 2);
        cfg.features = FeatureMode::Tabular;
        let out = run_exact(&cfg).unwrap();
        assert!(
            out.report.eps_pb <= 1e-6,
            "eps_pb = {:e}",
            out.report.eps_pb
        );
    }

    #[test]
    fn p01_tabular_recovers_relative_bias_on_recurrent_core() {
        // On a recurrent-only chain the lumpsum has full support, so the
        // tabular minimizer solves the Bellman equation exactly and
        // calibration pins the family member with v(s_ref) = 0.
        let mut cfg = exact_cfg("h3", Scheme::P01, 11);
        cfg.features = FeatureMode::Tabular;
        let out = run_exact(&cfg).unwrap();

        let env = load_env("h3", &StreamParams::default()).unwrap();
        let policy =
            random_deterministic_policy(&env, sub_seed(11, SEED_POLICY));
        let chain = induce_chain(&env, &policy).unwrap();
        let analysis =
            analyze_chain(&chain, &env.initial_dist_vector(), 1e-8, 1e-6).unwrap();
        let sref = out.system.main_ref().unwrap();
        let expected = analysis.bias.add_scalar(-analysis.bias[sref]);
        let got = out.system.predict_for_t(0).unwrap();
        assert!((got - expected).norm() <= 1e-8);
    }

    #[test]
    fn sampling_rejects_infeasible_schemes() {
        for scheme in [Scheme::Buw, Scheme::P02Am, Scheme::P02Tv, Scheme::PaxOt] {
            let cfg = RunConfig::new("h6", 0.49, scheme, Mode::Sampling, 0);
            assert!(matches!(
                run_sampling(&cfg),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn sampling_minimum_trial_count_runs() {
        let mut cfg = RunConfig::new("x9d", 0.49, Scheme::P02Md, Mode::Sampling, 5);
        cfg.n_trials = 2;
        cfg.checkpoints = 1;
        cfg.txepmax_multiplier = 2;
        let out = run_sampling(&cfg).unwrap();
        assert_eq!(out.curve.len(), 1);
        assert!(out.report.eps_pb.is_finite());
    }

    #[test]
    fn sampling_emits_requested_checkpoints() {
        let mut cfg = RunConfig::new("x9d", 0.49, Scheme::P01, Mode::Sampling, 5);
        cfg.n_trials = 50;
        cfg.checkpoints = 10;
        cfg.txepmax_multiplier = 2;
        let out = run_sampling(&cfg).unwrap();
        assert_eq!(out.curve.len(), 10);
        assert_eq!(out.curve.last().unwrap().trials, 50);
        for pair in out.curve.windows(2) {
            assert!(pair[0].trials < pair[1].trials);
        }
    }

    #[test]
    fn sampled_p01_weights_approach_exact() {
        let mut sampling = RunConfig::new("h6", 0.49, Scheme::P01, Mode::Sampling, 9);
        sampling.n_trials = 20_000;
        sampling.checkpoints = 1;
        let sampled = run_sampling(&sampling).unwrap();
        let exact = run_exact(&exact_cfg("h6", Scheme::P01, 9)).unwrap();
        let err = (&sampled.system.weights[0] - &exact.system.weights[0]).norm();
        assert!(err <= 0.05, "weight error {err}");
    }

    #[test]
    fn eval_pb_hand_computed_residual() {
        // Two-state symmetric chain, tabular features, w = 0: the only
        // term is yᵀ Z† y = 0.25 at each timestep.
        let chain = InducedChain {
            p: Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            r: Vector::from_vec(vec![1.0, 0.0]),
        };
        let isd = Vector::from_vec(vec![0.5, 0.5]);
        let steps = stepwise_distributions(&chain, &isd, 0);
        let nb = Neighborhood {
            anchor: 0,
            size: 1,
            support: BTreeSet::from([0, 1]),
            ref_state: Some((0, RefKind::Main)),
        };
        let system = ApproximatorSystem {
            neighborhoods: NeighborhoodSystem {
                neighborhoods: vec![nb],
                main_ref: Some(0),
            },
            weights: vec![Vector::zeros(2)],
            offsets: vec![0.0],
            features: Matrix::identity(2, 2),
        };
        let (eps, series) = eval_eps_pb(&system, &chain, &steps, 0.5).unwrap();
        assert_relative_eq!(series[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(eps, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn eval_ms_constant_misfit_accumulates_linearly() {
        let chain = InducedChain {
            p: Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            r: Vector::from_vec(vec![0.0, 0.0]),
        };
        let isd = Vector::from_vec(vec![0.5, 0.5]);
        let t_max = 6;
        let steps = stepwise_distributions(&chain, &isd, t_max);
        let nb = Neighborhood {
            anchor: 0,
            size: t_max + 1,
            support: BTreeSet::from([0, 1]),
            ref_state: Some((0, RefKind::Main)),
        };
        let c = 0.3;
        let system = ApproximatorSystem {
            neighborhoods: NeighborhoodSystem {
                neighborhoods: vec![nb],
                main_ref: Some(0),
            },
            weights: vec![Vector::zeros(2)],
            offsets: vec![c],
            features: Matrix::identity(2, 2),
        };
        // True bias is zero, prediction is the constant c everywhere.
        let bias = Vector::zeros(2);
        let (eps, series) = eval_eps_ms(&system, &bias, &steps).unwrap();
        for e in &series {
            assert_relative_eq!(*e, c * c, epsilon = 1e-12);
        }
        assert_relative_eq!(eps, (t_max + 1) as f64 * c, epsilon = 1e-10);
    }

    #[test]
    fn calibration_invariants_hold_after_runs() {
        for scheme in [Scheme::P01, Scheme::P02Md, Scheme::Pinf] {
            let out = run_exact(&exact_cfg("x9d", scheme, 13)).unwrap();
            let sys = &out.system;
            let main_ref = sys.main_ref().unwrap();
            for (i, nb) in sys.neighborhoods.neighborhoods.iter().enumerate() {
                match nb.ref_state {
                    Some((sref, RefKind::Main)) => {
                        assert_eq!(sref, main_ref);
                        let pred = crate::lstd::predict_at(
                            &sys.features,
                            &sys.weights[i],
                            sys.offsets[i],
                            sref,
                        );
                        assert_eq!(pred, 0.0, "main-ref prediction must be exactly zero");
                    }
                    Some((sref, RefKind::Aux)) => {
                        // Some calibrated neighborhood shares this state.
                        let donor = sys
                            .neighborhoods
                            .neighborhoods
                            .iter()
                            .position(|other| {
                                other.support.contains(&sref)
                                    && !std::ptr::eq(other, nb)
                            })
                            .expect("aux reference appears in another support");
                        let a = crate::lstd::predict_at(
                            &sys.features,
                            &sys.weights[i],
                            sys.offsets[i],
                            sref,
                        );
                        let b = crate::lstd::predict_at(
                            &sys.features,
                            &sys.weights[donor],
                            sys.offsets[donor],
                            sref,
                        );
                        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                    }
                    None => panic!("neighborhood without reference after merge"),
                }
            }
        }
    }
}
