//! Finite MDPs, policies, unichain environment construction, and the
//! trial simulator.
//!
//! Environments are either loaded from a JSON definition file or built
//! from a mnemonic such as `x9d`: a recurrent core (`x`, `h`, or `c`)
//! with streams of transient states attached in front of it. In a
//! mnemonic, the digits give the total state count and the trailing
//! letter the number of streams (`b` = 2, `c` = 3, ...; no letter means
//! a single stream). Every transient state has two actions, each with a
//! self-loop and an advance outcome, and the initial state distribution
//! is uniform over the transient states.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Finite MDP: transition tensor `p(s'|s,a)`, reward tensor `r(s,a,s')`,
/// and an initial state distribution. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MdpModel {
    pub name: String,
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
}

impl MdpModel {
    pub fn new(
        name: impl Into<String>,
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidInput(
                "an MDP needs at least one state and one action".into(),
            ));
        }
        let len = n_states * n_actions * n_states;
        if transition.len() != len || reward.len() != len || initial_dist.len() != n_states {
            return Err(Error::InvalidInput("tensor shape mismatch".into()));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput("rewards must be finite".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "negative or non-finite probability in p(.|{s},{a})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "p(.|{s},{a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        let isd_sum: f64 = initial_dist.iter().sum();
        if initial_dist.iter().any(|&p| !(p >= 0.0)) || (isd_sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(
                "initial distribution must be a probability vector".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            n_states,
            n_actions,
            transition,
            reward,
            initial_dist,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `p(s'|s,a)`.
    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// `r(s,a,s')`.
    pub fn r(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// Next-state distribution for `(s,a)` as a slice over states.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn initial_dist_vector(&self) -> Vector {
        Vector::from_column_slice(&self.initial_dist)
    }

    /// Expected one-step reward `r̄(s,a) = Σ_s' p(s'|s,a) r(s,a,s')`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        let row = self.transition_row(s, a);
        let base = (s * self.n_actions + a) * self.n_states;
        row.iter()
            .enumerate()
            .map(|(s2, &p)| p * self.reward[base + s2])
            .sum()
    }
}

/// Stationary policy `π(a|s)`; rows are probability distributions over
/// actions, one-hot rows for deterministic policies.
#[derive(Debug, Clone)]
pub struct PolicySpec {
    probs: Matrix,
}

impl PolicySpec {
    pub fn from_matrix(probs: Matrix) -> Result<Self> {
        for s in 0..probs.nrows() {
            let sum: f64 = probs.row(s).iter().sum();
            if probs.row(s).iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "policy row {s} is not a probability distribution"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Matrix::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidInput(format!(
                    "action {a} out of range for state {s}"
                )));
            }
            probs[(s, a)] = 1.0;
        }
        Ok(Self { probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    /// The chosen action per state when every row is one-hot.
    pub fn deterministic_actions(&self) -> Option<Vec<usize>> {
        let mut actions = Vec::with_capacity(self.probs.nrows());
        for s in 0..self.probs.nrows() {
            let mut chosen = None;
            for a in 0..self.probs.ncols() {
                let p = self.probs[(s, a)];
                if p == 1.0 && chosen.is_none() {
                    chosen = Some(a);
                } else if p != 0.0 {
                    return None;
                }
            }
            actions.push(chosen?);
        }
        Some(actions)
    }
}

/// Markov chain induced by a policy: stochastic matrix `P` and expected
/// state reward vector `r`.
#[derive(Debug, Clone)]
pub struct InducedChain {
    pub p: Matrix,
    pub r: Vector,
}

impl InducedChain {
    pub fn n_states(&self) -> usize {
        self.p.nrows()
    }
}

/// `P[s][s'] = Σ_a π(a|s) p(s'|s,a)` and
/// `r(s) = Σ_a π(a|s) Σ_s' p(s'|s,a) r(s,a,s')`.
pub fn induce_chain(mdp: &MdpModel, pi: &PolicySpec) -> Result<InducedChain> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidInput(format!(
            "policy shape {}x{} does not match MDP with {} states and {} actions",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let n = mdp.n_states();
    let mut p = Matrix::zeros(n, n);
    let mut r = Vector::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let row = mdp.transition_row(s, a);
            for (s2, &prob) in row.iter().enumerate() {
                p[(s, s2)] += w * prob;
                r[s] += w * prob * mdp.r(s, a, s2);
            }
        }
    }
    Ok(InducedChain { p, r })
}

// ---------------------------------------------------------------------------
// Environment definition files

#[derive(Debug, Serialize, Deserialize)]
struct EnvFile {
    name: String,
    n_states: usize,
    n_actions: usize,
    /// Sparse next-state distributions: `transitions[s][a]` is a list of
    /// `[s', prob]` pairs.
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    rewards: RewardSpec,
    initial_dist: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RewardSpec {
    /// `rewards[s][a][s']`
    PerNextState(Vec<Vec<Vec<f64>>>),
    /// `rewards[s][a]`, broadcast over next states
    PerAction(Vec<Vec<f64>>),
}

/// Parse an environment definition from its JSON text. Probabilities
/// must sum to 1 per `(s,a)` within `1e-9` (they are renormalized
/// exactly afterwards) or the definition is rejected.
pub fn env_from_json(text: &str) -> Result<MdpModel> {
    let file: EnvFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("bad env file: {e}")))?;
    let (n, m) = (file.n_states, file.n_actions);
    if file.transitions.len() != n {
        return Err(Error::Parse(format!(
            "expected transitions for {n} states, got {}",
            file.transitions.len()
        )));
    }
    let mut transition = vec![0.0; n * m * n];
    for (s, per_action) in file.transitions.iter().enumerate() {
        if per_action.len() != m {
            return Err(Error::Parse(format!(
                "state {s}: expected {m} actions, got {}",
                per_action.len()
            )));
        }
        for (a, pairs) in per_action.iter().enumerate() {
            let mut sum = 0.0;
            for &(s2, prob) in pairs {
                if s2 >= n {
                    return Err(Error::Parse(format!(
                        "state {s} action {a}: next state {s2} out of range"
                    )));
                }
                if !(prob >= 0.0) || !prob.is_finite() {
                    return Err(Error::Parse(format!(
                        "state {s} action {a}: bad probability {prob}"
                    )));
                }
                transition[(s * m + a) * n + s2] += prob;
                sum += prob;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Parse(format!(
                    "p(.|{s},{a}) sums to {sum}, outside the 1e-9 tolerance"
                )));
            }
            for s2 in 0..n {
                transition[(s * m + a) * n + s2] /= sum;
            }
        }
    }
    let mut reward = vec![0.0; n * m * n];
    match &file.rewards {
        RewardSpec::PerNextState(r) => {
            if r.len() != n || r.iter().any(|per_a| per_a.len() != m) {
                return Err(Error::Parse("reward tensor shape mismatch".into()));
            }
            for s in 0..n {
                for a in 0..m {
                    if r[s][a].len() != n {
                        return Err(Error::Parse("reward tensor shape mismatch".into()));
                    }
                    for s2 in 0..n {
                        reward[(s * m + a) * n + s2] = r[s][a][s2];
                    }
                }
            }
        }
        RewardSpec::PerAction(r) => {
            if r.len() != n || r.iter().any(|per_a| per_a.len() != m) {
                return Err(Error::Parse("reward matrix shape mismatch".into()));
            }
            for s in 0..n {
                for a in 0..m {
                    for s2 in 0..n {
                        reward[(s * m + a) * n + s2] = r[s][a];
                    }
                }
            }
        }
    }
    let isd_sum: f64 = file.initial_dist.iter().sum();
    if file.initial_dist.len() != n
        || file.initial_dist.iter().any(|&p| !(p >= 0.0))
        || (isd_sum - 1.0).abs() > 1e-9
    {
        return Err(Error::Parse(
            "initial_dist must be a probability vector over the states".into(),
        ));
    }
    let initial_dist = file.initial_dist.iter().map(|&p| p / isd_sum).collect();
    MdpModel::new(file.name, n, m, transition, reward, initial_dist)
}

pub fn env_from_file(path: &Path) -> Result<MdpModel> {
    let text = std::fs::read_to_string(path)?;
    env_from_json(&text)
}

/// Serialize an MDP back into the definition-file JSON layout.
pub fn env_to_json(mdp: &MdpModel) -> String {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let transitions: Vec<Vec<Vec<(usize, f64)>>> = (0..n)
        .map(|s| {
            (0..m)
                .map(|a| {
                    mdp.transition_row(s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(s2, &p)| (s2, p))
                        .collect()
                })
                .collect()
        })
        .collect();
    let rewards = RewardSpec::PerNextState(
        (0..n)
            .map(|s| {
                (0..m)
                    .map(|a| (0..n).map(|s2| mdp.r(s, a, s2)).collect())
                    .collect()
            })
            .collect(),
    );
    let file = EnvFile {
        name: mdp.name.clone(),
        n_states: n,
        n_actions: m,
        transitions,
        rewards,
        initial_dist: mdp.initial_dist().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("env serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Mnemonics and unichain construction

/// Parsed environment mnemonic, e.g. `x9d`: recurrent core `x`, 9 states
/// in total, 4 (`d`) streams of transient states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvMnemonic {
    pub recurrent_id: char,
    pub total_states: usize,
    pub n_streams: usize,
}

impl EnvMnemonic {
    pub fn parse(text: &str) -> Result<Self> {
        let mut chars = text.chars();
        let recurrent_id = chars
            .next()
            .filter(|c| c.is_ascii_lowercase())
            .ok_or_else(|| Error::Parse(format!("bad mnemonic '{text}'")))?;
        let rest: String = chars.collect();
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        let suffix: String = rest.chars().skip_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            return Err(Error::Parse(format!(
                "mnemonic '{text}' has no state count"
            )));
        }
        let total_states: usize = digits
            .parse()
            .map_err(|_| Error::Parse(format!("bad state count in '{text}'")))?;
        let n_streams = match suffix.as_str() {
            "" => 1,
            s if s.len() == 1 => {
                let c = s.chars().next().unwrap();
                if !('b'..='z').contains(&c) {
                    return Err(Error::Parse(format!("bad stream letter '{c}' in '{text}'")));
                }
                (c as usize) - ('a' as usize) + 1
            }
            _ => return Err(Error::Parse(format!("bad mnemonic suffix in '{text}'"))),
        };
        Ok(Self {
            recurrent_id,
            total_states,
            n_streams,
        })
    }

    /// Single-letter code for the stream count (`None` for one stream).
    pub fn stream_letter(&self) -> Option<char> {
        if self.n_streams <= 1 {
            None
        } else {
            char::from_u32('a' as u32 + self.n_streams as u32 - 1)
        }
    }
}

impl fmt::Display for EnvMnemonic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.recurrent_id, self.total_states)?;
        if let Some(letter) = self.stream_letter() {
            write!(f, "{letter}")?;
        }
        Ok(())
    }
}

/// Built-in recurrent cores, keyed by their single-letter identifier.
pub fn recurrent_core(id: char) -> Result<MdpModel> {
    let text = match id {
        'x' => include_str!("../envs/x.json"),
        'h' => include_str!("../envs/h.json"),
        'c' => include_str!("../envs/c.json"),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown recurrent core '{other}' (available: x, h, c)"
            )))
        }
    };
    env_from_json(text)
}

/// Tunables for the transient streams attached by [`build_unichain_env`].
#[derive(Debug, Clone)]
pub struct StreamParams {
    /// Advance probability per action; the remainder self-loops.
    pub advance_prob: [f64; 2],
    /// Index (within the recurrent core) that every stream head feeds.
    pub attach_state: usize,
    /// Seed for the per-(state, action) transient rewards on `[-1, 1]`.
    pub reward_seed: u64,
}

impl Default for StreamParams {
    fn default() -> Self {
        Self {
            advance_prob: [0.9, 0.1],
            attach_state: 0,
            reward_seed: 0x7472_616e,
        }
    }
}

/// Prepend `n_streams` streams of `stream_len` transient states to a
/// recurrent MDP. Transient states come first (stream-major), each with
/// two outcomes per action (self-loop or advance towards the stream head,
/// which feeds `params.attach_state` of the core). The initial state
/// distribution is uniform over the transient states.
pub fn build_unichain_env(
    recurrent: &MdpModel,
    n_streams: usize,
    stream_len: usize,
    params: &StreamParams,
) -> Result<MdpModel> {
    if n_streams == 0 || stream_len == 0 {
        return Err(Error::InvalidInput(
            "need at least one stream with at least one transient state".into(),
        ));
    }
    for &p in &params.advance_prob {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "advance probability {p} outside (0, 1]"
            )));
        }
    }
    if params.attach_state >= recurrent.n_states() {
        return Err(Error::InvalidInput(format!(
            "attach state {} out of range for the recurrent core",
            params.attach_state
        )));
    }
    let n_tr = n_streams * stream_len;
    let n_rec = recurrent.n_states();
    let n = n_tr + n_rec;
    let m = recurrent.n_actions().max(2);
    let mut transition = vec![0.0; n * m * n];
    let mut reward = vec![0.0; n * m * n];

    let mut rng = ChaCha8Rng::seed_from_u64(params.reward_seed);
    for s in 0..n_tr {
        let stream = s / stream_len;
        let pos = s % stream_len;
        let next = if pos + 1 < stream_len {
            s + 1
        } else {
            n_tr + params.attach_state
        };
        let _ = stream;
        let r_per_action: Vec<f64> = (0..2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for a in 0..m {
            let ae = a % 2;
            let p_adv = params.advance_prob[ae];
            let base = (s * m + a) * n;
            transition[base + next] += p_adv;
            transition[base + s] += 1.0 - p_adv;
            reward[base + next] = r_per_action[ae];
            reward[base + s] = r_per_action[ae];
        }
    }
    for s_rec in 0..n_rec {
        let s = n_tr + s_rec;
        for a in 0..m {
            let ae = a % recurrent.n_actions();
            let base = (s * m + a) * n;
            for s2_rec in 0..n_rec {
                transition[base + n_tr + s2_rec] = recurrent.p(s_rec, ae, s2_rec);
                reward[base + n_tr + s2_rec] = recurrent.r(s_rec, ae, s2_rec);
            }
        }
    }
    let mut initial_dist = vec![0.0; n];
    for slot in initial_dist.iter_mut().take(n_tr) {
        *slot = 1.0 / n_tr as f64;
    }
    // Exact sum 1 regardless of rounding in 1/n_tr.
    let sum: f64 = initial_dist.iter().sum();
    for p in initial_dist.iter_mut() {
        *p /= sum;
    }
    MdpModel::new(
        format!("{}+{}x{}", recurrent.name, n_streams, stream_len),
        n,
        m,
        transition,
        reward,
        initial_dist,
    )
}

/// Build the environment named by a mnemonic. A total equal to the core
/// size yields the bare recurrent core.
pub fn env_from_mnemonic(mnemonic: &EnvMnemonic, params: &StreamParams) -> Result<MdpModel> {
    let core = recurrent_core(mnemonic.recurrent_id)?;
    if mnemonic.total_states < core.n_states() {
        return Err(Error::InvalidConfig(format!(
            "mnemonic {mnemonic} asks for fewer states than the '{}' core has",
            mnemonic.recurrent_id
        )));
    }
    if mnemonic.total_states == core.n_states() {
        if mnemonic.n_streams != 1 {
            return Err(Error::InvalidConfig(format!(
                "mnemonic {mnemonic} has streams but no transient states"
            )));
        }
        let mut bare = core;
        bare.name = mnemonic.to_string();
        return Ok(bare);
    }
    let n_tr = mnemonic.total_states - core.n_states();
    if n_tr % mnemonic.n_streams != 0 {
        return Err(Error::InvalidConfig(format!(
            "mnemonic {mnemonic}: {n_tr} transient states not divisible into {} streams",
            mnemonic.n_streams
        )));
    }
    let stream_len = n_tr / mnemonic.n_streams;
    let mut env = build_unichain_env(&core, mnemonic.n_streams, stream_len, params)?;
    env.name = mnemonic.to_string();
    Ok(env)
}

/// Parse `text` as either a mnemonic or a path to a definition file.
pub fn load_env(text: &str, params: &StreamParams) -> Result<MdpModel> {
    if let Ok(mnemonic) = EnvMnemonic::parse(text) {
        if let Ok(env) = env_from_mnemonic(&mnemonic, params) {
            return Ok(env);
        }
    }
    let path = Path::new(text);
    if path.exists() {
        env_from_file(path)
    } else {
        Err(Error::InvalidConfig(format!(
            "'{text}' is neither a known mnemonic nor an existing env file"
        )))
    }
}

// ---------------------------------------------------------------------------
// Policies and simulation

/// Draw one action per state i.i.d. uniformly over the action set.
pub fn random_deterministic_policy(mdp: &MdpModel, seed: u64) -> PolicySpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions: Vec<usize> = (0..mdp.n_states())
        .map(|_| rng.random_range(0..mdp.n_actions()))
        .collect();
    PolicySpec::deterministic(&actions, mdp.n_actions()).expect("actions are in range")
}

/// Stepwise sample lists across trials: `states(t)`, `next_states(t)`
/// and `rewards(t)` each hold one entry per trial for `t = 0..=txepmax`,
/// with `next_states(t)[i] == states(t+1)[i]` by construction.
#[derive(Debug, Clone)]
pub struct SampleLog {
    n_trials: usize,
    txepmax: usize,
    /// `txepmax + 2` rows; row `t` holds `S_t` for every trial.
    states: Vec<Vec<u32>>,
    /// `txepmax + 1` rows; row `t` holds the reward of the transition
    /// leaving `states(t)`.
    rewards: Vec<Vec<f64>>,
}

impl SampleLog {
    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    pub fn txepmax(&self) -> usize {
        self.txepmax
    }

    pub fn states(&self, t: usize) -> &[u32] {
        &self.states[t]
    }

    pub fn next_states(&self, t: usize) -> &[u32] {
        &self.states[t + 1]
    }

    pub fn rewards(&self, t: usize) -> &[f64] {
        &self.rewards[t]
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_policy_row(pi: &PolicySpec, s: usize, u: f64) -> usize {
    let mut acc = 0.0;
    for a in 0..pi.n_actions() {
        acc += pi.prob(s, a);
        if u < acc {
            return a;
        }
    }
    pi.n_actions() - 1
}

/// Run `n_trials` independent trials of `txepmax + 1` steps each.
///
/// Every trial uses its own generator seeded with `seed ^ trial_index`,
/// so the log is bit-identical no matter how trials are scheduled across
/// threads.
pub fn simulate_trials(
    mdp: &MdpModel,
    pi: &PolicySpec,
    n_trials: usize,
    txepmax: usize,
    seed: u64,
) -> SampleLog {
    let det_actions = pi.deterministic_actions();
    let isd = mdp.initial_dist();
    let trajectories: Vec<(Vec<u32>, Vec<f64>)> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            let mut states = Vec::with_capacity(txepmax + 2);
            let mut rewards = Vec::with_capacity(txepmax + 1);
            let mut s = sample_index(isd, rng.random::<f64>());
            states.push(s as u32);
            for _ in 0..=txepmax {
                let a = match &det_actions {
                    Some(actions) => actions[s],
                    None => sample_policy_row(pi, s, rng.random::<f64>()),
                };
                let s_next = sample_index(mdp.transition_row(s, a), rng.random::<f64>());
                rewards.push(mdp.r(s, a, s_next));
                states.push(s_next as u32);
                s = s_next;
            }
            (states, rewards)
        })
        .collect();

    let mut states = vec![vec![0u32; n_trials]; txepmax + 2];
    let mut rewards = vec![vec![0f64; n_trials]; txepmax + 1];
    for (i, (traj_s, traj_r)) in trajectories.iter().enumerate() {
        for t in 0..=txepmax + 1 {
            states[t][i] = traj_s[t];
        }
        for t in 0..=txepmax {
            rewards[t][i] = traj_r[t];
        }
    }
    SampleLog {
        n_trials,
        txepmax,
        states,
        rewards,
    }
}

/// States observed at timestep `t` across the first `trial_limit` trials.
pub fn observed_states(log: &SampleLog, t: usize, trial_limit: usize) -> BTreeSet<usize> {
    log.states(t)[..trial_limit.min(log.n_trials())]
        .iter()
        .map(|&s| s as usize)
        .collect()
}
