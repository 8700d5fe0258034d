//! Ground-truth analysis of induced Markov chains.
//!
//! Everything here is exact (up to linear-algebra tolerances) and serves
//! as the oracle layer for the sampling-based machinery: stepwise and
//! stationary distributions, gain and bias, state classification,
//! absorption and mixing times, the normalized pre-absorption visitation
//! distribution, discounted action values, and the behavioral state
//! distance derived from them.

use nalgebra::RowDVector;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::mdp::{InducedChain, MdpModel, PolicySpec};

/// Transient states are left eventually; recurrent states are revisited
/// forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateClass {
    Transient,
    Recurrent,
}

/// `p^t = isdᵀ Pᵗ` for `t = 0..=t_max`.
#[derive(Debug, Clone)]
pub struct StepwiseDistributions {
    dists: Vec<Vector>,
}

impl StepwiseDistributions {
    /// Largest timestep held (the list has `t_max + 1` entries).
    pub fn t_max(&self) -> usize {
        self.dists.len() - 1
    }

    pub fn get(&self, t: usize) -> &Vector {
        &self.dists[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vector> {
        self.dists.iter()
    }

    pub fn as_slice(&self) -> &[Vector] {
        &self.dists
    }
}

/// Full chain summary produced by [`analyze_chain`].
#[derive(Debug, Clone)]
pub struct ChainAnalysis {
    pub p_star: Vector,
    pub gain: f64,
    pub bias: Vector,
    pub t_mix: usize,
    pub t_abs_max: usize,
    pub classification: Vec<StateClass>,
    /// `P` with recurrent rows and columns nullified.
    pub p_tr: Matrix,
}

pub fn stepwise_distributions(
    chain: &InducedChain,
    isd: &Vector,
    t_max: usize,
) -> StepwiseDistributions {
    let mut dists = Vec::with_capacity(t_max + 1);
    let mut row = RowDVector::from_iterator(isd.len(), isd.iter().cloned());
    dists.push(isd.clone());
    for _ in 0..t_max {
        row *= &chain.p;
        dists.push(Vector::from_iterator(row.len(), row.iter().cloned()));
    }
    StepwiseDistributions { dists }
}

/// Average of the stepwise distributions on `[anchor, anchor + size - 1]`.
pub fn lumpsum_distribution(
    steps: &StepwiseDistributions,
    anchor: usize,
    size: usize,
) -> Result<Vector> {
    if size == 0 {
        return Err(Error::InvalidInput("lumpsum window must be nonempty".into()));
    }
    if anchor + size - 1 > steps.t_max() {
        return Err(Error::InvalidInput(format!(
            "lumpsum window [{anchor}, {}] exceeds horizon {}",
            anchor + size - 1,
            steps.t_max()
        )));
    }
    let mut acc = steps.get(anchor).clone();
    for t in anchor + 1..anchor + size {
        acc += steps.get(t);
    }
    Ok(acc / size as f64)
}

// ---------------------------------------------------------------------------
// State classification

/// Strongly-connected-component analysis of the positive-transition
/// graph; states in closed components are recurrent.
pub fn classify_states(chain: &InducedChain) -> Vec<StateClass> {
    let n = chain.n_states();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|s| (0..n).filter(|&s2| chain.p[(s, s2)] > 0.0).collect())
        .collect();
    let radj: Vec<Vec<usize>> = {
        let mut r = vec![Vec::new(); n];
        for (s, outs) in adj.iter().enumerate() {
            for &s2 in outs {
                r[s2].push(s);
            }
        }
        r
    };

    // Kosaraju: forward DFS finish order, then components on the
    // transposed graph.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        // Iterative DFS keeping an explicit expansion index per frame.
        let mut stack = vec![(start, 0usize)];
        seen[start] = true;
        while let Some(&mut (s, ref mut idx)) = stack.last_mut() {
            if *idx < adj[s].len() {
                let next = adj[s][*idx];
                *idx += 1;
                if !seen[next] {
                    seen[next] = true;
                    stack.push((next, 0));
                }
            } else {
                order.push(s);
                stack.pop();
            }
        }
    }

    let mut component = vec![usize::MAX; n];
    let mut n_components = 0;
    for &start in order.iter().rev() {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = n_components;
        while let Some(s) = stack.pop() {
            for &prev in &radj[s] {
                if component[prev] == usize::MAX {
                    component[prev] = n_components;
                    stack.push(prev);
                }
            }
        }
        n_components += 1;
    }

    let mut closed = vec![true; n_components];
    for (s, outs) in adj.iter().enumerate() {
        for &s2 in outs {
            if component[s2] != component[s] {
                closed[component[s]] = false;
            }
        }
    }
    (0..n)
        .map(|s| {
            if closed[component[s]] {
                StateClass::Recurrent
            } else {
                StateClass::Transient
            }
        })
        .collect()
}

fn count_closed_classes(labels: &[StateClass], chain: &InducedChain) -> usize {
    // Closed classes are the connected recurrent groups; count them by
    // flood-filling over recurrent states.
    let n = chain.n_states();
    let mut seen = vec![false; n];
    let mut count = 0;
    for start in 0..n {
        if seen[start] || labels[start] != StateClass::Recurrent {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(s) = stack.pop() {
            for s2 in 0..n {
                if !seen[s2]
                    && labels[s2] == StateClass::Recurrent
                    && (chain.p[(s, s2)] > 0.0 || chain.p[(s2, s)] > 0.0)
                {
                    seen[s2] = true;
                    stack.push(s2);
                }
            }
        }
    }
    count
}

/// Unique stationary distribution `p*` with `p*P = p*`, `Σp* = 1`.
/// Transient coordinates come out as zero for unichain chains; chains
/// with several closed recurrent classes are rejected.
pub fn stationary_distribution(chain: &InducedChain) -> Result<Vector> {
    let labels = classify_states(chain);
    if count_closed_classes(&labels, chain) > 1 {
        return Err(Error::UnsupportedModel(
            "chain has multiple closed recurrent classes".into(),
        ));
    }
    let n = chain.n_states();
    // Stack (Pᵀ - I) with the normalization row 1ᵀ and least-squares it.
    let mut a = Matrix::zeros(n + 1, n);
    for s in 0..n {
        for s2 in 0..n {
            a[(s, s2)] = chain.p[(s2, s)];
        }
        a[(s, s)] -= 1.0;
    }
    for s in 0..n {
        a[(n, s)] = 1.0;
    }
    let mut rhs = Vector::zeros(n + 1);
    rhs[n] = 1.0;
    let mut p = crate::linalg::least_squares(&a, &rhs)?;
    for x in p.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-9 {
                return Err(Error::Numerical(format!(
                    "stationary distribution has negative mass {x:e}"
                )));
            }
            *x = 0.0;
        }
    }
    let sum: f64 = p.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Numerical("stationary distribution vanished".into()));
    }
    p /= sum;
    let residual = (p.transpose() * &chain.p - p.transpose()).norm();
    if residual > 1e-9 {
        return Err(Error::Numerical(format!(
            "stationary residual {residual:e} above tolerance"
        )));
    }
    Ok(p)
}

/// Gain `g = p*ᵀr` and the bias vector solving the stacked system
/// `(I - P) b = r - g·1`, `P* b = 0` with `P* = 1·p*ᵀ`.
pub fn gain_and_bias(chain: &InducedChain, p_star: &Vector) -> Result<(f64, Vector)> {
    let n = chain.n_states();
    let gain = p_star.dot(&chain.r);
    let mut a = Matrix::zeros(2 * n, n);
    let mut rhs = Vector::zeros(2 * n);
    for s in 0..n {
        for s2 in 0..n {
            a[(s, s2)] = -chain.p[(s, s2)];
            a[(n + s, s2)] = p_star[s2];
        }
        a[(s, s)] += 1.0;
        rhs[s] = chain.r[s] - gain;
    }
    let bias = crate::linalg::least_squares(&a, &rhs)?;
    let residual = (&a * &bias - &rhs).norm();
    if residual > 1e-9 * (1.0 + rhs.norm()) {
        return Err(Error::Numerical(format!(
            "bias residual {residual:e} above tolerance"
        )));
    }
    Ok((gain, bias))
}

/// `P` with recurrent rows and columns set to zero.
pub fn transient_submatrix(chain: &InducedChain, labels: &[StateClass]) -> Matrix {
    let n = chain.n_states();
    Matrix::from_fn(n, n, |s, s2| {
        if labels[s] == StateClass::Transient && labels[s2] == StateClass::Transient {
            chain.p[(s, s2)]
        } else {
            0.0
        }
    })
}

/// Smallest `t` with `‖P_trᵗ‖_F ≤ eps`; 0 when there are no transient
/// states.
pub fn max_absorption_time(
    chain: &InducedChain,
    labels: &[StateClass],
    eps: f64,
) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let transient: Vec<usize> = (0..chain.n_states())
        .filter(|&s| labels[s] == StateClass::Transient)
        .collect();
    if transient.is_empty() {
        return Ok(0);
    }
    let k = transient.len();
    let block = Matrix::from_fn(k, k, |i, j| chain.p[(transient[i], transient[j])]);
    let mut power = block.clone();
    let mut t = 1usize;
    const CAP: usize = 200_000;
    while power.norm() > eps {
        power *= &block;
        t += 1;
        if t > CAP {
            return Err(Error::Numerical(format!(
                "transient mass did not vanish within {CAP} steps"
            )));
        }
    }
    Ok(t)
}

/// Smallest `t` such that every start state with positive initial mass
/// has `TV(p^t(.|s0), p*) ≤ tol`. Total variation to the stationary
/// distribution is non-increasing, so converged rows are dropped.
pub fn mixing_time(chain: &InducedChain, isd: &Vector, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let p_star = stationary_distribution(chain)?;
    let n = chain.n_states();
    let starts: Vec<usize> = (0..n).filter(|&s| isd[s] > 0.0).collect();
    if starts.is_empty() {
        return Err(Error::DegenerateInput(
            "initial distribution has no support".into(),
        ));
    }
    let tv = |row: &RowDVector<f64>| -> f64 {
        0.5 * row
            .iter()
            .zip(p_star.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    };
    let mut active: Vec<RowDVector<f64>> = starts
        .iter()
        .map(|&s0| {
            let mut row = RowDVector::zeros(n);
            row[s0] = 1.0;
            row
        })
        .collect();
    active.retain(|row| tv(row) > tol);
    if active.is_empty() {
        return Ok(0);
    }
    const CAP: usize = 1_000_000;
    for t in 1..=CAP {
        for row in active.iter_mut() {
            *row *= &chain.p;
        }
        active.retain(|row| tv(row) > tol);
        if active.is_empty() {
            return Ok(t);
        }
    }
    Err(Error::Numerical(format!(
        "chain did not mix to TV {tol:e} within {CAP} steps"
    )))
}

/// Normalized expected visitation of transient states before absorption:
/// `isdᵀ (1/t_abs) Σ_{t<t_abs} P_trᵗ`, restricted to transient states
/// and L1-normalized.
pub fn p_sharp(
    chain: &InducedChain,
    isd: &Vector,
    labels: &[StateClass],
    t_abs_max: usize,
) -> Result<Vector> {
    let transient: Vec<usize> = (0..chain.n_states())
        .filter(|&s| labels[s] == StateClass::Transient)
        .collect();
    if transient.is_empty() {
        return Err(Error::DegenerateInput("chain has no transient states".into()));
    }
    if t_abs_max == 0 {
        return Err(Error::InvalidInput(
            "t_abs_max must be at least 1 when transient states exist".into(),
        ));
    }
    let k = transient.len();
    let mass: Vec<f64> = transient.iter().map(|&s| isd[s]).collect();
    if mass.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateInput(
            "initial distribution puts no mass on transient states".into(),
        ));
    }
    let block = Matrix::from_fn(k, k, |i, j| chain.p[(transient[i], transient[j])]);
    let mut cur = RowDVector::from_vec(mass);
    let mut acc = cur.clone();
    for _ in 1..t_abs_max {
        cur *= &block;
        acc += &cur;
    }
    let total: f64 = acc.iter().sum();
    let mut out = Vector::zeros(chain.n_states());
    for (i, &s) in transient.iter().enumerate() {
        out[s] = acc[i] / total;
    }
    Ok(out)
}

/// Discounted action values: the unique solution of
/// `q(s,a) = r̄(s,a) + γ Σ_{s'} p(s'|s,a) Σ_{a'} π(a'|s') q(s',a')`.
pub fn discounted_q(mdp: &MdpModel, pi: &PolicySpec, gamma: f64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!(
            "discount factor {gamma} outside [0, 1)"
        )));
    }
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let dim = n * m;
    let mut a = Matrix::identity(dim, dim);
    let mut rhs = Vector::zeros(dim);
    for s in 0..n {
        for act in 0..m {
            let row = s * m + act;
            rhs[row] = mdp.expected_reward(s, act);
            let p_row = mdp.transition_row(s, act);
            for (s2, &p) in p_row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..m {
                    let w = pi.prob(s2, a2);
                    if w != 0.0 {
                        a[(row, s2 * m + a2)] -= gamma * p * w;
                    }
                }
            }
        }
    }
    let q_flat = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("discounted value system is singular".into()))?;
    let residual = (&a * &q_flat - &rhs).norm();
    if residual > 1e-9 * (1.0 + rhs.norm()) {
        return Err(Error::Numerical(format!(
            "discounted value residual {residual:e} above tolerance"
        )));
    }
    Ok(Matrix::from_fn(n, m, |s, act| q_flat[s * m + act]))
}

/// Behavioral pseudo-metric `d(s,s') = max_a |q(s,a) - q(s',a)|`.
pub fn bisimulation_distance(q: &Matrix) -> Matrix {
    let n = q.nrows();
    Matrix::from_fn(n, n, |s, s2| {
        (0..q.ncols())
            .map(|a| (q[(s, a)] - q[(s2, a)]).abs())
            .fold(0.0, f64::max)
    })
}

/// Convenience bundle: classification, stationary distribution, gain,
/// bias, absorption and mixing times in one pass.
pub fn analyze_chain(
    chain: &InducedChain,
    isd: &Vector,
    absorption_eps: f64,
    mix_tol: f64,
) -> Result<ChainAnalysis> {
    let classification = classify_states(chain);
    let p_star = stationary_distribution(chain)?;
    let (gain, bias) = gain_and_bias(chain, &p_star)?;
    let t_abs_max = max_absorption_time(chain, &classification, absorption_eps)?;
    let t_mix = mixing_time(chain, isd, mix_tol)?;
    let p_tr = transient_submatrix(chain, &classification);
    Ok(ChainAnalysis {
        p_star,
        gain,
        bias,
        t_mix,
        t_abs_max,
        classification,
        p_tr,
    })
}
