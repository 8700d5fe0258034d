//! Random state features, state kernels, and distribution distances.
//!
//! Timestep-neighborhood detection needs a distance between two state
//! distributions that can be estimated purely from paired state samples.
//! The workhorse is the squared maximum mean discrepancy with a Dirac or
//! Gaussian RBF kernel ([`mmd_sq_estimate`], an unbiased linear-time
//! estimator that may be negative, and its exact counterpart
//! [`mmd_sq_exact`]). Total variation and exact optimal transport are
//! provided for the non-sampling analysis paths.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Feature matrix whose row `s` is the feature vector of state `s`;
/// entry `(s, i)` is drawn from `Normal(mean = s, var = 1)`.
pub type FeatureMatrix = Matrix;

/// Draw a `n_states x dim` feature matrix, deterministically in `seed`.
pub fn random_features(n_states: usize, dim: usize, seed: u64) -> Result<FeatureMatrix> {
    if dim == 0 {
        return Err(Error::InvalidInput("feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Matrix::zeros(n_states, dim);
    for s in 0..n_states {
        let normal = Normal::new(s as f64, 1.0).expect("unit variance is valid");
        for i in 0..dim {
            f[(s, i)] = normal.sample(&mut rng);
        }
    }
    Ok(f)
}

/// Kernel family selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `k(s, s') = 1 if s == s' else 0`.
    Dirac,
    /// `k(s, s') = exp(-‖f(s) - f(s')‖² / (2σ²))` on state features.
    GaussianRbf { sigma: f64 },
}

/// A state kernel with its Gram table precomputed, so that evaluations
/// inside sampling loops are table lookups.
#[derive(Debug, Clone)]
pub struct StateKernel {
    kind: KernelKind,
    gram: Matrix,
}

impl StateKernel {
    pub fn dirac(n_states: usize) -> Self {
        Self {
            kind: KernelKind::Dirac,
            gram: Matrix::identity(n_states, n_states),
        }
    }

    pub fn gaussian_rbf(features: &FeatureMatrix, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "RBF width must be positive, got {sigma}"
            )));
        }
        let n = features.nrows();
        let gram = Matrix::from_fn(n, n, |s, s2| {
            let d2 = (features.row(s) - features.row(s2)).norm_squared();
            (-d2 / (2.0 * sigma * sigma)).exp()
        });
        Ok(Self {
            kind: KernelKind::GaussianRbf { sigma },
            gram,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n_states(&self) -> usize {
        self.gram.nrows()
    }

    #[inline]
    pub fn eval(&self, s: usize, s_prime: usize) -> f64 {
        self.gram[(s, s_prime)]
    }
}

/// Unbiased linear-time estimator of the squared MMD from two equally
/// long, even-length sample lists whose index is the trial index:
///
/// `(2/n) Σ_i k(a_{2i-1}, a_{2i}) + k(b_{2i-1}, b_{2i})
///             - k(a_{2i-1}, b_{2i}) - k(a_{2i}, b_{2i-1})`
///
/// Within-trial pairs are never used, and the estimate may be negative.
pub fn mmd_sq_estimate(samples_a: &[u32], samples_b: &[u32], k: &StateKernel) -> Result<f64> {
    let n = samples_a.len();
    if n != samples_b.len() {
        return Err(Error::InvalidInput(format!(
            "sample lists differ in length: {n} vs {}",
            samples_b.len()
        )));
    }
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "need an even number of at least 2 paired samples, got {n}"
        )));
    }
    let mut acc = 0.0;
    for i in 0..n / 2 {
        let a1 = samples_a[2 * i] as usize;
        let a2 = samples_a[2 * i + 1] as usize;
        let b1 = samples_b[2 * i] as usize;
        let b2 = samples_b[2 * i + 1] as usize;
        acc += k.eval(a1, a2) + k.eval(b1, b2) - k.eval(a1, b2) - k.eval(a2, b1);
    }
    Ok(2.0 * acc / n as f64)
}

/// Exact squared MMD between two distributions over the same state set:
/// `Σ p p k + Σ q q k - 2 Σ p q k`. Nonnegative, and zero iff `p = q`
/// for characteristic kernels.
pub fn mmd_sq_exact(p: &Vector, q: &Vector, k: &StateKernel) -> f64 {
    let n = p.len();
    let mut pp = 0.0;
    let mut qq = 0.0;
    let mut pq = 0.0;
    for s in 0..n {
        let (ps, qs) = (p[s], q[s]);
        if ps == 0.0 && qs == 0.0 {
            continue;
        }
        for s2 in 0..n {
            let kv = k.eval(s, s2);
            pp += ps * p[s2] * kv;
            qq += qs * q[s2] * kv;
            pq += ps * q[s2] * kv;
        }
    }
    (pp + qq - 2.0 * pq).max(0.0)
}

/// Total variation distance `½ Σ |p - q|`.
pub fn tv_distance(p: &Vector, q: &Vector) -> f64 {
    0.5 * p
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// Exact optimal transport cost between two distributions under a given
/// ground cost, solved as a min-cost flow with successive shortest
/// paths. The cost matrix must be symmetric and nonnegative with a zero
/// diagonal; the marginals must carry equal total mass.
pub fn ot_distance(p: &Vector, q: &Vector, cost: &Matrix) -> Result<f64> {
    let n = p.len();
    if q.len() != n || cost.nrows() != n || cost.ncols() != n {
        return Err(Error::InvalidInput("OT dimension mismatch".into()));
    }
    for s in 0..n {
        if cost[(s, s)].abs() > 1e-12 {
            return Err(Error::InvalidInput("OT cost diagonal must be zero".into()));
        }
        for s2 in 0..n {
            let c = cost[(s, s2)];
            if !(c >= 0.0) || (c - cost[(s2, s)]).abs() > 1e-9 * (1.0 + c.abs()) {
                return Err(Error::InvalidInput(
                    "OT cost must be symmetric and nonnegative".into(),
                ));
            }
        }
    }
    let mass_p: f64 = p.iter().sum();
    let mass_q: f64 = q.iter().sum();
    if (mass_p - mass_q).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "OT marginals differ in mass: {mass_p} vs {mass_q}"
        )));
    }

    let sources: Vec<usize> = (0..n).filter(|&s| p[s] > 0.0).collect();
    let sinks: Vec<usize> = (0..n).filter(|&s| q[s] > 0.0).collect();
    if sources.is_empty() {
        return Ok(0.0);
    }
    let ns = sources.len();
    let nt = sinks.len();
    let mut supply: Vec<f64> = sources.iter().map(|&s| p[s]).collect();
    let mut demand: Vec<f64> = sinks.iter().map(|&s| q[s]).collect();
    let c = |i: usize, j: usize| cost[(sources[i], sinks[j])];

    // Node layout for the shortest-path search: 0..ns are sources,
    // ns..ns+nt are sinks. Potentials keep reduced costs nonnegative.
    let total_nodes = ns + nt;
    let mut potential = vec![0.0f64; total_nodes];
    let mut flow = vec![vec![0.0f64; nt]; ns];
    let mass_eps = 1e-15 * mass_p.max(1.0);
    let mut remaining: f64 = supply.iter().sum();

    while remaining > mass_eps {
        // Dense Dijkstra from all sources with remaining supply.
        let inf = f64::INFINITY;
        let mut dist = vec![inf; total_nodes];
        let mut parent = vec![usize::MAX; total_nodes];
        let mut done = vec![false; total_nodes];
        for (i, &s) in supply.iter().enumerate() {
            let _ = s;
            if supply[i] > mass_eps {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = inf;
            for v in 0..total_nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < ns {
                // Forward arcs source u -> every sink.
                for j in 0..nt {
                    let v = ns + j;
                    let rc = c(u, j) + potential[u] - potential[v];
                    if dist[u] + rc < dist[v] - 1e-18 {
                        dist[v] = dist[u] + rc;
                        parent[v] = u;
                    }
                }
            } else {
                // Backward arcs sink -> source for positive flow.
                let j = u - ns;
                for i in 0..ns {
                    if flow[i][j] > mass_eps {
                        let rc = -c(i, j) + potential[u] - potential[i];
                        if dist[u] + rc < dist[i] - 1e-18 {
                            dist[i] = dist[u] + rc;
                            parent[i] = u;
                        }
                    }
                }
            }
        }

        // Cheapest sink with unmet demand.
        let mut target = usize::MAX;
        let mut best = inf;
        for j in 0..nt {
            if demand[j] > mass_eps && dist[ns + j] < best {
                best = dist[ns + j];
                target = ns + j;
            }
        }
        if target == usize::MAX {
            return Err(Error::Numerical(
                "optimal transport: no augmenting path found".into(),
            ));
        }

        // Bottleneck along the path back to some source.
        let mut bottleneck = demand[target - ns];
        let mut v = target;
        loop {
            let u = parent[v];
            if u == usize::MAX {
                bottleneck = bottleneck.min(supply[v]);
                break;
            }
            if u < ns {
                // forward arc: unlimited capacity
            } else {
                bottleneck = bottleneck.min(flow[v][u - ns]);
            }
            v = u;
        }

        let mut v = target;
        loop {
            let u = parent[v];
            if u == usize::MAX {
                supply[v] -= bottleneck;
                break;
            }
            if u < ns {
                flow[u][v - ns] += bottleneck;
            } else {
                flow[v][u - ns] -= bottleneck;
            }
            v = u;
        }
        demand[target - ns] -= bottleneck;
        remaining -= bottleneck;

        for v in 0..total_nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
    }

    let mut total = 0.0;
    for i in 0..ns {
        for j in 0..nt {
            if flow[i][j] > 0.0 {
                total += flow[i][j] * c(i, j);
            }
        }
    }
    Ok(total)
}
