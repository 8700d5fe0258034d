//! Timestep neighborhoods: anchor detection, reference states, merging,
//! and prediction-offset calibration.
//!
//! A neighborhood is a block of consecutive timesteps that shares one
//! approximator; its anchor is the earliest timestep in the block, and
//! the neighborhoods of a system tile `[0, txepmax]` without gaps. New
//! anchors are opened where the running average of squared distribution
//! distances between a candidate timestep and the current anchor exceeds
//! a tolerance that doubles until the requested anchor budget is met.
//!
//! Predictions of different neighborhoods carry different offsets
//! against the true bias. Calibration pins the prediction at a main
//! reference state to zero and chains the remaining neighborhoods
//! through auxiliary reference states shared between supports.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::kernels::{mmd_sq_estimate, mmd_sq_exact, ot_distance, tv_distance, StateKernel};
use crate::linalg::{Matrix, Vector};
use crate::lstd::feature_dot;
use crate::mdp::SampleLog;

/// Whether a reference state pins the prediction directly (main) or
/// chains it through an already-calibrated neighborhood (auxiliary).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    Main,
    Aux,
}

/// A block of consecutive timesteps `[anchor, anchor + size - 1]` with
/// the support of its state distribution and, after identification, a
/// reference state.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub anchor: usize,
    pub size: usize,
    pub support: BTreeSet<usize>,
    pub ref_state: Option<(usize, RefKind)>,
}

impl Neighborhood {
    pub fn end(&self) -> usize {
        self.anchor + self.size - 1
    }

    pub fn timesteps(&self) -> std::ops::RangeInclusive<usize> {
        self.anchor..=self.end()
    }

    pub fn contains_t(&self, t: usize) -> bool {
        t >= self.anchor && t <= self.end()
    }
}

/// An ordered tiling of neighborhoods plus the system-wide main
/// reference state (once identification has found one).
#[derive(Debug, Clone)]
pub struct NeighborhoodSystem {
    pub neighborhoods: Vec<Neighborhood>,
    pub main_ref: Option<usize>,
}

impl NeighborhoodSystem {
    /// Index of the neighborhood owning timestep `t`.
    pub fn index_of_t(&self, t: usize) -> Option<usize> {
        self.neighborhoods.iter().position(|nb| nb.contains_t(t))
    }
}

/// Tolerance schedule for anchor detection.
#[derive(Debug, Clone)]
pub struct AnchorConfig {
    pub delta_init: f64,
    pub multiplier: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            delta_init: 1e-3,
            multiplier: 2.0,
        }
    }
}

impl AnchorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.delta_init > 0.0) || !(self.multiplier > 1.0) {
            return Err(Error::InvalidInput(
                "anchor config needs delta_init > 0 and multiplier > 1".into(),
            ));
        }
        Ok(())
    }
}

/// Run the anchor scan: starting from anchor 0, walk the timesteps,
/// keep the running average of squared distances to the current anchor,
/// and open a new anchor when it exceeds `delta²`. The tolerance is
/// multiplied until at most `n_anchors` anchors remain.
fn anchor_scan<F>(txepmax: usize, n_anchors: usize, cfg: &AnchorConfig, mut sq_dist: F) -> Result<Vec<usize>>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let mut delta = cfg.delta_init;
    let mut count = txepmax;
    let mut anchors = vec![0];
    while count > n_anchors {
        anchors = vec![0];
        let mut running = 0.0;
        for t in 1..=txepmax {
            let anchor = *anchors.last().unwrap();
            let d2 = sq_dist(anchor, t)?;
            running += (d2 - running) / (t - anchor) as f64;
            if running > delta * delta {
                anchors.push(t);
                running = 0.0;
            }
        }
        count = anchors.len();
        delta *= cfg.multiplier;
    }
    Ok(anchors)
}

/// Locate up to `n_anchors` anchors from sampled state lists, using the
/// unbiased squared-MMD estimator between the samples at each candidate
/// timestep and those at the current anchor.
///
/// When the horizon itself is not longer than the budget the anchors
/// degenerate to one per timestep. An odd trial count drops the last
/// trial (the estimator needs pairs).
pub fn approximate_anchors(
    log: &SampleLog,
    trial_limit: usize,
    n_anchors: usize,
    kernel: &StateKernel,
    cfg: &AnchorConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if n_anchors < 2 {
        return Err(Error::InvalidInput(
            "anchor approximation needs a budget of at least 2".into(),
        ));
    }
    let txepmax = log.txepmax();
    if n_anchors >= txepmax {
        return Ok((0..=txepmax).collect());
    }
    let trials = trial_limit.min(log.n_trials());
    let paired = trials - trials % 2;
    if paired < 2 {
        return Err(Error::DegenerateInput(
            "anchor approximation needs at least two trials".into(),
        ));
    }
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    anchor_scan(txepmax, n_anchors, cfg, |anchor, t| {
        if let Some(&d2) = cache.get(&(anchor, t)) {
            return Ok(d2);
        }
        let d2 = mmd_sq_estimate(
            &log.states(anchor)[..paired],
            &log.states(t)[..paired],
            kernel,
        )?;
        cache.insert((anchor, t), d2);
        Ok(d2)
    })
}

/// Exact distribution distance used by the non-sampling anchor scan.
pub enum ExactMetric<'a> {
    /// Squared total variation.
    TotalVariation,
    /// Squared exact optimal transport under the given ground cost.
    OptimalTransport { cost: &'a Matrix },
    /// Exact squared MMD (already squared by definition).
    MmdExact { kernel: &'a StateKernel },
}

/// Non-sampling analogue of [`approximate_anchors`]: same control flow
/// with the estimator replaced by an exact metric on the stepwise
/// distributions (TV and OT are squared to keep units aligned with the
/// squared MMD).
pub fn anchors_from_exact_distances(
    dists: &[Vector],
    n_anchors: usize,
    metric: &ExactMetric,
    cfg: &AnchorConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if n_anchors < 2 {
        return Err(Error::InvalidInput(
            "anchor approximation needs a budget of at least 2".into(),
        ));
    }
    if dists.is_empty() {
        return Err(Error::InvalidInput("no stepwise distributions given".into()));
    }
    let txepmax = dists.len() - 1;
    if n_anchors >= txepmax {
        return Ok((0..=txepmax).collect());
    }
    anchor_scan(txepmax, n_anchors, cfg, |anchor, t| {
        let (a, b) = (&dists[anchor], &dists[t]);
        Ok(match metric {
            ExactMetric::TotalVariation => {
                let d = tv_distance(a, b);
                d * d
            }
            ExactMetric::OptimalTransport { cost } => {
                let d = ot_distance(a, b, cost)?;
                d * d
            }
            ExactMetric::MmdExact { kernel } => mmd_sq_exact(a, b, kernel),
        })
    })
}

/// Tile `[0, txepmax]` into neighborhoods, one per anchor; neighborhood
/// `i` spans `[anchor_i, anchor_{i+1} - 1]` and the last one runs to the
/// horizon.
pub fn specify_neighborhoods(anchors: &[usize], txepmax: usize) -> Result<Vec<Neighborhood>> {
    if anchors.is_empty() || anchors[0] != 0 {
        return Err(Error::InvalidInput(
            "anchor list must be nonempty and start at 0".into(),
        ));
    }
    if anchors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "anchor list must be strictly increasing".into(),
        ));
    }
    if *anchors.last().unwrap() > txepmax {
        return Err(Error::InvalidInput(format!(
            "last anchor {} beyond horizon {txepmax}",
            anchors.last().unwrap()
        )));
    }
    Ok(anchors
        .iter()
        .enumerate()
        .map(|(i, &anchor)| {
            let end = if i + 1 < anchors.len() {
                anchors[i + 1] - 1
            } else {
                txepmax
            };
            Neighborhood {
                anchor,
                size: end - anchor + 1,
                support: BTreeSet::new(),
                ref_state: None,
            }
        })
        .collect())
}

/// States observed at any timestep of the neighborhood across the first
/// `trial_limit` trials.
pub fn empirical_support(
    log: &SampleLog,
    nb: &Neighborhood,
    trial_limit: usize,
) -> BTreeSet<usize> {
    let trials = trial_limit.min(log.n_trials());
    let mut support = BTreeSet::new();
    for t in nb.timesteps() {
        for &s in &log.states(t)[..trials] {
            support.insert(s as usize);
        }
    }
    support
}

/// Positive entries of a distribution (above `threshold`), as used for
/// exact-mode supports.
pub fn support_from_distribution(dist: &Vector, threshold: f64) -> BTreeSet<usize> {
    dist.iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(s, _)| s)
        .collect()
}

/// Most common state across the supports of `pool`, skipping banned
/// states. Ties resolve to the earliest neighborhood in the pool and
/// then to the lowest state id within it.
fn most_common_unbanned(
    nbs: &[Neighborhood],
    pool: &[usize],
    banned: &BTreeSet<usize>,
) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in pool {
        for &s in &nbs[i].support {
            if !banned.contains(&s) {
                *counts.entry(s).or_default() += 1;
            }
        }
    }
    let max = *counts.values().max()?;
    let tied: BTreeSet<usize> = counts
        .iter()
        .filter(|(_, &c)| c == max)
        .map(|(&s, _)| s)
        .collect();
    let mut ordered: Vec<usize> = pool.to_vec();
    ordered.sort_by_key(|&i| nbs[i].anchor);
    for i in ordered {
        if let Some(&s) = nbs[i].support.iter().find(|s| tied.contains(s)) {
            return Some(s);
        }
    }
    None
}

/// Assign reference states: the first pass picks the main reference (the
/// most common state across all supports) and marks every neighborhood
/// containing it; later passes pick auxiliary references that are most
/// common among the still-unreferenced supports *and* appear in some
/// already-referenced support (candidates failing that are banned and
/// the next most common is tried). Neighborhoods that end up without a
/// reference are left for [`merge_unreferenced`].
pub fn identify_sref(mut nbs: Vec<Neighborhood>) -> NeighborhoodSystem {
    let mut unreferenced: Vec<usize> = (0..nbs.len()).collect();
    let mut referenced: Vec<usize> = Vec::new();
    let mut main_ref = None;
    let mut for_aux = false;
    let mut candidate_valid = true;

    while candidate_valid && !unreferenced.is_empty() {
        let mut banned: BTreeSet<usize> = BTreeSet::new();
        candidate_valid = false;
        let unique: BTreeSet<usize> = unreferenced
            .iter()
            .flat_map(|&i| nbs[i].support.iter().cloned())
            .collect();
        for _ in 0..unique.len() {
            let Some(sref) = most_common_unbanned(&nbs, &unreferenced, &banned) else {
                break;
            };
            if for_aux
                && !referenced
                    .iter()
                    .any(|&j| nbs[j].support.contains(&sref))
            {
                banned.insert(sref);
                continue;
            }
            let kind = if for_aux { RefKind::Aux } else { RefKind::Main };
            if !for_aux {
                main_ref = Some(sref);
            }
            let mut still = Vec::new();
            for &i in &unreferenced {
                if nbs[i].support.contains(&sref) {
                    nbs[i].ref_state = Some((sref, kind));
                    referenced.push(i);
                } else {
                    still.push(i);
                }
            }
            unreferenced = still;
            candidate_valid = true;
            break;
        }
        for_aux = true;
    }

    NeighborhoodSystem {
        neighborhoods: nbs,
        main_ref,
    }
}

/// Merge every reference-less neighborhood into the timestep-nearest
/// referenced one (the preceding neighborhood wins ties). The merged
/// block keeps the earliest anchor, unions the supports, and inherits
/// the reference of its referenced core, so the tiling is preserved.
pub fn merge_unreferenced(sys: NeighborhoodSystem) -> Result<NeighborhoodSystem> {
    let nbs = sys.neighborhoods;
    let n = nbs.len();
    let referenced: Vec<usize> = (0..n).filter(|&i| nbs[i].ref_state.is_some()).collect();
    if referenced.is_empty() {
        return Err(Error::UnrecoverableConfig(
            "no neighborhood received a reference state".into(),
        ));
    }
    if referenced.len() == n {
        return Ok(NeighborhoodSystem {
            neighborhoods: nbs,
            main_ref: sys.main_ref,
        });
    }

    // Nearest referenced neighborhood by timestep gap between the blocks.
    let mut target = vec![usize::MAX; n];
    for i in 0..n {
        if nbs[i].ref_state.is_some() {
            continue;
        }
        let prev = referenced.iter().rev().find(|&&j| j < i).copied();
        let next = referenced.iter().find(|&&j| j > i).copied();
        target[i] = match (prev, next) {
            (Some(p), Some(nx)) => {
                let gap_prev = nbs[i].anchor - nbs[p].end();
                let gap_next = nbs[nx].anchor - nbs[i].end();
                if gap_prev <= gap_next {
                    p
                } else {
                    nx
                }
            }
            (Some(p), None) => p,
            (None, Some(nx)) => nx,
            (None, None) => unreachable!("referenced is nonempty"),
        };
    }

    let mut merged = Vec::with_capacity(referenced.len());
    for &j in &referenced {
        let mut members: Vec<usize> = (0..n).filter(|&i| i == j || target[i] == j).collect();
        members.sort_unstable();
        let anchor = members.iter().map(|&i| nbs[i].anchor).min().unwrap();
        let end = members.iter().map(|&i| nbs[i].end()).max().unwrap();
        let mut support = BTreeSet::new();
        for &i in &members {
            support.extend(nbs[i].support.iter().cloned());
        }
        merged.push(Neighborhood {
            anchor,
            size: end - anchor + 1,
            support,
            ref_state: nbs[j].ref_state,
        });
    }
    merged.sort_by_key(|nb| nb.anchor);
    Ok(NeighborhoodSystem {
        neighborhoods: merged,
        main_ref: sys.main_ref,
    })
}

/// Calibrate one prediction offset per neighborhood.
///
/// Main-reference neighborhoods get `õ = -f(s_ref)ᵀw`, which pins their
/// prediction at the main reference to exactly zero. Auxiliary ones copy
/// the calibrated prediction of the earliest already-calibrated
/// neighborhood whose support contains their reference:
/// `õ' = [f(s'_ref)ᵀw_donor + õ_donor] - f(s'_ref)ᵀw`.
pub fn calibrate_offsets(
    sys: &NeighborhoodSystem,
    weights: &[Vector],
    features: &Matrix,
) -> Result<Vec<f64>> {
    let nbs = &sys.neighborhoods;
    if weights.len() != nbs.len() {
        return Err(Error::InvalidInput(format!(
            "{} weight vectors for {} neighborhoods",
            weights.len(),
            nbs.len()
        )));
    }
    let mut offsets: Vec<Option<f64>> = vec![None; nbs.len()];
    for (i, nb) in nbs.iter().enumerate() {
        match nb.ref_state {
            Some((sref, RefKind::Main)) => {
                offsets[i] = Some(-feature_dot(features, &weights[i], sref));
            }
            Some((_, RefKind::Aux)) => {}
            None => {
                return Err(Error::InvalidInput(format!(
                    "neighborhood anchored at {} has no reference state",
                    nb.anchor
                )))
            }
        }
    }
    loop {
        if offsets.iter().all(|o| o.is_some()) {
            break;
        }
        let mut progressed = false;
        for i in 0..nbs.len() {
            if offsets[i].is_some() {
                continue;
            }
            let (sref, _) = nbs[i].ref_state.expect("checked above");
            let donor = (0..nbs.len())
                .find(|&j| offsets[j].is_some() && nbs[j].support.contains(&sref));
            if let Some(j) = donor {
                let donor_pred = feature_dot(features, &weights[j], sref) + offsets[j].unwrap();
                offsets[i] = Some(donor_pred - feature_dot(features, &weights[i], sref));
                progressed = true;
            }
        }
        if !progressed {
            return Err(Error::CalibrationDeadlock(
                "no calibrated support contains the pending auxiliary reference".into(),
            ));
        }
    }
    Ok(offsets.into_iter().map(|o| o.unwrap()).collect())
}
