//! Community-conditional conformal prediction on graphs: community
//! detection or import, within-community rank scores, and the resulting
//! prediction region.
//!
//! Ranks are computed within each node's community, so the calibration
//! sample becomes nearly pivotal per community: with distinct base scores
//! the ranks inside a community of size m are exactly {1/m, …, 1}. The
//! pooled rank quantile then lands within 2/m_min of the nominal level,
//! which is what makes the region's coverage hold per community and not
//! just marginally.

use alloc::vec::Vec;

use rand::Rng;

use crate::calib::{Level, PredictionRegion, WeightedScoreSample};
use crate::{Error, Result};

/// Communities smaller than this are merged into one outlier community by
/// the default detector.
pub const MIN_COMMUNITY_SIZE: usize = 10;

const MAX_SWEEPS: usize = 100;

/// An undirected graph over observed nodes followed by unobserved test
/// nodes, with covariates for every node and responses for the observed
/// prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    edges: Vec<(usize, usize)>,
    covariates: Vec<Vec<f64>>,
    responses: Vec<f64>,
}

impl GraphData {
    /// Validates node indices, forbids self-loops, and normalizes the edge
    /// list (u < v, sorted, deduplicated).
    pub fn new(
        edges: Vec<(usize, usize)>,
        covariates: Vec<Vec<f64>>,
        responses: Vec<f64>,
    ) -> Result<Self> {
        let n_nodes = covariates.len();
        if n_nodes == 0 {
            return Err(Error::degenerate("graph needs at least one node"));
        }
        if responses.len() > n_nodes {
            return Err(Error::invalid_config(
                "responses",
                "more responses than nodes",
            ));
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid_config(
                "responses",
                "responses must be finite",
            ));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::invalid_config(
                    "edges",
                    "edge endpoint out of range",
                ));
            }
            if u == v {
                return Err(Error::invalid_config("edges", "self-loops are not allowed"));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        Ok(GraphData {
            edges: normalized,
            covariates,
            responses,
        })
    }

    /// Total number of nodes.
    #[must_use]
    pub fn node_count(&self) -> usize {
        self.covariates.len()
    }

    /// Number of observed (response-bearing) nodes.
    #[must_use]
    pub fn observed_count(&self) -> usize {
        self.responses.len()
    }

    /// The normalized edge list.
    #[must_use]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Node covariates.
    #[must_use]
    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    /// Responses of the observed prefix.
    #[must_use]
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Adjacency lists.
    #[must_use]
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = alloc::vec![Vec::new(); self.node_count()];
        for &(u, v) in &self.edges {
            lists[u].push(v);
            lists[v].push(u);
        }
        lists
    }
}

/// Where an assignment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentSource {
    /// Produced by the label-propagation detector.
    Detected,
    /// Supplied externally (planted or precomputed labels).
    Imported,
}

/// A community assignment over all nodes, ids compacted to 0..n_comm.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityAssignment {
    labels: Vec<usize>,
    n_comm: usize,
    source: AssignmentSource,
    edgeless: bool,
}

impl CommunityAssignment {
    fn from_raw(mut labels: Vec<usize>, source: AssignmentSource, edgeless: bool) -> Self {
        // Compact ids preserving first-appearance order.
        let mut map: Vec<(usize, usize)> = Vec::new();
        for label in &mut labels {
            let found = map.iter().find(|(old, _)| old == label).map(|&(_, new)| new);
            let new = match found {
                Some(new) => new,
                None => {
                    let new = map.len();
                    map.push((*label, new));
                    new
                }
            };
            *label = new;
        }
        CommunityAssignment {
            labels,
            n_comm: map.len(),
            source,
            edgeless,
        }
    }

    /// Per-node community ids.
    #[must_use]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of communities.
    #[must_use]
    pub fn community_count(&self) -> usize {
        self.n_comm
    }

    /// How the assignment was produced.
    #[must_use]
    pub fn source(&self) -> AssignmentSource {
        self.source
    }

    /// True when detection saw an edgeless graph and collapsed everything
    /// into one merged community.
    #[must_use]
    pub fn edgeless_warning(&self) -> bool {
        self.edgeless
    }

    /// Node count (observed plus test).
    #[must_use]
    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    /// Nodes in each community.
    #[must_use]
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = alloc::vec![Vec::new(); self.n_comm];
        for (i, &label) in self.labels.iter().enumerate() {
            members[label].push(i);
        }
        members
    }
}

/// Imports external labels (planted or precomputed) as an assignment.
pub fn import_labels(graph: &GraphData, labels: &[usize]) -> Result<CommunityAssignment> {
    if labels.len() != graph.node_count() {
        return Err(Error::invalid_config(
            "labels",
            "one label per node required",
        ));
    }
    Ok(CommunityAssignment::from_raw(
        labels.to_vec(),
        AssignmentSource::Imported,
        false,
    ))
}

/// Synchronous label propagation with the default community-size floor.
pub fn detect_communities<R: Rng + ?Sized>(
    graph: &GraphData,
    rng: &mut R,
) -> CommunityAssignment {
    detect_communities_with_floor(graph, MIN_COMMUNITY_SIZE, rng)
}

/// Synchronous label propagation: every node simultaneously adopts the most
/// frequent label in its closed neighbourhood (neighbours plus itself), ties
/// broken uniformly at random, until a fixed point or 100 sweeps.
/// Communities smaller than `floor` are merged into one outlier community.
/// An edgeless graph collapses to a single merged community with a warning
/// flag on the assignment.
pub fn detect_communities_with_floor<R: Rng + ?Sized>(
    graph: &GraphData,
    floor: usize,
    rng: &mut R,
) -> CommunityAssignment {
    let n = graph.node_count();
    let neighbors = graph.neighbor_lists();
    let edgeless = graph.edges.is_empty();
    let mut labels: Vec<usize> = (0..n).collect();
    if !edgeless {
        let mut counts = alloc::vec![0usize; n];
        let mut candidates: Vec<usize> = Vec::new();
        for _ in 0..MAX_SWEEPS {
            let mut next = alloc::vec![0usize; n];
            let mut changed = false;
            for i in 0..n {
                // Closed neighbourhood counts.
                counts[labels[i]] += 1;
                for &j in &neighbors[i] {
                    counts[labels[j]] += 1;
                }
                let mut best = 0usize;
                candidates.clear();
                for &j in neighbors[i].iter().chain(core::iter::once(&i)) {
                    let c = counts[labels[j]];
                    if c > best {
                        best = c;
                        candidates.clear();
                        candidates.push(labels[j]);
                    } else if c == best && !candidates.contains(&labels[j]) {
                        candidates.push(labels[j]);
                    }
                }
                // Reset touched counters.
                counts[labels[i]] = 0;
                for &j in &neighbors[i] {
                    counts[labels[j]] = 0;
                }
                let pick = if candidates.len() == 1 {
                    candidates[0]
                } else {
                    candidates.sort_unstable();
                    candidates[rng.random_range(0..candidates.len())]
                };
                if pick != labels[i] {
                    changed = true;
                }
                next[i] = pick;
            }
            labels = next;
            if !changed {
                break;
            }
        }
    }
    // Merge undersized communities into one outlier community.
    let mut size = alloc::vec![0usize; n];
    for &label in &labels {
        size[label] += 1;
    }
    let outlier = n;
    for label in &mut labels {
        if size[*label] < floor {
            *label = outlier;
        }
    }
    CommunityAssignment::from_raw(labels, AssignmentSource::Detected, edgeless)
}

/// The within-community empirical rank of node `i`'s score:
/// #{j in the community : s_j ≤ s_i} / community size, over the full score
/// vector (one entry per node).
pub fn community_rank_score(
    scores: &[f64],
    assignment: &CommunityAssignment,
    i: usize,
) -> Result<f64> {
    if scores.len() != assignment.node_count() {
        return Err(Error::invalid_config(
            "scores",
            "one score per node required",
        ));
    }
    if i >= scores.len() {
        return Err(Error::invalid_config("i", "node index out of range"));
    }
    let label = assignment.labels[i];
    let mut size = 0usize;
    let mut at_or_below = 0usize;
    for (j, &s) in scores.iter().enumerate() {
        if assignment.labels[j] == label {
            size += 1;
            if s <= scores[i] {
                at_or_below += 1;
            }
        }
    }
    Ok(at_or_below as f64 / size as f64)
}

/// The pooled rank threshold Q(1−α) over the observed nodes' within-
/// community ranks (uniform masses plus one +∞ atom). Ranks count only
/// observed nodes, so unobserved test nodes never affect it.
pub fn graphcp_threshold(
    assignment: &CommunityAssignment,
    calib_scores: &[f64],
    level: Level,
) -> Result<f64> {
    let n = calib_scores.len();
    if n == 0 || n > assignment.node_count() {
        return Err(Error::degenerate(
            "calibration scores must cover a nonempty observed prefix",
        ));
    }
    let ranks = observed_ranks(assignment, calib_scores);
    WeightedScoreSample::uniform(ranks).map(|sample| sample.quantile(level))
}

/// Within-community ranks of the observed prefix, counting observed
/// community members only.
fn observed_ranks(assignment: &CommunityAssignment, calib_scores: &[f64]) -> Vec<f64> {
    let n = calib_scores.len();
    let mut ranks = Vec::with_capacity(n);
    for i in 0..n {
        let label = assignment.labels[i];
        let mut size = 0usize;
        let mut at_or_below = 0usize;
        for j in 0..n {
            if assignment.labels[j] == label {
                size += 1;
                if calib_scores[j] <= calib_scores[i] {
                    at_or_below += 1;
                }
            }
        }
        ranks.push(at_or_below as f64 / size as f64);
    }
    ranks
}

/// Whether calibration ranks are held fixed (fast) or recomputed with the
/// trial response included (exact).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// Only the test node's rank includes the trial response; the other
    /// ranks shift by at most 1/m and are left as computed.
    Fast,
    /// All ranks in the test node's community are recomputed per trial.
    Exact,
}

/// The community-conditional prediction region for one unobserved test
/// node, by grid inversion of the rank comparison.
pub fn graphcp_region<F>(
    assignment: &CommunityAssignment,
    calib_scores: &[f64],
    test_node: usize,
    test_score: F,
    level: Level,
    grid: &[f64],
    mode: GraphMode,
) -> Result<PredictionRegion>
where
    F: Fn(f64) -> f64,
{
    let n = calib_scores.len();
    if test_node < n || test_node >= assignment.node_count() {
        return Err(Error::invalid_config(
            "test_node",
            "test node must be an unobserved node",
        ));
    }
    let label = assignment.labels[test_node];
    // Sorted scores of the observed members of the test community.
    let mut community: Vec<f64> = (0..n)
        .filter(|&j| assignment.labels[j] == label)
        .map(|j| calib_scores[j])
        .collect();
    community.sort_unstable_by(f64::total_cmp);
    let m = community.len();

    let mut accepted = Vec::with_capacity(grid.len());
    match mode {
        GraphMode::Fast => {
            let q = graphcp_threshold(assignment, calib_scores, level)?;
            for &y in grid {
                let s = test_score(y);
                let below = community.partition_point(|&v| v <= s);
                let rank = (below + 1) as f64 / (m + 1) as f64;
                accepted.push(rank <= q);
            }
        }
        GraphMode::Exact => {
            let base_ranks = observed_ranks(assignment, calib_scores);
            // Ranks outside the test community never change; inside, the
            // trial score adds one unit of denominator and at most one of
            // numerator.
            for &y in grid {
                let s = test_score(y);
                let mut ranks = Vec::with_capacity(n);
                for i in 0..n {
                    if assignment.labels[i] == label {
                        let below = community.partition_point(|&v| v <= calib_scores[i]);
                        let extra = usize::from(s <= calib_scores[i]);
                        ranks.push((below + extra) as f64 / (m + 1) as f64);
                    } else {
                        ranks.push(base_ranks[i]);
                    }
                }
                let q = WeightedScoreSample::uniform(ranks)?.quantile(level);
                let below = community.partition_point(|&v| v <= s);
                let rank = (below + 1) as f64 / (m + 1) as f64;
                accepted.push(rank <= q);
            }
        }
    }
    PredictionRegion::from_grid(grid, &accepted)
}

/// Misclustering proportion against reference labels: each detected
/// community is mapped to its majority reference label, and the rate is the
/// fraction of nodes whose mapped label disagrees with the reference.
pub fn misclustering(assignment: &CommunityAssignment, reference: &[usize]) -> Result<f64> {
    let n = assignment.node_count();
    if reference.len() != n {
        return Err(Error::invalid_config(
            "reference",
            "one reference label per node required",
        ));
    }
    let n_ref = reference.iter().copied().max().map_or(0, |m| m + 1);
    let mut mismatched = 0usize;
    for community in assignment.members() {
        let mut counts = alloc::vec![0usize; n_ref];
        for &node in &community {
            counts[reference[node]] += 1;
        }
        let majority = counts.iter().copied().max().unwrap_or(0);
        mismatched += community.len() - majority;
    }
    Ok(mismatched as f64 / n as f64)
}
