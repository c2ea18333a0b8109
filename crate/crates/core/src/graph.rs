//! Home-work tower network, modularity, Louvain communities, pruning and
//! daily-vs-aggregate retention.

use std::collections::{BTreeMap, HashMap};

use chrono::Weekday;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::TowerId;
use crate::ingest::{weekday_bit, UserAnchor};

/// Undirected weighted tower graph. Edge weight = number of users whose
/// {home, work} equals the pair; self-loops come from home = work.
#[derive(Debug, Clone, PartialEq)]
pub struct HWNetwork {
    nodes: Vec<TowerId>,
    index: HashMap<TowerId, usize>,
    edges: BTreeMap<(usize, usize), u64>,
    strength: Vec<u64>,
    total_weight: u64,
}

impl HWNetwork {
    /// Builds from `(a, b, weight)` triples; repeated pairs (in either
    /// orientation) are summed and zero weights ignored.
    pub fn from_edges<I, T>(edges: I) -> Self
    where
        I: IntoIterator<Item = (T, T, u64)>,
        T: Into<TowerId>,
    {
        let raw: Vec<(TowerId, TowerId, u64)> = edges
            .into_iter()
            .filter(|e| e.2 > 0)
            .map(|(a, b, w)| (a.into(), b.into(), w))
            .collect();
        let mut nodes: Vec<TowerId> = raw
            .iter()
            .flat_map(|(a, b, _)| [a.clone(), b.clone()])
            .collect();
        nodes.sort();
        nodes.dedup();
        let index: HashMap<TowerId, usize> =
            nodes.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut edges = BTreeMap::new();
        let mut strength = vec![0u64; nodes.len()];
        let mut total_weight = 0;
        for (a, b, w) in raw {
            let (i, j) = (index[&a], index[&b]);
            let key = (i.min(j), i.max(j));
            *edges.entry(key).or_insert(0) += w;
            strength[i] += w;
            strength[j] += w;
            total_weight += w;
        }
        HWNetwork {
            nodes,
            index,
            edges,
            strength,
            total_weight,
        }
    }

    pub fn nodes(&self) -> &[TowerId] {
        &self.nodes
    }

    pub fn node_index(&self, t: &TowerId) -> Option<usize> {
        self.index.get(t).copied()
    }

    /// Edges as `(a, b, weight)` with `a <= b`, ordered by node index.
    pub fn edges(&self) -> impl Iterator<Item = (&TowerId, &TowerId, u64)> + '_ {
        self.edges
            .iter()
            .map(|(&(i, j), &w)| (&self.nodes[i], &self.nodes[j], w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, a: &TowerId, b: &TowerId) -> u64 {
        match (self.node_index(a), self.node_index(b)) {
            (Some(i), Some(j)) => self.edges.get(&(i.min(j), i.max(j))).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Node strength; a self-loop counts twice.
    pub fn strength(&self, t: &TowerId) -> u64 {
        self.node_index(t).map_or(0, |i| self.strength[i])
    }

    /// Total edge weight m (so that the strengths sum to 2m).
    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }
}

/// One edge per user from home to work tower. With `day_filter`, only users
/// observed on that weekday contribute.
pub fn build_hw_network(anchors: &[UserAnchor], day_filter: Option<Weekday>) -> HWNetwork {
    let mask = day_filter.map(weekday_bit);
    HWNetwork::from_edges(
        anchors
            .iter()
            .filter(|a| mask.is_none_or(|m| a.days_observed & m != 0))
            .map(|a| (a.home_tower.clone(), a.work_tower.clone(), 1)),
    )
}

/// Community assignment over a sorted node set. Labels are canonical:
/// 0 is the largest community, ties broken by lowest contained tower id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    nodes: Vec<TowerId>,
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    /// Canonicalizes arbitrary labels. Panics if lengths differ or a node repeats.
    pub fn from_labels(nodes: Vec<TowerId>, raw: &[usize]) -> Self {
        assert_eq!(nodes.len(), raw.len(), "one label per node");
        let mut pairs: Vec<(TowerId, usize)> = nodes.into_iter().zip(raw.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        assert!(
            pairs.windows(2).all(|w| w[0].0 != w[1].0),
            "duplicate node in partition"
        );
        // first occurrence in sorted order is the group's lowest id
        let mut groups: HashMap<usize, (usize, usize)> = HashMap::new();
        for (pos, (_, l)) in pairs.iter().enumerate() {
            let e = groups.entry(*l).or_insert((0, pos));
            e.0 += 1;
        }
        let mut order: Vec<(usize, usize, usize)> =
            groups.into_iter().map(|(l, (size, first))| (l, size, first)).collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let relabel: HashMap<usize, usize> =
            order.iter().enumerate().map(|(new, &(old, _, _))| (old, new)).collect();
        let sizes = order.iter().map(|o| o.1).collect();
        let (nodes, labels) = pairs.into_iter().map(|(t, l)| (t, relabel[&l])).unzip();
        Partition {
            nodes,
            labels,
            sizes,
        }
    }

    pub fn from_pairs<T: Into<TowerId>>(pairs: impl IntoIterator<Item = (T, usize)>) -> Self {
        let (nodes, labels): (Vec<TowerId>, Vec<usize>) =
            pairs.into_iter().map(|(t, l)| (t.into(), l)).unzip();
        Partition::from_labels(nodes, &labels)
    }

    pub fn singletons(nodes: &[TowerId]) -> Self {
        let labels: Vec<usize> = (0..nodes.len()).collect();
        Partition::from_labels(nodes.to_vec(), &labels)
    }

    pub fn nodes(&self) -> &[TowerId] {
        &self.nodes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_communities(&self) -> usize {
        self.sizes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn community_of(&self, t: &TowerId) -> Option<usize> {
        self.nodes.binary_search(t).ok().map(|i| self.labels[i])
    }

    pub fn members(&self, c: usize) -> impl Iterator<Item = &TowerId> + '_ {
        self.nodes
            .iter()
            .zip(&self.labels)
            .filter(move |(_, &l)| l == c)
            .map(|(t, _)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TowerId, usize)> + '_ {
        self.nodes.iter().zip(self.labels.iter().copied())
    }
}

fn labels_for(net: &HWNetwork, p: &Partition) -> Result<Vec<usize>> {
    if p.len() != net.nodes.len() {
        return Err(Error::PartitionMismatch(format!(
            "{} partition nodes vs {} network nodes",
            p.len(),
            net.nodes.len()
        )));
    }
    net.nodes
        .iter()
        .map(|t| {
            p.community_of(t)
                .ok_or_else(|| Error::PartitionMismatch(format!("node {t} unassigned")))
        })
        .collect()
}

/// Newman modularity with resolution `gamma`.
pub fn modularity_with_resolution(net: &HWNetwork, p: &Partition, gamma: f64) -> Result<f64> {
    if net.total_weight == 0 {
        return Err(Error::EmptyNetwork);
    }
    let labels = labels_for(net, p)?;
    let two_m = 2.0 * net.total_weight as f64;
    let mut internal = vec![0.0; p.n_communities()];
    let mut total = vec![0.0; p.n_communities()];
    for (&(i, j), &w) in &net.edges {
        if labels[i] == labels[j] {
            // A_ij + A_ji off the diagonal, A_ii = 2w on it
            internal[labels[i]] += 2.0 * w as f64;
        }
    }
    for (i, &k) in net.strength.iter().enumerate() {
        total[labels[i]] += k as f64;
    }
    Ok(internal
        .iter()
        .zip(&total)
        .map(|(&a, &t)| a / two_m - gamma * (t / two_m) * (t / two_m))
        .sum())
}

pub fn modularity(net: &HWNetwork, p: &Partition) -> Result<f64> {
    modularity_with_resolution(net, p, 1.0)
}

/// Working graph for the Louvain levels. `self_loops[i]` holds A_ii.
#[derive(Debug, Clone)]
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    strength: Vec<f64>,
    two_m: f64,
}

impl LevelGraph {
    fn from_network(net: &HWNetwork) -> Self {
        let n = net.nodes.len();
        let mut adj = vec![Vec::new(); n];
        let mut self_loops = vec![0.0; n];
        for (&(i, j), &w) in &net.edges {
            let w = w as f64;
            if i == j {
                self_loops[i] += 2.0 * w;
            } else {
                adj[i].push((j, w));
                adj[j].push((i, w));
            }
        }
        let strength: Vec<f64> = net.strength.iter().map(|&k| k as f64).collect();
        LevelGraph {
            adj,
            self_loops,
            two_m: 2.0 * net.total_weight as f64,
            strength,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn quality(&self, comm: &[usize], n_comm: usize, gamma: f64) -> f64 {
        let mut internal = vec![0.0; n_comm];
        let mut total = vec![0.0; n_comm];
        for i in 0..self.len() {
            let c = comm[i];
            internal[c] += self.self_loops[i];
            total[c] += self.strength[i];
            for &(j, w) in &self.adj[i] {
                if comm[j] == c {
                    internal[c] += w;
                }
            }
        }
        internal
            .iter()
            .zip(&total)
            .map(|(&a, &t)| a / self.two_m - gamma * (t / self.two_m).powi(2))
            .sum()
    }

    fn aggregate(&self, comm: &[usize], n_comm: usize) -> LevelGraph {
        let mut self_loops = vec![0.0; n_comm];
        let mut strength = vec![0.0; n_comm];
        let mut links: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_comm];
        for i in 0..self.len() {
            let c = comm[i];
            self_loops[c] += self.self_loops[i];
            strength[c] += self.strength[i];
            for &(j, w) in &self.adj[i] {
                let d = comm[j];
                if d == c {
                    // visited from both endpoints, giving the 2w of A_ii
                    self_loops[c] += w;
                } else {
                    *links[c].entry(d).or_insert(0.0) += w;
                }
            }
        }
        LevelGraph {
            adj: links.into_iter().map(|m| m.into_iter().collect()).collect(),
            self_loops,
            strength,
            two_m: self.two_m,
        }
    }
}

/// Minimum modularity gain (in units of the per-node gain expression) for a
/// move to count; guards against cycling on floating ties.
const MOVE_EPS: f64 = 1e-12;

/// Local moving phase. Returns compact community labels and whether any
/// node changed community.
fn move_nodes(g: &LevelGraph, rng: &mut ChaCha8Rng, gamma: f64) -> (Vec<usize>, bool) {
    let n = g.len();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut total: Vec<f64> = g.strength.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut link_w = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut any_move = false;
    loop {
        let mut moved = false;
        for &i in &order {
            let c = comm[i];
            let k = g.strength[i];
            for &(j, w) in &g.adj[i] {
                let d = comm[j];
                if link_w[d] == 0.0 {
                    touched.push(d);
                }
                link_w[d] += w;
            }
            total[c] -= k;
            let gain = |d: usize, w: f64| w - gamma * total[d] * k / g.two_m;
            let mut best = c;
            let mut best_gain = gain(c, link_w[c]);
            for &d in &touched {
                let gd = gain(d, link_w[d]);
                if gd > best_gain + MOVE_EPS {
                    best = d;
                    best_gain = gd;
                }
            }
            total[best] += k;
            comm[i] = best;
            if best != c {
                moved = true;
            }
            for &d in &touched {
                link_w[d] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
        any_move = true;
    }
    let mut remap = vec![usize::MAX; n];
    let mut next = 0;
    for c in comm.iter_mut() {
        if remap[*c] == usize::MAX {
            remap[*c] = next;
            next += 1;
        }
        *c = remap[*c];
    }
    (comm, any_move)
}

#[derive(Debug, Clone)]
pub struct LouvainResult {
    pub partition: Partition,
    /// Modularity of `partition` at the requested resolution.
    pub modularity: f64,
    /// Modularity after each aggregation level, starting with singletons.
    pub level_modularity: Vec<f64>,
}

/// Multi-level greedy modularity maximization (Blondel et al.). The node
/// sweep order of every level is shuffled from `seed`.
pub fn louvain(net: &HWNetwork, seed: u64, resolution: f64) -> Result<LouvainResult> {
    if net.total_weight == 0 {
        return Err(Error::EmptyNetwork);
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Config(format!("resolution {resolution} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = LevelGraph::from_network(net);
    let n = g.len();
    let mut membership: Vec<usize> = (0..n).collect();
    let singles: Vec<usize> = (0..n).collect();
    let mut levels = vec![g.quality(&singles, n, resolution)];
    loop {
        let (comm, moved) = move_nodes(&g, &mut rng, resolution);
        if !moved {
            break;
        }
        let n_comm = comm.iter().max().map_or(0, |m| m + 1);
        let q = g.quality(&comm, n_comm, resolution);
        debug_assert!(
            q >= levels.last().copied().unwrap_or(f64::NEG_INFINITY) - 1e-9,
            "modularity decreased across a level"
        );
        levels.push(q);
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        g = g.aggregate(&comm, n_comm);
        if n_comm == 1 {
            break;
        }
    }
    let partition = Partition::from_labels(net.nodes.clone(), &membership);
    let modularity = modularity_with_resolution(net, &partition, resolution)?;
    Ok(LouvainResult {
        partition,
        modularity,
        level_modularity: levels,
    })
}

/// Drops communities smaller than `min_size`; returns the partition over the
/// remaining nodes (renumbered) and the discarded nodes in id order.
pub fn prune_small(p: &Partition, min_size: usize) -> (Partition, Vec<TowerId>) {
    let mut kept_nodes = Vec::new();
    let mut kept_labels = Vec::new();
    let mut discarded = Vec::new();
    for (t, l) in p.iter() {
        if p.sizes[l] >= min_size {
            kept_nodes.push(t.clone());
            kept_labels.push(l);
        } else {
            discarded.push(t.clone());
        }
    }
    (Partition::from_labels(kept_nodes, &kept_labels), discarded)
}

/// How daily communities are paired with aggregate communities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matching {
    /// Pairs by descending shared-node count, each side used at most once.
    #[default]
    Greedy,
    /// Maximum total overlap assignment (Hungarian method).
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retention {
    pub fraction: f64,
    pub shared_nodes: usize,
    /// `(daily label, aggregate label)` pairs.
    pub matches: Vec<(usize, usize)>,
}

/// Fraction of shared nodes whose daily community maps onto their aggregate
/// community after matching labels.
pub fn retention(daily: &Partition, aggregate: &Partition) -> Result<f64> {
    retention_with(daily, aggregate, Matching::Greedy).map(|r| r.fraction)
}

pub fn retention_with(
    daily: &Partition,
    aggregate: &Partition,
    matching: Matching,
) -> Result<Retention> {
    let mut overlap: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut shared = 0;
    for (t, d) in daily.iter() {
        if let Some(a) = aggregate.community_of(t) {
            *overlap.entry((d, a)).or_insert(0) += 1;
            shared += 1;
        }
    }
    if shared == 0 {
        return Err(Error::EmptyIntersection);
    }
    let matches = match matching {
        Matching::Greedy => {
            let mut pairs: Vec<((usize, usize), usize)> = overlap.iter().map(|(&k, &v)| (k, v)).collect();
            pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut used_d = vec![false; daily.n_communities()];
            let mut used_a = vec![false; aggregate.n_communities()];
            let mut out = Vec::new();
            for ((d, a), _) in pairs {
                if !used_d[d] && !used_a[a] {
                    used_d[d] = true;
                    used_a[a] = true;
                    out.push((d, a));
                }
            }
            out.sort();
            out
        }
        Matching::Optimal => {
            let nd = daily.n_communities();
            let na = aggregate.n_communities();
            let mut w = vec![vec![0i64; na]; nd];
            for (&(d, a), &c) in &overlap {
                w[d][a] = c as i64;
            }
            max_weight_assignment(&w)
                .into_iter()
                .filter(|&(d, a)| overlap.contains_key(&(d, a)))
                .collect()
        }
    };
    let retained: usize = matches.iter().map(|k| overlap.get(k).copied().unwrap_or(0)).sum();
    Ok(Retention {
        fraction: retained as f64 / shared as f64,
        shared_nodes: shared,
        matches,
    })
}

/// Hungarian method on a rectangular weight matrix, maximizing total weight.
/// Returns `(row, col)` pairs for rows that received a real column.
fn max_weight_assignment(w: &[Vec<i64>]) -> Vec<(usize, usize)> {
    let rows = w.len();
    let cols = w.first().map_or(0, |r| r.len());
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max = w.iter().flatten().copied().max().unwrap_or(0);
    let cost = |i: usize, j: usize| -> i64 {
        if i < rows && j < cols {
            max - w[i][j]
        } else {
            max
        }
    };
    // potentials formulation, 1-indexed with a virtual column 0
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0 && p[j] - 1 < rows && j - 1 < cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    out.sort();
    out
}
