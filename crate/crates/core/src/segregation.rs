//! Isolation index of home communities at their workplaces, its well-mixed
//! benchmark, and community SEL composition.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{SelProfile, TowerCell, TowerId};
use crate::graph::Partition;
use crate::ingest::UserAnchor;
use crate::nullmodel::{z_distance, SIIResult};

/// User counts by home community (rows) and workplace unit (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct CountsMatrix {
    units: Vec<TowerId>,
    counts: Vec<Vec<u64>>,
    community_totals: Vec<u64>,
    unit_totals: Vec<u64>,
    total: u64,
}

impl CountsMatrix {
    /// `counts[community][unit]`; every row must have one entry per unit.
    pub fn from_counts(units: Vec<TowerId>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if let Some(row) = counts.iter().find(|r| r.len() != units.len()) {
            return Err(Error::Format(format!(
                "counts row has {} entries for {} units",
                row.len(),
                units.len()
            )));
        }
        let community_totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let mut unit_totals = vec![0u64; units.len()];
        for row in &counts {
            for (t, &c) in unit_totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        let total = community_totals.iter().sum();
        Ok(CountsMatrix {
            units,
            counts,
            community_totals,
            unit_totals,
            total,
        })
    }

    pub fn units(&self) -> &[TowerId] {
        &self.units
    }

    pub fn n_communities(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, community: usize, unit: usize) -> u64 {
        self.counts[community][unit]
    }

    pub fn row(&self, community: usize) -> &[u64] {
        &self.counts[community]
    }

    pub fn community_total(&self, community: usize) -> u64 {
        self.community_totals[community]
    }

    pub fn unit_total(&self, unit: usize) -> u64 {
        self.unit_totals[unit]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Every count multiplied by `k`.
    pub fn scaled(&self, k: u64) -> CountsMatrix {
        let counts = self
            .counts
            .iter()
            .map(|r| r.iter().map(|&c| c * k).collect())
            .collect();
        CountsMatrix::from_counts(self.units.clone(), counts).expect("same shape")
    }
}

/// Workplace unit used as the area unit of the isolation index.
#[derive(Debug, Clone, Copy)]
pub enum WorkUnit<'a> {
    /// The work tower itself.
    Tower,
    /// The community the work tower belongs to; workers at towers outside
    /// the partition keep their tower as unit.
    Community(&'a Partition),
}

fn unit_key(a: &UserAnchor, unit: WorkUnit<'_>) -> TowerId {
    match unit {
        WorkUnit::Tower => a.work_tower.clone(),
        WorkUnit::Community(p) => match p.community_of(&a.work_tower) {
            Some(c) => TowerId(format!("community:{c}")),
            None => a.work_tower.clone(),
        },
    }
}

/// Counts over work towers for anchors labeled with `0..n_communities`.
pub fn counts_matrix(anchors: &[UserAnchor], n_communities: usize) -> Result<CountsMatrix> {
    counts_matrix_with_units(anchors, n_communities, WorkUnit::Tower)
}

pub fn counts_matrix_with_units(
    anchors: &[UserAnchor],
    n_communities: usize,
    unit: WorkUnit<'_>,
) -> Result<CountsMatrix> {
    let mut cells: BTreeMap<TowerId, Vec<u64>> = BTreeMap::new();
    for a in anchors {
        let c = a.community.ok_or_else(|| Error::Unlabeled(a.user_id.clone()))?;
        if c >= n_communities {
            return Err(Error::UnknownCommunity(c));
        }
        cells
            .entry(unit_key(a, unit))
            .or_insert_with(|| vec![0; n_communities])[c] += 1;
    }
    let units: Vec<TowerId> = cells.keys().cloned().collect();
    let mut counts = vec![vec![0u64; units.len()]; n_communities];
    for (j, col) in cells.into_values().enumerate() {
        for (c, v) in col.into_iter().enumerate() {
            counts[c][j] = v;
        }
    }
    CountsMatrix::from_counts(units, counts)
}

/// Isolation index P = Σ_i (c_i / C)(c_i / T_i) of `community`.
pub fn isolation_index(m: &CountsMatrix, community: usize) -> Result<f64> {
    if community >= m.n_communities() {
        return Err(Error::UnknownCommunity(community));
    }
    let big_c = m.community_totals[community];
    if big_c == 0 {
        return Err(Error::EmptyCommunity(community));
    }
    let big_c = big_c as f64;
    Ok(m.counts[community]
        .iter()
        .zip(&m.unit_totals)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &t)| {
            let c = c as f64;
            (c / big_c) * (c / t as f64)
        })
        .sum())
}

/// Well-mixed value of the isolation index: the community's population share.
pub fn well_mixed_index(m: &CountsMatrix, community: usize) -> Result<f64> {
    if community >= m.n_communities() {
        return Err(Error::UnknownCommunity(community));
    }
    if m.total == 0 {
        return Err(Error::EmptyCommunity(community));
    }
    Ok(m.community_totals[community] as f64 / m.total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloIndex {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub reps: usize,
}

/// Monte Carlo well-mixed benchmark: every user gets a work unit drawn
/// uniformly from `units`, independent of home. Replication `r` uses stream
/// `r` of a generator seeded with `seed`.
pub fn well_mixed_mc(
    anchors: &[UserAnchor],
    n_communities: usize,
    units: &[TowerId],
    reps: usize,
    seed: u64,
) -> Result<MonteCarloIndex> {
    if units.is_empty() {
        return Err(Error::Config("no workplace units to draw from".into()));
    }
    if reps == 0 {
        return Err(Error::Config("reps must be positive".into()));
    }
    let labels: Vec<usize> = anchors
        .iter()
        .map(|a| match a.community {
            Some(c) if c < n_communities => Ok(c),
            Some(c) => Err(Error::UnknownCommunity(c)),
            None => Err(Error::Unlabeled(a.user_id.clone())),
        })
        .collect::<Result<_>>()?;
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut counts = vec![vec![0u64; units.len()]; n_communities];
            for &c in &labels {
                counts[c][rng.random_range(0..units.len())] += 1;
            }
            let m = CountsMatrix::from_counts(units.to_vec(), counts).expect("shape");
            (0..n_communities)
                .map(|c| isolation_index(&m, c).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let (mean, std) = mean_std_by_column(&per_rep, n_communities);
    Ok(MonteCarloIndex { mean, std, reps })
}

/// Mean and population standard deviation per column, summed in row order.
pub(crate) fn mean_std_by_column(rows: &[Vec<f64>], n_cols: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; n_cols];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; n_cols];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
}

/// Area-weighted mean of member-cell SEL profiles per community. Cells
/// without a profile are skipped; a community with none gets `None`.
pub fn community_sel(p: &Partition, cells: &[TowerCell]) -> Vec<Option<SelProfile>> {
    community_sel_weighted(p, cells, |c| c.cell.area())
}

/// As [`community_sel`] with caller-chosen cell weights (e.g. resident users).
pub fn community_sel_weighted(
    p: &Partition,
    cells: &[TowerCell],
    weight: impl Fn(&TowerCell) -> f64,
) -> Vec<Option<SelProfile>> {
    let mut acc = vec![[0.0f64; 5]; p.n_communities()];
    for cell in cells {
        let (Some(c), Some(sel)) = (p.community_of(&cell.tower_id), cell.sel) else {
            continue;
        };
        let w = weight(cell);
        for (a, f) in acc[c].iter_mut().zip(sel.fractions) {
            *a += w * f;
        }
    }
    acc.into_iter().map(SelProfile::from_weights).collect()
}

/// Resident users per home tower, for user-weighted SEL composition.
pub fn residents_by_tower(anchors: &[UserAnchor]) -> HashMap<TowerId, f64> {
    let mut m = HashMap::new();
    for a in anchors {
        *m.entry(a.home_tower.clone()).or_insert(0.0) += 1.0;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityIsolation {
    pub community: usize,
    pub n_users: u64,
    pub rii: f64,
    pub wii: f64,
    pub sii_mean: f64,
    pub sii_std: f64,
    /// Separation of RII from the simulated mean in simulated standard
    /// deviations; infinite when the simulations have no spread.
    pub z: f64,
    pub segregated: bool,
    pub sel: Option<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsolationReport {
    pub reps: usize,
    pub seed: u64,
    pub z_threshold: f64,
    pub communities: Vec<CommunityIsolation>,
}

impl IsolationReport {
    pub fn assemble(
        real: &CountsMatrix,
        wii: &[f64],
        sii: &SIIResult,
        sel: &[Option<SelProfile>],
        z_threshold: f64,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(real.n_communities());
        for c in 0..real.n_communities() {
            let rii = isolation_index(real, c)?;
            let z = z_distance(rii, sii.mean[c], sii.std[c], z_threshold);
            rows.push(CommunityIsolation {
                community: c,
                n_users: real.community_total(c),
                rii,
                wii: wii[c],
                sii_mean: sii.mean[c],
                sii_std: sii.std[c],
                z: z.z,
                segregated: z.segregated,
                sel: sel.get(c).copied().flatten().map(|s| s.fractions),
            });
        }
        Ok(IsolationReport {
            reps: sii.reps,
            seed: sii.seed,
            z_threshold,
            communities: rows,
        })
    }
}
