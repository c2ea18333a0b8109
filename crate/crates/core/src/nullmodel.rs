//! Randomized-relocation null model.
//!
//! Each community's home-work journeys are summarized by histograms of
//! distance and direction (degrees counterclockwise from East). Simulated
//! workplaces keep every user's home, draw a displacement from the
//! community's histograms and snap the landing point to the nearest tower.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Point, SiteIndex, TowerId};
use crate::ingest::UserAnchor;
use crate::segregation::{counts_matrix, isolation_index, mean_std_by_column};

/// Fixed-width histogram; bin `i` covers `[i·w, (i+1)·w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub masses: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl Histogram {
    fn from_counts(bin_width: f64, counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let masses: Vec<f64> = if total == 0 {
            vec![0.0; counts.len()]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        let mut acc = 0u64;
        let cdf = counts
            .iter()
            .map(|&c| {
                acc += c;
                if total == 0 {
                    0.0
                } else {
                    acc as f64 / total as f64
                }
            })
            .collect();
        Histogram {
            bin_width,
            masses,
            cdf,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.last().is_none_or(|&c| c == 0.0)
    }

    /// `(low, high, mass)` per bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.masses.iter().enumerate().map(|(i, &m)| {
            (i as f64 * self.bin_width, (i + 1) as f64 * self.bin_width, m)
        })
    }

    /// Mean using bin midpoints.
    pub fn mean(&self) -> f64 {
        self.bins().map(|(lo, hi, m)| 0.5 * (lo + hi) * m).sum()
    }

    fn draw_bin(&self, u: f64) -> usize {
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1)
    }

    /// Bin by mass, then uniform within the bin.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let bin = self.draw_bin(rng.random::<f64>());
        (bin as f64 + rng.random::<f64>()) * self.bin_width
    }
}

/// Journey statistics of one community.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityJourneys {
    pub n: usize,
    /// Users with home tower = work tower (zero displacement).
    pub n_self_loops: usize,
    /// Histogram of positive distances, meters.
    pub distance: Histogram,
    /// Histogram of directions in degrees over [0, 360).
    pub angle: Histogram,
    /// Joint histogram of positive journeys, row-major `[distance bin][angle bin]`.
    pub joint: Histogram,
    /// Sample mean and population standard deviation of all distances,
    /// self-loops included as zero.
    pub mean_distance: f64,
    pub std_distance: f64,
}

impl CommunityJourneys {
    pub fn zero_mass(&self) -> f64 {
        self.n_self_loops as f64 / self.n as f64
    }

    /// Mean distance implied by the histogram (zero mass included).
    pub fn histogram_mean_distance(&self) -> f64 {
        (1.0 - self.zero_mass()) * self.distance.mean()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub bin_width_dist: f64,
    pub bin_width_angle: f64,
    pub communities: Vec<CommunityJourneys>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub bin_width_dist: f64,
    pub bin_width_angle: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bin_width_dist: 500.0,
            bin_width_angle: 10.0,
        }
    }
}

/// Direction of `to - from` in degrees counterclockwise from East, in [0, 360).
pub fn direction_deg(from: Point, to: Point) -> f64 {
    let mut a = (to.y - from.y).atan2(to.x - from.x).to_degrees();
    if a < 0.0 {
        a += 360.0;
    }
    if a >= 360.0 {
        a = 0.0;
    }
    a
}

fn community_of(a: &UserAnchor, n: usize) -> Result<usize> {
    match a.community {
        Some(c) if c < n => Ok(c),
        Some(c) => Err(Error::UnknownCommunity(c)),
        None => Err(Error::Unlabeled(a.user_id.clone())),
    }
}

fn site(sites: &SiteIndex, t: &TowerId) -> Result<Point> {
    sites.position(t).ok_or_else(|| Error::UnknownTower(t.0.clone()))
}

pub fn fit_distributions(
    anchors: &[UserAnchor],
    sites: &SiteIndex,
    n_communities: usize,
    cfg: FitConfig,
) -> Result<TrajectoryStats> {
    if !(cfg.bin_width_dist > 0.0 && cfg.bin_width_angle > 0.0 && cfg.bin_width_angle <= 360.0) {
        return Err(Error::Config("bin widths must be positive (angle at most 360)".into()));
    }
    let n_angle = (360.0 / cfg.bin_width_angle).ceil() as usize;
    let mut journeys: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_communities];
    let mut self_loops = vec![0usize; n_communities];
    for a in anchors {
        let c = community_of(a, n_communities)?;
        let h = site(sites, &a.home_tower)?;
        let w = site(sites, &a.work_tower)?;
        if a.is_self_loop() {
            self_loops[c] += 1;
        } else {
            journeys[c].push((h.dist(w), direction_deg(h, w)));
        }
    }
    let mut out = Vec::with_capacity(n_communities);
    for (c, js) in journeys.into_iter().enumerate() {
        let n = js.len() + self_loops[c];
        if n == 0 {
            return Err(Error::EmptyCommunity(c));
        }
        let n_dist = js
            .iter()
            .map(|&(d, _)| (d / cfg.bin_width_dist) as usize + 1)
            .max()
            .unwrap_or(1);
        let mut dist = vec![0u64; n_dist];
        let mut ang = vec![0u64; n_angle];
        let mut joint = vec![0u64; n_dist * n_angle];
        for &(d, t) in &js {
            let i = (d / cfg.bin_width_dist) as usize;
            let j = ((t / cfg.bin_width_angle) as usize).min(n_angle - 1);
            dist[i] += 1;
            ang[j] += 1;
            joint[i * n_angle + j] += 1;
        }
        let mean = js.iter().map(|j| j.0).sum::<f64>() / n as f64;
        let var = (js.iter().map(|j| (j.0 - mean).powi(2)).sum::<f64>()
            + self_loops[c] as f64 * mean * mean)
            / n as f64;
        out.push(CommunityJourneys {
            n,
            n_self_loops: self_loops[c],
            distance: Histogram::from_counts(cfg.bin_width_dist, &dist),
            angle: Histogram::from_counts(cfg.bin_width_angle, &ang),
            joint: Histogram::from_counts(1.0, &joint),
            mean_distance: mean,
            std_distance: var.sqrt(),
        });
    }
    Ok(TrajectoryStats {
        bin_width_dist: cfg.bin_width_dist,
        bin_width_angle: cfg.bin_width_angle,
        communities: out,
    })
}

/// How distance and direction are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// Independently from the two marginal histograms.
    #[default]
    Marginal,
    /// Together from the joint distance-direction histogram.
    Joint,
}

impl TrajectoryStats {
    /// Draws a displacement `(distance, direction°)` for `community`;
    /// `None` means zero displacement.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        community: usize,
        mode: DrawMode,
        rng: &mut R,
    ) -> Option<(f64, f64)> {
        let j = &self.communities[community];
        if rng.random::<f64>() < j.zero_mass() || j.distance.is_empty() {
            return None;
        }
        Some(match mode {
            DrawMode::Marginal => (j.distance.sample(rng), j.angle.sample(rng)),
            DrawMode::Joint => {
                let n_angle = j.angle.masses.len();
                let cell = j.joint.draw_bin(rng.random::<f64>());
                let (di, ai) = (cell / n_angle, cell % n_angle);
                (
                    (di as f64 + rng.random::<f64>()) * self.bin_width_dist,
                    (ai as f64 + rng.random::<f64>()) * self.bin_width_angle,
                )
            }
        })
    }
}

/// Simulated work tower index (into `sites`) for every anchor.
fn relocate_indices<R: Rng + ?Sized>(
    homes: &[(usize, Point, usize)],
    stats: &TrajectoryStats,
    sites: &SiteIndex,
    mode: DrawMode,
    rng: &mut R,
) -> Vec<usize> {
    homes
        .iter()
        .map(|&(c, home, home_idx)| match stats.draw(c, mode, rng) {
            None => home_idx,
            Some((d, theta)) => {
                let (s, co) = theta.to_radians().sin_cos();
                let p = Point::new(home.x + d * co, home.y + d * s);
                sites.nearest(p).expect("non-empty index")
            }
        })
        .collect()
}

fn prepare_homes(
    anchors: &[UserAnchor],
    stats: &TrajectoryStats,
    sites: &SiteIndex,
) -> Result<Vec<(usize, Point, usize)>> {
    anchors
        .iter()
        .map(|a| {
            let c = community_of(a, stats.communities.len())?;
            let idx = sites
                .index_of(&a.home_tower)
                .ok_or_else(|| Error::UnknownTower(a.home_tower.0.clone()))?;
            Ok((c, sites.point(idx), idx))
        })
        .collect()
}

/// New work towers drawn from each user's community journey statistics.
/// User ids, homes and community labels are carried over unchanged.
pub fn simulate_relocation<R: Rng + ?Sized>(
    anchors: &[UserAnchor],
    stats: &TrajectoryStats,
    sites: &SiteIndex,
    mode: DrawMode,
    rng: &mut R,
) -> Result<Vec<UserAnchor>> {
    let homes = prepare_homes(anchors, stats, sites)?;
    let work = relocate_indices(&homes, stats, sites, mode, rng);
    Ok(anchors
        .iter()
        .zip(work)
        .map(|(a, w)| UserAnchor {
            work_tower: sites.id(w).clone(),
            ..a.clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SIIResult {
    pub reps: usize,
    pub seed: u64,
    pub mode: DrawMode,
    /// `values[community][replication]`.
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation (divisor = reps).
    pub std: Vec<f64>,
}

/// Generator for replication `rep`: stream `rep` of the ChaCha8 generator
/// seeded with `seed`, so replications never share random numbers.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Simulated isolation index per community over `reps` relocations.
pub fn sii_experiment(
    anchors: &[UserAnchor],
    stats: &TrajectoryStats,
    sites: &SiteIndex,
    reps: usize,
    seed: u64,
    mode: DrawMode,
) -> Result<SIIResult> {
    if reps < 2 {
        return Err(Error::Config(format!("reps must be at least 2, got {reps}")));
    }
    let n_comm = stats.communities.len();
    let homes = prepare_homes(anchors, stats, sites)?;
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = replication_rng(seed, r);
            let work = relocate_indices(&homes, stats, sites, mode, &mut rng);
            let simulated: Vec<UserAnchor> = anchors
                .iter()
                .zip(work)
                .map(|(a, w)| UserAnchor {
                    work_tower: sites.id(w).clone(),
                    ..a.clone()
                })
                .collect();
            let m = counts_matrix(&simulated, n_comm)?;
            (0..n_comm).map(|c| isolation_index(&m, c)).collect()
        })
        .collect::<Result<_>>()?;
    let (mean, std) = mean_std_by_column(&per_rep, n_comm);
    let values = (0..n_comm)
        .map(|c| per_rep.iter().map(|r| r[c]).collect())
        .collect();
    Ok(SIIResult {
        reps,
        seed,
        mode,
        values,
        mean,
        std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZDistance {
    pub z: f64,
    pub segregated: bool,
}

/// `|rii - mean| / std`, flagged segregated when RII exceeds the simulated
/// mean by more than `threshold` deviations. Zero spread gives an infinite
/// separation unless RII equals the mean exactly.
pub fn z_distance(rii: f64, mean: f64, std: f64, threshold: f64) -> ZDistance {
    let diff = (rii - mean).abs();
    let z = if std > 0.0 {
        diff / std
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    ZDistance {
        z,
        segregated: rii > mean && z > threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(u: &str, h: &str, w: &str, c: usize) -> UserAnchor {
        let mut a = UserAnchor::new(u, h, w);
        a.community = Some(c);
        a
    }

    fn index(pts: &[(&str, f64, f64)]) -> SiteIndex {
        SiteIndex::new(pts.iter().map(|&(id, x, y)| (TowerId::from(id), Point::new(x, y))))
    }

    #[test]
    fn direction_convention() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(direction_deg(o, Point::new(1.0, 0.0)), 0.0);
        assert_eq!(direction_deg(o, Point::new(0.0, 1.0)), 90.0);
        assert_eq!(direction_deg(o, Point::new(-1.0, 0.0)), 180.0);
        assert_eq!(direction_deg(o, Point::new(0.0, -1.0)), 270.0);
        assert!(direction_deg(o, Point::new(1.0, -1e-300)) < 360.0);
    }

    #[test]
    fn east_journeys_bin_placement() {
        let sites = index(&[("h", 0.0, 0.0), ("w", 3000.0, 0.0)]);
        let anchors: Vec<_> = (0..5).map(|i| labeled(&format!("u{i}"), "h", "w", 0)).collect();
        let s = fit_distributions(&anchors, &sites, 1, FitConfig::default()).unwrap();
        let j = &s.communities[0];
        // 3000 m is the lower edge of bin [3000, 3500)
        assert_eq!(j.distance.masses.len(), 7);
        assert_eq!(j.distance.masses[6], 1.0);
        assert_eq!(j.angle.masses[0], 1.0);
        assert_eq!(j.angle.masses.len(), 36);
        assert_eq!(j.mean_distance, 3000.0);
    }

    #[test]
    fn north_is_ninety_degrees() {
        let sites = index(&[("h", 0.0, 0.0), ("w", 0.0, 1200.0)]);
        let s = fit_distributions(&[labeled("u", "h", "w", 0)], &sites, 1, FitConfig::default()).unwrap();
        assert_eq!(s.communities[0].angle.masses[9], 1.0);
    }

    #[test]
    fn fit_errors() {
        let sites = index(&[("h", 0.0, 0.0)]);
        let a = labeled("u", "h", "h", 0);
        assert!(matches!(
            fit_distributions(&[a.clone()], &sites, 2, FitConfig::default()),
            Err(Error::EmptyCommunity(1))
        ));
        let b = labeled("v", "h", "nowhere", 0);
        assert!(matches!(
            fit_distributions(&[b], &sites, 1, FitConfig::default()),
            Err(Error::UnknownTower(_))
        ));
    }

    #[test]
    fn zero_distance_keeps_home() {
        let sites = index(&[("a", 0.0, 0.0), ("b", 100.0, 0.0), ("c", 0.0, 100.0)]);
        let anchors = vec![labeled("u", "a", "a", 0), labeled("v", "b", "b", 0), labeled("w", "c", "c", 0)];
        let s = fit_distributions(&anchors, &sites, 1, FitConfig::default()).unwrap();
        assert_eq!(s.communities[0].zero_mass(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sim = simulate_relocation(&anchors, &s, &sites, DrawMode::Marginal, &mut rng).unwrap();
        assert_eq!(sim, anchors);
        let r = sii_experiment(&anchors, &s, &sites, 5, 3, DrawMode::Marginal).unwrap();
        assert_eq!(r.std[0], 0.0);
        assert!(r.values[0].iter().all(|&v| v == r.values[0][0]));
    }

    #[test]
    fn relocation_follows_direction() {
        // journeys all due East by 1000 m (bin [1000, 1000 + w) with tiny w)
        let sites = index(&[("h", 0.0, 0.0), ("e", 1000.0, 0.0), ("n", 0.0, 1000.0), ("x", 5000.0, 5000.0)]);
        let anchors: Vec<_> = (0..50).map(|i| labeled(&format!("u{i}"), "h", "e", 0)).collect();
        let cfg = FitConfig {
            bin_width_dist: 1.0,
            bin_width_angle: 1.0,
        };
        let s = fit_distributions(&anchors, &sites, 1, cfg).unwrap();
        for mode in [DrawMode::Marginal, DrawMode::Joint] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let sim = simulate_relocation(&anchors, &s, &sites, mode, &mut rng).unwrap();
            assert!(sim.iter().all(|a| a.work_tower.0 == "e" && a.home_tower.0 == "h"));
        }
        let north: Vec<_> = (0..50).map(|i| labeled(&format!("u{i}"), "h", "n", 0)).collect();
        let s = fit_distributions(&north, &sites, 1, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sim = simulate_relocation(&north, &s, &sites, DrawMode::Marginal, &mut rng).unwrap();
        assert!(sim.iter().all(|a| a.work_tower.0 == "n"));
    }

    #[test]
    fn replications_are_reproducible_and_distinct() {
        let sites = index(&[("a", 0.0, 0.0), ("b", 800.0, 0.0), ("c", 0.0, 900.0), ("d", -700.0, -100.0)]);
        let towers = ["a", "b", "c", "d"];
        let anchors: Vec<_> = (0..40)
            .map(|i| labeled(&format!("u{i}"), towers[i % 4], towers[(i / 4) % 4], i % 2))
            .collect();
        let s = fit_distributions(&anchors, &sites, 2, FitConfig::default()).unwrap();
        let r1 = sii_experiment(&anchors, &s, &sites, 20, 11, DrawMode::Marginal).unwrap();
        let r2 = sii_experiment(&anchors, &s, &sites, 20, 11, DrawMode::Marginal).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.std.iter().all(|&s| s > 0.0));
        assert!(sii_experiment(&anchors, &s, &sites, 1, 11, DrawMode::Marginal).is_err());
        // distinct streams give distinct draws
        let a: f64 = replication_rng(11, 0).random();
        let b: f64 = replication_rng(11, 1).random();
        assert_ne!(a, b);
    }

    #[test]
    fn z_examples() {
        let z = z_distance(0.3, 0.3, 0.01, 3.0);
        assert_eq!((z.z, z.segregated), (0.0, false));
        let z = z_distance(0.359, 0.259, 0.0013, 3.0);
        assert!((z.z - 76.923).abs() < 1e-3 && z.segregated);
        let z = z_distance(0.159, 0.191, 0.0016, 3.0);
        assert!((z.z - 20.0).abs() < 1e-9 && !z.segregated);
        let z = z_distance(0.5, 0.4, 0.0, 3.0);
        assert!(z.z.is_infinite() && z.segregated);
        assert_eq!(z_distance(0.4, 0.4, 0.0, 3.0).z, 0.0);
    }
}
