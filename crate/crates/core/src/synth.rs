//! Synthetic cities with planted communities, for end-to-end checks.
//!
//! Towers form one Gaussian cluster per planted community, with centroids on
//! a regular polygon. Users live at a tower of their community's cluster and
//! work inside it with probability `1 - mu`; otherwise the workplace is drawn
//! uniformly from all towers, so `mu = 1` is the well-mixed city.
//! Pings are laid out well inside the default home and work windows so that
//! anchor inference recovers the planted home and work towers exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compute_voronoi, urban_overlap_filter, Point, Polygon, SelBlock, SelLabel, Site, TowerId};
use crate::ingest::{PingRecord, UserAnchor};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_towers: usize,
    pub n_users: usize,
    pub n_communities: usize,
    /// Probability that a user's workplace is drawn uniformly from all
    /// towers instead of from their own cluster.
    pub mu: f64,
    /// Standard deviation of tower scatter around a cluster centroid, meters.
    /// Clusters are truncated at three deviations.
    pub cluster_spread: f64,
    /// Distance between neighbouring cluster centroids, in units of
    /// `cluster_spread`. 6 keeps the truncated clusters disjoint; smaller
    /// values let them interleave, down to a floor of 2. Default 4.
    pub cluster_separation: f64,
    /// Distance of cluster centroids from the city center; overrides
    /// `cluster_separation` when set.
    pub ring_radius: Option<f64>,
    /// Weeks of Monday-Friday pings, starting Monday 2015-03-02.
    pub n_weeks: u32,
    /// Probability of one extra evening ping at a random tower per day.
    pub noise_ping_prob: f64,
    /// Side length of the square census blocks, meters.
    pub block_size: f64,
    /// Probability that a block carries its community's dominant SEL label.
    pub sel_dominance: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_towers: 200,
            n_users: 5000,
            n_communities: 4,
            mu: 0.1,
            cluster_spread: 3400.0,
            cluster_separation: 4.0,
            ring_radius: None,
            n_weeks: 4,
            noise_ping_prob: 0.5,
            block_size: 2000.0,
            sel_dominance: 0.7,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_towers == 0 || self.n_users == 0 || self.n_communities == 0 || self.n_weeks == 0 {
            return bad("counts must be positive".into());
        }
        if self.n_towers < self.n_communities {
            return bad("need at least one tower per community".into());
        }
        if !(0.0..=1.0).contains(&self.mu) || !(0.0..=1.0).contains(&self.noise_ping_prob) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.sel_dominance) {
            return bad("sel_dominance must lie in [0, 1]".into());
        }
        if !(self.cluster_spread > 0.0 && self.block_size > 0.0) {
            return bad("lengths must be positive".into());
        }
        Ok(())
    }

    /// Ring radius putting neighbouring centroids `sep` spreads apart.
    fn ring_radius_for(&self, sep: f64) -> f64 {
        if self.n_communities == 1 {
            0.0
        } else {
            0.5 * sep * self.cluster_spread / (PI / self.n_communities as f64).sin()
        }
    }
}

/// Ground truth of a synthetic city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub tower_community: BTreeMap<TowerId, usize>,
    /// `(user_id, home_tower, work_tower, community)` in user order.
    pub users: Vec<(String, TowerId, TowerId, usize)>,
    /// Expected SEL label probabilities of each community's blocks.
    pub community_sel: Vec<[f64; 5]>,
    pub centroids: Vec<Point>,
}

impl Planted {
    /// Planted anchors labeled with their planted community.
    pub fn anchors(&self) -> Vec<UserAnchor> {
        self.users
            .iter()
            .map(|(u, h, w, c)| {
                let mut a = UserAnchor::new(u.clone(), h.clone(), w.clone());
                a.community = Some(*c);
                a
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub sites: Vec<Site>,
    pub urban: Polygon,
    pub blocks: Vec<SelBlock>,
    pub pings: Vec<PingRecord>,
    pub planted: Planted,
}

pub const TOWERS_FILE: &str = "towers.csv";
pub const URBAN_FILE: &str = "urban.geojson";
pub const BLOCKS_FILE: &str = "blocks.geojson";
pub const PINGS_FILE: &str = "pings.csv";
pub const PLANTED_FILE: &str = "planted.json";
pub const PIPELINE_FILE: &str = "pipeline.toml";

/// Pipeline config pointing at the files written by [`SynthCity::write_to`].
pub const PIPELINE_TOML: &str = "towers = \"towers.csv\"
urban = \"urban.geojson\"
blocks = \"blocks.geojson\"
pings = \"pings.csv\"
planted = \"planted.json\"
out_dir = \"out\"
";

impl SynthCity {
    /// Writes the pipeline inputs, `planted.json` and a matching
    /// `pipeline.toml` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        io::write_towers(&dir.join(TOWERS_FILE), &self.sites)?;
        io::write_urban(&dir.join(URBAN_FILE), &self.urban)?;
        io::write_blocks(&dir.join(BLOCKS_FILE), &self.blocks)?;
        io::write_pings(&dir.join(PINGS_FILE), &self.pings)?;
        io::write_json(&dir.join(PLANTED_FILE), &self.planted)?;
        let path = dir.join(PIPELINE_FILE);
        std::fs::write(&path, PIPELINE_TOML).map_err(|e| Error::io(&path, e))
    }
}

/// Towers evenly spaced on the square of half-size `r`, `n_side` per side.
fn guard_ring(r: f64, n_side: usize) -> Vec<Site> {
    let step = 2.0 * r / n_side as f64;
    let corners = [(-r, -r, 1.0, 0.0), (r, -r, 0.0, 1.0), (r, r, -1.0, 0.0), (-r, r, 0.0, -1.0)];
    let mut out = Vec::with_capacity(4 * n_side);
    for (x, y, dx, dy) in corners {
        for k in 0..n_side {
            let t = k as f64 * step;
            out.push(Site {
                tower_id: TowerId(format!("g{:04}", out.len())),
                point: Point::new(x + dx * t, y + dy * t),
            });
        }
    }
    out
}

fn sel_profile_for(c: usize, dominance: f64) -> [f64; 5] {
    let mut p = [(1.0 - dominance) / 4.0; 5];
    p[c % 5] = dominance;
    p
}

fn at(date: NaiveDate, minutes: i64) -> NaiveDateTime {
    date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::minutes(minutes)
}

/// Closest allowed centroid spacing, in cluster spreads.
const MIN_SEPARATION: f64 = 2.0;

pub fn generate_city(cfg: &SynthConfig) -> Result<SynthCity> {
    cfg.validate()?;
    let k = cfg.n_communities;
    let min_radius = cfg.ring_radius_for(MIN_SEPARATION);
    let radius = cfg.ring_radius.unwrap_or(cfg.ring_radius_for(cfg.cluster_separation));
    if radius < min_radius {
        return Err(Error::InfeasibleGeometry(format!(
            "ring radius {radius} m merges clusters of spread {} m (need at least {min_radius:.1} m)",
            cfg.cluster_spread
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centroids: Vec<Point> = (0..k)
        .map(|c| {
            let a = 2.0 * PI * c as f64 / k as f64;
            Point::new(radius * a.cos(), radius * a.sin())
        })
        .collect();

    // towers, split as evenly as possible across clusters
    let normal = Normal::new(0.0, cfg.cluster_spread).expect("positive spread");
    let trunc = 3.0 * cfg.cluster_spread;
    let min_sep = cfg.cluster_spread * 1e-3;
    let width = (cfg.n_towers - 1).to_string().len();
    let mut sites: Vec<Site> = Vec::with_capacity(cfg.n_towers);
    let mut tower_community = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..cfg.n_towers {
        let c = i % k;
        let center = centroids[c];
        let mut tries = 0;
        let p = loop {
            tries += 1;
            if tries > 10_000 {
                return Err(Error::InfeasibleGeometry("cannot place distinct towers".into()));
            }
            let (dx, dy) = (normal.sample(&mut rng), normal.sample(&mut rng));
            if dx.hypot(dy) > trunc {
                continue;
            }
            let p = Point::new(center.x + dx, center.y + dy);
            if sites.iter().all(|s| s.point.dist(p) > min_sep) {
                break p;
            }
        };
        let id = TowerId(format!("t{i:0width$}"));
        tower_community.insert(id.clone(), c);
        members[c].push(i);
        sites.push(Site { tower_id: id, point: p });
    }

    // Urban square plus a ring of guard towers just outside it. Without
    // them the outermost cells reach into the 10% bounding margin and keep
    // under 70% of their area inside the city at any scale. Guards carry no
    // users and are dropped by the overlap filter.
    let extent = radius + trunc;
    let half = 1.5 * extent;
    let urban = Polygon::rect(-half, -half, half, half);
    let bounds = urban.bbox().expanded(0.10).to_polygon();
    let mut n_side = 16;
    loop {
        let mut all = sites.clone();
        all.extend(guard_ring(1.1 * half, n_side));
        let cells = compute_voronoi(&all, &bounds)?;
        let kept = urban_overlap_filter(&cells, &urban, 0.70)?;
        let planted_kept = kept.iter().filter(|c| tower_community.contains_key(&c.tower_id)).count();
        if planted_kept == sites.len() {
            sites = all;
            break;
        }
        if n_side >= 1024 {
            return Err(Error::InfeasibleGeometry(
                "guard ring cannot keep every planted tower inside the city".into(),
            ));
        }
        n_side *= 2;
    }

    let n_blocks = (2.0 * half / cfg.block_size).ceil() as usize;
    let mut blocks = Vec::with_capacity(n_blocks * n_blocks);
    let profiles: Vec<[f64; 5]> = (0..k).map(|c| sel_profile_for(c, cfg.sel_dominance)).collect();
    for by in 0..n_blocks {
        for bx in 0..n_blocks {
            let x0 = -half + bx as f64 * cfg.block_size;
            let y0 = -half + by as f64 * cfg.block_size;
            let x1 = (x0 + cfg.block_size).min(half);
            let y1 = (y0 + cfg.block_size).min(half);
            let mid = Point::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
            let c = (0..k)
                .min_by(|&a, &b| mid.dist2(centroids[a]).total_cmp(&mid.dist2(centroids[b])))
                .expect("k > 0");
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut label = SelLabel::S5;
            for (l, p) in SelLabel::ALL.iter().zip(profiles[c]) {
                acc += p;
                if u < acc {
                    label = *l;
                    break;
                }
            }
            blocks.push(SelBlock {
                polygon: Polygon::rect(x0, y0, x1, y1),
                sel: label,
            });
        }
    }

    let all: Vec<usize> = (0..cfg.n_towers).collect();
    let user_width = (cfg.n_users - 1).to_string().len();
    let start = NaiveDate::from_ymd_opt(2015, 3, 2).expect("valid date");
    let mut users = Vec::with_capacity(cfg.n_users);
    let mut pings = Vec::new();
    for u in 0..cfg.n_users {
        let c = u % k;
        let home = *members[c].choose(&mut rng).expect("cluster has towers");
        let work = if rng.random::<f64>() < cfg.mu {
            *all.choose(&mut rng).expect("towers")
        } else {
            *members[c].choose(&mut rng).expect("cluster has towers")
        };
        let user_id = format!("u{u:0user_width$}");
        let (h, w) = (&sites[home].tower_id, &sites[work].tower_id);
        for week in 0..cfg.n_weeks {
            for wd in 0..5 {
                let date = start + Duration::days(i64::from(week * 7 + wd));
                // 00:30-06:29, 23:00-23:59, 09:30-16:29 and noise 18:00-21:59
                pings.push(PingRecord {
                    user_id: user_id.clone(),
                    tower_id: h.clone(),
                    timestamp: at(date, 30 + rng.random_range(0..360)),
                });
                pings.push(PingRecord {
                    user_id: user_id.clone(),
                    tower_id: h.clone(),
                    timestamp: at(date, 23 * 60 + rng.random_range(0..60)),
                });
                for _ in 0..2 {
                    pings.push(PingRecord {
                        user_id: user_id.clone(),
                        tower_id: w.clone(),
                        timestamp: at(date, 9 * 60 + 30 + rng.random_range(0..420)),
                    });
                }
                if rng.random::<f64>() < cfg.noise_ping_prob {
                    let t = *all.choose(&mut rng).expect("towers");
                    pings.push(PingRecord {
                        user_id: user_id.clone(),
                        tower_id: sites[t].tower_id.clone(),
                        timestamp: at(date, 18 * 60 + rng.random_range(0..240)),
                    });
                }
            }
        }
        users.push((user_id, h.clone(), w.clone(), c));
    }
    pings.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.user_id.cmp(&b.user_id)));

    Ok(SynthCity {
        sites,
        urban,
        blocks,
        pings,
        planted: Planted {
            tower_community,
            users,
            community_sel: profiles,
            centroids,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_towers: 40,
            n_users: 300,
            n_weeks: 1,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_from_seed() {
        let a = generate_city(&small()).unwrap();
        let b = generate_city(&small()).unwrap();
        assert_eq!(a.pings, b.pings);
        assert_eq!(a.planted, b.planted);
        let c = generate_city(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.planted, c.planted);
    }

    #[test]
    fn clusters_stay_apart() {
        let city = generate_city(&small()).unwrap();
        for s in city.sites.iter().filter(|s| s.tower_id.0.starts_with('t')) {
            let c = city.planted.tower_community[&s.tower_id];
            let own = s.point.dist(city.planted.centroids[c]);
            assert!(own <= 3.0 * small().cluster_spread + 1e-9);
            assert!(city.urban.contains(s.point));
        }
    }

    #[test]
    fn planted_towers_survive_filter_and_guards_do_not() {
        let city = generate_city(&small()).unwrap();
        let bounds = city.urban.bbox().expanded(0.10).to_polygon();
        let cells = compute_voronoi(&city.sites, &bounds).unwrap();
        let kept = urban_overlap_filter(&cells, &city.urban, 0.70).unwrap();
        assert!(city.sites.len() > small().n_towers);
        assert_eq!(kept.len(), small().n_towers);
        assert!(kept.iter().all(|c| city.planted.tower_community.contains_key(&c.tower_id)));
    }

    #[test]
    fn infeasible_ring_is_rejected() {
        let cfg = SynthConfig {
            ring_radius: Some(1000.0),
            ..small()
        };
        assert!(matches!(generate_city(&cfg), Err(Error::InfeasibleGeometry(_))));
        let cfg = SynthConfig { mu: 1.5, ..small() };
        assert!(matches!(generate_city(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn mu_zero_keeps_work_in_cluster() {
        let city = generate_city(&SynthConfig { mu: 0.0, ..small() }).unwrap();
        let tc = &city.planted.tower_community;
        assert!(city.planted.users.iter().all(|(_, h, w, c)| tc[h] == *c && tc[w] == *c));
    }
}
