//! Library behaviour checked against independent brute-force computations.

use std::collections::{BTreeMap, HashSet};

use mobiseg::geometry::{
    compute_voronoi, polygon_intersection_area, Point, Polygon, Site, SiteIndex, TowerId,
};
use mobiseg::graph::Partition;
use mobiseg::ingest::{infer_home_work, parse_pings, InferConfig};
use mobiseg::nullmodel::{fit_distributions, replication_rng, simulate_relocation, DrawMode, FitConfig};
use mobiseg::pipeline::label_anchors;
use mobiseg::segregation::{counts_matrix, isolation_index};
use mobiseg::synth::{generate_city, SynthConfig};
use mobiseg::UserAnchor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sites(rng: &mut ChaCha8Rng, n: usize, size: f64) -> Vec<Site> {
    (0..n)
        .map(|i| Site {
            tower_id: TowerId(format!("s{i:03}")),
            point: Point::new(rng.random::<f64>() * size, rng.random::<f64>() * size),
        })
        .collect()
}

/// Nearest site by linear scan, lowest id on exact ties.
fn brute_nearest(sites: &[Site], p: Point) -> &TowerId {
    let mut best = &sites[0];
    for s in &sites[1..] {
        let (d, b) = (s.point.dist2(p), best.point.dist2(p));
        if d < b || (d == b && s.tower_id < best.tower_id) {
            best = s;
        }
    }
    &best.tower_id
}

#[test]
fn voronoi_cells_agree_with_nearest_site_on_a_dense_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 7, 40] {
        let sites = random_sites(&mut rng, n, 100.0);
        let bounds = Polygon::rect(-10.0, -10.0, 110.0, 110.0);
        let cells = compute_voronoi(&sites, &bounds).unwrap();
        let total: f64 = cells.iter().map(|c| c.cell.area()).sum();
        assert!((total - bounds.area()).abs() < 1e-6 * bounds.area(), "cells tile the bounds");
        for gx in 0..120 {
            for gy in 0..120 {
                let p = Point::new(-9.5 + gx as f64, -9.5 + gy as f64);
                let nearest = brute_nearest(&sites, p);
                // skip points within rounding distance of a bisector
                let d_best = sites.iter().find(|s| &s.tower_id == nearest).unwrap().point.dist(p);
                if sites.iter().any(|s| &s.tower_id != nearest && s.point.dist(p) - d_best < 1e-6) {
                    continue;
                }
                let owners: Vec<_> = cells.iter().filter(|c| c.cell.contains(p)).map(|c| &c.tower_id).collect();
                assert_eq!(owners, vec![nearest], "point {p:?}");
            }
        }
    }
}

#[test]
fn grid_index_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sites = random_sites(&mut rng, 300, 5000.0);
    // exact ties: two sites mirrored about x = 2500
    sites.push(Site { tower_id: "tie_b".into(), point: Point::new(2400.0, 9000.0) });
    sites.push(Site { tower_id: "tie_a".into(), point: Point::new(2600.0, 9000.0) });
    let index = SiteIndex::new(sites.iter().map(|s| (s.tower_id.clone(), s.point)));
    for _ in 0..10_000 {
        let p = Point::new(rng.random_range(-2000.0..7000.0), rng.random_range(-2000.0..11000.0));
        let got = index.id(index.nearest(p).unwrap());
        assert_eq!(got, brute_nearest(&sites, p), "at {p:?}");
    }
    let mid = index.id(index.nearest(Point::new(2500.0, 9000.0)).unwrap());
    assert_eq!(mid.0, "tie_a");
}

fn star(rng: &mut ChaCha8Rng, cx: f64, cy: f64, n: usize) -> Polygon {
    let ring = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let r = rng.random_range(0.3..1.0);
            Point::new(cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    Polygon::new(ring, vec![]).unwrap()
}

#[test]
fn intersection_area_matches_grid_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps = 600;
    for _ in 0..8 {
        let a = star(&mut rng, 0.0, 0.0, 9);
        let (bx, by) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let b = star(&mut rng, bx, by, 7);
        let exact = polygon_intersection_area(&a, &b);
        let h = 2.0 / steps as f64;
        let mut hits = 0usize;
        for i in 0..steps {
            for j in 0..steps {
                let p = Point::new(-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h);
                if a.contains(p) && b.contains(p) {
                    hits += 1;
                }
            }
        }
        let sampled = hits as f64 * h * h;
        assert!((exact - sampled).abs() < 0.01 * a.area().max(b.area()), "{exact} vs {sampled}");
        assert!((polygon_intersection_area(&b, &a) - exact).abs() < 1e-12);
    }
}

#[test]
fn synthetic_pings_round_trip_to_the_planted_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    let city = generate_city(&SynthConfig {
        n_towers: 50,
        n_users: 400,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    city.write_to(tmp.path()).unwrap();
    let parsed = parse_pings(std::fs::File::open(tmp.path().join("pings.csv")).unwrap()).unwrap();
    assert_eq!(parsed.malformed, 0);
    assert_eq!(parsed.records.len(), city.pings.len());
    let kept: HashSet<TowerId> = city.planted.tower_community.keys().cloned().collect();
    let (anchors, log) = infer_home_work(&parsed.records, &kept, &InferConfig::default());
    assert_eq!(log.rejected(), 0);
    let got: BTreeMap<_, _> = anchors.iter().map(|a| (a.user_id.clone(), (a.home_tower.clone(), a.work_tower.clone()))).collect();
    for (u, h, w, _) in &city.planted.users {
        assert_eq!(got[u], (h.clone(), w.clone()), "user {u}");
    }
}

fn planted_rii(cfg: &SynthConfig) -> Vec<f64> {
    let city = generate_city(cfg).unwrap();
    let p = Partition::from_pairs(city.planted.tower_community.iter().map(|(t, &c)| (t.clone(), c)));
    let (anchors, _) = label_anchors(&city.planted.anchors(), &p);
    // canonical labels reorder communities; report by planted id
    let m = counts_matrix(&anchors, p.n_communities()).unwrap();
    let mut by_planted = vec![0.0; cfg.n_communities];
    for c in 0..p.n_communities() {
        let planted_id = city.planted.tower_community[p.members(c).next().unwrap()];
        by_planted[planted_id] = isolation_index(&m, c).unwrap();
    }
    by_planted
}

#[test]
fn rii_does_not_increase_with_mixing() {
    let mus = [0.0, 0.25, 0.5, 1.0];
    let k = 3;
    let mut mean = vec![vec![0.0; k]; mus.len()];
    for seed in 0..10 {
        for (i, &mu) in mus.iter().enumerate() {
            let cfg = SynthConfig {
                n_towers: 45,
                n_users: 450,
                n_communities: k,
                n_weeks: 1,
                mu,
                seed,
                ..SynthConfig::default()
            };
            for (c, r) in planted_rii(&cfg).into_iter().enumerate() {
                mean[i][c] += r / 10.0;
            }
        }
    }
    for c in 0..k {
        assert!((mean[0][c] - 1.0).abs() < 1e-12, "mu = 0 is fully segregated");
    }
    let mut violations = 0;
    for i in 1..mus.len() {
        for c in 0..k {
            if mean[i][c] > mean[i - 1][c] {
                violations += 1;
            }
        }
    }
    assert!(violations <= 1, "{mean:?}");
}

#[test]
fn uniform_angles_from_a_central_home_spread_evenly_over_a_ring() {
    // 36 ring towers at bin centres, 5250 m out; one central home tower
    let n = 36;
    let r = 5250.0;
    let mut towers = vec![("h".to_string(), Point::new(0.0, 0.0))];
    for i in 0..n {
        let a = (10.0 * i as f64 + 5.0).to_radians();
        towers.push((format!("r{i:02}"), Point::new(r * a.cos(), r * a.sin())));
    }
    let index = SiteIndex::new(towers.iter().map(|(t, p)| (TowerId(t.clone()), *p)));
    let anchors: Vec<UserAnchor> = (0..10_000)
        .map(|u| UserAnchor {
            community: Some(0),
            ..UserAnchor::new(format!("u{u}"), "h", towers[1 + u % n].0.as_str())
        })
        .collect();
    let stats = fit_distributions(&anchors, &index, 1, FitConfig::default()).unwrap();
    let moved = simulate_relocation(&anchors, &stats, &index, DrawMode::Marginal, &mut replication_rng(5, 0)).unwrap();

    assert_eq!(moved.len(), anchors.len());
    assert!(moved.iter().zip(&anchors).all(|(m, a)| m.user_id == a.user_id && m.home_tower == a.home_tower));
    let mut hits: BTreeMap<&str, f64> = BTreeMap::new();
    for m in &moved {
        *hits.entry(m.work_tower.0.as_str()).or_default() += 1.0;
    }
    assert!(!hits.contains_key("h"));
    let expected = anchors.len() as f64 / n as f64;
    let chi2: f64 = hits.values().map(|o| (o - expected).powi(2) / expected).sum();
    // 35 degrees of freedom, p = 0.001
    assert!(chi2 < 66.6, "chi2 = {chi2}");
}

#[test]
fn relocation_conserves_users_homes_and_community_sizes() {
    let city = generate_city(&SynthConfig {
        n_towers: 60,
        n_users: 900,
        n_communities: 3,
        n_weeks: 1,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let p = Partition::from_pairs(city.planted.tower_community.iter().map(|(t, &c)| (t.clone(), c)));
    let (anchors, _) = label_anchors(&city.planted.anchors(), &p);
    let index = SiteIndex::new(
        city.sites
            .iter()
            .filter(|s| p.community_of(&s.tower_id).is_some())
            .map(|s| (s.tower_id.clone(), s.point)),
    );
    let stats = fit_distributions(&anchors, &index, 3, FitConfig::default()).unwrap();
    for mode in [DrawMode::Marginal, DrawMode::Joint] {
        let moved = simulate_relocation(&anchors, &stats, &index, mode, &mut replication_rng(1, 3)).unwrap();
        assert_eq!(moved.len(), anchors.len());
        for (m, a) in moved.iter().zip(&anchors) {
            assert_eq!((&m.user_id, &m.home_tower, m.community), (&a.user_id, &a.home_tower, a.community));
            assert!(p.community_of(&m.work_tower).is_some());
        }
    }
}
