//! Stage-by-stage pipeline over files in an output directory.
//!
//! Every stage reads its inputs from the configured input files and from
//! artifacts of earlier stages in `out_dir`, and writes its own artifacts
//! there. [`run_all`] runs the stages in order, so composing the stage
//! commands by hand yields the same bundle.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::Weekday;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::geometry::{
    assign_sel, compute_voronoi, urban_overlap_filter, SiteIndex, TowerCell, TowerId,
};
use crate::graph::{
    build_hw_network, louvain, prune_small, retention_with, Matching, Partition,
};
use crate::ingest::{infer_home_work, parse_pings, pings_on, InferConfig, ShareRule, TimeWindow, UserAnchor};
use crate::io;
use crate::nullmodel::{fit_distributions, sii_experiment, DrawMode, FitConfig, SIIResult};
use crate::segregation::{
    community_sel, community_sel_weighted, counts_matrix_with_units, isolation_index,
    residents_by_tower, well_mixed_index, well_mixed_mc, IsolationReport, WorkUnit,
};
use crate::synth::Planted;

pub const WEEKDAYS: [Weekday; 5] = [Weekday::Mon, Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri];

pub fn weekday_tag(d: Weekday) -> &'static str {
    match d {
        Weekday::Mon => "mon",
        Weekday::Tue => "tue",
        Weekday::Wed => "wed",
        Weekday::Thu => "thu",
        Weekday::Fri => "fri",
        Weekday::Sat => "sat",
        Weekday::Sun => "sun",
    }
}

pub fn parse_weekday(s: &str) -> Result<Weekday> {
    WEEKDAYS
        .into_iter()
        .find(|&d| weekday_tag(d) == s.to_ascii_lowercase())
        .ok_or_else(|| Error::Config(format!("weekday must be one of mon..fri, got `{s}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WiiMode {
    #[default]
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitMode {
    #[default]
    Tower,
    Community,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelWeight {
    #[default]
    Area,
    Users,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    #[default]
    Greedy,
    Optimal,
}

impl From<MatchingMode> for Matching {
    fn from(m: MatchingMode) -> Self {
        match m {
            MatchingMode::Greedy => Matching::Greedy,
            MatchingMode::Optimal => Matching::Optimal,
        }
    }
}

/// All pipeline parameters. Loaded from a `key = value` (TOML) file; relative
/// paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub towers: PathBuf,
    pub urban: PathBuf,
    pub blocks: Option<PathBuf>,
    pub pings: PathBuf,
    /// Ground truth of a synthetic city, compared against in the report.
    pub planted: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    /// Tower coordinates are lon/lat and get projected.
    pub project: bool,
    pub seed: u64,
    pub overlap_threshold: f64,
    /// Voronoi bounds: the urban bounding box grown by this fraction.
    pub bounds_margin: f64,
    pub home_window: String,
    pub work_window: String,
    pub min_anchor_pings: u32,
    pub anchor_share: f64,
    pub share_rule: ShareRule,
    pub resolution: f64,
    pub min_size: usize,
    pub matching: MatchingMode,
    pub bin_dist: f64,
    pub bin_angle: f64,
    pub reps: usize,
    pub joint: bool,
    pub z_threshold: f64,
    pub wii: WiiMode,
    pub wii_reps: usize,
    pub work_unit: UnitMode,
    pub sel_weight: SelWeight,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            towers: "towers.csv".into(),
            urban: "urban.geojson".into(),
            blocks: None,
            pings: "pings.csv".into(),
            planted: None,
            out_dir: "out".into(),
            project: false,
            seed: 42,
            overlap_threshold: 0.70,
            bounds_margin: 0.10,
            home_window: "22:00-07:00".into(),
            work_window: "09:00-17:00".into(),
            min_anchor_pings: 5,
            anchor_share: 0.5,
            share_rule: ShareRule::Combined,
            resolution: 1.0,
            min_size: 2,
            matching: MatchingMode::Greedy,
            bin_dist: 500.0,
            bin_angle: 10.0,
            reps: 100,
            joint: false,
            z_threshold: 3.0,
            wii: WiiMode::Analytic,
            wii_reps: 100,
            work_unit: UnitMode::Tower,
            sel_weight: SelWeight::Area,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative_to(base);
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.towers);
        fix(&mut self.urban);
        fix(&mut self.pings);
        fix(&mut self.out_dir);
        if let Some(b) = self.blocks.as_mut() {
            fix(b);
        }
        if let Some(p) = self.planted.as_mut() {
            fix(p);
        }
    }

    pub fn infer_config(&self) -> Result<InferConfig> {
        let cfg = InferConfig {
            home_window: self.home_window.parse::<TimeWindow>()?,
            work_window: self.work_window.parse::<TimeWindow>()?,
            min_anchor_pings: self.min_anchor_pings,
            anchor_share: self.anchor_share,
            share_rule: self.share_rule,
            weekdays_only: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return bad("overlap_threshold must lie in [0, 1]");
        }
        if !(self.bounds_margin >= 0.0) {
            return bad("bounds_margin must be non-negative");
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if self.min_size == 0 {
            return bad("min_size must be at least 1");
        }
        if !(self.bin_dist > 0.0 && self.bin_angle > 0.0 && self.bin_angle <= 360.0) {
            return bad("bin widths must be positive");
        }
        if self.reps < 2 {
            return bad("reps must be at least 2");
        }
        if self.wii == WiiMode::MonteCarlo && self.wii_reps == 0 {
            return bad("wii_reps must be positive");
        }
        if !(self.z_threshold >= 0.0) {
            return bad("z_threshold must be non-negative");
        }
        self.infer_config().map(|_| ())
    }

    pub fn louvain_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn sii_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn wii_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn check_input(&self, what: &str, p: &Path) -> Result<()> {
        if p.is_file() {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} file not found: {}", p.display())))
        }
    }
}

pub const CELLS_FILE: &str = "cells.geojson";
pub const ANCHORS_FILE: &str = "anchors.csv";
pub const NETWORK_FILE: &str = "network.csv";
pub const PARTITION_FILE: &str = "partition.csv";

fn daily(name: &str, day: Weekday) -> String {
    let (stem, ext) = name.rsplit_once('.').expect("file name with extension");
    format!("{stem}_{}.{ext}", weekday_tag(day))
}

fn load_sites(cfg: &PipelineConfig) -> Result<Vec<crate::geometry::Site>> {
    cfg.check_input("towers", &cfg.towers)?;
    io::read_towers(&cfg.towers, cfg.project)
}

fn load_cells(cfg: &PipelineConfig) -> Result<Vec<TowerCell>> {
    io::read_cells(&cfg.out(CELLS_FILE), &load_sites(cfg)?)
}

/// Voronoi cells, urban filter and SEL composition.
pub fn stage_tessellate(cfg: &PipelineConfig) -> Result<Value> {
    let sites = load_sites(cfg)?;
    cfg.check_input("urban boundary", &cfg.urban)?;
    let urban = io::read_urban(&cfg.urban)?;
    let bounds = urban.bbox().expanded(cfg.bounds_margin).to_polygon();
    let cells = compute_voronoi(&sites, &bounds)?;
    let mut kept = urban_overlap_filter(&cells, &urban, cfg.overlap_threshold)?;
    if let Some(b) = &cfg.blocks {
        cfg.check_input("census blocks", b)?;
        assign_sel(&mut kept, &io::read_blocks(b)?);
    }
    io::write_cells(&cfg.out(CELLS_FILE), &kept)?;
    let kept_ids: HashSet<&TowerId> = kept.iter().map(|c| &c.tower_id).collect();
    let discarded: Vec<&str> = cells
        .iter()
        .filter(|c| !kept_ids.contains(&c.tower_id))
        .map(|c| c.tower_id.0.as_str())
        .collect();
    let summary = json!({
        "towers": sites.len(),
        "kept": kept.len(),
        "discarded": discarded,
        "with_sel": kept.iter().filter(|c| c.sel.is_some()).count(),
    });
    io::write_json(&cfg.out("tessellate.json"), &summary)?;
    Ok(summary)
}

/// Home/work anchors for the whole period and for each weekday.
pub fn stage_infer(cfg: &PipelineConfig) -> Result<Value> {
    let infer = cfg.infer_config()?;
    cfg.check_input("pings", &cfg.pings)?;
    let parsed = parse_pings(io::open(&cfg.pings)?)
        .map_err(|e| Error::Format(format!("{}: {e}", cfg.pings.display())))?;
    let kept: HashSet<TowerId> = load_cells(cfg)?.into_iter().map(|c| c.tower_id).collect();
    let (anchors, log) = infer_home_work(&parsed.records, &kept, &infer);
    io::write_anchors(&cfg.out(ANCHORS_FILE), &anchors)?;
    let mut days = BTreeMap::new();
    for day in WEEKDAYS {
        let (a, l) = infer_home_work(&pings_on(&parsed.records, day), &kept, &infer);
        io::write_anchors(&cfg.out(&daily(ANCHORS_FILE, day)), &a)?;
        days.insert(weekday_tag(day), l);
    }
    let summary = json!({
        "pings": parsed.records.len(),
        "malformed_lines": parsed.malformed,
        "aggregate": log,
        "daily": days,
    });
    io::write_json(&cfg.out("rejections.json"), &summary)?;
    Ok(summary)
}

/// H-W networks for the whole period and for each weekday.
pub fn stage_network(cfg: &PipelineConfig) -> Result<Value> {
    let mut summary = BTreeMap::new();
    for (name, tag) in std::iter::once((ANCHORS_FILE.to_owned(), "aggregate"))
        .chain(WEEKDAYS.iter().map(|&d| (daily(ANCHORS_FILE, d), weekday_tag(d))))
    {
        let anchors = io::read_anchors(&cfg.out(&name))?;
        let net = build_hw_network(&anchors, None);
        let file = if tag == "aggregate" {
            NETWORK_FILE.to_owned()
        } else {
            daily(NETWORK_FILE, parse_weekday(tag)?)
        };
        io::write_network(&cfg.out(&file), &net)?;
        summary.insert(
            tag,
            json!({"nodes": net.nodes().len(), "edges": net.edge_count(), "weight": net.total_weight()}),
        );
    }
    let summary = serde_json::to_value(summary).expect("plain map");
    io::write_json(&cfg.out("network.json"), &summary)?;
    Ok(summary)
}

fn communities_for(cfg: &PipelineConfig, network: &str, partition: &str) -> Result<Value> {
    let net = io::read_network(&cfg.out(network))?;
    let result = louvain(&net, cfg.louvain_seed(), cfg.resolution)?;
    let (pruned, discarded) = prune_small(&result.partition, cfg.min_size);
    io::write_partition(&cfg.out(partition), &pruned)?;
    let summary = json!({
        "Q": result.modularity,
        "n_communities": pruned.n_communities(),
        "sizes": pruned.sizes(),
        "n_communities_before_pruning": result.partition.n_communities(),
        "discarded": discarded,
        "level_Q": result.level_modularity,
        "seed": cfg.louvain_seed(),
        "resolution": cfg.resolution,
        "min_size": cfg.min_size,
    });
    let json_name = format!("{}.json", partition.rsplit_once('.').expect("ext").0);
    io::write_json(&cfg.out(&json_name), &summary)?;
    Ok(summary)
}

/// Louvain communities on the aggregate network (`None`) or one weekday.
pub fn stage_communities(cfg: &PipelineConfig, day: Option<Weekday>) -> Result<Value> {
    match day {
        None => communities_for(cfg, NETWORK_FILE, PARTITION_FILE),
        Some(d) => communities_for(cfg, &daily(NETWORK_FILE, d), &daily(PARTITION_FILE, d)),
    }
}

/// Aggregate plus all five weekday partitions.
pub fn stage_all_communities(cfg: &PipelineConfig) -> Result<Value> {
    let mut out = BTreeMap::new();
    out.insert("aggregate", stage_communities(cfg, None)?);
    for d in WEEKDAYS {
        out.insert(weekday_tag(d), stage_communities(cfg, Some(d))?);
    }
    Ok(serde_json::to_value(out).expect("plain map"))
}

#[derive(Debug, Clone, Serialize)]
pub struct RetentionRow {
    pub weekday: &'static str,
    pub retained: f64,
    pub shared_nodes: usize,
}

/// Share of towers keeping their community between each weekday and the
/// aggregate network.
pub fn stage_retention(cfg: &PipelineConfig) -> Result<Vec<RetentionRow>> {
    let aggregate = io::read_partition(&cfg.out(PARTITION_FILE))?;
    let mut rows = Vec::new();
    for d in WEEKDAYS {
        let day = io::read_partition(&cfg.out(&daily(PARTITION_FILE, d)))?;
        let r = retention_with(&day, &aggregate, cfg.matching.into())?;
        rows.push(RetentionRow {
            weekday: weekday_tag(d),
            retained: r.fraction,
            shared_nodes: r.shared_nodes,
        });
    }
    let path = cfg.out("retention.csv");
    let mut w = csv::Writer::from_writer(io::create(&path)?);
    let werr = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["weekday", "retained", "shared_nodes"]).map_err(werr)?;
    for r in &rows {
        w.write_record([r.weekday, &r.retained.to_string(), &r.shared_nodes.to_string()])
            .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    io::write_json(&cfg.out("retention.json"), &rows)?;
    Ok(rows)
}

/// Anchors whose home and work towers both survived pruning, labeled with
/// the home tower's community; also returns how many were excluded.
pub fn label_anchors(anchors: &[UserAnchor], p: &Partition) -> (Vec<UserAnchor>, usize) {
    let mut out = Vec::with_capacity(anchors.len());
    for a in anchors {
        if let (Some(c), Some(_)) = (p.community_of(&a.home_tower), p.community_of(&a.work_tower)) {
            out.push(UserAnchor {
                community: Some(c),
                ..a.clone()
            });
        }
    }
    let excluded = anchors.len() - out.len();
    (out, excluded)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IsolationRow {
    community: usize,
    n_users: u64,
    rii: f64,
    wii: f64,
    wii_std: Option<f64>,
    sel: Option<[f64; 5]>,
}

/// Real isolation index, well-mixed benchmark and SEL per community.
pub fn stage_isolation(cfg: &PipelineConfig) -> Result<Value> {
    let partition = io::read_partition(&cfg.out(PARTITION_FILE))?;
    let (anchors, excluded) = label_anchors(&io::read_anchors(&cfg.out(ANCHORS_FILE))?, &partition);
    let k = partition.n_communities();
    let unit = match cfg.work_unit {
        UnitMode::Tower => WorkUnit::Tower,
        UnitMode::Community => WorkUnit::Community(&partition),
    };
    let m = counts_matrix_with_units(&anchors, k, unit)?;
    let cells = load_cells(cfg)?;
    let sel = match cfg.sel_weight {
        SelWeight::Area => community_sel(&partition, &cells),
        SelWeight::Users => {
            let residents = residents_by_tower(&anchors);
            community_sel_weighted(&partition, &cells, |c| {
                residents.get(&c.tower_id).copied().unwrap_or(0.0)
            })
        }
    };
    let (wii, wii_std): (Vec<f64>, Vec<Option<f64>>) = match cfg.wii {
        WiiMode::Analytic => (
            (0..k).map(|c| well_mixed_index(&m, c)).collect::<Result<_>>()?,
            vec![None; k],
        ),
        WiiMode::MonteCarlo => {
            let units: Vec<TowerId> = match cfg.work_unit {
                UnitMode::Tower => partition.nodes().to_vec(),
                UnitMode::Community => (0..k).map(|c| TowerId(format!("community:{c}"))).collect(),
            };
            let mc = well_mixed_mc(&anchors, k, &units, cfg.wii_reps, cfg.wii_seed())?;
            (mc.mean, mc.std.into_iter().map(Some).collect())
        }
    };
    let rows = (0..k)
        .map(|c| {
            Ok(IsolationRow {
                community: c,
                n_users: m.community_total(c),
                rii: isolation_index(&m, c)?,
                wii: wii[c],
                wii_std: wii_std[c],
                sel: sel[c].map(|s| s.fractions),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = json!({
        "users": m.total(),
        "excluded_users": excluded,
        "work_unit": cfg.work_unit,
        "wii_mode": cfg.wii,
        "communities": rows,
    });
    io::write_json(&cfg.out("isolation.json"), &summary)?;
    Ok(summary)
}

/// Journey histograms (and Table 2 style distance summary) plus the SII
/// experiment.
pub fn stage_simulate(cfg: &PipelineConfig) -> Result<SIIResult> {
    let partition = io::read_partition(&cfg.out(PARTITION_FILE))?;
    let (anchors, _) = label_anchors(&io::read_anchors(&cfg.out(ANCHORS_FILE))?, &partition);
    let cells = load_cells(cfg)?;
    let sites = SiteIndex::new(
        cells
            .iter()
            .filter(|c| partition.community_of(&c.tower_id).is_some())
            .map(|c| (c.tower_id.clone(), c.site)),
    );
    let k = partition.n_communities();
    let fit = FitConfig {
        bin_width_dist: cfg.bin_dist,
        bin_width_angle: cfg.bin_angle,
    };
    let stats = fit_distributions(&anchors, &sites, k, fit)?;
    let path = cfg.out("distance_stats.csv");
    let mut w = csv::Writer::from_writer(io::create(&path)?);
    let werr = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["community", "n", "mean_km", "std_km", "self_loops"]).map_err(werr)?;
    for (c, j) in stats.communities.iter().enumerate() {
        io::write_histogram(&cfg.out(&format!("hist_distance_c{c}.csv")), &j.distance, Some(j.zero_mass()))?;
        io::write_histogram(&cfg.out(&format!("hist_angle_c{c}.csv")), &j.angle, None)?;
        w.write_record([
            c.to_string(),
            j.n.to_string(),
            (j.mean_distance / 1000.0).to_string(),
            (j.std_distance / 1000.0).to_string(),
            j.n_self_loops.to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let mode = if cfg.joint { DrawMode::Joint } else { DrawMode::Marginal };
    let sii = sii_experiment(&anchors, &stats, &sites, cfg.reps, cfg.sii_seed(), mode)?;
    io::write_sii(&cfg.out("sii.csv"), &sii)?;
    io::write_json(&cfg.out("sii.json"), &sii)?;
    Ok(sii)
}

fn sii_from_json(v: &Value) -> Result<SIIResult> {
    let bad = || Error::Format("malformed sii.json".into());
    let floats = |x: &Value| -> Result<Vec<f64>> {
        x.as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|f| f.as_f64().ok_or_else(bad))
            .collect()
    };
    Ok(SIIResult {
        reps: v["reps"].as_u64().ok_or_else(bad)? as usize,
        seed: v["seed"].as_u64().ok_or_else(bad)?,
        mode: if v["mode"] == "joint" { DrawMode::Joint } else { DrawMode::Marginal },
        values: v["values"]
            .as_array()
            .ok_or_else(bad)?
            .iter()
            .map(floats)
            .collect::<Result<_>>()?,
        mean: floats(&v["mean"])?,
        std: floats(&v["std"])?,
    })
}

/// Comparison against the planted truth of a synthetic city.
#[derive(Debug, Clone, Serialize)]
pub struct PlantedComparison {
    /// Matched-node agreement between detected and planted communities.
    pub node_agreement: f64,
    pub detected_communities: usize,
    pub planted_communities: usize,
    /// Fraction of planted users whose inferred anchors match the truth.
    pub anchor_recovery: f64,
}

pub fn compare_planted(partition: &Partition, anchors: &[UserAnchor], planted: &Planted) -> Result<PlantedComparison> {
    let truth = Partition::from_pairs(planted.tower_community.iter().map(|(t, &c)| (t.clone(), c)));
    let agreement = retention_with(partition, &truth, Matching::Optimal)?;
    let inferred: BTreeMap<&str, (&TowerId, &TowerId)> = anchors
        .iter()
        .map(|a| (a.user_id.as_str(), (&a.home_tower, &a.work_tower)))
        .collect();
    let recovered = planted
        .users
        .iter()
        .filter(|(u, h, w, _)| inferred.get(u.as_str()) == Some(&(h, w)))
        .count();
    Ok(PlantedComparison {
        node_agreement: agreement.fraction,
        detected_communities: partition.n_communities(),
        planted_communities: truth.n_communities(),
        anchor_recovery: recovered as f64 / planted.users.len().max(1) as f64,
    })
}

/// Assembles the final isolation report and the planted-truth comparison.
pub fn stage_report(cfg: &PipelineConfig) -> Result<Value> {
    let iso = io::read_json(&cfg.out("isolation.json"))?;
    let rows: Vec<IsolationRow> = serde_json::from_value(iso["communities"].clone())
        .map_err(|e| Error::Format(format!("isolation.json: {e}")))?;
    let sii = sii_from_json(&io::read_json(&cfg.out("sii.json"))?)?;
    let partition = io::read_partition(&cfg.out(PARTITION_FILE))?;
    let anchors = io::read_anchors(&cfg.out(ANCHORS_FILE))?;
    let (labeled, _) = label_anchors(&anchors, &partition);
    let m = counts_matrix_with_units(
        &labeled,
        partition.n_communities(),
        match cfg.work_unit {
            UnitMode::Tower => WorkUnit::Tower,
            UnitMode::Community => WorkUnit::Community(&partition),
        },
    )?;
    let wii: Vec<f64> = rows.iter().map(|r| r.wii).collect();
    let sel: Vec<_> = rows
        .iter()
        .map(|r| r.sel.map(|fractions| crate::geometry::SelProfile { fractions }))
        .collect();
    let report = IsolationReport::assemble(&m, &wii, &sii, &sel, cfg.z_threshold)?;
    io::write_report_csv(&cfg.out("report.csv"), &report)?;
    let planted = match &cfg.planted {
        Some(p) => {
            cfg.check_input("planted truth", p)?;
            let truth: Planted = serde_json::from_value(io::read_json(p)?)
                .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
            Some(compare_planted(&partition, &anchors, &truth)?)
        }
        None => None,
    };
    let retention = io::read_json(&cfg.out("retention.json")).unwrap_or(Value::Null);
    let value = json!({
        "isolation": report,
        "retention": retention,
        "planted": planted,
    });
    io::write_json(&cfg.out("report.json"), &value)?;
    Ok(value)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<&'static str, u64>,
    pub counts: BTreeMap<&'static str, Value>,
    pub files: Vec<String>,
}

/// Runs every stage in order and writes `manifest.json`.
pub fn run_all(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    cfg.check_input("towers", &cfg.towers)?;
    cfg.check_input("urban boundary", &cfg.urban)?;
    cfg.check_input("pings", &cfg.pings)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut counts = BTreeMap::new();
    counts.insert("tessellate", stage_tessellate(cfg).map_err(|e| e.in_stage("tessellate"))?);
    counts.insert("infer", stage_infer(cfg).map_err(|e| e.in_stage("infer"))?);
    counts.insert("network", stage_network(cfg).map_err(|e| e.in_stage("network"))?);
    counts.insert("communities", stage_all_communities(cfg).map_err(|e| e.in_stage("communities"))?);
    let retention = stage_retention(cfg).map_err(|e| e.in_stage("retention"))?;
    counts.insert("retention", serde_json::to_value(&retention).expect("rows"));
    counts.insert("isolation", stage_isolation(cfg).map_err(|e| e.in_stage("isolation"))?);
    let sii = stage_simulate(cfg).map_err(|e| e.in_stage("simulate"))?;
    counts.insert("simulate", json!({"reps": sii.reps, "mode": sii.mode}));
    let report = stage_report(cfg).map_err(|e| e.in_stage("report"))?;
    counts.insert("planted", report["planted"].clone());
    write_manifest(cfg, counts)
}

fn write_manifest(cfg: &PipelineConfig, counts: BTreeMap<&'static str, Value>) -> Result<Manifest> {
    let mut files: Vec<String> = std::fs::read_dir(&cfg.out_dir)
        .map_err(|e| Error::io(&cfg.out_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|f| f != "manifest.json")
        .collect();
    files.sort();
    let mut seeds = BTreeMap::new();
    seeds.insert("top", cfg.seed);
    seeds.insert("louvain", cfg.louvain_seed());
    seeds.insert("sii", cfg.sii_seed());
    seeds.insert("wii", cfg.wii_seed());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        seeds,
        counts,
        files,
    };
    io::write_json(&cfg.out("manifest.json"), &manifest)?;
    Ok(manifest)
}
