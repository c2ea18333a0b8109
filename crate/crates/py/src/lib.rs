//! Python bindings for the `mobiseg` core.
//!
//! Partitions cross the boundary as `{tower_id: community}` dicts and
//! report-like results as plain dicts/lists.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use mobiseg::geometry::{self, Point, Site, SiteIndex};
use mobiseg::graph::{self, Matching};
use mobiseg::ingest::{self, InferConfig};
use mobiseg::pipeline::PipelineConfig;
use mobiseg::segregation;
use mobiseg::synth::{self as msynth, SynthConfig};
use mobiseg::{ErrorKind, TowerId};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

create_exception!(mobiseg_py, ConfigError, PyValueError, "Invalid parameters or missing inputs.");
create_exception!(mobiseg_py, DataError, PyValueError, "Malformed or inconsistent input data.");
create_exception!(mobiseg_py, InternalError, PyException, "Unexpected internal failure.");

fn err(e: mobiseg::Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::Config => ConfigError::new_err(msg),
        ErrorKind::Data => DataError::new_err(msg),
        ErrorKind::Internal => InternalError::new_err(msg),
    }
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value as J;
    Ok(match v {
        J::Null => py.None(),
        J::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        J::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any().unbind(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any().unbind(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind(),
        },
        J::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        J::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        J::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| InternalError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

fn points(ring: Vec<(f64, f64)>) -> Vec<Point> {
    ring.into_iter().map(|(x, y)| Point::new(x, y)).collect()
}

fn partition_from(map: BTreeMap<String, usize>) -> graph::Partition {
    graph::Partition::from_pairs(map)
}

fn partition_to(p: &graph::Partition) -> BTreeMap<String, usize> {
    p.iter().map(|(t, c)| (t.0.clone(), c)).collect()
}

/// Simple polygon with optional holes, in metric planar coordinates.
#[pyclass(module = "mobiseg_py", skip_from_py_object)]
#[derive(Clone)]
struct Polygon {
    inner: geometry::Polygon,
}

#[pymethods]
impl Polygon {
    #[new]
    #[pyo3(signature = (outer, holes = None))]
    fn new(outer: Vec<(f64, f64)>, holes: Option<Vec<Vec<(f64, f64)>>>) -> PyResult<Self> {
        let holes = holes.unwrap_or_default().into_iter().map(points).collect();
        geometry::Polygon::new(points(outer), holes)
            .map(|inner| Polygon { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon {
            inner: geometry::Polygon::rect(x0, y0, x1, y1),
        }
    }

    #[getter]
    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.inner.contains(Point::new(x, y))
    }

    /// Rings as lists of `(x, y)`; the first is the outer ring.
    fn rings(&self) -> Vec<Vec<(f64, f64)>> {
        self.inner
            .rings()
            .iter()
            .map(|r| r.iter().map(|p| (p.x, p.y)).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Polygon(area={:.3}, rings={})", self.inner.area(), self.inner.rings().len())
    }
}

/// Voronoi cell of one tower.
#[pyclass(module = "mobiseg_py", get_all, skip_from_py_object)]
#[derive(Clone)]
struct TowerCell {
    tower_id: String,
    site: (f64, f64),
    cell: Polygon,
    urban_overlap: Option<f64>,
}

impl TowerCell {
    fn from_core(c: &geometry::TowerCell) -> Self {
        TowerCell {
            tower_id: c.tower_id.0.clone(),
            site: (c.site.x, c.site.y),
            cell: Polygon { inner: c.cell.clone() },
            urban_overlap: c.urban_overlap,
        }
    }
}

fn sites_from(sites: Vec<(String, f64, f64)>) -> Vec<Site> {
    sites
        .into_iter()
        .map(|(id, x, y)| Site {
            tower_id: TowerId(id),
            point: Point::new(x, y),
        })
        .collect()
}

/// Voronoi cells of `(tower_id, x, y)` sites clipped to `bounds`.
#[pyfunction]
fn voronoi(sites: Vec<(String, f64, f64)>, bounds: PyRef<'_, Polygon>) -> PyResult<Vec<TowerCell>> {
    let cells = geometry::compute_voronoi(&sites_from(sites), &bounds.inner).map_err(err)?;
    Ok(cells.iter().map(TowerCell::from_core).collect())
}

/// Cells of towers whose cell overlaps `urban` by at least `threshold`.
#[pyfunction]
#[pyo3(signature = (sites, urban, threshold = 0.70, bounds_margin = 0.10))]
fn urban_cells(
    sites: Vec<(String, f64, f64)>,
    urban: PyRef<'_, Polygon>,
    threshold: f64,
    bounds_margin: f64,
) -> PyResult<Vec<TowerCell>> {
    let bounds = urban.inner.bbox().expanded(bounds_margin).to_polygon();
    let cells = geometry::compute_voronoi(&sites_from(sites), &bounds).map_err(err)?;
    let kept = geometry::urban_overlap_filter(&cells, &urban.inner, threshold).map_err(err)?;
    Ok(kept.iter().map(TowerCell::from_core).collect())
}

#[pyfunction]
fn intersection_area(a: PyRef<'_, Polygon>, b: PyRef<'_, Polygon>) -> f64 {
    geometry::polygon_intersection_area(&a.inner, &b.inner)
}

/// Nearest-tower lookup; ties go to the lowest tower id.
#[pyclass(module = "mobiseg_py")]
struct TowerLocator {
    index: SiteIndex,
}

#[pymethods]
impl TowerLocator {
    #[new]
    fn new(sites: Vec<(String, f64, f64)>) -> Self {
        TowerLocator {
            index: SiteIndex::new(sites.into_iter().map(|(id, x, y)| (TowerId(id), Point::new(x, y)))),
        }
    }

    fn nearest(&self, x: f64, y: f64) -> Option<String> {
        self.index.nearest(Point::new(x, y)).map(|i| self.index.id(i).0.clone())
    }

    fn __len__(&self) -> usize {
        self.index.len()
    }
}

fn counts(units: usize, rows: Vec<Vec<u64>>) -> PyResult<segregation::CountsMatrix> {
    let ids = (0..units).map(|i| TowerId(format!("u{i}"))).collect();
    segregation::CountsMatrix::from_counts(ids, rows).map_err(err)
}

/// Isolation index of `community` from a communities-by-units count table.
#[pyfunction]
fn isolation_index(counts_table: Vec<Vec<u64>>, community: usize) -> PyResult<f64> {
    let units = counts_table.first().map_or(0, Vec::len);
    segregation::isolation_index(&counts(units, counts_table)?, community).map_err(err)
}

/// Well-mixed benchmark: the community's share of all users.
#[pyfunction]
fn well_mixed_index(counts_table: Vec<Vec<u64>>, community: usize) -> PyResult<f64> {
    let units = counts_table.first().map_or(0, Vec::len);
    segregation::well_mixed_index(&counts(units, counts_table)?, community).map_err(err)
}

/// Weighted undirected home-work network.
#[pyclass(module = "mobiseg_py")]
struct HWNetwork {
    inner: graph::HWNetwork,
}

#[pymethods]
impl HWNetwork {
    /// From `(tower_a, tower_b, weight)` triples; repeats are summed.
    #[new]
    fn new(edges: Vec<(String, String, u64)>) -> Self {
        HWNetwork {
            inner: graph::HWNetwork::from_edges(edges),
        }
    }

    /// From `(home_tower, work_tower)` pairs, one per user.
    #[staticmethod]
    fn from_anchors(pairs: Vec<(String, String)>) -> Self {
        let anchors: Vec<_> = pairs
            .iter()
            .enumerate()
            .map(|(i, (h, w))| ingest::UserAnchor::new(format!("u{i}"), h.as_str(), w.as_str()))
            .collect();
        HWNetwork {
            inner: graph::build_hw_network(&anchors, None),
        }
    }

    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.nodes().iter().map(|t| t.0.clone()).collect()
    }

    #[getter]
    fn total_weight(&self) -> u64 {
        self.inner.total_weight()
    }

    fn edges(&self) -> Vec<(String, String, u64)> {
        self.inner.edges().map(|(a, b, w)| (a.0.clone(), b.0.clone(), w)).collect()
    }

    fn weight(&self, a: &str, b: &str) -> u64 {
        self.inner.weight(&a.into(), &b.into())
    }

    fn strength(&self, t: &str) -> u64 {
        self.inner.strength(&t.into())
    }
}

#[pyfunction]
#[pyo3(signature = (net, partition, resolution = 1.0))]
fn modularity(net: PyRef<'_, HWNetwork>, partition: BTreeMap<String, usize>, resolution: f64) -> PyResult<f64> {
    graph::modularity_with_resolution(&net.inner, &partition_from(partition), resolution).map_err(err)
}

/// Returns `(partition, modularity, per-level modularity)`.
#[pyfunction]
#[pyo3(signature = (net, seed = 0, resolution = 1.0, min_size = 1))]
fn louvain(
    net: PyRef<'_, HWNetwork>,
    seed: u64,
    resolution: f64,
    min_size: usize,
) -> PyResult<(BTreeMap<String, usize>, f64, Vec<f64>)> {
    let r = graph::louvain(&net.inner, seed, resolution).map_err(err)?;
    let (p, _) = graph::prune_small(&r.partition, min_size);
    Ok((partition_to(&p), r.modularity, r.level_modularity))
}

/// Share of shared towers whose community maps onto the matched one.
#[pyfunction]
#[pyo3(signature = (daily, aggregate, optimal = false))]
fn retention(daily: BTreeMap<String, usize>, aggregate: BTreeMap<String, usize>, optimal: bool) -> PyResult<f64> {
    let m = if optimal { Matching::Optimal } else { Matching::Greedy };
    graph::retention_with(&partition_from(daily), &partition_from(aggregate), m)
        .map(|r| r.fraction)
        .map_err(err)
}

/// Reads a pings CSV and infers anchors. Returns
/// `([(user_id, home_tower, work_tower)], rejection_counts)`.
#[pyfunction]
#[pyo3(signature = (pings_csv, kept_towers = None, min_anchor_pings = 5, anchor_share = 0.5, share_rule = "combined"))]
fn infer_home_work(
    py: Python<'_>,
    pings_csv: PathBuf,
    kept_towers: Option<Vec<String>>,
    min_anchor_pings: u32,
    anchor_share: f64,
    share_rule: &str,
) -> PyResult<(Vec<(String, String, String)>, Py<PyAny>)> {
    let file = mobiseg::io::open(&pings_csv).map_err(err)?;
    let parsed = ingest::parse_pings(file).map_err(err)?;
    let kept: HashSet<TowerId> = match kept_towers {
        Some(t) => t.into_iter().map(TowerId).collect(),
        None => parsed.records.iter().map(|r| r.tower_id.clone()).collect(),
    };
    let cfg = InferConfig {
        min_anchor_pings,
        anchor_share,
        share_rule: share_rule.parse().map_err(err)?,
        ..InferConfig::default()
    };
    cfg.validate().map_err(err)?;
    let (anchors, log) = ingest::infer_home_work(&parsed.records, &kept, &cfg);
    let rows = anchors
        .into_iter()
        .map(|a| (a.user_id, a.home_tower.0, a.work_tower.0))
        .collect();
    Ok((rows, to_py(py, &log)?))
}

/// Writes a synthetic city (inputs, `planted.json`, `pipeline.toml`) into
/// `out_dir`. Keyword arguments override synthetic config fields.
#[pyfunction]
#[pyo3(signature = (out_dir, **overrides))]
fn generate_city(py: Python<'_>, out_dir: PathBuf, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let mut value = serde_json::to_value(SynthConfig::default()).expect("plain struct");
    apply_overrides(&mut value, overrides)?;
    let cfg: SynthConfig = serde_json::from_value(value).map_err(|e| ConfigError::new_err(e.to_string()))?;
    let city = msynth::generate_city(&cfg).map_err(err)?;
    city.write_to(&out_dir).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "towers": city.sites.len(),
            "planted_towers": city.planted.tower_community.len(),
            "users": city.planted.users.len(),
            "pings": city.pings.len(),
            "pipeline_config": out_dir.join(msynth::PIPELINE_FILE),
        }),
    )
}

fn apply_overrides(value: &mut serde_json::Value, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    let Some(d) = overrides else { return Ok(()) };
    let obj = value.as_object_mut().expect("struct serializes to an object");
    for (k, v) in d.iter() {
        let key: String = k.extract()?;
        let json = if v.is_none() {
            serde_json::Value::Null
        } else if let Ok(b) = v.extract::<bool>() {
            serde_json::Value::Bool(b)
        } else if let Ok(i) = v.extract::<i64>() {
            serde_json::json!(i)
        } else if let Ok(f) = v.extract::<f64>() {
            serde_json::json!(f)
        } else {
            serde_json::Value::String(v.str()?.to_string())
        };
        obj.insert(key, json);
    }
    Ok(())
}

/// Runs every stage for the config file at `config` (keyword arguments
/// override its keys) and returns the manifest as a dict.
#[pyfunction]
#[pyo3(signature = (config, **overrides))]
fn run_all(py: Python<'_>, config: PathBuf, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let cfg = PipelineConfig::load(&config).map_err(err)?;
    let out_dir = cfg.out_dir.clone();
    let mut value = serde_json::to_value(&cfg).expect("plain struct");
    apply_overrides(&mut value, overrides)?;
    let mut cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| ConfigError::new_err(e.to_string()))?;
    cfg.out_dir = match overrides.and_then(|d| d.get_item("out_dir").ok().flatten()) {
        Some(v) => v.extract()?,
        None => out_dir,
    };
    let manifest = py.detach(|| mobiseg::pipeline::run_all(&cfg)).map_err(err)?;
    to_py(py, &manifest)
}

#[pymodule]
fn mobiseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Polygon>()?;
    m.add_class::<TowerCell>()?;
    m.add_class::<TowerLocator>()?;
    m.add_class::<HWNetwork>()?;
    m.add_function(wrap_pyfunction!(voronoi, m)?)?;
    m.add_function(wrap_pyfunction!(urban_cells, m)?)?;
    m.add_function(wrap_pyfunction!(intersection_area, m)?)?;
    m.add_function(wrap_pyfunction!(isolation_index, m)?)?;
    m.add_function(wrap_pyfunction!(well_mixed_index, m)?)?;
    m.add_function(wrap_pyfunction!(modularity, m)?)?;
    m.add_function(wrap_pyfunction!(louvain, m)?)?;
    m.add_function(wrap_pyfunction!(retention, m)?)?;
    m.add_function(wrap_pyfunction!(infer_home_work, m)?)?;
    m.add_function(wrap_pyfunction!(generate_city, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("InternalError", m.py().get_type::<InternalError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
