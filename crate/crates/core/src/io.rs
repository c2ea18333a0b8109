//! File formats: tower, anchor, network, partition and report CSVs, plus
//! GeoJSON polygons for the urban boundary, census blocks and cells.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{project_lonlat, Point, Polygon, SelBlock, SelLabel, SelProfile, Site, TowerCell, TowerId};
use crate::graph::{HWNetwork, Partition};
use crate::ingest::{PingRecord, UserAnchor};
use crate::nullmodel::{Histogram, SIIResult};
use crate::segregation::IsolationReport;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn check_header(path: &Path, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(|e| csv_err(path, e))?;
    if h.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(Error::MissingHeader {
            expected: expected.join(","),
        })
    }
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        let line = rec.position().map_or(0, |p| p.line());
        Error::Format(format!("{}:{line}: bad value `{raw}`", path.display()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes rows through a closure, flushing at the end.
fn write_csv(path: &Path, header: &[&str], rows: impl FnOnce(&mut csv::Writer<BufWriter<File>>) -> csv::Result<()>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    rows(&mut w).map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Tower sites from `tower_id,x,y`, or `tower_id,lon,lat` when `project`
/// is set (equirectangular about the mean position).
pub fn read_towers(path: &Path, project: bool) -> Result<Vec<Site>> {
    let mut rdr = reader(open(path)?);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let geographic = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["tower_id", "x", "y"] => false,
        ["tower_id", "lon", "lat"] => true,
        _ => {
            return Err(Error::MissingHeader {
                expected: "tower_id,x,y (or tower_id,lon,lat)".into(),
            })
        }
    };
    if geographic && !project {
        return Err(Error::Config(format!(
            "{} holds lon/lat; pass --project to convert to planar meters",
            path.display()
        )));
    }
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id: String = field(path, &rec, 0)?;
        raw.push((id, field::<f64>(path, &rec, 1)?, field::<f64>(path, &rec, 2)?));
    }
    if geographic {
        let n = raw.len().max(1) as f64;
        let lon0 = raw.iter().map(|r| r.1).sum::<f64>() / n;
        let lat0 = raw.iter().map(|r| r.2).sum::<f64>() / n;
        Ok(raw
            .into_iter()
            .map(|(id, lon, lat)| Site {
                tower_id: TowerId(id),
                point: project_lonlat(lon, lat, (lon0, lat0)),
            })
            .collect())
    } else {
        Ok(raw
            .into_iter()
            .map(|(id, x, y)| Site {
                tower_id: TowerId(id),
                point: Point::new(x, y),
            })
            .collect())
    }
}

pub fn write_towers(path: &Path, sites: &[Site]) -> Result<()> {
    write_csv(path, &["tower_id", "x", "y"], |w| {
        for s in sites {
            w.write_record([s.tower_id.0.clone(), s.point.x.to_string(), s.point.y.to_string()])?;
        }
        Ok(())
    })
}

fn ring_from_json(v: &Value) -> Option<Vec<Point>> {
    v.as_array()?
        .iter()
        .map(|p| {
            let xy = p.as_array()?;
            Some(Point::new(xy.first()?.as_f64()?, xy.get(1)?.as_f64()?))
        })
        .collect()
}

fn polygon_from_coords(v: &Value) -> Result<Polygon> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::Format("polygon coordinates must be an array".into()))?;
    let mut parsed = rings
        .iter()
        .map(|r| ring_from_json(r).ok_or_else(|| Error::Format("bad ring coordinates".into())))
        .collect::<Result<Vec<_>>>()?;
    if parsed.is_empty() {
        return Err(Error::Format("polygon without rings".into()));
    }
    let outer = parsed.remove(0);
    Polygon::new(outer, parsed)
}

fn polygons_from_geometry(g: &Value) -> Result<Vec<Polygon>> {
    let coords = &g["coordinates"];
    match g["type"].as_str() {
        Some("Polygon") => Ok(vec![polygon_from_coords(coords)?]),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or_else(|| Error::Format("MultiPolygon coordinates must be an array".into()))?
            .iter()
            .map(polygon_from_coords)
            .collect(),
        other => Err(Error::Format(format!("unsupported geometry type {other:?}"))),
    }
}

/// Every polygon in a GeoJSON document with its feature properties.
/// Multi-polygons yield one entry per part.
pub fn parse_geojson_polygons(doc: &Value) -> Result<Vec<(Polygon, Map<String, Value>)>> {
    let features: Vec<&Value> = match doc["type"].as_str() {
        Some("FeatureCollection") => doc["features"]
            .as_array()
            .ok_or_else(|| Error::Format("FeatureCollection without features".into()))?
            .iter()
            .collect(),
        Some("Feature") => vec![doc],
        Some(_) => {
            return Ok(polygons_from_geometry(doc)?
                .into_iter()
                .map(|p| (p, Map::new()))
                .collect())
        }
        None => return Err(Error::Format("not a GeoJSON object".into())),
    };
    let mut out = Vec::new();
    for f in features {
        let props = f["properties"].as_object().cloned().unwrap_or_default();
        for p in polygons_from_geometry(&f["geometry"])? {
            out.push((p, props.clone()));
        }
    }
    Ok(out)
}

/// The urban boundary: a GeoJSON document holding exactly one polygon.
pub fn read_urban(path: &Path) -> Result<Polygon> {
    let mut polys = parse_geojson_polygons(&read_json(path)?)?;
    if polys.len() != 1 {
        return Err(Error::Format(format!(
            "{}: expected one urban polygon, found {}",
            path.display(),
            polys.len()
        )));
    }
    Ok(polys.remove(0).0)
}

/// Census blocks; each feature carries `sel` in S1..S5.
pub fn read_blocks(path: &Path) -> Result<Vec<SelBlock>> {
    parse_geojson_polygons(&read_json(path)?)?
        .into_iter()
        .map(|(polygon, props)| {
            let sel = props
                .get("sel")
                .and_then(Value::as_str)
                .and_then(SelLabel::parse)
                .ok_or_else(|| Error::Format(format!("{}: block without valid `sel`", path.display())))?;
            Ok(SelBlock { polygon, sel })
        })
        .collect()
}

fn polygon_coords(p: &Polygon) -> Value {
    Value::Array(
        p.rings()
            .iter()
            .map(|r| {
                let mut pts: Vec<Value> = r.iter().map(|q| json!([q.x, q.y])).collect();
                pts.push(json!([r[0].x, r[0].y]));
                Value::Array(pts)
            })
            .collect(),
    )
}

pub fn polygon_feature(p: &Polygon, properties: Value) -> Value {
    json!({
        "type": "Feature",
        "properties": properties,
        "geometry": {"type": "Polygon", "coordinates": polygon_coords(p)},
    })
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_urban(path: &Path, urban: &Polygon) -> Result<()> {
    write_json(path, &feature_collection(vec![polygon_feature(urban, json!({}))]))
}

pub fn write_blocks(path: &Path, blocks: &[SelBlock]) -> Result<()> {
    let features = blocks
        .iter()
        .map(|b| polygon_feature(&b.polygon, json!({"sel": b.sel.as_str()})))
        .collect();
    write_json(path, &feature_collection(features))
}

pub fn write_cells(path: &Path, cells: &[TowerCell]) -> Result<()> {
    let features = cells
        .iter()
        .map(|c| {
            let mut props = Map::new();
            props.insert("tower_id".into(), json!(c.tower_id.0));
            props.insert("urban_overlap".into(), json!(c.urban_overlap));
            for (i, label) in SelLabel::ALL.iter().enumerate() {
                props.insert(
                    format!("sel_{}", label.as_str().to_ascii_lowercase()),
                    json!(c.sel.map(|s| s.fractions[i])),
                );
            }
            polygon_feature(&c.cell, Value::Object(props))
        })
        .collect();
    write_json(path, &feature_collection(features))
}

/// Cells written by [`write_cells`]; sites are joined from `sites` by id.
pub fn read_cells(path: &Path, sites: &[Site]) -> Result<Vec<TowerCell>> {
    let by_id: HashMap<&TowerId, Point> = sites.iter().map(|s| (&s.tower_id, s.point)).collect();
    let doc = read_json(path)?;
    let features = doc["features"]
        .as_array()
        .ok_or_else(|| Error::Format(format!("{}: not a FeatureCollection", path.display())))?;
    features
        .iter()
        .map(|f| {
            let props = &f["properties"];
            let id = TowerId(
                props["tower_id"]
                    .as_str()
                    .ok_or_else(|| Error::Format("cell without tower_id".into()))?
                    .to_owned(),
            );
            let site = *by_id.get(&id).ok_or_else(|| Error::UnknownTower(id.0.clone()))?;
            let cell = polygons_from_geometry(&f["geometry"])?.remove(0);
            let mut fr = [0.0; 5];
            let mut has_sel = true;
            for (i, label) in SelLabel::ALL.iter().enumerate() {
                match props[format!("sel_{}", label.as_str().to_ascii_lowercase())].as_f64() {
                    Some(v) => fr[i] = v,
                    None => has_sel = false,
                }
            }
            Ok(TowerCell {
                tower_id: id,
                site,
                cell,
                urban_overlap: props["urban_overlap"].as_f64(),
                sel: has_sel.then_some(SelProfile { fractions: fr }),
            })
        })
        .collect()
}

pub fn write_pings(path: &Path, pings: &[PingRecord]) -> Result<()> {
    write_csv(path, &["user_id", "tower_id", "timestamp"], |w| {
        for p in pings {
            w.write_record([
                p.user_id.as_str(),
                p.tower_id.0.as_str(),
                &p.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
            ])?;
        }
        Ok(())
    })
}

pub const ANCHORS_HEADER: [&str; 3] = ["user_id", "home_tower", "work_tower"];

pub fn write_anchors(path: &Path, anchors: &[UserAnchor]) -> Result<()> {
    write_csv(path, &ANCHORS_HEADER, |w| {
        for a in anchors {
            w.write_record([a.user_id.as_str(), a.home_tower.0.as_str(), a.work_tower.0.as_str()])?;
        }
        Ok(())
    })
}

pub fn read_anchors(path: &Path) -> Result<Vec<UserAnchor>> {
    let mut rdr = reader(open(path)?);
    check_header(path, &mut rdr, &ANCHORS_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            Ok(UserAnchor::new(
                field::<String>(path, &rec, 0)?,
                field::<String>(path, &rec, 1)?,
                field::<String>(path, &rec, 2)?,
            ))
        })
        .collect()
}

pub fn write_network(path: &Path, net: &HWNetwork) -> Result<()> {
    write_csv(path, &["tower_a", "tower_b", "weight"], |w| {
        for (a, b, wt) in net.edges() {
            w.write_record([a.0.as_str(), b.0.as_str(), &wt.to_string()])?;
        }
        Ok(())
    })
}

pub fn read_network(path: &Path) -> Result<HWNetwork> {
    let mut rdr = reader(open(path)?);
    check_header(path, &mut rdr, &["tower_a", "tower_b", "weight"])?;
    let edges = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            Ok((
                field::<String>(path, &rec, 0)?,
                field::<String>(path, &rec, 1)?,
                field::<u64>(path, &rec, 2)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HWNetwork::from_edges(edges))
}

pub fn write_partition(path: &Path, p: &Partition) -> Result<()> {
    write_csv(path, &["tower_id", "community"], |w| {
        for (t, c) in p.iter() {
            w.write_record([t.0.as_str(), &c.to_string()])?;
        }
        Ok(())
    })
}

pub fn read_partition(path: &Path) -> Result<Partition> {
    let mut rdr = reader(open(path)?);
    check_header(path, &mut rdr, &["tower_id", "community"])?;
    let pairs = rdr
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            Ok((field::<String>(path, &rec, 0)?, field::<usize>(path, &rec, 1)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition::from_pairs(pairs))
}

/// `bin_low,bin_high,mass`; an optional leading point-mass row `0,0,mass`.
pub fn write_histogram(path: &Path, h: &Histogram, point_mass_at_zero: Option<f64>) -> Result<()> {
    write_csv(path, &["bin_low", "bin_high", "mass"], |w| {
        let scale = match point_mass_at_zero {
            Some(z) => {
                w.write_record(["0", "0", &z.to_string()])?;
                1.0 - z
            }
            None => 1.0,
        };
        for (lo, hi, m) in h.bins() {
            w.write_record([lo.to_string(), hi.to_string(), (m * scale).to_string()])?;
        }
        Ok(())
    })
}

/// `community,replication,sii` per replication, then `mean` and `std`
/// summary rows per community.
pub fn write_sii(path: &Path, sii: &SIIResult) -> Result<()> {
    write_csv(path, &["community", "replication", "sii"], |w| {
        for (c, vals) in sii.values.iter().enumerate() {
            for (r, v) in vals.iter().enumerate() {
                w.write_record([c.to_string(), r.to_string(), v.to_string()])?;
            }
        }
        for c in 0..sii.values.len() {
            w.write_record([c.to_string(), "mean".into(), sii.mean[c].to_string()])?;
            w.write_record([c.to_string(), "std".into(), sii.std[c].to_string()])?;
        }
        Ok(())
    })
}

pub const REPORT_HEADER: [&str; 12] = [
    "community", "RII", "WII", "SII_mean", "SII_std", "z", "sel_s1", "sel_s2", "sel_s3", "sel_s4",
    "sel_s5", "segregated",
];

pub fn write_report_csv(path: &Path, report: &IsolationReport) -> Result<()> {
    write_csv(path, &REPORT_HEADER, |w| {
        for r in &report.communities {
            let mut row = vec![
                r.community.to_string(),
                r.rii.to_string(),
                r.wii.to_string(),
                r.sii_mean.to_string(),
                r.sii_std.to_string(),
                r.z.to_string(),
            ];
            for i in 0..5 {
                row.push(r.sel.map_or(String::new(), |s| s[i].to_string()));
            }
            row.push(r.segregated.to_string());
            w.write_record(row)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geojson_polygon_forms() {
        let doc = json!({
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "properties": {"sel": "S2"},
                 "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
                {"type": "Feature", "properties": {"sel": "s4"},
                 "geometry": {"type": "MultiPolygon", "coordinates": [
                    [[[2,0],[3,0],[3,1],[2,0]]],
                    [[[4,0],[5,0],[5,1],[4,1],[4,0]], [[4.2,0.2],[4.4,0.2],[4.4,0.4],[4.2,0.4],[4.2,0.2]]]
                 ]}}
            ]
        });
        let polys = parse_geojson_polygons(&doc).unwrap();
        assert_eq!(polys.len(), 3);
        assert!((polys[2].0.area() - 0.96).abs() < 1e-12);
        let bare = json!({"type": "Polygon", "coordinates": [[[0,0],[2,0],[2,2],[0,2]]]});
        assert_eq!(parse_geojson_polygons(&bare).unwrap()[0].0.area(), 4.0);
        let line = json!({"type": "LineString", "coordinates": [[0,0],[1,1]]});
        assert!(parse_geojson_polygons(&line).is_err());
    }

    #[test]
    fn tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = HWNetwork::from_edges([("b", "a", 2), ("c", "c", 1)]);
        let p = dir.path().join("net.csv");
        write_network(&p, &net).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "tower_a,tower_b,weight\na,b,2\nc,c,1\n");
        assert_eq!(read_network(&p).unwrap(), net);

        let part = Partition::from_pairs([("a", 1), ("b", 1), ("c", 0)]);
        let p = dir.path().join("part.csv");
        write_partition(&p, &part).unwrap();
        assert_eq!(read_partition(&p).unwrap(), part);

        let anchors = vec![UserAnchor::new("u1", "a", "b")];
        let p = dir.path().join("anchors.csv");
        write_anchors(&p, &anchors).unwrap();
        assert_eq!(read_anchors(&p).unwrap(), anchors);
    }

    #[test]
    fn towers_need_projection_flag_for_lonlat() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("towers.csv");
        std::fs::write(&p, "tower_id,lon,lat\nt1,-70.6,-33.4\nt2,-70.7,-33.5\n").unwrap();
        assert!(matches!(read_towers(&p, false), Err(Error::Config(_))));
        let sites = read_towers(&p, true).unwrap();
        assert!((sites[0].point.x + sites[1].point.x).abs() < 1e-6);
        std::fs::write(&p, "id,x,y\n").unwrap();
        assert!(matches!(read_towers(&p, false), Err(Error::MissingHeader { .. })));
    }
}
