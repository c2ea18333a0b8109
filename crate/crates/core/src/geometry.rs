//! Planar geometry for tower coverage: Voronoi cells, polygon overlap areas,
//! urban filtering, nearest-site lookup and areal SEL weighting.
//!
//! All coordinates are projected planar meters. Use [`project_lonlat`] to get
//! there from geographic coordinates when no proper projection is at hand.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TowerId(pub String);

impl fmt::Display for TowerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TowerId {
    fn from(s: &str) -> Self {
        TowerId(s.to_owned())
    }
}

impl From<String> for TowerId {
    fn from(s: String) -> Self {
        TowerId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    fn of(points: impl IntoIterator<Item = Point>) -> Self {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox { min, max }
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    /// Grows the box by `frac` of its width and height on every side.
    pub fn expanded(&self, frac: f64) -> BBox {
        let dx = self.width() * frac;
        let dy = self.height() * frac;
        BBox {
            min: Point::new(self.min.x - dx, self.min.y - dy),
            max: Point::new(self.max.x + dx, self.max.y + dy),
        }
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon::rect(self.min.x, self.min.y, self.max.x, self.max.y)
    }
}

fn signed_ring_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    // shoelace about the first vertex keeps cancellation small far from the origin
    let o = ring[0];
    let mut acc = 0.0;
    for i in 1..n - 1 {
        let a = ring[i];
        let b = ring[i + 1];
        acc += (a.x - o.x) * (b.y - o.y) - (b.x - o.x) * (a.y - o.y);
    }
    acc * 0.5
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on_segment = |a: Point, b: Point, p: Point| {
        p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    };
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// A polygon with one outer ring (counterclockwise) and optional holes
/// (clockwise). Rings are stored open: the closing vertex is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    rings: Vec<Vec<Point>>,
}

impl Polygon {
    /// Validates and orients the rings. A repeated closing vertex is accepted
    /// and dropped.
    pub fn new(outer: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self> {
        let mut rings = Vec::with_capacity(1 + holes.len());
        for (i, ring) in std::iter::once(outer).chain(holes).enumerate() {
            let mut ring = clean_ring(ring);
            if ring.len() < 3 {
                return Err(Error::InvalidPolygon(format!(
                    "ring {i} has fewer than 3 distinct vertices"
                )));
            }
            if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::InvalidPolygon(format!("ring {i} has non-finite coordinates")));
            }
            if ring_self_intersects(&ring) {
                return Err(Error::InvalidPolygon(format!("ring {i} self-intersects")));
            }
            let area = signed_ring_area(&ring);
            if area == 0.0 {
                return Err(Error::InvalidPolygon(format!("ring {i} has zero area")));
            }
            let want_ccw = i == 0;
            if (area > 0.0) != want_ccw {
                ring.reverse();
            }
            rings.push(ring);
        }
        let poly = Polygon { rings };
        if poly.area() <= 0.0 {
            return Err(Error::InvalidPolygon("holes cover the outer ring".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle; panics on an empty extent.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        assert!(x1 > x0 && y1 > y0, "empty rectangle");
        Polygon {
            rings: vec![vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ]],
        }
    }

    pub fn rings(&self) -> &[Vec<Point>] {
        &self.rings
    }

    pub fn outer(&self) -> &[Point] {
        &self.rings[0]
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.rings[1..]
    }

    pub fn area(&self) -> f64 {
        self.rings.iter().map(|r| signed_ring_area(r)).sum()
    }

    pub fn bbox(&self) -> BBox {
        BBox::of(self.rings[0].iter().copied())
    }

    pub fn centroid(&self) -> Point {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a = 0.0;
        for ring in &self.rings {
            let n = ring.len();
            for i in 0..n {
                let p = ring[i];
                let q = ring[(i + 1) % n];
                let c = p.x * q.y - q.x * p.y;
                a += c;
                cx += (p.x + q.x) * c;
                cy += (p.y + q.y) * c;
            }
        }
        Point::new(cx / (3.0 * a), cy / (3.0 * a))
    }

    /// Point-in-polygon by winding number; boundary points count as inside.
    pub fn contains(&self, p: Point) -> bool {
        let mut winding = 0i32;
        for ring in &self.rings {
            let n = ring.len();
            for i in 0..n {
                let a = ring[i];
                let b = ring[(i + 1) % n];
                let c = cross(a, b, p);
                if c == 0.0
                    && p.x >= a.x.min(b.x)
                    && p.x <= a.x.max(b.x)
                    && p.y >= a.y.min(b.y)
                    && p.y <= a.y.max(b.y)
                {
                    return true;
                }
                if a.y <= p.y {
                    if b.y > p.y && c > 0.0 {
                        winding += 1;
                    }
                } else if b.y <= p.y && c < 0.0 {
                    winding -= 1;
                }
            }
        }
        winding != 0
    }

    /// Intersection with the half-plane of points no farther from `near` than
    /// from `far`. Rings that vanish are dropped; `None` if nothing remains.
    fn clip_bisector(&self, near: Point, far: Point) -> Option<Polygon> {
        let nx = far.x - near.x;
        let ny = far.y - near.y;
        let mid = Point::new((near.x + far.x) * 0.5, (near.y + far.y) * 0.5);
        let side = |p: Point| (p.x - mid.x) * nx + (p.y - mid.y) * ny;
        let mut rings = Vec::with_capacity(self.rings.len());
        for (i, ring) in self.rings.iter().enumerate() {
            let clipped = clip_ring(ring, side);
            if clipped.len() >= 3 && signed_ring_area(&clipped).abs() > 0.0 {
                rings.push(clipped);
            } else if i == 0 {
                return None;
            }
        }
        Some(Polygon { rings })
    }
}

fn clean_ring(mut ring: Vec<Point>) -> Vec<Point> {
    ring.dedup();
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in i + 1..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

/// Sutherland-Hodgman step: keeps the part of `ring` where `side(p) <= 0`.
fn clip_ring(ring: &[Point], side: impl Fn(Point) -> f64) -> Vec<Point> {
    let n = ring.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let cur = ring[i];
        let next = ring[(i + 1) % n];
        let sc = side(cur);
        let sn = side(next);
        if sc <= 0.0 {
            out.push(cur);
        }
        if (sc < 0.0 && sn > 0.0) || (sc > 0.0 && sn < 0.0) {
            let t = sc / (sc - sn);
            out.push(Point::new(
                cur.x + t * (next.x - cur.x),
                cur.y + t * (next.y - cur.y),
            ));
        }
    }
    out.dedup();
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

/// Intersection area of two triangles given counterclockwise.
fn triangle_overlap(t1: [Point; 3], t2: [Point; 3]) -> f64 {
    let mut poly: Vec<Point> = t1.to_vec();
    for k in 0..3 {
        let a = t2[k];
        let b = t2[(k + 1) % 3];
        // inside = left of a->b, i.e. cross >= 0
        poly = clip_ring(&poly, |p| -cross(a, b, p));
        if poly.len() < 3 {
            return 0.0;
        }
    }
    signed_ring_area(&poly).max(0.0)
}

fn fan_triangles(poly: &Polygon, origin: Point) -> Vec<([Point; 3], f64, BBox)> {
    let mut tris = Vec::new();
    for ring in poly.rings() {
        let n = ring.len();
        for i in 0..n {
            let p = ring[i];
            let q = ring[(i + 1) % n];
            let c = cross(origin, p, q);
            if c == 0.0 {
                continue;
            }
            let (tri, sign) = if c > 0.0 {
                ([origin, p, q], 1.0)
            } else {
                ([origin, q, p], -1.0)
            };
            tris.push((tri, sign, BBox::of(tri)));
        }
    }
    tris
}

/// Area of `a ∩ b` in square meters.
///
/// Each polygon's indicator function equals a signed sum of fan triangles
/// from a common origin, so the overlap area is the signed sum of pairwise
/// triangle overlaps. This handles non-convex rings and holes uniformly.
pub fn polygon_intersection_area(a: &Polygon, b: &Polygon) -> f64 {
    let ba = a.bbox();
    let bb = b.bbox();
    if !ba.intersects(&bb) {
        return 0.0;
    }
    let origin = Point::new(ba.min.x.max(bb.min.x), ba.min.y.max(bb.min.y));
    let ta = fan_triangles(a, origin);
    let tb = fan_triangles(b, origin);
    let mut area = 0.0;
    for (t1, s1, b1) in &ta {
        for (t2, s2, b2) in &tb {
            if b1.intersects(b2) {
                area += s1 * s2 * triangle_overlap(*t1, *t2);
            }
        }
    }
    area.max(0.0)
}

/// Socioeconomic level group, S1 (most affluent) to S5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SelLabel {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl SelLabel {
    pub const ALL: [SelLabel; 5] = [SelLabel::S1, SelLabel::S2, SelLabel::S3, SelLabel::S4, SelLabel::S5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Some(SelLabel::S1),
            "S2" => Some(SelLabel::S2),
            "S3" => Some(SelLabel::S3),
            "S4" => Some(SelLabel::S4),
            "S5" => Some(SelLabel::S5),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        ["S1", "S2", "S3", "S4", "S5"][self.index()]
    }
}

/// Share of each SEL group, S1..S5; sums to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelProfile {
    pub fractions: [f64; 5],
}

impl SelProfile {
    /// Normalizes non-negative weights; `None` when they sum to zero.
    pub fn from_weights(weights: [f64; 5]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            Some(SelProfile {
                fractions: weights.map(|w| w / total),
            })
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub tower_id: TowerId,
    pub point: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerCell {
    pub tower_id: TowerId,
    pub site: Point,
    pub cell: Polygon,
    pub urban_overlap: Option<f64>,
    pub sel: Option<SelProfile>,
}

/// Voronoi cells of `sites`, clipped to `bounds`.
///
/// Each cell is `bounds` cut by the bisector half-planes against the other
/// sites, visited nearest first; once a site is farther than twice the
/// cell's current radius its bisector cannot reach the cell and the scan
/// stops. Cells are exact for convex bounds. For non-convex bounds the area
/// and coverage are exact but a ring may carry zero-width slivers.
pub fn compute_voronoi(sites: &[Site], bounds: &Polygon) -> Result<Vec<TowerCell>> {
    if sites.is_empty() {
        return Err(Error::NoSites);
    }
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (sites[i].point, sites[j].point);
        a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y))
    });
    for w in order.windows(2) {
        if sites[w[0]].point == sites[w[1]].point {
            let (a, b) = (&sites[w[0]].tower_id, &sites[w[1]].tower_id);
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            return Err(Error::DuplicateSites(a.0.clone(), b.0.clone()));
        }
    }
    for s in sites {
        if !s.point.x.is_finite() || !s.point.y.is_finite() || !bounds.contains(s.point) {
            return Err(Error::SiteOutsideBounds(s.tower_id.0.clone()));
        }
    }

    let mut cells = Vec::with_capacity(sites.len());
    let mut by_dist: Vec<(f64, usize)> = Vec::with_capacity(sites.len());
    for (i, s) in sites.iter().enumerate() {
        by_dist.clear();
        by_dist.extend(
            sites
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, o)| (s.point.dist2(o.point), j)),
        );
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut cell = bounds.clone();
        let mut radius2 = max_vertex_dist2(&cell, s.point);
        for &(d2, j) in &by_dist {
            // the bisector lies at d/2; it misses the cell when d/2 > radius
            if d2 > 4.0 * radius2 {
                break;
            }
            match cell.clip_bisector(s.point, sites[j].point) {
                Some(c) => cell = c,
                None => {
                    return Err(Error::InvalidPolygon(format!(
                        "cell of tower {} vanished during clipping",
                        s.tower_id
                    )))
                }
            }
            radius2 = max_vertex_dist2(&cell, s.point);
        }
        cells.push(TowerCell {
            tower_id: s.tower_id.clone(),
            site: s.point,
            cell,
            urban_overlap: None,
            sel: None,
        });
    }
    Ok(cells)
}

fn max_vertex_dist2(poly: &Polygon, p: Point) -> f64 {
    poly.rings()
        .iter()
        .flatten()
        .map(|v| v.dist2(p))
        .fold(0.0, f64::max)
}

/// Floating slack on the inclusive overlap threshold, so that an overlap of
/// exactly the threshold computed with rounding noise still qualifies.
const OVERLAP_EPS: f64 = 1e-9;

/// Keeps cells whose fraction of area inside `urban` is at least `threshold`.
pub fn urban_overlap_filter(
    cells: &[TowerCell],
    urban: &Polygon,
    threshold: f64,
) -> Result<Vec<TowerCell>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "overlap threshold {threshold} outside [0, 1]"
        )));
    }
    let mut kept = Vec::new();
    for c in cells {
        let area = c.cell.area();
        let overlap = (polygon_intersection_area(&c.cell, urban) / area).clamp(0.0, 1.0);
        if overlap >= threshold - OVERLAP_EPS {
            let mut c = c.clone();
            c.urban_overlap = Some(overlap);
            kept.push(c);
        }
    }
    Ok(kept)
}

/// Census block carrying a single SEL label.
#[derive(Debug, Clone, PartialEq)]
pub struct SelBlock {
    pub polygon: Polygon,
    pub sel: SelLabel,
}

/// Sets each cell's SEL profile from the blocks' areal contributions.
pub fn assign_sel(cells: &mut [TowerCell], blocks: &[SelBlock]) {
    let boxes: Vec<BBox> = blocks.iter().map(|b| b.polygon.bbox()).collect();
    for cell in cells.iter_mut() {
        let cb = cell.cell.bbox();
        let mut weights = [0.0; 5];
        for (block, bb) in blocks.iter().zip(&boxes) {
            if cb.intersects(bb) {
                weights[block.sel.index()] += polygon_intersection_area(&cell.cell, &block.polygon);
            }
        }
        cell.sel = SelProfile::from_weights(weights);
    }
}

fn nearer(a: (f64, &TowerId), b: (f64, &TowerId)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.1 < b.1,
    }
}

/// Nearest tower site by linear scan; ties go to the lowest tower id.
pub fn locate_tower<'a>(p: Point, cells: &'a [TowerCell]) -> Option<&'a TowerId> {
    let mut best: Option<(f64, &TowerId)> = None;
    for c in cells {
        let cand = (p.dist2(c.site), &c.tower_id);
        if best.is_none_or(|b| nearer(cand, b)) {
            best = Some(cand);
        }
    }
    best.map(|b| b.1)
}

/// Uniform-grid index over tower sites answering nearest-site queries with
/// the same result (including tie-breaks) as [`locate_tower`].
#[derive(Debug, Clone)]
pub struct SiteIndex {
    ids: Vec<TowerId>,
    points: Vec<Point>,
    by_id: HashMap<TowerId, usize>,
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl SiteIndex {
    pub fn new(sites: impl IntoIterator<Item = (TowerId, Point)>) -> Self {
        let (ids, points): (Vec<_>, Vec<_>) = sites.into_iter().unzip();
        let bb = BBox::of(points.iter().copied());
        let n = points.len().max(1);
        let extent = bb.width().max(bb.height());
        let cell = if extent > 0.0 && extent.is_finite() {
            (bb.width().max(extent * 1e-3) * bb.height().max(extent * 1e-3) / n as f64).sqrt()
        } else {
            1.0
        };
        let origin = if points.is_empty() { Point::new(0.0, 0.0) } else { bb.min };
        let nx = if points.is_empty() { 1 } else { (bb.width() / cell) as usize + 1 };
        let ny = if points.is_empty() { 1 } else { (bb.height() / cell) as usize + 1 };
        let mut buckets = vec![Vec::new(); nx * ny];
        let by_id = ids.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut idx = SiteIndex {
            ids,
            points,
            by_id,
            origin,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (i, p) in idx.points.iter().enumerate() {
            let (gx, gy) = idx.grid_of(*p);
            buckets[gy * nx + gx].push(i);
        }
        idx.buckets = buckets;
        idx
    }

    pub fn from_cells(cells: &[TowerCell]) -> Self {
        SiteIndex::new(cells.iter().map(|c| (c.tower_id.clone(), c.site)))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &TowerId {
        &self.ids[i]
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn index_of(&self, t: &TowerId) -> Option<usize> {
        self.by_id.get(t).copied()
    }

    pub fn position(&self, t: &TowerId) -> Option<Point> {
        self.index_of(t).map(|i| self.points[i])
    }

    fn grid_of(&self, p: Point) -> (usize, usize) {
        let gx = ((p.x - self.origin.x) / self.cell).floor();
        let gy = ((p.y - self.origin.y) / self.cell).floor();
        let clamp = |g: f64, n: usize| {
            if g.is_nan() || g < 0.0 {
                0
            } else {
                (g as usize).min(n - 1)
            }
        };
        (clamp(gx, self.nx), clamp(gy, self.ny))
    }

    /// Index of the nearest site, `None` for an empty index.
    pub fn nearest(&self, p: Point) -> Option<usize> {
        if self.ids.is_empty() {
            return None;
        }
        let (cx, cy) = self.grid_of(p);
        let mut best: Option<(f64, usize)> = None;
        let max_ring = self.nx.max(self.ny);
        for r in 0..=max_ring {
            let x0 = cx as isize - r as isize;
            let x1 = cx as isize + r as isize;
            let y0 = cy as isize - r as isize;
            let y1 = cy as isize + r as isize;
            for gy in y0..=y1 {
                if gy < 0 || gy >= self.ny as isize {
                    continue;
                }
                for gx in x0..=x1 {
                    if gx < 0 || gx >= self.nx as isize {
                        continue;
                    }
                    if gy != y0 && gy != y1 && gx != x0 && gx != x1 {
                        continue;
                    }
                    for &i in &self.buckets[gy as usize * self.nx + gx as usize] {
                        let d = p.dist2(self.points[i]);
                        let better = match best {
                            None => true,
                            Some((bd, bi)) => nearer((d, &self.ids[i]), (bd, &self.ids[bi])),
                        };
                        if better {
                            best = Some((d, i));
                        }
                    }
                }
            }
            // unvisited sites sit at least r full cells away from the
            // projection of p onto the grid, hence from p itself
            if let Some((bd, _)) = best {
                let gap = r as f64 * self.cell;
                if gap * gap > bd {
                    break;
                }
            }
        }
        best.map(|b| b.1)
    }

    pub fn locate(&self, p: Point) -> Option<&TowerId> {
        self.nearest(p).map(|i| &self.ids[i])
    }
}

/// Mean Earth radius in meters used by [`project_lonlat`].
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Equirectangular projection about `center` (lon, lat in degrees).
/// Approximate: distortion grows with distance from the center latitude.
pub fn project_lonlat(lon: f64, lat: f64, center: (f64, f64)) -> Point {
    let (lon0, lat0) = center;
    let x = EARTH_RADIUS_M * (lon - lon0).to_radians() * lat0.to_radians().cos();
    let y = EARTH_RADIUS_M * (lat - lat0).to_radians();
    Point::new(x, y)
}
