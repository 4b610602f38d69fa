//! Planar polygon geometry: GeoJSON ingestion, centroids, point-in-polygon,
//! and contiguity tests between areal units.
//!
//! Coordinates are used exactly as given; no projection is applied.

use serde_json::Value;
use std::collections::HashSet;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// A simple polygon: one outer ring followed by zero or more holes.
/// Rings are stored open (the closing vertex is dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub rings: Vec<Vec<Point>>,
}

/// One areal unit, possibly made of several polygons.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub polygons: Vec<Polygon>,
}

/// How two regions must touch to count as neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Contiguity {
    /// Any shared boundary point, corners included.
    #[default]
    Queen,
    /// A shared boundary segment of positive length.
    Rook,
}

#[derive(Debug, Clone, Copy)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    fn empty() -> Self {
        BBox {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        }
    }

    fn include(&mut self, p: Point) {
        for k in 0..2 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &BBox) {
        self.include(o.min);
        self.include(o.max);
    }

    pub fn overlaps(&self, o: &BBox, eps: f64) -> bool {
        (0..2).all(|k| self.min[k] <= o.max[k] + eps && o.min[k] <= self.max[k] + eps)
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

/// Returns `(area, first moment x, first moment y)` of a ring, signed.
fn ring_moments(ring: &[Point]) -> (f64, f64, f64) {
    let n = ring.len();
    // shift to the first vertex to limit cancellation on projected coordinates
    let o = ring[0];
    let (mut a, mut mx, mut my) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = [ring[i][0] - o[0], ring[i][1] - o[1]];
        let q = [ring[(i + 1) % n][0] - o[0], ring[(i + 1) % n][1] - o[1]];
        let cross = p[0] * q[1] - q[0] * p[1];
        a += cross;
        mx += (p[0] + q[0]) * cross;
        my += (p[1] + q[1]) * cross;
    }
    let area = 0.5 * a;
    (area, mx / 6.0 + area * o[0], my / 6.0 + area * o[1])
}

impl Polygon {
    /// Builds a polygon, dropping closing vertices and validating each ring.
    pub fn new(rings: Vec<Vec<Point>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::input("polygon has no rings"));
        }
        let mut out = Vec::with_capacity(rings.len());
        for (k, mut ring) in rings.into_iter().enumerate() {
            if ring.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::input("polygon has a non-finite coordinate"));
            }
            if ring.len() >= 2 && ring.first() == ring.last() {
                ring.pop();
            }
            ring.dedup();
            if ring.len() < 3 {
                return Err(Error::input(format!("ring {k} has fewer than 3 distinct vertices")));
            }
            if ring_signed_area(&ring) == 0.0 {
                return Err(Error::input(format!("ring {k} has zero area")));
            }
            out.push(ring);
        }
        Ok(Polygon { rings: out })
    }

    /// Axis-aligned rectangle `[x0,x1]×[y0,y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon {
            rings: vec![vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]],
        }
    }

    /// Unsigned area with holes removed.
    pub fn area(&self) -> f64 {
        let outer = ring_signed_area(&self.rings[0]).abs();
        let holes: f64 = self.rings[1..]
            .iter()
            .map(|r| ring_signed_area(r).abs())
            .sum();
        outer - holes
    }

    fn moments(&self) -> (f64, f64, f64) {
        let mut tot = (0.0, 0.0, 0.0);
        for (k, ring) in self.rings.iter().enumerate() {
            let (a, mx, my) = ring_moments(ring);
            // outer ring counts positive, holes negative, regardless of winding
            let sign = if (k == 0) == (a > 0.0) { 1.0 } else { -1.0 };
            tot.0 += sign * a;
            tot.1 += sign * mx;
            tot.2 += sign * my;
        }
        tot
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            let n = ring.len();
            let mut j = n - 1;
            for i in 0..n {
                let (a, b) = (ring[i], ring[j]);
                if (a[1] > p[1]) != (b[1] > p[1]) {
                    let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                    if p[0] < x {
                        inside = !inside;
                    }
                }
                j = i;
            }
        }
        inside
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox::empty();
        for ring in &self.rings {
            for &p in ring {
                b.include(p);
            }
        }
        b
    }

    fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings.iter().flat_map(|ring| {
            let n = ring.len();
            (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
        })
    }
}

impl Region {
    pub fn area(&self) -> f64 {
        self.polygons.iter().map(Polygon::area).sum()
    }

    /// Area-weighted centroid over all polygons and holes.
    pub fn centroid(&self) -> Point {
        let (mut a, mut mx, mut my) = (0.0, 0.0, 0.0);
        for p in &self.polygons {
            let m = p.moments();
            a += m.0;
            mx += m.1;
            my += m.2;
        }
        [mx / a, my / a]
    }

    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox::empty();
        for p in &self.polygons {
            b.merge(&p.bbox());
        }
        b
    }

    fn segments(&self) -> Vec<(Point, Point)> {
        self.polygons.iter().flat_map(|p| p.segments()).collect()
    }
}

/// Bounding box of a collection of regions.
pub fn collection_bbox(regions: &[Region]) -> BBox {
    let mut b = BBox::empty();
    for r in regions {
        b.merge(&r.bbox());
    }
    b
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 == 0.0 {
        0.0
    } else {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

fn segments_touch(a: (Point, Point), b: (Point, Point), eps: f64) -> bool {
    let d1 = cross(sub(a.1, a.0), sub(b.0, a.0));
    let d2 = cross(sub(a.1, a.0), sub(b.1, a.0));
    let d3 = cross(sub(b.1, b.0), sub(a.0, b.0));
    let d4 = cross(sub(b.1, b.0), sub(a.1, b.0));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    point_segment_distance(b.0, a.0, a.1) <= eps
        || point_segment_distance(b.1, a.0, a.1) <= eps
        || point_segment_distance(a.0, b.0, b.1) <= eps
        || point_segment_distance(a.1, b.0, b.1) <= eps
}

/// Length of the collinear overlap of two segments (0 when not collinear).
fn collinear_overlap(a: (Point, Point), b: (Point, Point), eps: f64) -> f64 {
    let ab = sub(a.1, a.0);
    let len = dot(ab, ab).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let dist_line = |p: Point| cross(ab, sub(p, a.0)).abs() / len;
    if dist_line(b.0) > eps || dist_line(b.1) > eps {
        return 0.0;
    }
    let t0 = dot(sub(b.0, a.0), ab) / len;
    let t1 = dot(sub(b.1, a.0), ab) / len;
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    (hi.min(len) - lo.max(0.0)).max(0.0)
}

/// True when two regions are neighbours under the given rule.
pub fn regions_touch(a: &Region, b: &Region, rule: Contiguity, eps: f64) -> bool {
    let (ba, bb) = (a.bbox(), b.bbox());
    if !ba.overlaps(&bb, eps) {
        return false;
    }
    let sa: Vec<_> = a
        .segments()
        .into_iter()
        .filter(|s| seg_bbox(*s).overlaps(&bb, eps))
        .collect();
    let sb: Vec<_> = b
        .segments()
        .into_iter()
        .filter(|s| seg_bbox(*s).overlaps(&ba, eps))
        .collect();
    for &x in &sa {
        let bx = seg_bbox(x);
        for &y in &sb {
            if !bx.overlaps(&seg_bbox(y), eps) {
                continue;
            }
            let hit = match rule {
                Contiguity::Queen => segments_touch(x, y, eps),
                Contiguity::Rook => collinear_overlap(x, y, eps) > eps,
            };
            if hit {
                return true;
            }
        }
    }
    false
}

fn seg_bbox(s: (Point, Point)) -> BBox {
    let mut b = BBox::empty();
    b.include(s.0);
    b.include(s.1);
    b
}

/// Tolerance used for boundary contact: `1e-9` of the collection diameter.
pub fn default_eps(regions: &[Region]) -> f64 {
    1e-9 * collection_bbox(regions).diameter().max(f64::MIN_POSITIVE)
}

fn parse_point(v: &Value) -> Result<Point> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::input("coordinate must be an array [x, y]"))?;
    let x = arr[0].as_f64().ok_or_else(|| Error::input("coordinate x is not a number"))?;
    let y = arr[1].as_f64().ok_or_else(|| Error::input("coordinate y is not a number"))?;
    Ok([x, y])
}

fn parse_polygon(v: &Value) -> Result<Polygon> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::input("polygon coordinates must be an array of rings"))?;
    let rings = rings
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| Error::input("ring must be an array of coordinates"))?
                .iter()
                .map(parse_point)
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Polygon::new(rings)
}

fn feature_id(feature: &Value, index: usize) -> Result<String> {
    let id = feature
        .get("properties")
        .and_then(|p| p.get("id"))
        .ok_or_else(|| Error::input(format!("feature {index} lacks property \"id\"")))?;
    match id {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(Error::input(format!("feature {index} has a non-scalar id"))),
    }
}

/// Parses a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
pub fn parse_geojson(text: &str) -> Result<Vec<Region>> {
    let root: Value = serde_json::from_str(text)?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::input("expected a GeoJSON FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::input("FeatureCollection has no features array"))?;
    let mut seen = HashSet::new();
    let mut regions = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let id = feature_id(f, i)?;
        if !seen.insert(id.clone()) {
            return Err(Error::input(format!("duplicate feature id '{id}'")));
        }
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::input(format!("feature '{id}' has no geometry")))?;
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| Error::input(format!("feature '{id}' geometry has no coordinates")))?;
        let polygons = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![parse_polygon(coords)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::input("MultiPolygon coordinates must be an array"))?
                .iter()
                .map(parse_polygon)
                .collect::<Result<Vec<_>>>()?,
            other => {
                return Err(Error::input(format!(
                    "feature '{id}' has unsupported geometry type {other:?}"
                )))
            }
        };
        if polygons.is_empty() {
            return Err(Error::input(format!("feature '{id}' has empty geometry")));
        }
        regions.push(Region { id, polygons });
    }
    if regions.is_empty() {
        return Err(Error::input("FeatureCollection is empty"));
    }
    Ok(regions)
}

/// Serialises regions back to a GeoJSON FeatureCollection.
pub fn to_geojson(regions: &[Region]) -> String {
    let ring_json = |ring: &Vec<Point>| {
        let mut pts: Vec<Value> = ring.iter().map(|p| serde_json::json!([p[0], p[1]])).collect();
        pts.push(serde_json::json!([ring[0][0], ring[0][1]]));
        Value::Array(pts)
    };
    let features: Vec<Value> = regions
        .iter()
        .map(|r| {
            let polys: Vec<Value> = r
                .polygons
                .iter()
                .map(|p| Value::Array(p.rings.iter().map(ring_json).collect()))
                .collect();
            serde_json::json!({
                "type": "Feature",
                "properties": {"id": r.id},
                "geometry": {"type": "MultiPolygon", "coordinates": polys},
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features}).to_string()
}

/// `rows × cols` unit squares; ids are `r{row}c{col}` in row-major order.
pub fn square_lattice(rows: usize, cols: usize, cell: f64) -> Vec<Region> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c as f64 * cell, r as f64 * cell);
            out.push(Region {
                id: format!("r{r}c{c}"),
                polygons: vec![Polygon::rectangle(x0, y0, x0 + cell, y0 + cell)],
            });
        }
    }
    out
}
