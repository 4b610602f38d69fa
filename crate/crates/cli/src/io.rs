use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use smoothgauge::geometry::{parse_geojson, Contiguity, Region};
use smoothgauge::graph::AdjacencyGraph;

use crate::failure::{CmdResult, Failure};

pub fn sha256_file(path: &Path) -> CmdResult<String> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn is_geojson(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("geojson") | Some("json")
    )
}

/// `ROWSxCOLS`
pub fn parse_lattice(s: &str) -> CmdResult<(usize, usize)> {
    let bad = || Failure::usage(format!("lattice must look like 6x6, got '{s}'"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let r: usize = r.trim().parse().map_err(|_| bad())?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

pub fn load_regions(path: &Path) -> CmdResult<Vec<Region>> {
    parse_geojson(&read_text(path)?).map_err(Failure::from_input)
}

/// Where the adjacency structure comes from.
#[derive(Debug, Clone)]
pub enum GraphSource {
    /// Edge list, or GeoJSON polygons under queen contiguity.
    File(PathBuf),
    Lattice(usize, usize),
}

impl GraphSource {
    pub fn from_args(graph: Option<&PathBuf>, lattice: Option<&str>) -> CmdResult<Option<Self>> {
        match (graph, lattice) {
            (Some(_), Some(_)) => Err(Failure::usage("give either --graph or --lattice, not both")),
            (Some(p), None) => Ok(Some(GraphSource::File(p.clone()))),
            (None, Some(l)) => {
                let (r, c) = parse_lattice(l)?;
                Ok(Some(GraphSource::Lattice(r, c)))
            }
            (None, None) => Ok(None),
        }
    }

    pub fn load(&self) -> CmdResult<AdjacencyGraph> {
        match self {
            GraphSource::File(p) if is_geojson(p) => {
                AdjacencyGraph::from_polygons(&load_regions(p)?, Contiguity::Queen)
                    .map_err(Failure::from_input)
            }
            GraphSource::File(p) => {
                AdjacencyGraph::from_edge_list(&read_text(p)?).map_err(Failure::from_input)
            }
            GraphSource::Lattice(r, c) => Ok(AdjacencyGraph::lattice(*r, *c)?),
        }
    }

    pub fn file(&self) -> Option<&Path> {
        match self {
            GraphSource::File(p) => Some(p),
            GraphSource::Lattice(..) => None,
        }
    }
}

/// Reads `area_id,<column>` pairs. Extra columns are ignored; ids must be unique.
pub fn read_keyed_column(path: &Path, column: Option<&str>) -> CmdResult<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("area_id") {
        return Err(Failure::data(format!(
            "{}: first column must be 'area_id'",
            path.display()
        )));
    }
    let col = match column {
        Some(name) => headers.iter().position(|h| h == name).ok_or_else(|| {
            Failure::data(format!("{}: no column '{name}'", path.display()))
        })?,
        None if headers.len() >= 2 => 1,
        None => return Err(Failure::data(format!("{}: needs a value column", path.display()))),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let id = rec.get(0).unwrap_or("").to_string();
        let raw = rec.get(col).unwrap_or("");
        let v: f64 = raw.parse().map_err(|_| {
            Failure::data(format!("{} line {line}: '{raw}' is not a number", path.display()))
        })?;
        if !seen.insert(id.clone()) {
            return Err(Failure::data(format!("{}: duplicate area id '{id}'", path.display())));
        }
        out.push((id, v));
    }
    Ok(out)
}

/// Orders keyed values by `ids`, failing with the lists of missing and unknown ids.
pub fn align(ids: &[String], values: Vec<(String, f64)>, what: &str) -> CmdResult<Vec<f64>> {
    let map: HashMap<String, f64> = values.into_iter().collect();
    let missing: Vec<&str> = ids.iter().filter(|i| !map.contains_key(*i)).map(String::as_str).collect();
    let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut extra: Vec<&str> = map.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
    extra.sort_unstable();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Failure::data(format!(
            "{what} ids do not match the areas; missing: [{}]; unknown: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    Ok(ids.iter().map(|i| map[i]).collect())
}

pub fn counts_from(values: &[f64]) -> CmdResult<Vec<u64>> {
    values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
                Ok(v as u64)
            } else {
                Err(Failure::data(format!("count {v} is not a nonnegative integer")))
            }
        })
        .collect()
}

pub fn create_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult<()> {
    fs::write(path, contents).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

/// Comma-separated numbers.
pub fn parse_list(s: &str, what: &str) -> CmdResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::usage(format!("{what}: '{t}' is not a number")))
        })
        .collect()
}
