//! Areal adjacency graphs.
//!
//! Areas are indexed in file order and every matrix in the crate uses that
//! order. Islands are allowed here; CAR priors reject them later.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::{self, Contiguity, Point, Region};
use crate::numerics::SymMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    area_ids: Vec<String>,
    neighbours: Vec<Vec<usize>>,
    components: Vec<usize>,
    n_components: usize,
    centroids: Option<Vec<Point>>,
}

impl AdjacencyGraph {
    /// Builds a graph from ids and index pairs. Duplicates collapse; self-loops fail.
    pub fn from_edges(area_ids: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        if area_ids.is_empty() {
            return Err(Error::input("graph needs at least one area"));
        }
        let n = area_ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, id) in area_ids.iter().enumerate() {
            if index.insert(id.as_str(), i).is_some() {
                return Err(Error::input(format!("duplicate area id '{id}'")));
            }
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::input(format!("edge ({a},{b}) out of range for {n} areas")));
            }
            if a == b {
                return Err(Error::input(format!("self-loop on area '{}'", area_ids[a])));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let neighbours: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let (n_components, components) = label_components(&neighbours);
        Ok(AdjacencyGraph {
            area_ids,
            neighbours,
            components,
            n_components,
            centroids: None,
        })
    }

    /// Parses an edge list: one `idA,idB` pair per line, `#` starts a comment.
    ///
    /// Lines beginning with `@` declare area ids (comma separated) in order.
    /// When any declaration is present, undeclared ids are an error; this is
    /// also the only way to include areas without neighbours. Otherwise ids
    /// are taken in order of first appearance.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut declared: Vec<String> = Vec::new();
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('@') {
                for id in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    if declared.iter().any(|d| d == id) {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("area '{id}' declared twice"),
                        });
                    }
                    declared.push(id.to_string());
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 'idA,idB', got '{line}'"),
                });
            }
            if fields[0] == fields[1] {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("self-loop on area '{}'", fields[0]),
                });
            }
            pairs.push((line_no, fields[0].to_string(), fields[1].to_string()));
        }
        let strict = !declared.is_empty();
        let mut ids = declared;
        let mut index: HashMap<String, usize> =
            ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut edges = Vec::with_capacity(pairs.len());
        for (line, a, b) in pairs {
            let mut lookup = |id: String| -> Result<usize> {
                if let Some(&i) = index.get(&id) {
                    return Ok(i);
                }
                if strict {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown area id '{id}'"),
                    });
                }
                ids.push(id.clone());
                index.insert(id, ids.len() - 1);
                Ok(ids.len() - 1)
            };
            let ia = lookup(a)?;
            let ib = lookup(b)?;
            edges.push((ia, ib));
        }
        if ids.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "edge list declares no areas".into(),
            });
        }
        Self::from_edges(ids, &edges)
    }

    /// Contiguity graph of polygons, with area-weighted centroids attached.
    pub fn from_polygons(regions: &[Region], rule: Contiguity) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::input("no polygons supplied"));
        }
        let eps = geometry::default_eps(regions);
        let mut edges = Vec::new();
        for i in 0..regions.len() {
            for j in (i + 1)..regions.len() {
                if geometry::regions_touch(&regions[i], &regions[j], rule, eps) {
                    edges.push((i, j));
                }
            }
        }
        let ids = regions.iter().map(|r| r.id.clone()).collect();
        let g = Self::from_edges(ids, &edges)?;
        let centroids = regions.iter().map(Region::centroid).collect();
        g.with_centroids(centroids)
    }

    /// Rook lattice with centroids at integer coordinates `(col, row)`.
    /// Ids are `r{row}c{col}`, row-major.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::input("lattice needs rows, cols >= 1"));
        }
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        let mut ids = Vec::with_capacity(rows * cols);
        let mut cents = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                ids.push(format!("r{r}c{c}"));
                cents.push([c as f64, r as f64]);
                if c + 1 < cols {
                    edges.push((idx(r, c), idx(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((idx(r, c), idx(r + 1, c)));
                }
            }
        }
        Self::from_edges(ids, &edges)?.with_centroids(cents)
    }

    pub fn with_centroids(mut self, centroids: Vec<Point>) -> Result<Self> {
        if centroids.len() != self.order() {
            return Err(Error::input(format!(
                "{} centroids for {} areas",
                centroids.len(),
                self.order()
            )));
        }
        if centroids.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::input("centroid has a non-finite coordinate"));
        }
        self.centroids = Some(centroids);
        Ok(self)
    }

    /// Number of areas `A`.
    pub fn order(&self) -> usize {
        self.area_ids.len()
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.area_ids.iter().position(|a| a == id)
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbours[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbours.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, nb) in self.neighbours.iter().enumerate() {
            out.extend(nb.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn centroids(&self) -> Option<&[Point]> {
        self.centroids.as_deref()
    }

    /// Component label per area. Components are numbered by their first area in
    /// file order, so the component containing area 0 is label 0.
    pub fn component_labels(&self) -> &[usize] {
        &self.components
    }

    pub fn component_count(&self) -> usize {
        self.n_components
    }

    /// Areas in each component, in file order.
    pub fn component_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_components];
        for (i, &c) in self.components.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Indices of areas with no neighbours.
    pub fn islands(&self) -> Vec<usize> {
        (0..self.order()).filter(|&i| self.neighbours[i].is_empty()).collect()
    }

    /// Fails with [`Error::Island`] naming the first isolated area.
    pub fn require_no_islands(&self) -> Result<()> {
        match self.islands().first() {
            Some(&i) => Err(Error::Island {
                area: self.area_ids[i].clone(),
            }),
            None => Ok(()),
        }
    }

    /// Binary adjacency matrix `W`.
    pub fn adjacency_matrix(&self) -> SymMatrix {
        let n = self.order();
        SymMatrix::from_fn(n, |i, j| {
            if self.neighbours[i].binary_search(&j).is_ok() {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Graph Laplacian `D − W`.
    pub fn laplacian(&self) -> SymMatrix {
        let n = self.order();
        SymMatrix::from_fn(n, |i, j| {
            if i == j {
                self.degree(i) as f64
            } else if self.neighbours[i].binary_search(&j).is_ok() {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Same graph restricted to `keep` (in that order).
    pub fn subgraph(&self, keep: &[usize]) -> Result<Self> {
        let mut map = HashMap::new();
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.order() || map.insert(old, new).is_some() {
                return Err(Error::input("invalid or repeated subgraph index"));
            }
        }
        let ids = keep.iter().map(|&i| self.area_ids[i].clone()).collect();
        let mut edges = Vec::new();
        for (&old, &new) in &map {
            for &nb in &self.neighbours[old] {
                if let Some(&nn) = map.get(&nb) {
                    if new < nn {
                        edges.push((new, nn));
                    }
                }
            }
        }
        let g = Self::from_edges(ids, &edges)?;
        match &self.centroids {
            Some(c) => g.with_centroids(keep.iter().map(|&i| c[i]).collect()),
            None => Ok(g),
        }
    }

    /// Serialises as an edge list with an `@` declaration line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("@ {}\n", self.area_ids.join(","));
        for (i, j) in self.edges() {
            s.push_str(&self.area_ids[i]);
            s.push(',');
            s.push_str(&self.area_ids[j]);
            s.push('\n');
        }
        s
    }
}

/// Breadth-first component labelling; returns `(count, labels)`.
pub fn connected_components(g: &AdjacencyGraph) -> (usize, Vec<usize>) {
    (g.n_components, g.components.clone())
}

fn label_components(neighbours: &[Vec<usize>]) -> (usize, Vec<usize>) {
    let n = neighbours.len();
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbours[u] {
                if labels[v] == usize::MAX {
                    labels[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    (next, labels)
}
