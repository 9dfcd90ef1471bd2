//! Highway network topology: links, sensors, line graph and incidence.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: usize,
    pub from_node: usize,
    pub to_node: usize,
    /// Miles.
    pub length: f64,
    pub has_sensor: bool,
}

/// Directed network of interchanges and one-way links.
///
/// Built only through [`DirectedNetwork::new`], which enforces: link ids are
/// `0..n_lk` in order, no self loops, no parallel links, positive lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedNetwork {
    node_count: usize,
    links: Vec<Link>,
    sensor_links: Vec<usize>,
}

impl DirectedNetwork {
    pub fn new(node_count: usize, links: Vec<Link>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Network("node count must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (pos, link) in links.iter().enumerate() {
            if link.id != pos {
                return Err(Error::Network(format!(
                    "link at position {pos} has id {}; ids must be 0..n_lk in order",
                    link.id
                )));
            }
            if link.from_node >= node_count || link.to_node >= node_count {
                return Err(Error::Network(format!(
                    "link {} references node outside 0..{node_count}",
                    link.id
                )));
            }
            if link.from_node == link.to_node {
                return Err(Error::Network(format!("link {} is a self loop", link.id)));
            }
            if !(link.length.is_finite() && link.length > 0.0) {
                return Err(Error::Network(format!(
                    "link {} has non-positive length {}",
                    link.id, link.length
                )));
            }
            if !seen.insert((link.from_node, link.to_node)) {
                return Err(Error::Network(format!(
                    "duplicate link {} -> {}",
                    link.from_node, link.to_node
                )));
            }
        }
        let sensor_links = links.iter().filter(|l| l.has_sensor).map(|l| l.id).collect();
        Ok(Self { node_count, links, sensor_links })
    }

    /// Linear corridor of `n_d` interchanges `spacing` miles apart, one link
    /// per direction per segment, every link sensed at its entrance.
    ///
    /// Links `0..n_d-1` run `i -> i+1`; the remaining links run back from the
    /// far end, `n_d-1 -> n_d-2` down to `1 -> 0`.
    pub fn turnpike(n_d: usize, spacing: f64) -> Result<Self> {
        if n_d < 2 {
            return Err(Error::InvalidArgument(format!("turnpike needs at least 2 interchanges, got {n_d}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing}")));
        }
        let forward = (0..n_d - 1).map(|i| (i, i + 1));
        let backward = (1..n_d).rev().map(|i| (i, i - 1));
        let links = forward
            .chain(backward)
            .enumerate()
            .map(|(id, (from_node, to_node))| Link { id, from_node, to_node, length: spacing, has_sensor: true })
            .collect();
        Self::new(n_d, links)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn sensor_links(&self) -> &[usize] {
        &self.sensor_links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_links.len()
    }

    pub fn od_count(&self) -> usize {
        self.node_count * (self.node_count - 1)
    }

    pub fn od_pairs(&self) -> OdPairs {
        OdPairs { n_d: self.node_count }
    }

    /// Position of `link_id` among the sensor links.
    pub fn sensor_position(&self, link_id: usize) -> Option<usize> {
        self.sensor_links.binary_search(&link_id).ok()
    }

    /// Link adjacency restricted to sensor links: `(i, j) = 1` iff the head of
    /// sensor link `i` is the tail of sensor link `j`.
    pub fn line_graph(&self) -> LinkAdjacency {
        let n = self.sensor_links.len();
        let heads: Vec<usize> = self.sensor_links.iter().map(|&l| self.links[l].to_node).collect();
        let tails: Vec<usize> = self.sensor_links.iter().map(|&l| self.links[l].from_node).collect();
        // The invariants exclude self loops, so the diagonal is always zero.
        let matrix = DMatrix::from_fn(n, n, |i, j| if heads[i] == tails[j] { 1.0 } else { 0.0 });
        LinkAdjacency(matrix)
    }

    /// Node-by-sensor-link incidence: `+1` where the link starts, `-1` where it ends.
    pub fn incidence(&self) -> IncidenceMatrix {
        let mut matrix = DMatrix::zeros(self.node_count, self.sensor_links.len());
        for (col, &l) in self.sensor_links.iter().enumerate() {
            let link = &self.links[l];
            matrix[(link.from_node, col)] = 1.0;
            matrix[(link.to_node, col)] = -1.0;
        }
        IncidenceMatrix(matrix)
    }

    /// Node adjacency `A_N`. Not consumed by any model path.
    pub fn node_adjacency(&self) -> DMatrix<f64> {
        let mut matrix = DMatrix::zeros(self.node_count, self.node_count);
        for link in &self.links {
            matrix[(link.from_node, link.to_node)] = 1.0;
        }
        matrix
    }

    /// Unique route of every O-D pair, in O-D pair order.
    ///
    /// Fails unless every ordered pair of interchanges is joined by exactly
    /// one simple path.
    pub fn routes(&self) -> Result<Vec<Route>> {
        let mut out_links: Vec<Vec<usize>> = vec![Vec::new(); self.node_count];
        for link in &self.links {
            out_links[link.from_node].push(link.id);
        }
        let pairs = self.od_pairs();
        let mut routes = Vec::with_capacity(pairs.len());
        for r in 0..pairs.len() {
            let (origin, destination) = pairs.endpoints(r);
            let mut found = Vec::new();
            let mut visited = vec![false; self.node_count];
            let mut path = Vec::new();
            self.simple_paths(origin, destination, &out_links, &mut visited, &mut path, &mut found);
            if found.len() != 1 {
                return Err(Error::NotCorridor(format!(
                    "O-D pair {origin} -> {destination} has {} simple routes",
                    found.len()
                )));
            }
            let links = found.pop().unwrap();
            let mut entrance_miles = Vec::with_capacity(links.len());
            let mut travelled = 0.0;
            for &l in &links {
                entrance_miles.push(travelled);
                travelled += self.links[l].length;
            }
            routes.push(Route { origin, destination, links, entrance_miles });
        }
        Ok(routes)
    }

    fn simple_paths(
        &self,
        at: usize,
        target: usize,
        out_links: &[Vec<usize>],
        visited: &mut [bool],
        path: &mut Vec<usize>,
        found: &mut Vec<Vec<usize>>,
    ) {
        if found.len() > 1 {
            return;
        }
        if at == target {
            found.push(path.clone());
            return;
        }
        visited[at] = true;
        for &l in &out_links[at] {
            let next = self.links[l].to_node;
            if !visited[next] {
                path.push(l);
                self.simple_paths(next, target, out_links, visited, path, found);
                path.pop();
            }
        }
        visited[at] = false;
    }

    /// Line-oriented text form: `nodes <n_d>` then one
    /// `link <id> <from> <to> <length_miles> <sensor 0|1>` line per link.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.node_count);
        for l in &self.links {
            let _ = writeln!(
                out,
                "link {} {} {} {} {}",
                l.id,
                l.from_node,
                l.to_node,
                l.length,
                u8::from(l.has_sensor)
            );
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut node_count = None;
        let mut links = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::parse(source, line_no, msg.to_string());
            match fields[0] {
                "nodes" => {
                    if node_count.is_some() {
                        return Err(bad("duplicate `nodes` header"));
                    }
                    if fields.len() != 2 {
                        return Err(bad("expected `nodes <n_d>`"));
                    }
                    node_count = Some(fields[1].parse::<usize>().map_err(|e| bad(&format!("node count: {e}")))?);
                }
                "link" => {
                    if node_count.is_none() {
                        return Err(bad("`link` before `nodes` header"));
                    }
                    if fields.len() != 6 {
                        return Err(bad("expected `link <id> <from> <to> <length_miles> <sensor 0|1>`"));
                    }
                    let int = |s: &str, what: &str| s.parse::<usize>().map_err(|e| bad(&format!("{what}: {e}")));
                    let length = fields[4].parse::<f64>().map_err(|e| bad(&format!("length: {e}")))?;
                    let has_sensor = match fields[5] {
                        "0" => false,
                        "1" => true,
                        other => return Err(bad(&format!("sensor flag must be 0 or 1, got `{other}`"))),
                    };
                    links.push(Link {
                        id: int(fields[1], "link id")?,
                        from_node: int(fields[2], "from node")?,
                        to_node: int(fields[3], "to node")?,
                        length,
                        has_sensor,
                    });
                }
                other => return Err(bad(&format!("unknown record `{other}`"))),
            }
        }
        let node_count = node_count.ok_or_else(|| Error::parse(source, 0, "missing `nodes` header"))?;
        Self::new(node_count, links)
    }
}

/// Row-major indexing of O-D pairs in an `n_d x (n_d - 1)` matrix: row is the
/// origin, column is the destination with the origin's own column skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OdPairs {
    pub n_d: usize,
}

impl OdPairs {
    pub fn len(&self) -> usize {
        self.n_d * (self.n_d - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, origin: usize, destination: usize) -> usize {
        debug_assert_ne!(origin, destination);
        let col = if destination < origin { destination } else { destination - 1 };
        origin * (self.n_d - 1) + col
    }

    pub fn endpoints(&self, index: usize) -> (usize, usize) {
        let origin = index / (self.n_d - 1);
        let col = index % (self.n_d - 1);
        let destination = if col < origin { col } else { col + 1 };
        (origin, destination)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub origin: usize,
    pub destination: usize,
    /// Link ids in travel order.
    pub links: Vec<usize>,
    /// Distance from the origin to each link's entrance, miles.
    pub entrance_miles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkAdjacency(pub DMatrix<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix(pub DMatrix<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct RenormalizedAdjacency(pub DMatrix<f64>);

impl LinkAdjacency {
    /// `D~^-1 (A_L + I)` with `D~` the row sums of `A_L + I`.
    pub fn renormalized(&self) -> RenormalizedAdjacency {
        let n = self.0.nrows();
        let mut tilde = &self.0 + DMatrix::<f64>::identity(n, self.0.ncols());
        for mut row in tilde.row_iter_mut() {
            let degree: f64 = row.iter().sum();
            row /= degree;
        }
        RenormalizedAdjacency(tilde)
    }
}
