//! Spatial triangulations of the flow domain and their prismatic extrusion
//! into space-time slabs.
//!
//! Local edge `k` of a triangle joins local vertices `k` and `(k + 1) % 3`.
//! Each edge stores its vertices in canonical parameter order: ascending
//! vertex index, except periodic edges which run upward in `x2` so that a
//! periodic pair shares one parameterisation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::PrismGeometry;
use crate::error::MeshError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    FreeSurface,
    Bottom,
    PeriodicLeft,
    PeriodicRight,
    WaveMaker,
    Wall,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::FreeSurface => "FreeSurface",
            BoundaryTag::Bottom => "Bottom",
            BoundaryTag::PeriodicLeft => "PeriodicLeft",
            BoundaryTag::PeriodicRight => "PeriodicRight",
            BoundaryTag::WaveMaker => "WaveMaker",
            BoundaryTag::Wall => "Wall",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "FreeSurface" => BoundaryTag::FreeSurface,
            "Bottom" => BoundaryTag::Bottom,
            "PeriodicLeft" => BoundaryTag::PeriodicLeft,
            "PeriodicRight" => BoundaryTag::PeriodicRight,
            "WaveMaker" => BoundaryTag::WaveMaker,
            "Wall" => BoundaryTag::Wall,
            _ => return None,
        })
    }

    pub fn is_periodic(self) -> bool {
        matches!(self, BoundaryTag::PeriodicLeft | BoundaryTag::PeriodicRight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Canonical start and end vertex.
    pub vertices: [usize; 2],
    /// `(triangle, local edge)` pairs.
    pub owners: Vec<(usize, usize)>,
    pub tag: Option<BoundaryTag>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.owners.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    pub triangle_edges: Vec<[usize; 3]>,
    /// `(left edge, right edge)` identifications.
    pub periodic_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub left: f64,
    pub right: f64,
    pub depth: f64,
}

impl Domain {
    pub fn new(left: f64, right: f64, depth: f64) -> Self {
        Self { left, right, depth }
    }
}

/// Piecewise-linear bottom topography `b(x1)`; the bottom sits at `x2 = -H + b(x1)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BottomProfile {
    /// `(x1, b)` breakpoints sorted by `x1`; empty means flat (`b = 0`).
    pub breakpoints: Vec<(f64, f64)>,
}

impl BottomProfile {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn new(mut breakpoints: Vec<(f64, f64)>) -> Self {
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { breakpoints }
    }

    pub fn eval(&self, x1: f64) -> f64 {
        let bp = &self.breakpoints;
        match bp.len() {
            0 => 0.0,
            1 => bp[0].1,
            _ => {
                if x1 <= bp[0].0 {
                    return bp[0].1;
                }
                for w in bp.windows(2) {
                    let (xa, ba) = w[0];
                    let (xb, bb) = w[1];
                    if x1 <= xb {
                        let s = if xb > xa { (x1 - xa) / (xb - xa) } else { 1.0 };
                        return ba + s * (bb - ba);
                    }
                }
                bp[bp.len() - 1].1
            }
        }
    }
}

/// How the vertical walls `x1 = L` and `x1 = R` are tagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LateralBoundaries {
    Periodic,
    /// Wave maker on the left wall, reflecting wall on the right.
    WaveMakerLeft,
    Walls,
}

/// Sheared `nx x ny` grid split along the lower-left to upper-right diagonal.
pub fn build_structured_mesh(
    nx: usize,
    ny: usize,
    domain: Domain,
    bottom: &BottomProfile,
    lateral: LateralBoundaries,
) -> Result<SpatialMesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyGrid { nx, ny });
    }
    if !(domain.right > domain.left) || !(domain.depth > 0.0) {
        return Err(MeshError::InvalidDomain(format!(
            "need L < R and H > 0 (got L={}, R={}, H={})",
            domain.left, domain.right, domain.depth
        )));
    }
    let dx = (domain.right - domain.left) / nx as f64;
    let column_x = |i: usize| {
        if i == nx {
            domain.right
        } else {
            domain.left + i as f64 * dx
        }
    };
    let mut checks: Vec<f64> = (0..=nx).map(column_x).collect();
    checks.extend(
        bottom
            .breakpoints
            .iter()
            .map(|b| b.0)
            .filter(|x| *x > domain.left && *x < domain.right),
    );
    for x1 in checks {
        let b = bottom.eval(x1);
        if b >= domain.depth {
            return Err(MeshError::EmptyWaterColumn {
                x1,
                b,
                depth: domain.depth,
            });
        }
    }

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x1 = column_x(i);
            let bottom_x2 = -domain.depth + bottom.eval(x1);
            let x2 = if j == ny {
                0.0
            } else {
                bottom_x2 * (1.0 - j as f64 / ny as f64)
            };
            vertices.push([x1, x2]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v01 = vid(i, j + 1);
            let v11 = vid(i + 1, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let (left_tag, right_tag) = match lateral {
        LateralBoundaries::Periodic => (BoundaryTag::PeriodicLeft, BoundaryTag::PeriodicRight),
        LateralBoundaries::WaveMakerLeft => (BoundaryTag::WaveMaker, BoundaryTag::Wall),
        LateralBoundaries::Walls => (BoundaryTag::Wall, BoundaryTag::Wall),
    };
    let tag_of = |a: usize, b: usize| -> Option<BoundaryTag> {
        let (ia, ja) = (a % (nx + 1), a / (nx + 1));
        let (ib, jb) = (b % (nx + 1), b / (nx + 1));
        if ja == ny && jb == ny {
            Some(BoundaryTag::FreeSurface)
        } else if ja == 0 && jb == 0 {
            Some(BoundaryTag::Bottom)
        } else if ia == 0 && ib == 0 {
            Some(left_tag)
        } else if ia == nx && ib == nx {
            Some(right_tag)
        } else {
            None
        }
    };
    let mesh = SpatialMesh::from_triangles(vertices, triangles, |_, a, b| tag_of(a, b))?;
    if lateral == LateralBoundaries::Periodic {
        return apply_periodic(&mesh);
    }
    Ok(mesh)
}

impl SpatialMesh {
    /// Builds edges and adjacency; `tag(edge, a, b)` supplies tags for
    /// boundary edges.
    pub fn from_triangles<F>(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        mut tag: F,
    ) -> Result<Self, MeshError>
    where
        F: FnMut(usize, usize, usize) -> Option<BoundaryTag>,
    {
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(MeshError::Invariant(format!(
                        "triangle {t} references missing vertex {v}"
                    )));
                }
            }
            let area = signed_area(&vertices, tri);
            let scale = (0..3)
                .map(|k| dist(vertices[tri[k]], vertices[tri[(k + 1) % 3]]))
                .fold(0.0, f64::max);
            if !(area > 1e-12 * scale * scale) {
                return Err(MeshError::DegenerateTriangle(t));
            }
            let mut te = [0; 3];
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                let e = *lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        owners: Vec::new(),
                        tag: None,
                    });
                    edges.len() - 1
                });
                edges[e].owners.push((t, k));
                te[k] = e;
            }
            triangle_edges.push(te);
        }
        for (e, edge) in edges.iter_mut().enumerate() {
            if edge.owners.len() > 2 {
                return Err(MeshError::BadAdjacency {
                    edge: e,
                    owners: edge.owners.len(),
                });
            }
            if edge.owners.len() == 1 {
                let [a, b] = edge.vertices;
                match tag(e, a, b) {
                    Some(t) => edge.tag = Some(t),
                    None => return Err(MeshError::UntaggedBoundaryEdge(e)),
                }
                if edge.tag.is_some_and(BoundaryTag::is_periodic) && vertices[a][1] > vertices[b][1]
                {
                    edge.vertices = [b, a];
                }
            }
        }
        Ok(Self {
            vertices,
            triangles,
            edges,
            triangle_edges,
            periodic_pairs: Vec::new(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges carrying an unknown after periodic identification.
    pub fn num_active_edges(&self) -> usize {
        self.edges.len() - self.periodic_pairs.len()
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        dist(self.vertices[a], self.vertices[b])
    }

    /// Largest triangle diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| PrismGeometry::new(self.triangle_vertices(t), 0.0, 1.0).diameter())
            .fold(0.0, f64::max)
    }

    /// Largest `h_K / rho_K` over all triangles.
    pub fn shape_regularity(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| {
                let g = PrismGeometry::new(self.triangle_vertices(t), 0.0, 1.0);
                g.diameter() / g.inradius_diameter()
            })
            .fold(0.0, f64::max)
    }

    /// Partner of a periodic edge, if paired.
    pub fn periodic_partner(&self, e: usize) -> Option<usize> {
        self.periodic_pairs.iter().find_map(|&(l, r)| {
            if l == e {
                Some(r)
            } else if r == e {
                Some(l)
            } else {
                None
            }
        })
    }

    /// Outward unit normal of local edge `k` of triangle `t`.
    pub fn outward_normal(&self, t: usize, k: usize) -> [f64; 2] {
        let tri = self.triangles[t];
        let a = self.vertices[tri[k]];
        let b = self.vertices[tri[(k + 1) % 3]];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        // Counter-clockwise triangles: the outward normal is the tangent rotated clockwise.
        [d[1] / len, -d[0] / len]
    }

    /// Checks adjacency, the Euler relation, vertex usage, shape regularity
    /// and periodic pair geometry.
    pub fn validate(&self, max_shape_ratio: f64) -> Result<(), MeshError> {
        for (e, edge) in self.edges.iter().enumerate() {
            let n = edge.owners.len();
            if n == 0 || n > 2 {
                return Err(MeshError::BadAdjacency { edge: e, owners: n });
            }
            if (n == 1) != edge.tag.is_some() {
                return Err(MeshError::Invariant(format!(
                    "edge {e}: boundary/tag mismatch"
                )));
            }
        }
        let euler =
            self.num_vertices() as i64 - self.num_edges() as i64 + self.num_triangles() as i64;
        if euler != 1 {
            return Err(MeshError::Invariant(format!(
                "V - E + F = {euler}, expected 1"
            )));
        }
        let mut used = vec![false; self.num_vertices()];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(MeshError::Invariant(format!(
                "vertex {v} is not used by any triangle"
            )));
        }
        let ratio = self.shape_regularity();
        if ratio > max_shape_ratio {
            return Err(MeshError::Invariant(format!(
                "shape regularity {ratio} exceeds {max_shape_ratio}"
            )));
        }
        for &(l, r) in &self.periodic_pairs {
            let (ll, rl) = (self.edge_length(l), self.edge_length(r));
            let [la, lb] = self.edges[l].vertices;
            let [ra, rb] = self.edges[r].vertices;
            let tol = 1e-10 * ll.max(1.0);
            if (ll - rl).abs() > tol
                || (self.vertices[la][1] - self.vertices[ra][1]).abs() > tol
                || (self.vertices[lb][1] - self.vertices[rb][1]).abs() > tol
            {
                return Err(MeshError::Invariant(format!(
                    "periodic pair ({l}, {r}) does not match"
                )));
            }
        }
        Ok(())
    }

    /// Plain-text export: `v x1 x2`, `t i j k`, `e i j TAG` (boundary edges only).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.17e} {:.17e}", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "t {} {} {}", t[0], t[1], t[2]);
        }
        for e in &self.edges {
            if let Some(tag) = e.tag {
                let _ = writeln!(s, "e {} {} {}", e.vertices[0], e.vertices[1], tag.as_str());
            }
        }
        s
    }

    /// Parses the plain-text format written by [`SpatialMesh::to_text`].
    /// Periodic edges are paired by their `x2` extent.
    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut tags: HashMap<(usize, usize), BoundaryTag> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let line_text = raw.split('#').next().unwrap_or("").trim();
            if line_text.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line_text.split_whitespace().collect();
            let err = |message: String| MeshError::Parse { line, message };
            let num = |s: &str| -> Result<f64, MeshError> {
                s.parse::<f64>()
                    .map_err(|_| err(format!("bad number `{s}`")))
            };
            let idx = |s: &str| -> Result<usize, MeshError> {
                s.parse::<usize>()
                    .map_err(|_| err(format!("bad index `{s}`")))
            };
            match (parts[0], parts.len()) {
                ("v", 3) => vertices.push([num(parts[1])?, num(parts[2])?]),
                ("t", 4) => triangles.push([idx(parts[1])?, idx(parts[2])?, idx(parts[3])?]),
                ("e", 4) => {
                    let a = idx(parts[1])?;
                    let b = idx(parts[2])?;
                    let tag = BoundaryTag::parse(parts[3])
                        .ok_or_else(|| err(format!("unknown tag `{}`", parts[3])))?;
                    tags.insert((a.min(b), a.max(b)), tag);
                }
                _ => return Err(err(format!("unrecognised record `{line_text}`"))),
            }
        }
        for (n, t) in triangles.iter_mut().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(MeshError::Invariant(format!(
                    "triangle {n} references a missing vertex"
                )));
            }
            if signed_area(&vertices, t) < 0.0 {
                t.swap(1, 2);
            }
        }
        let has_periodic = tags.values().any(|t| t.is_periodic());
        let mesh = Self::from_triangles(vertices, triangles, |_, a, b| {
            tags.get(&(a.min(b), a.max(b))).copied()
        })?;
        if has_periodic {
            return apply_periodic(&mesh);
        }
        Ok(mesh)
    }
}

/// Pairs every `PeriodicLeft` edge with the `PeriodicRight` edge that has the
/// same `x2` endpoints.
pub fn apply_periodic(mesh: &SpatialMesh) -> Result<SpatialMesh, MeshError> {
    let mut out = mesh.clone();
    out.periodic_pairs.clear();
    let lefts: Vec<usize> = edges_with(mesh, BoundaryTag::PeriodicLeft);
    let mut rights: Vec<Option<usize>> = edges_with(mesh, BoundaryTag::PeriodicRight)
        .into_iter()
        .map(Some)
        .collect();
    let span = |e: usize| {
        let [a, b] = mesh.edges[e].vertices;
        (mesh.vertices[a][1], mesh.vertices[b][1])
    };
    let scale = mesh
        .vertices
        .iter()
        .map(|v| v[0].abs().max(v[1].abs()))
        .fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    for l in lefts {
        let (lo, hi) = span(l);
        let found = rights.iter_mut().find(|r| {
            r.is_some_and(|r| {
                let (rlo, rhi) = span(r);
                (rlo - lo).abs() <= tol && (rhi - hi).abs() <= tol
            })
        });
        match found {
            Some(slot) => {
                out.periodic_pairs
                    .push((l, slot.take().expect("checked above")));
            }
            None => {
                return Err(MeshError::UnmatchedPeriodicEdge {
                    edge: l,
                    side: "left",
                    lo,
                    hi,
                })
            }
        }
    }
    if let Some(r) = rights.into_iter().flatten().next() {
        let (lo, hi) = span(r);
        return Err(MeshError::UnmatchedPeriodicEdge {
            edge: r,
            side: "right",
            lo,
            hi,
        });
    }
    Ok(out)
}

fn edges_with(mesh: &SpatialMesh, tag: BoundaryTag) -> Vec<usize> {
    mesh.edges
        .iter()
        .enumerate()
        .filter(|(_, e)| e.tag == Some(tag))
        .map(|(i, _)| i)
        .collect()
}

fn signed_area(vertices: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// How a lateral space-time facet enters the discrete equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FacetKind {
    Interior,
    /// Interior after periodic identification.
    Periodic,
    FreeSurface,
    /// Prescribed normal flux (bottom, wave maker or wall).
    Neumann(BoundaryTag),
}

/// One prism's view of a facet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetSide {
    pub element: usize,
    pub local: usize,
    pub edge: usize,
    /// True when the element's local edge runs against the canonical parameter.
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFacet {
    pub edge: usize,
    pub partner: Option<usize>,
    pub kind: FacetKind,
    /// Sorted by element index; the first side owns the facet and its normal.
    pub sides: Vec<FacetSide>,
}

/// Facet numbering shared by every slab of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetTopology {
    pub facets: Vec<QFacet>,
    pub edge_to_facet: Vec<usize>,
    /// Facet id of each local edge of each triangle.
    pub element_facets: Vec<[usize; 3]>,
    pub element_flips: Vec<[bool; 3]>,
    pub surface_facets: Vec<usize>,
}

impl FacetTopology {
    pub fn new(mesh: &SpatialMesh) -> Result<Self, MeshError> {
        let mut edge_to_facet = vec![usize::MAX; mesh.num_edges()];
        let mut facets = Vec::with_capacity(mesh.num_active_edges());
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge_to_facet[e] != usize::MAX {
                continue;
            }
            let partner = if edge.tag.is_some_and(BoundaryTag::is_periodic) {
                match mesh.periodic_partner(e) {
                    Some(p) => Some(p),
                    None => {
                        let [a, b] = edge.vertices;
                        return Err(MeshError::UnmatchedPeriodicEdge {
                            edge: e,
                            side: if edge.tag == Some(BoundaryTag::PeriodicLeft) {
                                "left"
                            } else {
                                "right"
                            },
                            lo: mesh.vertices[a][1],
                            hi: mesh.vertices[b][1],
                        });
                    }
                }
            } else {
                None
            };
            let kind = match (edge.tag, partner) {
                (None, _) => FacetKind::Interior,
                (Some(_), Some(_)) => FacetKind::Periodic,
                (Some(BoundaryTag::FreeSurface), None) => FacetKind::FreeSurface,
                (Some(t), None) => FacetKind::Neumann(t),
            };
            let id = facets.len();
            edge_to_facet[e] = id;
            if let Some(p) = partner {
                edge_to_facet[p] = id;
            }
            let mut sides: Vec<FacetSide> = std::iter::once(e)
                .chain(partner)
                .flat_map(|ed| {
                    let start = mesh.edges[ed].vertices[0];
                    mesh.edges[ed]
                        .owners
                        .iter()
                        .map(move |&(t, k)| (ed, t, k, start))
                })
                .map(|(ed, t, k, start)| FacetSide {
                    element: t,
                    local: k,
                    edge: ed,
                    flipped: mesh.triangles[t][k] != start,
                })
                .collect();
            sides.sort_by_key(|s| s.element);
            facets.push(QFacet {
                edge: e,
                partner,
                kind,
                sides,
            });
        }
        let mut element_facets = vec![[0usize; 3]; mesh.num_triangles()];
        let mut element_flips = vec![[false; 3]; mesh.num_triangles()];
        for f in &facets {
            for s in &f.sides {
                element_facets[s.element][s.local] = edge_to_facet[s.edge];
                element_flips[s.element][s.local] = s.flipped;
            }
        }
        let surface_facets = facets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FacetKind::FreeSurface)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            facets,
            edge_to_facet,
            element_facets,
            element_flips,
            surface_facets,
        })
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }
}

/// `K x I_n` for a single triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prism {
    pub triangle: usize,
}

/// The `n`-th slab `Omega x (t_start, t_start + dt)`.
#[derive(Debug, Clone)]
pub struct SpaceTimeSlab {
    pub mesh: Arc<SpatialMesh>,
    pub topology: Arc<FacetTopology>,
    pub index: usize,
    pub t_start: f64,
    pub dt: f64,
}

pub fn extrude_slab(
    mesh: &Arc<SpatialMesh>,
    t_start: f64,
    dt: f64,
    n: usize,
) -> Result<SpaceTimeSlab, MeshError> {
    if !(dt > 0.0) {
        return Err(MeshError::NonPositiveTimeStep(dt));
    }
    let topology = Arc::new(FacetTopology::new(mesh)?);
    Ok(SpaceTimeSlab {
        mesh: Arc::clone(mesh),
        topology,
        index: n,
        t_start,
        dt,
    })
}

impl SpaceTimeSlab {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.dt
    }

    pub fn num_prisms(&self) -> usize {
        self.mesh.num_triangles()
    }

    pub fn prisms(&self) -> impl Iterator<Item = Prism> + '_ {
        (0..self.num_prisms()).map(|triangle| Prism { triangle })
    }

    pub fn q_facets(&self) -> &[QFacet] {
        &self.topology.facets
    }

    pub fn surface_facets(&self) -> &[usize] {
        &self.topology.surface_facets
    }

    pub fn geometry(&self, prism: usize) -> PrismGeometry {
        PrismGeometry::new(self.mesh.triangle_vertices(prism), self.t_start, self.dt)
    }

    pub fn volume(&self, prism: usize) -> f64 {
        self.mesh.triangle_area(prism) * self.dt
    }

    /// Space-time outward normal of a lateral facet as seen from `element`;
    /// the temporal component is zero.
    pub fn lateral_normal(&self, element: usize, local: usize) -> [f64; 3] {
        let n = self.mesh.outward_normal(element, local);
        [0.0, n[0], n[1]]
    }

    /// The slab that follows this one, sharing mesh and topology.
    pub fn next(&self, dt: f64) -> SpaceTimeSlab {
        SpaceTimeSlab {
            mesh: Arc::clone(&self.mesh),
            topology: Arc::clone(&self.topology),
            index: self.index + 1,
            t_start: self.t_end(),
            dt,
        }
    }
}
