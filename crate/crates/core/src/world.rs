//! Static environment: occupancy grid, footprint checks, free-space
//! projection and a grid A* global planner.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Vector2<f64>;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read map image {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to read map metadata {path}: {reason}")]
    Meta { path: String, reason: String },
    #[error("map image is empty")]
    Empty,
    #[error("resolution must be positive, got {0}")]
    Resolution(f64),
    #[error("cell buffer has {got} entries, expected {expected}")]
    Size { got: usize, expected: usize },
    #[error("invalid map geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanningError {
    #[error("start ({0:.2}, {1:.2}) is not in free space")]
    StartBlocked(f64, f64),
    #[error("goal ({0:.2}, {1:.2}) is not in free space")]
    GoalBlocked(f64, f64),
    #[error("no path between start and goal")]
    NoPath,
}

/// Raster placement of an occupancy grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMeta {
    /// Meters per cell.
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    /// Pixels darker than this are obstacles.
    #[serde(default = "default_threshold")]
    pub threshold: u8,
}

fn default_threshold() -> u8 {
    128
}

/// Boolean occupancy raster. Cell `(i, j)` covers
/// `[origin_x + i*res, origin_x + (i+1)*res) x [origin_y + j*res, origin_y + (j+1)*res)`.
/// Image row `j` maps to cell row `j`; there is no vertical flip.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point,
    cells: Vec<bool>,
    /// Center-to-center distance (meters) from each cell to the nearest
    /// occupied cell, with everything outside the grid counted as occupied.
    clearance: Vec<f32>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point,
        cells: Vec<bool>,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::Empty);
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(MapError::Resolution(resolution));
        }
        if cells.len() != width * height {
            return Err(MapError::Size {
                got: cells.len(),
                expected: width * height,
            });
        }
        let clearance = distance_field(width, height, &cells, resolution);
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
            clearance,
        })
    }

    /// Grid with every cell free.
    pub fn empty(width: usize, height: usize, resolution: f64, origin: Point) -> Result<Self, MapError> {
        Self::new(width, height, resolution, origin, vec![false; width * height])
    }

    /// Builds a grid from a world-space predicate evaluated at cell centers.
    pub fn from_fn(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Point,
        occupied: impl Fn(Point) -> bool,
    ) -> Result<Self, MapError> {
        let mut cells = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                let c = origin + Vector2::new((i as f64 + 0.5) * resolution, (j as f64 + 0.5) * resolution);
                cells.push(occupied(c));
            }
        }
        Self::new(width, height, resolution, origin, cells)
    }

    /// Thresholds a grayscale raster: dark pixels are obstacles.
    pub fn from_gray(image: &image::GrayImage, meta: &MapMeta) -> Result<Self, MapError> {
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(MapError::Empty);
        }
        let cells = image.pixels().map(|p| p.0[0] < meta.threshold).collect();
        Self::new(
            w as usize,
            h as usize,
            meta.resolution,
            Vector2::new(meta.origin_x, meta.origin_y),
            cells,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    /// Cell containing `p` by floor indexing, `None` outside the grid.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        self.origin + Vector2::new((i as f64 + 0.5) * self.resolution, (j as f64 + 0.5) * self.resolution)
    }

    pub fn is_cell_occupied(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i]
    }

    /// Closed world: anything outside the raster is occupied.
    pub fn point_occupied(&self, p: Point) -> bool {
        match self.cell_of(p) {
            Some((i, j)) => self.cells[j * self.width + i],
            None => true,
        }
    }

    /// Lower bound on the distance from `p` to any occupied region.
    /// Negative or zero means "unknown, check exactly".
    pub fn clearance_lower_bound(&self, p: Point) -> f64 {
        match self.cell_of(p) {
            Some((i, j)) => self.clearance[j * self.width + i] as f64 - self.resolution * std::f64::consts::SQRT_2,
            None => -1.0,
        }
    }

    /// Center-to-center clearance of a cell in meters.
    pub fn cell_clearance(&self, i: usize, j: usize) -> f64 {
        self.clearance[j * self.width + i] as f64
    }

    /// Stable content hash of the raster and its placement.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(self.resolution.to_le_bytes());
        h.update(self.origin.x.to_le_bytes());
        h.update(self.origin.y.to_le_bytes());
        let packed: Vec<u8> = self.cells.iter().map(|c| *c as u8).collect();
        h.update(&packed);
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a binary PGM (P5) raster plus its TOML metadata sidecar.
pub fn load_map(pgm: &Path, meta_path: &Path) -> Result<OccupancyGrid, MapError> {
    let text = std::fs::read_to_string(meta_path).map_err(|e| MapError::Meta {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let meta: MapMeta = toml::from_str(&text).map_err(|e| MapError::Meta {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    load_map_with_meta(pgm, &meta)
}

pub fn load_map_with_meta(pgm: &Path, meta: &MapMeta) -> Result<OccupancyGrid, MapError> {
    if !(meta.resolution > 0.0) {
        return Err(MapError::Resolution(meta.resolution));
    }
    let img = image::ImageReader::open(pgm)
        .map_err(|e| MapError::Image {
            path: pgm.display().to_string(),
            source: image::ImageError::IoError(e),
        })?
        .with_guessed_format()
        .map_err(|e| MapError::Image {
            path: pgm.display().to_string(),
            source: image::ImageError::IoError(e),
        })?
        .decode()
        .map_err(|source| MapError::Image {
            path: pgm.display().to_string(),
            source,
        })?;
    OccupancyGrid::from_gray(&img.to_luma8(), meta)
}

/// Writes a grid as binary PGM (occupied = 0, free = 255).
pub fn write_pgm(grid: &OccupancyGrid, path: &Path) -> std::io::Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    buf.extend(grid.cells.iter().map(|c| if *c { 0u8 } else { 255u8 }));
    std::fs::write(path, buf)
}

/// Body-frame rectangle centered on the vessel origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }

    /// Radius of the circumscribed circle.
    pub fn circumradius(&self) -> f64 {
        0.5 * (self.length * self.length + self.width * self.width).sqrt()
    }

    /// World-frame corners, counter-clockwise.
    pub fn corners(&self, x: f64, y: f64, heading: f64) -> [Point; 4] {
        let (s, c) = heading.sin_cos();
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .map(|(bx, by)| Vector2::new(x + c * bx - s * by, y + s * bx + c * by))
    }
}

/// True iff any occupied cell intersects the oriented footprint.
///
/// The exact test samples a lattice over the rectangle at spacing at most
/// half a cell. A clearance-field pre-check covers the rectangle with a few
/// discs and skips the lattice when every disc is provably in free space.
pub fn footprint_collides(grid: &OccupancyGrid, pose: (f64, f64, f64), fp: &Footprint) -> bool {
    let (x, y, heading) = pose;
    if grid.clearance_lower_bound(Vector2::new(x, y)) > fp.circumradius() {
        return false;
    }
    let (s, c) = heading.sin_cos();
    if footprint_clear_by_discs(grid, x, y, s, c, fp) {
        return false;
    }
    footprint_collides_lattice(grid, x, y, s, c, fp)
}

#[inline]
fn footprint_clear_by_discs(grid: &OccupancyGrid, x: f64, y: f64, s: f64, c: f64, fp: &Footprint) -> bool {
    let n = if fp.width > 0.0 {
        (fp.length / fp.width).ceil().max(1.0) as usize
    } else {
        1
    };
    let seg = fp.length / n as f64;
    let radius = (0.5 * seg).hypot(0.5 * fp.width);
    (0..n).all(|k| {
        let bx = -0.5 * fp.length + (k as f64 + 0.5) * seg;
        let p = Vector2::new(x + c * bx, y + s * bx);
        grid.clearance_lower_bound(p) > radius
    })
}

fn footprint_collides_lattice(grid: &OccupancyGrid, x: f64, y: f64, s: f64, c: f64, fp: &Footprint) -> bool {
    let spacing = 0.5 * grid.resolution;
    let nl = (fp.length / spacing).ceil() as usize;
    let nw = (fp.width / spacing).ceil() as usize;
    let step = if nl == 0 { f64::INFINITY } else { fp.length / nl as f64 };
    for b in 0..=nw {
        let by = if nw == 0 {
            0.0
        } else {
            -0.5 * fp.width + fp.width * b as f64 / nw as f64
        };
        let mut a = 0;
        while a <= nl {
            let bx = if nl == 0 {
                0.0
            } else {
                -0.5 * fp.length + fp.length * a as f64 / nl as f64
            };
            let p = Vector2::new(x + c * bx - s * by, y + s * bx + c * by);
            let free = grid.clearance_lower_bound(p);
            if free > 0.0 {
                // every lattice point strictly closer than `free` is free too
                a += ((free / step).ceil() as usize).max(1);
                continue;
            }
            if grid.point_occupied(p) {
                return true;
            }
            a += 1;
        }
    }
    false
}

/// Oriented-rectangle overlap by the separating axis test.
pub fn footprints_overlap(a: (f64, f64, f64), fa: &Footprint, b: (f64, f64, f64), fb: &Footprint) -> bool {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let reach = fa.circumradius() + fb.circumradius();
    if dx * dx + dy * dy > reach * reach {
        return false;
    }
    let (sa, ca) = a.2.sin_cos();
    let (sb, cb) = b.2.sin_cos();
    let axes = [(ca, sa), (-sa, ca), (cb, sb), (-sb, cb)];
    let (ha, wa) = (0.5 * fa.length, 0.5 * fa.width);
    let (hb, wb) = (0.5 * fb.length, 0.5 * fb.width);
    axes.iter().all(|&(ux, uy)| {
        let ra = ha * (ca * ux + sa * uy).abs() + wa * (-sa * ux + ca * uy).abs();
        let rb = hb * (cb * ux + sb * uy).abs() + wb * (-sb * ux + cb * uy).abs();
        (dx * ux + dy * uy).abs() <= ra + rb
    })
}

/// Returns `target` if it is free, otherwise the first free point when
/// walking from `target` toward `anchor` in half-cell steps.
pub fn project_to_free(grid: &OccupancyGrid, target: Point, anchor: Point) -> Point {
    if !grid.point_occupied(target) {
        return target;
    }
    let delta = anchor - target;
    let len = delta.norm();
    let step = 0.5 * grid.resolution;
    let n = (len / step).ceil() as usize;
    for k in 1..n {
        let p = target + delta * (k as f64 * step / len);
        if !grid.point_occupied(p) {
            return p;
        }
    }
    anchor
}

/// Start-to-goal polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPath {
    waypoints: Vec<Point>,
}

impl GlobalPath {
    /// Drops consecutive duplicates; at least one waypoint is required.
    pub fn new(points: Vec<Point>) -> Option<Self> {
        let mut waypoints: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if waypoints.last() != Some(&p) {
                waypoints.push(p);
            }
        }
        (!waypoints.is_empty()).then_some(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.waypoints
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, std::f64::consts::SQRT_2),
    (1, -1, std::f64::consts::SQRT_2),
    (-1, 1, std::f64::consts::SQRT_2),
    (-1, -1, std::f64::consts::SQRT_2),
];

/// Cells blocked once obstacles are grown by `inflation` meters.
pub fn inflated_blocked(grid: &OccupancyGrid, inflation: f64) -> Vec<bool> {
    grid.clearance
        .iter()
        .zip(&grid.cells)
        .map(|(d, occ)| *occ || (*d as f64) <= inflation)
        .collect()
}

/// Octile-cost grid neighbors of `idx` that are free in `blocked`.
/// Diagonal moves may not cut corners.
pub fn grid_neighbors(
    width: usize,
    height: usize,
    blocked: &[bool],
    idx: usize,
) -> impl Iterator<Item = (usize, f64)> + '_ {
    let (i, j) = ((idx % width) as isize, (idx / width) as isize);
    NEIGHBORS.iter().filter_map(move |&(di, dj, cost)| {
        let (ni, nj) = (i + di, j + dj);
        if ni < 0 || nj < 0 || ni >= width as isize || nj >= height as isize {
            return None;
        }
        let n = nj as usize * width + ni as usize;
        if blocked[n] {
            return None;
        }
        if di != 0 && dj != 0 {
            let side_a = j as usize * width + ni as usize;
            let side_b = nj as usize * width + i as usize;
            if blocked[side_a] || blocked[side_b] {
                return None;
            }
        }
        Some((n, cost))
    })
}

/// Raw 8-connected A* cell path (start and goal cells included).
pub fn astar_cells(
    width: usize,
    height: usize,
    blocked: &[bool],
    start: usize,
    goal: usize,
) -> Option<(Vec<usize>, f64)> {
    let (gx, gy) = ((goal % width) as f64, (goal / width) as f64);
    let heuristic = |idx: usize| {
        let dx = ((idx % width) as f64 - gx).abs();
        let dy = ((idx / width) as f64 - gy).abs();
        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
    };
    let mut g = vec![f64::INFINITY; width * height];
    let mut parent = vec![usize::MAX; width * height];
    let mut closed = vec![false; width * height];
    let mut open = BinaryHeap::new();
    g[start] = 0.0;
    open.push(Open {
        f: heuristic(start),
        g: 0.0,
        idx: start,
    });
    while let Some(Open { g: gc, idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while cur != start {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Some((path, gc));
        }
        for (n, cost) in grid_neighbors(width, height, blocked, idx) {
            let ng = gc + cost;
            if ng < g[n] {
                g[n] = ng;
                parent[n] = idx;
                open.push(Open {
                    f: ng + heuristic(n),
                    g: ng,
                    idx: n,
                });
            }
        }
    }
    None
}

fn segment_free(grid: &OccupancyGrid, blocked: &[bool], a: Point, b: Point) -> bool {
    let len = (b - a).norm();
    let step = 0.25 * grid.resolution;
    let n = (len / step).ceil().max(1.0) as usize;
    (0..=n).all(|k| {
        let p = a + (b - a) * (k as f64 / n as f64);
        match grid.cell_of(p) {
            Some((i, j)) => !blocked[j * grid.width + i],
            None => false,
        }
    })
}

/// 8-connected A* on the inflated grid followed by greedy line-of-sight
/// waypoint decimation.
pub fn plan_global_path(
    grid: &OccupancyGrid,
    start: Point,
    goal: Point,
    inflation: f64,
) -> Result<GlobalPath, PlanningError> {
    let blocked = inflated_blocked(grid, inflation);
    let idx = |p: Point| grid.cell_of(p).map(|(i, j)| j * grid.width + i);
    let s = idx(start)
        .filter(|i| !blocked[*i])
        .ok_or(PlanningError::StartBlocked(start.x, start.y))?;
    let g = idx(goal)
        .filter(|i| !blocked[*i])
        .ok_or(PlanningError::GoalBlocked(goal.x, goal.y))?;
    let (cells, _) = astar_cells(grid.width, grid.height, &blocked, s, g).ok_or(PlanningError::NoPath)?;

    let mut pts: Vec<Point> = Vec::with_capacity(cells.len());
    pts.push(start);
    if cells.len() > 2 {
        pts.extend(
            cells[1..cells.len() - 1]
                .iter()
                .map(|c| grid.cell_center(c % grid.width, c / grid.width)),
        );
    }
    pts.push(goal);

    let mut out = vec![pts[0]];
    let mut anchor = 0;
    while anchor < pts.len() - 1 {
        let mut next = anchor + 1;
        for cand in (anchor + 2..pts.len()).rev() {
            if segment_free(grid, &blocked, pts[anchor], pts[cand]) {
                next = cand;
                break;
            }
        }
        out.push(pts[next]);
        anchor = next;
    }
    Ok(GlobalPath::new(out).expect("path has at least the start point"))
}

/// Raw A* grid path length in meters, without smoothing.
pub fn grid_path_length(grid: &OccupancyGrid, start: Point, goal: Point, inflation: f64) -> Option<f64> {
    let blocked = inflated_blocked(grid, inflation);
    let s = grid.cell_of(start).map(|(i, j)| j * grid.width + i)?;
    let g = grid.cell_of(goal).map(|(i, j)| j * grid.width + i)?;
    if blocked[s] || blocked[g] {
        return None;
    }
    astar_cells(grid.width, grid.height, &blocked, s, g).map(|(_, c)| c * grid.resolution)
}

/// Exact Euclidean distance transform (Felzenszwalb and Huttenlocher) over
/// cell centers, in meters. The grid is padded with one ring of occupied
/// cells so the map border counts as an obstacle.
fn distance_field(width: usize, height: usize, cells: &[bool], resolution: f64) -> Vec<f32> {
    let (pw, ph) = (width + 2, height + 2);
    let inf = 1e20_f64;
    let mut f = vec![inf; pw * ph];
    for j in 0..ph {
        for i in 0..pw {
            let border = i == 0 || j == 0 || i == pw - 1 || j == ph - 1;
            if border || cells[(j - 1) * width + (i - 1)] {
                f[j * pw + i] = 0.0;
            }
        }
    }
    let n = pw.max(ph);
    let mut buf_in = vec![0.0; n];
    let mut buf_out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for i in 0..pw {
        for j in 0..ph {
            buf_in[j] = f[j * pw + i];
        }
        edt_1d(&buf_in[..ph], &mut buf_out[..ph], &mut v, &mut z);
        for j in 0..ph {
            f[j * pw + i] = buf_out[j];
        }
    }
    for j in 0..ph {
        buf_in[..pw].copy_from_slice(&f[j * pw..(j + 1) * pw]);
        edt_1d(&buf_in[..pw], &mut buf_out[..pw], &mut v, &mut z);
        f[j * pw..(j + 1) * pw].copy_from_slice(&buf_out[..pw]);
    }
    let mut out = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            out.push((f[(j + 1) * pw + (i + 1)].sqrt() * resolution) as f32);
        }
    }
    out
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let parabola =
        |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}
