//! Occupancy-grid maps, sphere-set collision checking, and local observation
//! patches extracted in the frame of a planner state.
//!
//! The grid is the sole obstacle representation: a boolean raster with a
//! metric cell size and a world-frame origin at its lower-left corner.
//! Anything outside the raster counts as occupied.

use crate::error::{Error, Result};

/// Planar pose (position plus heading).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self { x, y, psi }
    }
}

/// One body-frame collision sphere (disc in 2D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub offset_x: f64,
    pub offset_y: f64,
    pub radius: f64,
}

/// Robot body approximated by a set of spheres in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotGeometry {
    pub spheres: Vec<Sphere>,
}

impl RobotGeometry {
    pub fn new(spheres: Vec<Sphere>) -> Result<Self> {
        if spheres.is_empty() {
            return Err(Error::Config("robot geometry needs at least one sphere".into()));
        }
        if spheres.iter().any(|s| !(s.radius > 0.0) || !s.radius.is_finite()) {
            return Err(Error::Config("sphere radii must be positive".into()));
        }
        Ok(Self { spheres })
    }

    /// Two-sphere car body: nose and tail discs.
    pub fn default_car() -> Self {
        Self {
            spheres: vec![
                Sphere { offset_x: 0.15, offset_y: 0.0, radius: 0.25 },
                Sphere { offset_x: -0.15, offset_y: 0.0, radius: 0.25 },
            ],
        }
    }

    /// Largest center offset plus radius; bounds the body footprint.
    pub fn max_reach(&self) -> f64 {
        self.spheres
            .iter()
            .map(|s| (s.offset_x * s.offset_x + s.offset_y * s.offset_y).sqrt() + s.radius)
            .fold(0.0, f64::max)
    }
}

/// 2D workspace discretization. `occupancy` is row-major with index
/// `cy * width + cx`; `cy` grows with world y (row 0 is the bottom row).
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    origin: (f64, f64),
    occupancy: Vec<bool>,
    start_hint: Option<(usize, usize)>,
    goal_hint: Option<(usize, usize)>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        origin: (f64, f64),
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("grid dimensions must be at least 1x1".into()));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Config("cell_size must be a positive finite number".into()));
        }
        if occupancy.len() != width * height {
            return Err(Error::Config(format!(
                "occupancy length {} does not match {}x{}",
                occupancy.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, cell_size, origin, occupancy, start_hint: None, goal_hint: None })
    }

    pub fn width_cells(&self) -> usize {
        self.width
    }

    pub fn height_cells(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    /// World-frame bounding rectangle as (min_x, min_y, max_x, max_y).
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.width as f64 * self.cell_size,
            self.origin.1 + self.height as f64 * self.cell_size,
        )
    }

    /// Start hint ('S' cell) as a world-frame cell center, if present.
    pub fn start_hint(&self) -> Option<(f64, f64)> {
        self.start_hint.map(|c| self.cell_center(c.0, c.1))
    }

    /// Goal hint ('G' cell) as a world-frame cell center, if present.
    pub fn goal_hint(&self) -> Option<(f64, f64)> {
        self.goal_hint.map(|c| self.cell_center(c.0, c.1))
    }

    pub fn is_occupied_cell(&self, cx: usize, cy: usize) -> bool {
        cx >= self.width || cy >= self.height || self.occupancy[cy * self.width + cx]
    }

    pub fn set_occupied(&mut self, cx: usize, cy: usize, occupied: bool) {
        assert!(cx < self.width && cy < self.height, "cell out of range");
        self.occupancy[cy * self.width + cx] = occupied;
    }

    /// Cell containing a world point, or `None` outside the raster.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.0) / self.cell_size).floor();
        let fy = ((y - self.origin.1) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            None
        } else {
            Some((fx as usize, fy as usize))
        }
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, cx: usize, cy: usize) -> (f64, f64) {
        (
            self.origin.0 + (cx as f64 + 0.5) * self.cell_size,
            self.origin.1 + (cy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Occupancy of the cell under a world point; outside the grid is occupied.
    pub fn is_occupied_world(&self, x: f64, y: f64) -> bool {
        match self.world_to_cell(x, y) {
            Some((cx, cy)) => self.occupancy[cy * self.width + cx],
            None => true,
        }
    }

    /// True iff no body sphere intersects an occupied cell or leaves the grid.
    ///
    /// Sphere-vs-cell uses the exact circle/AABB test: the closest point of
    /// the cell square to the sphere center must lie farther than the radius.
    pub fn is_state_free(&self, geom: &RobotGeometry, pose: Pose) -> bool {
        let (sin, cos) = pose.psi.sin_cos();
        let (min_x, min_y, max_x, max_y) = self.bounds();
        for s in &geom.spheres {
            let cx = pose.x + cos * s.offset_x - sin * s.offset_y;
            let cy = pose.y + sin * s.offset_x + cos * s.offset_y;
            let r = s.radius;
            if cx - r < min_x || cx + r > max_x || cy - r < min_y || cy + r > max_y {
                return false;
            }
            let ix0 = (((cx - r - min_x) / self.cell_size).floor().max(0.0)) as usize;
            let iy0 = (((cy - r - min_y) / self.cell_size).floor().max(0.0)) as usize;
            let ix1 = ((((cx + r - min_x) / self.cell_size).floor()) as usize).min(self.width - 1);
            let iy1 = ((((cy + r - min_y) / self.cell_size).floor()) as usize).min(self.height - 1);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    if !self.occupancy[iy * self.width + ix] {
                        continue;
                    }
                    let rx0 = min_x + ix as f64 * self.cell_size;
                    let ry0 = min_y + iy as f64 * self.cell_size;
                    let px = cx.clamp(rx0, rx0 + self.cell_size);
                    let py = cy.clamp(ry0, ry0 + self.cell_size);
                    let dx = px - cx;
                    let dy = py - cy;
                    if dx * dx + dy * dy <= r * r {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Conjunction of `is_state_free` over a pose sequence.
    pub fn is_edge_free<I>(&self, geom: &RobotGeometry, poses: I) -> bool
    where
        I: IntoIterator<Item = Pose>,
    {
        poses.into_iter().all(|p| self.is_state_free(geom, p))
    }

    /// Signed clearance of a pose: the smallest distance from any sphere
    /// boundary to an occupied cell or to the grid boundary. Negative values
    /// mean penetration.
    pub fn clearance(&self, geom: &RobotGeometry, pose: Pose) -> f64 {
        let (sin, cos) = pose.psi.sin_cos();
        let (min_x, min_y, max_x, max_y) = self.bounds();
        let mut best = f64::INFINITY;
        for s in &geom.spheres {
            let cx = pose.x + cos * s.offset_x - sin * s.offset_y;
            let cy = pose.y + sin * s.offset_x + cos * s.offset_y;
            let wall = (cx - min_x).min(max_x - cx).min(cy - min_y).min(max_y - cy) - s.radius;
            best = best.min(wall);
            // Scan outward only as far as could still improve on `best`.
            let reach = s.radius + best.max(0.0) + self.cell_size;
            let ix0 = (((cx - reach - min_x) / self.cell_size).floor().max(0.0)) as usize;
            let iy0 = (((cy - reach - min_y) / self.cell_size).floor().max(0.0)) as usize;
            let ix1 =
                ((((cx + reach - min_x) / self.cell_size).floor()).max(0.0) as usize).min(self.width - 1);
            let iy1 =
                ((((cy + reach - min_y) / self.cell_size).floor()).max(0.0) as usize).min(self.height - 1);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    if !self.occupancy[iy * self.width + ix] {
                        continue;
                    }
                    let rx0 = min_x + ix as f64 * self.cell_size;
                    let ry0 = min_y + iy as f64 * self.cell_size;
                    let px = cx.clamp(rx0, rx0 + self.cell_size);
                    let py = cy.clamp(ry0, ry0 + self.cell_size);
                    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() - s.radius;
                    best = best.min(d);
                }
            }
        }
        best
    }
}

/// Square occupancy crop sampled in the frame of a pose. `values` is
/// row-major with index `iy * size + ix`; local coordinates of cell
/// `(ix, iy)` are `((ix - c) * extent/P, (iy - c) * extent/P)` with
/// `c = (P-1)/2`, so the center cell sits on the frame origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPatch {
    pub size: usize,
    pub extent: f64,
    pub values: Vec<f64>,
    pub frame: Pose,
}

impl LocalPatch {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.size + ix]
    }
}

/// Extract a P-by-P occupancy patch around `pose`, rotated into its frame.
/// Sampling is nearest-cell at patch-cell centers; points outside the grid
/// read as occupied.
pub fn extract_local_patch(
    grid: &OccupancyGrid,
    pose: Pose,
    size: usize,
    extent: f64,
) -> LocalPatch {
    assert!(size % 2 == 1 && size > 0, "patch size must be odd and positive");
    assert!(extent > 0.0, "patch extent must be positive");
    let step = extent / size as f64;
    let c = ((size - 1) / 2) as f64;
    let (sin, cos) = pose.psi.sin_cos();
    let mut values = Vec::with_capacity(size * size);
    for iy in 0..size {
        let ly = (iy as f64 - c) * step;
        for ix in 0..size {
            let lx = (ix as f64 - c) * step;
            let wx = pose.x + cos * lx - sin * ly;
            let wy = pose.y + sin * lx + cos * ly;
            values.push(if grid.is_occupied_world(wx, wy) { 1.0 } else { 0.0 });
        }
    }
    LocalPatch { size, extent, values, frame: pose }
}

/// Parse the text map format: a `cell_size` header, an optional `origin`
/// line, then equal-length rows of `#`/`.`/`S`/`G`. The first row of the
/// block is the top of the map (largest world y).
pub fn load_map(text: &str) -> Result<OccupancyGrid> {
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MapParse("missing cell_size header at line 1".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("cell_size") {
        return Err(Error::MapParse("missing cell_size header at line 1".into()));
    }
    let cell_size: f64 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .filter(|v: &f64| v.is_finite() && *v > 0.0)
        .ok_or_else(|| Error::MapParse("invalid cell_size at line 1".into()))?;
    if parts.next().is_some() {
        return Err(Error::MapParse("trailing tokens after cell_size at line 1".into()));
    }

    let mut origin = (0.0, 0.0);
    let mut rows: Vec<(usize, &str)> = Vec::new();
    let mut first = true;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if first && line.starts_with("origin") {
            let mut p = line.split_whitespace();
            p.next();
            let x: Option<f64> = p.next().and_then(|v| v.parse().ok());
            let y: Option<f64> = p.next().and_then(|v| v.parse().ok());
            match (x, y) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() && p.next().is_none() => {
                    origin = (x, y);
                }
                _ => return Err(Error::MapParse(format!("invalid origin at line {lineno}"))),
            }
            first = false;
            continue;
        }
        first = false;
        rows.push((lineno, line));
    }

    if rows.is_empty() {
        return Err(Error::MapParse("missing map rows".into()));
    }
    let width = rows[0].1.chars().count();
    if width == 0 {
        return Err(Error::MapParse(format!("ragged row at line {}", rows[0].0)));
    }
    let height = rows.len();

    let mut occupancy = vec![false; width * height];
    let mut start_hint = None;
    let mut goal_hint = None;
    for (r, (lineno, row)) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::MapParse(format!("ragged row at line {lineno}")));
        }
        let gy = height - 1 - r;
        for (cx, ch) in row.chars().enumerate() {
            match ch {
                '#' => occupancy[gy * width + cx] = true,
                '.' => {}
                'S' => {
                    if start_hint.replace((cx, gy)).is_some() {
                        return Err(Error::MapParse(format!("duplicate start marker at line {lineno}")));
                    }
                }
                'G' => {
                    if goal_hint.replace((cx, gy)).is_some() {
                        return Err(Error::MapParse(format!("duplicate goal marker at line {lineno}")));
                    }
                }
                _ => {
                    return Err(Error::MapParse(format!("unknown character '{ch}' at line {lineno}")))
                }
            }
        }
    }

    let mut grid = OccupancyGrid::new(width, height, cell_size, origin, occupancy)?;
    grid.start_hint = start_hint;
    grid.goal_hint = goal_hint;
    Ok(grid)
}

/// Load a map file and return the grid together with the file's SHA-256.
pub fn load_map_file(path: &std::path::Path) -> Result<(OccupancyGrid, String)> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::MapParse(format!("{} is not UTF-8", path.display())))?;
    let grid = load_map(&text)
        .map_err(|e| Error::MapParse(format!("{}: {e}", path.display())))?;
    let hash = format!("{:x}", Sha256::digest(&bytes));
    Ok((grid, hash))
}
