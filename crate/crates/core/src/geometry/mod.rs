//! Planar geometry for spatially grounded graphs: nearest-site assignment
//! (Voronoi ownership), regular grid layouts, and Delaunay triangulation.

mod delaunay;

pub use delaunay::{delaunay, Triangulation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist2(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned rectangle sampled on a `rows x cols` lattice whose first and
/// last rows/columns sit on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, rows: usize, cols: usize) -> Result<Self> {
        let spec = GridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            rows,
            cols,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Square grid centered on the origin, `side` meters across.
    pub fn square(side: f64, n: usize) -> Result<Self> {
        Self::new(-side / 2.0, side / 2.0, -side / 2.0, side / 2.0, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.y_min.is_finite() && self.y_max.is_finite()) {
            return Err(Error::InvalidSpec("grid bounds must be finite".into()));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidSpec(format!(
                "grid bounds must satisfy min < max, got x [{}, {}], y [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidSpec("grid needs rows >= 1 and cols >= 1".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Lattice points (row-major, row 0 at `y_min`) and undirected 4-neighbor
/// edges. A single row or column degenerates to the midline.
pub fn grid_topology(spec: &GridSpec) -> Result<(Vec<Point2>, Vec<(usize, usize)>)> {
    spec.validate()?;
    let coord = |lo: f64, hi: f64, i: usize, n: usize| -> f64 {
        if n == 1 {
            (lo + hi) / 2.0
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(spec.node_count());
    for r in 0..spec.rows {
        let y = coord(spec.y_min, spec.y_max, r, spec.rows);
        for c in 0..spec.cols {
            let x = coord(spec.x_min, spec.x_max, c, spec.cols);
            points.push(Point2::new(x, y));
        }
    }
    let mut edges = Vec::new();
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let i = r * spec.cols + c;
            if c + 1 < spec.cols {
                edges.push((i, i + 1));
            }
            if r + 1 < spec.rows {
                edges.push((i, i + spec.cols));
            }
        }
    }
    Ok((points, edges))
}

/// Index of the site closest to `query` (Euclidean); ties break to the lowest
/// index so ownership is deterministic.
pub fn nearest_node(points: &[Point2], query: Point2) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut best = 0;
    let mut best_d = points[0].dist2(query);
    for (i, p) in points.iter().enumerate().skip(1) {
        let d = p.dist2(query);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}
