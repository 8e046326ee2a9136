//! Bowyer-Watson Delaunay triangulation.
//!
//! Incremental insertion into a super-triangle, with plain double-precision
//! predicates guarded by a small epsilon. That is adequate up to about a
//! thousand sites; robustness is backed by three safety nets rather than
//! exact arithmetic:
//!
//! 1. cocircular points (in-circle determinant within the guard band) count
//!    as *outside*, so any valid triangulation of a degenerate quad is kept;
//! 2. a Lawson flip pass after construction restores the local Delaunay
//!    property wherever rounding let a violation through;
//! 3. the result is validated (edge manifoldness, convex-hull coverage by
//!    area) and the whole construction retries with a more distant
//!    super-triangle if validation fails.

use crate::error::{Error, Result};
use crate::geometry::Point2;
use std::collections::BTreeSet;

/// A triangulation of a planar point set: triangles as CCW index triples and
/// the deduplicated undirected edge set (exactly the union of triangle sides).
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub points: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<(usize, usize)>,
}

const INSIDE_EPS: f64 = 1e-12;
const SUPER_SCALES: [f64; 3] = [1e4, 1e6, 1e8];

#[inline]
fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Strict in-circumcircle test for a CCW triangle, translated to the query
/// point for precision. Positive determinant means strictly inside; values
/// within the guard band (relative to the determinant's own term magnitudes)
/// are treated as on-circle, i.e. outside.
fn in_circumcircle(pts: &[Point2], tri: [usize; 3], p: Point2) -> bool {
    let a = pts[tri[0]];
    let b = pts[tri[1]];
    let c = pts[tri[2]];
    let (ax, ay) = (a.x - p.x, a.y - p.y);
    let (bx, by) = (b.x - p.x, b.y - p.y);
    let (cx, cy) = (c.x - p.x, c.y - p.y);
    let t1 = (ax * ax + ay * ay) * (bx * cy - cx * by);
    let t2 = (bx * bx + by * by) * (ax * cy - cx * ay);
    let t3 = (cx * cx + cy * cy) * (ax * by - bx * ay);
    let det = t1 - t2 + t3;
    det > INSIDE_EPS * (t1.abs() + t2.abs() + t3.abs())
}

fn ccw(pts: &[Point2], tri: [usize; 3]) -> [usize; 3] {
    if orient(pts[tri[0]], pts[tri[1]], pts[tri[2]]) < 0.0 {
        [tri[0], tri[2], tri[1]]
    } else {
        tri
    }
}

/// Delaunay triangulation of `points`. Needs at least 3 non-collinear points;
/// exact duplicates are dropped from the mesh (keeping the lowest index).
pub fn delaunay(points: &[Point2]) -> Result<Triangulation> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::NonFinite("triangulation input points".into()));
    }

    let span = bbox_span(points);
    if collinear(points, span) {
        return Err(Error::CollinearPoints);
    }

    let mut last_err = String::new();
    for &scale in &SUPER_SCALES {
        match build_once(points, span, scale) {
            Ok(tris) => return Ok(finish(points, tris)),
            Err(msg) => last_err = msg,
        }
    }
    Err(Error::Triangulation(last_err))
}

fn bbox_span(points: &[Point2]) -> f64 {
    let mut min = points[0];
    let mut max = points[0];
    for p in points {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (max.x - min.x).max(max.y - min.y).max(f64::MIN_POSITIVE)
}

fn collinear(points: &[Point2], span: f64) -> bool {
    // Line through the first point and the point farthest from it; collinear
    // iff every other point sits within the guard band of that line.
    let p0 = points[0];
    let far = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.dist2(p0).total_cmp(&b.1.dist2(p0)))
        .map(|(i, _)| i)
        .unwrap();
    if points[far].dist2(p0) == 0.0 {
        return true; // all points identical
    }
    let pf = points[far];
    points
        .iter()
        .all(|&p| orient(p0, pf, p).abs() <= 1e-12 * span * span)
}

/// One Bowyer-Watson run with the super-triangle at `scale` times the data
/// span. Returns real-vertex triangles or a reason to retry farther out.
fn build_once(
    points: &[Point2],
    span: f64,
    scale: f64,
) -> std::result::Result<Vec<[usize; 3]>, String> {
    let n = points.len();
    let mut pts = points.to_vec();
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points {
        cx += p.x;
        cy += p.y;
    }
    cx /= n as f64;
    cy /= n as f64;
    let big = scale * span;
    pts.push(Point2::new(cx - 2.0 * big, cy - big));
    pts.push(Point2::new(cx + 2.0 * big, cy - big));
    pts.push(Point2::new(cx, cy + 2.0 * big));

    let mut tris: Vec<[usize; 3]> = vec![ccw(&pts, [n, n + 1, n + 2])];

    for i in 0..n {
        let p = pts[i];
        if points[..i]
            .iter()
            .any(|q| q.dist2(p) <= (1e-12 * span) * (1e-12 * span))
        {
            continue; // exact/near duplicate of an earlier site
        }
        let bad: Vec<usize> = (0..tris.len())
            .filter(|&t| in_circumcircle(&pts, tris[t], p))
            .collect();
        if bad.is_empty() {
            return Err(format!(
                "insertion {i} found no enclosing circumcircle (scale {scale:e})"
            ));
        }
        // Directed edges of the cavity; boundary edges are those whose
        // reverse does not appear among the bad triangles.
        let mut dir_edges: Vec<(usize, usize)> = Vec::with_capacity(bad.len() * 3);
        for &t in &bad {
            let [a, b, c] = tris[t];
            dir_edges.push((a, b));
            dir_edges.push((b, c));
            dir_edges.push((c, a));
        }
        let mut boundary: Vec<(usize, usize)> = Vec::new();
        for &(a, b) in &dir_edges {
            if !dir_edges.contains(&(b, a)) {
                boundary.push((a, b));
            }
        }
        if boundary.len() < 3 {
            return Err(format!("degenerate cavity at insertion {i}"));
        }
        let mut keep: Vec<[usize; 3]> = Vec::with_capacity(tris.len() - bad.len() + boundary.len());
        for (t, tri) in tris.iter().enumerate() {
            if !bad.contains(&t) {
                keep.push(*tri);
            }
        }
        for (a, b) in boundary {
            keep.push(ccw(&pts, [a, b, i]));
        }
        tris = keep;
    }

    tris.retain(|t| t.iter().all(|&v| v < n));
    if tris.is_empty() {
        return Err("no real triangles survived".into());
    }

    legalize(&pts, &mut tris);

    if let Err(msg) = validate(points, &tris) {
        return Err(format!("{msg} (scale {scale:e})"));
    }
    Ok(tris)
}

/// Lawson flips until every interior edge is locally Delaunay. The initial
/// mesh is already near-Delaunay, so this converges in a handful of passes.
fn legalize(pts: &[Point2], tris: &mut [[usize; 3]]) {
    for _ in 0..200 {
        let mut flipped = false;
        'scan: for ti in 0..tris.len() {
            for tj in (ti + 1)..tris.len() {
                let shared: Vec<usize> = tris[ti]
                    .iter()
                    .filter(|v| tris[tj].contains(v))
                    .copied()
                    .collect();
                if shared.len() != 2 {
                    continue;
                }
                let c = *tris[ti].iter().find(|v| !shared.contains(v)).unwrap();
                let d = *tris[tj].iter().find(|v| !shared.contains(v)).unwrap();
                if !in_circumcircle(pts, tris[ti], pts[d]) {
                    continue;
                }
                let (a, b) = (shared[0], shared[1]);
                // Only flip when the replacement triangles are valid (convex
                // quadrilateral); otherwise leave it for the next pass/scale.
                let t1 = [a, d, c];
                let t2 = [d, b, c];
                if orient(pts[t1[0]], pts[t1[1]], pts[t1[2]]).abs() < f64::MIN_POSITIVE
                    || orient(pts[t2[0]], pts[t2[1]], pts[t2[2]]).abs() < f64::MIN_POSITIVE
                {
                    continue;
                }
                let sign1 = orient(pts[t1[0]], pts[t1[1]], pts[t1[2]]) > 0.0;
                let sign2 = orient(pts[t2[0]], pts[t2[1]], pts[t2[2]]) > 0.0;
                if sign1 != sign2 {
                    continue; // non-convex quad, flip would fold over
                }
                tris[ti] = ccw(pts, t1);
                tris[tj] = ccw(pts, t2);
                flipped = true;
                break 'scan;
            }
        }
        if !flipped {
            return;
        }
    }
}

fn validate(points: &[Point2], tris: &[[usize; 3]]) -> std::result::Result<(), String> {
    // Manifold: every undirected edge borders at most two triangles.
    let mut counts: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
    for t in tris {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *counts.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    if counts.values().any(|&c| c > 2) {
        return Err("non-manifold edge".into());
    }
    // Coverage: triangles tile the convex hull.
    let tri_area: f64 = tris
        .iter()
        .map(|t| orient(points[t[0]], points[t[1]], points[t[2]]).abs() / 2.0)
        .sum();
    let hull_area = convex_hull_area(points);
    if (tri_area - hull_area).abs() > 1e-9 * hull_area.max(f64::MIN_POSITIVE) {
        return Err(format!(
            "triangle area {tri_area} does not cover hull area {hull_area}"
        ));
    }
    Ok(())
}

/// Area of the convex hull (Andrew's monotone chain + shoelace).
fn convex_hull_area(points: &[Point2]) -> f64 {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
    });
    idx.dedup_by(|a, b| points[*a] == points[*b]);
    if idx.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(idx.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let it: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &i in it {
            while hull.len() >= start + 2 {
                let a = points[hull[hull.len() - 2]];
                let b = points[hull[hull.len() - 1]];
                if orient(a, b, points[i]) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        hull.pop();
    }
    let mut area2 = 0.0;
    for k in 0..hull.len() {
        let a = points[hull[k]];
        let b = points[hull[(k + 1) % hull.len()]];
        area2 += a.x * b.y - a.y * b.x;
    }
    area2.abs() / 2.0
}

fn finish(points: &[Point2], tris: Vec<[usize; 3]>) -> Triangulation {
    let mut edge_set: BTreeSet<(usize, usize)> = BTreeSet::new();
    for t in &tris {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            edge_set.insert((a.min(b), a.max(b)));
        }
    }
    Triangulation {
        points: points.to_vec(),
        triangles: tris,
        edges: edge_set.into_iter().collect(),
    }
}
