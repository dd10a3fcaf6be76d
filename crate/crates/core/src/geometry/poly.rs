//! Plain polygon helpers on `[x, y]` point slices.

pub type Point = [f64; 2];

/// Signed shoelace area; positive for the orientation this crate calls
/// counterclockwise (y grows downward in image coordinates).
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

pub fn polygon_perimeter(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| dist(points[i], points[(i + 1) % n]))
        .sum()
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn midpoint(a: Point, b: Point) -> Point {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let mut c = [0.0, 0.0];
    for p in points {
        c[0] += p[0];
        c[1] += p[1];
    }
    [c[0] / n, c[1] / n]
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// A closed polygon is simple when no two non-adjacent edges intersect.
pub fn is_simple(points: &[Point]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        for j in i + 1..n {
            // skip the shared-vertex neighbours
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (points[j], points[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Clip a polygon to the half-plane on the positive side of the directed
/// line `a -> b` (positive = `orient(a, b, p) >= 0`). Sutherland–Hodgman
/// against a single edge; the enclosed area of the result is the exact
/// intersection area for any simple subject polygon.
pub fn clip_halfplane(points: &[Point], a: Point, b: Point) -> Vec<Point> {
    let mut out = Vec::with_capacity(points.len() + 2);
    let n = points.len();
    for i in 0..n {
        let cur = points[i];
        let next = points[(i + 1) % n];
        let side_cur = orient(a, b, cur);
        let side_next = orient(a, b, next);
        if side_cur >= 0.0 {
            out.push(cur);
        }
        if (side_cur > 0.0 && side_next < 0.0) || (side_cur < 0.0 && side_next > 0.0) {
            let t = side_cur / (side_cur - side_next);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

/// All intersection points of the infinite line through `a` and `b` with
/// the polygon boundary, sorted along the line direction.
pub fn line_polygon_intersections(points: &[Point], a: Point, b: Point) -> Vec<Point> {
    let dir = [b[0] - a[0], b[1] - a[1]];
    let n = points.len();
    let mut hits: Vec<(f64, Point)> = Vec::new();
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        let sp = orient(a, b, p);
        let sq = orient(a, b, q);
        if (sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0) {
            let t = sp / (sp - sq);
            let hit = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            let along = (hit[0] - a[0]) * dir[0] + (hit[1] - a[1]) * dir[1];
            hits.push((along, hit));
        }
    }
    hits.sort_by(|l, r| l.0.partial_cmp(&r.0).unwrap());
    hits.into_iter().map(|(_, p)| p).collect()
}
