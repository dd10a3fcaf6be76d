//! Scanline polygon rasterization with even-odd fill at pixel centers.

use super::poly::{self, Point};
use super::{GeometryError, Result};

/// Rasterize a simple polygon in normalized `[-1,1]` coordinates onto a
/// `height x width` boolean grid. A pixel is set when its center lies
/// inside the polygon (even-odd rule, half-open edges so shared borders
/// never double-fill).
pub fn rasterize_polygon(points: &[Point], height: usize, width: usize) -> Result<Vec<bool>> {
    if !poly::is_simple(points) {
        return Err(GeometryError::SelfIntersecting { object: "polygon".into() });
    }
    let mut mask = vec![false; height * width];
    let n = points.len();
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    for row in 0..height {
        let y = -1.0 + (row as f64 + 0.5) * 2.0 / height as f64;
        xs.clear();
        for i in 0..n {
            let a = points[i];
            let b = points[(i + 1) % n];
            // half-open span [min(y), max(y)) avoids double counting vertices
            if (a[1] <= y && b[1] > y) || (b[1] <= y && a[1] > y) {
                let t = (y - a[1]) / (b[1] - a[1]);
                xs.push(a[0] + t * (b[0] - a[0]));
            }
        }
        xs.sort_by(|l, r| l.partial_cmp(r).unwrap());
        for pair in xs.chunks(2) {
            if pair.len() < 2 {
                break;
            }
            let (xa, xb) = (pair[0], pair[1]);
            // pixel centers x_c = -1 + (c + 0.5) * 2/width inside [xa, xb)
            let c0 = ((xa + 1.0) * width as f64 / 2.0 - 0.5).ceil().max(0.0) as usize;
            let c1f = (xb + 1.0) * width as f64 / 2.0 - 0.5;
            if c1f <= 0.0 {
                continue;
            }
            let c1 = c1f.ceil().min(width as f64) as usize;
            for c in c0..c1 {
                mask[row * width + c] = true;
            }
        }
    }
    Ok(mask)
}
