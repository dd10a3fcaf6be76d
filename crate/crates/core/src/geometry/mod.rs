//! Mesh template, deformed shapes, and the geometric metrics and
//! perturbations used in training and evaluation.
//!
//! A template is an ordered 2-D point set in normalized `[-1,1]`
//! coordinates, partitioned into the 11 lumbar objects (6 vertebrae, 5
//! discs), each a simple counterclockwise polygon with corner landmarks
//! `d1..d4` and edge-midpoint landmarks `d5..d8`. Every shape derived from
//! a template shares its topology, which is what makes point-to-point
//! metrics and per-landmark measurements well defined across samples.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod poly;
mod raster;

#[cfg(test)]
mod tests;

pub use poly::Point;
pub use raster::rasterize_polygon;

use crate::rng::{self, SeededRng};
use rand::Rng;

/// Fixed object order: vertebrae interleaved with the discs below them.
pub const OBJECT_NAMES: [&str; 11] = [
    "L1", "D1", "L2", "D2", "L3", "D3", "L4", "D4", "L5", "D5", "S1",
];

pub fn is_vertebra(name: &str) -> bool {
    !name.starts_with('D')
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("object {object}: polygon is self-intersecting")]
    SelfIntersecting { object: String },
    #[error("shapes do not share a template")]
    TemplateMismatch,
    #[error("nonlinear warp kept self-intersecting after {0} retries")]
    WarpFailed(usize),
    #[error("degenerate shape: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Corner and edge-midpoint landmark indices of one object, in the fixed
/// convention: d1 upper-anterior, d2 upper-posterior, d3 lower-posterior,
/// d4 lower-anterior corners; d5 upper, d6 posterior, d7 lower, d8
/// anterior edge midpoints. Anterior is the smaller-x side.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Landmarks {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub d4: usize,
    pub d5: usize,
    pub d6: usize,
    pub d7: usize,
    pub d8: usize,
}

impl Landmarks {
    pub fn all(&self) -> [usize; 8] {
        [self.d1, self.d2, self.d3, self.d4, self.d5, self.d6, self.d7, self.d8]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshObject {
    pub name: String,
    /// Ordered point indices forming a closed polygon.
    pub indices: Vec<usize>,
}

/// Pixel grid geometry used to convert normalized units to pixels and mm.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct PixelGrid {
    pub side: usize,
    pub spacing_mm: f64,
}

impl PixelGrid {
    pub fn norm_to_px(&self, v: f64) -> f64 {
        v * self.side as f64 / 2.0
    }

    pub fn px_to_norm(&self, v: f64) -> f64 {
        v * 2.0 / self.side as f64
    }

    pub fn norm_to_mm(&self, v: f64) -> f64 {
        self.norm_to_px(v) * self.spacing_mm
    }
}

#[derive(Clone, Debug)]
pub struct MeshTemplate {
    pub points: Vec<Point>,
    pub objects: Vec<MeshObject>,
    pub landmarks: Vec<Landmarks>,
    pub pixel_spacing_mm: f64,
}

impl MeshTemplate {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn object_points<'a>(&self, points: &'a [Point], obj: usize) -> Vec<Point> {
        self.objects[obj].indices.iter().map(|&i| points[i]).collect()
    }

    /// Full structural validation of the template invariants.
    pub fn validate(&self) -> Result<()> {
        if self.objects.len() != OBJECT_NAMES.len() {
            return Err(GeometryError::InvalidTemplate(format!(
                "expected {} objects, found {}",
                OBJECT_NAMES.len(),
                self.objects.len()
            )));
        }
        for (obj, expect) in self.objects.iter().zip(OBJECT_NAMES) {
            if obj.name != expect {
                return Err(GeometryError::InvalidTemplate(format!(
                    "object order: expected {expect}, found {}",
                    obj.name
                )));
            }
        }
        if self.landmarks.len() != self.objects.len() {
            return Err(GeometryError::InvalidTemplate(
                "landmark table length differs from object count".into(),
            ));
        }
        let n = self.points.len();
        let mut seen = vec![false; n];
        for obj in &self.objects {
            if obj.indices.len() < 3 {
                return Err(GeometryError::InvalidTemplate(format!(
                    "object {} has fewer than 3 points",
                    obj.name
                )));
            }
            for &i in &obj.indices {
                if i >= n {
                    return Err(GeometryError::InvalidTemplate(format!(
                        "object {} references point {} out of {}",
                        obj.name, i, n
                    )));
                }
                if seen[i] {
                    return Err(GeometryError::InvalidTemplate(format!(
                        "point {} belongs to more than one object",
                        i
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(GeometryError::InvalidTemplate(
                "some points belong to no object".into(),
            ));
        }
        for p in &self.points {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(GeometryError::InvalidTemplate("non-finite point".into()));
            }
        }
        self.check_polygons(&self.points)?;
        for (obj, lm) in self.objects.iter().zip(&self.landmarks) {
            for idx in lm.all() {
                if !obj.indices.contains(&idx) {
                    return Err(GeometryError::InvalidTemplate(format!(
                        "landmark {} of {} is not a point of that object",
                        idx, obj.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Simplicity and orientation of every object polygon at the given
    /// point positions.
    pub fn check_polygons(&self, points: &[Point]) -> Result<()> {
        for (k, obj) in self.objects.iter().enumerate() {
            let ring = self.object_points(points, k);
            if !poly::is_simple(&ring) {
                return Err(GeometryError::SelfIntersecting { object: obj.name.clone() });
            }
            if poly::signed_area(&ring) <= 0.0 {
                return Err(GeometryError::InvalidTemplate(format!(
                    "object {} is not counterclockwise",
                    obj.name
                )));
            }
        }
        Ok(())
    }

    pub fn same_topology(&self, other: &MeshTemplate) -> bool {
        self.points.len() == other.points.len()
            && self.objects == other.objects
            && self.landmarks == other.landmarks
    }

    /// Shape sitting at the template's own points.
    pub fn as_shape(self: &Arc<Self>) -> Shape {
        Shape { template: Arc::clone(self), points: self.points.clone() }
    }

    /// Smooth warp: global affine jitter about the centroid plus a
    /// low-frequency sinusoidal displacement field. Magnitude 0 is the
    /// identity; polygons are re-checked and the warp is re-drawn from a
    /// derived seed when an object self-intersects.
    pub fn nonlinear_warp(self: &Arc<Self>, seed: u64, magnitude: f64) -> Result<MeshTemplate> {
        const RETRIES: usize = 10;
        for retry in 0..RETRIES {
            let mut rng = rng::derive(seed, 0xbeef_0000 + retry as u64);
            let points = warp_points(&self.points, magnitude, &mut rng);
            if self.check_polygons(&points).is_ok() {
                return Ok(MeshTemplate { points, ..(**self).clone() });
            }
        }
        Err(GeometryError::WarpFailed(RETRIES))
    }

    /// Rigid shift by a uniform random point in a disk of the given pixel
    /// radius.
    pub fn random_shift_in_circle(
        self: &Arc<Self>,
        radius_px: f64,
        grid: PixelGrid,
        seed: u64,
    ) -> MeshTemplate {
        let mut rng = rng::derive(seed, 0x5217);
        let shift = sample_in_disk(radius_px, &mut rng);
        let dx = grid.px_to_norm(shift[0]);
        let dy = grid.px_to_norm(shift[1]);
        let points = self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        MeshTemplate { points, ..(**self).clone() }
    }
}

/// Uniform draw in a disk of the given radius (polar inverse-CDF).
pub fn sample_in_disk<R: Rng>(radius: f64, rng: &mut R) -> Point {
    let r = radius * rng.gen_range(0.0..1.0f64).sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    [r * theta.cos(), r * theta.sin()]
}

fn warp_points(points: &[Point], magnitude: f64, rng: &mut SeededRng) -> Vec<Point> {
    if magnitude == 0.0 {
        return points.to_vec();
    }
    let c = poly::centroid(points);
    let angle = magnitude * rng.gen_range(-1.0..1.0);
    let scale = 1.0 + magnitude * rng.gen_range(-1.0..1.0);
    let shift = [magnitude * rng.gen_range(-1.0..1.0), magnitude * rng.gen_range(-1.0..1.0)];
    let (sin, cos) = angle.sin_cos();

    // two low-frequency sinusoidal displacement terms per axis
    let mut waves = Vec::new();
    for _ in 0..2 {
        let amp = rng.gen_range(0.0..magnitude / 2.0);
        let freq = rng.gen_range(std::f64::consts::FRAC_PI_2..std::f64::consts::TAU);
        let dir_theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let disp_theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        waves.push((amp, freq, dir_theta.cos(), dir_theta.sin(), disp_theta.cos(), disp_theta.sin(), phase));
    }

    points
        .iter()
        .map(|p| {
            let rel = [p[0] - c[0], p[1] - c[1]];
            let mut q = [
                c[0] + scale * (cos * rel[0] - sin * rel[1]) + shift[0],
                c[1] + scale * (sin * rel[0] + cos * rel[1]) + shift[1],
            ];
            for &(amp, freq, dx, dy, ux, uy, phase) in &waves {
                let s = amp * (freq * (p[0] * dx + p[1] * dy) + phase).sin();
                q[0] += s * ux;
                q[1] += s * uy;
            }
            q
        })
        .collect()
}

/// A deformed instance of a template: same topology, its own point set.
#[derive(Clone, Debug)]
pub struct Shape {
    pub template: Arc<MeshTemplate>,
    pub points: Vec<Point>,
}

impl Shape {
    pub fn new(template: Arc<MeshTemplate>, points: Vec<Point>) -> Result<Shape> {
        if points.len() != template.points.len() {
            return Err(GeometryError::InvalidTemplate(format!(
                "shape has {} points, template {}",
                points.len(),
                template.points.len()
            )));
        }
        Ok(Shape { template, points })
    }

    pub fn centroid(&self) -> Point {
        poly::centroid(&self.points)
    }

    pub fn translated(&self, delta: Point) -> Shape {
        Shape {
            template: Arc::clone(&self.template),
            points: self.points.iter().map(|p| [p[0] + delta[0], p[1] + delta[1]]).collect(),
        }
    }

    pub fn compatible(&self, other: &Shape) -> bool {
        Arc::ptr_eq(&self.template, &other.template) || self.template.same_topology(&other.template)
    }
}

/// Per-object scores plus their mean over the 11 objects.
#[derive(Clone, Debug)]
pub struct ObjectScores {
    pub per_object: Vec<(String, f64)>,
    pub whole: f64,
}

/// Average point-to-point distance in mm, per object and averaged.
pub fn appd(pred: &Shape, gt: &Shape, grid: PixelGrid) -> Result<ObjectScores> {
    if !pred.compatible(gt) {
        return Err(GeometryError::TemplateMismatch);
    }
    let template = &pred.template;
    let mut per_object = Vec::with_capacity(template.objects.len());
    let mut total = 0.0;
    for obj in &template.objects {
        let mean_dist = obj
            .indices
            .iter()
            .map(|&i| poly::dist(pred.points[i], gt.points[i]))
            .sum::<f64>()
            / obj.indices.len() as f64;
        let mm = grid.norm_to_mm(mean_dist);
        per_object.push((obj.name.clone(), mm));
        total += mm;
    }
    let whole = total / per_object.len() as f64;
    Ok(ObjectScores { per_object, whole })
}

/// Same as [`appd`] but in pixels.
pub fn appd_px(pred: &Shape, gt: &Shape, side: usize) -> Result<ObjectScores> {
    appd(pred, gt, PixelGrid { side, spacing_mm: 1.0 })
}

/// Dice overlap of the rasterized object polygons.
pub fn dice(pred: &Shape, gt: &Shape, raster_side: usize) -> Result<ObjectScores> {
    if !pred.compatible(gt) {
        return Err(GeometryError::TemplateMismatch);
    }
    let template = &pred.template;
    let mut per_object = Vec::with_capacity(template.objects.len());
    let mut total = 0.0;
    for (k, obj) in template.objects.iter().enumerate() {
        let a = rasterize_polygon(&template.object_points(&pred.points, k), raster_side, raster_side)?;
        let b = rasterize_polygon(&template.object_points(&gt.points, k), raster_side, raster_side)?;
        let score = mask_dice(&a, &b);
        per_object.push((obj.name.clone(), score));
        total += score;
    }
    let whole = total / per_object.len() as f64;
    Ok(ObjectScores { per_object, whole })
}

/// `2|A n B| / (|A| + |B|)` on boolean masks; identical empty masks score 1.
pub fn mask_dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|v| **v).count() + b.iter().filter(|v| **v).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}
