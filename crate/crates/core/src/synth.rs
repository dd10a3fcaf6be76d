//! Synthetic lumbar phantom generation and the on-disk sample format.
//!
//! A phantom is a stack of six vertebra quadrilaterals alternating with
//! five thinner, laterally bulging discs placed along a smooth spine
//! curve. Object boundaries are sampled onto the fixed template topology
//! (24 points per vertebra, 20 per disc, landmark indices at corners and
//! edge midpoints), so the mesh, the rendered image and the rasterized
//! masks are mutually consistent by construction.
//!
//! Sample directory layout: `image.json` + `image.raw` (f32 LE, row
//! major), `mesh.json`, `masks.json` + `masks.raw` (12 u8 planes), and
//! `meta.json` echoing the generator spec.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    rasterize_polygon, GeometryError, Landmarks, MeshObject, MeshTemplate, PixelGrid, Point,
    Shape, OBJECT_NAMES,
};
use crate::io::{mesh_to_json, IoError};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

pub const SEG_CLASSES: usize = 12;

/// Per-side boundary point counts; all even so edge midpoints land on
/// sampled points.
const VERTEBRA_SIDES: [usize; 4] = [6, 6, 6, 6];
const DISC_SIDES: [usize; 4] = [6, 4, 6, 4];

/// Canonical object sizes in normalized units.
const VERTEBRA_W: f64 = 0.34;
const VERTEBRA_H: f64 = 0.17;
const DISC_W: f64 = 0.36;
const DISC_H: f64 = 0.076;
const STACK_GAP: f64 = 0.016;
const VERTEBRA_BULGE: f64 = 0.008;
const DISC_BULGE: f64 = 0.035;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub side: usize,
    pub pixel_spacing_mm: f64,
    /// Max lateral bow of the spine curve (normalized units).
    pub curvature: f64,
    /// Relative size jitter per object.
    pub size_jitter: f64,
    /// Extra per-object rotation jitter (radians).
    pub rotation_jitter: f64,
    /// Whole-stack translation range (normalized units).
    pub translation_jitter: f64,
    /// Whole-stack scale jitter.
    pub scale_jitter: f64,
    /// Gaussian image noise sigma.
    pub noise_sigma: f64,
    /// Per-object intensity jitter.
    pub intensity_jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            side: 128,
            pixel_spacing_mm: 0.68,
            curvature: 0.10,
            size_jitter: 0.08,
            rotation_jitter: 0.03,
            translation_jitter: 0.10,
            scale_jitter: 0.08,
            noise_sigma: 0.02,
            intensity_jitter: 0.06,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("io: {0}")]
    File(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One training/evaluation unit: image, ground-truth mesh, class masks.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Vec<f64>,
    pub side: usize,
    pub shape: Shape,
    /// 12 planes (background + 11 objects), `side*side` u8 each.
    pub masks: Option<Vec<Vec<u8>>>,
    pub meta: PhantomSpec,
}

impl Sample {
    pub fn grid(&self) -> PixelGrid {
        PixelGrid { side: self.side, spacing_mm: self.shape.template.pixel_spacing_mm }
    }

    pub fn image_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.side, self.side], self.image.clone()).expect("image tensor")
    }
}

pub struct Dataset {
    pub template: Arc<MeshTemplate>,
    pub samples: Vec<Sample>,
}

// ---- boundary construction -------------------------------------------------

/// Local-frame object outline: a `w x h` quadrilateral centered at the
/// origin with parabolic outward bulges per side.
struct Proto {
    w: f64,
    h: f64,
    bulges: [f64; 4], // top, right, bottom, left
    sides: [usize; 4],
}

/// Sampled ring starting at the upper-anterior corner, clockwise on
/// screen (positive shoelace with y down): top edge left to right, right
/// edge down, bottom edge right to left, left edge up.
fn boundary(proto: &Proto) -> Vec<Point> {
    let (hw, hh) = (proto.w / 2.0, proto.h / 2.0);
    let corners = [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]];
    let normals = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
    let mut out = Vec::with_capacity(proto.sides.iter().sum());
    for side in 0..4 {
        let a = corners[side];
        let b = corners[(side + 1) % 4];
        let m = proto.sides[side];
        for j in 0..m {
            let t = j as f64 / m as f64;
            let bulge = proto.bulges[side] * 4.0 * t * (1.0 - t);
            out.push([
                a[0] + t * (b[0] - a[0]) + bulge * normals[side][0],
                a[1] + t * (b[1] - a[1]) + bulge * normals[side][1],
            ]);
        }
    }
    out
}

/// Landmark indices relative to the ring start for the given side counts.
fn landmark_offsets(sides: [usize; 4]) -> Landmarks {
    let [mt, mr, mb, _ml] = sides;
    Landmarks {
        d1: 0,
        d5: mt / 2,
        d2: mt,
        d6: mt + mr / 2,
        d3: mt + mr,
        d7: mt + mr + mb / 2,
        d4: mt + mr + mb,
        d8: mt + mr + mb + sides[3] / 2,
    }
}

fn object_proto(name: &str, canonical: bool, rng: &mut SeededRng, spec: &PhantomSpec) -> Proto {
    let vertebra = crate::geometry::is_vertebra(name);
    let (w0, h0) = if vertebra { (VERTEBRA_W, VERTEBRA_H) } else { (DISC_W, DISC_H) };
    let mut jitter = |lo: f64, hi: f64| if canonical { (lo + hi) / 2.0 } else { rng.gen_range(lo..hi) };
    let j = spec.size_jitter;
    let w = w0 * jitter(1.0 - j, 1.0 + j);
    let h = h0 * jitter(1.0 - j, 1.0 + j);
    let bulges = if vertebra {
        [VERTEBRA_BULGE; 4]
    } else {
        let left = DISC_BULGE * jitter(0.5, 1.5);
        let right = DISC_BULGE * jitter(0.5, 1.5);
        [0.0, right, 0.0, left]
    };
    Proto {
        w,
        h,
        bulges,
        sides: if vertebra { VERTEBRA_SIDES } else { DISC_SIDES },
    }
}

fn rotate_translate(points: &[Point], angle: f64, center: Point) -> Vec<Point> {
    let (s, c) = angle.sin_cos();
    points
        .iter()
        .map(|p| [center[0] + c * p[0] - s * p[1], center[1] + s * p[0] + c * p[1]])
        .collect()
}

/// The heights (plus gaps) of the canonical stack, used to spread object
/// centers along the spine curve.
fn stack_layout(protos: &[Proto]) -> (f64, Vec<f64>) {
    let total: f64 =
        protos.iter().map(|p| p.h).sum::<f64>() + STACK_GAP * (protos.len() - 1) as f64;
    let mut centers = Vec::with_capacity(protos.len());
    let mut y = -total / 2.0;
    for p in protos {
        centers.push(y + p.h / 2.0);
        y += p.h + STACK_GAP;
    }
    (total, centers)
}

/// Output of one generation attempt, before validity checks.
struct Placed {
    points: Vec<Point>,
    objects: Vec<MeshObject>,
    landmarks: Vec<Landmarks>,
    /// Local-frame polygons per object; rigid placement preserves every
    /// measured parameter, which the tests exploit as an oracle.
    local_polygons: Vec<Vec<Point>>,
    local_landmarks: Vec<Landmarks>,
}

fn place_objects(spec: &PhantomSpec, canonical: bool, rng: &mut SeededRng) -> Placed {
    let protos: Vec<Proto> = OBJECT_NAMES
        .iter()
        .map(|name| object_proto(name, canonical, rng, spec))
        .collect();
    let (span, centers) = stack_layout(&protos);

    let mut draw = |lo: f64, hi: f64| if canonical { 0.0 } else { rng.gen_range(lo..hi) };
    let kappa = draw(-spec.curvature, spec.curvature);
    let tx = draw(-spec.translation_jitter, spec.translation_jitter);
    let ty = draw(-spec.translation_jitter, spec.translation_jitter);
    let scale = if canonical {
        1.0
    } else {
        rng.gen_range(1.0 - spec.scale_jitter..1.0 + spec.scale_jitter)
    };

    let mut points = Vec::new();
    let mut objects = Vec::new();
    let mut landmarks = Vec::new();
    let mut local_polygons = Vec::new();
    let mut local_landmarks = Vec::new();
    for (k, (proto, name)) in protos.iter().zip(OBJECT_NAMES).enumerate() {
        let local = boundary(proto);
        let offsets = landmark_offsets(proto.sides);

        let t = (centers[k] + span / 2.0) / span; // 0 at top, 1 at bottom
        let x_curve = kappa * (std::f64::consts::PI * t).sin();
        let slope = kappa * std::f64::consts::PI * (std::f64::consts::PI * t).cos() / span;
        let rot_jitter = if canonical {
            0.0
        } else {
            rng.gen_range(-spec.rotation_jitter..spec.rotation_jitter)
        };
        let angle = slope.atan() + rot_jitter;
        let center = [scale * x_curve + tx, scale * centers[k] + ty];
        let scaled: Vec<Point> = local.iter().map(|p| [p[0] * scale, p[1] * scale]).collect();
        let placed = rotate_translate(&scaled, angle, center);

        let base = points.len();
        points.extend(placed);
        objects.push(MeshObject { name: name.to_string(), indices: (base..points.len()).collect() });
        landmarks.push(Landmarks {
            d1: base + offsets.d1,
            d2: base + offsets.d2,
            d3: base + offsets.d3,
            d4: base + offsets.d4,
            d5: base + offsets.d5,
            d6: base + offsets.d6,
            d7: base + offsets.d7,
            d8: base + offsets.d8,
        });
        local_polygons.push(local);
        local_landmarks.push(offsets);
    }
    Placed { points, objects, landmarks, local_polygons, local_landmarks }
}

fn polygons_disjoint(template: &MeshTemplate) -> bool {
    let polys: Vec<Vec<Point>> = (0..template.objects.len())
        .map(|k| template.object_points(&template.points, k))
        .collect();
    let bboxes: Vec<[f64; 4]> = polys
        .iter()
        .map(|pts| {
            let mut bb = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
            for p in pts {
                bb[0] = bb[0].min(p[0]);
                bb[1] = bb[1].min(p[1]);
                bb[2] = bb[2].max(p[0]);
                bb[3] = bb[3].max(p[1]);
            }
            bb
        })
        .collect();
    for i in 0..polys.len() {
        for j in i + 1..polys.len() {
            let (a, b) = (&bboxes[i], &bboxes[j]);
            if a[2] < b[0] || b[2] < a[0] || a[3] < b[1] || b[3] < a[1] {
                continue;
            }
            if polygons_touch(&polys[i], &polys[j]) {
                return false;
            }
        }
    }
    true
}

fn polygons_touch(a: &[Point], b: &[Point]) -> bool {
    // ring-ring edge crossing, then containment either way
    let mut combined = a.to_vec();
    combined.extend_from_slice(b);
    for i in 0..a.len() {
        let (p, q) = (a[i], a[(i + 1) % a.len()]);
        for j in 0..b.len() {
            let (r, s) = (b[j], b[(j + 1) % b.len()]);
            if segments_cross_loose(p, q, r, s) {
                return true;
            }
        }
    }
    point_in_polygon(a[0], b) || point_in_polygon(b[0], a)
}

fn segments_cross_loose(a: Point, b: Point, c: Point, d: Point) -> bool {
    let orient = |p: Point, q: Point, r: Point| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    ((o1 > 0.0) != (o2 > 0.0)) && ((o3 > 0.0) != (o4 > 0.0))
}

fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[1] <= p[1] && b[1] > p[1]) || (b[1] <= p[1] && a[1] > p[1]) {
            let t = (p[1] - a[1]) / (b[1] - a[1]);
            if a[0] + t * (b[0] - a[0]) > p[0] {
                inside = !inside;
            }
        }
    }
    inside
}

/// The canonical, jitter-free template every phantom shares.
pub fn canonical_template(pixel_spacing_mm: f64) -> MeshTemplate {
    let mut rng = rng::seeded(0);
    let spec = PhantomSpec { pixel_spacing_mm, ..PhantomSpec::default() };
    let placed = place_objects(&spec, true, &mut rng);
    let template = MeshTemplate {
        points: placed.points,
        objects: placed.objects,
        landmarks: placed.landmarks,
        pixel_spacing_mm,
    };
    template.validate().expect("canonical template is valid");
    template
}

// ---- rendering --------------------------------------------------------------

fn blur3(image: &mut Vec<f64>, side: usize) {
    // separable binomial [1,2,1]/4 per axis
    let mut tmp = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let l = image[r * side + c.saturating_sub(1)];
            let m = image[r * side + c];
            let rr = image[r * side + (c + 1).min(side - 1)];
            tmp[r * side + c] = (l + 2.0 * m + rr) / 4.0;
        }
    }
    for c in 0..side {
        for r in 0..side {
            let u = tmp[r.saturating_sub(1) * side + c];
            let m = tmp[r * side + c];
            let d = tmp[(r + 1).min(side - 1) * side + c];
            image[r * side + c] = (u + 2.0 * m + d) / 4.0;
        }
    }
}

struct Rendered {
    image: Vec<f64>,
    masks: Vec<Vec<u8>>,
}

fn render(template: &MeshTemplate, spec: &PhantomSpec, rng: &mut SeededRng) -> Result<Rendered> {
    let side = spec.side;
    let n = side * side;

    // smooth background
    let base = rng.gen_range(0.15..0.25);
    let gx = rng.gen_range(-0.05..0.05);
    let gy = rng.gen_range(-0.05..0.05);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut image = vec![0.0; n];
    for r in 0..side {
        let y = -1.0 + (r as f64 + 0.5) * 2.0 / side as f64;
        for c in 0..side {
            let x = -1.0 + (c as f64 + 0.5) * 2.0 / side as f64;
            image[r * side + c] =
                base + gx * x + gy * y + 0.02 * (1.5 * x + 2.5 * y + phase).sin();
        }
    }

    // per-object fill + rasterized masks
    let mut masks = vec![vec![0u8; n]; SEG_CLASSES];
    let mut union = vec![false; n];
    for (k, name) in OBJECT_NAMES.iter().enumerate() {
        let vertebra = crate::geometry::is_vertebra(name);
        let base_int = if vertebra { 0.52 } else { 0.78 };
        let intensity =
            base_int + rng.gen_range(-spec.intensity_jitter..spec.intensity_jitter + f64::EPSILON);
        let mask = rasterize_polygon(&template.object_points(&template.points, k), side, side)?;
        for (i, &inside) in mask.iter().enumerate() {
            if inside {
                image[i] = intensity;
                masks[k + 1][i] = 1;
                union[i] = true;
            }
        }
    }
    for (i, covered) in union.iter().enumerate() {
        masks[0][i] = u8::from(!covered);
    }

    blur3(&mut image, side);
    blur3(&mut image, side);
    for v in image.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *v = (*v + spec.noise_sigma * noise).clamp(0.0, 1.0);
        // keep values exactly representable in the f32 file format
        *v = (*v as f32) as f64;
    }
    Ok(Rendered { image, masks })
}

/// Generated phantom plus the local-frame polygons used as a
/// measurement oracle (rigid placement preserves all parameters).
pub struct GeneratedPhantom {
    pub sample: Sample,
    pub local_polygons: Vec<Vec<Point>>,
    pub local_landmarks: Vec<Landmarks>,
}

pub fn generate_detailed(spec: &PhantomSpec, template: &Arc<MeshTemplate>) -> Result<GeneratedPhantom> {
    const RETRIES: u64 = 20;
    for retry in 0..RETRIES {
        let mut rng = rng::derive(spec.seed, 0xfa_0000 + retry);
        let placed = place_objects(spec, false, &mut rng);
        let candidate = MeshTemplate {
            points: placed.points.clone(),
            objects: placed.objects.clone(),
            landmarks: placed.landmarks.clone(),
            pixel_spacing_mm: spec.pixel_spacing_mm,
        };
        if candidate.validate().is_err()
            || !polygons_disjoint(&candidate)
            || !candidate.points.iter().all(|p| p[0].abs() < 0.97 && p[1].abs() < 0.97)
        {
            continue;
        }
        let rendered = render(&candidate, spec, &mut rng)?;
        let shape = Shape::new(Arc::clone(template), candidate.points)?;
        return Ok(GeneratedPhantom {
            sample: Sample {
                image: rendered.image,
                side: spec.side,
                shape,
                masks: Some(rendered.masks),
                meta: spec.clone(),
            },
            local_polygons: placed.local_polygons,
            local_landmarks: placed.local_landmarks,
        });
    }
    Err(DataError::Invalid(format!(
        "seed {}: could not place non-overlapping objects after {RETRIES} retries",
        spec.seed
    )))
}

pub fn generate(spec: &PhantomSpec, template: &Arc<MeshTemplate>) -> Result<Sample> {
    Ok(generate_detailed(spec, template)?.sample)
}

/// Dataset of `count` phantoms with per-sample derived seeds.
pub fn generate_dataset(count: usize, base: &PhantomSpec, seed: u64) -> Result<Dataset> {
    let template = Arc::new(canonical_template(base.pixel_spacing_mm));
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let spec = PhantomSpec { seed: seed.wrapping_add(i as u64), ..base.clone() };
        samples.push(generate(&spec, &template)?);
    }
    Ok(Dataset { template, samples })
}

/// Deterministic shuffled split into train/val/test index sets.
pub fn split(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let total = ratios.0 + ratios.1 + ratios.2;
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!("split ratios sum to {total}, expected 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::derive(seed, 0x59117);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (ratios.0 * n as f64).round() as usize;
    let n_val = (ratios.1 * n as f64).round() as usize;
    let train = order[..n_train].to_vec();
    let val = order[n_train..(n_train + n_val).min(n)].to_vec();
    let test = order[(n_train + n_val).min(n)..].to_vec();
    Ok((train, val, test))
}

// ---- sample file I/O --------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ImageSidecar {
    height: usize,
    width: usize,
    pixel_spacing_mm: f64,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct MaskSidecar {
    height: usize,
    width: usize,
    planes: usize,
    dtype: String,
    order: Vec<String>,
}

pub fn save_sample(sample: &Sample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let side = sample.side;
    let sidecar = ImageSidecar {
        height: side,
        width: side,
        pixel_spacing_mm: sample.shape.template.pixel_spacing_mm,
        dtype: "f32".into(),
    };
    fs::write(dir.join("image.json"), serde_json::to_vec_pretty(&sidecar)?)?;
    let mut raw = Vec::with_capacity(side * side * 4);
    for &v in &sample.image {
        raw.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(dir.join("image.raw"), raw)?;

    crate::io::save_mesh(&dir.join("mesh.json"), &sample.shape.template, &sample.shape.points)?;

    if let Some(masks) = &sample.masks {
        let sidecar = MaskSidecar {
            height: side,
            width: side,
            planes: SEG_CLASSES,
            dtype: "u8".into(),
            order: std::iter::once("background".to_string())
                .chain(OBJECT_NAMES.iter().map(|s| s.to_string()))
                .collect(),
        };
        fs::write(dir.join("masks.json"), serde_json::to_vec_pretty(&sidecar)?)?;
        let mut raw = Vec::with_capacity(SEG_CLASSES * side * side);
        for plane in masks {
            raw.extend_from_slice(plane);
        }
        fs::write(dir.join("masks.raw"), raw)?;
    }

    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&sample.meta)?)?;
    Ok(())
}

fn malformed(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Io(IoError::Malformed { file: path.display().to_string(), msg: msg.into() })
}

pub fn load_sample(dir: &Path) -> Result<Sample> {
    let image_json = dir.join("image.json");
    let sidecar: ImageSidecar = serde_json::from_slice(&fs::read(&image_json)?)
        .map_err(|e| malformed(&image_json, e.to_string()))?;
    if sidecar.dtype != "f32" {
        return Err(malformed(&image_json, format!("unsupported dtype {}", sidecar.dtype)));
    }
    if sidecar.height != sidecar.width {
        return Err(malformed(&image_json, "image must be square"));
    }
    let side = sidecar.height;
    let raw = fs::read(dir.join("image.raw"))?;
    if raw.len() != side * side * 4 {
        return Err(malformed(
            &dir.join("image.raw"),
            format!("expected {} bytes, found {}", side * side * 4, raw.len()),
        ));
    }
    let mut image: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    // intensities are normalized into [0,1] on load
    let lo = image.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = image.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo < 0.0 || hi > 1.0 {
        let span = if hi > lo { hi - lo } else { 1.0 };
        for v in image.iter_mut() {
            *v = (((*v - lo) / span) as f32) as f64;
        }
    }

    let template = Arc::new(crate::io::load_mesh(&dir.join("mesh.json"))?);
    let shape = Shape::new(Arc::clone(&template), template.points.clone())?;

    let masks_path = dir.join("masks.json");
    let masks = if masks_path.exists() {
        let sidecar: MaskSidecar = serde_json::from_slice(&fs::read(&masks_path)?)
            .map_err(|e| malformed(&masks_path, e.to_string()))?;
        if sidecar.planes != SEG_CLASSES || sidecar.height != side || sidecar.width != side {
            return Err(malformed(&masks_path, "mask dimensions do not match image"));
        }
        let raw = fs::read(dir.join("masks.raw"))?;
        if raw.len() != SEG_CLASSES * side * side {
            return Err(malformed(&dir.join("masks.raw"), "unexpected mask payload size"));
        }
        Some(raw.chunks_exact(side * side).map(|c| c.to_vec()).collect())
    } else {
        None
    };

    let meta_path = dir.join("meta.json");
    let meta: PhantomSpec = if meta_path.exists() {
        serde_json::from_slice(&fs::read(&meta_path)?)
            .map_err(|e| malformed(&meta_path, e.to_string()))?
    } else {
        PhantomSpec { side, pixel_spacing_mm: template.pixel_spacing_mm, ..PhantomSpec::default() }
    };

    Ok(Sample { image, side, shape, masks, meta })
}

/// Load every numbered sample directory under `root`, in name order.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DataError::Invalid(format!("no sample directories under {}", root.display())));
    }
    let mut samples = Vec::with_capacity(dirs.len());
    for d in &dirs {
        samples.push(load_sample(d)?);
    }
    let template = Arc::clone(&samples[0].shape.template);
    for s in &samples {
        if !s.shape.template.same_topology(&template) {
            return Err(DataError::Invalid(
                "samples do not share one template topology".into(),
            ));
        }
    }
    Ok(Dataset { template, samples })
}

/// Canonical mesh JSON bytes of a sample's ground truth, used by tests.
pub fn sample_mesh_json(sample: &Sample) -> Vec<u8> {
    serde_json::to_vec_pretty(&mesh_to_json(&sample.shape.template, &sample.shape.points)).unwrap()
}
