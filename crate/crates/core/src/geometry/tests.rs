use std::sync::Arc;

use super::poly;
use super::*;
use crate::rng;
use proptest::prelude::*;
use rand::Rng;

/// Tiny valid template: 11 stacked rectangles, 8 points each
/// (corners + edge midpoints) so every landmark is a real point index.
fn test_template() -> Arc<MeshTemplate> {
    let mut points = Vec::new();
    let mut objects = Vec::new();
    let mut landmarks = Vec::new();
    let (w, h, gap) = (0.5, 0.10, 0.02);
    let mut y = -0.75;
    for name in OBJECT_NAMES {
        let base = points.len();
        let (x0, x1) = (-w / 2.0, w / 2.0);
        let (y0, y1) = (y, y + h);
        let xm = 0.0;
        let ym = y + h / 2.0;
        // d1, d5, d2, d6, d3, d7, d4, d8 around the ring
        points.extend_from_slice(&[
            [x0, y0],
            [xm, y0],
            [x1, y0],
            [x1, ym],
            [x1, y1],
            [xm, y1],
            [x0, y1],
            [x0, ym],
        ]);
        objects.push(MeshObject { name: name.to_string(), indices: (base..base + 8).collect() });
        landmarks.push(Landmarks {
            d1: base,
            d5: base + 1,
            d2: base + 2,
            d6: base + 3,
            d3: base + 4,
            d7: base + 5,
            d4: base + 6,
            d8: base + 7,
        });
        y += h + gap;
    }
    let t = MeshTemplate { points, objects, landmarks, pixel_spacing_mm: 0.68 };
    t.validate().unwrap();
    Arc::new(t)
}

#[test]
fn centroid_of_unit_square_corners() {
    let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let c = poly::centroid(&square);
    assert_eq!(c, [0.5, 0.5]);
    let shifted: Vec<Point> = square.iter().map(|p| [p[0] + 0.3, p[1] - 0.2]).collect();
    let cs = poly::centroid(&shifted);
    assert!((cs[0] - 0.8).abs() < 1e-15 && (cs[1] - 0.3).abs() < 1e-15);
}

#[test]
fn shape_centroid_matches_scalar_loop() {
    let template = test_template();
    let shape = template.as_shape();
    let c = shape.centroid();
    let mut acc = [0.0, 0.0];
    for p in &template.points {
        acc[0] += p[0];
        acc[1] += p[1];
    }
    let n = template.points.len() as f64;
    assert!((c[0] - acc[0] / n).abs() < 1e-15);
    assert!((c[1] - acc[1] / n).abs() < 1e-15);
}

#[test]
fn appd_zero_for_identical_and_exact_for_shift() {
    let template = test_template();
    let shape = template.as_shape();
    let grid = PixelGrid { side: 128, spacing_mm: 0.68 };

    let same = appd(&shape, &shape, grid).unwrap();
    assert_eq!(same.whole, 0.0);
    assert!(same.per_object.iter().all(|(_, v)| *v == 0.0));

    // one pixel along x: every per-object score equals the pixel spacing
    let one_px = grid.px_to_norm(1.0);
    let shifted = shape.translated([one_px, 0.0]);
    let scores = appd(&shape, &shifted, grid).unwrap();
    for (name, v) in &scores.per_object {
        assert!((v - 0.68).abs() < 1e-12, "{name}: {v}");
    }
    assert!((scores.whole - 0.68).abs() < 1e-12);
}

#[test]
fn appd_matches_loop_oracle_on_random_perturbation() {
    let template = test_template();
    let shape = template.as_shape();
    let grid = PixelGrid { side: 128, spacing_mm: 0.68 };
    let mut rng = rng::seeded(60);
    let perturbed = Shape::new(
        Arc::clone(&template),
        shape
            .points
            .iter()
            .map(|p| [p[0] + rng.gen_range(-0.01..0.01), p[1] + rng.gen_range(-0.01..0.01)])
            .collect(),
    )
    .unwrap();
    let scores = appd(&shape, &perturbed, grid).unwrap();
    for (k, obj) in template.objects.iter().enumerate() {
        let mut acc = 0.0;
        for &i in &obj.indices {
            let dx = shape.points[i][0] - perturbed.points[i][0];
            let dy = shape.points[i][1] - perturbed.points[i][1];
            acc += (dx * dx + dy * dy).sqrt();
        }
        let expect = grid.norm_to_mm(acc / obj.indices.len() as f64);
        assert!((scores.per_object[k].1 - expect).abs() < 1e-12);
    }
}

#[test]
fn appd_rejects_mismatched_templates() {
    let a = test_template().as_shape();
    let mut other = (*test_template()).clone();
    other.objects[0].indices.rotate_left(1);
    let b = Arc::new(other).as_shape();
    assert!(matches!(
        appd(&a, &b, PixelGrid { side: 128, spacing_mm: 1.0 }),
        Err(GeometryError::TemplateMismatch)
    ));
}

#[test]
fn rasterize_axis_aligned_rectangle_exact_count() {
    // [-0.5, 0.5) x [-0.25, 0.25) on a 64-grid: 32 x 16 pixel centers
    let rect = [[-0.5, -0.25], [0.5, -0.25], [0.5, 0.25], [-0.5, 0.25]];
    let mask = rasterize_polygon(&rect, 64, 64).unwrap();
    assert_eq!(mask.iter().filter(|v| **v).count(), 32 * 16);
}

#[test]
fn rasterize_outside_grid_is_empty() {
    let rect = [[2.0, 2.0], [3.0, 2.0], [3.0, 3.0], [2.0, 3.0]];
    let mask = rasterize_polygon(&rect, 32, 32).unwrap();
    assert!(mask.iter().all(|v| !*v));
}

#[test]
fn rasterize_rejects_self_intersection() {
    let bowtie = [[-0.5, -0.5], [0.5, 0.5], [0.5, -0.5], [-0.5, 0.5]];
    assert!(matches!(
        rasterize_polygon(&bowtie, 32, 32),
        Err(GeometryError::SelfIntersecting { .. })
    ));
}

#[test]
fn rasterized_area_tracks_shoelace_area() {
    let mut rng = rng::seeded(61);
    let side = 256;
    for _ in 0..20 {
        // random convex polygon: ellipse boundary at sorted angles
        let (a, b) = (rng.gen_range(0.2..0.7), rng.gen_range(0.2..0.7));
        let rot: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut angles: Vec<f64> =
            (0..12).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(|l, r| l.partial_cmp(r).unwrap());
        angles.dedup_by(|x, y| (*x - *y).abs() < 1e-3);
        if angles.len() < 5 {
            continue;
        }
        let points: Vec<Point> = angles
            .iter()
            .map(|t| {
                let (x, y) = (a * t.cos(), b * t.sin());
                [x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos()]
            })
            .collect();
        let mask = rasterize_polygon(&points, side, side).unwrap();
        let px_area = mask.iter().filter(|v| **v).count() as f64;
        let px_per_unit = side as f64 / 2.0;
        let shoelace_px = poly::signed_area(&points).abs() * px_per_unit * px_per_unit;
        let perimeter_px = poly::polygon_perimeter(&points) * px_per_unit;
        assert!(
            (px_area - shoelace_px).abs() <= 2.0 * perimeter_px,
            "area {px_area} vs shoelace {shoelace_px}, perimeter {perimeter_px}"
        );
    }
}

#[test]
fn dice_identical_disjoint_and_half() {
    let template = test_template();
    let shape = template.as_shape();
    let same = dice(&shape, &shape, 128).unwrap();
    assert!(same.per_object.iter().all(|(_, v)| *v == 1.0));
    assert_eq!(same.whole, 1.0);

    let far = shape.translated([1.5, 0.0]);
    let gone = dice(&shape, &far, 128).unwrap();
    assert_eq!(gone.whole, 0.0);

    // unit square vs its half: 2 * (1/2) / (1 + 1/2) = 2/3, exact on an
    // aligned grid
    let square = [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]];
    let half = [[-0.5, -0.5], [0.0, -0.5], [0.0, 0.5], [-0.5, 0.5]];
    let ma = rasterize_polygon(&square, 256, 256).unwrap();
    let mb = rasterize_polygon(&half, 256, 256).unwrap();
    let d = mask_dice(&ma, &mb);
    assert!((d - 2.0 / 3.0).abs() < 0.02, "half overlap dice {d}");
}

#[test]
fn template_masks_are_pairwise_disjoint() {
    let template = test_template();
    let side = 128;
    let masks: Vec<Vec<bool>> = (0..template.objects.len())
        .map(|k| rasterize_polygon(&template.object_points(&template.points, k), side, side).unwrap())
        .collect();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            assert!(
                masks[i].iter().zip(&masks[j]).all(|(a, b)| !(*a && *b)),
                "objects {i} and {j} overlap"
            );
        }
    }
}

#[test]
fn warp_magnitude_zero_is_identity() {
    let template = test_template();
    let warped = template.nonlinear_warp(9, 0.0).unwrap();
    assert_eq!(warped.points, template.points);
}

#[test]
fn warp_preserves_topology_and_bounds_displacement() {
    let template = test_template();
    let magnitude = 0.05;
    for seed in 0..10 {
        let warped = template.nonlinear_warp(seed, magnitude).unwrap();
        assert!(template.same_topology(&warped));
        warped.check_polygons(&warped.points).unwrap();
        // sinusoidal part <= magnitude; affine adds rotation/scale/shift of
        // comparable order around the centroid (|rel| < ~1.1 here)
        let bound = magnitude + magnitude * (1.0 + 1.2 + 1.2) + 1e-9;
        for (p, q) in template.points.iter().zip(&warped.points) {
            let d = poly::dist(*p, *q);
            assert!(d <= bound, "seed {seed}: displacement {d} > {bound}");
        }
    }
}

#[test]
fn random_shift_zero_radius_is_identity() {
    let template = test_template();
    let grid = PixelGrid { side: 128, spacing_mm: 0.68 };
    let shifted = template.random_shift_in_circle(0.0, grid, 1);
    assert_eq!(shifted.points, template.points);
}

#[test]
fn random_shift_disk_statistics() {
    // uniform in a disk of radius R: E|r| = 2R/3, max <= R
    let mut rng = rng::seeded(62);
    let radius = 40.0;
    let n = 10_000;
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for _ in 0..n {
        let p = sample_in_disk(radius, &mut rng);
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        sum += r;
        max = max.max(r);
    }
    let mean = sum / n as f64;
    assert!(max <= radius);
    assert!((mean - 2.0 * radius / 3.0).abs() < 0.5, "mean {mean}");
}

#[test]
fn random_shift_is_rigid() {
    let template = test_template();
    let grid = PixelGrid { side: 128, spacing_mm: 0.68 };
    let shifted = template.random_shift_in_circle(25.0, grid, 7);
    for i in (0..template.points.len()).step_by(7) {
        for j in (i + 1..template.points.len()).step_by(11) {
            let before = poly::dist(template.points[i], template.points[j]);
            let after = poly::dist(shifted.points[i], shifted.points[j]);
            assert!((before - after).abs() < 1e-12);
        }
    }
}

#[test]
fn clip_halfplane_splits_square() {
    let square = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    // vertical line x = 0.25 pointing +y: orient >= 0 keeps x <= 0.25
    let clipped = poly::clip_halfplane(&square, [0.25, 0.0], [0.25, 1.0]);
    let area = poly::signed_area(&clipped).abs();
    assert!((area - 0.25).abs() < 1e-12, "area {area}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn appd_translation_equals_shift(dx in -0.3f64..0.3, dy in -0.3f64..0.3) {
        let template = test_template();
        let shape = template.as_shape();
        let grid = PixelGrid { side: 128, spacing_mm: 0.68 };
        let moved = shape.translated([dx, dy]);
        let scores = appd(&shape, &moved, grid).unwrap();
        let expect = grid.norm_to_mm((dx * dx + dy * dy).sqrt());
        prop_assert!((scores.whole - expect).abs() < 1e-9);
        // symmetry
        let back = appd(&moved, &shape, grid).unwrap();
        prop_assert!((scores.whole - back.whole).abs() < 1e-12);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(dx in -0.2f64..0.2, dy in -0.05f64..0.05) {
        let template = test_template();
        let shape = template.as_shape();
        let moved = shape.translated([dx, dy]);
        let ab = dice(&shape, &moved, 96).unwrap();
        let ba = dice(&moved, &shape, 96).unwrap();
        prop_assert!((ab.whole - ba.whole).abs() < 1e-12);
        for (_, v) in &ab.per_object {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}
