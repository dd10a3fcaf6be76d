use super::*;
use crate::rng;
use rand::Rng;

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {}: {} vs {}", i, x, y);
    }
}

#[test]
fn matmul_identity_returns_operand() {
    let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let a = Tensor::from_vec(&[2, 2], vec![3.0, -1.5, 0.25, 7.0]).unwrap();
    let out = eye.matmul(&a).unwrap();
    assert_close(&out.data(), &a.data(), 0.0);
}

#[test]
fn matmul_rejects_mismatched_shapes() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 3]);
    match a.matmul(&b) {
        Err(TensorError::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape mismatch, got {:?}", other.map(|t| t.shape())),
    }
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let x = Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
    let y = x.softmax_rows().unwrap();
    assert_close(&y.data(), &[1.0 / 3.0; 3], 1e-15);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = rng::seeded(7);
    let x = Tensor::rand_uniform(&[6, 9], -20.0, 20.0, &mut rng);
    let y = x.softmax_rows().unwrap();
    let d = y.data();
    for r in 0..6 {
        let s: f64 = d[r * 9..(r + 1) * 9].iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "row {} sums to {}", r, s);
    }
}

#[test]
fn backward_of_sum_of_squares() {
    let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    let loss = x.mul(&x).unwrap().sum().unwrap();
    loss.backward().unwrap();
    assert_close(&x.grad().unwrap(), &[2.0, 4.0, 6.0], 1e-14);
}

#[test]
fn backward_linearity_over_losses() {
    let x = Tensor::param(&[4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
    let a = x.mul(&x).unwrap().sum().unwrap();
    let b = x.sin().unwrap().sum().unwrap();

    let joint = a.add(&b).unwrap();
    joint.backward().unwrap();
    let g_joint = x.grad().unwrap();

    x.zero_grad();
    let a2 = x.mul(&x).unwrap().sum().unwrap();
    a2.backward().unwrap();
    let b2 = x.sin().unwrap().sum().unwrap();
    b2.backward().unwrap();
    let g_split = x.grad().unwrap();

    assert_close(&g_joint, &g_split, 1e-15);
}

#[test]
fn grad_check_quadratic_is_tight() {
    let mut rng = rng::seeded(11);
    let x = Tensor::rand_uniform(&[8], -1.0, 1.0, &mut rng);
    x.set_requires_grad(true);
    let err = grad_check(|t| t.mul(t)?.sum(), &x, DEFAULT_STEP).unwrap();
    assert!(err < 1e-7, "error {}", err);
}

#[test]
fn grad_check_softmax_weighted_sum() {
    let mut rng = rng::seeded(13);
    let w = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
    let x = Tensor::rand_uniform(&[4, 5], -2.0, 2.0, &mut rng);
    x.set_requires_grad(true);
    let err = grad_check(|t| t.softmax_rows()?.mul(&w)?.sum(), &x, DEFAULT_STEP).unwrap();
    assert!(err < 1e-5, "error {}", err);
}

#[test]
fn grad_check_rejects_nonscalar() {
    let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(grad_check(|t| t.mul(t), &x, DEFAULT_STEP).is_err());
}

/// Central-difference sweep over every differentiable op at random inputs.
#[test]
fn grad_check_all_ops() {
    let cases = crate::gradcheck::op_suite(10);
    for case in &cases {
        assert!(
            case.max_rel_error < 1e-4,
            "{}: error {}",
            case.name,
            case.max_rel_error
        );
    }
}

#[test]
fn broadcasting_add_bias_row() {
    let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = Tensor::from_vec(&[1, 3], vec![10.0, 20.0, 30.0]).unwrap();
    let y = x.add(&b).unwrap();
    assert_close(&y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0], 0.0);

    let b2 = Tensor::param(&[1, 3], vec![10.0, 20.0, 30.0]).unwrap();
    let loss = x.add(&b2).unwrap().sum().unwrap();
    loss.backward().unwrap();
    assert_close(&b2.grad().unwrap(), &[2.0, 2.0, 2.0], 0.0);
}

#[test]
fn incompatible_broadcast_is_error() {
    let x = Tensor::zeros(&[2, 3]);
    let y = Tensor::zeros(&[2, 2]);
    assert!(matches!(x.add(&y), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn nonfinite_output_is_error() {
    let x = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
    assert!(matches!(x.log(), Err(TensorError::NonFinite { op: "log" })));
    let z = Tensor::from_vec(&[1], vec![0.0]).unwrap();
    let one = Tensor::from_vec(&[1], vec![1.0]).unwrap();
    assert!(matches!(one.div(&z), Err(TensorError::NonFinite { .. })));
}

#[test]
fn concat_and_slice_round_trip() {
    let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::from_vec(&[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
    let cat = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
    assert_eq!(cat.shape(), vec![2, 5]);
    assert_close(&cat.slice(1, 0, 2).unwrap().data(), &a.data(), 0.0);
    assert_close(&cat.slice(1, 2, 5).unwrap().data(), &b.data(), 0.0);
}

#[test]
fn maxpool_forward_and_grad_routing() {
    let x = Tensor::param(&[1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 1.0, 6.0]).unwrap();
    let y = x.maxpool2d(2).unwrap();
    assert_close(&y.data(), &[5.0, 6.0], 0.0);
    y.sum().unwrap().backward().unwrap();
    assert_close(&x.grad().unwrap(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 0.0);
}

#[test]
fn conv2d_known_kernel() {
    // 3x3 input, 2x2 ones kernel, stride 1, no pad: windows sum.
    let x = Tensor::from_vec(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
    let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
    let y = x.conv2d(&w, &b, 1, 0).unwrap();
    assert_eq!(y.shape(), vec![1, 2, 2]);
    assert_close(&y.data(), &[12.5, 16.5, 24.5, 28.5], 0.0);
}

#[test]
fn bilinear_sample_at_centers_and_midpoints() {
    // 2x2 single-channel map; pixel centers at (-0.5,-0.5) etc.
    let fm = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let pts = Tensor::from_vec(&[2, 2], vec![-0.5, -0.5, 0.0, 0.0]).unwrap();
    let out = fm.bilinear_sample(&pts).unwrap();
    assert_close(&out.data(), &[1.0, 2.5], 1e-15);
}

#[test]
fn bilinear_sample_exact_on_affine_field() {
    // fm(x,y) = a*x + b*y + c sampled anywhere interior is exact.
    let (h, w) = (7, 5);
    let (a, b, c) = (0.6, -1.1, 0.3);
    let mut vals = vec![0.0; h * w];
    for r in 0..h {
        for col in 0..w {
            vals[r * w + col] = a * pixel_center_x(col, w) + b * pixel_center_y(r, h) + c;
        }
    }
    let fm = Tensor::from_vec(&[1, h, w], vals).unwrap();
    let mut rng = rng::seeded(3);
    for _ in 0..50 {
        // keep strictly inside the outermost pixel centers
        let x: f64 = rng.gen_range(-0.7..0.7);
        let y: f64 = rng.gen_range(-0.7..0.7);
        let pts = Tensor::from_vec(&[1, 2], vec![x, y]).unwrap();
        let got = fm.bilinear_sample(&pts).unwrap().item();
        assert!((got - (a * x + b * y + c)).abs() < 1e-12);
    }
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let p = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    let mut opt = Adam::new(1e-4);
    opt.step(&[p.clone()]).unwrap();
    assert_close(&p.data(), &[1.0, 2.0, 3.0], 0.0);
    assert_eq!(opt.state().step, 1);
}

#[test]
fn adam_first_step_magnitude_is_lr() {
    let p = Tensor::param(&[2], vec![0.0, 0.0]).unwrap();
    let g = Tensor::from_vec(&[2], vec![3.0, -0.7]).unwrap();
    let loss = p.mul(&g).unwrap().sum().unwrap();
    loss.backward().unwrap();
    let mut opt = Adam::new(1e-4);
    opt.step(&[p.clone()]).unwrap();
    let d = p.data();
    assert!((d[0] + 1e-4).abs() < 1e-8, "step was {}", d[0]);
    assert!((d[1] - 1e-4).abs() < 1e-8, "step was {}", d[1]);
}

#[test]
fn adam_descends_quadratic_bowl() {
    let target = [0.3, -0.8, 1.2];
    let c = Tensor::from_vec(&[3], target.to_vec()).unwrap();
    let p = Tensor::param(&[3], vec![0.0, 0.0, 0.0]).unwrap();
    let mut opt = Adam::new(0.05);
    let mut dists = Vec::new();
    for _ in 0..50 {
        p.zero_grad();
        let diff = p.sub(&c).unwrap();
        let loss = diff.mul(&diff).unwrap().sum().unwrap();
        loss.backward().unwrap();
        opt.step(&[p.clone()]).unwrap();
        let d = p.data();
        let dist: f64 = d
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        dists.push(dist);
    }
    for i in 5..dists.len() {
        assert!(dists[i] < dists[i - 1], "distance rose at step {}", i);
    }
}

#[test]
fn forward_backward_rerun_is_bit_identical() {
    let run = || {
        let mut rng = rng::seeded(42);
        let x = Tensor::rand_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        x.set_requires_grad(true);
        let w = Tensor::rand_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let y = x.matmul(&w).unwrap().softmax_rows().unwrap().sum().unwrap();
        y.backward().unwrap();
        (y.item(), x.grad().unwrap())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1.to_bits(), v2.to_bits());
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
