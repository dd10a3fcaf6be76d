//! Named central-difference checks for every differentiable operation.
//!
//! The same suite backs the unit tests and the `gradcheck` CLI command.
//! Each case perturbs one input tensor of a small random instance and
//! reports the worst relative error across coordinates and trials.

use rand::Rng;

use crate::rng::{self, SeededRng};
use crate::tensor::{grad_check, Result, Tensor, DEFAULT_STEP};

#[derive(Debug, Clone)]
pub struct CheckCase {
    pub name: String,
    pub max_rel_error: f64,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Values bounded away from zero, random sign per element.
fn away_from_zero(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn run_case(
    name: &str,
    trials: usize,
    seed: u64,
    build: impl Fn(&mut SeededRng) -> Result<(Tensor, Box<dyn Fn(&Tensor) -> Result<Tensor>>)>,
) -> CheckCase {
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut rng = rng::derive(seed, trial as u64);
        let (point, f) = build(&mut rng).expect("case construction");
        point.set_requires_grad(true);
        let err = grad_check(|t| f(t), &point, DEFAULT_STEP).expect("grad check run");
        worst = worst.max(err);
    }
    CheckCase { name: name.to_string(), max_rel_error: worst }
}

/// Weighted-sum readout so the output gradient is non-uniform.
fn readout(out: &Tensor, w: &Tensor) -> Result<Tensor> {
    out.mul(w)?.sum()
}

pub fn op_suite(trials: usize) -> Vec<CheckCase> {
    let mut cases = Vec::new();

    cases.push(run_case("add_broadcast", trials, 101, |rng| {
        let x = uniform(&[3, 4], -1.0, 1.0, rng);
        let b = uniform(&[1, 4], -1.0, 1.0, rng);
        let w = uniform(&[3, 4], -1.0, 1.0, rng);
        Ok((b, Box::new(move |t| readout(&x.add(t)?, &w))))
    }));
    cases.push(run_case("sub", trials, 102, |rng| {
        let x = uniform(&[3, 4], -1.0, 1.0, rng);
        let y = uniform(&[3, 4], -1.0, 1.0, rng);
        let w = uniform(&[3, 4], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.sub(&y)?, &w))))
    }));
    cases.push(run_case("mul", trials, 103, |rng| {
        let x = uniform(&[3, 4], -1.0, 1.0, rng);
        let y = uniform(&[3, 4], -1.0, 1.0, rng);
        let w = uniform(&[3, 4], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.mul(&y)?, &w))))
    }));
    cases.push(run_case("div", trials, 104, |rng| {
        let x = uniform(&[3, 4], -1.0, 1.0, rng);
        let y = away_from_zero(&[3, 4], 0.5, 2.0, rng);
        let w = uniform(&[3, 4], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.div(&y)?, &w))))
    }));
    cases.push(run_case("div_denominator", trials, 105, |rng| {
        let x = uniform(&[3, 4], -1.0, 1.0, rng);
        let y = away_from_zero(&[3, 4], 0.5, 2.0, rng);
        let w = uniform(&[3, 4], -1.0, 1.0, rng);
        Ok((y, Box::new(move |t| readout(&x.div(t)?, &w))))
    }));
    cases.push(run_case("scale_add_scalar_neg", trials, 106, |rng| {
        let x = uniform(&[5], -1.0, 1.0, rng);
        let w = uniform(&[5], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.scale(1.7)?.add_scalar(-0.3)?.neg()?, &w))))
    }));

    cases.push(run_case("sin", trials, 107, |rng| {
        let x = uniform(&[6], -3.0, 3.0, rng);
        let w = uniform(&[6], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.sin()?, &w))))
    }));
    cases.push(run_case("cos", trials, 108, |rng| {
        let x = uniform(&[6], -3.0, 3.0, rng);
        let w = uniform(&[6], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.cos()?, &w))))
    }));
    cases.push(run_case("exp", trials, 109, |rng| {
        let x = uniform(&[6], -2.0, 2.0, rng);
        let w = uniform(&[6], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.exp()?, &w))))
    }));
    cases.push(run_case("log", trials, 110, |rng| {
        let x = uniform(&[6], 0.5, 3.0, rng);
        let w = uniform(&[6], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.log()?, &w))))
    }));
    cases.push(run_case("sqrt", trials, 111, |rng| {
        let x = uniform(&[6], 0.25, 4.0, rng);
        let w = uniform(&[6], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.sqrt()?, &w))))
    }));
    cases.push(run_case("relu", trials, 112, |rng| {
        let x = away_from_zero(&[8], 0.1, 2.0, rng);
        let w = uniform(&[8], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.relu()?, &w))))
    }));
    cases.push(run_case("softplus", trials, 113, |rng| {
        let x = uniform(&[8], -4.0, 4.0, rng);
        let w = uniform(&[8], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.softplus()?, &w))))
    }));

    cases.push(run_case("matmul_lhs", trials, 114, |rng| {
        let a = uniform(&[3, 4], -1.0, 1.0, rng);
        let b = uniform(&[4, 2], -1.0, 1.0, rng);
        let w = uniform(&[3, 2], -1.0, 1.0, rng);
        Ok((a, Box::new(move |t| readout(&t.matmul(&b)?, &w))))
    }));
    cases.push(run_case("matmul_rhs", trials, 115, |rng| {
        let a = uniform(&[3, 4], -1.0, 1.0, rng);
        let b = uniform(&[4, 2], -1.0, 1.0, rng);
        let w = uniform(&[3, 2], -1.0, 1.0, rng);
        Ok((b, Box::new(move |t| readout(&a.matmul(t)?, &w))))
    }));
    cases.push(run_case("transpose", trials, 116, |rng| {
        let x = uniform(&[3, 5], -1.0, 1.0, rng);
        let w = uniform(&[5, 3], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.t()?, &w))))
    }));
    cases.push(run_case("reshape", trials, 117, |rng| {
        let x = uniform(&[2, 6], -1.0, 1.0, rng);
        let w = uniform(&[3, 4], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.reshape(&[3, 4])?, &w))))
    }));
    cases.push(run_case("concat_slice", trials, 118, |rng| {
        let x = uniform(&[2, 3], -1.0, 1.0, rng);
        let y = uniform(&[2, 2], -1.0, 1.0, rng);
        let w = uniform(&[2, 2], -1.0, 1.0, rng);
        Ok((
            x,
            Box::new(move |t| {
                let cat = Tensor::concat(&[t.clone(), y.clone()], 1)?;
                readout(&cat.slice(1, 1, 3)?, &w)
            }),
        ))
    }));

    cases.push(run_case("sum_mean", trials, 119, |rng| {
        let x = uniform(&[3, 3], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| t.sum()?.add(&t.mean()?))))
    }));
    cases.push(run_case("sum_axis", trials, 120, |rng| {
        let x = uniform(&[3, 4], -1.0, 1.0, rng);
        let w = uniform(&[3, 1], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.sum_axis(1)?, &w))))
    }));
    cases.push(run_case("softmax_rows", trials, 121, |rng| {
        let x = uniform(&[4, 5], -2.0, 2.0, rng);
        let w = uniform(&[4, 5], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.softmax_rows()?, &w))))
    }));
    cases.push(run_case("log_softmax_rows", trials, 122, |rng| {
        let x = uniform(&[4, 5], -2.0, 2.0, rng);
        let w = uniform(&[4, 5], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.log_softmax_rows()?, &w))))
    }));

    cases.push(run_case("conv2d_input", trials, 123, |rng| {
        let x = uniform(&[2, 6, 6], -1.0, 1.0, rng);
        let w = uniform(&[3, 2, 3, 3], -0.5, 0.5, rng);
        let b = uniform(&[3], -0.5, 0.5, rng);
        let r = uniform(&[3, 6, 6], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.conv2d(&w, &b, 1, 1)?, &r))))
    }));
    cases.push(run_case("conv2d_weight", trials, 124, |rng| {
        let x = uniform(&[2, 6, 6], -1.0, 1.0, rng);
        let w = uniform(&[3, 2, 3, 3], -0.5, 0.5, rng);
        let b = uniform(&[3], -0.5, 0.5, rng);
        let r = uniform(&[3, 3, 3], -1.0, 1.0, rng);
        Ok((w, Box::new(move |t| readout(&x.conv2d(t, &b, 2, 1)?, &r))))
    }));
    cases.push(run_case("conv2d_bias", trials, 125, |rng| {
        let x = uniform(&[1, 4, 4], -1.0, 1.0, rng);
        let w = uniform(&[2, 1, 3, 3], -0.5, 0.5, rng);
        let b = uniform(&[2], -0.5, 0.5, rng);
        let r = uniform(&[2, 4, 4], -1.0, 1.0, rng);
        Ok((b, Box::new(move |t| readout(&x.conv2d(&w, t, 1, 1)?, &r))))
    }));
    cases.push(run_case("maxpool2d", trials, 126, |rng| {
        let x = uniform(&[2, 4, 4], -1.0, 1.0, rng);
        let r = uniform(&[2, 2, 2], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.maxpool2d(2)?, &r))))
    }));
    cases.push(run_case("upsample_nearest", trials, 127, |rng| {
        let x = uniform(&[2, 3, 3], -1.0, 1.0, rng);
        let r = uniform(&[2, 6, 6], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.upsample_nearest(2)?, &r))))
    }));
    cases.push(run_case("extract_patches", trials, 128, |rng| {
        let x = uniform(&[2, 4, 4], -1.0, 1.0, rng);
        let r = uniform(&[4, 8], -1.0, 1.0, rng);
        Ok((x, Box::new(move |t| readout(&t.extract_patches(2)?, &r))))
    }));
    cases.push(run_case("bilinear_sample_map", trials, 129, |rng| {
        let fm = uniform(&[3, 5, 5], -1.0, 1.0, rng);
        let pts = uniform(&[4, 2], -0.6, 0.6, rng);
        let r = uniform(&[4, 3], -1.0, 1.0, rng);
        Ok((fm, Box::new(move |t| readout(&t.bilinear_sample(&pts)?, &r))))
    }));
    cases.push(run_case("bilinear_sample_points", trials, 130, |rng| {
        let fm = uniform(&[3, 5, 5], -1.0, 1.0, rng);
        // keep sample points inside grid cells, away from cell boundaries
        let n = 4;
        let mut pts = Vec::with_capacity(n * 2);
        for _ in 0..n {
            for extent in [5usize, 5] {
                let cell = rng.gen_range(0..extent - 1) as f64;
                let frac = rng.gen_range(0.2..0.8);
                let cont = cell + frac; // continuous pixel coordinate
                pts.push((cont + 0.5) * 2.0 / extent as f64 - 1.0);
            }
        }
        let pts = Tensor::from_vec(&[n, 2], pts).unwrap();
        let r = uniform(&[n, 3], -1.0, 1.0, rng);
        Ok((pts, Box::new(move |t| readout(&fm.bilinear_sample(t)?, &r))))
    }));

    cases
}
