//! CNN feature extraction, patch tokenization and point sampling.
//!
//! Images are single-channel `(1,S,S)` tensors with intensities in
//! `[0,1]`. Feature maps follow the pixel-center coordinate convention of
//! the tensor spatial ops: the grid spans `[-1,1]^2`, x rightward, y
//! downward.

use rand::Rng;

use crate::attention::TokenSet;
use crate::nn::{sinusoidal_embed, Linear, ParamList};
use crate::rng::SeededRng;
use crate::tensor::{pixel_center_x, pixel_center_y, Result, Tensor, TensorError};

/// He-initialized conv layer.
pub struct Conv2dLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut SeededRng) -> Self {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let w = Tensor::randn(&[c_out, c_in, k, k], std, rng);
        w.set_requires_grad(true);
        Conv2dLayer {
            w,
            b: Tensor::param(&[c_out], vec![0.0; c_out]).unwrap(),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.w, &self.b, self.stride, self.pad)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

fn expect_square_image(op: &'static str, image: &Tensor) -> Result<usize> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || s[1] != s[2] {
        return Err(TensorError::InvalidArg {
            op,
            msg: format!("expected square (1,S,S) image, got {:?}", s),
        });
    }
    let side = s[1];
    if !side.is_power_of_two() || side < 8 {
        return Err(TensorError::InvalidArg {
            op,
            msg: format!("image side {} must be a power of two >= 8", side),
        });
    }
    Ok(side)
}

/// Two conv groups extracting features at full and quarter resolution.
pub struct Backbone {
    pub high: Vec<Conv2dLayer>,
    pub low: Vec<Conv2dLayer>,
}

impl Backbone {
    pub fn new(high_channels: usize, low_channels: usize, rng: &mut SeededRng) -> Self {
        Backbone {
            high: vec![
                Conv2dLayer::new(1, high_channels, 3, 1, 1, rng),
                Conv2dLayer::new(high_channels, high_channels, 3, 1, 1, rng),
            ],
            low: vec![
                Conv2dLayer::new(high_channels, low_channels, 3, 2, 1, rng),
                Conv2dLayer::new(low_channels, low_channels, 3, 2, 1, rng),
            ],
        }
    }

    /// Returns `(feature_high, feature_low)` at full and quarter side.
    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        expect_square_image("backbone_forward", image)?;
        let mut high = image.clone();
        for layer in &self.high {
            high = layer.forward(&high)?.relu()?;
        }
        let mut low = high.clone();
        for layer in &self.low {
            low = layer.forward(&low)?.relu()?;
        }
        Ok((high, low))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        for (i, l) in self.high.iter().enumerate() {
            l.collect_params(&format!("{prefix}.high{i}"), out);
        }
        for (i, l) in self.low.iter().enumerate() {
            l.collect_params(&format!("{prefix}.low{i}"), out);
        }
    }
}

/// 4-level encoder/decoder with skip connections and a 12-class
/// segmentation head. The default stride ladder (4,4,2) reproduces the
/// resolution ladder `S, S/4, S/16, S/32` on each side.
pub struct UNetConfig {
    pub channels: [usize; 4],
    pub strides: [usize; 3],
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { channels: [16, 32, 64, 64], strides: [4, 4, 2] }
    }
}

pub struct UNet {
    enc: Vec<Vec<Conv2dLayer>>,
    dec: Vec<Conv2dLayer>,
    seg_head: Conv2dLayer,
    pub strides: [usize; 3],
    pub channels: [usize; 4],
}

pub const SEG_CLASSES: usize = 12;

pub struct UNetOutput {
    /// Decoder feature maps ordered coarse to fine (4 scales).
    pub decoder_maps: Vec<Tensor>,
    /// Segmentation logits `(12,S,S)`; channel 0 is background, channels
    /// 1..=11 follow the fixed object order.
    pub logits: Tensor,
}

impl UNet {
    pub fn new(config: &UNetConfig, rng: &mut SeededRng) -> Self {
        let c = config.channels;
        let mut enc = Vec::new();
        let mut c_prev = 1;
        for &c_out in &c {
            enc.push(vec![
                Conv2dLayer::new(c_prev, c_out, 3, 1, 1, rng),
                Conv2dLayer::new(c_out, c_out, 3, 1, 1, rng),
            ]);
            c_prev = c_out;
        }
        // decoder level i fuses upsampled level i+1 with the skip from enc i
        let dec = vec![
            Conv2dLayer::new(c[3] + c[2], c[2], 3, 1, 1, rng),
            Conv2dLayer::new(c[2] + c[1], c[1], 3, 1, 1, rng),
            Conv2dLayer::new(c[1] + c[0], c[0], 3, 1, 1, rng),
        ];
        let seg_head = Conv2dLayer::new(c[0], SEG_CLASSES, 1, 1, 0, rng);
        UNet { enc, dec, seg_head, strides: config.strides, channels: c }
    }

    pub fn forward(&self, image: &Tensor) -> Result<UNetOutput> {
        let side = expect_square_image("unet_forward", image)?;
        let total: usize = self.strides.iter().product();
        if side % total != 0 {
            return Err(TensorError::InvalidArg {
                op: "unet_forward",
                msg: format!("side {} not divisible by stride ladder {:?}", side, self.strides),
            });
        }

        let mut skips = Vec::new();
        let mut x = image.clone();
        for (level, block) in self.enc.iter().enumerate() {
            if level > 0 {
                x = x.maxpool2d(self.strides[level - 1])?;
            }
            for layer in block {
                x = layer.forward(&x)?.relu()?;
            }
            skips.push(x.clone());
        }

        let mut decoder_maps = vec![skips[3].clone()];
        let mut up = skips[3].clone();
        for (i, dec) in self.dec.iter().enumerate() {
            let level = 2 - i; // skip level being fused
            up = up.upsample_nearest(self.strides[level])?;
            let fused = Tensor::concat(&[up.clone(), skips[level].clone()], 0)?;
            up = dec.forward(&fused)?.relu()?;
            decoder_maps.push(up.clone());
        }
        let logits = self.seg_head.forward(&up)?;
        Ok(UNetOutput { decoder_maps, logits })
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        for (i, block) in self.enc.iter().enumerate() {
            for (j, l) in block.iter().enumerate() {
                l.collect_params(&format!("{prefix}.enc{i}_{j}"), out);
            }
        }
        for (i, l) in self.dec.iter().enumerate() {
            l.collect_params(&format!("{prefix}.dec{i}"), out);
        }
        self.seg_head.collect_params(&format!("{prefix}.seg_head"), out);
    }

    /// Freeze or unfreeze every backbone parameter.
    pub fn set_frozen(&self, frozen: bool) {
        let mut params = Vec::new();
        self.collect_params("unet", &mut params);
        for (_, t) in params {
            t.set_requires_grad(!frozen);
        }
    }
}

/// Normalized patch-center positions for an `(h,w)` map cut into `P x P`
/// patches, row-major over the patch grid.
pub fn patch_positions(h: usize, w: usize, p: usize) -> Tensor {
    let (gh, gw) = (h / p, w / p);
    let mut data = Vec::with_capacity(gh * gw * 2);
    for gy in 0..gh {
        for gx in 0..gw {
            data.push(-1.0 + (gx * p) as f64 * 2.0 / w as f64 + p as f64 / w as f64);
            data.push(-1.0 + (gy * p) as f64 * 2.0 / h as f64 + p as f64 / h as f64);
        }
    }
    Tensor::from_vec(&[gh * gw, 2], data).unwrap()
}

/// Learned linear embedding of flattened image patches into tokens whose
/// positions are the patch centers.
pub struct PatchEmbed {
    pub patch: usize,
    pub linear: Linear,
}

impl PatchEmbed {
    pub fn new(channels: usize, patch: usize, embed_dim: usize, rng: &mut SeededRng) -> Self {
        PatchEmbed { patch, linear: Linear::new(channels * patch * patch, embed_dim, rng) }
    }

    pub fn forward(&self, fm: &Tensor) -> Result<TokenSet> {
        let s = fm.shape();
        let raw = fm.extract_patches(self.patch)?;
        let features = self.linear.forward(&raw)?;
        TokenSet::new(features, patch_positions(s[1], s[2], self.patch))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.linear.collect_params(&format!("{prefix}.linear"), out);
    }
}

pub const POSITION_EMBED_FREQS: usize = 4;

/// Bilinear features at each point combined with a sinusoidal embedding of
/// the point coordinates, projected to the embedding dimension. Token
/// positions are the sample points themselves.
pub struct SampleEmbed {
    pub linear: Linear,
}

impl SampleEmbed {
    pub fn new(channels: usize, embed_dim: usize, rng: &mut SeededRng) -> Self {
        SampleEmbed {
            linear: Linear::new(channels + 4 * POSITION_EMBED_FREQS, embed_dim, rng),
        }
    }

    pub fn forward(&self, fm: &Tensor, points: &Tensor) -> Result<TokenSet> {
        let sampled = fm.bilinear_sample(points)?;
        let pe = sinusoidal_embed(points, POSITION_EMBED_FREQS)?;
        let features = self.linear.forward(&Tensor::concat(&[sampled, pe], 1)?)?;
        TokenSet::new(features, points.clone())
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.linear.collect_params(&format!("{prefix}.linear"), out);
    }
}

/// Image intensities as a `(1,S,S)` tensor.
pub fn image_tensor(side: usize, intensities: &[f64]) -> Result<Tensor> {
    Tensor::from_vec(&[1, side, side], intensities.to_vec())
}

/// Deterministic pixel-center coordinate of a pixel, exposed for tests.
pub fn pixel_center(row: usize, col: usize, side: usize) -> [f64; 2] {
    [pixel_center_x(col, side), pixel_center_y(row, side)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{grad_check, DEFAULT_STEP};

    #[test]
    fn backbone_output_resolutions() {
        let mut rng = rng::seeded(70);
        let bb = Backbone::new(4, 6, &mut rng);
        let image = Tensor::zeros(&[1, 128, 128]);
        let (high, low) = bb.forward(&image).unwrap();
        assert_eq!(high.shape(), vec![4, 128, 128]);
        assert_eq!(low.shape(), vec![6, 32, 32]);
    }

    #[test]
    fn backbone_zero_image_zero_bias_gives_zero_maps() {
        let mut rng = rng::seeded(71);
        let bb = Backbone::new(3, 3, &mut rng);
        let image = Tensor::zeros(&[1, 16, 16]);
        let (high, low) = bb.forward(&image).unwrap();
        assert!(high.data().iter().all(|&v| v == 0.0));
        assert!(low.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backbone_rejects_non_square() {
        let mut rng = rng::seeded(72);
        let bb = Backbone::new(2, 2, &mut rng);
        assert!(bb.forward(&Tensor::zeros(&[1, 16, 32])).is_err());
        assert!(bb.forward(&Tensor::zeros(&[1, 24, 24])).is_err());
    }

    #[test]
    fn backbone_grad_check_small_image() {
        let mut rng = rng::seeded(73);
        let bb = Backbone::new(2, 2, &mut rng);
        let image = Tensor::rand_uniform(&[1, 8, 8], 0.0, 1.0, &mut rng);
        image.set_requires_grad(true);
        let r = Tensor::rand_uniform(&[2, 2, 2], -1.0, 1.0, &mut rng);
        let err = grad_check(
            |img| {
                let (_, low) = bb.forward(img)?;
                low.mul(&r)?.sum()
            },
            &image,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-4, "error {err}");
    }

    #[test]
    fn unet_resolution_ladder() {
        let mut rng = rng::seeded(74);
        let unet = UNet::new(
            &UNetConfig { channels: [2, 3, 4, 4], strides: [4, 4, 2] },
            &mut rng,
        );
        let out = unet.forward(&Tensor::zeros(&[1, 128, 128])).unwrap();
        let sides: Vec<usize> = out.decoder_maps.iter().map(|m| m.shape()[1]).collect();
        assert_eq!(sides, vec![4, 8, 32, 128]);
        assert_eq!(out.logits.shape(), vec![SEG_CLASSES, 128, 128]);
    }

    #[test]
    fn unet_softmax_sums_to_one_per_pixel() {
        let mut rng = rng::seeded(75);
        let unet = UNet::new(
            &UNetConfig { channels: [2, 2, 2, 2], strides: [2, 2, 2] },
            &mut rng,
        );
        let img = Tensor::rand_uniform(&[1, 16, 16], 0.0, 1.0, &mut rng);
        let out = unet.forward(&img).unwrap();
        let probs = out
            .logits
            .reshape(&[SEG_CLASSES, 16 * 16])
            .unwrap()
            .t()
            .unwrap()
            .softmax_rows()
            .unwrap()
            .data();
        for px in probs.chunks(SEG_CLASSES) {
            let s: f64 = px.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unet_freeze_unfreeze() {
        let mut rng = rng::seeded(76);
        let unet = UNet::new(
            &UNetConfig { channels: [2, 2, 2, 2], strides: [2, 2, 2] },
            &mut rng,
        );
        unet.set_frozen(true);
        let mut params = Vec::new();
        unet.collect_params("unet", &mut params);
        assert!(params.iter().all(|(_, t)| !t.requires_grad()));
        unet.set_frozen(false);
        assert!(params.iter().all(|(_, t)| t.requires_grad()));
    }

    #[test]
    fn patchify_full_side_single_token_at_origin() {
        let mut rng = rng::seeded(77);
        let pe = PatchEmbed::new(2, 8, 4, &mut rng);
        let fm = Tensor::rand_uniform(&[2, 8, 8], -1.0, 1.0, &mut rng);
        let tokens = pe.forward(&fm).unwrap();
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens.positions.data(), vec![0.0, 0.0]);
    }

    #[test]
    fn patchify_grid_centers() {
        let mut rng = rng::seeded(78);
        let pe = PatchEmbed::new(1, 4, 4, &mut rng);
        let fm = Tensor::rand_uniform(&[1, 8, 8], -1.0, 1.0, &mut rng);
        let tokens = pe.forward(&fm).unwrap();
        assert_eq!(tokens.len(), 4);
        assert_eq!(
            tokens.positions.data(),
            vec![-0.5, -0.5, 0.5, -0.5, -0.5, 0.5, 0.5, 0.5]
        );
        // uniform grid spacing 2P/H
        let pos = patch_positions(16, 16, 4).data();
        for k in 1..4usize {
            assert!((pos[k * 2] - pos[(k - 1) * 2] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn patchify_token_count() {
        let mut rng = rng::seeded(79);
        for (side, p) in [(16usize, 2usize), (16, 4), (32, 8)] {
            let pe = PatchEmbed::new(1, p, 4, &mut rng);
            let fm = Tensor::zeros(&[1, side, side]);
            let tokens = pe.forward(&fm).unwrap();
            assert_eq!(tokens.len(), (side / p) * (side / p));
        }
    }

    /// With a square invertible embedding, applying the inverse matrix
    /// recovers the raw patch values.
    #[test]
    fn patchify_invertible_embedding_round_trip() {
        let mut rng = rng::seeded(80);
        let p = 2usize;
        let dim = p * p; // 1 channel
        let pe = PatchEmbed::new(1, p, dim, &mut rng);
        pe.linear.b.set_data(&vec![0.0; dim]);
        // make the weight strongly diagonally dominant, hence invertible
        let mut w = pe.linear.w.data();
        for i in 0..dim {
            w[i * dim + i] += 3.0;
        }
        pe.linear.w.set_data(&w);

        let fm = Tensor::rand_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let tokens = pe.forward(&fm).unwrap().features.data();
        let raw = fm.extract_patches(p).unwrap().data();

        let inv = invert(&w, dim);
        for t in 0..4 {
            for c in 0..dim {
                let mut acc = 0.0;
                for k in 0..dim {
                    acc += tokens[t * dim + k] * inv[k * dim + c];
                }
                assert!((acc - raw[t * dim + c]).abs() < 1e-9);
            }
        }
    }

    fn invert(m: &[f64], n: usize) -> Vec<f64> {
        let mut a = m.to_vec();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if a[r * n + col].abs() > a[pivot * n + col].abs() {
                    pivot = r;
                }
            }
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
                inv.swap(col * n + k, pivot * n + k);
            }
            let d = a[col * n + col];
            for k in 0..n {
                a[col * n + k] /= d;
                inv[col * n + k] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r * n + col];
                    for k in 0..n {
                        a[r * n + k] -= f * a[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn sample_embed_identical_points_identical_tokens() {
        let mut rng = rng::seeded(81);
        let se = SampleEmbed::new(3, 8, &mut rng);
        let fm = Tensor::rand_uniform(&[3, 8, 8], -1.0, 1.0, &mut rng);
        let pts = Tensor::from_vec(&[2, 2], vec![0.21, -0.4, 0.21, -0.4]).unwrap();
        let tokens = se.forward(&fm, &pts).unwrap().features.data();
        assert_eq!(&tokens[..8], &tokens[8..]);
    }

    #[test]
    fn sample_embed_zero_map_depends_only_on_position() {
        let mut rng = rng::seeded(82);
        let se = SampleEmbed::new(3, 8, &mut rng);
        let zero_fm = Tensor::zeros(&[3, 8, 8]);
        let other_fm = Tensor::zeros(&[3, 16, 16]);
        let pts = Tensor::from_vec(&[1, 2], vec![0.3, 0.3]).unwrap();
        let a = se.forward(&zero_fm, &pts).unwrap().features.data();
        let b = se.forward(&other_fm, &pts).unwrap().features.data();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_embed_matches_loop_oracle() {
        let mut rng = rng::seeded(83);
        let (c, e, n) = (2usize, 6usize, 5usize);
        let se = SampleEmbed::new(c, e, &mut rng);
        let fm = Tensor::rand_uniform(&[c, 8, 8], -1.0, 1.0, &mut rng);
        let pts = Tensor::rand_uniform(&[n, 2], -0.7, 0.7, &mut rng);
        let got = se.forward(&fm, &pts).unwrap().features.data();

        let sampled = fm.bilinear_sample(&pts).unwrap().data();
        let pd = pts.data();
        let w = se.linear.w.data();
        let b = se.linear.b.data();
        let in_dim = c + 4 * POSITION_EMBED_FREQS;
        for i in 0..n {
            // feature vector: samples then interleaved sin/cos embedding
            let mut feat = Vec::with_capacity(in_dim);
            feat.extend_from_slice(&sampled[i * c..(i + 1) * c]);
            for k in 0..POSITION_EMBED_FREQS {
                let omega = std::f64::consts::PI * (1 << k) as f64 / 2.0;
                for coord in [pd[i * 2], pd[i * 2 + 1]] {
                    feat.push((omega * coord).sin());
                    feat.push((omega * coord).cos());
                }
            }
            for o in 0..e {
                let mut acc = b[o];
                for (k, &fv) in feat.iter().enumerate() {
                    acc += fv * w[k * e + o];
                }
                assert!((got[i * e + o] - acc).abs() < 1e-12);
            }
        }
    }
}
