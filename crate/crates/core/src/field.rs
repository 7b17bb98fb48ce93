//! Synthetic differentiable feature fields.
//!
//! A scene is a sum of isotropic Gaussian blobs, each carrying a unit-norm
//! channel signature, plus frozen per-scene noise:
//!
//! `F[c](x, y) = Σ_b a_b · s_b[c] · exp(-((x - x_b)² + (y - y_b)²) / (2σ_b²)) + n[c](x, y)`
//!
//! Blob profiles are exact within 3σ along each axis and taper to zero at 4σ.
//!
//! The latent code is the vector of blob centers, so "moving the content at a
//! handle point" has an exact ground truth: the center of the blob under it.

use std::path::Path;
use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DragError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Each axis of a blob profile is an exact Gaussian out to `TAPER_START`
/// sigmas, then rolls smoothly to zero at `SUPPORT_SIGMAS`. Compact support
/// gives distant blobs an exactly zero gradient; a per-coordinate optimizer
/// would otherwise blow up their `1e-10`-sized tail gradients into full steps.
const TAPER_START: f64 = 3.0;
const SUPPORT_SIGMAS: f64 = 4.0;

/// Axis profile `phi(u)` and its derivative with respect to the center
/// (`-dphi/du`).
fn axis_profile(u: f64, sigma: f64) -> (f64, f64) {
    let a = u.abs();
    let (r0, r1) = (TAPER_START * sigma, SUPPORT_SIGMAS * sigma);
    if a >= r1 {
        return (0.0, 0.0);
    }
    let g = (-u * u / (2.0 * sigma * sigma)).exp();
    let dg = g * u / (sigma * sigma);
    if a <= r0 {
        return (g, dg);
    }
    // smootherstep roll-off: C2 at both ends
    let t = (a - r0) / (r1 - r0);
    let taper = 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0);
    let dtaper_du = -30.0 * t * t * (1.0 - t) * (1.0 - t) / (r1 - r0) * u.signum();
    (g * taper, dg * taper - g * dtaper_du)
}

pub const DEFAULT_LATENT_SCALE: f64 = 100.0;

fn default_latent_scale() -> f64 {
    DEFAULT_LATENT_SCALE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    /// Unit-norm C-vector.
    pub signature: Vec<f64>,
    /// Spread in pixels, > 0.5.
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSceneSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub blobs: Vec<BlobSpec>,
    pub background_noise_seed: u64,
    /// Noise is uniform in `[-noise_amplitude, noise_amplitude]`.
    pub noise_amplitude: f64,
    /// Pixels per latent unit. The optimizer works in latent units.
    #[serde(default = "default_latent_scale")]
    pub latent_scale: f64,
}

impl BlobSceneSpec {
    /// Field-level violations, each naming the offending field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.channels == 0 {
            out.push("scene.channels must be > 0".to_string());
        }
        if self.height == 0 || self.width == 0 {
            out.push("scene.height and scene.width must be > 0".to_string());
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            out.push("scene.noise_amplitude must be finite and >= 0".to_string());
        }
        if !(self.latent_scale > 0.0 && self.latent_scale.is_finite()) {
            out.push("scene.latent_scale must be finite and > 0".to_string());
        }
        for (i, b) in self.blobs.iter().enumerate() {
            if b.signature.len() != self.channels {
                out.push(format!(
                    "scene.blobs[{i}].signature has {} entries, expected {}",
                    b.signature.len(),
                    self.channels
                ));
            } else {
                let norm = b.signature.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !((norm - 1.0).abs() <= 1e-6) {
                    out.push(format!("scene.blobs[{i}].signature has norm {norm}, expected 1"));
                }
            }
            if !(b.sigma > 0.5 && b.sigma.is_finite()) {
                out.push(format!("scene.blobs[{i}].sigma must be > 0.5 px"));
            }
            if !(b.amplitude > 0.0 && b.amplitude.is_finite()) {
                out.push(format!("scene.blobs[{i}].amplitude must be > 0"));
            }
        }
        out
    }

    /// True when at least two blobs share an identical signature.
    pub fn has_twins(&self) -> bool {
        self.blobs.iter().enumerate().any(|(i, a)| {
            self.blobs[i + 1..]
                .iter()
                .any(|b| a.signature == b.signature)
        })
    }

    pub fn latent_len(&self) -> usize {
        2 * self.blobs.len()
    }
}

/// Blob centers in latent units (`pixels / latent_scale`), `[x0, y0, x1, y1, ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn from_centers(centers: &[[f64; 2]], latent_scale: f64) -> Self {
        Self(
            centers
                .iter()
                .flat_map(|c| [c[0] / latent_scale, c[1] / latent_scale])
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Center of blob `b` in pixels.
    pub fn center(&self, b: usize, latent_scale: f64) -> (f64, f64) {
        (self.0[2 * b] * latent_scale, self.0[2 * b + 1] * latent_scale)
    }

    pub fn centers(&self, latent_scale: f64) -> Vec<[f64; 2]> {
        self.0
            .chunks_exact(2)
            .map(|c| [c[0] * latent_scale, c[1] * latent_scale])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct FeatureField {
    pub tensor: Tensor,
    pub latent: LatentCode,
}

/// Ground-truth position of blob `blob`: its center read straight from `w`.
pub fn semantic_oracle(spec: &BlobSceneSpec, w: &LatentCode, blob: usize) -> Result<(f64, f64)> {
    if blob >= spec.blobs.len() || w.len() != spec.latent_len() {
        return Err(DragError::Shape(format!(
            "blob {blob} requested from a scene with {} blobs and latent of length {}",
            spec.blobs.len(),
            w.len()
        )));
    }
    Ok(w.center(blob, spec.latent_scale))
}

struct BlobWindow {
    clamped_x: bool,
    clamped_y: bool,
    x0: usize,
    y0: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    dgx: Vec<f64>,
    dgy: Vec<f64>,
}

impl BlobWindow {
    fn new(blob: &BlobSpec, rx: f64, ry: f64, width: usize, height: usize) -> Self {
        let cx = rx.clamp(0.0, (width - 1) as f64);
        let cy = ry.clamp(0.0, (height - 1) as f64);
        let reach = (SUPPORT_SIGMAS * blob.sigma).ceil();
        let x0 = (cx - reach).max(0.0) as usize;
        let x1 = ((cx + reach) as usize).min(width - 1);
        let y0 = (cy - reach).max(0.0) as usize;
        let y1 = ((cy + reach) as usize).min(height - 1);
        let (gx, dgx) = (x0..=x1).map(|x| axis_profile(x as f64 - cx, blob.sigma)).unzip();
        let (gy, dgy) = (y0..=y1).map(|y| axis_profile(y as f64 - cy, blob.sigma)).unzip();
        Self {
            clamped_x: rx != cx,
            clamped_y: ry != cy,
            x0,
            y0,
            gx,
            gy,
            dgx,
            dgy,
        }
    }
}

/// Generator bound to one scene: owns the frozen noise.
#[derive(Clone)]
pub struct FieldGenerator {
    spec: BlobSceneSpec,
    noise: Arc<Vec<f64>>,
}

impl std::fmt::Debug for FieldGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldGenerator")
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl FieldGenerator {
    pub fn new(spec: BlobSceneSpec) -> Result<Self> {
        let violations = spec.violations();
        if !violations.is_empty() {
            return Err(DragError::Validation(violations));
        }
        let numel = spec.channels * spec.height * spec.width;
        let noise = if spec.noise_amplitude > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.background_noise_seed);
            let a = spec.noise_amplitude;
            (0..numel).map(|_| rng.gen_range(-a..=a)).collect()
        } else {
            vec![0.0; numel]
        };
        Ok(Self {
            spec,
            noise: Arc::new(noise),
        })
    }

    pub fn spec(&self) -> &BlobSceneSpec {
        &self.spec
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.spec.channels, self.spec.height, self.spec.width]
    }

    fn check_latent(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.spec.latent_len() {
            return Err(DragError::Shape(format!(
                "latent has {} values, scene with {} blobs needs {}",
                w.len(),
                self.spec.blobs.len(),
                self.spec.latent_len()
            )));
        }
        crate::tensor::ensure_finite(w, "latent code")
    }

    fn windows(&self, w: &[f64]) -> Vec<BlobWindow> {
        let s = self.spec.latent_scale;
        self.spec
            .blobs
            .iter()
            .zip(w.chunks_exact(2))
            .map(|(b, c)| BlobWindow::new(b, c[0] * s, c[1] * s, self.spec.width, self.spec.height))
            .collect()
    }

    pub fn generate(&self, w: &LatentCode) -> Result<FeatureField> {
        Ok(FeatureField {
            tensor: self.generate_tensor(w.values())?,
            latent: w.clone(),
        })
    }

    pub fn generate_tensor(&self, w: &[f64]) -> Result<Tensor> {
        self.check_latent(w)?;
        let (width, plane) = (self.spec.width, self.spec.width * self.spec.height);
        let mut out = (*self.noise).clone();
        for (blob, win) in self.spec.blobs.iter().zip(self.windows(w)) {
            for (ch, &sig) in blob.signature.iter().enumerate() {
                let a = blob.amplitude * sig;
                if a == 0.0 {
                    continue;
                }
                let base = ch * plane;
                for (dy, &gy) in win.gy.iter().enumerate() {
                    let row = base + (win.y0 + dy) * width + win.x0;
                    let ay = a * gy;
                    for (dst, &gx) in out[row..row + win.gx.len()].iter_mut().zip(&win.gx) {
                        *dst += ay * gx;
                    }
                }
            }
        }
        Tensor::new(self.shape().to_vec(), out)
    }

    /// Records generation on `tape`; gradient flows into the latent var.
    pub fn generate_var<'t>(&self, tape: &'t Tape, w: Var<'t>) -> Result<Var<'t>> {
        let value = self.generate_tensor(w.value().data())?;
        let spec = self.spec.clone();
        let this = self.clone();
        tape.custom(
            &[w],
            value,
            Box::new(move |gout: &Tensor, inputs: &[Rc<Tensor>], _out: &Tensor| {
                let wv = inputs[0].data();
                let (width, plane) = (spec.width, spec.width * spec.height);
                let mut grad = vec![0.0; wv.len()];
                for (b, (blob, win)) in spec.blobs.iter().zip(this.windows(wv)).enumerate() {
                    let (ww, wh) = (win.gx.len(), win.gy.len());
                    // projection of the output gradient onto this blob's signature
                    let mut proj = vec![0.0; ww * wh];
                    for (ch, &sig) in blob.signature.iter().enumerate() {
                        let a = blob.amplitude * sig;
                        if a == 0.0 {
                            continue;
                        }
                        for dy in 0..wh {
                            let row = ch * plane + (win.y0 + dy) * width + win.x0;
                            for (p, g) in proj[dy * ww..(dy + 1) * ww]
                                .iter_mut()
                                .zip(&gout.data()[row..row + ww])
                            {
                                *p += a * g;
                            }
                        }
                    }
                    let (mut gx_sum, mut gy_sum) = (0.0, 0.0);
                    for dy in 0..wh {
                        let (gy, dgy) = (win.gy[dy], win.dgy[dy]);
                        for dx in 0..ww {
                            let p = proj[dy * ww + dx];
                            gx_sum += p * win.dgx[dx] * gy;
                            gy_sum += p * win.gx[dx] * dgy;
                        }
                    }
                    let s = spec.latent_scale;
                    grad[2 * b] = if win.clamped_x { 0.0 } else { gx_sum * s };
                    grad[2 * b + 1] = if win.clamped_y { 0.0 } else { gy_sum * s };
                }
                vec![Some(Tensor::from_parts_unchecked(inputs[0].shape().to_vec(), grad))]
            }),
        )
    }
}

/// H×W×3 image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = 3 * (y * self.width + x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = 3 * (y * self.width + x);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| DragError::Image(e.to_string()))?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.png_bytes()?)?;
        Ok(())
    }
}

/// Fixed pseudo-random C×3 projection used for default renders.
pub fn default_projection(channels: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0105);
    (0..channels)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect()
}

/// Linear projection to RGB followed by a joint min-max normalization.
/// A constant image renders as mid-gray.
pub fn render_rgb(field: &Tensor, projection: &[[f64; 3]]) -> Result<RgbImage> {
    let (c, h, w) = field.chw()?;
    if projection.len() != c {
        return Err(DragError::Shape(format!(
            "projection has {} rows for a {c}-channel field",
            projection.len()
        )));
    }
    if projection.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DragError::Numeric("projection has non-finite entries".into()));
    }
    let plane = h * w;
    let mut data = vec![0.0; plane * 3];
    for (ch, row) in projection.iter().enumerate() {
        let src = &field.data()[ch * plane..(ch + 1) * plane];
        for (i, v) in src.iter().enumerate() {
            for k in 0..3 {
                data[3 * i + k] += v * row[k];
            }
        }
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs()).max(1.0)) {
        data.iter_mut().for_each(|v| *v = 0.5);
    } else {
        data.iter_mut().for_each(|v| *v = (*v - lo) / range);
    }
    Ok(RgbImage {
        height: h,
        width: w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;

    fn basis(c: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; c];
        v[k] = 1.0;
        v
    }

    fn one_blob(noise: f64) -> (FieldGenerator, LatentCode) {
        let spec = BlobSceneSpec {
            channels: 2,
            height: 32,
            width: 32,
            blobs: vec![BlobSpec {
                signature: basis(2, 0),
                sigma: 3.0,
                amplitude: 1.0,
            }],
            background_noise_seed: 7,
            noise_amplitude: noise,
            latent_scale: DEFAULT_LATENT_SCALE,
        };
        let w = LatentCode::from_centers(&[[10.0, 10.0]], spec.latent_scale);
        (FieldGenerator::new(spec).unwrap(), w)
    }

    #[test]
    fn gaussian_peak_and_one_sigma() {
        let (g, w) = one_blob(0.01);
        let f = g.generate(&w).unwrap().tensor;
        let noise = g.noise[10 * 32 + 10];
        assert!((f.get(&[0, 10, 10]) - (1.0 + noise)).abs() < 1e-12);
        let noise = g.noise[10 * 32 + 13];
        let expect = (-0.5f64).exp() + noise;
        assert!((f.get(&[0, 10, 13]) - expect).abs() < 1e-12);
        assert!((expect - noise - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn zero_blobs_zero_noise_is_all_zero() {
        let spec = BlobSceneSpec {
            channels: 3,
            height: 8,
            width: 8,
            blobs: vec![],
            background_noise_seed: 1,
            noise_amplitude: 0.0,
            latent_scale: DEFAULT_LATENT_SCALE,
        };
        let f = FieldGenerator::new(spec).unwrap().generate_tensor(&[]).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_is_deterministic_and_noise_is_frozen() {
        let (g, w) = one_blob(0.01);
        let a = g.generate_tensor(w.values()).unwrap();
        let b = g.generate_tensor(w.values()).unwrap();
        assert_eq!(a, b);
        let (g2, _) = one_blob(0.01);
        let moved = LatentCode::from_centers(&[[20.0, 20.0]], DEFAULT_LATENT_SCALE);
        let c = g2.generate_tensor(moved.values()).unwrap();
        // far corner only carries noise, identical for both latents
        assert_eq!(a.get(&[1, 31, 0]), c.get(&[1, 31, 0]));
    }

    #[test]
    fn oracle_reads_centers() {
        let (g, _) = one_blob(0.0);
        let w = LatentCode::from_centers(&[[10.0, 10.0]], DEFAULT_LATENT_SCALE);
        let (x, y) = semantic_oracle(g.spec(), &w, 0).unwrap();
        assert!((x - 10.0).abs() < 1e-12 && (y - 10.0).abs() < 1e-12);
        assert!(semantic_oracle(g.spec(), &w, 1).is_err());
    }

    #[test]
    fn latent_gradient_matches_finite_differences() {
        let (g, _) = one_blob(0.01);
        let w = Tensor::from_vec(vec![0.103, 0.117]).unwrap();
        let probe: Vec<f64> = (0..2 * 32 * 32).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let probe = Tensor::new(vec![2, 32, 32], probe).unwrap();
        let err = finite_difference_check(
            |tape, w| {
                let f = g.generate_var(tape, w)?;
                f.mul(&tape.constant(probe.clone()))?.sum()
            },
            &w,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn profile_is_gaussian_inside_taper_and_zero_outside() {
        let (g, d) = axis_profile(2.9 * 2.0, 2.0);
        assert_eq!(g, (-(5.8f64 * 5.8) / 8.0).exp());
        assert!(d > 0.0);
        assert_eq!(axis_profile(8.0, 2.0), (0.0, 0.0));
        assert_eq!(axis_profile(-9.5, 2.0), (0.0, 0.0));
        // derivative inside the roll-off matches central differences
        for u in [6.3, 7.1, -7.7] {
            let e = 1e-6;
            let fd = -(axis_profile(u + e, 2.0).0 - axis_profile(u - e, 2.0).0) / (2.0 * e);
            assert!((fd - axis_profile(u, 2.0).1).abs() < 1e-8, "{u}");
        }
    }

    #[test]
    fn distant_blob_gets_exactly_zero_gradient() {
        let spec = BlobSceneSpec {
            channels: 1,
            height: 40,
            width: 40,
            blobs: vec![
                BlobSpec { signature: vec![1.0], sigma: 2.0, amplitude: 1.0 },
                BlobSpec { signature: vec![1.0], sigma: 2.0, amplitude: 1.0 },
            ],
            background_noise_seed: 0,
            noise_amplitude: 0.0,
            latent_scale: DEFAULT_LATENT_SCALE,
        };
        let g = FieldGenerator::new(spec).unwrap();
        let w = LatentCode::from_centers(&[[10.0, 10.0], [30.0, 10.0]], DEFAULT_LATENT_SCALE);
        let tape = Tape::new();
        let wv = tape.var(Tensor::from_vec(w.0).unwrap());
        let f = g.generate_var(&tape, wv).unwrap();
        let probe = f.gather_pixels(&[(11, 10), (12, 11)]).unwrap().sum().unwrap();
        let grad = probe.backward().unwrap().get_or_zeros(wv);
        assert!(grad.data()[0] != 0.0);
        assert_eq!(&grad.data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = one_blob(0.0).0.spec().clone();
        spec.blobs[0].sigma = 0.4;
        spec.blobs[0].signature = vec![1.0, 1.0];
        let err = FieldGenerator::new(spec).unwrap_err();
        match err {
            DragError::Validation(v) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn constant_field_renders_mid_gray() {
        let f = Tensor::zeros(&[2, 4, 4]);
        let img = render_rgb(&f, &default_projection(2)).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_channel_renders_grayscale() {
        let f = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 2.0]).unwrap();
        let img = render_rgb(&f, &[[1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0; 3]);
        assert_eq!(img.pixel(1, 0), [0.5; 3]);
        assert_eq!(img.pixel(2, 0), [1.0; 3]);
    }
}
