//! Declarative drag scenarios and the built-in scenario suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DragError, Result};
use crate::field::{BlobSceneSpec, BlobSpec, LatentCode};
use crate::geom::Point;
use crate::supervision::{MaskSpec, Rect, SupervisionConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPoint {
    pub handle: Point,
    pub target: Point,
    /// Blob whose center is the ground-truth position of the handle content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<usize>,
}

/// Partial config; unset fields keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracker_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracker_step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_label: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, base: &SupervisionConfig) -> SupervisionConfig {
        let mut c = base.clone();
        macro_rules! set {
            ($($field:ident => $($path:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$($path).+ = v; })*
            };
        }
        set!(
            eta => eta,
            tau => tau,
            lambda => lambda,
            r1 => r1,
            r2 => r2,
            lr => lr,
            max_steps => max_steps,
            convergence_radius => convergence_radius,
            tracker_iters => tracker.iters,
            tracker_step_size => tracker.step_size,
        );
        if self.sigma_label.is_some() {
            c.tracker.sigma_label = self.sigma_label;
        }
        c
    }

    /// Layers `other` on top of `self`.
    pub fn merged(&self, other: &ConfigOverrides) -> ConfigOverrides {
        macro_rules! pick {
            ($($f:ident),*) => {
                ConfigOverrides { $($f: other.$f.or(self.$f)),* }
            };
        }
        pick!(
            eta,
            tau,
            lambda,
            r1,
            r2,
            lr,
            max_steps,
            convergence_radius,
            tracker_iters,
            tracker_step_size,
            sigma_label
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub id: String,
    pub scene: BlobSceneSpec,
    /// Initial blob centers in pixels, one per scene blob.
    pub latent: Vec<[f64; 2]>,
    /// Seeds the frozen generator noise; replaces `scene.background_noise_seed`.
    pub seed: u64,
    pub points: Vec<ScenarioPoint>,
    #[serde(default)]
    pub mask: MaskSpec,
    #[serde(default)]
    pub config: ConfigOverrides,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Scene with the scenario seed applied.
    pub fn effective_scene(&self) -> BlobSceneSpec {
        BlobSceneSpec {
            background_noise_seed: self.seed,
            ..self.scene.clone()
        }
    }

    pub fn initial_latent(&self) -> LatentCode {
        LatentCode::from_centers(&self.latent, self.scene.latent_scale)
    }

    pub fn resolved_config(&self) -> SupervisionConfig {
        self.config.apply(&SupervisionConfig::default())
    }

    /// Every problem found, each naming the offending field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.format_version != FORMAT_VERSION {
            out.push(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.id.trim().is_empty() {
            out.push("id must not be empty".into());
        }
        out.extend(self.scene.violations());
        let (w, h) = (self.scene.width, self.scene.height);
        if self.latent.len() != self.scene.blobs.len() {
            out.push(format!(
                "latent has {} centers, scene has {} blobs",
                self.latent.len(),
                self.scene.blobs.len()
            ));
        }
        for (i, c) in self.latent.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite()) {
                out.push(format!("latent[{i}] must be finite"));
            }
        }
        let config = self.resolved_config();
        out.extend(config.violations());
        if self.points.is_empty() {
            out.push("points must contain at least one handle/target pair".into());
        }
        let r2 = config.r2 as i64;
        for (i, pt) in self.points.iter().enumerate() {
            let hd = pt.handle;
            if !hd.in_bounds(w, h) {
                out.push(format!("points[{i}].handle {hd} is outside the {w}x{h} field"));
            } else if hd.x < r2 || hd.y < r2 || hd.x >= w as i64 - r2 || hd.y >= h as i64 - r2 {
                out.push(format!(
                    "points[{i}].handle {hd} must be at least r2 = {r2} px from the border"
                ));
            }
            if !pt.target.in_bounds(w, h) {
                out.push(format!(
                    "points[{i}].target {} is outside the {w}x{h} field",
                    pt.target
                ));
            }
            if let Some(b) = pt.blob {
                if b >= self.scene.blobs.len() {
                    out.push(format!("points[{i}].blob {b} does not name a scene blob"));
                }
            }
        }
        out.extend(self.mask.violations(w, h));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(DragError::Validation(v))
        }
    }
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn random_signature(rng: &mut ChaCha8Rng, channels: usize) -> Vec<f64> {
    unit((0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random unit vector orthogonal to `s`.
fn orthogonal_signature(rng: &mut ChaCha8Rng, s: &[f64]) -> Vec<f64> {
    let v = random_signature(rng, s.len());
    let dot: f64 = v.iter().zip(s).map(|(a, b)| a * b).sum();
    unit(v.iter().zip(s).map(|(a, b)| a - dot * b).collect())
}

fn blob(signature: Vec<f64>, sigma: f64, amplitude: f64) -> BlobSpec {
    BlobSpec {
        signature,
        sigma,
        amplitude,
    }
}

fn scene(channels: usize, size: usize, blobs: Vec<BlobSpec>, seed: u64, noise: f64) -> BlobSceneSpec {
    BlobSceneSpec {
        channels,
        height: size,
        width: size,
        blobs,
        background_noise_seed: seed,
        noise_amplitude: noise,
        latent_scale: crate::field::DEFAULT_LATENT_SCALE,
    }
}

/// Editable band around the segment from `a` to `b`, padded by `pad` px.
fn band(a: Point, b: Point, pad: i64, size: usize) -> MaskSpec {
    let clamp = |v: i64| v.clamp(0, size as i64) as usize;
    MaskSpec::Rects(vec![Rect {
        x0: clamp(a.x.min(b.x) - pad),
        y0: clamp(a.y.min(b.y) - pad),
        x1: clamp(a.x.max(b.x) + pad + 1),
        y1: clamp(a.y.max(b.y) + pad + 1),
    }])
}

fn scenario(
    id: String,
    scene: BlobSceneSpec,
    latent: Vec<[f64; 2]>,
    points: Vec<ScenarioPoint>,
    mask: MaskSpec,
    config: ConfigOverrides,
) -> ScenarioFile {
    ScenarioFile {
        format_version: FORMAT_VERSION,
        id,
        seed: scene.background_noise_seed,
        scene,
        latent,
        points,
        mask,
        config,
    }
}

fn point(handle: Point, target: Point, blob: usize) -> ScenarioPoint {
    ScenarioPoint {
        handle,
        target,
        blob: Some(blob),
    }
}

const HANDLE_SIGMA: f64 = 2.0;
const HANDLE_AMPLITUDE: f64 = 1.5;

/// Default-sized scene: one handle blob dragged 40 px, two static
/// bystanders outside the editable band.
pub fn single_blob(index: usize) -> ScenarioFile {
    let seed = 11 + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 64;
    let angle = [0.0f64, 0.6435, -std::f64::consts::FRAC_PI_2][index % 3];
    let start = Point::new(108, 128);
    let target = Point::new(
        start.x + (40.0 * angle.cos()).round() as i64,
        start.y + (40.0 * angle.sin()).round() as i64,
    );
    let blobs = vec![
        blob(random_signature(&mut rng, c), HANDLE_SIGMA, HANDLE_AMPLITUDE),
        blob(random_signature(&mut rng, c), 5.0, 1.0),
        blob(random_signature(&mut rng, c), 4.0, 1.2),
    ];
    let latent = vec![
        [start.x as f64, start.y as f64],
        [60.0, 200.0],
        [200.0, 56.0],
    ];
    scenario(
        format!("single_blob_{index}"),
        scene(c, 256, blobs, seed, 0.01),
        latent,
        vec![point(start, target, 0)],
        band(start, target, 16, 256),
        ConfigOverrides::default(),
    )
}

/// Smaller scene, 64 px drag.
pub fn long_range(index: usize) -> ScenarioFile {
    let seed = 101 + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 32;
    let (start, target) = [
        (Point::new(30, 64), Point::new(94, 64)),
        (Point::new(64, 96), Point::new(64, 32)),
        (Point::new(34, 34), Point::new(80, 78)),
    ][index % 3];
    let blobs = vec![
        blob(random_signature(&mut rng, c), HANDLE_SIGMA, HANDLE_AMPLITUDE),
        blob(random_signature(&mut rng, c), 4.0, 1.0),
    ];
    let latent = vec![[start.x as f64, start.y as f64], [110.0, 112.0]];
    scenario(
        format!("long_range_{index}"),
        scene(c, 128, blobs, seed, 0.01),
        latent,
        vec![point(start, target, 0)],
        band(start, target, 14, 128),
        ConfigOverrides::default(),
    )
}

const TWIN_MARKER: f64 = 0.25;
const BACKDROP_AMPLITUDE: f64 = 0.4;

/// A handle blob over a static backdrop blob, and a copy of both about 16 px
/// away. Once the handle leaves its backdrop the copy is the closer match in
/// feature distance. A weak marker blob sits on the copy only, which a
/// trained filter learns to reject.
pub fn twin_distractor(index: usize) -> ScenarioFile {
    let seed = 201 + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 32;
    let s = random_signature(&mut rng, c);
    let u = orthogonal_signature(&mut rng, &s);
    let start = Point::new(30, 64 + index as i64 % 3 - 1);
    let target = Point::new(start.x + 44, start.y);
    let offset = [(8, -14), (8, 14), (9, -13), (7, 14), (8, -14)][index % 5];
    let twin = [(start.x + offset.0) as f64, (start.y + offset.1) as f64];
    let b = orthogonal_signature(&mut rng, &s);
    let blobs = vec![
        blob(s.clone(), HANDLE_SIGMA, HANDLE_AMPLITUDE),
        blob(b.clone(), HANDLE_SIGMA, BACKDROP_AMPLITUDE),
        blob(s, HANDLE_SIGMA, HANDLE_AMPLITUDE),
        blob(b, HANDLE_SIGMA, BACKDROP_AMPLITUDE),
        blob(u, HANDLE_SIGMA, TWIN_MARKER),
    ];
    let p0 = [start.x as f64, start.y as f64];
    let latent = vec![p0, p0, twin, twin, twin];
    scenario(
        format!("twin_distractor_{index}"),
        scene(c, 128, blobs, seed, 0.01),
        latent,
        vec![point(start, target, 0)],
        MaskSpec::full(),
        ConfigOverrides {
            r2: Some(16),
            sigma_label: Some(HANDLE_SIGMA),
            ..Default::default()
        },
    )
}

/// Drag path running through a static blob with the negated handle
/// signature. While the two overlap the handle features cancel and the
/// tracking confidence collapses.
pub fn low_confidence_drift(index: usize) -> ScenarioFile {
    let seed = 301 + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 32;
    let s = random_signature(&mut rng, c);
    let start = Point::new(30, 64);
    let target = Point::new(80, 64);
    let occluder_x = [55.0, 52.0, 58.0, 54.0, 56.0][index % 5];
    let occluder_dy = [0.0, -1.0, 0.0, 1.0, -1.0][index % 5];
    let anti: Vec<f64> = s.iter().map(|v| -v).collect();
    let blobs = vec![
        blob(s, HANDLE_SIGMA, HANDLE_AMPLITUDE),
        blob(anti, 3.0, HANDLE_AMPLITUDE),
    ];
    let latent = vec![
        [start.x as f64, start.y as f64],
        [occluder_x, start.y as f64 + occluder_dy],
    ];
    scenario(
        format!("low_confidence_drift_{index}"),
        scene(c, 128, blobs, seed, 0.01),
        latent,
        vec![point(start, target, 0)],
        band(start, target, 4, 128),
        ConfigOverrides::default(),
    )
}

/// No blobs and no noise: every loss is zero and nothing moves.
pub fn constant_field(_index: usize) -> ScenarioFile {
    let start = Point::new(32, 32);
    scenario(
        "constant_field".into(),
        scene(4, 64, Vec::new(), 0, 0.0),
        Vec::new(),
        vec![ScenarioPoint {
            handle: start,
            target: Point::new(44, 32),
            blob: None,
        }],
        MaskSpec::full(),
        ConfigOverrides {
            max_steps: Some(5),
            tracker_iters: Some(10),
            ..Default::default()
        },
    )
}

pub const TEMPLATES: [&str; 5] = [
    "single_blob",
    "long_range",
    "twin_distractor",
    "low_confidence_drift",
    "constant_field",
];

/// Named template, optionally suffixed with `_<index>` (e.g. `twin_distractor_3`).
pub fn template(name: &str) -> Option<ScenarioFile> {
    let (base, index) = match name.rsplit_once('_') {
        Some((b, i)) if i.chars().all(|c| c.is_ascii_digit()) && TEMPLATES.contains(&b) => {
            (b, i.parse().ok()?)
        }
        _ => (name, 0),
    };
    let f = match base {
        "single_blob" => single_blob,
        "long_range" => long_range,
        "twin_distractor" => twin_distractor,
        "low_confidence_drift" => low_confidence_drift,
        "constant_field" => constant_field,
        _ => return None,
    };
    Some(f(index))
}

pub const SUITES: [&str; 5] = ["plain", "long", "twin", "drift", "default"];

pub fn suite(name: &str) -> Option<Vec<ScenarioFile>> {
    let s = match name {
        "plain" => (0..3).map(single_blob).collect(),
        "long" => (0..3).map(long_range).collect(),
        "twin" => (0..5).map(twin_distractor).collect(),
        "drift" => (0..5).map(low_confidence_drift).collect(),
        "default" => ["plain", "long", "twin", "drift"]
            .iter()
            .flat_map(|n| suite(n).unwrap_or_default())
            .collect(),
        _ => return None,
    };
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_valid_and_round_trip() {
        for name in TEMPLATES {
            let s = template(name).unwrap();
            assert_eq!(s.violations(), Vec::<String>::new(), "{name}");
            let back = ScenarioFile::from_json(&s.to_json().unwrap()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn suites_have_expected_sizes() {
        assert_eq!(suite("twin").unwrap().len(), 5);
        assert_eq!(suite("drift").unwrap().len(), 5);
        assert_eq!(suite("default").unwrap().len(), 16);
        assert!(suite("nope").is_none());
        for s in suite("default").unwrap() {
            assert!(s.violations().is_empty(), "{}: {:?}", s.id, s.violations());
        }
    }

    #[test]
    fn indexed_template_names() {
        assert_eq!(template("twin_distractor_3").unwrap().id, "twin_distractor_3");
        assert_eq!(template("single_blob").unwrap().id, "single_blob_0");
        assert!(template("twin_distractor_x").is_none());
    }

    #[test]
    fn single_blob_target_is_forty_px_away() {
        for i in 0..3 {
            let s = single_blob(i);
            let d = s.points[0].handle.distance(s.points[0].target);
            assert!((d - 40.0).abs() < 0.5, "{d}");
        }
    }

    #[test]
    fn twin_scene_has_twins() {
        assert!(twin_distractor(0).scene.has_twins());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&single_blob(0).to_json().unwrap()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(ScenarioFile::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn violations_name_the_point() {
        let mut s = single_blob(0);
        s.points[0].handle = Point::new(400, 5);
        s.points.push(s.points[0].clone());
        s.points[1].handle = Point::new(3, 128);
        let v = s.violations();
        assert!(v.iter().any(|m| m.starts_with("points[0].handle")), "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("points[1].handle")), "{v:?}");
        s.points.clear();
        assert!(s.violations().iter().any(|m| m.contains("at least one")));
    }

    #[test]
    fn overrides_layer() {
        let a = ConfigOverrides {
            tau: Some(0.1),
            lambda: Some(0.5),
            ..Default::default()
        };
        let b = ConfigOverrides {
            tau: Some(0.9),
            ..Default::default()
        };
        let c = a.merged(&b).apply(&SupervisionConfig::default());
        assert_eq!((c.tau, c.lambda, c.eta), (0.9, 0.5, 20.0));
    }
}
