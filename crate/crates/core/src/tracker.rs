//! Discriminative point tracking.
//!
//! Each handle point gets a 1×1 convolution filter `z` (a C-vector) fitted
//! once, before any drag step, so that its response over the search window of
//! the initial field matches a Gaussian bump centered on the handle. During
//! the drag the filter response is fused with a plain feature-difference
//! similarity and the window argmax becomes the new handle position.

use serde::{Deserialize, Serialize};

use crate::error::{DragError, Result};
use crate::geom::Point;
use crate::tensor::{crop, Tape, Tensor, Var};

/// Square search window `{q : |q.x - c.x| < radius, |q.y - c.y| < radius}`
/// clipped to the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchPatch {
    pub center: Point,
    pub radius: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl SearchPatch {
    pub fn new(center: Point, radius: usize, field_width: usize, field_height: usize) -> Result<Self> {
        if radius == 0 {
            return Err(DragError::Shape("search radius must be >= 1".into()));
        }
        if !center.in_bounds(field_width, field_height) {
            return Err(DragError::Bounds {
                x: center.x as f64,
                y: center.y as f64,
                width: field_width,
                height: field_height,
            });
        }
        let reach = radius as i64 - 1;
        let x0 = (center.x - reach).max(0);
        let y0 = (center.y - reach).max(0);
        let x1 = (center.x + reach).min(field_width as i64 - 1);
        let y1 = (center.y + reach).min(field_height as i64 - 1);
        Ok(Self {
            center,
            radius,
            x0: x0 as usize,
            y0: y0 as usize,
            width: (x1 - x0 + 1) as usize,
            height: (y1 - y0 + 1) as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Field coordinates of the local cell `(col, row)`.
    pub fn to_field(&self, col: usize, row: usize) -> Point {
        Point::new((self.x0 + col) as i64, (self.y0 + row) as i64)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 as i64
            && p.y >= self.y0 as i64
            && p.x < (self.x0 + self.width) as i64
            && p.y < (self.y0 + self.height) as i64
    }

    pub fn cells(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| self.to_field(c, r)))
    }
}

/// Desired response over a search patch, peak 1 at the patch center.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackLabel(pub Tensor);

pub fn gaussian_label(patch: &SearchPatch, sigma_label: f64) -> Result<TrackLabel> {
    if !(sigma_label > 0.0) {
        return Err(DragError::Numeric(format!(
            "sigma_label must be > 0, got {sigma_label}"
        )));
    }
    let inv = 1.0 / (2.0 * sigma_label * sigma_label);
    let values = patch
        .cells()
        .map(|q| {
            let d2 = (q.x - patch.center.x).pow(2) + (q.y - patch.center.y).pow(2);
            (-(d2 as f64) * inv).exp()
        })
        .collect();
    Ok(TrackLabel(Tensor::new(vec![patch.height, patch.width], values)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    /// Label spread in pixels; `None` means `r2 / 6`.
    pub sigma_label: Option<f64>,
    pub iters: usize,
    pub step_size: f64,
    /// Keep a score-grid snapshot every this many iterations (0 disables).
    pub snapshot_every: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sigma_label: None,
            iters: 1000,
            step_size: 0.01,
            snapshot_every: 100,
        }
    }
}

impl TrackerConfig {
    pub fn sigma_for(&self, r2: usize) -> f64 {
        self.sigma_label.unwrap_or(r2 as f64 / 6.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSnapshot {
    pub iteration: usize,
    /// Row-major `height × width` response over the training patch.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerModel {
    pub z: Tensor,
    pub trained: bool,
    /// `L_track` before each update, followed by the loss of the final filter.
    pub train_trace: Vec<f64>,
    pub patch: Option<SearchPatch>,
    pub snapshots: Vec<TrainingSnapshot>,
}

impl TrackerModel {
    /// An untrained filter.
    pub fn from_filter(z: Vec<f64>) -> Result<Self> {
        Ok(Self {
            z: Tensor::from_vec(z)?,
            trained: false,
            train_trace: Vec::new(),
            patch: None,
            snapshots: Vec::new(),
        })
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.train_trace.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.train_trace.last().copied()
    }
}

/// Filter response `Σ_c patch[c, q] · z[c]` at every position of a `[C, h, w]` patch.
pub fn apply_tracker(field_patch: &Tensor, z: &TrackerModel) -> Result<Tensor> {
    let (c, h, w) = field_patch.chw()?;
    if z.z.numel() != c {
        return Err(DragError::Shape(format!(
            "filter has {} channels, patch has {c}",
            z.z.numel()
        )));
    }
    let plane = h * w;
    let mut out = vec![0.0; plane];
    for (ch, &zc) in z.z.data().iter().enumerate() {
        for (o, v) in out.iter_mut().zip(&field_patch.data()[ch * plane..(ch + 1) * plane]) {
            *o += zc * v;
        }
    }
    Tensor::new(vec![h, w], out)
}

/// `L_track` as a tape expression in `z`.
pub fn tracking_loss_var<'t>(tape: &'t Tape, features: &Tensor, label: &TrackLabel, z: Var<'t>) -> Result<Var<'t>> {
    let feats = tape.constant(features.clone());
    let y = tape.constant(label.0.clone());
    feats.channel_dot(&z)?.sub(&y)?.square()?.sum()
}

fn track_loss(tape: &Tape, features: &Tensor, label: &TrackLabel, z: &Tensor) -> Result<(f64, Tensor)> {
    let zv = tape.var(z.clone());
    let loss = tracking_loss_var(tape, features, label, zv)?;
    let grads = loss.backward()?;
    Ok((loss.item(), grads.get_or_zeros(zv)))
}

/// `L_track = ‖g(F0(patch), z) - y‖²`, with the patch treated as constant.
pub fn tracking_loss(features: &Tensor, label: &TrackLabel, z: &Tensor) -> Result<f64> {
    Ok(track_loss(&Tape::new(), features, label, z)?.0)
}

/// Fits the filter of one handle point on the initial field.
///
/// `z` starts at the handle's own feature vector and follows plain gradient
/// descent; only `z` receives gradient.
pub fn train_tracker(
    initial_field: &Tensor,
    handle: Point,
    r2: usize,
    cfg: &TrackerConfig,
) -> Result<TrackerModel> {
    if cfg.iters == 0 {
        return Err(DragError::Numeric("tracker iters must be >= 1".into()));
    }
    let (_, h, w) = initial_field.chw()?;
    let patch = SearchPatch::new(handle, r2, w, h)?;
    let features = crop(initial_field, patch.x0, patch.y0, patch.width, patch.height)?;
    let label = gaussian_label(&patch, cfg.sigma_for(r2))?;
    let mut z = Tensor::from_vec(initial_field.pixel(handle.x as usize, handle.y as usize)?)?;

    let mut trace = Vec::with_capacity(cfg.iters + 1);
    let mut snapshots = Vec::new();
    let mut model = TrackerModel {
        z: z.clone(),
        trained: false,
        train_trace: Vec::new(),
        patch: Some(patch),
        snapshots: Vec::new(),
    };
    let divergence_check_from = cfg.iters.div_ceil(10);

    for it in 0..cfg.iters {
        if cfg.snapshot_every > 0 && it % cfg.snapshot_every == 0 {
            model.z = z.clone();
            snapshots.push(TrainingSnapshot {
                iteration: it,
                scores: apply_tracker(&features, &model)?.into_data(),
            });
        }
        let (loss, grad) = track_loss(&Tape::new(), &features, &label, &z)?;
        trace.push(loss);
        if it >= divergence_check_from && loss > 10.0 * trace[0] {
            return Err(DragError::TrainingDiverged {
                iteration: it,
                loss,
                initial: trace[0],
            });
        }
        for (zi, gi) in z.data_mut().iter_mut().zip(grad.data()) {
            *zi -= cfg.step_size * gi;
        }
        if !z.is_finite() {
            return Err(DragError::TrainingDiverged {
                iteration: it,
                loss: f64::INFINITY,
                initial: trace[0],
            });
        }
    }
    let final_loss = tracking_loss(&features, &label, &z)?;
    trace.push(final_loss);
    if final_loss > trace[0] {
        return Err(DragError::TrainingDiverged {
            iteration: cfg.iters,
            loss: final_loss,
            initial: trace[0],
        });
    }
    model.z = z;
    if cfg.snapshot_every > 0 {
        snapshots.push(TrainingSnapshot {
            iteration: cfg.iters,
            scores: apply_tracker(&features, &model)?.into_data(),
        });
    }
    model.trained = true;
    model.train_trace = trace;
    model.snapshots = snapshots;
    Ok(model)
}

/// Mean absolute per-channel difference between the field at `(x, y)` and `template`.
pub fn feature_distance(field: &Tensor, x: usize, y: usize, template: &[f64]) -> f64 {
    let shape = field.shape();
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let data = field.data();
    let base = y * w + x;
    let total: f64 = template
        .iter()
        .enumerate()
        .map(|(ch, t)| (data[ch * plane + base] - t).abs())
        .sum();
    total / template.len() as f64
}

fn filter_response(field: &Tensor, x: usize, y: usize, z: &[f64]) -> f64 {
    let shape = field.shape();
    let plane = shape[1] * shape[2];
    let base = y * shape[2] + x;
    z.iter()
        .enumerate()
        .map(|(ch, zc)| field.data()[ch * plane + base] * zc)
        .sum()
}

/// Fused confidence over the search window around `p`:
/// `S(q) = λ·exp(-mean|F(q) - f|) + (1-λ)·g(F(q), z)`.
pub fn score_map(
    field: &Tensor,
    p: Point,
    r2: usize,
    template: &[f64],
    z: &TrackerModel,
    lambda: f64,
) -> Result<(Tensor, SearchPatch)> {
    let (c, h, w) = field.chw()?;
    if template.len() != c || z.z.numel() != c {
        return Err(DragError::Shape(format!(
            "template has {} and filter {} channels, field has {c}",
            template.len(),
            z.z.numel()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DragError::Numeric(format!("lambda {lambda} outside [0, 1]")));
    }
    let patch = SearchPatch::new(p, r2, w, h)?;
    let scores = patch
        .cells()
        .map(|q| {
            let (x, y) = (q.x as usize, q.y as usize);
            let similarity = (-feature_distance(field, x, y, template)).exp();
            let response = filter_response(field, x, y, z.z.data());
            lambda * similarity + (1.0 - lambda) * response
        })
        .collect();
    Ok((Tensor::new(vec![patch.height, patch.width], scores)?, patch))
}

/// Argmax of a score grid mapped back to field coordinates, and the max
/// itself. Ties go to the smallest row-major index.
pub fn track_update(scores: &Tensor, patch: &SearchPatch) -> (Point, f64) {
    let mut best = 0;
    for (i, &v) in scores.data().iter().enumerate() {
        if v > scores.data()[best] {
            best = i;
        }
    }
    let (row, col) = (best / patch.width, best % patch.width);
    (patch.to_field(col, row), scores.data()[best])
}

/// Like [`track_update`], but a tie that includes the current position keeps
/// the point where it is. Without this a featureless window would snap the
/// point to its top-left corner.
pub fn track_update_from(scores: &Tensor, patch: &SearchPatch, current: Point) -> (Point, f64) {
    let (best, s) = track_update(scores, patch);
    if best != current && patch.contains(current) {
        let col = (current.x as usize) - patch.x0;
        let row = (current.y as usize) - patch.y0;
        if scores.data()[row * patch.width + col] == s {
            return (current, s);
        }
    }
    (best, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_is_clipped_and_bounded() {
        let p = SearchPatch::new(Point::new(10, 10), 12, 64, 64).unwrap();
        assert_eq!((p.width, p.height), (22, 22));
        assert_eq!((p.x0, p.y0), (0, 0));
        let p = SearchPatch::new(Point::new(2, 60), 12, 64, 64).unwrap();
        assert_eq!((p.x0, p.y0, p.width, p.height), (0, 49, 14, 15));
        assert!(SearchPatch::new(Point::new(64, 0), 12, 64, 64).is_err());
    }

    #[test]
    fn label_values() {
        let patch = SearchPatch::new(Point::new(20, 20), 12, 64, 64).unwrap();
        let s = 2.0;
        let y = gaussian_label(&patch, s).unwrap().0;
        let at = |dx: i64, dy: i64| {
            let q = Point::new(20 + dx, 20 + dy);
            y.get(&[(q.y as usize) - patch.y0, (q.x as usize) - patch.x0])
        };
        assert_eq!(at(0, 0), 1.0);
        assert!((at(2, 0) - (-0.5f64).exp()).abs() < 1e-15);
        // offset (3σ, 4σ) → exp(-(9 + 16) / 2)
        assert!((at(6, 8) - (-12.5f64).exp()).abs() < 1e-18);
        assert!(y.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn basis_filter_reads_channel() {
        let patch = Tensor::new(vec![2, 1, 3], vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0]).unwrap();
        let z = TrackerModel::from_filter(vec![1.0, 0.0]).unwrap();
        assert_eq!(apply_tracker(&patch, &z).unwrap().data(), &[1.0, 2.0, 3.0]);
        let z = TrackerModel::from_filter(vec![0.0, 0.0]).unwrap();
        assert_eq!(apply_tracker(&patch, &z).unwrap().data(), &[0.0; 3]);
        let z = TrackerModel::from_filter(vec![1.0]).unwrap();
        assert!(matches!(apply_tracker(&patch, &z), Err(DragError::Shape(_))));
    }

    #[test]
    fn argmax_maps_to_field_and_breaks_ties_row_major() {
        let patch = SearchPatch {
            center: Point::new(11, 11),
            radius: 2,
            x0: 10,
            y0: 10,
            width: 3,
            height: 3,
        };
        let mut g = Tensor::zeros(&[3, 3]);
        g.set(&[2, 1], 5.0); // row 2, col 1
        assert_eq!(track_update(&g, &patch), (Point::new(11, 12), 5.0));
        let flat = Tensor::filled(&[3, 3], 0.25);
        assert_eq!(track_update(&flat, &patch), (Point::new(10, 10), 0.25));
        assert_eq!(
            track_update_from(&flat, &patch, Point::new(11, 11)),
            (Point::new(11, 11), 0.25)
        );
        assert_eq!(track_update_from(&g, &patch, Point::new(11, 11)), (Point::new(11, 12), 5.0));
    }

    #[test]
    fn exactly_solvable_regression_converges_to_unit_filter() {
        // one channel whose patch content is exactly the label
        let (w, h, r2) = (41usize, 41usize, 12usize);
        let center = Point::new(20, 20);
        let patch = SearchPatch::new(center, r2, w, h).unwrap();
        let sigma = 2.0;
        let label = gaussian_label(&patch, sigma).unwrap().0;
        let mut field = Tensor::zeros(&[1, h, w]);
        for (i, q) in patch.cells().enumerate() {
            field.set(&[0, q.y as usize, q.x as usize], label.data()[i]);
        }
        // scale the field so z starts away from 1: z0 = 1, response = 1.5·label
        let field = Tensor::new(
            vec![1, h, w],
            field.data().iter().map(|v| 1.5 * v).collect(),
        )
        .unwrap();
        let cfg = TrackerConfig {
            sigma_label: Some(sigma),
            ..Default::default()
        };
        let model = train_tracker(&field, center, r2, &cfg).unwrap();
        let z = model.z.data()[0];
        assert!((z - 1.0 / 1.5).abs() < 1e-9, "z = {z}");
        assert!(model.final_loss().unwrap() < 1e-12);
        assert!(model.trained);
    }

    #[test]
    fn oversized_step_reports_divergence() {
        let (w, h) = (41usize, 41usize);
        let field = Tensor::filled(&[1, h, w], 3.0);
        let cfg = TrackerConfig {
            step_size: 1.0,
            iters: 100,
            ..Default::default()
        };
        let err = train_tracker(&field, Point::new(20, 20), 12, &cfg).unwrap_err();
        assert!(matches!(err, DragError::TrainingDiverged { .. } | DragError::Numeric(_)), "{err}");
    }

    #[test]
    fn untrained_template_filter_scores_its_own_energy() {
        let field = Tensor::new(vec![2, 1, 2], vec![3.0, 1.0, 4.0, 2.0]).unwrap();
        let f = field.pixel(0, 0).unwrap();
        let z = TrackerModel::from_filter(f.clone()).unwrap();
        let patch = crate::tensor::crop(&field, 0, 0, 2, 1).unwrap();
        let g = apply_tracker(&patch, &z).unwrap();
        assert_eq!(g.data()[0], f.iter().map(|v| v * v).sum::<f64>());
    }

    #[test]
    fn fused_score_endpoints() {
        let field = Tensor::new(vec![2, 1, 3], vec![1.0, 0.0, 2.0, 0.5, 0.0, 1.0]).unwrap();
        let template = field.pixel(0, 0).unwrap();
        let z = TrackerModel::from_filter(vec![0.3, -0.2]).unwrap();
        let (s, patch) = score_map(&field, Point::new(0, 0), 3, &template, &z, 1.0).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert_eq!(track_update(&s, &patch), (Point::new(0, 0), 1.0));
        let (s, _) = score_map(&field, Point::new(0, 0), 3, &template, &z, 0.0).unwrap();
        let crop = crate::tensor::crop(&field, 0, 0, 3, 1).unwrap();
        assert_eq!(s.data(), apply_tracker(&crop, &z).unwrap().data());
    }
}
