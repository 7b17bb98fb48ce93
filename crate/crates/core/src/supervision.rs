//! Motion supervision: the dynamic loss, the template loss, the confidence
//! gate choosing between them, and the latent optimizer step.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{DragError, Result};
use crate::field::FieldGenerator;
use crate::geom::Point;
use crate::tensor::{ensure_finite, Tape, Tensor, Var};
use crate::tracker::TrackerConfig;

/// Editable-region rectangle, `[x0, x1) × [y0, y1)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Declarative mask: the whole field is editable, or a union of rectangles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Full(FullMask),
    Rects(Vec<Rect>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FullMask {
    Full,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec::Full(FullMask::Full)
    }
}

impl MaskSpec {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn violations(&self, width: usize, height: usize) -> Vec<String> {
        let MaskSpec::Rects(rects) = self else {
            return Vec::new();
        };
        rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > width || r.y1 > height)
            .map(|(i, r)| {
                format!(
                    "mask[{i}] = [{}, {}) x [{}, {}) is empty or exceeds the {width}x{height} field",
                    r.x0, r.x1, r.y0, r.y1
                )
            })
            .collect()
    }
}

/// H×W grid, 1 where the field may change.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskGrid {
    pub height: usize,
    pub width: usize,
    cells: Vec<bool>,
}

impl MaskGrid {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![true; width * height],
        }
    }

    pub fn from_spec(spec: &MaskSpec, width: usize, height: usize) -> Result<Self> {
        let violations = spec.violations(width, height);
        if !violations.is_empty() {
            return Err(DragError::Validation(violations));
        }
        match spec {
            MaskSpec::Full(_) => Ok(Self::full(width, height)),
            MaskSpec::Rects(rects) => {
                let mut cells = vec![false; width * height];
                for r in rects {
                    for y in r.y0..r.y1 {
                        cells[y * width + r.x0..y * width + r.x1].fill(true);
                    }
                }
                Ok(Self {
                    height,
                    width,
                    cells,
                })
            }
        }
    }

    pub fn editable(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|&c| c)
    }

    /// Row-major indices of the preserved (non-editable) cells.
    pub fn preserved(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| !self.cells[i]).collect()
    }
}

/// Integer pixels strictly closer than `r1` to a center, as offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiskPatch {
    pub r1: usize,
    pub offsets: Vec<(i64, i64)>,
}

impl DiskPatch {
    pub fn new(r1: usize) -> Result<Self> {
        if r1 == 0 {
            return Err(DragError::Shape("r1 must be >= 1".into()));
        }
        let r = r1 as i64;
        let offsets = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy < r * r)
            .collect();
        Ok(Self { r1, offsets })
    }

    pub fn around(&self, p: Point) -> impl Iterator<Item = Point> + '_ {
        self.offsets.iter().map(move |&(dx, dy)| Point::new(p.x + dx, p.y + dy))
    }
}

/// Unit vector from `p` toward `t`, or `None` when they coincide.
pub fn deviation_vector(p: Point, t: Point) -> Option<(f64, f64)> {
    if p == t {
        return None;
    }
    let (dx, dy) = ((t.x - p.x) as f64, (t.y - p.y) as f64);
    let n = dx.hypot(dy);
    Some((dx / n, dy / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    L1,
    L2,
}

/// Confidence gate. `s1 = None` means no tracking has happened yet.
pub fn select_loss(s_i: Option<f64>, s1: Option<f64>, tau: f64) -> LossKind {
    match (s_i, s1) {
        (Some(s), Some(s1)) if s <= tau * s1 => LossKind::L2,
        _ => LossKind::L1,
    }
}

fn default_eta() -> f64 {
    20.0
}
fn default_tau() -> f64 {
    0.4
}
fn default_lambda() -> f64 {
    0.3
}
fn default_r1() -> usize {
    3
}
fn default_r2() -> usize {
    12
}
fn default_lr() -> f64 {
    0.01
}
fn default_max_steps() -> usize {
    100
}
fn default_convergence_radius() -> f64 {
    1.0
}

/// Step-count presets.
pub const MAX_STEP_PRESETS: [usize; 3] = [60, 80, 100];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_r1")]
    pub r1: usize,
    #[serde(default = "default_r2")]
    pub r2: usize,
    /// Adam step size.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_convergence_radius")]
    pub convergence_radius: f64,
    #[serde(default)]
    pub tracker: TrackerConfig,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            tau: default_tau(),
            lambda: default_lambda(),
            r1: default_r1(),
            r2: default_r2(),
            lr: default_lr(),
            max_steps: default_max_steps(),
            convergence_radius: default_convergence_radius(),
            tracker: TrackerConfig::default(),
        }
    }
}

impl SupervisionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                out.push(format!("config.{msg}"));
            }
        };
        check(self.eta >= 0.0 && self.eta.is_finite(), "eta must be finite and >= 0");
        check((0.0..=1.0).contains(&self.tau), "tau must lie in [0, 1]");
        check((0.0..=1.0).contains(&self.lambda), "lambda must lie in [0, 1]");
        check(self.r1 >= 1, "r1 must be >= 1");
        check(self.r2 >= 2, "r2 must be >= 2");
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be finite and > 0");
        check(
            self.convergence_radius >= 0.0 && self.convergence_radius.is_finite(),
            "convergence_radius must be finite and >= 0",
        );
        check(self.tracker.iters >= 1, "tracker.iters must be >= 1");
        check(
            self.tracker.step_size > 0.0 && self.tracker.step_size.is_finite(),
            "tracker.step_size must be finite and > 0",
        );
        if let Some(s) = self.tracker.sigma_label {
            check(s > 0.0 && s.is_finite(), "tracker.sigma_label must be > 0");
        }
        out
    }
}

/// One active handle point as seen by the loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointTerm {
    /// Index of the point in the session, for error reporting.
    pub index: usize,
    pub p0: Point,
    pub p: Point,
    pub t: Point,
    pub kind: LossKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Motion term of each active point, in the order given.
    pub points: Vec<f64>,
    /// `η · ‖(F - F0) ⊙ (1 - M)‖₁`.
    pub mask: f64,
}

/// `Σ |F - F0|` over preserved cells of every channel, recorded on the tape.
fn preserve_term<'t>(field: Var<'t>, f0: &Tensor, mask: &MaskGrid) -> Result<Var<'t>> {
    let f = field.value();
    let (c, h, w) = f.chw()?;
    if f0.shape() != f.shape() || mask.width != w || mask.height != h {
        return Err(DragError::Shape(format!(
            "field {:?}, initial field {:?}, mask {}x{}",
            f.shape(),
            f0.shape(),
            mask.width,
            mask.height
        )));
    }
    let plane = h * w;
    let preserved = Rc::new(mask.preserved());
    let mut total = 0.0;
    for ch in 0..c {
        for &i in preserved.iter() {
            total += (f.data()[ch * plane + i] - f0.data()[ch * plane + i]).abs();
        }
    }
    let f0 = f0.clone();
    field.tape().custom(
        &[field],
        Tensor::scalar(total)?,
        Box::new(move |gout: &Tensor, inputs: &[Rc<Tensor>], _out: &Tensor| {
            let f = &inputs[0];
            let g = gout.item();
            let mut grad = vec![0.0; f.numel()];
            for ch in 0..c {
                for &i in preserved.iter() {
                    let k = ch * plane + i;
                    let diff = f.data()[k] - f0.data()[k];
                    grad[k] = if diff > 0.0 {
                        g
                    } else if diff < 0.0 {
                        -g
                    } else {
                        0.0
                    };
                }
            }
            vec![Some(Tensor::new(f.shape().to_vec(), grad).expect("finite gradient"))]
        }),
    )
}

/// Pairs `(source cell, displaced sample)` for one point, clipped to the field.
fn sample_pairs(
    disk: &DiskPatch,
    source_center: Point,
    moving_center: Point,
    d: (f64, f64),
    width: usize,
    height: usize,
) -> Vec<((usize, usize), (f64, f64))> {
    let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
    disk.offsets
        .iter()
        .filter_map(|&(ox, oy)| {
            let src = Point::new(source_center.x + ox, source_center.y + oy);
            let q = Point::new(moving_center.x + ox, moving_center.y + oy);
            let (sx, sy) = (q.x as f64 + d.0, q.y as f64 + d.1);
            let ok = src.in_bounds(width, height)
                && q.in_bounds(width, height)
                && (0.0..=wmax).contains(&sx)
                && (0.0..=hmax).contains(&sy);
            ok.then_some(((src.x as usize, src.y as usize), (sx, sy)))
        })
        .collect()
}

fn gather(f: &Tensor, cells: &[(usize, usize)]) -> Result<Tensor> {
    let c = f.shape()[0];
    let mut out = Vec::with_capacity(cells.len() * c);
    for &(x, y) in cells {
        out.extend(f.pixel(x, y)?);
    }
    Tensor::new(vec![cells.len(), c], out)
}

/// Motion term of one point: L1 compares the detached current field at
/// `Θ(p)` with `F(Θ(p) + d)`; L2 compares the fixed initial field at
/// `Θ(p0)` with `F(Θ(p) + d)`.
fn point_term<'t>(
    field: Var<'t>,
    f0: &Tensor,
    disk: &DiskPatch,
    term: &PointTerm,
) -> Result<Option<Var<'t>>> {
    let Some(d) = deviation_vector(term.p, term.t) else {
        return Ok(None);
    };
    let (_, h, w) = field.value().chw()?;
    let source = match term.kind {
        LossKind::L1 => term.p,
        LossKind::L2 => term.p0,
    };
    let pairs = sample_pairs(disk, source, term.p, d, w, h);
    if pairs.is_empty() {
        return Err(DragError::DegeneratePatch(term.index));
    }
    let cells: Vec<(usize, usize)> = pairs.iter().map(|p| p.0).collect();
    let samples: Vec<(f64, f64)> = pairs.iter().map(|p| p.1).collect();
    let tape = field.tape();
    let reference = match term.kind {
        LossKind::L1 => field.gather_pixels(&cells)?.detach(),
        LossKind::L2 => tape.constant(gather(f0, &cells)?),
    };
    let moved = field.sample_points(&samples)?;
    Ok(Some(reference.sub(&moved)?.l1_norm()?))
}

/// Per-point motion terms (each with its own loss kind) plus the weighted
/// mask term.
pub fn motion_loss<'t>(
    field: Var<'t>,
    f0: &Tensor,
    terms: &[PointTerm],
    mask: &MaskGrid,
    eta: f64,
    r1: usize,
) -> Result<(Var<'t>, LossBreakdown)> {
    let disk = DiskPatch::new(r1)?;
    let tape = field.tape();
    let mut total = tape.constant(Tensor::scalar(0.0)?);
    let mut per_point = Vec::with_capacity(terms.len());
    for term in terms {
        match point_term(field, f0, &disk, term)? {
            Some(v) => {
                per_point.push(v.item());
                total = total.add(&v)?;
            }
            None => per_point.push(0.0),
        }
    }
    let mut mask_value = 0.0;
    if eta > 0.0 && !mask.is_full() {
        let m = preserve_term(field, f0, mask)?.scale(eta)?;
        mask_value = m.item();
        total = total.add(&m)?;
    }
    let breakdown = LossBreakdown {
        total: total.item(),
        points: per_point,
        mask: mask_value,
    };
    Ok((total, breakdown))
}

fn with_kind(terms: &[PointTerm], kind: LossKind) -> Vec<PointTerm> {
    terms.iter().map(|t| PointTerm { kind, ..*t }).collect()
}

/// Dynamic loss with every point supervised against the current field.
pub fn loss_dynamic<'t>(
    field: Var<'t>,
    f0: &Tensor,
    terms: &[PointTerm],
    mask: &MaskGrid,
    eta: f64,
    r1: usize,
) -> Result<(Var<'t>, LossBreakdown)> {
    motion_loss(field, f0, &with_kind(terms, LossKind::L1), mask, eta, r1)
}

/// Template loss with every point supervised against the initial field.
pub fn loss_template<'t>(
    field: Var<'t>,
    f0: &Tensor,
    terms: &[PointTerm],
    mask: &MaskGrid,
    eta: f64,
    r1: usize,
) -> Result<(Var<'t>, LossBreakdown)> {
    motion_loss(field, f0, &with_kind(terms, LossKind::L2), mask, eta, r1)
}

/// Adam with bias correction; state persists across calls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(DragError::Shape(format!(
                "adam state for {} params, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        ensure_finite(grad, "gradient")?;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        ensure_finite(params, "latent after update")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss {
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
}

/// Evaluates the gated loss at `w`, then takes one Adam step in place.
/// Returns the loss before the step.
#[allow(clippy::too_many_arguments)]
pub fn supervision_step(
    generator: &FieldGenerator,
    w: &mut [f64],
    adam: &mut Adam,
    f0: &Tensor,
    terms: &[PointTerm],
    mask: &MaskGrid,
    eta: f64,
    r1: usize,
) -> Result<StepLoss> {
    let tape = Tape::new();
    let wv = tape.var(Tensor::from_vec(w.to_vec())?);
    let field = generator.generate_var(&tape, wv)?;
    let (loss, breakdown) = motion_loss(field, f0, terms, mask, eta, r1)?;
    if !breakdown.total.is_finite() {
        return Err(DragError::Numeric("non-finite supervision loss".into()));
    }
    let grad = loss.backward()?.get_or_zeros(wv).into_data();
    adam.step(w, &grad)?;
    Ok(StepLoss { breakdown, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(p: Point, t: Point, kind: LossKind) -> PointTerm {
        PointTerm {
            index: 0,
            p0: p,
            p,
            t,
            kind,
        }
    }

    fn ramp(w: usize, h: usize) -> Tensor {
        let data = (0..h).flat_map(|_| (0..w).map(|x| x as f64)).collect();
        Tensor::new(vec![1, h, w], data).unwrap()
    }

    #[test]
    fn deviation_examples() {
        assert_eq!(deviation_vector(Point::new(0, 0), Point::new(3, 4)), Some((0.6, 0.8)));
        assert_eq!(deviation_vector(Point::new(1, 1), Point::new(1, 5)), Some((0.0, 1.0)));
        assert_eq!(deviation_vector(Point::new(7, 7), Point::new(7, 7)), None);
    }

    #[test]
    fn disk_sizes() {
        assert_eq!(DiskPatch::new(1).unwrap().offsets, vec![(0, 0)]);
        assert_eq!(DiskPatch::new(2).unwrap().offsets.len(), 9);
        assert_eq!(DiskPatch::new(3).unwrap().offsets.len(), 25);
    }

    #[test]
    fn gate_examples() {
        assert_eq!(select_loss(Some(0.5), Some(1.0), 0.4), LossKind::L1);
        assert_eq!(select_loss(Some(0.4), Some(1.0), 0.4), LossKind::L2);
        assert_eq!(select_loss(Some(1e-9), Some(1.0), 0.0), LossKind::L1);
        assert_eq!(select_loss(None, None, 1.0), LossKind::L1);
    }

    #[test]
    fn ramp_single_cell_dynamic_loss_is_one() {
        let f = ramp(8, 5);
        let tape = Tape::new();
        let fv = tape.var(f.clone());
        let mask = MaskGrid::full(8, 5);
        let terms = [term(Point::new(3, 2), Point::new(6, 2), LossKind::L1)];
        let (loss, b) = loss_dynamic(fv, &f, &terms, &mask, 20.0, 1).unwrap();
        assert_eq!(loss.item(), 1.0);
        assert_eq!(b.mask, 0.0);
    }

    #[test]
    fn template_drift_adds_to_dynamic() {
        // template is the ramp, current content shifted up by 0.5
        let f0 = ramp(8, 5);
        let f = Tensor::new(vec![1, 5, 8], f0.data().iter().map(|v| v + 0.5).collect()).unwrap();
        let tape = Tape::new();
        let fv = tape.var(f);
        let mask = MaskGrid::full(8, 5);
        let terms = [term(Point::new(3, 2), Point::new(6, 2), LossKind::L1)];
        let l1 = loss_dynamic(fv, &f0, &terms, &mask, 0.0, 1).unwrap().0.item();
        let l2 = loss_template(fv, &f0, &terms, &mask, 0.0, 1).unwrap().0.item();
        assert_eq!(l1, 1.0);
        assert_eq!(l2, 1.5);
    }

    #[test]
    fn constant_field_has_zero_loss() {
        let f = Tensor::filled(&[2, 6, 6], 0.7);
        let tape = Tape::new();
        let fv = tape.var(f.clone());
        let mask = MaskGrid::from_spec(
            &MaskSpec::Rects(vec![Rect { x0: 0, y0: 0, x1: 3, y1: 6 }]),
            6,
            6,
        )
        .unwrap();
        let terms = [term(Point::new(2, 2), Point::new(4, 3), LossKind::L1)];
        for kind in [LossKind::L1, LossKind::L2] {
            let terms = with_kind(&terms, kind);
            let (l, _) = motion_loss(fv, &f, &terms, &mask, 20.0, 3).unwrap();
            assert_eq!(l.item(), 0.0);
        }
    }

    #[test]
    fn detached_side_gets_no_gradient() {
        // single cell at (2,2) moving along +x; the gradient lands only on the
        // two cells interpolated at (3,2)
        let f = ramp(6, 5);
        let tape = Tape::new();
        let fv = tape.var(f.clone());
        let terms = [term(Point::new(2, 2), Point::new(5, 2), LossKind::L1)];
        let (l, _) = loss_dynamic(fv, &f, &terms, &MaskGrid::full(6, 5), 0.0, 1).unwrap();
        let g = l.backward().unwrap().get_or_zeros(fv);
        assert_eq!(g.get(&[0, 2, 2]), 0.0);
        assert_eq!(g.get(&[0, 2, 3]), 1.0);
        assert_eq!(g.data().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn mask_gradient_is_plus_minus_eta() {
        let f0 = Tensor::zeros(&[1, 2, 2]);
        let f = Tensor::new(vec![1, 2, 2], vec![0.5, -0.5, 0.3, 0.0]).unwrap();
        let mask = MaskGrid::from_spec(
            &MaskSpec::Rects(vec![Rect { x0: 1, y0: 1, x1: 2, y1: 2 }]),
            2,
            2,
        )
        .unwrap();
        let tape = Tape::new();
        let fv = tape.var(f);
        let (l, b) = motion_loss(fv, &f0, &[], &mask, 20.0, 3).unwrap();
        assert!((b.mask - 26.0).abs() < 1e-12);
        let g = l.backward().unwrap().get_or_zeros(fv);
        assert_eq!(g.data(), &[20.0, -20.0, 20.0, 0.0]);
    }

    #[test]
    fn full_mask_removes_mask_term() {
        let f0 = Tensor::zeros(&[1, 3, 3]);
        let f = Tensor::filled(&[1, 3, 3], 4.0);
        let tape = Tape::new();
        let (l, b) = motion_loss(tape.var(f), &f0, &[], &MaskGrid::full(3, 3), 20.0, 3).unwrap();
        assert_eq!((l.item(), b.mask), (0.0, 0.0));
    }

    #[test]
    fn fully_clipped_patch_is_degenerate() {
        let f = Tensor::zeros(&[1, 1, 1]);
        let tape = Tape::new();
        let terms = [term(Point::new(0, 0), Point::new(3, 0), LossKind::L1)];
        let err = loss_dynamic(tape.var(f.clone()), &f, &terms, &MaskGrid::full(1, 1), 0.0, 1)
            .unwrap_err();
        assert!(matches!(err, DragError::DegeneratePatch(0)));
    }

    #[test]
    fn adam_first_step_by_hand() {
        // f(x) = (x - 3)^2 at x = 1: g = -4; m = -0.4, v = 0.016;
        // m_hat = -4, v_hat = 16, step = 0.01 * -4 / (4 + 1e-8)
        let mut adam = Adam::new(0.01, 1);
        let mut x = [1.0];
        adam.step(&mut x, &[-4.0]).unwrap();
        let expected = 1.0 + 0.01 * 4.0 / (4.0 + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15, "{}", x[0]);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(0.01, 2);
        let mut x = [0.3, -0.2];
        for _ in 0..5 {
            adam.step(&mut x, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(x, [0.3, -0.2]);
    }

    #[test]
    fn mask_spec_parses_full_and_rects() {
        let full: MaskSpec = serde_json::from_str("\"full\"").unwrap();
        assert_eq!(full, MaskSpec::full());
        let rects: MaskSpec =
            serde_json::from_str(r#"[{"x0": 1, "y0": 2, "x1": 3, "y1": 4}]"#).unwrap();
        assert_eq!(rects, MaskSpec::Rects(vec![Rect { x0: 1, y0: 2, x1: 3, y1: 4 }]));
        assert!(serde_json::from_str::<MaskSpec>("\"empty\"").is_err());
        assert_eq!(rects.violations(2, 2).len(), 1);
    }
}
