//! The plain scheme without a learned tracker or a confidence gate: always
//! supervise with the current features, track by nearest feature match.
//!
//! Kept separate from [`crate::engine`] so the engine at `lambda = 1,
//! tau = 0` can be checked against it.

use crate::error::{DragError, Result};
use crate::field::FieldGenerator;
use crate::geom::Point;
use crate::record::{GateChoice, PointStep, SessionStatus, StepRecord};
use crate::scenario::ScenarioFile;
use crate::supervision::{supervision_step, Adam, LossKind, MaskGrid, PointTerm, SupervisionConfig};
use crate::tracker::{feature_distance, SearchPatch};

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRun {
    pub steps: Vec<StepRecord>,
    pub status: SessionStatus,
    pub latent: Vec<f64>,
}

/// Best match of `template` in the window around `p`. Similarity is
/// `exp(-mean |F(q) - f|)`. On ties the current position wins, then the
/// first cell in row-major order.
pub fn nearest_match(
    field: &crate::tensor::Tensor,
    p: Point,
    r2: usize,
    template: &[f64],
) -> Result<(Point, f64)> {
    let (_, h, w) = field.chw()?;
    let patch = SearchPatch::new(p, r2, w, h)?;
    let mut best: Option<(Point, f64)> = None;
    let mut at_p = None;
    for q in patch.cells() {
        let sim = (-feature_distance(field, q.x as usize, q.y as usize, template)).exp();
        if q == p {
            at_p = Some(sim);
        }
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((q, sim));
        }
    }
    let (q, s) = best.ok_or_else(|| DragError::Shape("empty search window".into()))?;
    Ok(match at_p {
        Some(v) if v == s => (p, s),
        _ => (q, s),
    })
}

pub fn run_baseline(scenario: &ScenarioFile, config: &SupervisionConfig) -> Result<BaselineRun> {
    scenario.validate()?;
    let spec = scenario.effective_scene();
    let generator = FieldGenerator::new(spec.clone())?;
    let mut w = scenario.initial_latent().0;
    let f0 = generator.generate_tensor(&w)?;
    let mask = MaskGrid::from_spec(&scenario.mask, spec.width, spec.height)?;
    let mut adam = Adam::new(config.lr, w.len());

    let n = scenario.points.len();
    let p0: Vec<Point> = scenario.points.iter().map(|p| p.handle).collect();
    let targets: Vec<Point> = scenario.points.iter().map(|p| p.target).collect();
    let templates = p0
        .iter()
        .map(|p| f0.pixel(p.x as usize, p.y as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut p = p0.clone();
    let mut s_prev: Vec<Option<f64>> = vec![None; n];
    let mut s1: Vec<Option<f64>> = vec![None; n];
    let mut done: Vec<bool> = (0..n)
        .map(|i| p[i].distance(targets[i]) <= config.convergence_radius)
        .collect();

    let mut steps = Vec::new();
    let mut status = if done.iter().all(|d| *d) {
        SessionStatus::Converged
    } else if config.max_steps == 0 {
        SessionStatus::MaxSteps
    } else {
        SessionStatus::Running
    };
    while status == SessionStatus::Running {
        let terms: Vec<PointTerm> = (0..n)
            .filter(|&i| !done[i])
            .map(|i| PointTerm {
                index: i,
                p0: p0[i],
                p: p[i],
                t: targets[i],
                kind: LossKind::L1,
            })
            .collect();
        let loss = supervision_step(
            &generator, &mut w, &mut adam, &f0, &terms, &mask, config.eta, config.r1,
        )?;
        let field = generator.generate_tensor(&w)?;
        let mut motion = loss.breakdown.points.iter();
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            if done[i] {
                points.push(PointStep {
                    p: p[i],
                    s: None,
                    gate: None,
                    gate_s: None,
                    s1: s1[i],
                    motion_loss: 0.0,
                    converged: true,
                });
                continue;
            }
            let gate_s = s_prev[i];
            let (q, s) = nearest_match(&field, p[i], config.r2, &templates[i])?;
            p[i] = q;
            s_prev[i] = Some(s);
            s1[i].get_or_insert(s);
            done[i] = q.distance(targets[i]) <= config.convergence_radius;
            points.push(PointStep {
                p: q,
                s: Some(s),
                gate: Some(LossKind::L1),
                gate_s,
                s1: s1[i],
                motion_loss: motion.next().copied().unwrap_or(0.0),
                converged: done[i],
            });
        }
        let step = steps.len() + 1;
        if done.iter().all(|d| *d) {
            status = SessionStatus::Converged;
        } else if step >= config.max_steps {
            status = SessionStatus::MaxSteps;
        }
        steps.push(StepRecord {
            step,
            gate_choice: if terms.is_empty() { GateChoice::None } else { GateChoice::L1 },
            loss: loss.breakdown.total,
            mask_loss: loss.breakdown.mask,
            points,
            latent: w.clone(),
        });
    }
    Ok(BaselineRun {
        steps,
        status,
        latent: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::single_blob;

    #[test]
    fn nearest_match_finds_the_template_pixel() {
        let sc = single_blob(0);
        let g = FieldGenerator::new(sc.effective_scene()).unwrap();
        let f = g.generate_tensor(&sc.initial_latent().0).unwrap();
        let h = sc.points[0].handle;
        let t = f.pixel(h.x as usize, h.y as usize).unwrap();
        let start = Point::new(h.x + 3, h.y - 2);
        let (q, s) = nearest_match(&f, start, 12, &t).unwrap();
        assert_eq!(q, h);
        assert_eq!(s, 1.0);
    }
}
