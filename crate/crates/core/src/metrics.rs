//! Evaluation of finished drags: oracle distance, preservation proxy,
//! ablation variants and single-knob sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::DragSession;
use crate::error::{DragError, Result};
use crate::field::{semantic_oracle, LatentCode};
use crate::record::SessionStatus;
use crate::scenario::{ConfigOverrides, ScenarioFile};
use crate::supervision::MaskGrid;
use crate::tensor::Tensor;

/// Mean over handle points of the distance from the true content position
/// (the point's blob center) to the target. Never uses the tracked `p`.
pub fn mean_distance(scenario: &ScenarioFile, latent: &[f64]) -> Result<f64> {
    let spec = &scenario.scene;
    let w = LatentCode(latent.to_vec());
    let mut total = 0.0;
    for (i, pt) in scenario.points.iter().enumerate() {
        let blob = pt
            .blob
            .ok_or_else(|| DragError::UnsupportedScenario(scenario.id.clone(), i))?;
        let (x, y) = semantic_oracle(spec, &w, blob)?;
        total += pt.target.distance_to(x, y);
    }
    if scenario.points.is_empty() {
        return Err(DragError::UnsupportedScenario(scenario.id.clone(), 0));
    }
    Ok(total / scenario.points.len() as f64)
}

pub fn session_mean_distance(session: &DragSession) -> Result<f64> {
    mean_distance(&session.scenario, session.latent())
}

/// `1 - clamp(mean |F - F0| over preserved cells / range(F0), 0, 1)`.
/// The flag is true when nothing is preserved (the value is then 1 by
/// convention).
pub fn fidelity_proxy(f0: &Tensor, f: &Tensor, mask: &MaskGrid) -> Result<(f64, bool)> {
    let (c, h, w) = f0.chw()?;
    if f.shape() != f0.shape() || mask.width != w || mask.height != h {
        return Err(DragError::Shape(format!(
            "fidelity on {:?} vs {:?} with a {}x{} mask",
            f0.shape(),
            f.shape(),
            mask.width,
            mask.height
        )));
    }
    let preserved = mask.preserved();
    if preserved.is_empty() {
        return Ok((1.0, true));
    }
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        for &i in &preserved {
            total += (f.data()[ch * plane + i] - f0.data()[ch * plane + i]).abs();
        }
    }
    let mean = total / (c * preserved.len()) as f64;
    let (lo, hi) = f0
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let ratio = if range > 0.0 {
        mean / range
    } else if mean > 0.0 {
        1.0
    } else {
        0.0
    };
    Ok((1.0 - ratio.clamp(0.0, 1.0), false))
}

pub fn session_fidelity(session: &DragSession) -> Result<(f64, bool)> {
    fidelity_proxy(session.initial_field(), session.field(), session.mask())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scenario: String,
    pub variant: String,
    pub mean_distance: f64,
    pub fidelity_proxy: f64,
    /// Nothing was preserved, so the fidelity value is conventional.
    pub fidelity_unmasked: bool,
    pub steps_used: usize,
    pub status: SessionStatus,
    pub l2_steps: usize,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs one scenario under `overrides` (layered on the scenario's own
/// config) and evaluates it. Failures become rows with an error message.
pub fn evaluate(scenario: &ScenarioFile, variant: &str, overrides: &ConfigOverrides) -> EvalResult {
    let started = Instant::now();
    let outcome = (|| -> Result<EvalResult> {
        let config = scenario.config.merged(overrides).apply(&Default::default());
        let mut session = DragSession::start(scenario.clone(), config)?;
        let _ = session.run();
        let (fidelity, unmasked) = session_fidelity(&session)?;
        Ok(EvalResult {
            scenario: scenario.id.clone(),
            variant: variant.to_string(),
            mean_distance: session_mean_distance(&session)?,
            fidelity_proxy: fidelity,
            fidelity_unmasked: unmasked,
            steps_used: session.step_count(),
            status: session.status(),
            l2_steps: session
                .steps()
                .iter()
                .filter(|s| s.points.iter().any(|p| p.gate == Some(crate::supervision::LossKind::L2)))
                .count(),
            wall_time: 0.0,
            error: session.error().map(str::to_string),
        })
    })();
    let wall_time = started.elapsed().as_secs_f64();
    match outcome {
        Ok(r) => EvalResult { wall_time, ..r },
        Err(e) => EvalResult {
            scenario: scenario.id.clone(),
            variant: variant.to_string(),
            mean_distance: f64::NAN,
            fidelity_proxy: f64::NAN,
            fidelity_unmasked: false,
            steps_used: 0,
            status: SessionStatus::Failed,
            l2_steps: 0,
            wall_time,
            error: Some(e.to_string()),
        },
    }
}

/// The four ablation variants as `(label, overrides)`.
pub fn ablation_variants(steps: Option<usize>) -> Vec<(&'static str, ConfigOverrides)> {
    let v = |lambda: f64, tau: f64| ConfigOverrides {
        lambda: Some(lambda),
        tau: Some(tau),
        max_steps: steps,
        ..Default::default()
    };
    vec![
        ("full", v(0.3, 0.4)),
        ("no_dpt", v(1.0, 0.4)),
        ("no_cms", v(0.3, 0.0)),
        ("baseline", v(1.0, 0.0)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub rows: Vec<EvalResult>,
}

fn sorted(mut rows: Vec<EvalResult>) -> Vec<EvalResult> {
    rows.sort_by(|a, b| (&a.scenario, &a.variant).cmp(&(&b.scenario, &b.variant)));
    rows
}

pub fn ablate(suite: &[ScenarioFile], steps: Option<usize>) -> Result<Report> {
    if suite.is_empty() {
        return Err(DragError::Validation(vec!["suite must not be empty".into()]));
    }
    let variants = ablation_variants(steps);
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = suite
            .iter()
            .flat_map(|sc| variants.iter().map(move |(label, o)| (sc, *label, o)))
            .map(|(sc, label, o)| scope.spawn(move || evaluate(sc, label, o)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread")).collect()
    });
    Ok(Report {
        title: "ablation".into(),
        rows: sorted(rows),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Tau,
    Lambda,
}

impl std::str::FromStr for SweepParam {
    type Err = DragError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(Self::Tau),
            "lambda" => Ok(Self::Lambda),
            other => Err(DragError::Validation(vec![format!(
                "sweep parameter must be tau or lambda, got {other}"
            )])),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_distance: f64,
    pub fidelity_proxy: f64,
    pub failures: usize,
    pub runs: Vec<EvalResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: SweepParam,
    /// The other knob, held at 0.
    pub fixed: String,
    pub rows: Vec<SweepRow>,
}

/// Sweeping tau holds lambda at 0; sweeping lambda holds tau at 0.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    suite: &[ScenarioFile],
    steps: Option<usize>,
) -> Result<SweepReport> {
    if suite.is_empty() {
        return Err(DragError::Validation(vec!["suite must not be empty".into()]));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DragError::Validation(vec![format!("sweep value {v} outside [0, 1]")]));
    }
    let overrides = |v: f64| match param {
        SweepParam::Tau => ConfigOverrides {
            tau: Some(v),
            lambda: Some(0.0),
            max_steps: steps,
            ..Default::default()
        },
        SweepParam::Lambda => ConfigOverrides {
            lambda: Some(v),
            tau: Some(0.0),
            max_steps: steps,
            ..Default::default()
        },
    };
    let name = match param {
        SweepParam::Tau => "tau",
        SweepParam::Lambda => "lambda",
    };
    let rows = std::thread::scope(|scope| {
        let handles: Vec<Vec<_>> = values
            .iter()
            .map(|&v| {
                suite
                    .iter()
                    .map(|sc| {
                        let o = overrides(v);
                        scope.spawn(move || evaluate(sc, &format!("{name}={v}"), &o))
                    })
                    .collect()
            })
            .collect();
        values
            .iter()
            .zip(handles)
            .map(|(&value, hs)| {
                let runs = sorted(hs.into_iter().map(|h| h.join().expect("sweep thread")).collect());
                let ok: Vec<&EvalResult> = runs.iter().filter(|r| r.error.is_none()).collect();
                let n = ok.len().max(1) as f64;
                SweepRow {
                    value,
                    mean_distance: ok.iter().map(|r| r.mean_distance).sum::<f64>() / n,
                    fidelity_proxy: ok.iter().map(|r| r.fidelity_proxy).sum::<f64>() / n,
                    failures: runs.len() - ok.len(),
                    runs,
                }
            })
            .collect()
    });
    Ok(SweepReport {
        parameter: param,
        fixed: match param {
            SweepParam::Tau => "lambda=0".into(),
            SweepParam::Lambda => "tau=0".into(),
        },
        rows,
    })
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<26} {:<10} {:>10} {:>10} {:>6} {:>4} {:<10} {:>8}",
            "scenario", "variant", "MD(px)", "fidelity", "steps", "L2", "status", "time(s)"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<26} {:<10} {:>10.3} {:>10.5} {:>6} {:>4} {:<10} {:>8.2}{}",
                r.scenario,
                r.variant,
                r.mean_distance,
                r.fidelity_proxy,
                r.steps_used,
                r.l2_steps,
                r.status.as_str(),
                r.wall_time,
                r.error.as_ref().map(|e| format!("  error: {e}")).unwrap_or_default()
            );
        }
        out
    }
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let name = match self.parameter {
            SweepParam::Tau => "tau",
            SweepParam::Lambda => "lambda",
        };
        let _ = writeln!(out, "sweep over {name} ({})", self.fixed);
        let _ = writeln!(out, "{:>8} {:>10} {:>10} {:>9}", name, "MD(px)", "fidelity", "failures");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>8.2} {:>10.3} {:>10.5} {:>9}",
                r.value, r.mean_distance, r.fidelity_proxy, r.failures
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervision::{MaskSpec, Rect};

    #[test]
    fn fidelity_examples() {
        let f0 = Tensor::new(vec![1, 1, 4], vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let mask = MaskGrid::from_spec(
            &MaskSpec::Rects(vec![Rect { x0: 0, y0: 0, x1: 2, y1: 1 }]),
            4,
            1,
        )
        .unwrap();
        assert_eq!(fidelity_proxy(&f0, &f0, &mask).unwrap(), (1.0, false));

        // only the editable half changes
        let f = Tensor::new(vec![1, 1, 4], vec![9.0, -9.0, 2.0, 4.0]).unwrap();
        assert_eq!(fidelity_proxy(&f0, &f, &mask).unwrap(), (1.0, false));

        // preserved half shifted by the full range of F0
        let f = Tensor::new(vec![1, 1, 4], vec![0.0, 1.0, 6.0, 8.0]).unwrap();
        assert_eq!(fidelity_proxy(&f0, &f, &mask).unwrap(), (0.0, false));

        assert_eq!(fidelity_proxy(&f0, &f, &MaskGrid::full(4, 1)).unwrap(), (1.0, true));
    }

    #[test]
    fn mean_distance_averages_points() {
        let mut sc = crate::scenario::twin_distractor(0);
        sc.points[0].target = crate::geom::Point::new(sc.latent[0][0] as i64 + 2, sc.latent[0][1] as i64);
        let mut p1 = sc.points[0].clone();
        p1.blob = Some(2);
        p1.target = crate::geom::Point::new(sc.latent[2][0] as i64, sc.latent[2][1] as i64 + 4);
        sc.points.push(p1);
        let w = sc.initial_latent().0;
        assert!((mean_distance(&sc, &w).unwrap() - 3.0).abs() < 1e-12);
        sc.points[1].blob = None;
        assert!(matches!(
            mean_distance(&sc, &w),
            Err(DragError::UnsupportedScenario(_, 1))
        ));
    }
}
