//! The drag loop: gate, supervise, regenerate, track, repeat.

use std::time::Instant;

use crate::error::{DragError, Result};
use crate::field::FieldGenerator;
use crate::geom::Point;
use crate::record::{
    GateChoice, PointStep, RunRecord, RunTimings, SessionStatus, StepRecord, TrackerTrace,
    RECORD_VERSION,
};
use crate::scenario::ScenarioFile;
use crate::supervision::{
    select_loss, supervision_step, Adam, LossKind, MaskGrid, PointTerm, SupervisionConfig,
};
use crate::tensor::Tensor;
use crate::tracker::{score_map, track_update_from, train_tracker, SearchPatch, TrackerModel};

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEntry {
    pub step: usize,
    pub p: Point,
    pub s: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DragPointState {
    pub p0: Point,
    pub p: Point,
    pub t: Point,
    /// Initial-field features at `p0`.
    pub template: Vec<f64>,
    pub tracker: TrackerModel,
    pub s1: Option<f64>,
    pub s_latest: Option<f64>,
    pub converged: bool,
    pub trajectory: Vec<TrajectoryEntry>,
    /// Score grid that placed `p` on the latest step.
    pub last_scores: Option<(Tensor, SearchPatch)>,
}

pub struct DragSession {
    pub scenario: ScenarioFile,
    pub config: SupervisionConfig,
    generator: FieldGenerator,
    w: Vec<f64>,
    f0: Tensor,
    field: Tensor,
    mask: MaskGrid,
    pub points: Vec<DragPointState>,
    step: usize,
    status: SessionStatus,
    adam: Adam,
    steps: Vec<StepRecord>,
    trackers: Vec<TrackerTrace>,
    timings: RunTimings,
    error: Option<String>,
}

impl std::fmt::Debug for DragSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DragSession")
            .field("scenario", &self.scenario.id)
            .field("step", &self.step)
            .field("status", &self.status)
            .finish_non_exhaustive()
    }
}

impl DragSession {
    /// Validates the scenario, builds the initial field and trains one
    /// tracker per handle point.
    pub fn start(scenario: ScenarioFile, config: SupervisionConfig) -> Result<Self> {
        let mut violations = scenario.violations();
        // the scenario's own config was checked above; this is the one in use
        violations.extend(config.violations());
        violations.dedup();
        if !violations.is_empty() {
            return Err(DragError::Validation(violations));
        }
        let spec = scenario.effective_scene();
        let generator = FieldGenerator::new(spec.clone())?;
        let w = scenario.initial_latent().0;
        let f0 = generator.generate_tensor(&w)?;
        let mask = MaskGrid::from_spec(&scenario.mask, spec.width, spec.height)?;

        let mut points = Vec::with_capacity(scenario.points.len());
        let mut trackers = Vec::new();
        let mut timings = RunTimings::default();
        for (i, sp) in scenario.points.iter().enumerate() {
            let started = Instant::now();
            let tracker = train_tracker(&f0, sp.handle, config.r2, &config.tracker)?;
            timings.tracker_training_secs.push(started.elapsed().as_secs_f64());
            let patch = tracker.patch.unwrap_or(SearchPatch::new(
                sp.handle,
                config.r2,
                spec.width,
                spec.height,
            )?);
            trackers.push(TrackerTrace {
                point: i,
                z: tracker.z.data().to_vec(),
                losses: tracker.train_trace.clone(),
                snapshots: tracker.snapshots.clone(),
                patch: [patch.x0, patch.y0, patch.width, patch.height],
            });
            let converged = sp.handle.distance(sp.target) <= config.convergence_radius;
            points.push(DragPointState {
                p0: sp.handle,
                p: sp.handle,
                t: sp.target,
                template: f0.pixel(sp.handle.x as usize, sp.handle.y as usize)?,
                tracker,
                s1: None,
                s_latest: None,
                converged,
                trajectory: vec![TrajectoryEntry {
                    step: 0,
                    p: sp.handle,
                    s: None,
                }],
                last_scores: None,
            });
        }
        let status = if points.iter().all(|p| p.converged) {
            SessionStatus::Converged
        } else if config.max_steps == 0 {
            SessionStatus::MaxSteps
        } else {
            SessionStatus::Running
        };
        Ok(Self {
            adam: Adam::new(config.lr, w.len()),
            field: f0.clone(),
            scenario,
            config,
            generator,
            w,
            f0,
            mask,
            points,
            step: 0,
            status,
            steps: Vec::new(),
            trackers,
            timings,
            error: None,
        })
    }

    /// Starts with the scenario's own config.
    pub fn from_scenario(scenario: ScenarioFile) -> Result<Self> {
        let config = scenario.resolved_config();
        Self::start(scenario, config)
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn latent(&self) -> &[f64] {
        &self.w
    }

    pub fn initial_field(&self) -> &Tensor {
        &self.f0
    }

    pub fn field(&self) -> &Tensor {
        &self.field
    }

    pub fn mask(&self) -> &MaskGrid {
        &self.mask
    }

    pub fn generator(&self) -> &FieldGenerator {
        &self.generator
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn timings(&self) -> &RunTimings {
        &self.timings
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    pub fn pause(&mut self) {
        if self.status == SessionStatus::Running {
            self.status = SessionStatus::Paused;
        }
    }

    pub fn resume(&mut self) {
        if self.status == SessionStatus::Paused {
            self.status = SessionStatus::Running;
        }
    }

    /// Current fused score grid of point `i` over its search window.
    pub fn score_grid(&self, i: usize) -> Result<(Tensor, SearchPatch)> {
        let pt = self
            .points
            .get(i)
            .ok_or_else(|| DragError::Shape(format!("no point {i}")))?;
        score_map(
            &self.field,
            pt.p,
            self.config.r2,
            &pt.template,
            &pt.tracker,
            self.config.lambda,
        )
    }

    /// One drag iteration. A paused session is resumed.
    pub fn step(&mut self) -> Result<StepRecord> {
        self.resume();
        if self.status != SessionStatus::Running {
            return Err(DragError::InvalidState(self.status.as_str().into()));
        }
        let started = Instant::now();
        match self.advance() {
            Ok(rec) => {
                self.timings.step_secs.push(started.elapsed().as_secs_f64());
                Ok(rec)
            }
            Err(e) => {
                self.status = SessionStatus::Failed;
                self.error = Some(e.to_string());
                Err(e)
            }
        }
    }

    fn advance(&mut self) -> Result<StepRecord> {
        let cfg = &self.config;
        let gates: Vec<Option<LossKind>> = self
            .points
            .iter()
            .map(|pt| (!pt.converged).then(|| select_loss(pt.s_latest, pt.s1, cfg.tau)))
            .collect();
        let terms: Vec<PointTerm> = self
            .points
            .iter()
            .zip(&gates)
            .enumerate()
            .filter_map(|(index, (pt, g))| {
                g.map(|kind| PointTerm {
                    index,
                    p0: pt.p0,
                    p: pt.p,
                    t: pt.t,
                    kind,
                })
            })
            .collect();
        let gate_inputs: Vec<Option<f64>> = self.points.iter().map(|p| p.s_latest).collect();

        let loss = supervision_step(
            &self.generator,
            &mut self.w,
            &mut self.adam,
            &self.f0,
            &terms,
            &self.mask,
            cfg.eta,
            cfg.r1,
        )?;
        self.field = self.generator.generate_tensor(&self.w)?;
        self.step += 1;

        let mut motion = loss.breakdown.points.iter();
        let mut records = Vec::with_capacity(self.points.len());
        for (i, pt) in self.points.iter_mut().enumerate() {
            if pt.converged {
                records.push(PointStep {
                    p: pt.p,
                    s: None,
                    gate: None,
                    gate_s: None,
                    s1: pt.s1,
                    motion_loss: 0.0,
                    converged: true,
                });
                continue;
            }
            let (grid, patch) = score_map(
                &self.field,
                pt.p,
                cfg.r2,
                &pt.template,
                &pt.tracker,
                cfg.lambda,
            )?;
            let (p, s) = track_update_from(&grid, &patch, pt.p);
            pt.last_scores = Some((grid, patch));
            pt.p = p;
            pt.s_latest = Some(s);
            pt.s1.get_or_insert(s);
            pt.converged = p.distance(pt.t) <= cfg.convergence_radius;
            pt.trajectory.push(TrajectoryEntry {
                step: self.step,
                p,
                s: Some(s),
            });
            records.push(PointStep {
                p,
                s: Some(s),
                gate: gates[i],
                gate_s: gate_inputs[i],
                s1: pt.s1,
                motion_loss: motion.next().copied().unwrap_or(0.0),
                converged: pt.converged,
            });
        }

        if self.points.iter().all(|p| p.converged) {
            self.status = SessionStatus::Converged;
        } else if self.step >= cfg.max_steps {
            self.status = SessionStatus::MaxSteps;
        }
        let rec = StepRecord {
            step: self.step,
            gate_choice: GateChoice::summarize(gates.iter().flatten().copied()),
            loss: loss.breakdown.total,
            mask_loss: loss.breakdown.mask,
            points: records,
            latent: self.w.clone(),
        };
        self.steps.push(rec.clone());
        Ok(rec)
    }

    /// Steps until a terminal status, or until `should_pause` returns true
    /// between two steps.
    pub fn run_until(&mut self, mut should_pause: impl FnMut(&StepRecord) -> bool) -> Result<SessionStatus> {
        self.resume();
        while self.status == SessionStatus::Running {
            let rec = self.step()?;
            if should_pause(&rec) && self.status == SessionStatus::Running {
                self.status = SessionStatus::Paused;
            }
        }
        Ok(self.status)
    }

    pub fn run(&mut self) -> Result<SessionStatus> {
        self.run_until(|_| false)
    }

    pub fn record(&self) -> RunRecord {
        RunRecord {
            record_version: RECORD_VERSION,
            scenario: self.scenario.clone(),
            config: self.config.clone(),
            trackers: self.trackers.clone(),
            steps: self.steps.clone(),
            status: self.status,
            error: self.error.clone(),
        }
    }
}

/// Starts a session and runs it to a terminal status. Failures after
/// initialization are kept in the returned record rather than raised.
pub fn run_scenario(scenario: ScenarioFile, config: SupervisionConfig) -> Result<DragSession> {
    let mut s = DragSession::start(scenario, config)?;
    let _ = s.run();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{constant_field, single_blob};

    #[test]
    fn empty_point_list_is_rejected() {
        let mut s = single_blob(0);
        s.points.clear();
        let err = DragSession::from_scenario(s).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn constant_field_never_moves() {
        let mut s = DragSession::from_scenario(constant_field(0)).unwrap();
        assert_eq!(s.run().unwrap(), SessionStatus::MaxSteps);
        assert_eq!(s.steps().len(), 5);
        for rec in s.steps() {
            assert_eq!(rec.loss, 0.0);
            assert_eq!(rec.points[0].p, Point::new(32, 32));
        }
    }

    #[test]
    fn zero_max_steps_is_immediately_terminal() {
        let sc = single_blob(0);
        let cfg = SupervisionConfig {
            max_steps: 0,
            ..sc.resolved_config()
        };
        let mut s = DragSession::start(sc, cfg).unwrap();
        let w0 = s.latent().to_vec();
        assert_eq!(s.run().unwrap(), SessionStatus::MaxSteps);
        assert_eq!(s.latent(), &w0[..]);
        assert!(s.steps().is_empty());
        assert!(matches!(s.step(), Err(DragError::InvalidState(_))));
    }

    #[test]
    fn first_step_is_forced_dynamic_and_sets_s1() {
        let mut s = DragSession::from_scenario(single_blob(0)).unwrap();
        let rec = s.step().unwrap();
        assert_eq!(rec.gate_choice, GateChoice::L1);
        assert!(rec.points[0].s1.unwrap() > 0.0);
        assert_eq!(rec.points[0].s1, rec.points[0].s);
    }

    #[test]
    fn pause_stops_between_steps() {
        let mut s = DragSession::from_scenario(single_blob(0)).unwrap();
        let status = s.run_until(|r| r.step == 3).unwrap();
        assert_eq!(status, SessionStatus::Paused);
        assert_eq!(s.step_count(), 3);
        s.step().unwrap();
        assert_eq!(s.status(), SessionStatus::Running);
    }
}
