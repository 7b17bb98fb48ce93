//! One thread per session. It owns the [`DragSession`] and is the only
//! writer; readers see whatever it last published.

use std::path::PathBuf;
use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::Arc;

use pointdrag::engine::DragSession;
use pointdrag::geom::Point;
use pointdrag::record::{RunRecord, SessionStatus, StepRecord};
use pointdrag::tensor::Tensor;
use pointdrag::tracker::SearchPatch;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Command {
    Step { n: usize },
    Run,
    Pause,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointView {
    pub p0: Point,
    pub p: Point,
    pub t: Point,
    pub s: Option<f64>,
    pub s1: Option<f64>,
    pub converged: bool,
    pub trajectory: Vec<Point>,
}

/// Step-boundary view of a session.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub scenario: String,
    pub created_at: u64,
    pub status: SessionStatus,
    pub step: usize,
    pub points: Vec<PointView>,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Step { record: StepRecord },
    Status { status: SessionStatus },
}

/// Everything readers need, replaced wholesale after each step.
pub struct Snapshot {
    pub state: SessionState,
    pub field: Tensor,
    pub scores: Vec<(Tensor, SearchPatch)>,
    pub record: RunRecord,
}

pub fn snapshot(id: &str, created_at: u64, session: &DragSession) -> Snapshot {
    let points = session
        .points
        .iter()
        .map(|pt| PointView {
            p0: pt.p0,
            p: pt.p,
            t: pt.t,
            s: pt.s_latest,
            s1: pt.s1,
            converged: pt.converged,
            trajectory: pt.trajectory.iter().map(|e| e.p).collect(),
        })
        .collect();
    let scores = (0..session.points.len())
        .filter_map(|i| match &session.points[i].last_scores {
            Some(g) => Some(g.clone()),
            None => session.score_grid(i).ok(),
        })
        .collect();
    Snapshot {
        state: SessionState {
            id: id.to_string(),
            scenario: session.scenario.id.clone(),
            created_at,
            status: session.status(),
            step: session.step_count(),
            points,
            steps: session.steps().to_vec(),
            error: session.error().map(str::to_string),
        },
        field: session.field().clone(),
        scores,
        record: session.record(),
    }
}

pub struct Worker {
    pub id: String,
    pub created_at: u64,
    pub session: DragSession,
    pub commands: Receiver<Command>,
    pub published: watch::Sender<Arc<Snapshot>>,
    pub events: broadcast::Sender<Event>,
    pub out_dir: Option<PathBuf>,
}

impl Worker {
    fn publish(&self) {
        self.published
            .send_replace(Arc::new(snapshot(&self.id, self.created_at, &self.session)));
    }

    fn apply(&mut self, cmd: Command, pending: &mut usize, run: &mut bool) {
        if self.session.status().is_terminal() {
            return;
        }
        match cmd {
            Command::Step { n } => *pending += n,
            Command::Run => *run = true,
            Command::Pause => {
                *pending = 0;
                *run = false;
                self.session.pause();
                self.publish();
            }
        }
    }

    fn finish(&self) {
        let _ = self.events.send(Event::Status {
            status: self.session.status(),
        });
        if let Some(dir) = &self.out_dir {
            let path = dir.join(format!("{}.json", self.id));
            if let Err(e) = std::fs::create_dir_all(dir)
                .map_err(Into::into)
                .and_then(|_| self.session.record().save(&path))
            {
                eprintln!("could not write {}: {e}", path.display());
            }
        }
    }

    pub fn run(mut self) {
        let (mut pending, mut run) = (0usize, false);
        loop {
            if pending == 0 && !run {
                match self.commands.recv() {
                    Ok(cmd) => self.apply(cmd, &mut pending, &mut run),
                    Err(_) => return,
                }
            }
            loop {
                match self.commands.try_recv() {
                    Ok(cmd) => self.apply(cmd, &mut pending, &mut run),
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return,
                }
            }
            if pending == 0 && !run {
                continue;
            }
            let result = self.session.step();
            pending = pending.saturating_sub(1);
            let terminal = self.session.status().is_terminal();
            if !terminal && pending == 0 && !run {
                self.session.pause();
            }
            self.publish();
            if let Ok(record) = result {
                let _ = self.events.send(Event::Step { record });
            }
            if terminal {
                pending = 0;
                run = false;
                self.finish();
            }
        }
    }
}
