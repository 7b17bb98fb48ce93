//! `pointdrag` command line.
//!
//! Exit status: 0 on success, 1 for usage or validation errors, 2 when a
//! run fails at runtime or ends with status `failed`.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pointdrag::engine::DragSession;
use pointdrag::field::FieldGenerator;
use pointdrag::metrics::{ablate, sweep, SweepParam};
use pointdrag::record::{write_npy, RunRecord, SessionStatus};
use pointdrag::render::{draw_trajectories, field_image};
use pointdrag::scenario::{self, ConfigOverrides, ScenarioFile};
use pointdrag::DragError;

#[derive(Parser)]
#[command(name = "pointdrag", version, about = "Point-based dragging on synthetic feature fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    r1: Option<usize>,
    #[arg(long)]
    r2: Option<usize>,
    /// Replaces the scenario's noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, mut sc: ScenarioFile) -> ScenarioFile {
        let o = ConfigOverrides {
            max_steps: self.steps,
            tau: self.tau,
            lambda: self.lambda,
            eta: self.eta,
            r1: self.r1,
            r2: self.r2,
            ..Default::default()
        };
        sc.config = sc.config.merged(&o);
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        sc
    }
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "POINTDRAG_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario file from a named template.
    GenScenario {
        /// Template name, optionally with an index suffix (`twin_distractor_2`).
        template: String,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run one drag and write its record and images.
    Run {
        /// Scenario file path or template name.
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write wall-clock timings (these differ between runs).
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run the four ablation variants over a suite.
    Ablate {
        #[arg(long, default_value = "default")]
        suite: String,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Sweep tau (lambda held at 0) or lambda (tau held at 0) over a suite.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
        values: Vec<f64>,
        #[arg(long, default_value = "drift")]
        suite: String,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Render one step of a record with trajectory overlay.
    Render {
        #[arg(long)]
        record: PathBuf,
        /// 0 is the initial field; defaults to the last step.
        #[arg(long)]
        step: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Start the session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Where finished session records are written.
        #[arg(long, env = "POINTDRAG_OUT")]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<DragError> for Failure {
    fn from(e: DragError) -> Self {
        match e {
            DragError::Validation(_) | DragError::Json(_) => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn load_scenario(arg: &str) -> Result<ScenarioFile, Failure> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return ScenarioFile::from_json(&text)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())));
    }
    scenario::template(arg).ok_or_else(|| {
        Failure::Invalid(format!(
            "{arg} is neither a scenario file nor a template ({})",
            scenario::TEMPLATES.join(", ")
        ))
    })
}

fn load_suite(name: &str) -> Result<Vec<ScenarioFile>, Failure> {
    scenario::suite(name).ok_or_else(|| {
        Failure::Invalid(format!("unknown suite {name} ({})", scenario::SUITES.join(", ")))
    })
}

fn write(path: PathBuf, bytes: impl AsRef<[u8]>) -> CmdResult {
    fs::write(&path, bytes)?;
    println!("{}", path.display());
    Ok(())
}

fn gen_scenario(template: &str, overrides: &Overrides, out: &Path) -> CmdResult {
    let sc = scenario::template(template)
        .ok_or_else(|| Failure::Invalid(format!("unknown template {template}")))?;
    let sc = overrides.apply(sc);
    sc.validate()?;
    fs::create_dir_all(out)?;
    write(out.join(format!("{}.scenario.json", sc.id)), sc.to_json()?)
}

fn run(arg: &str, overrides: &Overrides, timings: bool, out: &Path) -> CmdResult {
    let sc = overrides.apply(load_scenario(arg)?);
    sc.validate()?;
    let id = sc.id.clone();
    let mut session = DragSession::from_scenario(sc)?;
    let result = session.run();
    fs::create_dir_all(out)?;

    write(out.join(format!("{id}.record.json")), session.record().to_json()?)?;
    write(out.join(format!("{id}.before.png")), field_image(session.initial_field())?.png_bytes()?)?;
    let mut after = field_image(session.field())?;
    let paths: Vec<_> = session
        .points
        .iter()
        .map(|pt| (pt.trajectory.iter().map(|e| e.p).collect(), pt.t))
        .collect();
    draw_trajectories(&mut after, &paths);
    write(out.join(format!("{id}.after.png")), after.png_bytes()?)?;
    let npy = out.join(format!("{id}.field.npy"));
    write_npy(&npy, session.field().shape(), session.field().data())?;
    println!("{}", npy.display());
    if timings {
        let t = serde_json::to_string_pretty(session.timings()).map_err(DragError::from)?;
        write(out.join(format!("{id}.timings.json")), t)?;
    }

    let status = result?;
    eprintln!("{id}: {} after {} steps", status.as_str(), session.step_count());
    match status {
        SessionStatus::Failed => Err(Failure::Runtime(
            session.error().unwrap_or("drag failed").to_string(),
        )),
        _ => Ok(()),
    }
}

fn run_ablate(suite: &str, steps: Option<usize>, out: &Path) -> CmdResult {
    let report = ablate(&load_suite(suite)?, steps)?;
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&report).map_err(DragError::from)?;
    write(out.join(format!("ablation_{suite}.json")), json)?;
    write(out.join(format!("ablation_{suite}.txt")), report.to_text())
}

fn run_sweep(param: &str, values: &[f64], suite: &str, steps: Option<usize>, out: &Path) -> CmdResult {
    let p: SweepParam = param.parse()?;
    let report = sweep(p, values, &load_suite(suite)?, steps)?;
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&report).map_err(DragError::from)?;
    write(out.join(format!("sweep_{param}_{suite}.json")), json)?;
    write(out.join(format!("sweep_{param}_{suite}.txt")), report.to_text())
}

fn render(record: &Path, step: Option<usize>, out: &Path) -> CmdResult {
    let text = fs::read_to_string(record)?;
    let rec = RunRecord::from_json(&text)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", record.display())))?;
    let n = step.unwrap_or(rec.steps.len());
    if n > rec.steps.len() {
        return Err(Failure::Invalid(format!(
            "step {n} out of range, the record has {} steps",
            rec.steps.len()
        )));
    }
    let latent = match n {
        0 => rec.scenario.initial_latent().0,
        _ => rec.steps[n - 1].latent.clone(),
    };
    let field = FieldGenerator::new(rec.scenario.effective_scene())?.generate_tensor(&latent)?;
    let mut img = field_image(&field)?;
    let paths: Vec<_> = (0..rec.scenario.points.len())
        .map(|i| (rec.trajectory(i)[..=n].to_vec(), rec.scenario.points[i].target))
        .collect();
    draw_trajectories(&mut img, &paths);
    fs::create_dir_all(out)?;
    write(out.join(format!("{}.step{n:04}.png", rec.scenario.id)), img.png_bytes()?)
}

fn serve(port: u16, out: Option<PathBuf>) -> CmdResult {
    let rt = tokio::runtime::Runtime::new()?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    rt.block_on(pointdrag_service::serve(addr, out))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::GenScenario { template, overrides, out } => gen_scenario(template, overrides, &out.out),
        Command::Run { scenario, overrides, timings, out } => run(scenario, overrides, *timings, &out.out),
        Command::Ablate { suite, steps, out } => run_ablate(suite, *steps, &out.out),
        Command::Sweep { param, values, suite, steps, out } => run_sweep(param, values, suite, *steps, &out.out),
        Command::Render { record, step, out } => render(record, *step, &out.out),
        Command::Serve { port, out } => serve(*port, out.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
