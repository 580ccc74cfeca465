//! `procabs` command-line driver.
//!
//! Exit codes: 0 success, 2 invalid configuration or input, 3 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use procabs::blockworld::{f1_score, load_stimuli, render_ascii, stimulus_towers, Scene, SceneConfig, TowerStimulus};
use procabs::dsl::{execute, scene_program, Library};
use procabs::library_learning::{FragmentLevel, LearningConfig, SizeRule};
use procabs::simulation::{
    generate_trial_sequence_for, learn_sequence, run_experiment, sequence_seeds, Environment, Experiment,
    ExperimentConfig, ExperimentFiles, LibraryEntry, TrialSequence,
};
use procabs::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "procabs", version, about = "Procedural abstraction and convention formation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate seeded trial sequences, one JSON document per line.
    GenSeq(GenSeqArgs),
    /// Run library learning alone over the scenes of each sequence.
    Learn(LearnArgs),
    /// Run the full Architect/Builder experiment grid.
    Simulate(SimulateArgs),
    /// Draw a target scene next to a built scene.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct GenSeqArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 49)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stimuli: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    /// File written by `gen-seq`.
    #[arg(long)]
    sequences: PathBuf,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.5)]
    w: f64,
    #[arg(long, default_value = "body_token_sum")]
    size_rule: SizeRule,
    #[arg(long, default_value_t = 3)]
    max_fragments_per_trial: usize,
    #[arg(long)]
    stimuli: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [1.5, 3.2, 9.6])]
    w: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 0.3, 0.8])]
    beta: Vec<f64>,
    #[arg(long, allow_negative_numbers = true, default_value_t = 5.0)]
    alpha: f64,
    #[arg(long, default_value_t = 49)]
    n_sequences: usize,
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    stimuli: Option<PathBuf>,
    #[arg(long, default_value = "body_token_sum")]
    size_rule: SizeRule,
    #[arg(long, default_value_t = 3)]
    max_fragments_per_trial: usize,
    #[arg(long, default_value_t = 4)]
    max_candidates: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    null_meaning: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["scene", "stimuli", "trace"])))]
struct RenderArgs {
    /// Scene JSON file; the built side is its canonical program's output
    /// unless `--built` is given.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    built: Option<PathBuf>,
    /// Render every stimulus tower. Without a file, the defaults are used.
    #[arg(long, num_args = 0..=1, default_missing_value = "-")]
    stimuli: Option<PathBuf>,
    /// `trace.json` written by `simulate`.
    #[arg(long, requires = "trial")]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    dyad: usize,
    /// One-based trial index within the dyad.
    #[arg(long)]
    trial: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenSeq(a) => gen_seq(&a),
        Command::Learn(a) => learn(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Render(a) => render(&a).map(|text| print!("{text}")),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}

fn stimuli_or_default(path: Option<&Path>) -> Result<Vec<TowerStimulus>> {
    match path {
        Some(p) if p != Path::new("-") => load_stimuli(p),
        _ => Ok(stimulus_towers()),
    }
}

fn gen_seq(a: &GenSeqArgs) -> Result<()> {
    let env = Environment::new(stimuli_or_default(a.stimuli.as_deref())?, SceneConfig::default())?;
    let ids = env.tower_ids();
    let mut text = String::new();
    for s in sequence_seeds(a.seed, a.count) {
        text += &serde_json::to_string(&generate_trial_sequence_for(s, &ids))?;
        text.push('\n');
    }
    std::fs::write(&a.out, text)?;
    Ok(())
}

fn read_sequences(path: &Path) -> Result<Vec<TrialSequence>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Serialize)]
struct LearnOutput {
    w: f64,
    size_rule: SizeRule,
    max_fragments_per_trial: usize,
    sequences: Vec<LearnedSequence>,
}

#[derive(Serialize)]
struct LearnedSequence {
    seed: u64,
    trials: Vec<LearnedTrial>,
}

#[derive(Serialize)]
struct LearnedTrial {
    trial: usize,
    left: String,
    right: String,
    library: Vec<LibraryEntry>,
    /// Share of library fragments per level; all zeros for an empty library.
    proportions: std::collections::BTreeMap<&'static str, f64>,
}

fn learn(a: &LearnArgs) -> Result<()> {
    let lcfg = LearningConfig {
        w: a.w,
        max_fragments_per_trial: a.max_fragments_per_trial,
        size_rule: a.size_rule,
    };
    lcfg.validate()?;
    let env = Environment::new(stimuli_or_default(a.stimuli.as_deref())?, SceneConfig::default())?;
    let sequences = read_sequences(&a.sequences)?;
    let ids = env.tower_ids();
    let mut out = LearnOutput {
        w: a.w,
        size_rule: a.size_rule,
        max_fragments_per_trial: a.max_fragments_per_trial,
        sequences: Vec::new(),
    };
    for seq in &sequences {
        procabs::simulation::check_sequence(seq, &ids)?;
        let traj = learn_sequence(seq, &env, &lcfg)?;
        let mut trials = Vec::new();
        for (t, spec) in seq.trials.iter().enumerate() {
            let library: Vec<LibraryEntry> = traj
                .entries
                .iter()
                .filter(|e| e.adopted_trial <= t + 1)
                .cloned()
                .collect();
            let proportions = FragmentLevel::ALL
                .iter()
                .map(|&lvl| {
                    let n = library.iter().filter(|e| e.level == lvl).count();
                    let p = if library.is_empty() { 0.0 } else { n as f64 / library.len() as f64 };
                    (lvl.name(), p)
                })
                .collect();
            trials.push(LearnedTrial {
                trial: t + 1,
                left: spec.left.clone(),
                right: spec.right.clone(),
                library,
                proportions,
            });
        }
        out.sequences.push(LearnedSequence { seed: seq.seed, trials });
    }
    std::fs::write(&a.out, serde_json::to_string_pretty(&out)? + "\n")?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(Error::config("jobs", "must be at least 1"));
    }
    let cfg = ExperimentConfig {
        ws: a.w.clone(),
        betas: a.beta.clone(),
        alpha: a.alpha,
        n_sequences: a.n_sequences,
        iterations: a.iterations,
        master_seed: a.master_seed,
        max_fragments_per_trial: a.max_fragments_per_trial,
        size_rule: a.size_rule,
        max_candidates: a.max_candidates,
        null_meaning: a.null_meaning,
        scene: SceneConfig::default(),
        stimuli: stimuli_or_default(a.stimuli.as_deref())?,
    };
    cfg.validate()?;
    let exp = run_experiment(&cfg, a.jobs)?;
    ExperimentFiles::render(&exp)?.write(&a.out_dir)
}

/// Target and built scenes side by side, top row first, with an F1 line.
fn side_by_side(title: &str, target: &Scene, built: &Scene) -> String {
    let left: Vec<String> = render_ascii(target).lines().map(str::to_string).collect();
    let right: Vec<String> = render_ascii(built).lines().map(str::to_string).collect();
    let lw = left.iter().map(String::len).max().unwrap_or(0).max("target".len());
    let rows = left.len().max(right.len());
    let mut out = format!("{title}\n{:<lw$}   built\n", "target");
    for i in 0..rows {
        let l = left.get(i).map_or("", String::as_str);
        let r = right.get(i).map_or("", String::as_str);
        out += &format!("{l:<lw$}   {r}\n");
    }
    out += &format!("F1 = {:.3}\n", f1_score(target, built));
    out
}

fn build_canonical(scene: &Scene) -> Result<Scene> {
    let (start, prog) = scene_program(scene);
    let grid = procabs::blockworld::GridState::new(scene.width, scene.height);
    let (grid, _) = execute(&prog, &Library::new(), start, &grid)?;
    Ok(grid.to_scene())
}

fn render(a: &RenderArgs) -> Result<String> {
    if let Some(path) = &a.scene {
        let target = Scene::load(path)?;
        let built = match &a.built {
            Some(b) => Scene::load(b)?,
            None => build_canonical(&target)?,
        };
        return Ok(side_by_side(&path.display().to_string(), &target, &built));
    }
    if let Some(path) = &a.trace {
        let trial = a.trial.ok_or_else(|| Error::config("trial", "a trial index is required"))?;
        let text = std::fs::read_to_string(path)?;
        let exp: Experiment = serde_json::from_str(&text)?;
        let trace = exp.traces.get(a.dyad).ok_or_else(|| {
            Error::config("dyad", format!("index {} out of range (0..{})", a.dyad, exp.traces.len()))
        })?;
        let rec = trial
            .checked_sub(1)
            .and_then(|i| trace.records.get(i))
            .ok_or_else(|| Error::config("trial", format!("index {trial} out of range (1..={})", trace.records.len())))?;
        let env = Environment::new(exp.config.stimuli.clone(), exp.config.scene)?;
        let (target, _, _) = env.trial_scene(&rec.left, &rec.right)?;
        let built = Scene::new(target.width, target.height, rec.builder_placements.iter().copied());
        let title = format!(
            "dyad {} trial {}: {} / {}  program {}",
            a.dyad, trial, rec.left, rec.right, rec.chosen_program
        );
        return Ok(side_by_side(&title, target, &built));
    }
    let towers = stimuli_or_default(a.stimuli.as_deref())?;
    let mut out = String::new();
    for t in &towers {
        t.validate()?;
        let scene = t.as_scene();
        out += &side_by_side(&t.id, &scene, &build_canonical(&scene)?);
        out.push('\n');
    }
    Ok(out)
}
