//! Trial sequences, the dyad loop and experiment runs.

mod metrics;

pub use metrics::*;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockworld::{compose_scene, f1_score, stimulus_towers, validate_stimuli, BlockPlacement, Scene, SceneConfig, TowerStimulus};
use crate::dsl::{scene_program, FragmentId, Library, Program, Token};
use crate::error::{Error, Result};
use crate::library_learning::{update_library, FragmentLevel, LearningConfig, LevelClassifier, SizeRule};
use crate::pragmatics::{architect_choose, BeliefState, BuildState, Builder, Meaning, PragmaticsConfig, Word};

pub const REPETITION_BLOCKS: usize = 4;
pub const TRIALS_PER_SEQUENCE: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub repetition_block: usize,
    pub pair: [String; 2],
    pub left: String,
    pub right: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSequence {
    pub seed: u64,
    pub trials: Vec<TrialSpec>,
}

pub fn default_tower_ids() -> Vec<String> {
    stimulus_towers().into_iter().map(|t| t.id).collect()
}

pub fn generate_trial_sequence(seed: u64) -> TrialSequence {
    generate_trial_sequence_for(seed, &default_tower_ids())
}

/// Each unordered pair once per repetition block, in shuffled order, with
/// sides drawn at random until every tower sits left and right equally often.
pub fn generate_trial_sequence_for(seed: u64, ids: &[String]) -> TrialSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            pairs.push([ids[i].clone(), ids[j].clone()]);
        }
    }
    let per_side = REPETITION_BLOCKS * (ids.len().saturating_sub(1)) / 2;
    loop {
        let mut trials = Vec::with_capacity(REPETITION_BLOCKS * pairs.len());
        for block in 1..=REPETITION_BLOCKS {
            let mut order = pairs.clone();
            order.shuffle(&mut rng);
            for pair in order {
                let flip: bool = rng.gen();
                let (left, right) = if flip {
                    (pair[1].clone(), pair[0].clone())
                } else {
                    (pair[0].clone(), pair[1].clone())
                };
                trials.push(TrialSpec {
                    repetition_block: block,
                    pair,
                    left,
                    right,
                });
            }
        }
        let balanced = ids
            .iter()
            .all(|id| trials.iter().filter(|t| &t.left == id).count() == per_side);
        if balanced {
            return TrialSequence { seed, trials };
        }
    }
}

/// Checks the design constraints of a trial sequence.
pub fn check_sequence(seq: &TrialSequence, ids: &[String]) -> Result<()> {
    let fail = |msg: String| Err(Error::config("sequence", msg));
    let n_pairs = ids.len() * ids.len().saturating_sub(1) / 2;
    if seq.trials.len() != REPETITION_BLOCKS * n_pairs {
        return fail(format!("{} trials", seq.trials.len()));
    }
    for (k, t) in seq.trials.iter().enumerate() {
        if t.repetition_block != k / n_pairs + 1 {
            return fail(format!("trial {} in block {}", k + 1, t.repetition_block));
        }
        let mut sides = [t.left.clone(), t.right.clone()];
        sides.sort();
        let mut pair = t.pair.clone();
        pair.sort();
        if t.left == t.right || sides != pair || !ids.contains(&t.left) || !ids.contains(&t.right) {
            return fail(format!("trial {} has an invalid pair", k + 1));
        }
    }
    for block in seq.trials.chunks(n_pairs) {
        let mut pairs: Vec<[String; 2]> = block
            .iter()
            .map(|t| {
                let mut p = t.pair.clone();
                p.sort();
                p
            })
            .collect();
        pairs.sort();
        pairs.dedup();
        if pairs.len() != n_pairs {
            return fail("a pair repeats within a block".into());
        }
    }
    let per_side = REPETITION_BLOCKS * ids.len().saturating_sub(1) / 2;
    for id in ids {
        let left = seq.trials.iter().filter(|t| &t.left == id).count();
        let right = seq.trials.iter().filter(|t| &t.right == id).count();
        if left != per_side || right != per_side {
            return fail(format!("tower {id} is left {left} and right {right} times"));
        }
    }
    Ok(())
}

/// Stimuli, grid and the scenes they compose into.
#[derive(Clone, Debug)]
pub struct Environment {
    pub stimuli: Vec<TowerStimulus>,
    pub scene: SceneConfig,
    pub classifier: LevelClassifier,
    scenes: BTreeMap<(String, String), (Scene, usize, Program)>,
}

impl Environment {
    pub fn new(stimuli: Vec<TowerStimulus>, scene: SceneConfig) -> Result<Self> {
        validate_stimuli(&stimuli)?;
        let mut scenes = BTreeMap::new();
        for a in &stimuli {
            for b in &stimuli {
                if a.id == b.id {
                    continue;
                }
                let s = compose_scene(a, b, &scene)?;
                if !crate::dsl::validate_constructible(&s) {
                    return Err(Error::NotConstructible(format!("{} + {}", a.id, b.id)));
                }
                let (start, prog) = scene_program(&s);
                scenes.insert((a.id.clone(), b.id.clone()), (s, start, prog));
            }
        }
        let classifier = LevelClassifier::new(&stimuli, &scene);
        Ok(Environment {
            stimuli,
            scene,
            classifier,
            scenes,
        })
    }

    pub fn default_stimuli() -> Self {
        Environment::new(stimulus_towers(), SceneConfig::default()).expect("default stimuli are valid")
    }

    pub fn tower_ids(&self) -> Vec<String> {
        self.stimuli.iter().map(|t| t.id.clone()).collect()
    }

    /// Target scene, hand start column and canonical program for a trial.
    pub fn trial_scene(&self, left: &str, right: &str) -> Result<&(Scene, usize, Program)> {
        self.scenes
            .get(&(left.to_string(), right.to_string()))
            .ok_or_else(|| Error::config("sequence", format!("unknown tower pair {left}/{right}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub id: FragmentId,
    pub body: Program,
    pub base_expansion: Program,
    pub level: FragmentLevel,
    pub adopted_trial: usize,
    pub score_delta: f64,
}

/// Library state after every trial of one sequence under one learner.
#[derive(Clone, Debug)]
pub struct LearningTrajectory {
    pub libraries: Vec<Library>,
    pub entries: Vec<LibraryEntry>,
}

impl LearningTrajectory {
    pub fn adopted_after(&self, trial: usize) -> impl Iterator<Item = &LibraryEntry> {
        self.entries.iter().filter(move |e| e.adopted_trial == trial)
    }
}

pub fn learn_sequence(sequence: &TrialSequence, env: &Environment, lcfg: &LearningConfig) -> Result<LearningTrajectory> {
    let mut library = Library::new();
    let mut observed = Vec::new();
    let mut libraries = Vec::new();
    let mut entries = Vec::new();
    for (t, spec) in sequence.trials.iter().enumerate() {
        let (_, _, prog) = env.trial_scene(&spec.left, &spec.right)?;
        observed.push(prog.clone());
        let (next, adopted) = update_library(&library, &observed, lcfg)?;
        for a in adopted {
            let frag = next.get(a.id).expect("adopted fragment present");
            entries.push(LibraryEntry {
                id: a.id,
                body: a.body,
                base_expansion: a.base_expansion,
                level: env.classifier.classify(frag),
                adopted_trial: t + 1,
                score_delta: a.score_delta,
            });
        }
        library = next;
        libraries.push(library.clone());
    }
    Ok(LearningTrajectory { libraries, entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstractionLevel {
    Block,
    SubTower,
    Tower,
    Scene,
    Other,
}

impl AbstractionLevel {
    pub const ALL: [AbstractionLevel; 5] = [
        AbstractionLevel::Block,
        AbstractionLevel::SubTower,
        AbstractionLevel::Tower,
        AbstractionLevel::Scene,
        AbstractionLevel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<FragmentLevel> for AbstractionLevel {
    fn from(l: FragmentLevel) -> Self {
        match l {
            FragmentLevel::SubTower => AbstractionLevel::SubTower,
            FragmentLevel::Tower => AbstractionLevel::Tower,
            FragmentLevel::Scene => AbstractionLevel::Scene,
            FragmentLevel::Other => AbstractionLevel::Other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub repetition_block: usize,
    pub left: String,
    pub right: String,
    pub start_x: usize,
    pub candidates: Vec<Program>,
    pub candidate_probabilities: Vec<f64>,
    pub chosen_program: Program,
    pub utterance: Vec<Word>,
    pub interpretations: Vec<String>,
    pub step_levels: Vec<AbstractionLevel>,
    /// Intended placements per level, indexed like [`AbstractionLevel::ALL`].
    pub placements_by_level: [usize; 5],
    pub builder_placements: Vec<BlockPlacement>,
    pub f1: f64,
    pub tokens_sent: usize,
    pub step_entropies: Vec<f64>,
    pub anomalies: usize,
    pub adopted: Vec<LibraryEntry>,
    pub library: Vec<FragmentId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadConfig {
    pub w: f64,
    pub alpha: f64,
    pub beta: f64,
    pub size_rule: SizeRule,
    pub max_fragments_per_trial: usize,
    pub max_candidates: usize,
    pub null_meaning: bool,
    pub sequence_index: usize,
    pub iteration: usize,
    pub sequence_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSummary {
    pub words: Vec<Word>,
    pub meanings: Vec<Meaning>,
    pub hypotheses: f64,
    pub entropy: f64,
    pub marginals: Vec<Vec<f64>>,
}

impl BeliefSummary {
    pub fn of(b: &BeliefState) -> Self {
        BeliefSummary {
            words: b.space().words().to_vec(),
            meanings: b.space().meanings().to_vec(),
            hypotheses: b.n_hypotheses(),
            entropy: b.entropy(),
            marginals: b.marginals(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadTrace {
    pub config: DyadConfig,
    pub sequence: TrialSequence,
    pub records: Vec<TrialRecord>,
    pub final_belief: BeliefSummary,
    pub final_library: Vec<LibraryEntry>,
    pub builder_bindings: BTreeMap<String, Meaning>,
}

impl DyadTrace {
    pub fn level_of(&self, id: FragmentId) -> Option<FragmentLevel> {
        self.final_library.iter().find(|e| e.id == id).map(|e| e.level)
    }
}

/// Identifies a dyad within an experiment for trace bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DyadId {
    pub sequence_index: usize,
    pub iteration: usize,
}

pub fn run_dyad<R: Rng + ?Sized>(
    sequence: &TrialSequence,
    env: &Environment,
    pcfg: &PragmaticsConfig,
    lcfg: &LearningConfig,
    rng: &mut R,
) -> Result<DyadTrace> {
    let trajectory = learn_sequence(sequence, env, lcfg)?;
    run_dyad_with(sequence, env, &trajectory, pcfg, lcfg, DyadId::default(), rng)
}

/// Runs one dyad over a precomputed library trajectory.
pub fn run_dyad_with<R: Rng + ?Sized>(
    sequence: &TrialSequence,
    env: &Environment,
    trajectory: &LearningTrajectory,
    pcfg: &PragmaticsConfig,
    lcfg: &LearningConfig,
    id: DyadId,
    rng: &mut R,
) -> Result<DyadTrace> {
    pcfg.validate()?;
    let mut library = Library::new();
    let mut belief = BeliefState::new(pcfg.null_meaning);
    let mut builder = Builder::new(pcfg.null_meaning);
    let levels: BTreeMap<FragmentId, FragmentLevel> = trajectory.entries.iter().map(|e| (e.id, e.level)).collect();
    let mut records = Vec::with_capacity(sequence.trials.len());

    for (t, spec) in sequence.trials.iter().enumerate() {
        let (target, start_x, _) = env.trial_scene(&spec.left, &spec.right)?;
        let choice = architect_choose(target, &library, &belief, pcfg, rng)?;
        let mut state = BuildState::new(target.width, target.height, *start_x, target.len());
        let anomalies_before = belief.anomalies();
        let mut interpretations = Vec::with_capacity(choice.program.len());
        let mut step_entropies = Vec::with_capacity(choice.program.len());
        for word in &choice.utterance.words {
            let pre = state.clone();
            let action = builder.interpret(word, rng)?;
            let placed = state.apply(action, &library);
            belief.update_belief(word, &placed, &library, &pre)?;
            interpretations.push(action.to_string());
            step_entropies.push(belief.entropy());
        }

        let mut placements_by_level = [0usize; 5];
        let step_levels: Vec<AbstractionLevel> = choice
            .program
            .tokens()
            .iter()
            .map(|tok| match tok {
                Token::ChunkRef(id) => {
                    let level = AbstractionLevel::from(levels.get(id).copied().unwrap_or(FragmentLevel::Other));
                    placements_by_level[level.index()] += library.get(*id).map_or(0, |f| f.placements());
                    level
                }
                base => {
                    if base.is_placement() {
                        placements_by_level[AbstractionLevel::Block.index()] += 1;
                    }
                    AbstractionLevel::Block
                }
            })
            .collect();

        let built = state.built();
        let f1 = f1_score(target, &built);

        library = trajectory.libraries[t].clone();
        let adopted: Vec<LibraryEntry> = trajectory.adopted_after(t + 1).cloned().collect();
        for e in &adopted {
            belief.extend_hypotheses(e.id)?;
            builder.add_fragment(e.id)?;
        }

        records.push(TrialRecord {
            trial: t + 1,
            repetition_block: spec.repetition_block,
            left: spec.left.clone(),
            right: spec.right.clone(),
            start_x: *start_x,
            candidate_probabilities: choice.probabilities.clone(),
            candidates: choice.candidates.clone(),
            tokens_sent: choice.program.token_length(),
            chosen_program: choice.program,
            utterance: choice.utterance.words,
            interpretations,
            step_levels,
            placements_by_level,
            builder_placements: state.grid.placements.clone(),
            f1,
            step_entropies,
            anomalies: belief.anomalies() - anomalies_before,
            adopted,
            library: library.fragments().iter().map(|f| f.id).collect(),
        });
    }

    Ok(DyadTrace {
        config: DyadConfig {
            w: lcfg.w,
            alpha: pcfg.alpha,
            beta: pcfg.beta,
            size_rule: lcfg.size_rule,
            max_fragments_per_trial: lcfg.max_fragments_per_trial,
            max_candidates: pcfg.max_candidates,
            null_meaning: pcfg.null_meaning,
            sequence_index: id.sequence_index,
            iteration: id.iteration,
            sequence_seed: sequence.seed,
        },
        sequence: sequence.clone(),
        records,
        final_belief: BeliefSummary::of(&belief),
        final_library: trajectory.entries.clone(),
        builder_bindings: builder.bindings().mapping,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub ws: Vec<f64>,
    pub betas: Vec<f64>,
    pub alpha: f64,
    pub n_sequences: usize,
    pub iterations: usize,
    pub master_seed: u64,
    pub max_fragments_per_trial: usize,
    pub size_rule: SizeRule,
    pub max_candidates: usize,
    pub null_meaning: bool,
    pub scene: SceneConfig,
    pub stimuli: Vec<TowerStimulus>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ws: vec![1.5, 3.2, 9.6],
            betas: vec![0.0, 0.3, 0.8],
            alpha: 5.0,
            n_sequences: 49,
            iterations: 2,
            master_seed: 0,
            max_fragments_per_trial: 3,
            size_rule: SizeRule::default(),
            max_candidates: 4,
            null_meaning: true,
            scene: SceneConfig::default(),
            stimuli: stimulus_towers(),
        }
    }
}

impl ExperimentConfig {
    pub fn learning(&self, w: f64) -> LearningConfig {
        LearningConfig {
            w,
            max_fragments_per_trial: self.max_fragments_per_trial,
            size_rule: self.size_rule,
        }
    }

    pub fn pragmatics(&self, beta: f64) -> PragmaticsConfig {
        PragmaticsConfig {
            alpha: self.alpha,
            beta,
            max_candidates: self.max_candidates,
            null_meaning: self.null_meaning,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ws.is_empty() {
            return Err(Error::config("w", "at least one value is required"));
        }
        if self.betas.is_empty() {
            return Err(Error::config("beta", "at least one value is required"));
        }
        for &w in &self.ws {
            self.learning(w).validate()?;
        }
        for &b in &self.betas {
            self.pragmatics(b).validate()?;
        }
        if !self.alpha.is_finite() {
            return Err(Error::config("alpha", "must be finite"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        Environment::new(self.stimuli.clone(), self.scene)?;
        Ok(())
    }
}

/// Sequence seeds drawn from a stream keyed by the master seed.
pub fn sequence_seeds(master_seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Random stream for one dyad; shared across configs so that configs are
/// compared on common random numbers.
pub fn dyad_rng(sequence_seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed);
    rng.set_stream(iteration as u64 + 1);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sequences: Vec<TrialSequence>,
    pub traces: Vec<DyadTrace>,
}

/// All dyads of the config grid, ordered by w, then beta, then sequence,
/// then iteration. `jobs` bounds the worker threads; output does not
/// depend on it.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Experiment> {
    cfg.validate()?;
    let env = Environment::new(cfg.stimuli.clone(), cfg.scene)?;
    let ids = env.tower_ids();
    let sequences: Vec<TrialSequence> = sequence_seeds(cfg.master_seed, cfg.n_sequences)
        .into_iter()
        .map(|s| generate_trial_sequence_for(s, &ids))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;

    pool.install(|| {
        let learn_jobs: Vec<(usize, usize)> = (0..cfg.ws.len())
            .flat_map(|wi| (0..sequences.len()).map(move |si| (wi, si)))
            .collect();
        let trajectories: Vec<LearningTrajectory> = learn_jobs
            .par_iter()
            .map(|&(wi, si)| learn_sequence(&sequences[si], &env, &cfg.learning(cfg.ws[wi])))
            .collect::<Result<_>>()?;

        let mut dyads = Vec::new();
        for wi in 0..cfg.ws.len() {
            for bi in 0..cfg.betas.len() {
                for si in 0..sequences.len() {
                    for it in 0..cfg.iterations {
                        dyads.push((wi, bi, si, it));
                    }
                }
            }
        }
        let traces: Vec<DyadTrace> = dyads
            .par_iter()
            .map(|&(wi, bi, si, it)| {
                let seq = &sequences[si];
                let mut rng = dyad_rng(seq.seed, it);
                run_dyad_with(
                    seq,
                    &env,
                    &trajectories[wi * sequences.len() + si],
                    &cfg.pragmatics(cfg.betas[bi]),
                    &cfg.learning(cfg.ws[wi]),
                    DyadId {
                        sequence_index: si,
                        iteration: it,
                    },
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Experiment {
            config: cfg.clone(),
            sequences,
            traces,
        })
    })
}

/// Serialized experiment and metric tables, rendered before anything is
/// written so a failure leaves no partial output.
pub struct ExperimentFiles {
    pub files: Vec<(String, String)>,
}

impl ExperimentFiles {
    pub fn render(exp: &Experiment) -> Result<Self> {
        let mut files = vec![("trace.json".to_string(), serde_json::to_string(exp)? + "\n")];
        files.push(("abstraction_proportions.csv".into(), abstraction_csv(&exp.traces)?));
        files.push(("accuracy_efficiency.csv".into(), accuracy_csv(&exp.traces)?));
        files.push(("fragment_trajectory.csv".into(), trajectory_csv(&exp.traces)?));
        files.push(("jsd.csv".into(), jsd_csv(&exp.traces)?));
        Ok(ExperimentFiles { files })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}
