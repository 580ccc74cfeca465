//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion failed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use procabs::blockworld::{compose_scene, f1_score, stimulus_towers, BlockPlacement, GridState, SceneConfig};
use procabs::dsl::{execute, inline, token_length, Library, Program, Token};
use procabs::library_learning::{mdl, FragmentLevel, LearningConfig};
use procabs::pragmatics::{best_utterance, BeliefState, BuildState, Builder, Meaning};
use procabs::simulation::{
    abstraction_proportions, generate_trial_sequence, group_by_config, jsd, learn_sequence,
    run_experiment, sequence_seeds, Environment, ExperimentConfig, LearningTrajectory, TrialSequence,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            out.pass = false;
            out.detail += &format!("; took {took:.1?} > {limit:?}");
        }
    }
    println!(
        "{} {name}: {} ({took:.2?})",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail
    );
    out.pass
}

fn random_base(rng: &mut ChaCha8Rng, max_units: usize) -> Vec<Token> {
    let mut v = Vec::new();
    let target = rng.gen_range(0..=max_units);
    loop {
        let t = match rng.gen_range(0..8) {
            0..=2 => Token::PlaceH,
            3..=5 => Token::PlaceV,
            6 => Token::MoveL(rng.gen_range(1..=9)),
            _ => Token::MoveR(rng.gen_range(1..=9)),
        };
        if token_length(&v) + t.cost() > target {
            return v;
        }
        v.push(t);
    }
}

fn exhaustive_min(seq: &[Token], exps: &[Vec<Token>]) -> usize {
    if seq.is_empty() {
        return 0;
    }
    let mut best = seq[0].cost() + exhaustive_min(&seq[1..], exps);
    for e in exps {
        if seq.starts_with(e) {
            best = best.min(1 + exhaustive_min(&seq[e.len()..], exps));
        }
    }
    best
}

fn mdl_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut with_fragments = 0;
    for _ in 0..500 {
        let seq = random_base(&mut rng, 12);
        let mut lib = Library::new();
        for _ in 0..rng.gen_range(0..=3) {
            let body = if !seq.is_empty() && rng.gen_bool(0.7) {
                let a = rng.gen_range(0..seq.len());
                let b = rng.gen_range(a..=seq.len());
                seq[a..b].to_vec()
            } else {
                random_base(&mut rng, 6)
            };
            if lib.expansions().iter().all(|e| *e != body.as_slice()) {
                let _ = lib.add_fragment(Program::new(body));
            }
        }
        with_fragments += usize::from(!lib.is_empty());
        let exps: Vec<Vec<Token>> = lib.expansions().iter().map(|e| e.to_vec()).collect();
        if mdl(&Program::new(seq.clone()), &lib) != exhaustive_min(&seq, &exps) {
            mismatches += 1;
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("500 cases, {with_fragments} with fragments, {mismatches} mismatches"),
    }
}

fn semantic_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = GridState::new(48, 96);
    let (mut mismatches, mut executed, mut nested) = (0, 0, 0);
    let tok = |rng: &mut ChaCha8Rng, max_chunk: u32| match rng.gen_range(0..10) {
        0..=2 => Token::PlaceH,
        3..=5 => Token::PlaceV,
        6 => Token::MoveL(rng.gen_range(1..=3)),
        7 => Token::MoveR(rng.gen_range(1..=3)),
        _ if max_chunk > 0 => Token::ChunkRef(rng.gen_range(1..=max_chunk)),
        _ => Token::PlaceV,
    };
    for _ in 0..1000 {
        let mut lib = Library::new();
        for k in 0..rng.gen_range(2..=4u32) {
            let mut body: Vec<Token> = (0..rng.gen_range(2..5)).map(|_| tok(&mut rng, k)).collect();
            if k > 0 && body.iter().all(Token::is_base) {
                body[0] = Token::ChunkRef(k);
            }
            if lib.add_fragment(Program::new(body.clone())).is_err() {
                body.push(Token::PlaceV);
                lib.add_fragment(Program::new(body)).unwrap();
            }
        }
        let n = lib.len() as u32;
        let mut prog: Vec<Token> = (0..rng.gen_range(1..8)).map(|_| tok(&mut rng, n)).collect();
        prog.push(Token::ChunkRef(n));
        let prog = Program::new(prog);
        nested += usize::from(lib.get(n).unwrap().body.tokens().iter().any(|t| !t.is_base()));
        let direct = execute(&prog, &lib, 24, &grid).map(|(_, p)| p);
        let flat = execute(&inline(&prog, &lib).unwrap(), &Library::new(), 24, &grid).map(|(_, p)| p);
        executed += usize::from(direct.is_ok());
        if direct.ok() != flat.ok() {
            mismatches += 1;
        }
    }
    Outcome {
        pass: mismatches == 0 && executed > 500,
        detail: format!("1000 programs, {nested} with nested chunks, {executed} executed, {mismatches} mismatches"),
    }
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn first_level(traj: &LearningTrajectory, level: FragmentLevel) -> Option<usize> {
    traj.entries.iter().filter(|e| e.level == level).map(|e| e.adopted_trial).min()
}

fn learning_trajectory() -> Outcome {
    let env = Environment::default_stimuli();
    let seqs: Vec<TrialSequence> = sequence_seeds(0, 49).into_iter().map(generate_trial_sequence).collect();
    let mut medians = Vec::new();
    let mut pass = true;
    let mut detail = Vec::new();
    for w in [1.5, 3.2, 9.6] {
        let trajs: Vec<LearningTrajectory> = seqs
            .iter()
            .map(|s| learn_sequence(s, &env, &LearningConfig::new(w)).unwrap())
            .collect();
        let firsts: Vec<Option<usize>> = trajs.iter().map(|t| first_level(t, FragmentLevel::Tower)).collect();
        let with_tower = firsts.iter().filter(|f| f.is_some()).count();
        let med = median(firsts.iter().map(|f| f.unwrap_or(13)).collect());
        medians.push(med);
        if w < 5.0 && (with_tower as f64) < 0.9 * 49.0 {
            pass = false;
        }
        if w == 1.5 {
            let preceded = trajs
                .iter()
                .filter(|t| match (first_level(t, FragmentLevel::SubTower), first_level(t, FragmentLevel::Tower)) {
                    (_, None) => true,
                    (Some(s), Some(tw)) => s <= tw,
                    (None, Some(_)) => false,
                })
                .count();
            pass &= preceded == 49;
            detail.push(format!("w=1.5 sub-tower first in {preceded}/49"));
        }
        detail.push(format!("w={w}: tower in {with_tower}/49, median first trial {med}"));
    }
    pass &= medians[2] > medians[0];
    Outcome {
        pass,
        detail: detail.join("; "),
    }
}

fn production_preferences() -> Outcome {
    let cfg = ExperimentConfig {
        ws: vec![1.5],
        betas: vec![0.0, 0.3, 0.8],
        alpha: 5.0,
        n_sequences: 49,
        iterations: 2,
        ..ExperimentConfig::default()
    };
    let exp = run_experiment(&cfg, 4).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (key, group) in group_by_config(&exp.traces) {
        assert_eq!(group.len(), 98);
        let rows = abstraction_proportions(group.iter().copied());
        let blocks: Vec<f64> = rows.iter().map(|r| r.block).collect();
        if key.beta == 0.0 {
            pass &= blocks.iter().all(|&b| b >= 0.9);
        } else if key.beta == 0.3 {
            let abs: Vec<f64> = rows.iter().map(|r| r.abstraction()).collect();
            pass &= abs.windows(2).all(|w| w[1] >= w[0]);
        } else if key.beta == 0.8 {
            pass &= blocks[2] <= 0.1;
        }
        let shown: Vec<String> = blocks.iter().map(|b| format!("{b:.3}")).collect();
        detail.push(format!("beta={} block share [{}]", key.beta, shown.join(", ")));
    }
    Outcome {
        pass,
        detail: detail.join("; "),
    }
}

fn f1_point() -> Outcome {
    let towers = stimulus_towers();
    let target = compose_scene(&towers[0], &towers[2], &SceneConfig::default()).unwrap();
    assert_eq!(target.len(), 8);
    let mut built = target.clone();
    let moved = *built.blocks.iter().next_back().unwrap();
    built.blocks.remove(&moved);
    built.blocks.insert(BlockPlacement::new(11, 7, moved.orientation));
    let f1 = f1_score(&target, &built);
    Outcome {
        pass: (f1 - 0.875).abs() <= 1e-12,
        detail: format!("F1 = {f1}"),
    }
}

/// Two chunks; every synthetic word the Architect uses is heard once and
/// acted on by the Builder.
fn scripted_dyad(null_meaning: bool, seed: u64) -> Result<(bool, bool), String> {
    let mut lib = Library::new();
    let a = lib.add_fragment("v (r 1) h (l 1) v".parse().unwrap()).unwrap();
    let b = lib.add_fragment("v (r 3) v (l 3) h (r 2) h".parse().unwrap()).unwrap();
    let mut belief = BeliefState::new(null_meaning);
    let mut builder = Builder::new(null_meaning);
    for id in [a, b] {
        belief.extend_hypotheses(id).unwrap();
        builder.add_fragment(id).unwrap();
    }
    let program = Program::new(vec![Token::ChunkRef(a), Token::MoveR(5), Token::ChunkRef(b)]);
    let utterance = best_utterance(&program, &belief);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = BuildState::new(24, 24, 4, 64);
    let mut entropies = vec![belief.entropy()];
    for word in &utterance.words {
        let pre = state.clone();
        let action = builder.interpret(word, &mut rng).map_err(|e| e.to_string())?;
        let placed = state.apply(action, &lib);
        belief.update_belief(word, &placed, &lib, &pre).map_err(|e| e.to_string())?;
        entropies.push(belief.entropy());
    }
    let monotone = entropies.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let Some(estimate) = belief.point_estimate() else {
        return Ok((false, monotone));
    };
    let bindings = builder.bindings().mapping;
    let agrees = !bindings.is_empty() && bindings.iter().all(|(w, m)| estimate.mapping.get(w) == Some(m));
    let bijective = {
        let mut ms: Vec<Meaning> = estimate.mapping.values().copied().collect();
        ms.sort();
        ms.dedup();
        ms.len() == estimate.mapping.len()
    };
    Ok((agrees && bijective && belief.anomalies() == 0, monotone))
}

fn belief_convergence() -> Outcome {
    let mut converged = 0;
    let mut monotone = 0;
    let mut runs = 0;
    for null in [false, true] {
        for seed in 0..100 {
            runs += 1;
            match scripted_dyad(null, seed) {
                Ok((c, m)) => {
                    converged += usize::from(c);
                    monotone += usize::from(m);
                }
                Err(e) => {
                    return Outcome {
                        pass: false,
                        detail: format!("scripted dyad failed: {e}"),
                    }
                }
            }
        }
    }
    Outcome {
        pass: converged == runs && monotone == runs,
        detail: format!("{runs} scripted dyads, {converged} point masses matching the Builder, {monotone} monotone"),
    }
}

fn design_invariants() -> Outcome {
    let mut bad = 0;
    for seed in sequence_seeds(3, 10_000) {
        let seq = generate_trial_sequence(seed);
        let mut ok = seq.trials.len() == 12;
        for block in 1..=4 {
            let mut pairs: Vec<(String, String)> = seq
                .trials
                .iter()
                .filter(|t| t.repetition_block == block)
                .map(|t| {
                    let (x, y) = (t.left.clone(), t.right.clone());
                    if x < y { (x, y) } else { (y, x) }
                })
                .collect();
            pairs.sort();
            pairs.dedup();
            ok &= pairs.len() == 3 && seq.trials.iter().filter(|t| t.repetition_block == block).count() == 3;
        }
        for id in ["L", "C", "Pi"] {
            ok &= seq.trials.iter().filter(|t| t.left == id).count() == 4;
            ok &= seq.trials.iter().filter(|t| t.right == id).count() == 4;
        }
        bad += usize::from(!ok);
    }
    Outcome {
        pass: bad == 0,
        detail: format!("10000 sequences, {bad} violations"),
    }
}

fn run_simulate(dir: &Path, jobs: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_procabs"))
        .args(["simulate", "--master-seed", "11", "--jobs", &jobs.to_string(), "--out-dir"])
        .arg(dir)
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("exit status {status}"))
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    for (dir, jobs) in dirs.iter().zip([1, 8, 1]) {
        if let Err(e) = run_simulate(dir, jobs) {
            return Outcome {
                pass: false,
                detail: format!("simulate failed: {e}"),
            };
        }
    }
    let names = [
        "trace.json",
        "abstraction_proportions.csv",
        "accuracy_efficiency.csv",
        "fragment_trajectory.csv",
        "jsd.csv",
    ];
    let mut differing = Vec::new();
    for name in names {
        let a = std::fs::read(dirs[0].join(name)).unwrap_or_default();
        let same = !a.is_empty()
            && dirs[1..]
                .iter()
                .all(|d| std::fs::read(d.join(name)).map(|b| b == a).unwrap_or(false));
        if !same {
            differing.push(name);
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            "5 files byte-identical across --jobs 1, --jobs 8 and a rerun".into()
        } else {
            format!("differing: {differing:?}")
        },
    }
}

fn jsd_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_sym: f64 = 0.0;
    let mut worst_self: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..12);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = rng.gen_range(1..12);
        let q: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        worst_sym = worst_sym.max((jsd(&p, &q).unwrap() - jsd(&q, &p).unwrap()).abs());
        worst_self = worst_self.max(jsd(&p, &p).unwrap().abs());
    }
    let disjoint = jsd(&[0.3, 0.7, 0.0, 0.0], &[0.0, 0.0, 0.5, 0.5]).unwrap();
    let pass = worst_sym <= 1e-9 && worst_self <= 1e-9 && (disjoint - 1.0).abs() <= 1e-9;
    Outcome {
        pass,
        detail: format!("max |jsd(p,q)-jsd(q,p)| = {worst_sym:.1e}, max jsd(p,p) = {worst_self:.1e}, disjoint = {disjoint}"),
    }
}

fn main() {
    let results = [
        check("1 mdl oracle equivalence", Some(Duration::from_secs(30)), mdl_oracle),
        check("2 semantic preservation", Some(Duration::from_secs(10)), semantic_preservation),
        check("3 fragment learning trajectory", Some(Duration::from_secs(300)), learning_trajectory),
        check("4 production preferences", Some(Duration::from_secs(600)), production_preferences),
        check("5 f1 point check", None, f1_point),
        check("6 belief convergence", None, belief_convergence),
        check("7 design invariants", Some(Duration::from_secs(10)), design_invariants),
        check("8 determinism", None, determinism),
        check("9 jsd properties", None, jsd_properties),
    ];
    let failed = results.iter().filter(|&&p| !p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
