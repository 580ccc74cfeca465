//! Library growth by description length.
//!
//! A library is scored by `-w * size(L) - sum_n mdl(scene_n, L)`. After each
//! trial the learner proposes every contiguous window of the (rewritten)
//! observed programs as a chunk and greedily adopts the best strictly
//! improving one, up to `max_fragments_per_trial` times.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::blockworld::{compose_scene, normalize, BlockPlacement, SceneConfig, TowerStimulus};
use crate::dsl::{execute_unbounded, token_length, Fragment, FragmentId, Library, Program, Token, BASE_PRIMITIVES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeRule {
    /// 13 plus one per fragment.
    PrimitiveCount,
    /// 13 plus the token length of every fragment body.
    #[default]
    BodyTokenSum,
}

impl std::str::FromStr for SizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primitive_count" => Ok(SizeRule::PrimitiveCount),
            "body_token_sum" => Ok(SizeRule::BodyTokenSum),
            other => Err(Error::config(
                "size_rule",
                format!("{other:?} is not primitive_count or body_token_sum"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub w: f64,
    pub max_fragments_per_trial: usize,
    pub size_rule: SizeRule,
}

impl LearningConfig {
    pub fn new(w: f64) -> Self {
        LearningConfig {
            w,
            ..LearningConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.w.is_finite() || self.w < 0.0 {
            return Err(Error::config("w", format!("{} is not a finite nonnegative number", self.w)));
        }
        Ok(())
    }
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            w: 1.5,
            max_fragments_per_trial: 3,
            size_rule: SizeRule::default(),
        }
    }
}

fn fragment_size(body: &Program, rule: SizeRule) -> usize {
    match rule {
        SizeRule::PrimitiveCount => 1,
        SizeRule::BodyTokenSum => body.token_length(),
    }
}

pub fn library_size(library: &Library, rule: SizeRule) -> usize {
    BASE_PRIMITIVES
        + library
            .fragments()
            .iter()
            .map(|f| fragment_size(&f.body, rule))
            .sum::<usize>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentLevel {
    SubTower,
    Tower,
    Scene,
    Other,
}

impl FragmentLevel {
    pub const ALL: [FragmentLevel; 4] = [
        FragmentLevel::SubTower,
        FragmentLevel::Tower,
        FragmentLevel::Scene,
        FragmentLevel::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FragmentLevel::SubTower => "sub_tower",
            FragmentLevel::Tower => "tower",
            FragmentLevel::Scene => "scene",
            FragmentLevel::Other => "other",
        }
    }
}

/// One way of covering a base sequence: a base token or a whole fragment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Piece {
    Base(Token),
    Frag(usize),
}

fn matches_at(seq: &[Token], i: usize, exp: &[Token]) -> bool {
    !exp.is_empty() && seq[i..].starts_with(exp)
}

/// Cheapest cover cost of `seq` using base tokens and the given expansions.
fn mdl_with(seq: &[Token], exps: &[&[Token]]) -> usize {
    let n = seq.len();
    let mut best = vec![usize::MAX; n + 1];
    best[0] = 0;
    for i in 0..n {
        let here = best[i];
        if here == usize::MAX {
            continue;
        }
        let c = here + seq[i].cost();
        if c < best[i + 1] {
            best[i + 1] = c;
        }
        for e in exps {
            if matches_at(seq, i, e) && here + 1 < best[i + e.len()] {
                best[i + e.len()] = here + 1;
            }
        }
    }
    best[n]
}

/// Minimum-cost cover, ties broken by fewer chunk references and then by
/// the longest piece at the leftmost position.
fn tokenize_with(seq: &[Token], exps: &[&[Token]]) -> (usize, Vec<Piece>) {
    let n = seq.len();
    // suffix optimum: (cost, chunk refs)
    let mut suf = vec![(usize::MAX, usize::MAX); n + 1];
    suf[n] = (0, 0);
    for i in (0..n).rev() {
        let (c, k) = suf[i + 1];
        let mut best = (c + seq[i].cost(), k);
        for e in exps {
            if matches_at(seq, i, e) {
                let (c, k) = suf[i + e.len()];
                best = best.min((c + 1, k + 1));
            }
        }
        suf[i] = best;
    }
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < n {
        let (c, k) = suf[i + 1];
        let mut step = ((c + seq[i].cost(), k) == suf[i]).then_some((1, Piece::Base(seq[i])));
        for (fi, e) in exps.iter().enumerate() {
            if matches_at(seq, i, e) {
                let (c, k) = suf[i + e.len()];
                if (c + 1, k + 1) == suf[i] && step.is_none_or(|(len, _)| e.len() > len) {
                    step = Some((e.len(), Piece::Frag(fi)));
                }
            }
        }
        let (len, piece) = step.expect("suffix optimum is attained");
        pieces.push(piece);
        i += len;
    }
    (suf[0].0, pieces)
}

fn expansions_of(library: &Library) -> Vec<&[Token]> {
    library.expansions()
}

pub fn mdl(base_sequence: &Program, library: &Library) -> usize {
    mdl_with(base_sequence.tokens(), &expansions_of(library))
}

pub fn shortest_tokenization(base_sequence: &Program, library: &Library) -> Program {
    let exps = expansions_of(library);
    let (_, pieces) = tokenize_with(base_sequence.tokens(), &exps);
    let frags = library.fragments();
    Program::new(
        pieces
            .into_iter()
            .map(|p| match p {
                Piece::Base(t) => t,
                Piece::Frag(i) => Token::ChunkRef(frags[i].id),
            })
            .collect(),
    )
}

/// Shortest tokenization restricted to a subset of the library's fragments.
pub fn shortest_tokenization_using(base_sequence: &Program, fragments: &[&Fragment]) -> Program {
    let exps: Vec<&[Token]> = fragments.iter().map(|f| f.base_expansion.tokens()).collect();
    let (_, pieces) = tokenize_with(base_sequence.tokens(), &exps);
    Program::new(
        pieces
            .into_iter()
            .map(|p| match p {
                Piece::Base(t) => t,
                Piece::Frag(i) => Token::ChunkRef(fragments[i].id),
            })
            .collect(),
    )
}

pub fn library_score(library: &Library, scenes: &[Program], cfg: &LearningConfig) -> f64 {
    let exps = expansions_of(library);
    let total: usize = scenes.iter().map(|s| mdl_with(s.tokens(), &exps)).sum();
    -cfg.w * library_size(library, cfg.size_rule) as f64 - total as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub body: Program,
    pub expansion: Program,
}

/// Every contiguous window that qualifies as a fragment, deduplicated by
/// base expansion and excluding expansions already in the library. Windows
/// may contain chunk references when the observed programs are rewrites.
/// The expansion must start and end with a placement.
pub fn propose_fragments(observed: &[Program], library: &Library) -> Result<Vec<Proposal>> {
    let existing: HashSet<&[Token]> = library.expansions().into_iter().collect();
    let mut seen: HashSet<Vec<Token>> = HashSet::new();
    let mut out = Vec::new();
    for prog in observed {
        let toks = prog.tokens();
        let pieces: Vec<&[Token]> = toks
            .iter()
            .map(|t| match t {
                Token::ChunkRef(id) => library
                    .get(*id)
                    .map(|f| f.base_expansion.tokens())
                    .ok_or(Error::UnresolvedChunk(*id)),
                base => Ok(std::slice::from_ref(base)),
            })
            .collect::<Result<_>>()?;
        for i in 0..toks.len() {
            let mut expansion: Vec<Token> = Vec::new();
            for j in i..toks.len() {
                expansion.extend_from_slice(pieces[j]);
                let window = &toks[i..=j];
                if token_length(window) < 2
                    || !expansion.iter().any(Token::is_placement)
                    || !expansion[0].is_placement()
                    || !expansion[expansion.len() - 1].is_placement()
                {
                    continue;
                }
                if existing.contains(expansion.as_slice()) || seen.contains(&expansion) {
                    continue;
                }
                seen.insert(expansion.clone());
                out.push(Proposal {
                    body: Program::new(window.to_vec()),
                    expansion: Program::new(expansion.clone()),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adoption {
    pub id: FragmentId,
    pub body: Program,
    pub base_expansion: Program,
    pub score_delta: f64,
}

/// Observed programs with multiplicities, in first-seen order.
struct Corpus {
    seqs: Vec<Vec<Token>>,
    mult: Vec<usize>,
}

impl Corpus {
    fn new(observed: &[Program]) -> Self {
        let mut index: BTreeMap<&[Token], usize> = BTreeMap::new();
        let mut seqs = Vec::new();
        let mut mult = Vec::new();
        for p in observed {
            match index.get(p.tokens()) {
                Some(&k) => mult[k] += 1,
                None => {
                    index.insert(p.tokens(), seqs.len());
                    seqs.push(p.tokens().to_vec());
                    mult.push(1);
                }
            }
        }
        Corpus { seqs, mult }
    }
}

/// Greedy growth: at most `max_fragments_per_trial` rounds, each adopting
/// the single best proposal if it strictly raises the score.
pub fn update_library(
    library: &Library,
    observed: &[Program],
    cfg: &LearningConfig,
) -> Result<(Library, Vec<Adoption>)> {
    let corpus = Corpus::new(observed);
    let mut lib = library.clone();
    let mut adopted = Vec::new();
    for _ in 0..cfg.max_fragments_per_trial {
        let exps = lib.expansions();
        let size = library_size(&lib, cfg.size_rule);
        let per_seq: Vec<usize> = corpus.seqs.iter().map(|s| mdl_with(s, &exps)).collect();
        let cur_mdl: usize = per_seq.iter().zip(&corpus.mult).map(|(d, m)| d * m).sum();
        let current = -cfg.w * size as f64 - cur_mdl as f64;
        let rewritten: Vec<Program> = corpus
            .seqs
            .iter()
            .map(|s| shortest_tokenization(&Program::new(s.clone()), &lib))
            .collect();
        let proposals = propose_fragments(&rewritten, &lib)?;

        let mut best: Option<(f64, usize, Proposal)> = None;
        let mut with = exps.clone();
        for prop in &proposals {
            let body = shortest_tokenization(&prop.expansion, &lib);
            let new_size = size + fragment_size(&body, cfg.size_rule);
            let e = prop.expansion.tokens();
            with.push(e);
            let mut total = 0usize;
            for (k, s) in corpus.seqs.iter().enumerate() {
                let occurs = s.windows(e.len()).any(|win| win == e);
                let d = if occurs { mdl_with(s, &with) } else { per_seq[k] };
                total += corpus.mult[k] * d;
            }
            with.pop();
            let score = -cfg.w * new_size as f64 - total as f64;
            if score <= current {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bs, bsize, bp)) => {
                    score > *bs
                        || (score == *bs
                            && (new_size < *bsize || (new_size == *bsize && prop.expansion < bp.expansion)))
                }
            };
            if better {
                best = Some((score, new_size, Proposal { body, expansion: prop.expansion.clone() }));
            }
        }
        match best {
            Some((score, _, prop)) => {
                let id = lib.add_fragment(prop.body.clone())?;
                adopted.push(Adoption {
                    id,
                    body: prop.body,
                    base_expansion: prop.expansion,
                    score_delta: score - current,
                });
            }
            None => break,
        }
    }
    Ok((lib, adopted))
}

/// Fragment levels relative to a stimulus set.
#[derive(Clone, Debug)]
pub struct LevelClassifier {
    towers: BTreeSet<BTreeSet<BlockPlacement>>,
    scenes: BTreeSet<BTreeSet<BlockPlacement>>,
}

impl LevelClassifier {
    pub fn new(stimuli: &[TowerStimulus], scene_cfg: &SceneConfig) -> Self {
        let towers = stimuli.iter().map(|t| normalize(t.blocks.iter())).collect();
        let mut scenes = BTreeSet::new();
        for a in stimuli {
            for b in stimuli {
                if a.id != b.id {
                    if let Ok(s) = compose_scene(a, b, scene_cfg) {
                        scenes.insert(s.normalized());
                    }
                }
            }
        }
        LevelClassifier { towers, scenes }
    }

    pub fn classify_expansion(&self, expansion: &[Token]) -> FragmentLevel {
        let placed = match execute_unbounded(expansion, &Library::new()) {
            Ok(p) => p,
            Err(_) => return FragmentLevel::Other,
        };
        match placed.len() {
            2 | 3 => FragmentLevel::SubTower,
            4 if self.towers.contains(&normalize(placed.iter())) => FragmentLevel::Tower,
            8 if self.scenes.contains(&normalize(placed.iter())) => FragmentLevel::Scene,
            _ => FragmentLevel::Other,
        }
    }

    pub fn classify(&self, f: &Fragment) -> FragmentLevel {
        self.classify_expansion(f.base_expansion.tokens())
    }
}

pub fn classify_fragment(f: &Fragment, stimuli: &[TowerStimulus], scene_cfg: &SceneConfig) -> FragmentLevel {
    LevelClassifier::new(stimuli, scene_cfg).classify(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockworld::stimulus_towers;
    use crate::dsl::{parse_program, scene_program};

    fn p(s: &str) -> Program {
        parse_program(s).unwrap()
    }

    #[test]
    fn proposal_examples() {
        let lib = Library::new();
        assert!(propose_fragments(&[p("v")], &lib).unwrap().is_empty());
        let props = propose_fragments(&[p("v v")], &lib).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].expansion, p("v v"));
    }

    #[test]
    fn proposals_skip_existing_and_duplicates() {
        let mut lib = Library::new();
        lib.add_fragment(p("v v")).unwrap();
        let props = propose_fragments(&[p("v v v"), p("v v")], &lib).unwrap();
        let exps: Vec<String> = props.iter().map(|x| x.expansion.to_string()).collect();
        assert_eq!(exps, vec!["(v v v)"]);
    }

    #[test]
    fn mdl_examples() {
        let lib = Library::new();
        assert_eq!(mdl(&p("v v"), &lib), 2);
        let seq = p("h v (r 1) h (l 1) v (r 6) v");
        let before = mdl(&seq, &lib);
        let mut lib2 = Library::new();
        lib2.add_fragment(p("(r 1) h (l 1) v")).unwrap();
        assert_eq!(before - mdl(&seq, &lib2), 5);
    }

    #[test]
    fn tokenization_examples() {
        let mut lib = Library::new();
        let seq = p("v (r 1) h");
        assert_eq!(shortest_tokenization(&seq, &lib), seq);
        let id = lib.add_fragment(seq.clone()).unwrap();
        assert_eq!(shortest_tokenization(&seq, &lib), Program::new(vec![Token::ChunkRef(id)]));
    }

    #[test]
    fn tokenization_prefers_fewer_chunks() {
        // "chunk1 chunk1" and "v chunk2" both cost 2; the single reference wins
        // even though chunk1 is the longer match at position 0.
        let mut lib = Library::new();
        lib.add_fragment(p("v h")).unwrap();
        let f2 = lib.add_fragment(p("h v h")).unwrap();
        let seq = p("v h v h");
        assert_eq!(
            shortest_tokenization(&seq, &lib),
            Program::new(vec![Token::PlaceV, Token::ChunkRef(f2)])
        );
    }

    #[test]
    fn tokenization_leftmost_longest() {
        let mut lib = Library::new();
        let a = lib.add_fragment(p("v (r 1)")).unwrap();
        lib.add_fragment(p("(r 1) h")).unwrap();
        assert_eq!(
            shortest_tokenization(&p("v (r 1) h"), &lib),
            Program::new(vec![Token::ChunkRef(a), Token::PlaceH])
        );
    }

    #[test]
    fn score_examples() {
        let lib = Library::new();
        let cfg = LearningConfig {
            w: 2.0,
            max_fragments_per_trial: 3,
            size_rule: SizeRule::PrimitiveCount,
        };
        assert_eq!(library_score(&lib, &[], &cfg), -26.0);
        let scenes = vec![p("v v h")];
        let mut lib2 = lib.clone();
        lib2.add_fragment(p("h (r 2) h")).unwrap();
        assert_eq!(
            library_score(&lib, &scenes, &cfg) - library_score(&lib2, &scenes, &cfg),
            2.0
        );
    }

    #[test]
    fn huge_w_never_grows() {
        let t = stimulus_towers();
        let s = crate::blockworld::compose_scene(&t[0], &t[1], &SceneConfig::default()).unwrap();
        let (_, prog) = scene_program(&s);
        let obs = vec![prog.clone(), prog.clone(), prog];
        let (lib, adopted) = update_library(&Library::new(), &obs, &LearningConfig::new(1e6)).unwrap();
        assert!(lib.is_empty() && adopted.is_empty());
    }

    #[test]
    fn zero_w_takes_whole_scene() {
        let t = stimulus_towers();
        let s = crate::blockworld::compose_scene(&t[0], &t[1], &SceneConfig::default()).unwrap();
        let (_, prog) = scene_program(&s);
        let obs = vec![prog.clone(), prog.clone()];
        let (lib, _) = update_library(&Library::new(), &obs, &LearningConfig::new(0.0)).unwrap();
        assert!(lib.fragments().iter().any(|f| f.base_expansion == prog));
    }

    #[test]
    fn classification() {
        let t = stimulus_towers();
        let cfg = SceneConfig::default();
        let cls = LevelClassifier::new(&t, &cfg);
        assert_eq!(cls.classify_expansion(&p("v v").0), FragmentLevel::SubTower);
        assert_eq!(cls.classify_expansion(&p("h v (r 1) h (l 1) v").0), FragmentLevel::Tower);
        assert_eq!(cls.classify_expansion(&p("(r 6) v (r 3) v (l 3) h (r 2) h").0), FragmentLevel::Tower);
        assert_eq!(cls.classify_expansion(&p("v v v v").0), FragmentLevel::Other);
        assert_eq!(cls.classify_expansion(&p("v").0), FragmentLevel::Other);
        let s = compose_scene(&t[2], &t[1], &cfg).unwrap();
        let (_, prog) = scene_program(&s);
        assert_eq!(cls.classify_expansion(prog.tokens()), FragmentLevel::Scene);
    }
}
