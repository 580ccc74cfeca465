//! Architect (speaker) and Builder (listener).
//!
//! Fixed words name base tokens. Synthetic words `chunkA`, `chunkB`, ... are
//! minted alongside learned fragments and their meanings must be learned.
//! The hypothesis space is the set of bijections between synthetic words and
//! meanings. With `null_meaning` on, meanings are the fragments plus a "do
//! nothing" meaning, with one word to spare.
//!
//! The Architect's belief is uniform over the bijections still consistent
//! with everything it has seen. It is stored as one allowed-meaning mask per
//! heard word; words never uttered are unconstrained.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blockworld::{BlockPlacement, GridState, Orientation, Scene};
use crate::dsl::{parse_program, scene_program, FragmentId, Library, Program, Token};
use crate::error::{Error, Result};
use crate::library_learning::{shortest_tokenization, shortest_tokenization_using};

const MAX_MEANINGS: usize = 127;
const MAX_ENUMERATED_WORDS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WordKind {
    Fixed,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    pub surface: String,
    pub kind: WordKind,
}

impl Word {
    /// The fixed word for a base token.
    pub fn fixed(token: Token) -> Self {
        debug_assert!(token.is_base());
        Word {
            surface: token.to_string(),
            kind: WordKind::Fixed,
        }
    }

    pub fn synthetic(index: usize) -> Self {
        Word {
            surface: synthetic_name(index),
            kind: WordKind::Synthetic,
        }
    }

    pub fn from_surface(surface: &str) -> Self {
        let kind = if surface.starts_with("chunk") && surface.len() > 5 && surface[5..].chars().all(|c| c.is_ascii_uppercase()) {
            WordKind::Synthetic
        } else {
            WordKind::Fixed
        };
        Word {
            surface: surface.to_string(),
            kind,
        }
    }

    fn base_token(&self) -> Result<Token> {
        match parse_program(&self.surface).map(|p| p.0) {
            Ok(t) if t.len() == 1 && t[0].is_base() => Ok(t[0]),
            _ => Err(Error::UnknownWord(self.surface.clone())),
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.surface)
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Word::from_surface(&String::deserialize(d)?))
    }
}

/// `chunkA` .. `chunkZ`, `chunkAA`, ...
pub fn synthetic_name(mut index: usize) -> String {
    let mut letters = Vec::new();
    loop {
        letters.push(b'A' + (index % 26) as u8);
        if index < 26 {
            break;
        }
        index = index / 26 - 1;
    }
    letters.reverse();
    format!("chunk{}", String::from_utf8(letters).expect("ascii"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Meaning {
    Null,
    Fragment(FragmentId),
}

impl fmt::Display for Meaning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Meaning::Null => f.write_str("null"),
            Meaning::Fragment(id) => write!(f, "chunk{id}"),
        }
    }
}

/// Synthetic words and the meanings they may take, grown with the library.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconSpace {
    words: Vec<Word>,
    meanings: Vec<Meaning>,
    fragments: Vec<FragmentId>,
}

impl LexiconSpace {
    pub fn new(null_meaning: bool) -> Self {
        let mut space = LexiconSpace {
            words: Vec::new(),
            meanings: Vec::new(),
            fragments: Vec::new(),
        };
        if null_meaning {
            space.words.push(Word::synthetic(0));
            space.meanings.push(Meaning::Null);
        }
        space
    }

    pub fn add_fragment(&mut self, id: FragmentId) -> Result<()> {
        if self.meanings.len() >= MAX_MEANINGS {
            return Err(Error::config("library", format!("more than {MAX_MEANINGS} lexicon meanings")));
        }
        self.meanings.push(Meaning::Fragment(id));
        self.words.push(Word::synthetic(self.words.len()));
        self.fragments.push(id);
        Ok(())
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn meanings(&self) -> &[Meaning] {
        &self.meanings
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word_index(&self, surface: &str) -> Option<usize> {
        self.words.iter().position(|w| w.surface == surface)
    }

    pub fn meaning_index(&self, m: Meaning) -> Option<usize> {
        self.meanings.iter().position(|&x| x == m)
    }

    /// The word minted together with a fragment.
    pub fn own_word(&self, id: FragmentId) -> Option<usize> {
        self.fragments.iter().position(|&f| f == id)
    }
}

/// One hypothesized word-to-meaning bijection.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub mapping: BTreeMap<String, Meaning>,
}

pub fn literal_listener(t: &Token, u: &Word, lex: &Lexicon) -> Result<f64> {
    match u.kind {
        WordKind::Fixed => Ok(if u.base_token()? == *t { 1.0 } else { 0.0 }),
        WordKind::Synthetic => {
            let m = lex
                .mapping
                .get(&u.surface)
                .ok_or_else(|| Error::UnknownWord(u.surface.clone()))?;
            Ok(match (m, t) {
                (Meaning::Fragment(a), Token::ChunkRef(b)) if a == b => 1.0,
                _ => 0.0,
            })
        }
    }
}

/// What the Builder does for one word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Base(Token),
    Meaning(Meaning),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Base(t) => write!(f, "{t}"),
            Action::Meaning(m) => write!(f, "{m}"),
        }
    }
}

/// The Builder's hand and grid. Moves clamp to the grid; drops that do not
/// fit are skipped; no more than `cap` blocks are placed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildState {
    pub grid: GridState,
    pub hand: usize,
    pub cap: usize,
}

impl BuildState {
    pub fn new(width: usize, height: usize, start_x: usize, cap: usize) -> Self {
        BuildState {
            grid: GridState::new(width, height),
            hand: start_x.min(width.saturating_sub(1)),
            cap,
        }
    }

    fn step(&mut self, t: Token, out: &mut Vec<BlockPlacement>) {
        let orientation = match t {
            Token::PlaceH => Orientation::Horizontal,
            Token::PlaceV => Orientation::Vertical,
            Token::MoveL(_) | Token::MoveR(_) => {
                let max = self.grid.width.saturating_sub(1) as i64;
                self.hand = (self.hand as i64 + t.offset()).clamp(0, max) as usize;
                return;
            }
            Token::ChunkRef(_) => return,
        };
        if self.grid.placements.len() < self.cap {
            if let Ok(b) = self.grid.place(orientation, self.hand as i64) {
                out.push(b);
            }
        }
    }

    pub fn apply(&mut self, action: Action, library: &Library) -> Vec<BlockPlacement> {
        let mut out = Vec::new();
        match action {
            Action::Base(t) => self.step(t, &mut out),
            Action::Meaning(Meaning::Null) => {}
            Action::Meaning(Meaning::Fragment(id)) => {
                if let Some(f) = library.get(id) {
                    for &t in f.base_expansion.tokens() {
                        self.step(t, &mut out);
                    }
                }
            }
        }
        out
    }

    pub fn preview(&self, action: Action, library: &Library) -> Vec<BlockPlacement> {
        self.clone().apply(action, library)
    }

    pub fn built(&self) -> Scene {
        self.grid.to_scene()
    }
}

/// Uniform distribution over the bijections allowed by per-word masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeliefState {
    space: LexiconSpace,
    rows: Vec<Option<u128>>,
    anomalies: usize,
}

impl BeliefState {
    pub fn new(null_meaning: bool) -> Self {
        let space = LexiconSpace::new(null_meaning);
        let rows = vec![None; space.len()];
        BeliefState {
            space,
            rows,
            anomalies: 0,
        }
    }

    pub fn space(&self) -> &LexiconSpace {
        &self.space
    }

    pub fn anomalies(&self) -> usize {
        self.anomalies
    }

    /// Adds a fragment and its word; previously heard words cannot take
    /// the new meaning, every other word can.
    pub fn extend_hypotheses(&mut self, id: FragmentId) -> Result<()> {
        self.space.add_fragment(id)?;
        self.rows.push(None);
        Ok(())
    }

    fn unheard(&self) -> usize {
        self.rows.iter().filter(|r| r.is_none()).count()
    }

    /// Injective assignments of the heard words, optionally forcing one word
    /// to one meaning or removing one meaning from every heard word.
    fn heard_assignments(&self, forced: Option<(usize, usize)>, banned: Option<usize>) -> f64 {
        let ban = banned.map_or(0u128, |c| 1u128 << c);
        let masks: Vec<u128> = self
            .rows
            .iter()
            .enumerate()
            .filter_map(|(w, r)| {
                r.map(|m| match forced {
                    Some((fw, fc)) if fw == w => m & (1u128 << fc),
                    _ => m & !ban,
                })
            })
            .collect();
        let mut memo = HashMap::new();
        count_assignments(&masks, 0, 0, &mut memo)
    }

    /// Number of bijections with positive probability.
    pub fn n_hypotheses(&self) -> f64 {
        self.heard_assignments(None, None) * factorial(self.unheard())
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        let heard = self.heard_assignments(None, None);
        heard.ln() + (1..=self.unheard()).map(|k| (k as f64).ln()).sum::<f64>()
    }

    pub fn is_point_mass(&self) -> bool {
        self.n_hypotheses() == 1.0
    }

    /// Probability that word `w` means meaning `m` (both as indices).
    pub fn marginal(&self, w: usize, m: usize) -> f64 {
        let total = self.heard_assignments(None, None);
        if total == 0.0 {
            return 0.0;
        }
        match self.rows[w] {
            Some(mask) => {
                if mask & (1u128 << m) == 0 {
                    0.0
                } else {
                    self.heard_assignments(Some((w, m)), None) / total
                }
            }
            None => self.heard_assignments(None, Some(m)) / total / self.unheard() as f64,
        }
    }

    /// Probability that a listener resolves word `u` to primitive `t`.
    pub fn marginal_listener(&self, t: &Token, u: &Word) -> f64 {
        match u.kind {
            WordKind::Fixed => match u.base_token() {
                Ok(b) if b == *t => 1.0,
                _ => 0.0,
            },
            WordKind::Synthetic => {
                let (Some(w), Token::ChunkRef(id)) = (self.space.word_index(&u.surface), t) else {
                    return 0.0;
                };
                match self.space.meaning_index(Meaning::Fragment(*id)) {
                    Some(m) => self.marginal(w, m),
                    None => 0.0,
                }
            }
        }
    }

    /// Restricts word `w` to the meanings in `consistent`. Returns true when
    /// nothing survives and the belief was reset to the full space.
    pub fn observe(&mut self, w: usize, consistent: u128) -> bool {
        let all = (1u128 << self.space.len()) - 1;
        let prior = self.rows[w].unwrap_or(all);
        self.rows[w] = Some(prior & consistent);
        if self.heard_assignments(None, None) == 0.0 {
            self.rows.iter_mut().for_each(|r| *r = None);
            self.anomalies += 1;
            return true;
        }
        false
    }

    /// Bayesian update after the Builder acted on word `u` from `pre`.
    /// Fixed words leave the belief unchanged.
    pub fn update_belief(
        &mut self,
        u: &Word,
        observed: &[BlockPlacement],
        library: &Library,
        pre: &BuildState,
    ) -> Result<bool> {
        if u.kind == WordKind::Fixed {
            return Ok(false);
        }
        let w = self
            .space
            .word_index(&u.surface)
            .ok_or_else(|| Error::UnknownWord(u.surface.clone()))?;
        let mut consistent = 0u128;
        for (m, &meaning) in self.space.meanings.iter().enumerate() {
            if pre.preview(Action::Meaning(meaning), library) == observed {
                consistent |= 1u128 << m;
            }
        }
        Ok(self.observe(w, consistent))
    }

    /// Explicit support with probabilities, for small spaces.
    pub fn hypotheses(&self) -> Result<Vec<(Lexicon, f64)>> {
        let k = self.space.len();
        if k > MAX_ENUMERATED_WORDS {
            return Err(Error::HypothesisSpaceTooLarge(k));
        }
        let all = (1u128 << k) - 1;
        let masks: Vec<u128> = self.rows.iter().map(|r| r.unwrap_or(all)).collect();
        let mut out = Vec::new();
        let mut assign = Vec::with_capacity(k);
        enumerate_bijections(&masks, 0, &mut assign, &mut out);
        let p = 1.0 / out.len() as f64;
        Ok(out
            .into_iter()
            .map(|a| {
                let mapping = a
                    .iter()
                    .enumerate()
                    .map(|(w, &m)| (self.space.words[w].surface.clone(), self.space.meanings[m]))
                    .collect();
                (Lexicon { mapping }, p)
            })
            .collect())
    }

    /// The single remaining lexicon, if the belief has collapsed.
    pub fn point_estimate(&self) -> Option<Lexicon> {
        if !self.is_point_mass() {
            return None;
        }
        let k = self.space.len();
        let mut mapping = BTreeMap::new();
        for w in 0..k {
            let m = (0..k).find(|&m| self.marginal(w, m) > 0.5)?;
            mapping.insert(self.space.words[w].surface.clone(), self.space.meanings[m]);
        }
        Some(Lexicon { mapping })
    }

    /// Word-by-meaning marginal table.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let k = self.space.len();
        (0..k).map(|w| (0..k).map(|m| self.marginal(w, m)).collect()).collect()
    }
}

fn count_assignments(masks: &[u128], i: usize, used: u128, memo: &mut HashMap<(usize, u128), f64>) -> f64 {
    if i == masks.len() {
        return 1.0;
    }
    if let Some(&c) = memo.get(&(i, used)) {
        return c;
    }
    let mut free = masks[i] & !used;
    let mut total = 0.0;
    while free != 0 {
        let bit = free & free.wrapping_neg();
        total += count_assignments(masks, i + 1, used | bit, memo);
        free &= !bit;
    }
    memo.insert((i, used), total);
    total
}

fn enumerate_bijections(masks: &[u128], used: u128, assign: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let i = assign.len();
    if i == masks.len() {
        out.push(assign.clone());
        return;
    }
    for m in 0..masks.len() {
        let bit = 1u128 << m;
        if masks[i] & bit != 0 && used & bit == 0 {
            assign.push(m);
            enumerate_bijections(masks, used | bit, assign, out);
            assign.pop();
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Listener with persistent first-hearing bindings.
#[derive(Clone, Debug)]
pub struct Builder {
    space: LexiconSpace,
    bindings: BTreeMap<usize, usize>,
}

impl Builder {
    pub fn new(null_meaning: bool) -> Self {
        Builder {
            space: LexiconSpace::new(null_meaning),
            bindings: BTreeMap::new(),
        }
    }

    pub fn add_fragment(&mut self, id: FragmentId) -> Result<()> {
        self.space.add_fragment(id)
    }

    pub fn interpret<R: Rng + ?Sized>(&mut self, u: &Word, rng: &mut R) -> Result<Action> {
        if u.kind == WordKind::Fixed {
            return Ok(Action::Base(u.base_token()?));
        }
        let w = self
            .space
            .word_index(&u.surface)
            .ok_or_else(|| Error::UnknownWord(u.surface.clone()))?;
        if let Some(&m) = self.bindings.get(&w) {
            return Ok(Action::Meaning(self.space.meanings[m]));
        }
        let bound: Vec<usize> = self.bindings.values().copied().collect();
        let free: Vec<usize> = (0..self.space.len()).filter(|m| !bound.contains(m)).collect();
        if free.is_empty() {
            return Err(Error::NoUnboundMeaning(u.surface.clone()));
        }
        let m = free[rng.gen_range(0..free.len())];
        self.bindings.insert(w, m);
        Ok(Action::Meaning(self.space.meanings[m]))
    }

    pub fn bindings(&self) -> Lexicon {
        Lexicon {
            mapping: self
                .bindings
                .iter()
                .map(|(&w, &m)| (self.space.words[w].surface.clone(), self.space.meanings[m]))
                .collect(),
        }
    }
}

pub fn builder_interpret<R: Rng + ?Sized>(u: &Word, builder: &mut Builder, rng: &mut R) -> Result<Action> {
    builder.interpret(u, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PragmaticsConfig {
    pub alpha: f64,
    pub beta: f64,
    pub max_candidates: usize,
    pub null_meaning: bool,
}

impl Default for PragmaticsConfig {
    fn default() -> Self {
        PragmaticsConfig {
            alpha: 5.0,
            beta: 0.3,
            max_candidates: 4,
            null_meaning: true,
        }
    }
}

impl PragmaticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::config("alpha", format!("{} is negative or NaN", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta", format!("{} is outside [0, 1]", self.beta)));
        }
        if self.max_candidates == 0 {
            return Err(Error::config("max_candidates", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub words: Vec<Word>,
}

/// Base program, full-library program and one program per single-fragment
/// sublibrary; distinct, shortest first, always ending with the base program.
pub fn candidate_programs(scene: &Scene, library: &Library, max_candidates: usize) -> Vec<Program> {
    let (_, base) = scene_program(scene);
    let mut others: Vec<Program> = Vec::new();
    let mut push = |p: Program| {
        if p != base && !others.contains(&p) {
            others.push(p);
        }
    };
    push(shortest_tokenization(&base, library));
    for f in library.fragments() {
        push(shortest_tokenization_using(&base, &[f]));
    }
    others.sort_by_key(Program::token_length);
    others.truncate(max_candidates.saturating_sub(1));
    others.push(base);
    others
}

/// For each step the word the listener is most likely to resolve correctly;
/// ties go to the fragment's own word.
pub fn best_utterance(program: &Program, belief: &BeliefState) -> Utterance {
    let space = belief.space();
    let words = program
        .tokens()
        .iter()
        .map(|&t| match t {
            Token::ChunkRef(id) => {
                let own = space.own_word(id);
                let mut best: Option<(f64, usize)> = None;
                for (w, word) in space.words().iter().enumerate() {
                    let p = belief.marginal_listener(&t, word);
                    let better = match best {
                        None => true,
                        Some((bp, bw)) => p > bp || (p == bp && Some(w) == own && Some(bw) != own),
                    };
                    if better {
                        best = Some((p, w));
                    }
                }
                match best {
                    Some((_, w)) => space.words()[w].clone(),
                    None => Word::synthetic(0),
                }
            }
            base => Word::fixed(base),
        })
        .collect();
    Utterance { words }
}

pub fn joint_utility(program: &Program, utterance: &Utterance, belief: &BeliefState, cfg: &PragmaticsConfig) -> Result<f64> {
    if program.len() != utterance.words.len() {
        return Err(Error::Misaligned {
            words: utterance.words.len(),
            steps: program.len(),
        });
    }
    let mut informativity = 0.0;
    for (t, u) in program.tokens().iter().zip(&utterance.words) {
        let p = belief.marginal_listener(t, u);
        if p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        informativity += p.ln();
    }
    Ok((1.0 - cfg.beta) * informativity - cfg.beta * program.token_length() as f64)
}

/// Softmax with inverse temperature `alpha` over finite utilities. Infinite
/// `alpha` spreads mass evenly over the maximizers.
pub fn choice_distribution(utilities: &[f64], alpha: f64) -> Vec<f64> {
    let max = utilities
        .iter()
        .copied()
        .filter(|u| u.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; utilities.len()];
    }
    let weights: Vec<f64> = utilities
        .iter()
        .map(|&u| {
            if !u.is_finite() {
                0.0
            } else if alpha.is_infinite() {
                if u == max {
                    1.0
                } else {
                    0.0
                }
            } else {
                (alpha * (u - max)).exp()
            }
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if r < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub program: Program,
    pub utterance: Utterance,
    pub utility: f64,
    pub candidates: Vec<Program>,
    pub utilities: Vec<f64>,
    pub probabilities: Vec<f64>,
}

pub fn architect_choose<R: Rng + ?Sized>(
    scene: &Scene,
    library: &Library,
    belief: &BeliefState,
    cfg: &PragmaticsConfig,
    rng: &mut R,
) -> Result<Choice> {
    let candidates = candidate_programs(scene, library, cfg.max_candidates);
    let utterances: Vec<Utterance> = candidates.iter().map(|p| best_utterance(p, belief)).collect();
    let utilities = candidates
        .iter()
        .zip(&utterances)
        .map(|(p, u)| joint_utility(p, u, belief, cfg))
        .collect::<Result<Vec<f64>>>()?;
    let probabilities = choice_distribution(&utilities, cfg.alpha);
    let k = sample_index(&probabilities, rng);
    Ok(Choice {
        program: candidates[k].clone(),
        utterance: utterances[k].clone(),
        utility: utilities[k],
        candidates,
        utilities,
        probabilities,
    })
}
