//! The tower-building language.
//!
//! Base tokens are `h`, `v`, `(l n)` and `(r n)` with `n` in 1..=9. Learned
//! chunks are zero-arity and referenced as `chunkN`. A program runs with a
//! hand column: moves shift the hand, placements drop a block at it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blockworld::{BlockPlacement, GridState, Orientation, Scene};
use crate::error::{Error, Result};

pub type FragmentId = u32;

/// Number of fixed primitives: h, v, l, r and the digits 1..9.
pub const BASE_PRIMITIVES: usize = 13;

pub const MAX_MOVE: u8 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    PlaceH,
    PlaceV,
    MoveL(u8),
    MoveR(u8),
    ChunkRef(FragmentId),
}

impl Token {
    /// Description-length cost: a move is a direction plus a digit.
    pub fn cost(&self) -> usize {
        match self {
            Token::MoveL(_) | Token::MoveR(_) => 2,
            _ => 1,
        }
    }

    pub fn is_placement(&self) -> bool {
        matches!(self, Token::PlaceH | Token::PlaceV)
    }

    pub fn is_base(&self) -> bool {
        !matches!(self, Token::ChunkRef(_))
    }

    /// Signed hand displacement of a move, zero otherwise.
    pub fn offset(&self) -> i64 {
        match *self {
            Token::MoveL(n) => -(n as i64),
            Token::MoveR(n) => n as i64,
            _ => 0,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::PlaceH => f.write_str("h"),
            Token::PlaceV => f.write_str("v"),
            Token::MoveL(n) => write!(f, "(l {n})"),
            Token::MoveR(n) => write!(f, "(r {n})"),
            Token::ChunkRef(id) => write!(f, "chunk{id}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Program(pub Vec<Token>);

impl Program {
    pub fn new(tokens: Vec<Token>) -> Self {
        Program(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn token_length(&self) -> usize {
        token_length(&self.0)
    }

    pub fn is_base(&self) -> bool {
        self.0.iter().all(Token::is_base)
    }

    /// Placements made by a base program (chunks are not expanded).
    pub fn base_placements(&self) -> usize {
        self.0.iter().filter(|t| t.is_placement()).count()
    }

    /// Tokens without the enclosing parentheses.
    pub fn body_text(&self) -> String {
        self.0.iter().map(Token::to_string).collect::<Vec<_>>().join(" ")
    }
}

pub fn token_length(tokens: &[Token]) -> usize {
    tokens.iter().map(Token::cost).sum()
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return Ok(());
        }
        write!(f, "({})", self.body_text())
    }
}

impl FromStr for Program {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_program(s)
    }
}

impl Serialize for Program {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Program {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_program(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, PartialEq)]
enum Lexeme<'a> {
    Open,
    Close,
    Word(&'a str),
}

fn lex(text: &str) -> Vec<(usize, Lexeme<'_>)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        let delim = c == '(' || c == ')' || c.is_whitespace();
        if delim {
            if let Some(s) = start.take() {
                out.push((s, Lexeme::Word(&text[s..i])));
            }
            match c {
                '(' => out.push((i, Lexeme::Open)),
                ')' => out.push((i, Lexeme::Close)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, Lexeme::Word(&text[s..])));
    }
    out
}

fn is_move_at(lx: &[(usize, Lexeme<'_>)], i: usize) -> bool {
    matches!(lx.get(i), Some((_, Lexeme::Open)))
        && matches!(lx.get(i + 1), Some((_, Lexeme::Word("l" | "r"))))
        && matches!(lx.get(i + 2), Some((_, Lexeme::Word(_))))
        && matches!(lx.get(i + 3), Some((_, Lexeme::Close)))
}

fn parse_atom(pos: usize, word: &str) -> Result<Token> {
    match word {
        "h" => Ok(Token::PlaceH),
        "v" => Ok(Token::PlaceV),
        w => w
            .strip_prefix("chunk")
            .and_then(|id| id.parse::<FragmentId>().ok())
            .map(Token::ChunkRef)
            .ok_or_else(|| Error::Parse {
                pos,
                msg: format!("unknown token {w:?}"),
            }),
    }
}

/// Parses `(h (l 1) v)`; the outer parentheses are optional.
pub fn parse_program(text: &str) -> Result<Program> {
    let lx = lex(text);
    let (mut i, end) = if !lx.is_empty() && matches!(lx[0].1, Lexeme::Open) && !is_move_at(&lx, 0) {
        match lx.last() {
            Some((_, Lexeme::Close)) => (1, lx.len() - 1),
            _ => {
                return Err(Error::Parse {
                    pos: text.len(),
                    msg: "missing closing parenthesis".into(),
                })
            }
        }
    } else {
        (0, lx.len())
    };
    let mut tokens = Vec::new();
    while i < end {
        let (pos, ref l) = lx[i];
        match l {
            Lexeme::Word(w) => {
                tokens.push(parse_atom(pos, w)?);
                i += 1;
            }
            Lexeme::Open if is_move_at(&lx[..end], i) => {
                let (dpos, digit) = match &lx[i + 2] {
                    (p, Lexeme::Word(d)) => (*p, *d),
                    _ => unreachable!(),
                };
                let n: u8 = digit.parse().map_err(|_| Error::Parse {
                    pos: dpos,
                    msg: format!("bad move magnitude {digit:?}"),
                })?;
                if !(1..=MAX_MOVE).contains(&n) {
                    return Err(Error::Parse {
                        pos: dpos,
                        msg: format!("move magnitude {n} outside 1..9"),
                    });
                }
                tokens.push(match lx[i + 1].1 {
                    Lexeme::Word("l") => Token::MoveL(n),
                    _ => Token::MoveR(n),
                });
                i += 4;
            }
            _ => {
                return Err(Error::Parse {
                    pos,
                    msg: "malformed token".into(),
                })
            }
        }
    }
    Ok(Program(tokens))
}

pub fn print_program(program: &Program) -> String {
    program.to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub id: FragmentId,
    pub body: Program,
    pub base_expansion: Program,
}

impl Fragment {
    pub fn placements(&self) -> usize {
        self.base_expansion.base_placements()
    }
}

/// Learned fragments on top of the fixed base primitives.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Library {
    fragments: Vec<Fragment>,
}

impl Library {
    pub fn new() -> Self {
        Library::default()
    }

    pub fn fragments(&self) -> &[Fragment] {
        &self.fragments
    }

    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    pub fn get(&self, id: FragmentId) -> Option<&Fragment> {
        self.fragments.iter().find(|f| f.id == id)
    }

    pub fn next_id(&self) -> FragmentId {
        self.fragments.iter().map(|f| f.id).max().unwrap_or(0) + 1
    }

    /// Adds a fragment with the next free id.
    pub fn add_fragment(&mut self, body: Program) -> Result<FragmentId> {
        let id = self.next_id();
        self.insert(id, body)?;
        Ok(id)
    }

    fn insert(&mut self, id: FragmentId, body: Program) -> Result<()> {
        if self.get(id).is_some() {
            return Err(Error::config("library", format!("duplicate fragment id {id}")));
        }
        let base_expansion = inline(&body, self)?;
        if body.token_length() < 2 || base_expansion.base_placements() == 0 {
            return Err(Error::config(
                "library",
                format!("fragment {body} needs a placement and at least 2 token units"),
            ));
        }
        self.fragments.push(Fragment {
            id,
            body,
            base_expansion,
        });
        Ok(())
    }

    /// Rebuilds a library from a dump, recomputing and checking expansions.
    pub fn from_fragments(fragments: Vec<Fragment>) -> Result<Self> {
        let mut lib = Library::new();
        for f in fragments {
            lib.insert(f.id, f.body.clone())?;
            if lib.get(f.id).map(|g| &g.base_expansion) != Some(&f.base_expansion) {
                return Err(Error::config(
                    "library",
                    format!("stale base expansion for chunk{}", f.id),
                ));
            }
        }
        Ok(lib)
    }

    pub fn expansions(&self) -> Vec<&[Token]> {
        self.fragments.iter().map(|f| f.base_expansion.tokens()).collect()
    }
}

impl<'de> Deserialize<'de> for Library {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Dump {
            fragments: Vec<Fragment>,
        }
        let dump = Dump::deserialize(d)?;
        Library::from_fragments(dump.fragments).map_err(serde::de::Error::custom)
    }
}

/// Replaces every chunk reference by its body, recursively.
pub fn inline(program: &Program, library: &Library) -> Result<Program> {
    let mut out = Vec::with_capacity(program.len());
    let mut stack = Vec::new();
    inline_into(program.tokens(), library, &mut stack, &mut out)?;
    Ok(Program(out))
}

fn inline_into(
    tokens: &[Token],
    library: &Library,
    stack: &mut Vec<FragmentId>,
    out: &mut Vec<Token>,
) -> Result<()> {
    for &t in tokens {
        match t {
            Token::ChunkRef(id) => {
                if stack.contains(&id) {
                    return Err(Error::Cycle(id));
                }
                let frag = library.get(id).ok_or(Error::UnresolvedChunk(id))?;
                stack.push(id);
                inline_into(frag.body.tokens(), library, stack, out)?;
                stack.pop();
            }
            base => out.push(base),
        }
    }
    Ok(())
}

/// Runs a program from `start_x`, failing on any invalid move or drop.
pub fn execute(
    program: &Program,
    library: &Library,
    start_x: usize,
    grid: &GridState,
) -> Result<(GridState, Vec<BlockPlacement>)> {
    let mut grid = grid.clone();
    let mut placed = Vec::new();
    let mut hand = start_x as i64;
    if start_x >= grid.width {
        return Err(Error::HandOutOfBounds {
            hand,
            width: grid.width,
        });
    }
    let mut stack = Vec::new();
    run(program.tokens(), library, &mut hand, &mut grid, &mut placed, &mut stack)?;
    Ok((grid, placed))
}

fn run(
    tokens: &[Token],
    library: &Library,
    hand: &mut i64,
    grid: &mut GridState,
    placed: &mut Vec<BlockPlacement>,
    stack: &mut Vec<FragmentId>,
) -> Result<()> {
    for &t in tokens {
        match t {
            Token::PlaceH => placed.push(grid.place(Orientation::Horizontal, *hand)?),
            Token::PlaceV => placed.push(grid.place(Orientation::Vertical, *hand)?),
            Token::MoveL(_) | Token::MoveR(_) => {
                *hand += t.offset();
                if *hand < 0 || *hand >= grid.width as i64 {
                    return Err(Error::HandOutOfBounds {
                        hand: *hand,
                        width: grid.width,
                    });
                }
            }
            Token::ChunkRef(id) => {
                if stack.contains(&id) {
                    return Err(Error::Cycle(id));
                }
                let frag = library.get(id).ok_or(Error::UnresolvedChunk(id))?;
                stack.push(id);
                run(frag.body.tokens(), library, hand, grid, placed, stack)?;
                stack.pop();
            }
        }
    }
    Ok(())
}

/// Move tokens taking the hand from `from` to `to`, at most 9 columns each.
pub fn moves_between(from: usize, to: usize) -> Vec<Token> {
    let mut out = Vec::new();
    let mut d = to as i64 - from as i64;
    while d != 0 {
        let step = d.clamp(-(MAX_MOVE as i64), MAX_MOVE as i64);
        out.push(if step > 0 {
            Token::MoveR(step as u8)
        } else {
            Token::MoveL((-step) as u8)
        });
        d -= step;
    }
    out
}

/// Scene blocks in build order.
///
/// Blocks whose column spans overlap or touch form a cluster; clusters are
/// visited left to right and each is built bottom-up, then left to right.
pub fn canonical_order(scene: &Scene) -> Vec<BlockPlacement> {
    let mut by_start: Vec<BlockPlacement> = scene.blocks.iter().copied().collect();
    by_start.sort_by_key(|b| (b.x, b.y, b.orientation));
    let mut clusters: Vec<(Vec<BlockPlacement>, usize)> = Vec::new();
    for b in by_start {
        let last = b.x + b.orientation.span() - 1;
        match clusters.last_mut() {
            Some((members, end)) if b.x <= *end + 1 => {
                members.push(b);
                *end = (*end).max(last);
            }
            _ => clusters.push((vec![b], last)),
        }
    }
    let mut order = Vec::with_capacity(scene.len());
    for (mut members, _) in clusters {
        members.sort_by_key(|b| (b.y, b.x, b.orientation));
        order.extend(members);
    }
    order
}

pub fn canonical_program(scene: &Scene, start_x: usize) -> Program {
    let mut tokens = Vec::new();
    let mut hand = start_x;
    for b in canonical_order(scene) {
        tokens.extend(moves_between(hand, b.x));
        hand = b.x;
        tokens.push(match b.orientation {
            Orientation::Horizontal => Token::PlaceH,
            Orientation::Vertical => Token::PlaceV,
        });
    }
    Program(tokens)
}

/// Canonical program starting at the scene's leftmost column.
pub fn scene_program(scene: &Scene) -> (usize, Program) {
    let start = scene.leftmost_column().unwrap_or(0);
    (start, canonical_program(scene, start))
}

pub fn validate_constructible(scene: &Scene) -> bool {
    let (start, program) = scene_program(scene);
    let grid = GridState::new(scene.width, scene.height);
    if scene.is_empty() {
        return true;
    }
    match execute(&program, &Library::new(), start, &grid) {
        Ok((_, placed)) => placed.len() == scene.len() && placed.iter().all(|b| scene.blocks.contains(b)),
        Err(_) => false,
    }
}

/// Executes an arbitrary base sequence on a grid wide and tall enough for
/// it, returning placements in build order.
pub fn execute_unbounded(tokens: &[Token], library: &Library) -> Result<Vec<BlockPlacement>> {
    let expanded = inline(&Program(tokens.to_vec()), library)?;
    let (mut hand, mut lo, mut hi) = (0i64, 0i64, 0i64);
    for t in expanded.tokens() {
        hand += t.offset();
        lo = lo.min(hand);
        hi = hi.max(hand);
    }
    let width = (hi - lo + 2) as usize;
    let height = 2 * expanded.base_placements() + 2;
    let grid = GridState::new(width, height);
    let (_, placed) = execute(&expanded, &Library::new(), (-lo) as usize, &grid)?;
    Ok(placed)
}
