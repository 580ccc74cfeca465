//! Domino blocks on a gravity grid.
//!
//! Rows grow upward from 0 (the ground). A horizontal block covers two
//! neighbouring cells of one row, a vertical block two stacked cells of one
//! column. Blocks are dropped into a column and come to rest on the tallest
//! stack beneath them, so every placement is supported by construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

impl Orientation {
    /// Columns spanned by a block of this orientation.
    pub fn span(self) -> usize {
        match self {
            Orientation::Horizontal => 2,
            Orientation::Vertical => 1,
        }
    }

    /// Rows spanned by a block of this orientation.
    pub fn rise(self) -> usize {
        match self {
            Orientation::Horizontal => 1,
            Orientation::Vertical => 2,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::Horizontal => f.write_str("horizontal"),
            Orientation::Vertical => f.write_str("vertical"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockPlacement {
    pub x: usize,
    pub y: usize,
    pub orientation: Orientation,
}

impl BlockPlacement {
    pub fn new(x: usize, y: usize, orientation: Orientation) -> Self {
        BlockPlacement { x, y, orientation }
    }

    pub fn h(x: usize, y: usize) -> Self {
        Self::new(x, y, Orientation::Horizontal)
    }

    pub fn v(x: usize, y: usize) -> Self {
        Self::new(x, y, Orientation::Vertical)
    }

    pub fn cells(&self) -> [(usize, usize); 2] {
        match self.orientation {
            Orientation::Horizontal => [(self.x, self.y), (self.x + 1, self.y)],
            Orientation::Vertical => [(self.x, self.y), (self.x, self.y + 1)],
        }
    }

    pub fn translated(&self, dx: usize, dy: usize) -> Self {
        BlockPlacement::new(self.x + dx, self.y + dy, self.orientation)
    }

    fn fits(&self, width: usize, height: usize) -> bool {
        self.x + self.orientation.span() <= width && self.y + self.orientation.rise() <= height
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridState {
    pub width: usize,
    pub height: usize,
    pub column_heights: Vec<usize>,
    pub placements: Vec<BlockPlacement>,
}

impl GridState {
    pub fn new(width: usize, height: usize) -> Self {
        GridState {
            width,
            height,
            column_heights: vec![0; width],
            placements: Vec::new(),
        }
    }

    /// Where a block dropped at column `x` would come to rest.
    pub fn landing(&self, orientation: Orientation, x: i64) -> Result<BlockPlacement> {
        let span = orientation.span() as i64;
        if x < 0 || x + span > self.width as i64 {
            return Err(Error::OutOfBounds {
                x,
                orientation,
                width: self.width,
            });
        }
        let x = x as usize;
        let y = self.column_heights[x..x + orientation.span()]
            .iter()
            .copied()
            .max()
            .unwrap_or(0);
        if y + orientation.rise() > self.height {
            return Err(Error::TooTall {
                x,
                y,
                orientation,
                height: self.height,
            });
        }
        Ok(BlockPlacement::new(x, y, orientation))
    }

    /// Drops a block in place and returns where it landed.
    pub fn place(&mut self, orientation: Orientation, x: i64) -> Result<BlockPlacement> {
        let b = self.landing(orientation, x)?;
        for (cx, cy) in b.cells() {
            self.column_heights[cx] = self.column_heights[cx].max(cy + 1);
        }
        self.placements.push(b);
        Ok(b)
    }

    /// Pure form of [`GridState::place`].
    pub fn drop_block(&self, orientation: Orientation, x: i64) -> Result<GridState> {
        let mut next = self.clone();
        next.place(orientation, x)?;
        Ok(next)
    }

    pub fn occupied(&self) -> BTreeMap<(usize, usize), Orientation> {
        let mut cells = BTreeMap::new();
        for b in &self.placements {
            for c in b.cells() {
                cells.insert(c, b.orientation);
            }
        }
        cells
    }

    /// Checks overlap, support and the cached column heights.
    pub fn check_invariants(&self) -> Result<()> {
        let mut cells: BTreeMap<(usize, usize), Orientation> = BTreeMap::new();
        for b in &self.placements {
            if !b.fits(self.width, self.height) {
                return Err(Error::OutOfBounds {
                    x: b.x as i64,
                    orientation: b.orientation,
                    width: self.width,
                });
            }
            for c in b.cells() {
                if cells.insert(c, b.orientation).is_some() {
                    return Err(Error::Overlap { x: c.0, y: c.1 });
                }
            }
        }
        for b in &self.placements {
            if b.y > 0 {
                let supported = b.cells().iter().any(|&(cx, cy)| {
                    cy == b.y && cells.contains_key(&(cx, cy - 1))
                });
                if !supported {
                    return Err(Error::NotConstructible(format!("unsupported block {b:?}")));
                }
            }
        }
        let mut heights = vec![0; self.width];
        for &(cx, cy) in cells.keys() {
            heights[cx] = heights[cx].max(cy + 1);
        }
        if heights != self.column_heights {
            return Err(Error::NotConstructible("column heights out of sync".into()));
        }
        Ok(())
    }

    pub fn to_scene(&self) -> Scene {
        Scene {
            width: self.width,
            height: self.height,
            blocks: self.placements.iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub blocks: BTreeSet<BlockPlacement>,
}

impl Scene {
    pub fn empty(width: usize, height: usize) -> Self {
        Scene {
            width,
            height,
            blocks: BTreeSet::new(),
        }
    }

    pub fn new(width: usize, height: usize, blocks: impl IntoIterator<Item = BlockPlacement>) -> Self {
        Scene {
            width,
            height,
            blocks: blocks.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn leftmost_column(&self) -> Option<usize> {
        self.blocks.iter().map(|b| b.x).min()
    }

    /// Blocks shifted so that the lowest row and leftmost column are zero.
    pub fn normalized(&self) -> BTreeSet<BlockPlacement> {
        normalize(self.blocks.iter())
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene = serde_json::from_str(&text)?;
        for b in &scene.blocks {
            if !b.fits(scene.width, scene.height) {
                return Err(Error::OutOfBounds {
                    x: b.x as i64,
                    orientation: b.orientation,
                    width: scene.width,
                });
            }
        }
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn normalize<'a>(blocks: impl Iterator<Item = &'a BlockPlacement> + Clone) -> BTreeSet<BlockPlacement> {
    let mx = blocks.clone().map(|b| b.x).min().unwrap_or(0);
    let my = blocks.clone().map(|b| b.y).min().unwrap_or(0);
    blocks
        .map(|b| BlockPlacement::new(b.x - mx, b.y - my, b.orientation))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerStimulus {
    pub id: String,
    pub blocks: Vec<BlockPlacement>,
}

impl TowerStimulus {
    pub fn new(id: &str, blocks: Vec<BlockPlacement>) -> Self {
        TowerStimulus {
            id: id.to_string(),
            blocks,
        }
    }

    pub fn width(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.x + b.orientation.span())
            .max()
            .unwrap_or(0)
    }

    pub fn height(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.y + b.orientation.rise())
            .max()
            .unwrap_or(0)
    }

    /// The tower as a standalone scene sized to fit it exactly.
    pub fn as_scene(&self) -> Scene {
        Scene::new(self.width(), self.height(), self.blocks.iter().copied())
    }

    pub fn validate(&self) -> Result<()> {
        let verticals = self
            .blocks
            .iter()
            .filter(|b| b.orientation == Orientation::Vertical)
            .count();
        if self.blocks.len() != 4 || verticals != 2 {
            return Err(Error::config(
                format!("stimuli.{}", self.id),
                "a tower needs exactly 2 vertical and 2 horizontal blocks",
            ));
        }
        if !crate::dsl::validate_constructible(&self.as_scene()) {
            return Err(Error::config(
                format!("stimuli.{}", self.id),
                "tower cannot be built by gravity drops",
            ));
        }
        Ok(())
    }
}

/// The three default towers in tower-local coordinates: an L, a C and a Pi.
///
/// L and C share a three-block core: two stacked verticals with a
/// horizontal beside the lower one.
pub fn stimulus_towers() -> Vec<TowerStimulus> {
    use BlockPlacement as B;
    vec![
        TowerStimulus::new("L", vec![B::h(0, 0), B::v(0, 1), B::h(1, 1), B::v(0, 3)]),
        TowerStimulus::new("C", vec![B::v(0, 0), B::h(1, 0), B::v(0, 2), B::h(0, 4)]),
        TowerStimulus::new("Pi", vec![B::v(0, 0), B::v(3, 0), B::h(0, 2), B::h(2, 2)]),
    ]
}

pub fn load_stimuli(path: &Path) -> Result<Vec<TowerStimulus>> {
    let text = std::fs::read_to_string(path)?;
    let towers: Vec<TowerStimulus> = serde_json::from_str(&text)?;
    validate_stimuli(&towers)?;
    Ok(towers)
}

pub fn validate_stimuli(towers: &[TowerStimulus]) -> Result<()> {
    if towers.len() != 3 {
        return Err(Error::config("stimuli", format!("expected 3 towers, found {}", towers.len())));
    }
    let ids: BTreeSet<&str> = towers.iter().map(|t| t.id.as_str()).collect();
    if ids.len() != towers.len() {
        return Err(Error::config("stimuli", "tower ids must be unique"));
    }
    towers.iter().try_for_each(TowerStimulus::validate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub left_origin: usize,
    pub right_origin: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 12,
            height: 8,
            left_origin: 1,
            right_origin: 7,
        }
    }
}

pub fn compose_scene(left: &TowerStimulus, right: &TowerStimulus, config: &SceneConfig) -> Result<Scene> {
    let mut cells = BTreeSet::new();
    let mut blocks = BTreeSet::new();
    let placed = left
        .blocks
        .iter()
        .map(|b| b.translated(config.left_origin, 0))
        .chain(right.blocks.iter().map(|b| b.translated(config.right_origin, 0)));
    for b in placed {
        if !b.fits(config.width, config.height) {
            return Err(Error::OutOfBounds {
                x: b.x as i64,
                orientation: b.orientation,
                width: config.width,
            });
        }
        for c in b.cells() {
            if !cells.insert(c) {
                return Err(Error::Overlap { x: c.0, y: c.1 });
            }
        }
        blocks.insert(b);
    }
    Ok(Scene {
        width: config.width,
        height: config.height,
        blocks,
    })
}

pub fn f1_score(target: &Scene, built: &Scene) -> f64 {
    if target.is_empty() && built.is_empty() {
        return 1.0;
    }
    let tp = target.blocks.intersection(&built.blocks).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / built.len() as f64;
    let recall = tp / target.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

const EMPTY: char = '.';
const HORIZONTAL: char = '=';
const VERTICAL: char = '|';

/// One character per cell, top row first.
pub fn render_ascii(scene: &Scene) -> String {
    let mut rows = vec![vec![EMPTY; scene.width]; scene.height];
    for b in &scene.blocks {
        let glyph = match b.orientation {
            Orientation::Horizontal => HORIZONTAL,
            Orientation::Vertical => VERTICAL,
        };
        for (cx, cy) in b.cells() {
            if cx < scene.width && cy < scene.height {
                rows[cy][cx] = glyph;
            }
        }
    }
    let mut out = String::with_capacity((scene.width + 1) * scene.height);
    for row in rows.iter().rev() {
        out.extend(row.iter());
        out.push('\n');
    }
    out
}

/// Inverse of [`render_ascii`].
pub fn parse_ascii(text: &str) -> Result<Scene> {
    let lines: Vec<Vec<char>> = text.lines().map(|l| l.chars().collect()).collect();
    let height = lines.len();
    let width = lines.first().map_or(0, Vec::len);
    if lines.iter().any(|l| l.len() != width) {
        return Err(Error::Parse {
            pos: 0,
            msg: "ragged rows".into(),
        });
    }
    let at = |x: usize, y: usize| lines[height - 1 - y][x];
    let mut blocks = BTreeSet::new();
    for y in 0..height {
        let mut x = 0;
        while x < width {
            if at(x, y) == HORIZONTAL {
                if x + 1 >= width || at(x + 1, y) != HORIZONTAL {
                    return Err(Error::Parse {
                        pos: x,
                        msg: format!("unpaired horizontal cell in row {y}"),
                    });
                }
                blocks.insert(BlockPlacement::h(x, y));
                x += 2;
            } else {
                x += 1;
            }
        }
    }
    for x in 0..width {
        let mut y = 0;
        while y < height {
            match at(x, y) {
                VERTICAL => {
                    if y + 1 >= height || at(x, y + 1) != VERTICAL {
                        return Err(Error::Parse {
                            pos: x,
                            msg: format!("unpaired vertical cell in column {x}"),
                        });
                    }
                    blocks.insert(BlockPlacement::v(x, y));
                    y += 2;
                }
                HORIZONTAL | EMPTY => y += 1,
                other => {
                    return Err(Error::Parse {
                        pos: x,
                        msg: format!("unexpected glyph {other:?}"),
                    })
                }
            }
        }
    }
    Ok(Scene {
        width,
        height,
        blocks,
    })
}
