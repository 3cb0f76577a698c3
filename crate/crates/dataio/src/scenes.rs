//! Synthetic sparse scenes: letter-like stroke glyphs and point clusters on
//! the imaging plane.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use handsar_core::{Complex64, ComplexGrid};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, Result};

type Seg = ((f64, f64), (f64, f64));

/// Glyph box: `x ∈ [0, 4]` to the right, `y ∈ [0, 6]` downward.
const GLYPH_W: f64 = 4.0;
const GLYPH_H: f64 = 6.0;

const BOX: [Seg; 4] = [
    ((0.0, 0.0), (4.0, 0.0)),
    ((4.0, 0.0), (4.0, 6.0)),
    ((4.0, 6.0), (0.0, 6.0)),
    ((0.0, 6.0), (0.0, 0.0)),
];

fn glyph(letter: char) -> Vec<Seg> {
    let s = |a: f64, b: f64, c: f64, d: f64| ((a, b), (c, d));
    match letter {
        'A' => vec![s(0., 6., 2., 0.), s(2., 0., 4., 6.), s(1., 3., 3., 3.)],
        'B' => vec![
            s(0., 0., 0., 6.),
            s(0., 0., 3., 0.),
            s(3., 0., 4., 1.5),
            s(4., 1.5, 3., 3.),
            s(0., 3., 3., 3.),
            s(3., 3., 4., 4.5),
            s(4., 4.5, 3., 6.),
            s(3., 6., 0., 6.),
        ],
        'C' => vec![s(4., 0., 0., 0.), s(0., 0., 0., 6.), s(0., 6., 4., 6.)],
        'D' => vec![
            s(0., 0., 0., 6.),
            s(0., 0., 3., 0.),
            s(3., 0., 4., 2.),
            s(4., 2., 4., 4.),
            s(4., 4., 3., 6.),
            s(3., 6., 0., 6.),
        ],
        'E' => vec![s(0., 0., 0., 6.), s(0., 0., 4., 0.), s(0., 3., 3., 3.), s(0., 6., 4., 6.)],
        'F' => vec![s(0., 0., 0., 6.), s(0., 0., 4., 0.), s(0., 3., 3., 3.)],
        'G' => vec![
            s(4., 0., 0., 0.),
            s(0., 0., 0., 6.),
            s(0., 6., 4., 6.),
            s(4., 6., 4., 3.),
            s(4., 3., 2., 3.),
        ],
        'H' => vec![s(0., 0., 0., 6.), s(4., 0., 4., 6.), s(0., 3., 4., 3.)],
        'I' => vec![s(2., 0., 2., 6.), s(1., 0., 3., 0.), s(1., 6., 3., 6.)],
        'J' => vec![s(4., 0., 4., 6.), s(4., 6., 0., 6.), s(0., 6., 0., 4.)],
        'K' => vec![s(0., 0., 0., 6.), s(4., 0., 0., 3.), s(0., 3., 4., 6.)],
        'L' => vec![s(0., 0., 0., 6.), s(0., 6., 4., 6.)],
        'M' => vec![s(0., 6., 0., 0.), s(0., 0., 2., 3.), s(2., 3., 4., 0.), s(4., 0., 4., 6.)],
        'N' => vec![s(0., 6., 0., 0.), s(0., 0., 4., 6.), s(4., 6., 4., 0.)],
        'O' => BOX.to_vec(),
        'P' => vec![s(0., 6., 0., 0.), s(0., 0., 4., 0.), s(4., 0., 4., 3.), s(4., 3., 0., 3.)],
        'Q' => {
            let mut v = BOX.to_vec();
            v.push(s(2., 4., 4., 6.));
            v
        }
        'R' => vec![
            s(0., 6., 0., 0.),
            s(0., 0., 4., 0.),
            s(4., 0., 4., 3.),
            s(4., 3., 0., 3.),
            s(1., 3., 4., 6.),
        ],
        'S' => vec![
            s(4., 0., 0., 0.),
            s(0., 0., 0., 3.),
            s(0., 3., 4., 3.),
            s(4., 3., 4., 6.),
            s(4., 6., 0., 6.),
        ],
        'T' => vec![s(0., 0., 4., 0.), s(2., 0., 2., 6.)],
        'U' => vec![s(0., 0., 0., 6.), s(0., 6., 4., 6.), s(4., 6., 4., 0.)],
        'V' => vec![s(0., 0., 2., 6.), s(2., 6., 4., 0.)],
        'W' => vec![s(0., 0., 1., 6.), s(1., 6., 2., 3.), s(2., 3., 3., 6.), s(3., 6., 4., 0.)],
        'X' => vec![s(0., 0., 4., 6.), s(4., 0., 0., 6.)],
        'Y' => vec![s(0., 0., 2., 3.), s(4., 0., 2., 3.), s(2., 3., 2., 6.)],
        'Z' => vec![s(0., 0., 4., 0.), s(4., 0., 0., 6.), s(0., 6., 4., 6.)],
        _ => Vec::new(),
    }
}

pub const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

/// Shape and placement of a rasterized glyph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LetterStyle {
    /// Glyph height as a fraction of the grid rows.
    pub height_frac: f64,
    /// Relative jitter of the glyph size.
    pub scale_jitter: f64,
    /// Maximum center offset in cells along each axis.
    pub max_shift: usize,
    /// Give each scatterer a uniformly random phase (unit magnitude otherwise
    /// real and positive).
    pub random_phase: bool,
}

impl Default for LetterStyle {
    fn default() -> Self {
        Self {
            height_frac: 0.5,
            scale_jitter: 0.1,
            max_shift: 4,
            random_phase: true,
        }
    }
}

/// Cells covered by `letter` drawn `height` cells tall with its box centered
/// at `(ci, cj)`. Glyph `y` runs along grid rows, `x` along columns.
fn rasterize(letter: char, rows: usize, cols: usize, height: f64, ci: f64, cj: f64) -> BTreeSet<(usize, usize)> {
    let unit = height / GLYPH_H;
    let (i0, j0) = (ci - GLYPH_H * unit / 2.0, cj - GLYPH_W * unit / 2.0);
    let mut cells = BTreeSet::new();
    for ((x0, y0), (x1, y1)) in glyph(letter) {
        let len = ((x1 - x0).hypot(y1 - y0) * unit).ceil().max(1.0);
        let steps = (2.0 * len) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let i = (i0 + (y0 + t * (y1 - y0)) * unit).round();
            let j = (j0 + (x0 + t * (x1 - x0)) * unit).round();
            if i >= 0.0 && j >= 0.0 && (i as usize) < rows && (j as usize) < cols {
                cells.insert((i as usize, j as usize));
            }
        }
    }
    cells
}

/// A letter-shaped scatterer layout on a `rows × cols` plane.
pub fn letter_scene(letter: char, rows: usize, cols: usize, style: &LetterStyle, seed: u64) -> Result<ComplexGrid> {
    let letter = letter.to_ascii_uppercase();
    if !ALPHABET.contains(letter) {
        return Err(IoError::Invalid(format!("no glyph for {letter:?}")));
    }
    if !(style.height_frac > 0.0 && style.height_frac <= 1.0) || !(0.0..1.0).contains(&style.scale_jitter) {
        return Err(IoError::Invalid("letter style out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + rng.random_range(-style.scale_jitter..=style.scale_jitter);
    let height = style.height_frac * rows as f64 * scale;
    let shift = style.max_shift as i64;
    let mut offset = || if shift == 0 { 0.0 } else { rng.random_range(-shift..=shift) as f64 };
    let (di, dj) = (offset(), offset());
    let ci = (rows as f64 - 1.0) / 2.0 + di;
    let cj = (cols as f64 - 1.0) / 2.0 + dj;
    let mut grid = ComplexGrid::zeros(rows, cols);
    for (i, j) in rasterize(letter, rows, cols, height, ci, cj) {
        let v = if style.random_phase {
            Complex64::from_polar(1.0, rng.random_range(0.0..TAU))
        } else {
            Complex64::new(1.0, 0.0)
        };
        grid.set(i, j, v);
    }
    Ok(grid)
}

/// `count` unit-magnitude random-phase point targets at distinct cells at
/// least `margin` cells from the border.
pub fn point_scene(rows: usize, cols: usize, count: usize, margin: usize, seed: u64) -> Result<ComplexGrid> {
    if rows <= 2 * margin || cols <= 2 * margin {
        return Err(IoError::Invalid("margin leaves no room for targets".into()));
    }
    let room = (rows - 2 * margin) * (cols - 2 * margin);
    if count > room {
        return Err(IoError::Invalid(format!("{count} targets do not fit in {room} cells")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = ComplexGrid::zeros(rows, cols);
    let mut placed = 0;
    while placed < count {
        let i = rng.random_range(margin..rows - margin);
        let j = rng.random_range(margin..cols - margin);
        if grid.get(i, j).norm() == 0.0 {
            grid.set(i, j, Complex64::from_polar(1.0, rng.random_range(0.0..TAU)));
            placed += 1;
        }
    }
    Ok(grid)
}

/// The first `n` letters of a seeded permutation of the alphabet.
pub fn pick_letters(n: usize, seed: u64) -> Result<Vec<char>> {
    if n > ALPHABET.len() {
        return Err(IoError::Invalid(format!("only {} distinct letters exist", ALPHABET.len())));
    }
    let mut letters: Vec<char> = ALPHABET.chars().collect();
    letters.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    letters.truncate(n);
    Ok(letters)
}
