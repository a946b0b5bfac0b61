//! 7x5 glyph bitmaps for every character of the vocabulary.

use crate::error::{Result, TangerError};
use crate::vocab::{Script, SYNTH_COUNT, SYNTH_FIRST};

pub const GLYPH_ROWS: usize = 7;
pub const GLYPH_COLS: usize = 5;

/// Bit `r * 5 + c` set means row `r`, column `c` is lit.
pub type Glyph = u64;

const LATIN: [[&str; 7]; 26] = [
    [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
    ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."],
    [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."],
    ["....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"],
    [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."],
    ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."],
    [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."],
    ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."],
    ["...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."],
    ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."],
    [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"],
    [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."],
    [".....", ".....", "####.", "#...#", "####.", "#....", "#...."],
    [".....", ".....", ".##.#", "#..##", ".####", "....#", "....#"],
    [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."],
    [".....", ".....", ".###.", "#....", ".###.", "....#", "####."],
    [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."],
    [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"],
    [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."],
    [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
    [".....", ".....", "#...#", "#...#", ".####", "....#", ".###."],
    [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"],
];

const DIGITS: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

const MIN_LIT: u32 = 8;
const MAX_ATTEMPTS: u64 = 10_000;

fn parse(rows: &[&str; 7]) -> Glyph {
    let mut g = 0;
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.bytes().enumerate() {
            if ch == b'#' {
                g |= 1 << (r * GLYPH_COLS + c);
            }
        }
    }
    g
}

pub fn is_lit(g: Glyph, row: usize, col: usize) -> bool {
    g >> (row * GLYPH_COLS + col) & 1 == 1
}

pub fn mirror(g: Glyph) -> Glyph {
    let mut m = 0;
    for r in 0..GLYPH_ROWS {
        for c in 0..GLYPH_COLS {
            if is_lit(g, r, c) {
                m |= 1 << (r * GLYPH_COLS + GLYPH_COLS - 1 - c);
            }
        }
    }
    m
}

/// splitmix64 step.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bitmaps of all characters, in vocabulary order per script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptTable {
    latin: Vec<Glyph>,
    digits: Vec<Glyph>,
    synth: Vec<Glyph>,
    seed: u64,
}

impl ScriptTable {
    /// Synthetic glyphs are drawn from a hash of `(seed, codepoint, attempt)`;
    /// candidates with fewer than 8 lit cells, mirror symmetry, or a clash with
    /// an earlier glyph are skipped.
    pub fn new(seed: u64) -> Result<Self> {
        let latin: Vec<Glyph> = LATIN.iter().map(parse).collect();
        let digits: Vec<Glyph> = DIGITS.iter().map(parse).collect();
        let mut taken: Vec<Glyph> = latin.iter().chain(&digits).copied().collect();
        let mut synth = Vec::with_capacity(SYNTH_COUNT as usize);
        for cp in SYNTH_FIRST..SYNTH_FIRST + SYNTH_COUNT {
            let g = (0..MAX_ATTEMPTS)
                .map(|attempt| mix(mix(seed ^ u64::from(cp)) ^ attempt) & ((1 << 35) - 1))
                .find(|&g| g.count_ones() >= MIN_LIT && mirror(g) != g && !taken.contains(&g))
                .ok_or_else(|| TangerError::Generation(format!("no usable glyph for U+{cp:04X}")))?;
            taken.push(g);
            synth.push(g);
        }
        Ok(Self {
            latin,
            digits,
            synth,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn glyph(&self, c: char) -> Option<Glyph> {
        let script = Script::of(c)?;
        let table = match script {
            Script::Latin => &self.latin,
            Script::Digits => &self.digits,
            Script::Synth => &self.synth,
        };
        let i = script.chars().iter().position(|&x| x == c)?;
        Some(table[i])
    }

    pub fn glyphs(&self, script: Script) -> &[Glyph] {
        match script {
            Script::Latin => &self.latin,
            Script::Digits => &self.digits,
            Script::Synth => &self.synth,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_glyphs_are_well_formed() {
        for rows in LATIN.iter().chain(&DIGITS) {
            for row in rows {
                assert_eq!(row.len(), GLYPH_COLS);
                assert!(row.bytes().all(|b| b == b'#' || b == b'.'));
            }
        }
    }

    #[test]
    fn all_glyphs_distinct() {
        let t = ScriptTable::new(11).unwrap();
        let mut all: Vec<Glyph> = Script::ALL.iter().flat_map(|&s| t.glyphs(s).to_vec()).collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn synth_glyph_rules() {
        let t = ScriptTable::new(5).unwrap();
        for &g in t.glyphs(Script::Synth) {
            assert!(g.count_ones() >= MIN_LIT);
            assert_ne!(mirror(g), g);
        }
        assert_eq!(t, ScriptTable::new(5).unwrap());
        assert_ne!(t.glyphs(Script::Synth), ScriptTable::new(6).unwrap().glyphs(Script::Synth));
    }

    #[test]
    fn lookup() {
        let t = ScriptTable::new(0).unwrap();
        let a = t.glyph('a').unwrap();
        assert!(is_lit(a, 2, 1) && !is_lit(a, 0, 0));
        assert!(t.glyph('A').is_none());
    }
}
