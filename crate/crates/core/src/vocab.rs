//! Character inventory, scripts, and the special tokens of the recognizer.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TangerError};

/// Writing systems of the synthetic corpus. Order is the language-class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Script {
    Latin,
    Digits,
    Synth,
}

impl Script {
    pub const ALL: [Script; 3] = [Script::Latin, Script::Digits, Script::Synth];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Script::Latin => "latin",
            Script::Digits => "digits",
            Script::Synth => "synth",
        }
    }

    /// Characters of the script, in vocabulary order.
    pub fn chars(self) -> Vec<char> {
        match self {
            Script::Latin => ('a'..='z').collect(),
            Script::Digits => ('0'..='9').collect(),
            Script::Synth => (SYNTH_FIRST..SYNTH_FIRST + SYNTH_COUNT)
                .map(|c| char::from_u32(c).expect("geometric shapes block"))
                .collect(),
        }
    }

    pub fn of(c: char) -> Option<Script> {
        match c {
            'a'..='z' => Some(Script::Latin),
            '0'..='9' => Some(Script::Digits),
            _ if (SYNTH_FIRST..SYNTH_FIRST + SYNTH_COUNT).contains(&(c as u32)) => Some(Script::Synth),
            _ => None,
        }
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Script {
    type Err = TangerError;

    fn from_str(s: &str) -> Result<Self> {
        Script::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| TangerError::Vocabulary(format!("unknown script tag {s:?}")))
    }
}

/// Synthetic glyphs occupy U+25A0..U+25BF.
pub const SYNTH_FIRST: u32 = 0x25A0;
pub const SYNTH_COUNT: u32 = 32;

/// Class id of the stop token `[s]`.
pub const STOP: usize = 0;
/// Class id of padding after `[s]`; never supervised.
pub const PAD: usize = 1;

/// Maps characters to class ids: `[s]`, pad, then every script's characters.
#[derive(Debug, Clone)]
pub struct Vocab {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let chars: Vec<char> = Script::ALL.iter().flat_map(|s| s.chars()).collect();
        let ids = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, ids }
    }

    /// Number of classes including `[s]` and pad.
    pub fn size(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn id(&self, c: char) -> Result<usize> {
        self.ids
            .get(&c)
            .copied()
            .ok_or_else(|| TangerError::Vocabulary(format!("character {c:?} (U+{:04X}) not in vocabulary", c as u32)))
    }

    /// Character of a class id; `None` for `[s]`, pad, and out-of-range ids.
    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(2).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.id(c)).collect()
    }

    pub fn language_count(&self) -> usize {
        Script::ALL.len()
    }
}
