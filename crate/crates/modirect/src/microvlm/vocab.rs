//! The model's closed token vocabulary.
//!
//! Every string the readout ever consumes — option letters, answer words,
//! question-type markers, and the two structural tokens — has a fixed id.
//! The table is small and closed by design: questions are represented by
//! their type token rather than tokenized text, so the vocabulary is exactly
//! the union of the answer-word sets plus bookkeeping tokens.

use crate::qagen::QAType;
use std::collections::HashMap;

/// Maximum number of MCQ options (nine-way direction questions).
pub const MAX_OPTIONS: usize = 9;

/// The structural tokens, option letters, and question-type markers, in
/// fixed id order, followed by every answer word.
const TOKENS: [&str; 59] = [
    // Structural tokens.
    "<readout>",
    "<sep>",
    // Option letters (ids are contiguous: letter k = LETTER_BASE + k).
    "A",
    "B",
    "C",
    "D",
    "E",
    "F",
    "G",
    "H",
    "I",
    // Question-type markers, in `QAType::ALL` order.
    "[dir-mcq9]",
    "[dir-mcq5]",
    "[dir-mcq4]",
    "[dir-open]",
    "[description]",
    "[appearance]",
    "[loc-mcq]",
    "[loc-open]",
    "[move-mcq]",
    "[move-open]",
    "[traj-mcq]",
    "[rot-mcq]",
    "[rot-open]",
    // Direction words (the diagonal words double as frame-corner regions).
    "left",
    "right",
    "up",
    "down",
    "top-left",
    "top-right",
    "bottom-left",
    "bottom-right",
    "stationary",
    // Remaining frame-region words.
    "top-center",
    "middle-left",
    "center",
    "middle-right",
    "bottom-center",
    // Palette colors.
    "red",
    "orange",
    "yellow",
    "green",
    "cyan",
    "blue",
    "purple",
    "magenta",
    "white",
    "black",
    // Shapes.
    "circle",
    "triangle",
    "square",
    // Yes/no.
    "yes",
    "no",
    // Trajectory patterns.
    "straight",
    "zigzag",
    "circular",
    "roundtrip",
    // Rotation senses.
    "clockwise",
    "counterclockwise",
];

pub const READOUT_TOKEN: u32 = 0;
pub const SEPARATOR_TOKEN: u32 = 1;
const LETTER_BASE: u32 = 2;
const QA_TYPE_BASE: u32 = LETTER_BASE + MAX_OPTIONS as u32;

/// Fixed bidirectional token table.
#[derive(Clone, Debug)]
pub struct Vocab {
    index: HashMap<&'static str, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl Vocab {
    pub fn new() -> Vocab {
        let index = TOKENS.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
        Vocab { index }
    }

    pub const fn len(&self) -> usize {
        TOKENS.len()
    }

    pub const fn is_empty(&self) -> bool {
        false
    }

    /// Id of an exact token string.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Token string of an id.
    pub fn token(&self, id: u32) -> &'static str {
        TOKENS[id as usize]
    }

    /// Id of the option letter at slot `k` (0 = "A").
    pub fn letter(&self, k: usize) -> u32 {
        assert!(k < MAX_OPTIONS, "slot {k} beyond the letter alphabet");
        LETTER_BASE + k as u32
    }

    /// All option-letter ids, slot order.
    pub fn letters(&self) -> [u32; MAX_OPTIONS] {
        std::array::from_fn(|k| LETTER_BASE + k as u32)
    }

    /// Whether an id is an option letter.
    pub fn is_letter(&self, id: u32) -> bool {
        (LETTER_BASE..LETTER_BASE + MAX_OPTIONS as u32).contains(&id)
    }

    /// Id of a question-type marker.
    pub fn qa_type(&self, qa: QAType) -> u32 {
        let pos = QAType::ALL.iter().position(|&t| t == qa).unwrap();
        QA_TYPE_BASE + pos as u32
    }
}
