//! Prompt rendering and answer parsing.
//!
//! Two prompt shapes exist. The joint prompt lists every level's question
//! in one turn and asks for all letters at once; the step prompt carries a
//! "Known facts" line of prior commitments and asks one question. Both are
//! pure functions of their inputs: identical inputs render byte-identical
//! text. Parsing scans model output left to right for capital letters in
//! {A,B,C,D}, ignoring whitespace, punctuation, and any extra text; missing
//! positions become a FAIL sentinel that never scores as correct.
//!
//! Template slots: `{L}` joint letter count, `{facts}` known-facts line,
//! `{question}` per-level question text, options render as
//! `A. first  B. second  ...`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{Letter, VqaInstance};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("expected {expected} prior answers for level {level}, got {got}")]
    PriorAnswersMismatch {
        level: usize,
        expected: usize,
        got: usize,
    },
}

/// Known-fact value propagated when a prior level failed to parse.
pub const UNKNOWN_FACT: &str = "UNKNOWN";

const JOINT_HEADER: &str = "Known facts: None.\n\
You are a taxonomist. Answer the following multiple-choice questions about the organism in the image.\n\
Return EXACTLY {L} capital letters separated by single spaces, one per question, in order (e.g., \"B D A C ...\").\n\
For each question, choose ONLY from the letters shown with its options.\n\
Do not output any words or explanations.\n";

const STEP_TEMPLATE: &str = "You are a taxonomist.\n\
Known facts: {facts}\n\
\n\
Question (current level): {question}\n\
\n\
{options}\n\
\n\
Answer with the option's letter from the given choices directly.\n";

/// A rendered prompt plus what a well-formed answer must contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    /// Number of letters a complete answer carries (`L_i` joint, 1 step).
    pub expected_letters: usize,
    /// Allowed letters per answer position, matching the rendered options.
    pub letter_vocabulary: Vec<Vec<Letter>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Partial,
    Failed,
}

/// Parsed letters with FAIL sentinels for missing positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    #[serde(with = "crate::instances::letter_slot")]
    pub letters: Vec<Option<Letter>>,
    pub raw: String,
    pub parse_status: ParseStatus,
}

/// Parsing knobs. Lowercase letters are rejected by default; the lenient
/// flag enables case folding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub accept_lowercase: bool,
}

fn options_line(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{}. {o}", Letter::from_index(i).expect("<=4 options")))
        .collect::<Vec<_>>()
        .join("  ")
}

fn vocabulary_for(option_count: usize) -> Vec<Letter> {
    Letter::ALL[..option_count].to_vec()
}

/// Render the single-turn prompt covering every level of the instance.
pub fn build_joint_prompt(instance: &VqaInstance) -> PromptBundle {
    let depth = instance.depth();
    let mut text = JOINT_HEADER.replace("{L}", &depth.to_string());
    for q in &instance.per_level {
        text.push('\n');
        text.push_str(&format!(
            "Q{k} (level {k}): {question}\n{options}\n",
            k = q.level_index,
            question = q.question_text,
            options = options_line(&q.options),
        ));
    }
    PromptBundle {
        text,
        expected_letters: depth,
        letter_vocabulary: instance
            .per_level
            .iter()
            .map(|q| vocabulary_for(q.options.len()))
            .collect(),
    }
}

/// Render the one-question step prompt for `level` (1-based).
///
/// `prior_answers` carries the labels committed at levels `1..level`; pass
/// an empty slice to render an unconditioned step (the independent-levels
/// protocol), which keeps the known-facts line at "None." for every level.
pub fn build_step_prompt(
    instance: &VqaInstance,
    level: usize,
    prior_answers: &[String],
) -> Result<PromptBundle, PromptError> {
    let depth = instance.depth();
    if level < 1 || level > depth {
        return Err(PromptError::LevelOutOfRange { level, max: depth });
    }
    if !prior_answers.is_empty() && prior_answers.len() != level - 1 {
        return Err(PromptError::PriorAnswersMismatch {
            level,
            expected: level - 1,
            got: prior_answers.len(),
        });
    }
    let facts = if prior_answers.is_empty() {
        "None.".to_string()
    } else {
        let entries: Vec<String> = prior_answers
            .iter()
            .enumerate()
            .map(|(i, label)| format!("Level {} = {label}", i + 1))
            .collect();
        format!("{}.", entries.join("; "))
    };
    let q = &instance.per_level[level - 1];
    let text = STEP_TEMPLATE
        .replace("{facts}", &facts)
        .replace("{question}", &q.question_text)
        .replace("{options}", &options_line(&q.options));
    Ok(PromptBundle {
        text,
        expected_letters: 1,
        letter_vocabulary: vec![vocabulary_for(q.options.len())],
    })
}

/// Scan `raw` left to right and collect the first `expected` capital
/// letters in {A,B,C,D}; everything else is ignored. Missing positions
/// become FAIL sentinels.
pub fn parse_joint_answer(raw: &str, expected: usize) -> ParsedAnswer {
    parse_joint_answer_with(raw, expected, ParseOptions::default())
}

pub fn parse_joint_answer_with(raw: &str, expected: usize, opts: ParseOptions) -> ParsedAnswer {
    let mut letters: Vec<Option<Letter>> = Vec::with_capacity(expected);
    for c in raw.chars() {
        if letters.len() == expected {
            break;
        }
        let c = if opts.accept_lowercase {
            c.to_ascii_uppercase()
        } else {
            c
        };
        if let Some(letter) = Letter::from_char(c) {
            letters.push(Some(letter));
        }
    }
    let found = letters.len();
    letters.resize(expected, None);
    let parse_status = if found == expected {
        ParseStatus::Ok
    } else if found == 0 {
        ParseStatus::Failed
    } else {
        ParseStatus::Partial
    };
    ParsedAnswer {
        letters,
        raw: raw.to_string(),
        parse_status,
    }
}

/// Parse a single-letter step reply: the first character in {A,B,C,D}.
pub fn parse_step_answer(raw: &str) -> ParsedAnswer {
    parse_step_answer_with(raw, ParseOptions::default())
}

pub fn parse_step_answer_with(raw: &str, opts: ParseOptions) -> ParsedAnswer {
    parse_joint_answer_with(raw, 1, opts)
}

/// Render a letter list the way a well-formed joint answer would look.
pub fn render_letters(letters: &[Letter]) -> String {
    letters
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}
