//! Table-driven conformance check for compiled examples.
//!
//! Deliberately independent of the compiler in `build.rs`: it works on token
//! names and a static row table, so the two can be cross-validated.

use serde::{Deserialize, Serialize};

use super::{PromptElement, TaskSpec, TrainingExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayoutReason {
    WrongTaskToken,
    MissingDelimiter,
    UnexpectedToken,
    MissingCodes,
    EmptyText,
    ContextMismatch,
    EmptyTarget,
    CodeOutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutVerdict {
    pub ok: bool,
    pub reason: Option<LayoutReason>,
}

impl LayoutVerdict {
    fn pass() -> Self {
        Self {
            ok: true,
            reason: None,
        }
    }

    fn fail(reason: LayoutReason) -> Self {
        Self {
            ok: false,
            reason: Some(reason),
        }
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Token(&'static str),
    Codes,
    OptionalCodes,
}

struct Row {
    task: TaskSpec,
    prompt: &'static [Slot],
    text_mandatory: bool,
    /// Target must start and end with the prompt's optional context blocks.
    context_copy: bool,
}

const TASK_TOKENS: [&str; 3] = ["<ns>", "<sr>", "<tse>"];
const DELIMITERS: [&str; 2] = ["<soe>", "<eoe>"];

const ROWS: [Row; 6] = [
    Row {
        task: TaskSpec::Ns,
        prompt: &[Slot::Token("<ns>"), Slot::Codes],
        text_mandatory: false,
        context_copy: false,
    },
    Row {
        task: TaskSpec::Sr,
        prompt: &[Slot::Token("<sr>"), Slot::Codes],
        text_mandatory: false,
        context_copy: false,
    },
    Row {
        task: TaskSpec::Tse,
        prompt: &[Slot::Codes, Slot::Token("<tse>"), Slot::Codes],
        text_mandatory: false,
        context_copy: false,
    },
    Row {
        task: TaskSpec::ZsTts,
        prompt: &[Slot::Codes],
        text_mandatory: true,
        context_copy: false,
    },
    Row {
        task: TaskSpec::Cse,
        prompt: &[
            Slot::OptionalCodes,
            Slot::Token("<soe>"),
            Slot::Token("<mask>"),
            Slot::Token("<eoe>"),
            Slot::OptionalCodes,
        ],
        text_mandatory: true,
        context_copy: true,
    },
    Row {
        task: TaskSpec::Nse,
        prompt: &[
            Slot::OptionalCodes,
            Slot::Token("<soe>"),
            Slot::Codes,
            Slot::Token("<eoe>"),
            Slot::OptionalCodes,
        ],
        text_mandatory: true,
        context_copy: true,
    },
];

fn token_name(e: &PromptElement) -> Option<&'static str> {
    match e {
        PromptElement::Special(s) => Some(s.name()),
        PromptElement::Codes(_) => None,
    }
}

fn mismatch_reason(expected: &str) -> LayoutReason {
    if TASK_TOKENS.contains(&expected) || expected == "<mask>" {
        LayoutReason::WrongTaskToken
    } else if DELIMITERS.contains(&expected) {
        LayoutReason::MissingDelimiter
    } else {
        LayoutReason::UnexpectedToken
    }
}

/// Checks `example` against its task row; returns the first violation found.
pub fn layout_check(example: &TrainingExample, codebook_size: usize) -> LayoutVerdict {
    let row = ROWS.iter().find(|r| r.task == example.task).expect("row per task");
    if row.text_mandatory && example.text.is_empty() {
        return LayoutVerdict::fail(LayoutReason::EmptyText);
    }
    if example.target.num_frames() == 0 {
        return LayoutVerdict::fail(LayoutReason::EmptyTarget);
    }

    let elems = &example.prompt;
    let mut i = 0;
    let mut leading = None;
    let mut trailing = None;
    for (slot_idx, slot) in row.prompt.iter().enumerate() {
        match *slot {
            Slot::Token(name) => match elems.get(i) {
                Some(e) if token_name(e) == Some(name) => i += 1,
                Some(_) | None => return LayoutVerdict::fail(mismatch_reason(name)),
            },
            Slot::Codes => match elems.get(i) {
                Some(PromptElement::Codes(m)) if m.num_frames() > 0 => i += 1,
                Some(PromptElement::Codes(_)) | None => {
                    return LayoutVerdict::fail(LayoutReason::MissingCodes)
                }
                Some(_) => return LayoutVerdict::fail(LayoutReason::UnexpectedToken),
            },
            Slot::OptionalCodes => {
                if let Some(PromptElement::Codes(m)) = elems.get(i) {
                    if m.num_frames() == 0 {
                        return LayoutVerdict::fail(LayoutReason::MissingCodes);
                    }
                    if slot_idx == 0 {
                        leading = Some(m);
                    } else {
                        trailing = Some(m);
                    }
                    i += 1;
                }
            }
        }
    }
    if i != elems.len() {
        return LayoutVerdict::fail(LayoutReason::UnexpectedToken);
    }

    let in_range = |m: &crate::codec::AcousticTokenMatrix| m.codes().iter().all(|&c| (c as usize) < codebook_size);
    let prompt_codes_ok = elems.iter().all(|e| match e {
        PromptElement::Codes(m) => in_range(m),
        PromptElement::Special(_) => true,
    });
    if !prompt_codes_ok || !in_range(&example.target) {
        return LayoutVerdict::fail(LayoutReason::CodeOutOfRange);
    }

    if row.context_copy {
        let t = &example.target;
        let pre = leading.map_or(0, |m| m.num_frames());
        let post = trailing.map_or(0, |m| m.num_frames());
        if pre + post >= t.num_frames() {
            return LayoutVerdict::fail(LayoutReason::ContextMismatch);
        }
        if let Some(m) = leading {
            if t.slice(0, pre) != *m {
                return LayoutVerdict::fail(LayoutReason::ContextMismatch);
            }
        }
        if let Some(m) = trailing {
            if t.slice(t.num_frames() - post, t.num_frames()) != *m {
                return LayoutVerdict::fail(LayoutReason::ContextMismatch);
            }
        }
    }
    LayoutVerdict::pass()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::AcousticTokenMatrix;
    use crate::prompting::{ExampleMeta, Special};

    fn codes(n: usize, v: u32) -> AcousticTokenMatrix {
        AcousticTokenMatrix::new(n, 2, vec![v; n * 2])
    }

    fn ex(task: TaskSpec, prompt: Vec<PromptElement>, target: AcousticTokenMatrix) -> TrainingExample {
        TrainingExample {
            task,
            text: vec![1, 2],
            prompt,
            target,
            meta: ExampleMeta::default(),
        }
    }

    #[test]
    fn ns_with_wrong_token() {
        let good = ex(
            TaskSpec::Ns,
            vec![PromptElement::Special(Special::Ns), PromptElement::Codes(codes(3, 1))],
            codes(3, 2),
        );
        assert!(layout_check(&good, 4).ok);
        let mut bad = good.clone();
        bad.prompt[0] = PromptElement::Special(Special::Sr);
        assert_eq!(layout_check(&bad, 4).reason, Some(LayoutReason::WrongTaskToken));
    }

    #[test]
    fn cse_missing_eoe_and_context() {
        let pre = codes(2, 1);
        let post = codes(2, 3);
        let target = AcousticTokenMatrix::concat(&[&pre, &codes(1, 0), &post]);
        let good = ex(
            TaskSpec::Cse,
            vec![
                PromptElement::Codes(pre.clone()),
                PromptElement::Special(Special::Soe),
                PromptElement::Special(Special::Mask),
                PromptElement::Special(Special::Eoe),
                PromptElement::Codes(post.clone()),
            ],
            target.clone(),
        );
        assert!(layout_check(&good, 4).ok);
        let mut bad = good.clone();
        bad.prompt.remove(3);
        assert_eq!(layout_check(&bad, 4).reason, Some(LayoutReason::MissingDelimiter));
        let mut bad = good.clone();
        bad.target = AcousticTokenMatrix::concat(&[&codes(2, 0), &codes(1, 0), &post]);
        assert_eq!(layout_check(&bad, 4).reason, Some(LayoutReason::ContextMismatch));
        let mut bad = good;
        bad.text.clear();
        assert_eq!(layout_check(&bad, 4).reason, Some(LayoutReason::EmptyText));
    }

    #[test]
    fn range_and_extra_tokens() {
        let good = ex(TaskSpec::ZsTts, vec![PromptElement::Codes(codes(2, 1))], codes(2, 1));
        assert!(layout_check(&good, 4).ok);
        assert_eq!(layout_check(&good, 1).reason, Some(LayoutReason::CodeOutOfRange));
        let mut bad = good.clone();
        bad.prompt.push(PromptElement::Special(Special::Mask));
        assert_eq!(layout_check(&bad, 4).reason, Some(LayoutReason::UnexpectedToken));
    }
}
