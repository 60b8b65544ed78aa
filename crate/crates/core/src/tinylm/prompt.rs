//! Prompt templates.
//!
//! Zero-shot: `[SEP; x^q; x^a]`. One-shot: `[SEP; z^q; z^a; SEP; x^q; x^a]`,
//! i.e. the demonstration followed by the zero-shot prompt.

use crate::corpus::{Task, SEP_ID};

/// Context tokens and the answer to score.
pub fn zero_shot(task: &Task) -> (Vec<usize>, &[usize]) {
    let mut ctx = Vec::with_capacity(1 + task.query.len());
    ctx.push(SEP_ID);
    ctx.extend_from_slice(&task.query);
    (ctx, &task.answer)
}

pub fn one_shot<'a>(demo: &Task, task: &'a Task) -> (Vec<usize>, &'a [usize]) {
    let mut ctx = Vec::with_capacity(3 + demo.query.len() + demo.answer.len() + task.query.len());
    ctx.push(SEP_ID);
    ctx.extend_from_slice(&demo.query);
    ctx.extend_from_slice(&demo.answer);
    ctx.push(SEP_ID);
    ctx.extend_from_slice(&task.query);
    (ctx, &task.answer)
}

/// Token count of the one-shot prompt including the answer.
pub fn one_shot_len(demo: &Task, task: &Task) -> usize {
    2 + demo.query.len() + demo.answer.len() + task.query.len() + task.answer.len()
}
