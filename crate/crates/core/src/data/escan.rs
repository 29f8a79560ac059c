//! The extended SCAN subset: verbs `run`, `walk`, `jump`, modifiers `left` and
//! `twice`, the conjunction `and`, and a period between subphrases.
//!
//! A subphrase is `S` or `S and S`, where `S` is a verb alone, a verb followed
//! by `left`, or a verb followed by `twice`. Modifiers are never stacked.

use crate::error::{Error, Result};

pub const VERBS: [&str; 3] = ["run", "walk", "jump"];
pub const SEPARATOR: &str = ".";
pub const INPUT_WORDS: [&str; 7] = ["run", "walk", "jump", "and", "left", "twice", SEPARATOR];
pub const OUTPUT_WORDS: [&str; 5] = ["RUN", "WALK", "JUMP", "LTURN", SEPARATOR];

fn action(verb: &str) -> Option<&'static str> {
    match verb {
        "run" => Some("RUN"),
        "walk" => Some("WALK"),
        "jump" => Some("JUMP"),
        _ => None,
    }
}

/// Output word an input word stands for on its own; `None` for `and` and `twice`.
pub fn dictionary(word: &str) -> Option<&'static str> {
    match word {
        "left" => Some("LTURN"),
        SEPARATOR => Some(SEPARATOR),
        _ => action(word),
    }
}

/// Every legal subphrase, without the trailing separator: 9 simple commands
/// plus 81 conjunctions of two.
pub fn enumerate_subphrases() -> Vec<Vec<&'static str>> {
    let mut simple = Vec::new();
    for v in VERBS {
        simple.push(vec![v]);
        simple.push(vec![v, "left"]);
        simple.push(vec![v, "twice"]);
    }
    let mut out = simple.clone();
    for a in &simple {
        for b in &simple {
            let mut c = a.clone();
            c.push("and");
            c.extend(b);
            out.push(c);
        }
    }
    out
}

/// Output tokens and, for each, the input position (0-based) it is read from.
///
/// The verb is the source of its action; `twice` is the source of the repeat;
/// for `U left`, `LTURN` comes from the verb and the action from `left`.
pub fn oracle_with_sources(input: &[&str]) -> Result<(Vec<&'static str>, Vec<usize>)> {
    let mut out = Vec::new();
    let mut src = Vec::new();
    let mut i = 0;
    let illegal = |msg: &str| Error::IllegalPhrase(format!("{msg} in {:?}", input.join(" ")));
    if input.is_empty() {
        return Err(illegal("empty phrase"));
    }
    while i < input.len() {
        // One subphrase: S (and S)? followed by a separator or the end.
        let mut commands = 0;
        loop {
            let verb = input[i];
            let act = action(verb).ok_or_else(|| illegal(&format!("expected a verb at position {i}, found {verb:?}")))?;
            match input.get(i + 1).copied() {
                Some("left") => {
                    out.extend(["LTURN", act]);
                    src.extend([i, i + 1]);
                    i += 2;
                }
                Some("twice") => {
                    out.extend([act, act]);
                    src.extend([i, i + 1]);
                    i += 2;
                }
                _ => {
                    out.push(act);
                    src.push(i);
                    i += 1;
                }
            }
            commands += 1;
            match input.get(i).copied() {
                Some("and") if commands == 1 => {
                    i += 1;
                    if i >= input.len() {
                        return Err(illegal("dangling 'and'"));
                    }
                }
                Some(SEPARATOR) => {
                    out.push(SEPARATOR);
                    src.push(i);
                    i += 1;
                    break;
                }
                None => break,
                Some(w) => return Err(illegal(&format!("unexpected {w:?} at position {i}"))),
            }
        }
    }
    Ok((out, src))
}

pub fn escan_oracle(input: &[&str]) -> Result<Vec<&'static str>> {
    Ok(oracle_with_sources(input)?.0)
}
