use super::{tokenize, Dialogue, KbTriple, Turn};
use crate::{Error, Result};

/// Parses the bAbI dialog layout: `N user<TAB>system` turn lines and
/// `N subject relation object` fact lines, dialogues separated by blank lines.
/// `api_call` lines are ordinary system utterances.
pub fn parse_babi(text: &str) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    let mut cur = Dialogue {
        turns: Vec::new(),
        kb: Vec::new(),
        domain: None,
    };
    let mut start_line = 1;

    let finish = |cur: &mut Dialogue, out: &mut Vec<Dialogue>, line: usize| -> Result<()> {
        if cur.turns.is_empty() && cur.kb.is_empty() {
            return Ok(());
        }
        if cur.turns.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "dialogue has facts but no turns".into(),
            });
        }
        out.push(std::mem::replace(
            cur,
            Dialogue {
                turns: Vec::new(),
                kb: Vec::new(),
                domain: None,
            },
        ));
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut cur, &mut out, start_line)?;
            start_line = line_no + 1;
            continue;
        }
        let (num, rest) = line
            .trim_start()
            .split_once(' ')
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "expected a line index followed by content".into(),
            })?;
        let n: usize = num.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid line index {num:?}"),
        })?;
        if n == 1 && (!cur.turns.is_empty() || !cur.kb.is_empty()) {
            finish(&mut cur, &mut out, start_line)?;
            start_line = line_no;
        }
        if let Some((user, system)) = rest.split_once('\t') {
            let (user, system) = (tokenize(user), tokenize(system));
            if user.is_empty() || system.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "turn line needs both a user and a system utterance".into(),
                });
            }
            cur.turns.push(Turn { user, system });
        } else {
            let toks = tokenize(rest);
            let [s, r, o] = <[String; 3]>::try_from(toks).map_err(|t| Error::Parse {
                line: line_no,
                msg: format!("fact line needs 3 tokens, found {}", t.len()),
            })?;
            cur.kb.push(KbTriple::new(s, r, o));
        }
    }
    finish(&mut cur, &mut out, start_line)?;
    Ok(out)
}

/// Writes dialogues in the bAbI layout: facts first, then turns, numbered
/// from 1 within each dialogue, one blank line after each dialogue. The
/// domain label has no place in this format and is dropped.
pub fn serialize_babi(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for d in dialogues {
        let mut n = 1;
        for k in &d.kb {
            out.push_str(&format!("{n} {} {} {}\n", k.subject, k.relation, k.object));
            n += 1;
        }
        for t in &d.turns {
            out.push_str(&format!(
                "{n} {}\t{}\n",
                t.user.join(" "),
                t.system.join(" ")
            ));
            n += 1;
        }
        out.push('\n');
    }
    out
}
