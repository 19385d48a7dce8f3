//! Plain-text model interchange in the classic `pomdp-solve` format.
//!
//! Only the sparse entry forms are written. Fields the format has no slot for
//! (failure states, terminal states, horizon) travel in `#!` comment lines,
//! which other readers ignore.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pomdp::{BeliefState, DiscretePomdp, SparseMatrix};

/// Serializes a validated model. Numbers are printed in shortest round-trip
/// form, so `import_interchange` recovers every value bit for bit.
pub fn export_interchange(model: &DiscretePomdp) -> Result<String> {
    model.ensure_valid()?;
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "discount: {}", model.discount);
    let _ = writeln!(w, "values: reward");
    let _ = writeln!(w, "states: {}", model.num_states);
    let names: Vec<String> = (0..model.num_actions)
        .map(|a| action_token(model.action_names.get(a), a))
        .collect();
    let _ = writeln!(w, "actions: {}", names.join(" "));
    let _ = writeln!(w, "observations: {}", model.num_observations);
    let _ = writeln!(w, "#! failure_states: {}", join(&model.failure_states));
    let _ = writeln!(w, "#! terminal_states: {}", join(&model.terminal_states));
    match model.horizon {
        Some(h) => {
            let _ = writeln!(w, "#! horizon: {h}");
        }
        None => {
            let _ = writeln!(w, "#! horizon: none");
        }
    }
    let start: Vec<String> = model
        .initial_belief
        .probs()
        .iter()
        .map(|p| format!("{p:?}"))
        .collect();
    let _ = writeln!(w, "start: {}", start.join(" "));
    for (a, t) in model.transition.iter().enumerate() {
        for (s, (cols, vals)) in t.rows().enumerate() {
            for (c, v) in cols.iter().zip(vals) {
                let _ = writeln!(w, "T: {a} : {s} : {c} {v:?}");
            }
        }
    }
    for (a, z) in model.observation.iter().enumerate() {
        for (s, (cols, vals)) in z.rows().enumerate() {
            for (c, v) in cols.iter().zip(vals) {
                let _ = writeln!(w, "O: {a} : {s} : {c} {v:?}");
            }
        }
    }
    for (a, r) in model.reward.iter().enumerate() {
        for (s, v) in r.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(w, "R: {a} : {s} : * : * {v:?}");
            }
        }
    }
    Ok(out)
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn action_token(name: Option<&String>, a: usize) -> String {
    match name {
        Some(n)
            if n.starts_with(|c: char| c.is_ascii_alphabetic())
                && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') =>
        {
            n.clone()
        }
        _ => format!("a{a}"),
    }
}

#[derive(Default)]
struct Header {
    discount: Option<f64>,
    states: Option<usize>,
    actions: Option<Vec<String>>,
    observations: Option<usize>,
    start: Option<Vec<f64>>,
    failure: Vec<usize>,
    terminal: Vec<usize>,
    horizon: Option<usize>,
}

type Entries = Vec<Vec<Vec<(usize, f64)>>>;

/// Parses a document written by [`export_interchange`] or by hand in the
/// same sparse dialect. `*` is accepted in place of a state index in `T:`,
/// `O:` and `R:` lines.
pub fn import_interchange(text: &str) -> Result<DiscretePomdp> {
    let mut h = Header::default();
    let mut t: Option<Entries> = None;
    let mut z: Option<Entries> = None;
    let mut r: Option<Vec<Vec<f64>>> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let line = raw.trim();
        if let Some(meta) = line.strip_prefix("#!") {
            let (key, val) = split_key(meta).ok_or_else(|| err("malformed metadata".into()))?;
            match key {
                "failure_states" => h.failure = parse_list(val).map_err(err)?,
                "terminal_states" => h.terminal = parse_list(val).map_err(err)?,
                "horizon" => {
                    h.horizon = if val == "none" {
                        None
                    } else {
                        Some(parse_num(val).map_err(err)?)
                    }
                }
                other => return Err(err(format!("unknown metadata key '{other}'"))),
            }
            continue;
        }
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = split_key(line).ok_or_else(|| err(format!("expected 'key:' in '{line}'")))?;
        match key {
            "discount" => h.discount = Some(parse_num(rest).map_err(err)?),
            "values" => {
                if rest != "reward" {
                    return Err(err(format!("only 'values: reward' is supported, got '{rest}'")));
                }
            }
            "states" => h.states = Some(parse_count(rest).map_err(err)?),
            "observations" => h.observations = Some(parse_count(rest).map_err(err)?),
            "actions" => {
                let toks: Vec<String> = rest.split_whitespace().map(String::from).collect();
                h.actions = Some(match toks.as_slice() {
                    [n] if n.parse::<usize>().is_ok() => {
                        (0..n.parse::<usize>().unwrap()).map(|a| format!("a{a}")).collect()
                    }
                    _ => toks,
                });
            }
            "start" => {
                let ps: std::result::Result<Vec<f64>, _> =
                    rest.split_whitespace().map(|x| x.parse::<f64>()).collect();
                h.start = Some(ps.map_err(|e| err(format!("bad start entry: {e}")))?);
            }
            "T" | "O" | "R" => {
                let (ns, na, no) = dims(&h).map_err(err)?;
                let fields: Vec<&str> = rest.split(':').map(str::trim).collect();
                let action = resolve_action(fields[0], h.actions.as_ref().unwrap()).map_err(err)?;
                match key {
                    "T" | "O" => {
                        if fields.len() != 3 {
                            return Err(err(format!("expected '{key}: a : s : x p'")));
                        }
                        let cols = if key == "T" { ns } else { no };
                        let mut tail = fields[2].split_whitespace();
                        let target: usize = tail
                            .next()
                            .ok_or_else(|| err("missing target index".into()))
                            .and_then(|x| parse_index(x, cols).map_err(err))?;
                        let p: f64 = tail
                            .next()
                            .ok_or_else(|| err("missing probability".into()))
                            .and_then(|x| parse_num(x).map_err(err))?;
                        if tail.next().is_some() {
                            return Err(err("trailing tokens".into()));
                        }
                        let store = if key == "T" { &mut t } else { &mut z };
                        let m = store.get_or_insert_with(|| vec![vec![Vec::new(); ns]; na]);
                        for s in rows_of(fields[1], ns).map_err(err)? {
                            m[action][s].push((target, p));
                        }
                    }
                    _ => {
                        if fields.len() != 4 {
                            return Err(err("expected 'R: a : s : * : * r'".into()));
                        }
                        let mut tail = fields[3].split_whitespace();
                        if tail.next() != Some("*") || fields[2] != "*" {
                            return Err(err("only state-action rewards 'R: a : s : * : * r' are supported".into()));
                        }
                        let v: f64 = tail
                            .next()
                            .ok_or_else(|| err("missing reward".into()))
                            .and_then(|x| parse_num(x).map_err(err))?;
                        let m = r.get_or_insert_with(|| vec![vec![0.0; ns]; na]);
                        for s in rows_of(fields[1], ns).map_err(err)? {
                            m[action][s] = v;
                        }
                    }
                }
            }
            other => return Err(err(format!("unknown key '{other}'"))),
        }
    }

    let end = text.lines().count().max(1);
    let (ns, na, no) = dims(&h).map_err(|message| Error::Parse { line: end, message })?;
    let discount = h.discount.ok_or(Error::Parse {
        line: end,
        message: "missing 'discount:'".into(),
    })?;
    let to_mats = |e: Option<Entries>, cols: usize| -> Result<Vec<SparseMatrix>> {
        let e = e.unwrap_or_else(|| vec![vec![Vec::new(); ns]; na]);
        e.into_iter().map(|rows| SparseMatrix::from_rows(cols, rows)).collect()
    };
    let initial = match h.start {
        Some(p) if p.len() == ns => BeliefState::new(p)?,
        Some(p) => {
            return Err(Error::Parse {
                line: end,
                message: format!("start has {} entries, expected {ns}", p.len()),
            })
        }
        None => BeliefState::uniform(ns),
    };
    let model = DiscretePomdp {
        num_states: ns,
        num_actions: na,
        num_observations: no,
        transition: to_mats(t, ns)?,
        observation: to_mats(z, no)?,
        reward: r.unwrap_or_else(|| vec![vec![0.0; ns]; na]),
        discount,
        initial_belief: initial,
        failure_states: h.failure,
        terminal_states: h.terminal,
        horizon: h.horizon,
        action_names: h.actions.unwrap_or_default(),
    };
    model.ensure_valid()?;
    Ok(model)
}

fn split_key(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once(':')?;
    Some((k.trim(), v.trim()))
}

fn dims(h: &Header) -> std::result::Result<(usize, usize, usize), String> {
    match (h.states, h.actions.as_ref(), h.observations) {
        (Some(s), Some(a), Some(o)) => Ok((s, a.len(), o)),
        _ => Err("'states:', 'actions:' and 'observations:' must precede entries".into()),
    }
}

fn parse_num<T: std::str::FromStr>(x: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    x.trim().parse::<T>().map_err(|e| format!("bad number '{x}': {e}"))
}

fn parse_count(x: &str) -> std::result::Result<usize, String> {
    let toks: Vec<&str> = x.split_whitespace().collect();
    match toks.as_slice() {
        [n] if n.parse::<usize>().is_ok() => Ok(n.parse().unwrap()),
        [] => Err("empty count".into()),
        // a list of names
        _ => Ok(toks.len()),
    }
}

fn parse_list(x: &str) -> std::result::Result<Vec<usize>, String> {
    x.split_whitespace().map(parse_num).collect()
}

fn parse_index(x: &str, limit: usize) -> std::result::Result<usize, String> {
    let i: usize = parse_num(x)?;
    if i >= limit {
        return Err(format!("index {i} out of range (limit {limit})"));
    }
    Ok(i)
}

fn rows_of(x: &str, n: usize) -> std::result::Result<Vec<usize>, String> {
    if x == "*" {
        Ok((0..n).collect())
    } else {
        Ok(vec![parse_index(x, n)?])
    }
}

fn resolve_action(x: &str, names: &[String]) -> std::result::Result<usize, String> {
    if x == "*" {
        return Err("wildcard actions are not supported".into());
    }
    if let Some(i) = names.iter().position(|n| n == x) {
        return Ok(i);
    }
    parse_index(x, names.len())
}
