//! Line-oriented protocol files.
//!
//! ```text
//! # comment
//! epsilon 0.1
//! class general
//! node 0 aux fix=0 block=0
//! node 1 input block=0
//! edge 0 1
//! rand 0 p=0.25
//! tx 1 := in
//! out 0 := xor(rx[0], rand[0])
//! ```
//!
//! `class` is `general` (default), `semi-noisy` or `noisy-copy`. Auxiliary
//! nodes without `block=` belong to the leftover block. `rand <i>` declares
//! source `i` either as a single bit (`p=`) or as a full distribution over
//! `2^b` values (`probs=p0,p1,...`). `tx <id> [noiseless] := <expr>` adds a
//! transmission; the final `out` line is the output transmission.

use std::fmt::Write as _;

use super::{BoolExpr, Protocol, ProtocolClass, ProtocolError, RandSource, Role, Transmission};
use crate::planar::Graph;

fn perr(line: usize, msg: impl Into<String>) -> ProtocolError {
    ProtocolError::Parse {
        line,
        msg: msg.into(),
    }
}

fn key_value<'a>(tok: &'a str, key: &str, line: usize) -> Result<&'a str, ProtocolError> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| perr(line, format!("expected {key}=..., found {tok:?}")))
}

fn num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, ProtocolError> {
    s.parse()
        .map_err(|_| perr(line, format!("bad {what} {s:?}")))
}

/// Parses a protocol file. `epsilon` overrides (or supplies) the noise level.
pub fn parse_protocol(text: &str, epsilon: Option<f64>) -> Result<Protocol, ProtocolError> {
    let mut eps_line: Option<f64> = None;
    let mut class = ProtocolClass::General;
    let mut nodes: Vec<Option<Role>> = Vec::new();
    let mut edges = Vec::new();
    let mut sources: Vec<RandSource> = Vec::new();
    let mut schedule = Vec::new();
    let mut out_seen: Option<usize> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(prev) = out_seen {
            return Err(perr(line, format!("nothing may follow the `out` line {prev}")));
        }
        let (head, expr_src) = match content.split_once(":=") {
            Some((h, e)) => (h.trim(), Some(e.trim())),
            None => (content, None),
        };
        let toks: Vec<&str> = head.split_whitespace().collect();
        match toks[0] {
            "epsilon" => {
                if toks.len() != 2 {
                    return Err(perr(line, "usage: epsilon <value>"));
                }
                eps_line = Some(num(toks[1], line, "epsilon")?);
            }
            "class" => {
                class = match toks.get(1).copied() {
                    Some("general") => ProtocolClass::General,
                    Some("semi-noisy") => ProtocolClass::SemiNoisy,
                    Some("noisy-copy") => ProtocolClass::NoisyCopy,
                    other => return Err(perr(line, format!("unknown class {other:?}"))),
                };
            }
            "node" => {
                if toks.len() < 3 {
                    return Err(perr(line, "usage: node <id> input|aux ..."));
                }
                let id: usize = num(toks[1], line, "node id")?;
                let role = match toks[2] {
                    "input" => {
                        if toks.len() != 4 {
                            return Err(perr(line, "usage: node <id> input block=<j>"));
                        }
                        Role::Input {
                            block: num(key_value(toks[3], "block", line)?, line, "block")?,
                        }
                    }
                    "aux" => {
                        if toks.len() < 4 || toks.len() > 5 {
                            return Err(perr(line, "usage: node <id> aux fix=<0|1> [block=<j>]"));
                        }
                        let fixed = match key_value(toks[3], "fix", line)? {
                            "0" => false,
                            "1" => true,
                            other => return Err(perr(line, format!("fix must be 0 or 1, got {other:?}"))),
                        };
                        let block = match toks.get(4) {
                            Some(t) => Some(num(key_value(t, "block", line)?, line, "block")?),
                            None => None,
                        };
                        Role::Aux { fixed, block }
                    }
                    other => return Err(perr(line, format!("unknown role {other:?}"))),
                };
                if nodes.len() <= id {
                    nodes.resize(id + 1, None);
                }
                if nodes[id].is_some() {
                    return Err(perr(line, format!("node {id} declared twice")));
                }
                nodes[id] = Some(role);
            }
            "edge" => {
                if toks.len() != 3 {
                    return Err(perr(line, "usage: edge <a> <b>"));
                }
                edges.push((
                    num::<usize>(toks[1], line, "node id")?,
                    num::<usize>(toks[2], line, "node id")?,
                    line,
                ));
            }
            "rand" => {
                if toks.len() != 3 {
                    return Err(perr(line, "usage: rand <i> p=<p> | probs=<p0,p1,...>"));
                }
                let idx: usize = num(toks[1], line, "source index")?;
                if idx != sources.len() {
                    return Err(perr(line, format!("expected source {}, found {idx}", sources.len())));
                }
                let src = if let Some(p) = toks[2].strip_prefix("p=") {
                    RandSource::bernoulli(num(p, line, "probability")?)
                } else {
                    let list = key_value(toks[2], "probs", line)?;
                    RandSource {
                        probs: list
                            .split(',')
                            .map(|s| num(s, line, "probability"))
                            .collect::<Result<_, _>>()?,
                    }
                };
                sources.push(src);
            }
            kw @ ("tx" | "out") => {
                let expr_src = expr_src.ok_or_else(|| perr(line, "missing `:=`"))?;
                if toks.len() < 2 || toks.len() > 3 || (toks.len() == 3 && toks[2] != "noiseless") {
                    return Err(perr(line, format!("usage: {kw} <id> [noiseless] := <expr>")));
                }
                let sender: usize = num(toks[1], line, "node id")?;
                let expr: BoolExpr = expr_src.parse().map_err(|m: String| perr(line, m))?;
                schedule.push(Transmission {
                    sender,
                    expr,
                    noiseless: toks.len() == 3,
                });
                if kw == "out" {
                    out_seen = Some(line);
                }
            }
            other => return Err(perr(line, format!("unknown directive {other:?}"))),
        }
    }
    if out_seen.is_none() {
        return Err(perr(text.lines().count().max(1), "missing `out` line"));
    }
    let roles = nodes
        .into_iter()
        .enumerate()
        .map(|(v, r)| r.ok_or_else(|| perr(0, format!("node {v} is not declared"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut graph = Graph::new(roles.len());
    for (a, b, line) in edges {
        if a >= roles.len() || b >= roles.len() || a == b {
            return Err(perr(line, format!("bad edge {a} {b}")));
        }
        graph.add_edge(a, b);
    }
    let epsilon = epsilon
        .or(eps_line)
        .ok_or_else(|| perr(0, "no epsilon given (file or command line)"))?;
    Protocol::new(graph, roles, schedule, epsilon, class, sources)
}

/// Writes a protocol in the file format read by [`parse_protocol`].
pub fn write_protocol(p: &Protocol) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "epsilon {}", p.epsilon());
    let _ = writeln!(s, "class {}", p.class().name());
    for (v, r) in p.roles().iter().enumerate() {
        match r {
            Role::Input { block } => {
                let _ = writeln!(s, "node {v} input block={block}");
            }
            Role::Aux { fixed, block } => {
                let _ = write!(s, "node {v} aux fix={}", *fixed as u8);
                if let Some(j) = block {
                    let _ = write!(s, " block={j}");
                }
                s.push('\n');
            }
        }
    }
    for (a, b) in p.graph().edges() {
        let _ = writeln!(s, "edge {a} {b}");
    }
    for (i, src) in p.sources().iter().enumerate() {
        if src.probs.len() == 2 {
            let _ = writeln!(s, "rand {i} p={}", src.probs[1]);
        } else {
            let list: Vec<String> = src.probs.iter().map(|q| q.to_string()).collect();
            let _ = writeln!(s, "rand {i} probs={}", list.join(","));
        }
    }
    let last = p.schedule().len() - 1;
    for (t, tx) in p.schedule().iter().enumerate() {
        let kw = if t == last { "out" } else { "tx" };
        let flag = if tx.noiseless { " noiseless" } else { "" };
        let _ = writeln!(s, "{kw} {}{flag} := {}", tx.sender, tx.expr);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAR: &str = "\
epsilon 0.1
node 0 aux fix=0 block=0
node 1 input block=0
node 2 input block=0
edge 0 1
edge 0 2
tx 1 := in
tx 2 := in
out 0 := xor(rx[0], rx[1])
";

    #[test]
    fn parses_star() {
        let p = parse_protocol(STAR, None).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.epsilon(), 0.1);
        assert_eq!(p.output_node(), 0);
        let q = parse_protocol(STAR, Some(0.3)).unwrap();
        assert_eq!(q.epsilon(), 0.3);
    }

    #[test]
    fn roundtrip() {
        let p = parse_protocol(STAR, None).unwrap();
        let text = write_protocol(&p);
        assert_eq!(parse_protocol(&text, None).unwrap(), p);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = STAR.replace("tx 2 := in", "tx 2 := inn");
        match parse_protocol(&bad, None) {
            Err(ProtocolError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
        let trailing = format!("{STAR}tx 1 := in\n");
        assert!(matches!(
            parse_protocol(&trailing, None),
            Err(ProtocolError::Parse { line: 10, .. })
        ));
        let no_eps = STAR.replace("epsilon 0.1\n", "");
        assert!(parse_protocol(&no_eps, None).is_err());
    }

    #[test]
    fn sources_roundtrip() {
        let text = "\
epsilon 0.2
class general
node 0 input block=0
node 1 aux fix=1
edge 0 1
rand 0 p=0.25
rand 1 probs=0.5,0.25,0.125,0.125
tx 0 := in
out 1 noiseless := xor(rx[0], rand[0], rand[1.1], in)
";
        let p = parse_protocol(text, None).unwrap();
        assert_eq!(p.sources()[1].bits(), 2);
        assert_eq!(write_protocol(&p), text);
    }
}
