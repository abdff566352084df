//! Closed boolean expression language used for transmission functions and
//! target functions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// Leaf of an expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    /// The evaluating node's own input bit (the fixed bit for auxiliary nodes).
    Input,
    /// Global input variable `i`; only meaningful in target functions.
    Var(usize),
    /// Bit received from transmission `t`.
    Rx(usize),
    /// Bit `bit` of random source `source`.
    Rand { source: usize, bit: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BoolExpr {
    Const(bool),
    Atom(Atom),
    Not(Box<BoolExpr>),
    Xor(Vec<BoolExpr>),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
    /// True iff strictly more than half of the arguments are true (ties give 0).
    Maj(Vec<BoolExpr>),
    /// True iff at least `k` arguments are true.
    Thr(usize, Vec<BoolExpr>),
    /// Truth table indexed by `Σ arg_i · 2^i`.
    Table(Vec<bool>, Vec<BoolExpr>),
}

impl BoolExpr {
    pub fn input() -> Self {
        BoolExpr::Atom(Atom::Input)
    }

    pub fn rx(t: usize) -> Self {
        BoolExpr::Atom(Atom::Rx(t))
    }

    pub fn var(i: usize) -> Self {
        BoolExpr::Atom(Atom::Var(i))
    }

    pub fn rand(source: usize, bit: usize) -> Self {
        BoolExpr::Atom(Atom::Rand { source, bit })
    }

    pub fn not(e: BoolExpr) -> Self {
        BoolExpr::Not(Box::new(e))
    }

    /// Parity of the variables `x[0..n]`.
    pub fn parity(n: usize) -> Self {
        BoolExpr::Xor((0..n).map(BoolExpr::var).collect())
    }

    pub fn eval<F: FnMut(Atom) -> bool>(&self, leaf: &mut F) -> bool {
        match self {
            BoolExpr::Const(b) => *b,
            BoolExpr::Atom(a) => leaf(*a),
            BoolExpr::Not(e) => !e.eval(leaf),
            BoolExpr::Xor(es) => es.iter().fold(false, |acc, e| acc ^ e.eval(leaf)),
            BoolExpr::And(es) => es.iter().all(|e| e.eval(leaf)),
            BoolExpr::Or(es) => es.iter().any(|e| e.eval(leaf)),
            BoolExpr::Maj(es) => 2 * count_true(es, leaf) > es.len(),
            BoolExpr::Thr(k, es) => count_true(es, leaf) >= *k,
            BoolExpr::Table(table, es) => {
                let idx = es
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (i, e)| acc | ((e.eval(leaf) as usize) << i));
                table[idx]
            }
        }
    }

    /// Every atom occurring in the expression, in sorted order.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |a| {
            out.insert(a);
        });
        out
    }

    pub fn visit_atoms<F: FnMut(Atom)>(&self, f: &mut F) {
        match self {
            BoolExpr::Const(_) => {}
            BoolExpr::Atom(a) => f(*a),
            BoolExpr::Not(e) => e.visit_atoms(f),
            BoolExpr::Xor(es)
            | BoolExpr::And(es)
            | BoolExpr::Or(es)
            | BoolExpr::Maj(es)
            | BoolExpr::Thr(_, es)
            | BoolExpr::Table(_, es) => es.iter().for_each(|e| e.visit_atoms(f)),
        }
    }

    /// Replaces atoms for which `f` returns `Some`.
    pub fn substitute<F: Fn(Atom) -> Option<BoolExpr>>(&self, f: &F) -> BoolExpr {
        let map = |es: &[BoolExpr]| es.iter().map(|e| e.substitute(f)).collect();
        match self {
            BoolExpr::Const(b) => BoolExpr::Const(*b),
            BoolExpr::Atom(a) => f(*a).unwrap_or(BoolExpr::Atom(*a)),
            BoolExpr::Not(e) => BoolExpr::not(e.substitute(f)),
            BoolExpr::Xor(es) => BoolExpr::Xor(map(es)),
            BoolExpr::And(es) => BoolExpr::And(map(es)),
            BoolExpr::Or(es) => BoolExpr::Or(map(es)),
            BoolExpr::Maj(es) => BoolExpr::Maj(map(es)),
            BoolExpr::Thr(k, es) => BoolExpr::Thr(*k, map(es)),
            BoolExpr::Table(t, es) => BoolExpr::Table(t.clone(), map(es)),
        }
    }

    /// Checks table arities; returns a description of the first problem.
    pub fn check_tables(&self) -> Result<(), String> {
        match self {
            BoolExpr::Const(_) | BoolExpr::Atom(_) => Ok(()),
            BoolExpr::Not(e) => e.check_tables(),
            BoolExpr::Table(t, es) => {
                if es.len() >= usize::BITS as usize || t.len() != 1usize << es.len() {
                    return Err(format!(
                        "table with {} arguments needs {} entries, has {}",
                        es.len(),
                        1u128 << es.len().min(127),
                        t.len()
                    ));
                }
                es.iter().try_for_each(BoolExpr::check_tables)
            }
            BoolExpr::Xor(es)
            | BoolExpr::And(es)
            | BoolExpr::Or(es)
            | BoolExpr::Maj(es)
            | BoolExpr::Thr(_, es) => es.iter().try_for_each(BoolExpr::check_tables),
        }
    }

    /// Evaluates a target function on a full input assignment.
    pub fn eval_vars(&self, x: &[bool]) -> bool {
        self.eval(&mut |a| match a {
            Atom::Var(i) => x.get(i).copied().unwrap_or(false),
            _ => false,
        })
    }
}

fn count_true<F: FnMut(Atom) -> bool>(es: &[BoolExpr], leaf: &mut F) -> usize {
    es.iter().filter(|e| e.eval(leaf)).count()
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Input => f.write_str("in"),
            Atom::Var(i) => write!(f, "x[{i}]"),
            Atom::Rx(t) => write!(f, "rx[{t}]"),
            Atom::Rand { source, bit: 0 } => write!(f, "rand[{source}]"),
            Atom::Rand { source, bit } => write!(f, "rand[{source}.{bit}]"),
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, name: &str, head: Option<String>, es: &[BoolExpr]) -> fmt::Result {
    write!(f, "{name}(")?;
    let mut first = true;
    if let Some(h) = head {
        f.write_str(&h)?;
        first = false;
    }
    for e in es {
        if !first {
            f.write_str(", ")?;
        }
        first = false;
        write!(f, "{e}")?;
    }
    f.write_str(")")
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Const(b) => write!(f, "const({})", *b as u8),
            BoolExpr::Atom(a) => write!(f, "{a}"),
            BoolExpr::Not(e) => write!(f, "not({e})"),
            BoolExpr::Xor(es) => write_list(f, "xor", None, es),
            BoolExpr::And(es) => write_list(f, "and", None, es),
            BoolExpr::Or(es) => write_list(f, "or", None, es),
            BoolExpr::Maj(es) => write_list(f, "maj", None, es),
            BoolExpr::Thr(k, es) => write_list(f, "thr", Some(k.to_string()), es),
            BoolExpr::Table(t, es) => {
                let bits: String = t.iter().map(|&b| if b { '1' } else { '0' }).collect();
                write_list(f, "table", Some(bits), es)
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(format!(
                "expected '{}' at column {}",
                c as char,
                self.pos + 1
            ))
        }
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<usize, String> {
        let w = self.word();
        w.parse()
            .map_err(|_| format!("expected a number near column {}, found {w:?}", self.pos + 1))
    }

    fn args(&mut self) -> Result<Vec<BoolExpr>, String> {
        let mut out = Vec::new();
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(format!("expected ',' or ')' at column {}", self.pos + 1)),
            }
        }
    }

    fn expr(&mut self) -> Result<BoolExpr, String> {
        let name = self.word();
        match name.as_str() {
            "in" => Ok(BoolExpr::input()),
            "rx" | "x" => {
                self.expect(b'[')?;
                let i = self.number()?;
                self.expect(b']')?;
                Ok(if name == "rx" {
                    BoolExpr::rx(i)
                } else {
                    BoolExpr::var(i)
                })
            }
            "rand" => {
                self.expect(b'[')?;
                let source = self.number()?;
                let bit = if self.peek() == Some(b'.') {
                    self.pos += 1;
                    self.number()?
                } else {
                    0
                };
                self.expect(b']')?;
                Ok(BoolExpr::rand(source, bit))
            }
            "const" => {
                self.expect(b'(')?;
                let v = self.number()?;
                self.expect(b')')?;
                match v {
                    0 => Ok(BoolExpr::Const(false)),
                    1 => Ok(BoolExpr::Const(true)),
                    _ => Err(format!("const takes 0 or 1, got {v}")),
                }
            }
            "not" => {
                self.expect(b'(')?;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(BoolExpr::not(e))
            }
            "xor" | "and" | "or" | "maj" => {
                self.expect(b'(')?;
                let es = self.args()?;
                Ok(match name.as_str() {
                    "xor" => BoolExpr::Xor(es),
                    "and" => BoolExpr::And(es),
                    "or" => BoolExpr::Or(es),
                    _ => BoolExpr::Maj(es),
                })
            }
            "thr" => {
                self.expect(b'(')?;
                let k = self.number()?;
                let es = if self.peek() == Some(b',') {
                    self.pos += 1;
                    self.args()?
                } else {
                    self.expect(b')')?;
                    Vec::new()
                };
                Ok(BoolExpr::Thr(k, es))
            }
            "table" => {
                self.expect(b'(')?;
                let bits = self.word();
                let table = bits
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(format!("bad truth table {bits:?}")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let es = if self.peek() == Some(b',') {
                    self.pos += 1;
                    self.args()?
                } else {
                    self.expect(b')')?;
                    Vec::new()
                };
                let e = BoolExpr::Table(table, es);
                e.check_tables()?;
                Ok(e)
            }
            "" => Err(format!("expected an expression at column {}", self.pos + 1)),
            other => Err(format!("unknown function {other:?}")),
        }
    }
}

impl FromStr for BoolExpr {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser {
            src: s.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        if p.peek().is_some() {
            return Err(format!("trailing input at column {}", p.pos + 1));
        }
        Ok(e)
    }
}
