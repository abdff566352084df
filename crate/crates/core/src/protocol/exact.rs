//! Exact outcome laws by dynamic programming over the live random bits.
//!
//! For each input the engine walks the schedule once, keeping a weighted set
//! of states. A state holds only the random quantities some later expression
//! still reads: received copies `(w, t)` and random-source values. Copies are
//! introduced right after their transmission and dropped after their last
//! reader, so the state count stays far below `2^B`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{Atom, BoolExpr, Protocol, ProtocolError};
use crate::noise::BitVector;

/// An expression evaluated at `node` after the whole schedule has run.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub node: usize,
    pub expr: BoolExpr,
}

/// What the channel reports for each run.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// The output bit.
    Output,
    /// All sent bits; bit `t` of the label is transmission `t`.
    Transcript,
    /// Sent bits of the listed transmissions; bit `j` is `list[j]`.
    Sent(Vec<usize>),
    /// Probe values; bit `j` is probe `j`.
    Probes(Vec<Probe>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactOptions {
    /// Cap on random bits that influence anything (noisy copies that are
    /// read plus random-source bits).
    pub max_random_bits: usize,
    /// Cap on simultaneously tracked states per input.
    pub max_states: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            max_random_bits: 24,
            max_states: 1 << 22,
        }
    }
}

impl ExactOptions {
    pub fn with_bits(max_random_bits: usize) -> Self {
        ExactOptions {
            max_random_bits,
            ..Self::default()
        }
    }
}

/// Conditional law of an outcome label given each input.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    inputs: Vec<BitVector>,
    outcome_bits: usize,
    rows: Vec<Vec<(u64, f64)>>,
}

impl Channel {
    /// Rows are `(label, probability)` lists; labels are sorted and merged.
    pub fn new(inputs: Vec<BitVector>, outcome_bits: usize, rows: Vec<Vec<(u64, f64)>>) -> Self {
        assert_eq!(inputs.len(), rows.len(), "one row per input");
        let rows = rows.into_iter().map(merge_sorted).collect();
        Channel {
            inputs,
            outcome_bits,
            rows,
        }
    }

    pub fn inputs(&self) -> &[BitVector] {
        &self.inputs
    }

    pub fn outcome_bits(&self) -> usize {
        self.outcome_bits
    }

    pub fn rows(&self) -> &[Vec<(u64, f64)>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[(u64, f64)] {
        &self.rows[i]
    }

    pub fn prob(&self, i: usize, label: u64) -> f64 {
        self.rows[i]
            .binary_search_by_key(&label, |&(c, _)| c)
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    /// Largest `|Σ_c P(c|x) − 1|` over rows.
    pub fn max_row_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Every label with positive probability in some row.
    pub fn labels(&self) -> Vec<u64> {
        let mut all: Vec<u64> = self.rows.iter().flatten().map(|&(c, _)| c).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Pushes each label through the stochastic map `post(c) = [(c', p)]`.
    pub fn compose<F: Fn(u64) -> Vec<(u64, f64)>>(&self, outcome_bits: usize, post: F) -> Channel {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .flat_map(|&(c, p)| post(c).into_iter().map(move |(d, q)| (d, p * q)))
                    .collect()
            })
            .collect();
        Channel::new(self.inputs.clone(), outcome_bits, rows)
    }

    /// Largest total-variation distance between matching rows.
    pub fn max_tv(&self, other: &Channel) -> f64 {
        assert_eq!(self.rows.len(), other.rows.len());
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| row_tv(a, b))
            .fold(0.0, f64::max)
    }
}

fn row_tv(a: &[(u64, f64)], b: &[(u64, f64)]) -> f64 {
    let mut m: BTreeMap<u64, f64> = BTreeMap::new();
    for &(c, p) in a {
        *m.entry(c).or_default() += p;
    }
    for &(c, p) in b {
        *m.entry(c).or_default() -= p;
    }
    0.5 * m.values().map(|d| d.abs()).sum::<f64>()
}

fn merge_sorted(mut v: Vec<(u64, f64)>) -> Vec<(u64, f64)> {
    v.sort_by_key(|&(c, _)| c);
    let mut out: Vec<(u64, f64)> = Vec::with_capacity(v.len());
    for (c, p) in v {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += p,
            _ => out.push((c, p)),
        }
    }
    out.retain(|&(_, p)| p != 0.0);
    out
}

/// Expression with atoms resolved to state slots.
#[derive(Clone, Debug)]
enum CExpr {
    Const(bool),
    Slot(u8),
    Own(usize),
    Not(Box<CExpr>),
    Xor(Vec<CExpr>),
    And(Vec<CExpr>),
    Or(Vec<CExpr>),
    Maj(Vec<CExpr>),
    Thr(usize, Vec<CExpr>),
    Table(Vec<bool>, Vec<CExpr>),
}

impl CExpr {
    fn eval(&self, state: u128, own: &[bool]) -> bool {
        match self {
            CExpr::Const(b) => *b,
            CExpr::Slot(s) => (state >> s) & 1 == 1,
            CExpr::Own(v) => own[*v],
            CExpr::Not(e) => !e.eval(state, own),
            CExpr::Xor(es) => es.iter().fold(false, |a, e| a ^ e.eval(state, own)),
            CExpr::And(es) => es.iter().all(|e| e.eval(state, own)),
            CExpr::Or(es) => es.iter().any(|e| e.eval(state, own)),
            CExpr::Maj(es) => 2 * es.iter().filter(|e| e.eval(state, own)).count() > es.len(),
            CExpr::Thr(k, es) => es.iter().filter(|e| e.eval(state, own)).count() >= *k,
            CExpr::Table(t, es) => {
                let idx = es
                    .iter()
                    .enumerate()
                    .fold(0usize, |a, (i, e)| a | ((e.eval(state, own) as usize) << i));
                t[idx]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Var {
    Copy { w: usize, t: usize },
    Source(usize),
}

#[derive(Default)]
struct Step {
    sources: Vec<(usize, Vec<u8>)>,
    expr: Option<CExpr>,
    record: Option<u8>,
    /// (slot, noisy) for each received copy introduced after this transmission.
    copies: Vec<(u8, bool)>,
    probes: Vec<(u8, CExpr)>,
    free_mask: u128,
}

struct Plan {
    steps: Vec<Step>,
    outcome_bits: usize,
    random_bits: usize,
}

fn compile(
    expr: &BoolExpr,
    node: usize,
    p: &Protocol,
    slots: &BTreeMap<Var, Vec<u8>>,
) -> CExpr {
    let rec = |e: &BoolExpr| compile(e, node, p, slots);
    let list = |es: &[BoolExpr]| es.iter().map(|e| compile(e, node, p, slots)).collect();
    match expr {
        BoolExpr::Const(b) => CExpr::Const(*b),
        BoolExpr::Atom(Atom::Input) => CExpr::Own(node),
        BoolExpr::Atom(Atom::Var(_)) => CExpr::Const(false),
        BoolExpr::Atom(Atom::Rx(t)) => {
            if p.receives(node, *t) {
                CExpr::Slot(slots[&Var::Copy { w: node, t: *t }][0])
            } else {
                CExpr::Const(false)
            }
        }
        BoolExpr::Atom(Atom::Rand { source, bit }) => CExpr::Slot(slots[&Var::Source(*source)][*bit]),
        BoolExpr::Not(e) => CExpr::Not(Box::new(rec(e))),
        BoolExpr::Xor(es) => CExpr::Xor(list(es)),
        BoolExpr::And(es) => CExpr::And(list(es)),
        BoolExpr::Or(es) => CExpr::Or(list(es)),
        BoolExpr::Maj(es) => CExpr::Maj(list(es)),
        BoolExpr::Thr(k, es) => CExpr::Thr(*k, list(es)),
        BoolExpr::Table(t, es) => CExpr::Table(t.clone(), list(es)),
    }
}

fn vars_read(expr: &BoolExpr, node: usize, p: &Protocol) -> Vec<Var> {
    let mut out = Vec::new();
    expr.visit_atoms(&mut |a| match a {
        Atom::Rx(t) if p.receives(node, t) => out.push(Var::Copy { w: node, t }),
        Atom::Rand { source, .. } => out.push(Var::Source(source)),
        _ => {}
    });
    out
}

fn plan(p: &Protocol, outcome: &Outcome, opts: &ExactOptions) -> Result<Plan, ProtocolError> {
    let t_len = p.schedule().len();
    let probes: &[Probe] = match outcome {
        Outcome::Probes(ps) => ps,
        _ => &[],
    };
    let outcome_bits = match outcome {
        Outcome::Output => 1,
        Outcome::Transcript => t_len,
        Outcome::Sent(list) => list.len(),
        Outcome::Probes(ps) => ps.len(),
    };
    if outcome_bits > 64 {
        return Err(ProtocolError::OutcomeTooWide { bits: outcome_bits });
    }
    for probe in probes {
        if probe.node >= p.node_count() {
            return Err(ProtocolError::Invalid(format!("probe node {} out of range", probe.node)));
        }
        for a in probe.expr.atoms() {
            match a {
                Atom::Rx(t) if t >= t_len => {
                    return Err(ProtocolError::Invalid(format!("probe reads rx[{t}]")))
                }
                Atom::Rand { source, bit }
                    if source >= p.sources().len() || bit >= p.sources()[source].bits() =>
                {
                    return Err(ProtocolError::Invalid(format!(
                        "probe reads rand[{source}.{bit}]"
                    )))
                }
                _ => {}
            }
        }
    }

    // Probes run as soon as the copies they read exist.
    let probe_step: Vec<usize> = probes
        .iter()
        .map(|pr| {
            let mut s = 0;
            pr.expr.visit_atoms(&mut |a| {
                if let Atom::Rx(t) = a {
                    s = s.max(t);
                }
            });
            s
        })
        .collect();

    // First and last step at which each variable is read.
    let mut first: BTreeMap<Var, usize> = BTreeMap::new();
    let mut last: BTreeMap<Var, usize> = BTreeMap::new();
    let mut note = |v: Var, step: usize| {
        let intro = match v {
            Var::Copy { t, .. } => t,
            Var::Source(_) => step,
        };
        first.entry(v).and_modify(|s| *s = (*s).min(intro)).or_insert(intro);
        last.entry(v).and_modify(|s| *s = (*s).max(step)).or_insert(step);
    };
    for (i, tx) in p.schedule().iter().enumerate() {
        for v in vars_read(&tx.expr, tx.sender, p) {
            note(v, i);
        }
    }
    for (pr, &s) in probes.iter().zip(&probe_step) {
        for v in vars_read(&pr.expr, pr.node, p) {
            note(v, s);
        }
    }

    let eps = p.epsilon();
    let noisy_channel = eps > 0.0 && eps < 1.0;
    let mut random_bits = 0;
    for v in first.keys() {
        match *v {
            Var::Copy { t, .. } => {
                if !p.schedule()[t].noiseless && noisy_channel {
                    random_bits += 1;
                }
            }
            Var::Source(s) => random_bits += p.sources()[s].bits(),
        }
    }
    if random_bits > opts.max_random_bits {
        return Err(ProtocolError::CapExceeded {
            bits: random_bits,
            cap: opts.max_random_bits,
        });
    }

    // Slot allocation over time.
    let mut free: Vec<u8> = (0..128u8).rev().collect();
    let mut slots: BTreeMap<Var, Vec<u8>> = BTreeMap::new();
    let mut steps: Vec<Step> = (0..t_len).map(|_| Step::default()).collect();
    let mut peak = 0usize;
    let take = |free: &mut Vec<u8>, k: usize, peak: &mut usize| -> Result<Vec<u8>, ProtocolError> {
        if free.len() < k {
            return Err(ProtocolError::SlotCap { slots: 128 - free.len() + k });
        }
        let out: Vec<u8> = (0..k).map(|_| free.pop().unwrap()).collect();
        *peak = (*peak).max(128 - free.len());
        Ok(out)
    };
    for i in 0..t_len {
        let sources_here: Vec<usize> = first
            .iter()
            .filter_map(|(v, &s)| match *v {
                Var::Source(src) if s == i => Some(src),
                _ => None,
            })
            .collect();
        for src in sources_here {
            let sl = take(&mut free, p.sources()[src].bits(), &mut peak)?;
            slots.insert(Var::Source(src), sl.clone());
            steps[i].sources.push((src, sl));
        }
        let tx = &p.schedule()[i];
        steps[i].expr = Some(compile(&tx.expr, tx.sender, p, &slots));
        let copies_here: Vec<Var> = first
            .iter()
            .filter_map(|(v, &s)| match *v {
                Var::Copy { t, .. } if t == i && s == i => Some(*v),
                _ => None,
            })
            .collect();
        for v in copies_here {
            let sl = take(&mut free, 1, &mut peak)?;
            steps[i].copies.push((sl[0], !tx.noiseless));
            slots.insert(v, sl);
        }
        for (j, pr) in probes.iter().enumerate() {
            if probe_step[j] == i {
                steps[i].probes.push((j as u8, compile(&pr.expr, pr.node, p, &slots)));
            }
        }
        let done: Vec<Var> = last
            .iter()
            .filter(|(_, &s)| s == i)
            .map(|(v, _)| *v)
            .collect();
        for v in done {
            if let Some(sl) = slots.remove(&v) {
                for s in sl {
                    steps[i].free_mask |= 1u128 << s;
                    free.push(s);
                }
            }
        }
        // Keep allocation deterministic: lowest free slot first.
        free.sort_unstable_by(|a, b| b.cmp(a));
    }
    let _ = peak;
    match outcome {
        Outcome::Output => steps[t_len - 1].record = Some(0),
        Outcome::Transcript => {
            for (i, s) in steps.iter_mut().enumerate() {
                s.record = Some(i as u8);
            }
        }
        Outcome::Sent(list) => {
            for (j, &t) in list.iter().enumerate() {
                if t >= t_len {
                    return Err(ProtocolError::Invalid(format!("no transmission {t}")));
                }
                steps[t].record = Some(j as u8);
            }
        }
        Outcome::Probes(_) => {}
    }
    Ok(Plan {
        steps,
        outcome_bits,
        random_bits,
    })
}

type StateVec = Vec<((u128, u64), f64)>;

fn merge_states(mut v: StateVec) -> StateVec {
    v.sort_by_key(|&(k, _)| k);
    let mut out: StateVec = Vec::with_capacity(v.len());
    for (k, p) in v {
        match out.last_mut() {
            Some(last) if last.0 == k => last.1 += p,
            _ => out.push((k, p)),
        }
    }
    out
}

fn run_input(
    p: &Protocol,
    plan: &Plan,
    own: &[bool],
    opts: &ExactOptions,
) -> Result<Vec<(u64, f64)>, ProtocolError> {
    let eps = p.epsilon();
    let mut states: StateVec = vec![((0u128, 0u64), 1.0)];
    let guard = |n: usize| {
        if n > opts.max_states {
            Err(ProtocolError::StateCap {
                states: n,
                cap: opts.max_states,
            })
        } else {
            Ok(())
        }
    };
    for step in &plan.steps {
        for (src, sl) in &step.sources {
            let probs = &p.sources()[*src].probs;
            let mut next = Vec::with_capacity(states.len() * probs.len());
            for &((st, aux), w) in &states {
                for (o, &q) in probs.iter().enumerate() {
                    if q == 0.0 {
                        continue;
                    }
                    let mut s = st;
                    for (b, &slot) in sl.iter().enumerate() {
                        if (o >> b) & 1 == 1 {
                            s |= 1u128 << slot;
                        }
                    }
                    next.push(((s, aux), w * q));
                }
            }
            guard(next.len())?;
            states = next;
        }
        let expr = step.expr.as_ref().expect("every step has an expression");
        let mut next: StateVec = Vec::with_capacity(states.len());
        for &((st, aux), w) in &states {
            let bit = expr.eval(st, own);
            let aux = match step.record {
                Some(pos) if bit => aux | (1u64 << pos),
                _ => aux,
            };
            let mut branch: StateVec = vec![((st, aux), w)];
            for &(slot, noisy) in &step.copies {
                let mut grown = Vec::with_capacity(branch.len() * 2);
                for &((s, a), q) in &branch {
                    let clean = if bit { s | (1u128 << slot) } else { s };
                    let flipped = if bit { s } else { s | (1u128 << slot) };
                    if !noisy {
                        grown.push(((clean, a), q));
                        continue;
                    }
                    if eps < 1.0 {
                        grown.push(((clean, a), q * (1.0 - eps)));
                    }
                    if eps > 0.0 {
                        grown.push(((flipped, a), q * eps));
                    }
                }
                branch = grown;
            }
            next.extend(branch);
        }
        for ((st, aux), _) in next.iter_mut() {
            for (j, pe) in &step.probes {
                if pe.eval(*st, own) {
                    *aux |= 1u64 << j;
                }
            }
            *st &= !step.free_mask;
        }
        guard(next.len())?;
        states = merge_states(next);
    }
    Ok(merge_sorted(
        states.into_iter().map(|((_, aux), w)| (aux, w)).collect(),
    ))
}

/// Exact law of `outcome` for each input in `inputs`.
pub fn exact_channel(
    p: &Protocol,
    inputs: &[BitVector],
    outcome: &Outcome,
    opts: &ExactOptions,
) -> Result<Channel, ProtocolError> {
    let plan = plan(p, outcome, opts)?;
    let rows = inputs
        .par_iter()
        .map(|x| {
            let own = p.node_values(x)?;
            run_input(p, &plan, &own, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Channel::new(inputs.to_vec(), plan.outcome_bits, rows))
}

/// Random bits the exact engine would enumerate for `outcome`.
pub fn relevant_random_bits(p: &Protocol, outcome: &Outcome) -> Result<usize, ProtocolError> {
    let opts = ExactOptions {
        max_random_bits: usize::MAX,
        ..ExactOptions::default()
    };
    plan(p, outcome, &opts).map(|pl| pl.random_bits)
}

/// Worst-case and per-input error of the output bit against target `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub worst: f64,
    pub worst_input: usize,
    pub per_input: Vec<f64>,
}

/// `max_x Pr[output ≠ f(x)]` by exact enumeration over all inputs.
pub fn error_probability_exact(
    p: &Protocol,
    f: &BoolExpr,
    opts: &ExactOptions,
) -> Result<ErrorReport, ProtocolError> {
    let inputs = p.all_inputs();
    if inputs.len() > 1 << 20 {
        return Err(ProtocolError::CapExceeded {
            bits: p.input_nodes().len(),
            cap: 20,
        });
    }
    let ch = exact_channel(p, &inputs, &Outcome::Output, opts)?;
    let per_input: Vec<f64> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let want = f.eval_vars(x.bits());
            ch.prob(i, (!want) as u64)
        })
        .collect();
    let (worst_input, worst) = per_input
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(ErrorReport {
        worst,
        worst_input,
        per_input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planar::Graph;
    use crate::protocol::{ProtocolClass, RandSource, Role, Transmission};

    fn star(eps: f64) -> Protocol {
        let g = Graph::from_edges(3, &[(0, 1), (0, 2)]);
        let roles = vec![
            Role::Aux {
                fixed: false,
                block: Some(0),
            },
            Role::Input { block: 0 },
            Role::Input { block: 0 },
        ];
        let schedule = vec![
            Transmission::new(1, BoolExpr::input()),
            Transmission::new(2, BoolExpr::input()),
            Transmission::new(0, "xor(rx[0], rx[1])".parse().unwrap()),
        ];
        Protocol::new(g, roles, schedule, eps, ProtocolClass::General, vec![]).unwrap()
    }

    #[test]
    fn zero_noise_rows_are_deterministic() {
        let p = star(0.0);
        let ch = exact_channel(&p, &p.all_inputs(), &Outcome::Transcript, &ExactOptions::default())
            .unwrap();
        for r in ch.rows() {
            assert_eq!(r.len(), 1);
            assert_eq!(r[0].1, 1.0);
        }
    }

    #[test]
    fn star_error_is_two_eps_one_minus_eps() {
        let p = star(0.1);
        let rep = error_probability_exact(&p, &BoolExpr::parity(2), &ExactOptions::default()).unwrap();
        for e in rep.per_input {
            assert!((e - 0.18).abs() < 1e-12);
        }
    }

    #[test]
    fn random_source_mask_is_enumerated() {
        let g = Graph::from_edges(2, &[(0, 1)]);
        let roles = vec![
            Role::Input { block: 0 },
            Role::Aux {
                fixed: false,
                block: Some(0),
            },
        ];
        let schedule = vec![
            Transmission::new(0, BoolExpr::input()),
            Transmission::new(1, "xor(rx[0], rand[0])".parse().unwrap()),
        ];
        let p = Protocol::new(
            g,
            roles,
            schedule,
            0.0,
            ProtocolClass::General,
            vec![RandSource::bernoulli(0.25)],
        )
        .unwrap();
        let ch = exact_channel(&p, &p.all_inputs(), &Outcome::Output, &ExactOptions::default()).unwrap();
        assert!((ch.prob(0, 1) - 0.25).abs() < 1e-15);
        assert!((ch.prob(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cap_is_enforced() {
        let p = star(0.1);
        let err = exact_channel(&p, &p.all_inputs(), &Outcome::Output, &ExactOptions::with_bits(1));
        assert_eq!(err, Err(ProtocolError::CapExceeded { bits: 2, cap: 1 }));
    }
}
