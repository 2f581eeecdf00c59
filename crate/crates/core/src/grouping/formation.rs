//! Coalition formation by strictly improving leave-and-join and switch
//! operations.

use std::fmt;

use super::{Coalition, ConditionalEvaluator, Partition, SwitchSearch};
use crate::error::{Error, Result};

/// Upper bound on alternating scan rounds when re-optimizing two pairs.
const MAX_SWITCH_ROUNDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    /// Starting all-singleton structure.
    Init,
    LeaveJoin { user: usize, joined: usize },
    Switch { user: usize, partner: usize },
    /// Post-convergence merge of two singletons to fit the RF chains.
    Merge { a: usize, b: usize },
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Init => write!(f, "init,"),
            Operation::LeaveJoin { user, joined } => write!(f, "leave_join,{user} {joined}"),
            Operation::Switch { user, partner } => write!(f, "switch,{user} {partner}"),
            Operation::Merge { a, b } => write!(f, "merge,{a} {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub index: usize,
    pub op: Operation,
    pub coalitions: usize,
    pub value: f64,
}

impl TraceEntry {
    pub const CSV_HEADER: &'static str = "operation,type,users,coalitions,sum_rate";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.12e}", self.index, self.op, self.coalitions, self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormationOutcome {
    pub partition: Partition,
    /// Conditional sum-rate of `partition`.
    pub value: f64,
    /// Starts with the initial structure, then one entry per accepted
    /// operation.
    pub trace: Vec<TraceEntry>,
    pub sweeps: usize,
    /// Accepted leave-and-join and switch operations.
    pub operations: usize,
}

/// Working copy of a structure with its cached columns and value.
#[derive(Debug, Clone)]
struct State {
    coalitions: Vec<Coalition>,
    columns: Vec<Vec<f64>>,
    value: f64,
}

impl State {
    fn new(ev: &ConditionalEvaluator, p: &Partition) -> Self {
        let columns = ev.columns(p);
        let value = ev.value_from_columns(&p.coalitions, &columns);
        Self { coalitions: p.coalitions.clone(), columns, value }
    }

    fn coalition_of(&self, user: usize) -> usize {
        self.coalitions.iter().position(|c| c.contains(user)).expect("user is covered")
    }

    fn canonicalize(&mut self) {
        let mut order: Vec<usize> = (0..self.coalitions.len()).collect();
        order.sort_by_key(|&i| self.coalitions[i].members[0]);
        self.coalitions = order.iter().map(|&i| self.coalitions[i].clone()).collect();
        self.columns = order.iter().map(|&i| std::mem::take(&mut self.columns[i])).collect();
    }

    fn partition(&self) -> Partition {
        Partition { coalitions: self.coalitions.clone() }
    }
}

fn clamp_split(ev: &ConditionalEvaluator, m: usize) -> usize {
    let range = ev.params().split_range();
    m.clamp(*range.start(), *range.end())
}

/// Candidate where user `k` leaves its coalition and joins `target`.
fn leave_join(ev: &ConditionalEvaluator, st: &State, k: usize, target: usize) -> Option<State> {
    let m_bs = ev.params().m_bs;
    let r = st.coalition_of(k);
    if r == target || st.coalitions[target].len() != 1 {
        return None;
    }
    let mut next = st.clone();
    let joined = next.coalitions[target].members[0];
    next.coalitions[target] = Coalition::pair(joined, k, m_bs / 2, m_bs - m_bs / 2);
    if next.coalitions[r].len() == 2 {
        let rest = *next.coalitions[r].members.iter().find(|&&m| m != k).expect("pair has another member");
        next.coalitions[r] = Coalition::singleton(rest, m_bs);
        next.columns[r] = ev.column(&next.coalitions[r]);
    } else {
        next.coalitions.remove(r);
        next.columns.remove(r);
    }
    let t = next.coalition_of(k);
    next.value = ev.optimize_split(&mut next.coalitions, &mut next.columns, t);
    next.canonicalize();
    ev.params().improves(next.value, st.value).then_some(next)
}

/// Re-optimizes two pairs after a switch.
fn optimize_two(ev: &ConditionalEvaluator, st: &mut State, a: usize, b: usize) {
    match ev.params().switch_search {
        SwitchSearch::Decomposed => {
            let mut value = ev.value_from_columns(&st.coalitions, &st.columns);
            for _ in 0..MAX_SWITCH_ROUNDS {
                ev.optimize_split(&mut st.coalitions, &mut st.columns, a);
                let v = ev.optimize_split(&mut st.coalitions, &mut st.columns, b);
                let moved = v > value;
                value = value.max(v);
                if !moved {
                    break;
                }
            }
            st.value = value;
        }
        SwitchSearch::Joint => {
            let m_bs = ev.params().m_bs;
            let splits: Vec<usize> = ev.params().split_range().collect();
            let col = |idx: usize, m: usize, st: &State| {
                let mut c = st.coalitions[idx].clone();
                c.set_split(m, m_bs);
                ev.column(&c)
            };
            let cols_a: Vec<Vec<f64>> = splits.iter().map(|&m| col(a, m, st)).collect();
            let cols_b: Vec<Vec<f64>> = splits.iter().map(|&m| col(b, m, st)).collect();
            let mut best = (splits[0], splits[0], f64::NEG_INFINITY);
            for (i, &ma) in splits.iter().enumerate() {
                st.coalitions[a].set_split(ma, m_bs);
                st.columns[a].clone_from(&cols_a[i]);
                for (j, &mb) in splits.iter().enumerate() {
                    st.coalitions[b].set_split(mb, m_bs);
                    st.columns[b].clone_from(&cols_b[j]);
                    let v = ev.value_from_columns(&st.coalitions, &st.columns);
                    if v > best.2 {
                        best = (ma, mb, v);
                    }
                }
            }
            st.coalitions[a].set_split(best.0, m_bs);
            st.coalitions[b].set_split(best.1, m_bs);
            st.columns[a] = ev.column(&st.coalitions[a]);
            st.columns[b] = ev.column(&st.coalitions[b]);
            st.value = best.2;
        }
    }
}

/// Replaces `out` by `inn` in `c`; a pair keeps the remaining member's
/// allocation.
fn substitute(ev: &ConditionalEvaluator, c: &Coalition, out: usize, inn: usize) -> Coalition {
    let m_bs = ev.params().m_bs;
    if c.len() == 1 {
        return Coalition::singleton(inn, m_bs);
    }
    let kept_pos = if c.members[0] == out { 1 } else { 0 };
    let kept = c.members[kept_pos];
    let m_kept = clamp_split(ev, c.antennas[kept_pos]);
    Coalition::pair(kept, inn, m_kept, m_bs - m_kept)
}

/// Best strictly improving switch of `k` with a member of `target`.
fn switch(ev: &ConditionalEvaluator, st: &State, k: usize, target: usize) -> Option<(State, usize)> {
    let r = st.coalition_of(k);
    if r == target || st.coalitions[target].len() != 2 {
        return None;
    }
    let mut best: Option<(State, usize)> = None;
    for &partner in &st.coalitions[target].members {
        let mut next = st.clone();
        next.coalitions[r] = substitute(ev, &st.coalitions[r], k, partner);
        next.coalitions[target] = substitute(ev, &st.coalitions[target], partner, k);
        next.columns[r] = ev.column(&next.coalitions[r]);
        next.columns[target] = ev.column(&next.coalitions[target]);
        if next.coalitions[r].is_pair() {
            optimize_two(ev, &mut next, r, target);
        } else {
            next.value = ev.optimize_split(&mut next.coalitions, &mut next.columns, target);
        }
        if best.as_ref().map_or(true, |b| next.value > b.0.value) {
            best = Some((next, partner));
        }
    }
    let (mut next, partner) = best?;
    next.canonicalize();
    ev.params().improves(next.value, st.value).then_some((next, partner))
}

/// Leave-and-join of user `k` into coalition `target`, if strictly
/// preferred. Returns the new structure and its value.
pub fn try_leave_join(
    ev: &ConditionalEvaluator,
    partition: &Partition,
    k: usize,
    target: usize,
) -> Option<(Partition, f64)> {
    let st = State::new(ev, partition);
    leave_join(ev, &st, k, target).map(|s| (s.partition(), s.value))
}

/// Best strictly preferred switch of user `k` with a member of `target`.
/// Returns the new structure, its value and the switched partner.
pub fn try_switch(
    ev: &ConditionalEvaluator,
    partition: &Partition,
    k: usize,
    target: usize,
) -> Option<(Partition, f64, usize)> {
    let st = State::new(ev, partition);
    switch(ev, &st, k, target).map(|(s, partner)| (s.partition(), s.value, partner))
}

fn try_move(ev: &ConditionalEvaluator, st: &State, k: usize, target: usize) -> Option<(State, Operation)> {
    if st.coalitions[target].len() < 2 {
        let joined = st.coalitions[target].members[0];
        leave_join(ev, st, k, target).map(|s| (s, Operation::LeaveJoin { user: k, joined }))
    } else {
        switch(ev, st, k, target).map(|(s, partner)| (s, Operation::Switch { user: k, partner }))
    }
}

/// Runs the coalition formation game from the all-singleton structure
/// until a full sweep over users accepts no operation.
pub fn coalition_formation(ev: &ConditionalEvaluator) -> Result<FormationOutcome> {
    let k_users = ev.num_users();
    let m_bs = ev.params().m_bs;
    let mut st = State::new(ev, &Partition::singletons(k_users, m_bs));
    let mut trace = vec![TraceEntry { index: 0, op: Operation::Init, coalitions: st.coalitions.len(), value: st.value }];
    let mut operations = 0;
    for sweep in 1..=ev.params().max_sweeps {
        let mut changed = false;
        for k in 0..k_users {
            // Targets are fixed when user k starts its visit and tracked by a
            // representative member, since indices move as coalitions change.
            let reps: Vec<usize> = st
                .coalitions
                .iter()
                .filter(|c| !c.contains(k))
                .map(|c| c.members[0])
                .collect();
            for rep in reps {
                let target = st.coalition_of(rep);
                if target == st.coalition_of(k) {
                    continue;
                }
                if let Some((next, op)) = try_move(ev, &st, k, target) {
                    debug_assert!(next.value > st.value);
                    st = next;
                    operations += 1;
                    changed = true;
                    trace.push(TraceEntry { index: operations, op, coalitions: st.coalitions.len(), value: st.value });
                }
            }
        }
        if !changed {
            return Ok(FormationOutcome { partition: st.partition(), value: st.value, trace, sweeps: sweep, operations });
        }
    }
    Err(Error::NotConverged { sweeps: ev.params().max_sweeps, operations })
}

/// `true` when no leave-and-join or switch operation strictly improves the
/// conditional sum-rate.
pub fn is_stable(ev: &ConditionalEvaluator, partition: &Partition) -> bool {
    let st = State::new(ev, partition);
    (0..ev.num_users()).all(|k| {
        (0..st.coalitions.len())
            .filter(|&t| !st.coalitions[t].contains(k))
            .all(|t| try_move(ev, &st, k, t).is_none())
    })
}

/// Merges singletons until the structure fits on the RF chains, each time
/// taking the merge with the highest resulting conditional sum-rate.
/// Returns the structure, its value and the merges performed.
pub fn fit_to_rf_chains(ev: &ConditionalEvaluator, partition: &Partition) -> (Partition, f64, Vec<Operation>) {
    let m_bs = ev.params().m_bs;
    let mut st = State::new(ev, partition);
    let mut merges = Vec::new();
    while st.coalitions.len() > ev.params().n_rf {
        let singles: Vec<usize> = (0..st.coalitions.len()).filter(|&i| st.coalitions[i].len() == 1).collect();
        let mut best: Option<(State, Operation)> = None;
        for (x, &i) in singles.iter().enumerate() {
            for &j in &singles[x + 1..] {
                let (a, b) = (st.coalitions[i].members[0], st.coalitions[j].members[0]);
                let mut next = st.clone();
                next.coalitions[i] = Coalition::pair(a, b, m_bs / 2, m_bs - m_bs / 2);
                next.coalitions.remove(j);
                next.columns.remove(j);
                next.value = ev.optimize_split(&mut next.coalitions, &mut next.columns, i);
                if best.as_ref().map_or(true, |b| next.value > b.0.value) {
                    best = Some((next, Operation::Merge { a, b }));
                }
            }
        }
        // With K <= 2 N_RF an oversized structure always has two singletons.
        let (mut next, op) = best.expect("at least two singletons when over the RF budget");
        next.canonicalize();
        st = next;
        merges.push(op);
    }
    (st.partition(), st.value, merges)
}
