//! Tapped delay line: a fixed-capacity FIFO of recent signal vectors.
//!
//! Until `capacity` pushes have happened the missing (oldest) slots read as
//! zero vectors. `read` returns the window flattened oldest-to-newest, so a
//! network wired to a delay line always sees a fixed-width view of the last
//! `capacity` samples.

use crate::numeric::tape::{Tape, Var};
use std::collections::VecDeque;

pub const DEFAULT_TDL_CAPACITY: usize = 10;

/// Concrete delay line over plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tdl {
    cap: usize,
    dim: usize,
    buf: VecDeque<Vec<f64>>,
}

impl Tdl {
    pub fn new(cap: usize, dim: usize) -> Self {
        assert!(cap >= 1, "delay line needs capacity >= 1");
        Tdl {
            cap,
            dim,
            buf: VecDeque::with_capacity(cap),
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Append the newest sample, evicting the oldest once full.
    pub fn push(&mut self, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim, "delay line sample width");
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
    }

    /// Flattened contents, oldest to newest, length `cap * dim`; unfilled
    /// leading slots are zero.
    pub fn read(&self) -> Vec<f64> {
        let mut out = vec![0.0; (self.cap - self.buf.len()) * self.dim];
        for v in &self.buf {
            out.extend_from_slice(v);
        }
        out
    }

    /// Entries as stored (no zero padding), oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.buf.iter()
    }
}

/// Delay line whose slots are tape nodes, so gradients flow back into
/// whatever produced the delayed samples.
#[derive(Debug, Clone)]
pub struct TdlVars {
    cap: usize,
    dim: usize,
    buf: VecDeque<Var>,
}

impl TdlVars {
    pub fn new(cap: usize, dim: usize) -> Self {
        TdlVars {
            cap,
            dim,
            buf: VecDeque::with_capacity(cap),
        }
    }

    /// Lift a concrete delay line onto the tape (entries become constants).
    pub fn from_concrete(t: &mut Tape, tdl: &Tdl) -> Self {
        let mut vars = TdlVars::new(tdl.capacity(), tdl.dim());
        for v in tdl.entries() {
            vars.push(t.constant(v));
        }
        vars
    }

    pub fn push(&mut self, v: Var) {
        assert_eq!(v.len(), self.dim, "delay line sample width");
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
    }

    pub fn read(&self, t: &mut Tape) -> Var {
        let mut parts = Vec::with_capacity(self.cap);
        if self.buf.len() < self.cap {
            parts.push(t.zeros((self.cap - self.buf.len()) * self.dim));
        }
        parts.extend(self.buf.iter().copied());
        t.concat(&parts)
    }

    pub fn to_concrete(&self, t: &Tape) -> Tdl {
        let mut out = Tdl::new(self.cap, self.dim);
        for v in &self.buf {
            out.push(t.value(*v).to_vec());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_line_reads_all_zeros() {
        let tdl = Tdl::new(3, 2);
        assert_eq!(tdl.read(), vec![0.0; 6]);
    }

    #[test]
    fn partial_fill_pads_oldest_slots_with_zeros() {
        let mut tdl = Tdl::new(3, 1);
        tdl.push(vec![5.0]);
        assert_eq!(tdl.read(), vec![0.0, 0.0, 5.0]);
    }

    #[test]
    fn saturated_line_keeps_last_capacity_entries_in_order() {
        let cap = 10;
        let mut tdl = Tdl::new(cap, 1);
        for k in 1..=13 {
            tdl.push(vec![k as f64]);
        }
        let expect: Vec<f64> = (4..=13).map(|k| k as f64).collect();
        assert_eq!(tdl.read(), expect);
    }

    #[test]
    fn push_read_matches_tape_version() {
        let mut tdl = Tdl::new(4, 2);
        let mut t = Tape::new();
        let mut vars = TdlVars::new(4, 2);
        for k in 0..6 {
            let v = vec![k as f64, -(k as f64)];
            tdl.push(v.clone());
            let c = t.constant(&v);
            vars.push(c);
        }
        let read = vars.read(&mut t);
        assert_eq!(t.value(read), tdl.read().as_slice());
    }
}
