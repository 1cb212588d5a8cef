//! Define-by-run reverse-mode differentiation over vector operations.
//!
//! Model code builds a [`Tape`] while computing the forward pass; every
//! intermediate is a vector-valued node. [`Tape::backward`] then runs one
//! reverse sweep and accumulates the gradient of a scalar loss with respect
//! to the flat parameter vector. Because the whole unrolled sequence — the
//! initialization network, every recurrent step, the rigid-body motion model
//! inside the hybrid predictor, and the loss — lives on one tape,
//! backpropagation through time needs no per-architecture adjoint code.
//!
//! The op set is the minimum the model equations require. All forward values
//! are checked for finiteness as they are produced; a non-finite value marks
//! the tape as poisoned with the sequence step it occurred at, and
//! `backward` reports that step instead of returning garbage.

use crate::error::{Error, Result};

/// Handle to a tape node. Cheap to copy; only valid for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: u32,
    len: u32,
}

impl Var {
    pub fn len(self) -> usize {
        self.len as usize
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }
}

#[derive(Debug)]
enum Op {
    /// Leaf with no gradient.
    Const,
    /// Leaf bound to `theta[offset .. offset + len]`.
    Param { offset: usize },
    /// `y = W x` with `W` a `rows x cols` node holding row-major data.
    MatVec { w: u32, x: u32, rows: u32, cols: u32 },
    Add(u32, u32),
    Sub(u32, u32),
    /// Hadamard product.
    Mul(u32, u32),
    /// Elementwise quotient.
    Div(u32, u32),
    /// `y = k * a`.
    Scale { a: u32, k: f64 },
    /// Elementwise product with a constant vector.
    CMul { a: u32, w: Vec<f64> },
    /// Elementwise sum with a constant vector (the constant is folded into
    /// the stored value at push time; its adjoint is zero).
    CAdd { a: u32 },
    Tanh(u32),
    Logistic(u32),
    Sin(u32),
    Cos(u32),
    Concat(Vec<u32>),
    Slice { a: u32, start: u32 },
    /// Scalar product, length-1 result.
    Dot(u32, u32),
    /// `y = a . a`, length-1 result.
    SumSq(u32),
    /// Euclidean norm, length-1 result.
    Norm(u32),
    /// Cross product of two 3-vectors.
    Cross(u32, u32),
}

struct Node {
    op: Op,
    val: Vec<f64>,
    /// Sequence-step label active when the node was created; -1 if none.
    step: i32,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    step: i32,
    poisoned: Option<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            step: -1,
            poisoned: None,
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(nodes),
            step: -1,
            poisoned: None,
        }
    }

    /// Label subsequently created nodes with sequence step `k` (used in
    /// overflow diagnostics).
    pub fn set_step(&mut self, k: usize) {
        self.step = k as i32;
    }

    pub fn clear_step(&mut self) {
        self.step = -1;
    }

    /// First sequence step at which a non-finite forward value appeared.
    pub fn poisoned(&self) -> Option<usize> {
        self.poisoned
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.id as usize].val
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(v.len(), 1);
        self.nodes[v.id as usize].val[0]
    }

    fn push(&mut self, op: Op, val: Vec<f64>) -> Var {
        if self.poisoned.is_none() && val.iter().any(|x| !x.is_finite()) {
            self.poisoned = Some(self.step.max(0) as usize);
        }
        let id = self.nodes.len() as u32;
        let len = val.len() as u32;
        self.nodes.push(Node {
            op,
            val,
            step: self.step,
        });
        Var { id, len }
    }

    fn val(&self, id: u32) -> &[f64] {
        &self.nodes[id as usize].val
    }

    // ---- leaves ----

    pub fn constant(&mut self, v: &[f64]) -> Var {
        self.push(Op::Const, v.to_vec())
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.push(Op::Const, vec![x])
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(Op::Const, vec![0.0; len])
    }

    /// Bind `theta[offset .. offset+len]` as a differentiable leaf.
    pub fn param(&mut self, theta: &[f64], offset: usize, len: usize) -> Var {
        self.push(Op::Param { offset }, theta[offset..offset + len].to_vec())
    }

    /// Bind every block of a parameter layout as its own leaf. The result is
    /// indexed by block id, so model code can look weights up directly.
    pub fn bind_params(
        &mut self,
        layout: &super::param::ParamLayout,
        theta: &[f64],
    ) -> Vec<Var> {
        assert_eq!(theta.len(), layout.total(), "theta length vs layout");
        layout
            .blocks()
            .iter()
            .map(|b| self.param(theta, b.offset, b.len()))
            .collect()
    }

    // ---- ops ----

    /// `W x` where `w` holds `rows * cols` row-major entries.
    pub fn matvec(&mut self, w: Var, rows: usize, cols: usize, x: Var) -> Var {
        assert_eq!(w.len(), rows * cols, "matvec: weight node length");
        assert_eq!(x.len(), cols, "matvec: input length");
        let y = super::matvec_raw(self.val(w.id), rows, cols, self.val(x.id));
        self.push(
            Op::MatVec {
                w: w.id,
                x: x.id,
                rows: rows as u32,
                cols: cols as u32,
            },
            y,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.len(), b.len(), "add: length mismatch");
        let v = zip_with(self.val(a.id), self.val(b.id), |x, y| x + y);
        self.push(Op::Add(a.id, b.id), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.len(), b.len(), "sub: length mismatch");
        let v = zip_with(self.val(a.id), self.val(b.id), |x, y| x - y);
        self.push(Op::Sub(a.id, b.id), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.len(), b.len(), "mul: length mismatch");
        let v = zip_with(self.val(a.id), self.val(b.id), |x, y| x * y);
        self.push(Op::Mul(a.id, b.id), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.len(), b.len(), "div: length mismatch");
        let v = zip_with(self.val(a.id), self.val(b.id), |x, y| x / y);
        self.push(Op::Div(a.id, b.id), v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.val(a.id).iter().map(|x| k * x).collect();
        self.push(Op::Scale { a: a.id, k }, v)
    }

    /// Elementwise product with a constant vector (diagonal matrices,
    /// dropout masks, per-channel gains).
    pub fn cmul(&mut self, a: Var, w: &[f64]) -> Var {
        assert_eq!(a.len(), w.len(), "cmul: length mismatch");
        let v = zip_with(self.val(a.id), w, |x, y| x * y);
        self.push(
            Op::CMul {
                a: a.id,
                w: w.to_vec(),
            },
            v,
        )
    }

    /// Elementwise sum with a constant vector.
    pub fn cadd(&mut self, a: Var, c: &[f64]) -> Var {
        assert_eq!(a.len(), c.len(), "cadd: length mismatch");
        let v = zip_with(self.val(a.id), c, |x, y| x + y);
        self.push(
            Op::CAdd { a: a.id },
            v,
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.val(a.id).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a.id), v)
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        let v = self.val(a.id).iter().map(|&x| super::logistic(x)).collect();
        self.push(Op::Logistic(a.id), v)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.val(a.id).iter().map(|x| x.sin()).collect();
        self.push(Op::Sin(a.id), v)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.val(a.id).iter().map(|x| x.cos()).collect();
        self.push(Op::Cos(a.id), v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            v.extend_from_slice(self.val(p.id));
        }
        self.push(Op::Concat(parts.iter().map(|p| p.id).collect()), v)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= a.len(), "slice: out of range");
        let v = self.val(a.id)[start..start + len].to_vec();
        self.push(
            Op::Slice {
                a: a.id,
                start: start as u32,
            },
            v,
        )
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let s = self
            .val(a.id)
            .iter()
            .zip(self.val(b.id))
            .map(|(x, y)| x * y)
            .sum();
        self.push(Op::Dot(a.id, b.id), vec![s])
    }

    pub fn sumsq(&mut self, a: Var) -> Var {
        let s = self.val(a.id).iter().map(|x| x * x).sum();
        self.push(Op::SumSq(a.id), vec![s])
    }

    /// Euclidean norm. Gradient at the origin is taken as zero.
    pub fn norm(&mut self, a: Var) -> Var {
        let s = super::norm2(self.val(a.id));
        self.push(Op::Norm(a.id), vec![s])
    }

    pub fn cross(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(a.len(), 3, "cross: 3-vectors only");
        assert_eq!(b.len(), 3, "cross: 3-vectors only");
        let v = cross3(self.val(a.id), self.val(b.id));
        self.push(Op::Cross(a.id, b.id), v.to_vec())
    }

    /// Sum an arbitrary set of equal-length vars (loop of adds).
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum: empty");
        let mut acc = parts[0];
        for p in &parts[1..] {
            acc = self.add(acc, *p);
        }
        acc
    }

    // ---- reverse sweep ----

    /// Gradient of the scalar `loss` with respect to the parameter vector
    /// the `param` leaves were bound to (`theta_len` entries).
    pub fn backward(&self, loss: Var, theta_len: usize) -> Result<Vec<f64>> {
        if let Some(step) = self.poisoned {
            return Err(Error::GradOverflow { step });
        }
        assert_eq!(loss.len(), 1, "backward: loss must be scalar");

        let n = loss.id as usize + 1;
        let mut adj: Vec<Vec<f64>> = self.nodes[..n]
            .iter()
            .map(|node| vec![0.0; node.val.len()])
            .collect();
        adj[loss.id as usize][0] = 1.0;
        let mut dtheta = vec![0.0; theta_len];

        for id in (0..n).rev() {
            if adj[id].iter().all(|&x| x == 0.0) {
                continue;
            }
            // Split borrows: take this node's adjoint out, push into inputs.
            let a_out = std::mem::take(&mut adj[id]);
            let node = &self.nodes[id];
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    let d = &mut dtheta[*offset..*offset + a_out.len()];
                    for (di, ai) in d.iter_mut().zip(&a_out) {
                        *di += ai;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (rows, cols) = (*rows as usize, *cols as usize);
                    let wv = &self.nodes[*w as usize].val;
                    let xv = &self.nodes[*x as usize].val;
                    {
                        let ax = &mut adj[*x as usize];
                        for i in 0..rows {
                            let row = &wv[i * cols..(i + 1) * cols];
                            let ai = a_out[i];
                            if ai != 0.0 {
                                for (axj, wij) in ax.iter_mut().zip(row) {
                                    *axj += ai * wij;
                                }
                            }
                        }
                    }
                    {
                        let aw = &mut adj[*w as usize];
                        for i in 0..rows {
                            let ai = a_out[i];
                            if ai != 0.0 {
                                let dst = &mut aw[i * cols..(i + 1) * cols];
                                for (dj, xj) in dst.iter_mut().zip(xv) {
                                    *dj += ai * xj;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[*a as usize], &a_out, 1.0);
                    accumulate(&mut adj[*b as usize], &a_out, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[*a as usize], &a_out, 1.0);
                    accumulate(&mut adj[*b as usize], &a_out, -1.0);
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[*b as usize].val.clone();
                    let av = self.nodes[*a as usize].val.clone();
                    accumulate_prod(&mut adj[*a as usize], &a_out, &bv);
                    accumulate_prod(&mut adj[*b as usize], &a_out, &av);
                }
                Op::Div(a, b) => {
                    let av = self.nodes[*a as usize].val.clone();
                    let bv = self.nodes[*b as usize].val.clone();
                    {
                        let aa = &mut adj[*a as usize];
                        for i in 0..a_out.len() {
                            aa[i] += a_out[i] / bv[i];
                        }
                    }
                    {
                        let ab = &mut adj[*b as usize];
                        for i in 0..a_out.len() {
                            ab[i] -= a_out[i] * av[i] / (bv[i] * bv[i]);
                        }
                    }
                }
                Op::Scale { a, k } => accumulate(&mut adj[*a as usize], &a_out, *k),
                Op::CMul { a, w } => accumulate_prod(&mut adj[*a as usize], &a_out, w),
                Op::CAdd { a } => accumulate(&mut adj[*a as usize], &a_out, 1.0),
                Op::Tanh(a) => {
                    let y = node.val.clone();
                    let aa = &mut adj[*a as usize];
                    for i in 0..a_out.len() {
                        aa[i] += a_out[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Logistic(a) => {
                    let y = node.val.clone();
                    let aa = &mut adj[*a as usize];
                    for i in 0..a_out.len() {
                        aa[i] += a_out[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Sin(a) => {
                    let xv = self.nodes[*a as usize].val.clone();
                    let aa = &mut adj[*a as usize];
                    for i in 0..a_out.len() {
                        aa[i] += a_out[i] * xv[i].cos();
                    }
                }
                Op::Cos(a) => {
                    let xv = self.nodes[*a as usize].val.clone();
                    let aa = &mut adj[*a as usize];
                    for i in 0..a_out.len() {
                        aa[i] -= a_out[i] * xv[i].sin();
                    }
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let len = self.nodes[*p as usize].val.len();
                        accumulate(&mut adj[*p as usize], &a_out[at..at + len], 1.0);
                        at += len;
                    }
                }
                Op::Slice { a, start } => {
                    let s = *start as usize;
                    let aa = &mut adj[*a as usize];
                    for i in 0..a_out.len() {
                        aa[s + i] += a_out[i];
                    }
                }
                Op::Dot(a, b) => {
                    let g = a_out[0];
                    let bv = self.nodes[*b as usize].val.clone();
                    let av = self.nodes[*a as usize].val.clone();
                    accumulate(&mut adj[*a as usize], &bv, g);
                    accumulate(&mut adj[*b as usize], &av, g);
                }
                Op::SumSq(a) => {
                    let g = 2.0 * a_out[0];
                    let av = self.nodes[*a as usize].val.clone();
                    accumulate(&mut adj[*a as usize], &av, g);
                }
                Op::Norm(a) => {
                    let r = node.val[0];
                    if r > 0.0 {
                        let g = a_out[0] / r;
                        let av = self.nodes[*a as usize].val.clone();
                        accumulate(&mut adj[*a as usize], &av, g);
                    }
                }
                Op::Cross(a, b) => {
                    let av: [f64; 3] = self.nodes[*a as usize].val[..3].try_into().unwrap();
                    let bv: [f64; 3] = self.nodes[*b as usize].val[..3].try_into().unwrap();
                    let co: [f64; 3] = a_out[..3].try_into().unwrap();
                    // c = a x b  =>  a_bar += b x c_bar, b_bar += c_bar x a
                    let da = cross3(&bv, &co);
                    let db = cross3(&co, &av);
                    accumulate(&mut adj[*a as usize], &da, 1.0);
                    accumulate(&mut adj[*b as usize], &db, 1.0);
                }
            }
        }

        if dtheta.iter().any(|x| !x.is_finite()) {
            // Walk back from the most recently created node to name the step
            // where the overflow entered (rare diagnostic path; adjoints were
            // consumed above, so recompute cheaply by rerunning the check on
            // dtheta alone is not possible — report the loss node's step).
            let step = self.nodes[loss.id as usize].step.max(0) as usize;
            return Err(Error::GradOverflow { step });
        }
        Ok(dtheta)
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn accumulate(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn accumulate_prod(dst: &mut [f64], a: &[f64], b: &[f64]) {
    for i in 0..dst.len() {
        dst[i] += a[i] * b[i];
    }
}

fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::fdiff::{finite_diff_grad, max_rel_err};

    #[test]
    fn quadratic_gradient_is_two_theta() {
        let theta = vec![0.3, -1.2, 0.05, 2.0];
        let mut t = Tape::new();
        let p = t.param(&theta, 0, 4);
        let loss = t.sumsq(p);
        let g = t.backward(loss, 4).unwrap();
        let expect: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        assert_eq!(g, expect);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let theta = vec![1.0, 2.0];
        let mut t = Tape::new();
        let _p = t.param(&theta, 0, 2);
        let c = t.scalar(5.0);
        let loss = t.sumsq(c);
        let g = t.backward(loss, 2).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    /// A composition exercising every op, differentiated against central
    /// finite differences.
    fn omnibus_loss(theta: &[f64]) -> f64 {
        let mut t = Tape::new();
        let w = t.param(theta, 0, 6); // 2x3 matrix
        let b = t.param(theta, 6, 2);
        let u = t.param(theta, 8, 3);
        let v3a = t.param(theta, 11, 3);
        let v3b = t.param(theta, 14, 3);

        let wx = t.matvec(w, 2, 3, u);
        let pre = t.add(wx, b);
        let h = t.tanh(pre);
        let g = t.logistic(pre);
        let hg = t.mul(h, g);
        let sc = t.scale(hg, 1.7);
        let shifted = t.cadd(sc, &[0.1, -0.2]);
        let gains = t.cmul(shifted, &[2.0, 0.5]);

        let s = t.sin(v3a);
        let c = t.cos(v3b);
        let q = t.div(s, c);
        let x = t.cross(v3a, q);

        let joined = t.concat(&[gains, x]);
        let head = t.slice(joined, 1, 3);
        let d = t.dot(head, v3b);
        let n = t.norm(joined);
        let ss = t.sumsq(head);
        let lsum = t.sum(&[d, n, ss]);
        let diff = t.sub(lsum, d);
        t.scalar_value(diff);
        t.scalar_value(lsum);
        let total = t.add(lsum, diff);
        t.scalar_value(total)
    }

    #[test]
    fn omnibus_composition_matches_finite_differences() {
        let theta: Vec<f64> = (0..17).map(|i| ((i * 7 % 11) as f64) * 0.02 - 0.08).collect();
        let mut t = Tape::new();
        let w = t.param(&theta, 0, 6);
        let b = t.param(&theta, 6, 2);
        let u = t.param(&theta, 8, 3);
        let v3a = t.param(&theta, 11, 3);
        let v3b = t.param(&theta, 14, 3);
        let wx = t.matvec(w, 2, 3, u);
        let pre = t.add(wx, b);
        let h = t.tanh(pre);
        let g = t.logistic(pre);
        let hg = t.mul(h, g);
        let sc = t.scale(hg, 1.7);
        let shifted = t.cadd(sc, &[0.1, -0.2]);
        let gains = t.cmul(shifted, &[2.0, 0.5]);
        let s = t.sin(v3a);
        let c = t.cos(v3b);
        let q = t.div(s, c);
        let x = t.cross(v3a, q);
        let joined = t.concat(&[gains, x]);
        let head = t.slice(joined, 1, 3);
        let d = t.dot(head, v3b);
        let n = t.norm(joined);
        let ss = t.sumsq(head);
        let lsum = t.sum(&[d, n, ss]);
        let diff = t.sub(lsum, d);
        let total = t.add(lsum, diff);

        let analytic = t.backward(total, theta.len()).unwrap();
        let numeric =
            finite_diff_grad(&mut |th| Ok(omnibus_loss(th)), &theta, 1e-6).unwrap();
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn division_by_zero_poisons_the_tape() {
        let theta = vec![1.0];
        let mut t = Tape::new();
        t.set_step(3);
        let p = t.param(&theta, 0, 1);
        let z = t.scalar(0.0);
        let q = t.div(p, z);
        let loss = t.sumsq(q);
        match t.backward(loss, 1) {
            Err(Error::GradOverflow { step }) => assert_eq!(step, 3),
            other => panic!("expected gradient overflow, got {other:?}"),
        }
    }

    #[test]
    fn norm_gradient_at_origin_is_zero() {
        let theta = vec![0.0, 0.0];
        let mut t = Tape::new();
        let p = t.param(&theta, 0, 2);
        let loss = t.norm(p);
        let g = t.backward(loss, 2).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }
}
