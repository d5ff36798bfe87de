//! Reverse-mode automatic differentiation over tensor-valued nodes.
//!
//! A `Tape` records one forward computation as an append-only list of nodes;
//! parents always precede children, so the reverse sweep is a single pass
//! from the loss node down to the leaves. Each op captures the `Rc` values it
//! needs and returns per-parent gradients from a boxed closure.
//!
//! Leaves are either constants (no gradient tracked) or parameters
//! (`leaf_param`). `backward` seeds the scalar root with 1 and accumulates
//! into every node that requires a gradient; accumulation order is the fixed
//! node order, so results are bit-deterministic.

use crate::tensor::Tensor;
use std::cell::RefCell;
use std::rc::Rc;

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.idx].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Constant input: no gradient is ever tracked for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let idx = self.push(Node {
            value: Rc::new(value),
            parents: vec![],
            requires_grad: false,
            backward: None,
        });
        Var { tape: self, idx }
    }

    /// Trainable leaf: gradients accumulate here during `backward`.
    pub fn leaf_param(&self, value: Tensor) -> Var<'_> {
        let idx = self.push(Node {
            value: Rc::new(value),
            parents: vec![],
            requires_grad: true,
            backward: None,
        });
        Var { tape: self, idx }
    }

    /// Record an op node. `backward` receives the upstream gradient and must
    /// return one `Option<Tensor>` per parent, in order; entries for parents
    /// that do not require gradients are ignored.
    pub fn custom_op(
        &self,
        parents: &[Var<'_>],
        value: Tensor,
        backward: BackwardFn,
    ) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.idx].requires_grad)
        };
        let idx = self.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.idx).collect(),
            requires_grad,
            backward: if requires_grad { Some(backward) } else { None },
        });
        Var { tape: self, idx }
    }

    pub fn parent_requires_grad(&self, v: Var<'_>) -> bool {
        self.nodes.borrow()[v.idx].requires_grad
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.idx].value.numel(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.idx] = Some(Tensor::from_vec(
            nodes[root.idx].value.shape(),
            vec![1.0],
        ));
        for idx in (0..=root.idx).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].as_ref() else {
                continue;
            };
            let parent_grads = backward(grad);
            assert_eq!(parent_grads.len(), node.parents.len());
            for (slot, pg) in parent_grads.into_iter().enumerate() {
                let pidx = node.parents[slot];
                if !nodes[pidx].requires_grad {
                    continue;
                }
                let Some(pg) = pg else { continue };
                assert_eq!(
                    pg.shape(),
                    nodes[pidx].value.shape(),
                    "gradient shape mismatch feeding node {}",
                    pidx
                );
                match grads[pidx].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[pidx] = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].requires_grad
    }

    fn needs(&self) -> bool {
        self.requires_grad()
    }

    fn unary(
        self,
        out: Tensor,
        back: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        self.tape
            .custom_op(&[self], out, Box::new(move |g| vec![Some(back(g))]))
    }

    // ---- elementwise binary ----

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
        );
        self.tape.custom_op(
            &[self, rhs],
            out,
            Box::new(move |g| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "sub shape mismatch");
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
        );
        self.tape.custom_op(
            &[self, rhs],
            out,
            Box::new(move |g| {
                let neg = Tensor::from_vec(g.shape(), g.data().iter().map(|v| -v).collect());
                vec![Some(g.clone()), Some(neg)]
            }),
        )
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
        );
        let (na, nb) = (self.needs(), rhs.needs());
        let (ac, bc) = (a.clone(), b.clone());
        self.tape.custom_op(
            &[self, rhs],
            out,
            Box::new(move |g| {
                let ga = na.then(|| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(bc.data()).map(|(g, y)| g * y).collect(),
                    )
                });
                let gb = nb.then(|| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(ac.data()).map(|(g, x)| g * x).collect(),
                    )
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn div(self, rhs: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "div shape mismatch");
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| x / y).collect(),
        );
        let (na, nb) = (self.needs(), rhs.needs());
        let (ac, bc) = (a.clone(), b.clone());
        self.tape.custom_op(
            &[self, rhs],
            out,
            Box::new(move |g| {
                let ga = na.then(|| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(bc.data()).map(|(g, y)| g / y).collect(),
                    )
                });
                let gb = nb.then(|| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .zip(ac.data().iter().zip(bc.data()))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    )
                });
                vec![ga, gb]
            }),
        )
    }

    // ---- elementwise unary ----

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(a.shape(), a.data().iter().map(|x| c * x).collect());
        self.unary(out, move |g| {
            Tensor::from_vec(g.shape(), g.data().iter().map(|v| c * v).collect())
        })
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(a.shape(), a.data().iter().map(|x| x + c).collect());
        self.unary(out, |g| g.clone())
    }

    pub fn exp(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(a.shape(), a.data().iter().map(|x| x.exp()).collect());
        let oc = out.clone();
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data().iter().zip(oc.data()).map(|(g, y)| g * y).collect(),
            )
        })
    }

    pub fn ln(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(a.shape(), a.data().iter().map(|x| x.ln()).collect());
        let ac = a.clone();
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data().iter().zip(ac.data()).map(|(g, x)| g / x).collect(),
            )
        })
    }

    pub fn sqrt(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(a.shape(), a.data().iter().map(|x| x.sqrt()).collect());
        let oc = out.clone();
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data()
                    .iter()
                    .zip(oc.data())
                    .map(|(g, y)| g / (2.0 * y))
                    .collect(),
            )
        })
    }

    pub fn abs(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(a.shape(), a.data().iter().map(|x| x.abs()).collect());
        let ac = a.clone();
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data()
                    .iter()
                    .zip(ac.data())
                    .map(|(g, x)| g * x.signum() * if *x == 0.0 { 0.0 } else { 1.0 })
                    .collect(),
            )
        })
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(
            a.shape(),
            a.data()
                .iter()
                .map(|&x| if x > 0.0 { x } else { slope * x })
                .collect(),
        );
        let ac = a.clone();
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data()
                    .iter()
                    .zip(ac.data())
                    .map(|(g, &x)| g * if x > 0.0 { 1.0 } else { slope })
                    .collect(),
            )
        })
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
        );
        let oc = out.clone();
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data()
                    .iter()
                    .zip(oc.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect(),
            )
        })
    }

    /// Clamp to [lo, hi]; gradient is passed through strictly inside the
    /// interval and blocked elsewhere.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().map(|x| x.clamp(lo, hi)).collect(),
        );
        let ac = a.clone();
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data()
                    .iter()
                    .zip(ac.data())
                    .map(|(g, &x)| if x > lo && x < hi { *g } else { 0.0 })
                    .collect(),
            )
        })
    }

    // ---- reductions ----

    pub fn sum(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor::scalar(a.data().iter().sum());
        let shape = a.shape().to_vec();
        self.unary(out, move |g| Tensor::full(&shape, g.item()))
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let n = a.numel() as f64;
        let out = Tensor::scalar(a.data().iter().sum::<f64>() / n);
        let shape = a.shape().to_vec();
        self.unary(out, move |g| Tensor::full(&shape, g.item() / n))
    }

    pub fn dot(self, rhs: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.numel(), b.numel(), "dot length mismatch");
        let out = Tensor::scalar(
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum(),
        );
        let (na, nb) = (self.needs(), rhs.needs());
        let (ac, bc) = (a.clone(), b.clone());
        self.tape.custom_op(
            &[self, rhs],
            out,
            Box::new(move |g| {
                let s = g.item();
                let ga = na.then(|| {
                    Tensor::from_vec(bc.shape(), bc.data().iter().map(|y| s * y).collect())
                });
                let gb = nb.then(|| {
                    Tensor::from_vec(ac.shape(), ac.data().iter().map(|x| s * x).collect())
                });
                vec![ga, gb]
            }),
        )
    }

    // ---- shape ----

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let a = self.value();
        let out = a.as_ref().clone().reshaped(shape);
        let old = a.shape().to_vec();
        self.unary(out, move |g| g.clone().reshaped(&old))
    }

    /// Rows [lo, hi) of a 2-D tensor.
    pub fn slice_rows(self, lo: usize, hi: usize) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape().len(), 2);
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        assert!(lo <= hi && hi <= rows);
        let out = Tensor::from_vec(
            &[hi - lo, cols],
            a.data()[lo * cols..hi * cols].to_vec(),
        );
        self.unary(out, move |g| {
            let mut full = Tensor::zeros(&[rows, cols]);
            full.data_mut()[lo * cols..hi * cols].copy_from_slice(g.data());
            full
        })
    }

    /// Columns picked by `idx` (may repeat or reorder) from a 2-D tensor.
    pub fn select_cols(self, idx: &[usize]) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape().len(), 2);
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let idx = idx.to_vec();
        assert!(idx.iter().all(|&i| i < cols));
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            for &c in &idx {
                data.push(a.data()[r * cols + c]);
            }
        }
        let out = Tensor::from_vec(&[rows, idx.len()], data);
        self.unary(out, move |g| {
            let mut full = Tensor::zeros(&[rows, cols]);
            for r in 0..rows {
                for (j, &c) in idx.iter().enumerate() {
                    full.data_mut()[r * cols + c] += g.data()[r * idx.len() + j];
                }
            }
            full
        })
    }

    /// Elements [lo, hi) of a 1-D tensor.
    pub fn slice(self, lo: usize, hi: usize) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape().len(), 1);
        let n = a.shape()[0];
        assert!(lo <= hi && hi <= n);
        let out = Tensor::from_vec(&[hi - lo], a.data()[lo..hi].to_vec());
        self.unary(out, move |g| {
            let mut full = Tensor::zeros(&[n]);
            full.data_mut()[lo..hi].copy_from_slice(g.data());
            full
        })
    }

    /// Per-column affine map with constant coefficients: y[:,i] = x[:,i]*s[i] + o[i].
    pub fn affine_cols(self, scale: &[f64], offset: &[f64]) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape().len(), 2);
        let cols = a.shape()[1];
        assert_eq!(scale.len(), cols);
        assert_eq!(offset.len(), cols);
        let s = scale.to_vec();
        let o = offset.to_vec();
        let out = Tensor::from_vec(
            a.shape(),
            a.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x * s[i % cols] + o[i % cols])
                .collect(),
        );
        self.unary(out, move |g| {
            Tensor::from_vec(
                g.shape(),
                g.data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * s[i % cols])
                    .collect(),
            )
        })
    }

    /// Multiply each row of a [B, n] tensor by a length-n vector.
    pub fn mul_row_broadcast(self, v: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = v.value();
        assert_eq!(a.shape().len(), 2);
        assert_eq!(b.numel(), a.shape()[1], "broadcast length mismatch");
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let out = Tensor::from_vec(
            a.shape(),
            a.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x * b.data()[i % cols])
                .collect(),
        );
        let (na, nb) = (self.needs(), v.needs());
        let (ac, bc) = (a.clone(), b.clone());
        self.tape.custom_op(
            &[self, v],
            out,
            Box::new(move |g| {
                let ga = na.then(|| {
                    Tensor::from_vec(
                        g.shape(),
                        g.data()
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * bc.data()[i % cols])
                            .collect(),
                    )
                });
                let gb = nb.then(|| {
                    let mut acc = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            acc[c] += g.data()[r * cols + c] * ac.data()[r * cols + c];
                        }
                    }
                    Tensor::from_vec(bc.shape(), acc)
                });
                vec![ga, gb]
            }),
        )
    }

    /// Normalize each row of a [B, n] tensor to unit L2 norm.
    /// Caller must reject near-zero rows beforehand.
    pub fn l2_normalize_rows(self) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.shape().len(), 2);
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let mut out = Tensor::zeros(a.shape());
        let mut norms = vec![0.0; rows];
        for r in 0..rows {
            let row = &a.data()[r * cols..(r + 1) * cols];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms[r] = n;
            for c in 0..cols {
                out.data_mut()[r * cols + c] = row[c] / n;
            }
        }
        let oc = out.clone();
        self.unary(out, move |g| {
            let mut gx = Tensor::zeros(&[rows, cols]);
            for r in 0..rows {
                let y = &oc.data()[r * cols..(r + 1) * cols];
                let gr = &g.data()[r * cols..(r + 1) * cols];
                let gy: f64 = gr.iter().zip(y).map(|(g, y)| g * y).sum();
                for c in 0..cols {
                    gx.data_mut()[r * cols + c] = (gr[c] - gy * y[c]) / norms[r];
                }
            }
            gx
        })
    }

    // ---- dense layers ----

    /// y = x Wᵀ + b with x: [B, n], w: [m, n], b: [m] -> [B, m].
    pub fn linear(self, w: Var<'t>, b: Var<'t>) -> Var<'t> {
        let x = self.value();
        let wv = w.value();
        let bv = b.value();
        assert_eq!(x.shape().len(), 2);
        assert_eq!(wv.shape().len(), 2);
        let (rows, n) = (x.shape()[0], x.shape()[1]);
        let (m, wn) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(n, wn, "linear: input dim {} vs weight dim {}", n, wn);
        assert_eq!(bv.numel(), m);
        let mut out = Tensor::zeros(&[rows, m]);
        for r in 0..rows {
            let xr = &x.data()[r * n..(r + 1) * n];
            let or = &mut out.data_mut()[r * m..(r + 1) * m];
            or.copy_from_slice(bv.data());
            for (j, o) in or.iter_mut().enumerate() {
                let wr = &wv.data()[j * n..(j + 1) * n];
                let mut acc = 0.0;
                for i in 0..n {
                    acc += xr[i] * wr[i];
                }
                *o += acc;
            }
        }
        let (nx, nw, nb) = (self.needs(), w.needs(), b.needs());
        let (xc, wc) = (x.clone(), wv.clone());
        self.tape.custom_op(
            &[self, w, b],
            out,
            Box::new(move |g| {
                let gx = nx.then(|| {
                    let mut gx = Tensor::zeros(&[rows, n]);
                    for r in 0..rows {
                        let gr = &g.data()[r * m..(r + 1) * m];
                        let xr = &mut gx.data_mut()[r * n..(r + 1) * n];
                        for j in 0..m {
                            let wr = &wc.data()[j * n..(j + 1) * n];
                            let gj = gr[j];
                            for i in 0..n {
                                xr[i] += gj * wr[i];
                            }
                        }
                    }
                    gx
                });
                let gw = nw.then(|| {
                    let mut gw = Tensor::zeros(&[m, n]);
                    for r in 0..rows {
                        let gr = &g.data()[r * m..(r + 1) * m];
                        let xr = &xc.data()[r * n..(r + 1) * n];
                        for j in 0..m {
                            let gj = gr[j];
                            let wr = &mut gw.data_mut()[j * n..(j + 1) * n];
                            for i in 0..n {
                                wr[i] += gj * xr[i];
                            }
                        }
                    }
                    gw
                });
                let gb = nb.then(|| {
                    let mut gb = vec![0.0; m];
                    for r in 0..rows {
                        for j in 0..m {
                            gb[j] += g.data()[r * m + j];
                        }
                    }
                    Tensor::from_vec(&[m], gb)
                });
                vec![gx, gw, gb]
            }),
        )
    }
}

/// Concatenate 1-D tensors.
pub fn concat<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty());
    let tape = parts[0].tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let mut data = Vec::new();
    let mut lens = Vec::new();
    for v in &values {
        assert_eq!(v.shape().len(), 1);
        lens.push(v.numel());
        data.extend_from_slice(v.data());
    }
    let out = Tensor::from_vec(&[data.len()], data);
    tape.custom_op(
        parts,
        out,
        Box::new(move |g| {
            let mut off = 0;
            lens.iter()
                .map(|&n| {
                    let t = Tensor::from_vec(&[n], g.data()[off..off + n].to_vec());
                    off += n;
                    Some(t)
                })
                .collect()
        }),
    )
}

/// Stack 2-D tensors with equal column counts along the row axis.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty());
    let tape = parts[0].tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let cols = values[0].shape()[1];
    let mut data = Vec::new();
    let mut row_counts = Vec::new();
    for v in &values {
        assert_eq!(v.shape().len(), 2);
        assert_eq!(v.shape()[1], cols, "concat_rows column mismatch");
        row_counts.push(v.shape()[0]);
        data.extend_from_slice(v.data());
    }
    let total: usize = row_counts.iter().sum();
    let out = Tensor::from_vec(&[total, cols], data);
    tape.custom_op(
        parts,
        out,
        Box::new(move |g| {
            let mut off = 0;
            row_counts
                .iter()
                .map(|&r| {
                    let t = Tensor::from_vec(&[r, cols], g.data()[off..off + r * cols].to_vec());
                    off += r * cols;
                    Some(t)
                })
                .collect()
        }),
    )
}

/// Concatenate 2-D tensors with equal row counts along the column axis.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty());
    let tape = parts[0].tape;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let rows = values[0].shape()[0];
    let widths: Vec<usize> = values
        .iter()
        .map(|v| {
            assert_eq!(v.shape().len(), 2);
            assert_eq!(v.shape()[0], rows);
            v.shape()[1]
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut out = Tensor::zeros(&[rows, total]);
    for r in 0..rows {
        let mut off = 0;
        for (v, &w) in values.iter().zip(&widths) {
            out.data_mut()[r * total + off..r * total + off + w]
                .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            off += w;
        }
    }
    tape.custom_op(
        parts,
        out,
        Box::new(move |g| {
            let mut grads: Vec<Option<Tensor>> = widths
                .iter()
                .map(|&w| Some(Tensor::zeros(&[rows, w])))
                .collect();
            for r in 0..rows {
                let mut off = 0;
                for (gi, &w) in grads.iter_mut().zip(&widths) {
                    let t = gi.as_mut().unwrap();
                    t.data_mut()[r * w..(r + 1) * w]
                        .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                    off += w;
                }
            }
            grads
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar<'t>(tape: &'t Tape, v: f64) -> Var<'t> {
        tape.leaf_param(Tensor::scalar(v))
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let tape = Tape::new();
        let x = tape.leaf_param(Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]));
        let loss = x.square().sum().scale(0.5);
        assert_eq!(loss.value().item(), 0.5 * (1.0 + 4.0 + 9.0));
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = scalar(&tape, 3.0);
        let b = scalar(&tape, -4.0);
        let loss = a.mul(b).sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap().item(), -4.0);
        assert_eq!(grads.get(b).unwrap().item(), 3.0);
    }

    #[test]
    fn constants_get_no_gradients() {
        let tape = Tape::new();
        let a = scalar(&tape, 2.0);
        let c = tape.constant(Tensor::scalar(5.0));
        let loss = a.mul(c).sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap().item(), 5.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = scalar(&tape, 2.0);
        // f = x*x + 3x -> f' = 2x + 3 = 7
        let loss = x.mul(x).add(x.scale(3.0)).sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn linear_matches_manual_matmul() {
        let tape = Tape::new();
        let x = tape.leaf_param(Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let w = tape.leaf_param(Tensor::from_vec(&[2, 3], vec![1., 0., -1., 2., 1., 0.]));
        let b = tape.leaf_param(Tensor::from_vec(&[2], vec![0.5, -0.5]));
        let y = x.linear(w, b);
        // row0: [1-3+0.5, 2+2-0.5] = [-1.5, 3.5]; row1: [4-6+0.5, 8+5-0.5] = [-1.5, 12.5]
        assert_eq!(y.value().data(), &[-1.5, 3.5, -1.5, 12.5]);
        let loss = y.sum();
        let grads = tape.backward(loss);
        // dW = sum over rows of x
        assert_eq!(grads.get(w).unwrap().data(), &[5., 7., 9., 5., 7., 9.]);
        assert_eq!(grads.get(b).unwrap().data(), &[2., 2.]);
    }

    #[test]
    fn concat_routes_gradients() {
        let tape = Tape::new();
        let a = tape.leaf_param(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let b = tape.leaf_param(Tensor::from_vec(&[1], vec![3.0]));
        let c = concat(&[a, b]);
        let loss = c.mul(tape.constant(Tensor::from_vec(&[3], vec![1.0, 10.0, 100.0]))).sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 10.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[100.0]);
    }

    #[test]
    fn normalize_rows_is_unit_norm() {
        let tape = Tape::new();
        let q = tape.leaf_param(Tensor::from_vec(&[1, 4], vec![1.0, 1.0, 1.0, 1.0]));
        let n = q.l2_normalize_rows();
        let v = n.value();
        let norm: f64 = v.data().iter().map(|x| x * x).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
