//! Define-by-run reverse-mode tape over [`Tensor`] values.
//!
//! Every op computes its value eagerly when recorded and stores enough to
//! replay a VJP in reverse. Losses are built by inserting ops into a fresh
//! `Graph` per step; `backward` then fills the `grad` buffer of every
//! registered parameter (zeros for parameters the loss never touched).

use indexmap::IndexMap;

use super::kernels;
use super::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k] @ [k,n]
    MatMul(Var, Var),
    /// [m,k] @ [n,k]^T
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// [m,n] + broadcast [n]
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    /// [m,p] ++ [m,q] -> [m,p+q]
    ConcatCols(Var, Var),
    /// rows projected to the radius-sqrt(d) hypersphere
    SphereRows(Var),
    /// per-row inner product: [m,d],[m,d] -> [m,1]
    RowDot(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    /// mean of the off-diagonal entries of a square matrix
    OffdiagMean(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Reverse-mode computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: IndexMap<String, usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Insert a value the tape treats as constant (no gradient flows to it).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Register a named parameter leaf. Registering the same name again
    /// returns the original node, so shared weights accumulate gradients
    /// across all their uses.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&idx) = self.params.get(name) {
            return Var(idx);
        }
        let v = self.push(Op::Leaf, t.clone());
        self.params.insert(name.to_string(), v.0);
        v
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        (self.value(v).rows(), self.value(v).cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 {
            return Err(Error::Shape {
                context: "matmul".into(),
                detail: format!("[{m}x{k}] @ [{k2}x{n}]"),
            });
        }
        let c = kernels::matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, c)?))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        if k != k2 {
            return Err(Error::Shape {
                context: "matmul_nt".into(),
                detail: format!("[{m}x{k}] @ [{n}x{k2}]^T"),
            });
        }
        let c = kernels::matmul_nt(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push(Op::MatMulNt(a, b), Tensor::matrix(m, n, c)?))
    }

    fn elementwise(&mut self, a: Var, b: Var, ctx: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                context: ctx.into(),
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add")?;
        let vals: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, vals)?))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub")?;
        let vals: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Sub(a, b), Tensor::new(shape, vals)?))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul")?;
        let vals: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, vals)?))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a);
        if self.value(bias).numel() != n {
            return Err(Error::Shape {
                context: "add_bias".into(),
                detail: format!("bias len {} vs {} columns", self.value(bias).numel(), n),
            });
        }
        let mut vals = self.value(a).values().to_vec();
        let b = self.value(bias).values().to_vec();
        for row in vals.chunks_mut(n) {
            for (x, bv) in row.iter_mut().zip(&b) {
                *x += bv;
            }
        }
        Ok(self.push(Op::AddBias(a, bias), Tensor::matrix(m, n, vals)?))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let vals: Vec<f64> = self.value(a).values().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Scale(a, c), Tensor::new(shape, vals).expect("same shape"))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.value(a).values().iter().map(|x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Relu(a), Tensor::new(shape, vals).expect("same shape"))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.value(a).values().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Tanh(a), Tensor::new(shape, vals).expect("same shape"))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.dims2(a);
        let (m2, q) = self.dims2(b);
        if m != m2 {
            return Err(Error::Shape {
                context: "concat_cols".into(),
                detail: format!("{m} vs {m2} rows"),
            });
        }
        let mut vals = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            vals.extend_from_slice(self.value(a).row(i));
            vals.extend_from_slice(self.value(b).row(i));
        }
        Ok(self.push(Op::ConcatCols(a, b), Tensor::matrix(m, p + q, vals)?))
    }

    /// Differentiable projection of each row onto the radius-sqrt(d)
    /// hypersphere, d being the column count.
    pub fn sphere_rows(&mut self, a: Var) -> Var {
        let (m, d) = self.dims2(a);
        let mut vals = self.value(a).values().to_vec();
        kernels::sphere_rows_inplace(&mut vals, d);
        self.push(Op::SphereRows(a), Tensor::matrix(m, d, vals).expect("same shape"))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "row_dot")?;
        let (m, d) = self.dims2(a);
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let vals: Vec<f64> = (0..m)
            .map(|i| kernels::dot(&av[i * d..(i + 1) * d], &bv[i * d..(i + 1) * d]))
            .collect();
        Ok(self.push(Op::RowDot(a, b), Tensor::matrix(m, 1, vals)?))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).values().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).values().iter().sum();
        self.push(Op::MeanAll(a), Tensor::scalar(s / n))
    }

    /// Mean of off-diagonal entries of a square [n,n] matrix; the diagonal is
    /// excluded entirely (value and gradient).
    pub fn offdiag_mean(&mut self, a: Var) -> Result<Var> {
        let (n, n2) = self.dims2(a);
        if n != n2 || n < 2 {
            return Err(Error::Shape {
                context: "offdiag_mean".into(),
                detail: format!("need square matrix with n >= 2, got [{n}x{n2}]"),
            });
        }
        let v = self.value(a).values();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += v[i * n + j];
                }
            }
        }
        let denom = (n * (n - 1)) as f64;
        Ok(self.push(Op::OffdiagMean(a), Tensor::scalar(s / denom)))
    }

    /// Reverse pass from a scalar loss. Fills `grad` on every tensor in
    /// `params`: accumulated VJPs for parameters registered on this tape,
    /// zeros for everything else.
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore) -> Result<()> {
        self.backward_multi(loss, &mut [params])
    }

    /// Like [`Graph::backward`] but fills several stores from one reverse
    /// pass (used when a loss trains parameters held in separate stores,
    /// e.g. a critic jointly with an encoder).
    pub fn backward_multi(&mut self, loss: Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss { numel: self.value(loss).numel() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g); // keep leaf grads for extraction
            }
        }

        for store in stores {
            for (name, t) in store.iter_mut() {
                let g = self
                    .params
                    .get(name)
                    .and_then(|&idx| grads[idx].clone())
                    .unwrap_or_else(|| vec![0.0; t.numel()]);
                if g.len() != t.numel() {
                    return Err(Error::Shape {
                        context: "backward".into(),
                        detail: format!("gradient for {name} has wrong size"),
                    });
                }
                t.set_grad(g);
            }
        }
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        match &mut grads[v.0] {
            Some(g) => {
                for (gv, dv) in g.iter_mut().zip(delta) {
                    *gv += dv;
                }
            }
            None => grads[v.0] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                let da = kernels::matmul_nt(g, self.value(b).values(), m, n, k);
                Self::accumulate(grads, a, &da);
                let mut db = vec![0.0; k * n];
                kernels::matmul_tn_acc(self.value(a).values(), g, &mut db, m, k, n);
                Self::accumulate(grads, b, &db);
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).rows();
                let da = kernels::matmul(g, self.value(b).values(), m, n, k);
                Self::accumulate(grads, a, &da);
                let mut db = vec![0.0; n * k];
                kernels::matmul_tn_acc(g, self.value(a).values(), &mut db, m, n, k);
                Self::accumulate(grads, b, &db);
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, a, g);
                Self::accumulate(grads, b, g);
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                Self::accumulate(grads, b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(self.value(b).values()).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(self.value(a).values()).map(|(x, y)| x * y).collect();
                Self::accumulate(grads, a, &da);
                Self::accumulate(grads, b, &db);
            }
            Op::AddBias(a, bias) => {
                Self::accumulate(grads, a, g);
                let (m, n) = (self.value(a).rows(), self.value(a).cols());
                let db = kernels::col_sums(g, m, n);
                Self::accumulate(grads, bias, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                Self::accumulate(grads, a, &da);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(a).values())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                Self::accumulate(grads, a, &da);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[idx].value.values())
                    .map(|(gv, &y)| gv * (1.0 - y * y))
                    .collect();
                Self::accumulate(grads, a, &da);
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = (self.value(a).rows(), self.value(a).cols());
                let q = self.value(b).cols();
                let mut da = vec![0.0; m * p];
                let mut db = vec![0.0; m * q];
                for i in 0..m {
                    let row = &g[i * (p + q)..(i + 1) * (p + q)];
                    da[i * p..(i + 1) * p].copy_from_slice(&row[..p]);
                    db[i * q..(i + 1) * q].copy_from_slice(&row[p..]);
                }
                Self::accumulate(grads, a, &da);
                Self::accumulate(grads, b, &db);
            }
            Op::SphereRows(a) => {
                // out = r * u with u = v/|v| and r = sqrt(d);
                // d(out)/dv = (r/|v|) (I - u u^T), applied per row.
                let (m, d) = (self.value(a).rows(), self.value(a).cols());
                let radius = (d as f64).sqrt();
                let mut da = vec![0.0; m * d];
                for i in 0..m {
                    let mut v: Vec<f64> = self.value(a).row(i).to_vec();
                    let mut norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm < 1e-12 {
                        v[0] += 1e-8;
                        norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    }
                    let gr = &g[i * d..(i + 1) * d];
                    let gu: f64 = gr.iter().zip(&v).map(|(gv, vv)| gv * vv / norm).sum();
                    for j in 0..d {
                        da[i * d + j] = radius / norm * (gr[j] - gu * v[j] / norm);
                    }
                }
                Self::accumulate(grads, a, &da);
            }
            Op::RowDot(a, b) => {
                let (m, d) = (self.value(a).rows(), self.value(a).cols());
                let mut da = vec![0.0; m * d];
                let mut db = vec![0.0; m * d];
                for i in 0..m {
                    let gi = g[i];
                    for j in 0..d {
                        da[i * d + j] = gi * self.value(b).values()[i * d + j];
                        db[i * d + j] = gi * self.value(a).values()[i * d + j];
                    }
                }
                Self::accumulate(grads, a, &da);
                Self::accumulate(grads, b, &db);
            }
            Op::SumAll(a) => {
                let da = vec![g[0]; self.value(a).numel()];
                Self::accumulate(grads, a, &da);
            }
            Op::MeanAll(a) => {
                let n = self.value(a).numel();
                let da = vec![g[0] / n as f64; n];
                Self::accumulate(grads, a, &da);
            }
            Op::OffdiagMean(a) => {
                let n = self.value(a).rows();
                let scale = g[0] / (n * (n - 1)) as f64;
                let mut da = vec![scale; n * n];
                for i in 0..n {
                    da[i * n + i] = 0.0;
                }
                Self::accumulate(grads, a, &da);
            }
        }
    }
}
