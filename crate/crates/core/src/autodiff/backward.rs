use super::tape::{GradMode, Op, Tape, Var};
use crate::error::{Error, Result, Shape};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    /// Reverse pass from the scalar `output` to each node in `wrt`.
    ///
    /// Nodes not reachable from `output` get a zero gradient of matching
    /// shape. With [`GradMode::CreateGraph`] the returned gradients are
    /// themselves recorded (one level deeper than `output`) and can be
    /// differentiated again.
    pub fn gradient<'t>(
        &'t self,
        output: Var<'t, T>,
        wrt: &[Var<'t, T>],
        mode: GradMode,
    ) -> Result<Vec<Var<'t, T>>> {
        let out_shape = output.shape();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(Shape(out_shape)));
        }
        self.count_pass(mode);
        let zeros = |v: &Var<'t, T>| self.constant(Tensor::zeros(&v.shape()));
        let hi = output.idx;
        let lo = match wrt.iter().map(|v| v.idx).min() {
            Some(lo) if lo <= hi && output.requires_grad() => lo,
            _ => return Ok(wrt.iter().map(zeros).collect()),
        };

        // Mark nodes lying on some path from a `wrt` node to `output`.
        let span = hi - lo + 1;
        let mut on_path = vec![false; span];
        {
            let nodes = self.nodes.borrow();
            for v in wrt {
                on_path[v.idx - lo] = nodes[v.idx].requires_grad;
            }
            let mut parents = Vec::new();
            for i in lo..=hi {
                if on_path[i - lo] || !nodes[i].requires_grad {
                    continue;
                }
                nodes[i].op.parents(&mut parents);
                on_path[i - lo] = parents.iter().any(|&p| p >= lo && on_path[p - lo]);
            }
        }
        if !on_path[hi - lo] {
            return Ok(wrt.iter().map(zeros).collect());
        }

        let saved = (self.recording.get(), self.level.get());
        let create = mode == GradMode::CreateGraph;
        self.recording.set(create);
        if create {
            self.level.set(output.level() + 1);
        }
        let result = self.reverse_sweep(output, lo, &on_path, wrt);
        self.recording.set(saved.0);
        self.level.set(saved.1);
        let adjoints = result?;

        Ok(wrt
            .iter()
            .map(|v| match adjoints[v.idx - lo] {
                Some(g) => g,
                None => zeros(v),
            })
            .collect())
    }

    fn reverse_sweep<'t>(
        &'t self,
        output: Var<'t, T>,
        lo: usize,
        on_path: &[bool],
        wrt: &[Var<'t, T>],
    ) -> Result<Vec<Option<Var<'t, T>>>> {
        let hi = output.idx;
        let mut is_wrt = vec![false; hi - lo + 1];
        for v in wrt {
            is_wrt[v.idx - lo] = true;
        }
        let mut adj: Vec<Option<Var<'t, T>>> = vec![None; hi - lo + 1];
        adj[hi - lo] = Some(self.constant(Tensor::ones(&output.shape())));

        for i in (lo..=hi).rev() {
            let Some(g) = adj[i - lo] else { continue };
            if !on_path[i - lo] {
                continue;
            }
            let op = self.nodes.borrow()[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            if !is_wrt[i - lo] {
                adj[i - lo] = None;
            }
            let needs = |p: usize| p >= lo && on_path[p - lo];
            for (p, contrib) in self.local_gradients(i, &op, g, &needs)? {
                let slot = &mut adj[p - lo];
                *slot = Some(match *slot {
                    Some(acc) => acc.add(contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(adj)
    }

    /// Vector-Jacobian products of node `i` for the parents that need them.
    fn local_gradients<'t>(
        &'t self,
        i: usize,
        op: &Op,
        g: Var<'t, T>,
        needs: &dyn Fn(usize) -> bool,
    ) -> Result<Vec<(usize, Var<'t, T>)>> {
        let var = |idx: usize| Var { tape: self, idx };
        let out = var(i);
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(a) {
                    res.push((a, g));
                }
                if needs(b) {
                    res.push((b, g));
                }
            }
            Op::AddRow(a, b) => {
                if needs(a) {
                    res.push((a, g));
                }
                if needs(b) {
                    res.push((b, g.sum_rows()?));
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    res.push((a, g));
                }
                if needs(b) {
                    res.push((b, g.neg()));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    res.push((a, g.mul(var(b))?));
                }
                if needs(b) {
                    res.push((b, g.mul(var(a))?));
                }
            }
            Op::Div(a, b) => {
                let ga = g.div(var(b))?;
                if needs(b) {
                    // d(a/b)/db = -(a/b)/b
                    res.push((b, ga.mul(out)?.neg()));
                }
                if needs(a) {
                    res.push((a, ga));
                }
            }
            Op::Neg(a) => res.push((a, g.neg())),
            Op::Affine { a, scale } => res.push((a, g.scale(scale))),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (var(a), var(b));
                if needs(a) {
                    let ga = if ta {
                        vb.matmul_t(g, tb, true)?
                    } else {
                        g.matmul_t(vb, false, !tb)?
                    };
                    res.push((a, ga));
                }
                if needs(b) {
                    let gb = if tb {
                        g.matmul_t(va, true, ta)?
                    } else {
                        va.matmul_t(g, !ta, false)?
                    };
                    res.push((b, gb));
                }
            }
            Op::SumAll(a) => res.push((a, g.expand(&var(a).shape())?)),
            Op::Expand(a) => res.push((a, g.sum().reshape(&var(a).shape())?)),
            Op::SumRows(a) => res.push((a, g.broadcast_rows(var(a).shape()[0])?)),
            Op::BroadcastRows(a) => res.push((a, g.sum_rows()?)),
            Op::SumCols(a) => res.push((a, g.broadcast_cols(var(a).shape()[1])?)),
            Op::BroadcastCols(a) => res.push((a, g.sum_cols()?)),
            Op::Exp(a) => res.push((a, g.mul(out)?)),
            Op::Ln(a) => res.push((a, g.div(var(a))?)),
            Op::Square(a) => res.push((a, g.mul(var(a))?.scale(2.0))),
            Op::Softplus(a) => {
                let sig = match self.aux_of(i) {
                    Some(s) if self.recording.get() => self.record_shared(s, Op::Sigmoid(a), None),
                    Some(s) => self.constant_shared(s),
                    None => var(a).sigmoid(),
                };
                res.push((a, g.mul(sig)?));
            }
            Op::Sigmoid(a) => {
                // s' = s (1 - s)
                let ds = out.mul(out.affine(-1.0, 1.0))?;
                res.push((a, g.mul(ds)?));
            }
            Op::Reshape(a) => res.push((a, g.reshape(&var(a).shape())?)),
            Op::SliceRows { a, start } => {
                let total = var(a).shape()[0];
                res.push((a, g.pad_rows(start, total)?));
            }
            Op::PadRows { a, start } => {
                let len = var(a).shape()[0];
                res.push((a, g.slice_rows(start, len)?));
            }
            Op::ConcatRows(ref parts) => {
                let mut start = 0;
                for &p in parts.iter() {
                    let len = var(p).shape()[0];
                    if needs(p) {
                        res.push((p, g.slice_rows(start, len)?));
                    }
                    start += len;
                }
            }
        }
        Ok(res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(x: f64) -> Tensor<f64> {
        Tensor::vector(vec![x])
    }

    #[test]
    fn first_derivative_of_sum_of_squares() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::vector(vec![1., 2., 3.]));
        let y = x.square().sum();
        let g = t.gradient(y, &[x], GradMode::Detached).unwrap();
        assert_eq!(g[0].value().data(), &[2., 4., 6.]);
    }

    #[test]
    fn second_derivative_of_cube() {
        let t = Tape::<f64>::new();
        let x = t.leaf(t1(2.0));
        let y = x.square().mul(x).unwrap().sum();
        let g = t.gradient(y, &[x], GradMode::CreateGraph).unwrap()[0];
        let h = t.gradient(g.sum(), &[x], GradMode::Detached).unwrap()[0];
        assert_eq!(h.item(), 12.0);
    }

    #[test]
    fn third_derivative_of_quartic() {
        let t = Tape::<f64>::new();
        let x = t.leaf(t1(1.0));
        let y = x.square().square().sum();
        let g1 = t.gradient(y, &[x], GradMode::CreateGraph).unwrap()[0];
        let g2 = t.gradient(g1.sum(), &[x], GradMode::CreateGraph).unwrap()[0];
        let g3 = t.gradient(g2.sum(), &[x], GradMode::Detached).unwrap()[0];
        assert_eq!(g3.item(), 24.0);
        assert_eq!(g2.level(), 3);
        let c = t.counters();
        assert_eq!((c.nested_passes, c.first_order_passes), (2, 1));
    }

    #[test]
    fn unreachable_wrt_gets_zeros() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::vector(vec![1., 2.]));
        let z = t.leaf(Tensor::zeros(&[2, 2]));
        let y = x.square().sum();
        let g = t.gradient(y, &[z, x], GradMode::Detached).unwrap();
        assert_eq!(g[0].value().data(), &[0.; 4]);
        assert_eq!(g[1].value().data(), &[2., 4.]);
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::vector(vec![1., 2.]));
        let err = t.gradient(x.square(), &[x], GradMode::Detached).unwrap_err();
        assert!(matches!(err, Error::NonScalarOutput(_)));
    }

    #[test]
    fn matmul_gradients_with_transposes() {
        // f = sum(op(A) op(B)); df/dA and df/dB compared to the untransposed form.
        let a0 = Tensor::<f64>::from_f64(&[2, 3], &[0.5, -1., 2., 1.5, 0.3, -0.7]).unwrap();
        let b0 = Tensor::<f64>::from_f64(&[3, 2], &[1., 2., -1., 0.4, 0.2, 0.9]).unwrap();
        let w0 = Tensor::<f64>::from_f64(&[2, 2], &[1., -2., 3., 0.5]).unwrap();
        let reference = {
            let t = Tape::new();
            let (a, b, w) = (t.leaf(a0.clone()), t.leaf(b0.clone()), t.constant(w0.clone()));
            let y = a.matmul(b).unwrap().mul(w).unwrap().sum();
            let g = t.gradient(y, &[a, b], GradMode::Detached).unwrap();
            (g[0].value().to_f64_vec(), g[1].value().to_f64_vec())
        };
        let at = a0.matmul(&Tensor::eye(2), true, false).unwrap(); // [3, 2] = A^T
        let bt = Tensor::eye(2).matmul(&b0, false, true).unwrap(); // [2, 3] = B^T
        let t = Tape::new();
        let (a, b, w) = (t.leaf(at), t.leaf(bt), t.constant(w0));
        let y = a.matmul_t(b, true, true).unwrap().mul(w).unwrap().sum();
        let g = t.gradient(y, &[a, b], GradMode::Detached).unwrap();
        let ga = g[0].value().matmul(&Tensor::eye(3), true, false).unwrap();
        let gb = Tensor::eye(3).matmul(&g[1].value(), false, true).unwrap();
        for (x, y) in ga.to_f64_vec().iter().zip(&reference.0) {
            assert!((x - y).abs() < 1e-14);
        }
        for (x, y) in gb.to_f64_vec().iter().zip(&reference.1) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
