//! Computation tape: records forward operations and replays them in reverse
//! for gradient accumulation.
//!
//! Ops are recorded in forward order, so iterating the record backwards is a
//! reverse topological traversal of the computation graph. Policy: one
//! backward pass per tape; create a fresh tape (or `clear`) for the next
//! step and `zero_grad` parameters before reuse.

use std::cell::{Cell, RefCell};

use super::{
    broadcast_shape, broadcast_strides, for_each_broadcast, strides_of, Tensor,
};

type BackwardFn = Box<dyn Fn()>;

/// Gradient tape. All tensor arithmetic goes through its methods; when any
/// input requires a gradient (and recording is enabled) a backward rule is
/// pushed onto the tape.
#[derive(Default)]
pub struct Tape {
    ops: RefCell<Vec<BackwardFn>>,
    enabled: Cell<bool>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            ops: RefCell::new(Vec::new()),
            enabled: Cell::new(true),
        }
    }

    /// Tape that never records; use for inference/evaluation passes.
    pub fn no_grad() -> Tape {
        let t = Tape::new();
        t.enabled.set(false);
        t
    }

    pub fn is_recording(&self) -> bool {
        self.enabled.get()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn clear(&self) {
        self.ops.borrow_mut().clear();
    }

    pub(crate) fn should_record(&self, inputs: &[&Tensor]) -> bool {
        self.enabled.get() && inputs.iter().any(|t| t.requires_grad())
    }

    pub(crate) fn record(&self, f: impl Fn() + 'static) {
        self.ops.borrow_mut().push(Box::new(f));
    }

    /// Reverse pass from a scalar loss. Every tensor recorded on the path
    /// to `loss` that requires a gradient ends up with a populated gradient
    /// buffer. Panics if `loss` is not a scalar (contract error).
    pub fn backward(&self, loss: &Tensor) {
        assert_eq!(
            loss.len(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            loss.shape()
        );
        loss.seed_grad(1.0);
        for op in self.ops.borrow().iter().rev() {
            op();
        }
    }

    // ---------------------------------------------------------------------
    // Elementwise unary ops
    // ---------------------------------------------------------------------

    fn unary(
        &self,
        x: &Tensor,
        fwd: impl Fn(f64) -> f64,
        // local derivative as a function of (input value, output value)
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| fwd(v)).collect();
        let out = Tensor::result(x.shape(), data, self.should_record(&[x]));
        if out.requires_grad() {
            let xc = x.clone();
            let oc = out.clone();
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let xd = xc.data();
                let od = oc.data();
                let delta: Vec<f64> = gout
                    .iter()
                    .zip(xd.iter().zip(od.iter()))
                    .map(|(&g, (&xv, &yv))| g * dfdx(xv, yv))
                    .collect();
                drop(xd);
                drop(od);
                xc.accum_grad(&delta);
            });
        }
        out
    }

    pub fn neg(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| -v, |_, _| -1.0)
    }

    pub fn relu(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v.max(0.0), |xv, _| if xv > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self, x: &Tensor) -> Tensor {
        self.unary(x, stable_sigmoid, |_, yv| yv * (1.0 - yv))
    }

    /// softplus(x) = ln(1 + e^x), computed overflow-free.
    pub fn softplus(&self, x: &Tensor) -> Tensor {
        self.unary(
            x,
            |v| v.max(0.0) + (-v.abs()).exp().ln_1p(),
            |xv, _| stable_sigmoid(xv),
        )
    }

    pub fn exp(&self, x: &Tensor) -> Tensor {
        self.unary(x, f64::exp, |_, yv| yv)
    }

    /// Square root; inputs must be positive for a finite gradient.
    pub fn sqrt(&self, x: &Tensor) -> Tensor {
        self.unary(x, f64::sqrt, |_, yv| 0.5 / yv)
    }

    pub fn square(&self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v * v, |xv, _| 2.0 * xv)
    }

    pub fn abs(&self, x: &Tensor) -> Tensor {
        self.unary(x, f64::abs, |xv, _| {
            if xv > 0.0 {
                1.0
            } else if xv < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// x·ln x with the 0·ln 0 := 0 convention (entropy terms).
    pub fn xlnx(&self, x: &Tensor) -> Tensor {
        self.unary(
            x,
            |v| if v > 0.0 { v * v.ln() } else { 0.0 },
            |xv, _| if xv > 0.0 { xv.ln() + 1.0 } else { 0.0 },
        )
    }

    pub fn add_scalar(&self, x: &Tensor, c: f64) -> Tensor {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, x: &Tensor, c: f64) -> Tensor {
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    // ---------------------------------------------------------------------
    // Elementwise binary ops with numpy broadcasting
    // ---------------------------------------------------------------------

    fn binary(
        &self,
        a: &Tensor,
        b: &Tensor,
        fwd: impl Fn(f64, f64) -> f64,
        // local derivatives wrt a and b given (a, b) values
        dfda: impl Fn(f64, f64) -> f64 + 'static,
        dfdb: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out_shape = broadcast_shape(a.shape(), b.shape());
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let mut data = vec![0.0; out_shape.iter().product()];
        {
            let ad = a.data();
            let bd = b.data();
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                data[o] = fwd(ad[ia], bd[ib]);
            });
        }
        let out = Tensor::result(&out_shape, data, self.should_record(&[a, b]));
        if out.requires_grad() {
            let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
            let (osh, sa, sb) = (out_shape, sa, sb);
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let ad = ac.data();
                let bd = bc.data();
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for_each_broadcast(&osh, &sa, &sb, |o, ia, ib| {
                    let g = gout[o];
                    da[ia] += g * dfda(ad[ia], bd[ib]);
                    db[ib] += g * dfdb(ad[ia], bd[ib]);
                });
                drop(ad);
                drop(bd);
                if ac.requires_grad() {
                    ac.accum_grad(&da);
                }
                if bc.requires_grad() {
                    bc.accum_grad(&db);
                }
            });
        }
        out
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary(a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary(a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary(a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Elementwise division; divisor must be nonzero.
    pub fn div(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary(a, b, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    // ---------------------------------------------------------------------
    // Matrix multiplication (batched, leading dims broadcast)
    // ---------------------------------------------------------------------

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (ra, rb) = (a.rank(), b.rank());
        assert!(
            ra >= 2 && rb >= 2,
            "matmul: operands need rank >= 2, got {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        let (m, ka) = (a.shape()[ra - 2], a.shape()[ra - 1]);
        let (kb, n) = (b.shape()[rb - 2], b.shape()[rb - 1]);
        assert_eq!(
            ka, kb,
            "matmul: inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        let k = ka;
        let batch_a = a.shape()[..ra - 2].to_vec();
        let batch_b = b.shape()[..rb - 2].to_vec();
        let batch_out = broadcast_shape(&batch_a, &batch_b);
        let sa = broadcast_strides(&batch_a, &batch_out);
        let sb = broadcast_strides(&batch_b, &batch_out);
        let mut out_shape = batch_out.clone();
        out_shape.push(m);
        out_shape.push(n);

        let (am, bm) = (m * k, k * n);
        let om = m * n;
        let mut data = vec![0.0; out_shape.iter().product()];
        {
            let ad = a.data();
            let bd = b.data();
            for_each_broadcast(&batch_out, &sa, &sb, |blk, ablk, bblk| {
                let ao = ablk * am;
                let bo = bblk * bm;
                let oo = blk * om;
                for i in 0..m {
                    for kk in 0..k {
                        let av = ad[ao + i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = bo + kk * n;
                        let orow = oo + i * n;
                        for j in 0..n {
                            data[orow + j] += av * bd[brow + j];
                        }
                    }
                }
            });
        }
        let out = Tensor::result(&out_shape, data, self.should_record(&[a, b]));
        if out.requires_grad() {
            let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let ad = ac.data();
                let bd = bc.data();
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for_each_broadcast(&batch_out, &sa, &sb, |blk, ablk, bblk| {
                    let ao = ablk * am;
                    let bo = bblk * bm;
                    let oo = blk * om;
                    // dA = dC · B^T ; dB = A^T · dC
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout[oo + i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                da[ao + i * k + kk] += g * bd[bo + kk * n + j];
                                db[bo + kk * n + j] += g * ad[ao + i * k + kk];
                            }
                        }
                    }
                });
                drop(ad);
                drop(bd);
                if ac.requires_grad() {
                    ac.accum_grad(&da);
                }
                if bc.requires_grad() {
                    bc.accum_grad(&db);
                }
            });
        }
        out
    }

    // ---------------------------------------------------------------------
    // Shape ops
    // ---------------------------------------------------------------------

    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            x.len(),
            "reshape: cannot view {:?} as {:?}",
            x.shape(),
            shape
        );
        let out = Tensor::result(shape, x.to_vec(), self.should_record(&[x]));
        if out.requires_grad() {
            let (xc, oc) = (x.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                xc.accum_grad(&gout);
            });
        }
        out
    }

    pub fn permute(&self, x: &Tensor, perm: &[usize]) -> Tensor {
        let rank = x.rank();
        assert_eq!(perm.len(), rank, "permute: perm length != rank");
        let mut seen = vec![false; rank];
        for &p in perm {
            assert!(p < rank && !seen[p], "permute: invalid permutation {:?}", perm);
            seen[p] = true;
        }
        let in_shape = x.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let in_strides = strides_of(&in_shape);
        // stride of out dim i in the input = stride of in dim perm[i]
        let map_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let numel = x.len();
        let mut data = vec![0.0; numel];
        let mut mapping = vec![0usize; numel];
        {
            let xd = x.data();
            let mut idx = vec![0usize; rank];
            let mut src = 0usize;
            for o in 0..numel {
                data[o] = xd[src];
                mapping[o] = src;
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    src += map_strides[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    src -= map_strides[d] * out_shape[d];
                    idx[d] = 0;
                }
            }
        }
        let out = Tensor::result(&out_shape, data, self.should_record(&[x]));
        if out.requires_grad() {
            let (xc, oc) = (x.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let mut dx = vec![0.0; xc.len()];
                for (o, &src) in mapping.iter().enumerate() {
                    dx[src] += gout[o];
                }
                xc.accum_grad(&dx);
            });
        }
        out
    }

    pub fn transpose_last2(&self, x: &Tensor) -> Tensor {
        let rank = x.rank();
        assert!(rank >= 2, "transpose: rank >= 2 required, got {:?}", x.shape());
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn broadcast_to(&self, x: &Tensor, shape: &[usize]) -> Tensor {
        let check = broadcast_shape(x.shape(), shape);
        assert_eq!(
            check, shape,
            "broadcast_to: {:?} does not broadcast to {:?}",
            x.shape(),
            shape
        );
        let sx = broadcast_strides(x.shape(), shape);
        let zero = vec![0usize; shape.len()];
        let mut data = vec![0.0; shape.iter().product()];
        {
            let xd = x.data();
            for_each_broadcast(shape, &sx, &zero, |o, ix, _| {
                data[o] = xd[ix];
            });
        }
        let out = Tensor::result(shape, data, self.should_record(&[x]));
        if out.requires_grad() {
            let (xc, oc) = (x.clone(), out.clone());
            let osh = shape.to_vec();
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let mut dx = vec![0.0; xc.len()];
                for_each_broadcast(&osh, &sx, &zero, |o, ix, _| {
                    dx[ix] += gout[o];
                });
                xc.accum_grad(&dx);
            });
        }
        out
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let (ra, rb) = (a.rank(), b.rank());
        assert_eq!(ra, rb, "concat: rank mismatch {:?} vs {:?}", a.shape(), b.shape());
        assert_eq!(
            a.shape()[..ra - 1],
            b.shape()[..rb - 1],
            "concat: leading dims differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        let (da, db) = (a.shape()[ra - 1], b.shape()[rb - 1]);
        let rows = a.len() / da;
        let mut out_shape = a.shape().to_vec();
        out_shape[ra - 1] = da + db;
        let mut data = vec![0.0; rows * (da + db)];
        {
            let ad = a.data();
            let bd = b.data();
            for r in 0..rows {
                data[r * (da + db)..r * (da + db) + da]
                    .copy_from_slice(&ad[r * da..(r + 1) * da]);
                data[r * (da + db) + da..(r + 1) * (da + db)]
                    .copy_from_slice(&bd[r * db..(r + 1) * db]);
            }
        }
        let out = Tensor::result(&out_shape, data, self.should_record(&[a, b]));
        if out.requires_grad() {
            let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let mut ga = vec![0.0; ac.len()];
                let mut gb = vec![0.0; bc.len()];
                for r in 0..rows {
                    ga[r * da..(r + 1) * da]
                        .copy_from_slice(&gout[r * (da + db)..r * (da + db) + da]);
                    gb[r * db..(r + 1) * db]
                        .copy_from_slice(&gout[r * (da + db) + da..(r + 1) * (da + db)]);
                }
                if ac.requires_grad() {
                    ac.accum_grad(&ga);
                }
                if bc.requires_grad() {
                    bc.accum_grad(&gb);
                }
            });
        }
        out
    }

    // ---------------------------------------------------------------------
    // Reductions
    // ---------------------------------------------------------------------

    pub fn sum_all(&self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().sum();
        let out = Tensor::result(&[1], vec![s], self.should_record(&[x]));
        if out.requires_grad() {
            let (xc, oc) = (x.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                xc.accum_grad(&vec![gout[0]; xc.len()]);
            });
        }
        out
    }

    pub fn mean_all(&self, x: &Tensor) -> Tensor {
        let n = x.len() as f64;
        let s = self.sum_all(x);
        self.mul_scalar(&s, 1.0 / n)
    }

    /// Sum over one axis. `keepdim` keeps the axis with size 1.
    pub fn sum_axis(&self, x: &Tensor, axis: usize, keepdim: bool) -> Tensor {
        let rank = x.rank();
        assert!(axis < rank, "sum_axis: axis {} out of range for {:?}", axis, x.shape());
        let in_shape = x.shape().to_vec();
        let mut out_shape: Vec<usize> = in_shape.clone();
        out_shape[axis] = 1;
        let in_strides = strides_of(&in_shape);
        let out_strides = strides_of(&out_shape);
        let numel = x.len();
        let mut data = vec![0.0; out_shape.iter().product()];
        // mapping[i] = output offset of input element i
        let compute_map = {
            let in_shape = in_shape.clone();
            let in_strides = in_strides.clone();
            let out_strides = out_strides.clone();
            move |lin: usize| -> usize {
                let mut rem = lin;
                let mut off = 0usize;
                for d in 0..in_shape.len() {
                    let c = rem / in_strides[d];
                    rem %= in_strides[d];
                    if d != axis {
                        off += c * out_strides[d];
                    }
                }
                off
            }
        };
        {
            let xd = x.data();
            for i in 0..numel {
                data[compute_map(i)] += xd[i];
            }
        }
        let final_shape: Vec<usize> = if keepdim {
            out_shape.clone()
        } else {
            in_shape
                .iter()
                .enumerate()
                .filter(|&(d, _)| d != axis)
                .map(|(_, &s)| s)
                .collect()
        };
        // guard: reducing a rank-1 tensor without keepdim yields a scalar [1]
        let final_shape = if final_shape.is_empty() { vec![1] } else { final_shape };
        let out = Tensor::result(&final_shape, data, self.should_record(&[x]));
        if out.requires_grad() {
            let (xc, oc) = (x.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let mut dx = vec![0.0; numel];
                for (i, d) in dx.iter_mut().enumerate() {
                    *d = gout[compute_map(i)];
                }
                xc.accum_grad(&dx);
            });
        }
        out
    }

    pub fn mean_axis(&self, x: &Tensor, axis: usize, keepdim: bool) -> Tensor {
        let n = x.shape()[axis] as f64;
        let s = self.sum_axis(x, axis, keepdim);
        self.mul_scalar(&s, 1.0 / n)
    }

    /// Max over one axis; gradient flows to the (first) argmax position.
    pub fn max_axis(&self, x: &Tensor, axis: usize, keepdim: bool) -> Tensor {
        let rank = x.rank();
        assert!(axis < rank, "max_axis: axis {} out of range for {:?}", axis, x.shape());
        let in_shape = x.shape().to_vec();
        let axis_len = in_shape[axis];
        assert!(axis_len > 0, "max_axis: empty axis");
        let mut out_shape: Vec<usize> = in_shape.clone();
        out_shape[axis] = 1;
        let in_strides = strides_of(&in_shape);
        let out_strides = strides_of(&out_shape);
        let out_numel: usize = out_shape.iter().product();
        let mut data = vec![f64::NEG_INFINITY; out_numel];
        let mut argmax = vec![0usize; out_numel];
        {
            let xd = x.data();
            for (i, &v) in xd.iter().enumerate() {
                let mut rem = i;
                let mut off = 0usize;
                for d in 0..rank {
                    let c = rem / in_strides[d];
                    rem %= in_strides[d];
                    if d != axis {
                        off += c * out_strides[d];
                    }
                }
                if v > data[off] {
                    data[off] = v;
                    argmax[off] = i;
                }
            }
        }
        let final_shape: Vec<usize> = if keepdim {
            out_shape.clone()
        } else {
            in_shape
                .iter()
                .enumerate()
                .filter(|&(d, _)| d != axis)
                .map(|(_, &s)| s)
                .collect()
        };
        let final_shape = if final_shape.is_empty() { vec![1] } else { final_shape };
        let out = Tensor::result(&final_shape, data, self.should_record(&[x]));
        if out.requires_grad() {
            let (xc, oc) = (x.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let mut dx = vec![0.0; xc.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += gout[o];
                }
                xc.accum_grad(&dx);
            });
        }
        out
    }

    // ---------------------------------------------------------------------
    // Row-wise ops over the last axis
    // ---------------------------------------------------------------------

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&self, x: &Tensor) -> Tensor {
        let rank = x.rank();
        assert!(rank >= 1, "softmax: rank >= 1 required");
        let d = x.shape()[rank - 1];
        let rows = x.len() / d;
        let mut data = vec![0.0; x.len()];
        {
            let xd = x.data();
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - mx).exp();
                    data[r * d + j] = e;
                    sum += e;
                }
                for j in 0..d {
                    data[r * d + j] /= sum;
                }
            }
        }
        let out = Tensor::result(x.shape(), data, self.should_record(&[x]));
        if out.requires_grad() {
            let (xc, oc) = (x.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let od = oc.data();
                let mut dx = vec![0.0; xc.len()];
                for r in 0..rows {
                    let y = &od[r * d..(r + 1) * d];
                    let gy = &gout[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = y[j] * (gy[j] - dot);
                    }
                }
                drop(od);
                xc.accum_grad(&dx);
            });
        }
        out
    }

    /// Layer normalization over the last axis with affine parameters
    /// `gamma`/`beta` of shape `[D]`. Variance is the biased (1/D) estimate.
    pub fn layernorm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
        assert!(eps > 0.0, "layernorm: eps must be positive, got {}", eps);
        let rank = x.rank();
        let d = x.shape()[rank - 1];
        assert!(d >= 1, "layernorm: feature width must be >= 1");
        assert_eq!(gamma.shape(), &[d], "layernorm: gamma shape {:?}, want [{}]", gamma.shape(), d);
        assert_eq!(beta.shape(), &[d], "layernorm: beta shape {:?}, want [{}]", beta.shape(), d);
        let rows = x.len() / d;
        let mut data = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        {
            let xd = x.data();
            let gd = gamma.data();
            let bd = beta.data();
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std[r] = inv;
                for j in 0..d {
                    let xh = (row[j] - mu) * inv;
                    xhat[r * d + j] = xh;
                    data[r * d + j] = gd[j] * xh + bd[j];
                }
            }
        }
        let out = Tensor::result(x.shape(), data, self.should_record(&[x, gamma, beta]));
        if out.requires_grad() {
            let (xc, gc, bc, oc) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
            self.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let gd = gc.data();
                let mut dx = vec![0.0; xc.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let gy = &gout[r * d..(r + 1) * d];
                    let mut mean_gyg = 0.0;
                    let mut mean_gyg_xh = 0.0;
                    for j in 0..d {
                        let gyg = gy[j] * gd[j];
                        mean_gyg += gyg;
                        mean_gyg_xh += gyg * xh[j];
                        dgamma[j] += gy[j] * xh[j];
                        dbeta[j] += gy[j];
                    }
                    mean_gyg /= d as f64;
                    mean_gyg_xh /= d as f64;
                    let inv = inv_std[r];
                    for j in 0..d {
                        let gyg = gy[j] * gd[j];
                        dx[r * d + j] = inv * (gyg - mean_gyg - xh[j] * mean_gyg_xh);
                    }
                }
                drop(gd);
                if xc.requires_grad() {
                    xc.accum_grad(&dx);
                }
                if gc.requires_grad() {
                    gc.accum_grad(&dgamma);
                }
                if bc.requires_grad() {
                    bc.accum_grad(&dbeta);
                }
            });
        }
        out
    }

    /// Scaled dot-product attention over `[.., T, d]` inputs:
    /// softmax(q·kᵀ/√d)·v. Rows of the attention matrix sum to 1.
    pub fn softmax_attention(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let d = *q.shape().last().expect("attention: rank >= 2 required");
        assert!(d >= 1, "attention: head dim must be >= 1");
        let kt = self.transpose_last2(k);
        let logits = self.mul_scalar(&self.matmul(q, &kt), 1.0 / (d as f64).sqrt());
        let weights = self.softmax_last(&logits);
        self.matmul(&weights, v)
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{central_diff, max_rel_err};

    #[test]
    fn matmul_identity() {
        let g = Tape::new();
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(g.matmul(&a, &b).to_vec(), vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_1x2_2x1() {
        let g = Tape::new();
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]);
        let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]);
        let c = g.matmul(&a, &b);
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.to_vec(), vec![11.0]);
    }

    #[test]
    #[should_panic(expected = "inner dimensions disagree")]
    fn matmul_shape_mismatch_names_shapes() {
        let g = Tape::new();
        let a = Tensor::from_vec(&[2, 3], vec![0.0; 6]);
        let b = Tensor::from_vec(&[2, 2], vec![0.0; 4]);
        let _ = g.matmul(&a, &b);
    }

    #[test]
    fn matmul_grad_is_ones_times_bt() {
        // d sum(A·B)/dA = ones · Bᵀ
        let g = Tape::new();
        let a = Tensor::param(&[2, 3], vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        let b = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let loss = g.sum_all(&g.matmul(&a, &b));
        g.backward(&loss);
        let grad = a.grad().unwrap();
        // row sums of B
        let expect = [3.0, 7.0, 11.0, 3.0, 7.0, 11.0];
        for (got, want) in grad.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_grad_matches_finite_differences() {
        let g = Tape::new();
        let a = Tensor::param(&[2, 3], vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        let b = Tensor::param(&[3, 2], vec![1.0, -2.0, 0.3, 4.0, -5.0, 0.6]);
        let loss = g.sum_all(&g.square(&g.matmul(&a, &b)));
        g.backward(&loss);

        let a0 = a.to_vec();
        let fd = central_diff(
            |xs| {
                let g = Tape::no_grad();
                let at = Tensor::from_vec(&[2, 3], xs.to_vec());
                let bt = Tensor::from_vec(&[3, 2], b.to_vec());
                g.sum_all(&g.square(&g.matmul(&at, &bt))).item()
            },
            &a0,
            1e-5,
        );
        assert!(max_rel_err(&a.grad().unwrap(), &fd) < 1e-6);
    }

    #[test]
    fn layernorm_constant_row_maps_to_beta() {
        let g = Tape::new();
        let x = Tensor::from_vec(&[1, 4], vec![5.0, 5.0, 5.0, 5.0]);
        let gamma = Tensor::from_vec(&[4], vec![1.0; 4]);
        let beta = Tensor::from_vec(&[4], vec![0.0; 4]);
        let y = g.layernorm(&x, &gamma, &beta, 1e-5);
        for v in y.to_vec() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_already_normalized_row() {
        let g = Tape::new();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, -1.0]);
        let gamma = Tensor::from_vec(&[2], vec![1.0; 2]);
        let beta = Tensor::from_vec(&[2], vec![0.0; 2]);
        let y = g.layernorm(&x, &gamma, &beta, 1e-12);
        let v = y.to_vec();
        assert!((v[0] - 1.0).abs() < 1e-6 && (v[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layernorm_output_statistics() {
        let g = Tape::new();
        let x = Tensor::from_vec(&[1, 8], vec![0.3, -2.0, 4.5, 1.1, -0.2, 3.3, 0.0, -1.7]);
        let gamma = Tensor::from_vec(&[8], vec![1.0; 8]);
        let beta = Tensor::from_vec(&[8], vec![0.0; 8]);
        let eps = 1e-8;
        let y = g.layernorm(&x, &gamma, &beta, eps).to_vec();
        let mu: f64 = y.iter().sum::<f64>() / 8.0;
        let var: f64 = y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 8.0;
        assert!(mu.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "eps must be positive")]
    fn layernorm_rejects_nonpositive_eps() {
        let g = Tape::new();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]);
        let gamma = Tensor::from_vec(&[2], vec![1.0; 2]);
        let beta = Tensor::from_vec(&[2], vec![0.0; 2]);
        let _ = g.layernorm(&x, &gamma, &beta, 0.0);
    }

    #[test]
    fn elementwise_reference_values() {
        let g = Tape::new();
        assert!((g.sigmoid(&Tensor::scalar(0.0)).item() - 0.5).abs() < 1e-15);
        assert!((g.softplus(&Tensor::scalar(0.0)).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g.relu(&Tensor::scalar(-3.0)).item(), 0.0);
        assert_eq!(g.relu(&Tensor::scalar(3.0)).item(), 3.0);
    }

    #[test]
    fn relu_gradient_gates() {
        let g = Tape::new();
        let x = Tensor::param(&[2], vec![-3.0, 3.0]);
        let loss = g.sum_all(&g.relu(&x));
        g.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn attention_single_token_returns_v() {
        let g = Tape::new();
        let q = Tensor::from_vec(&[1, 1, 1, 3], vec![0.2, -0.5, 1.0]);
        let k = Tensor::from_vec(&[1, 1, 1, 3], vec![9.0, 9.0, 9.0]);
        let v = Tensor::from_vec(&[1, 1, 1, 3], vec![4.0, 5.0, 6.0]);
        let y = g.softmax_attention(&q, &k, &v);
        assert_eq!(y.to_vec(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn attention_identical_keys_uniform_weights() {
        let g = Tape::new();
        let t = 4;
        let q = Tensor::from_vec(&[1, t, 2], (0..t * 2).map(|i| i as f64 * 0.1).collect());
        let k = Tensor::from_vec(&[1, t, 2], vec![0.7; t * 2]);
        let v = Tensor::from_vec(&[1, t, 2], (0..t * 2).map(|i| i as f64).collect());
        let y = g.softmax_attention(&q, &k, &v);
        // uniform weights -> every output row is the mean of v rows
        let want = [3.0, 4.0];
        for r in 0..t {
            for j in 0..2 {
                assert!((y.to_vec()[r * 2 + j] - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_grad_matches_finite_differences() {
        // 2x2x3x4 instance per the gradient-suite contract
        let shape = [2usize, 2, 3, 4];
        let n: usize = shape.iter().product();
        let mk = |seed: u64| -> Vec<f64> {
            let mut s = seed;
            (0..n)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
                })
                .collect()
        };
        let (qv, kv, vv) = (mk(1), mk(2), mk(3));
        let g = Tape::new();
        let q = Tensor::param(&shape, qv.clone());
        let k = Tensor::param(&shape, kv.clone());
        let v = Tensor::param(&shape, vv.clone());
        let loss = g.sum_all(&g.square(&g.softmax_attention(&q, &k, &v)));
        g.backward(&loss);

        for (which, tensor, base) in [(0, &q, &qv), (1, &k, &kv), (2, &v, &vv)] {
            let fd = central_diff(
                |xs| {
                    let g = Tape::no_grad();
                    let mut bufs = [qv.clone(), kv.clone(), vv.clone()];
                    bufs[which] = xs.to_vec();
                    let q = Tensor::from_vec(&shape, bufs[0].clone());
                    let k = Tensor::from_vec(&shape, bufs[1].clone());
                    let v = Tensor::from_vec(&shape, bufs[2].clone());
                    g.sum_all(&g.square(&g.softmax_attention(&q, &k, &v))).item()
                },
                base,
                1e-5,
            );
            assert!(
                max_rel_err(&tensor.grad().unwrap(), &fd) < 1e-5,
                "attention input {} grad mismatch",
                which
            );
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let g = Tape::new();
        let x = Tensor::param(&[5], vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let loss = g.sum_all(&x);
        g.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn backward_sum_of_squares_gives_2x() {
        let g = Tape::new();
        let x = Tensor::param(&[3], vec![1.0, -2.0, 3.0]);
        let loss = g.sum_all(&g.square(&x));
        g.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    #[should_panic(expected = "loss must be scalar")]
    fn backward_rejects_nonscalar_loss() {
        let g = Tape::new();
        let x = Tensor::param(&[3], vec![1.0; 3]);
        let y = g.mul_scalar(&x, 2.0);
        g.backward(&y);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let g = Tape::new();
        let x = Tensor::param(&[2, 3], vec![1.0; 6]);
        let b = Tensor::param(&[3], vec![0.5; 3]);
        let loss = g.sum_all(&g.add(&x, &b));
        g.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
        assert_eq!(b.grad().unwrap(), vec![2.0; 3]); // summed over broadcast rows
    }

    #[test]
    fn reductions_and_shapes_roundtrip_gradients() {
        let g = Tape::new();
        let x = Tensor::param(&[2, 3, 4], (0..24).map(|i| i as f64 * 0.1 - 1.0).collect());
        let y = g.permute(&x, &[2, 0, 1]);
        let z = g.reshape(&y, &[4, 6]);
        let m = g.mean_axis(&z, 1, false);
        let loss = g.sum_all(&g.square(&m));
        g.backward(&loss);
        let fd = central_diff(
            |xs| {
                let g = Tape::no_grad();
                let x = Tensor::from_vec(&[2, 3, 4], xs.to_vec());
                let y = g.permute(&x, &[2, 0, 1]);
                let z = g.reshape(&y, &[4, 6]);
                let m = g.mean_axis(&z, 1, false);
                g.sum_all(&g.square(&m)).item()
            },
            &x.to_vec(),
            1e-5,
        );
        assert!(max_rel_err(&x.grad().unwrap(), &fd) < 1e-6);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let g = Tape::new();
            let x = Tensor::from_vec(&[3, 3], (0..9).map(|i| (i as f64).sin()).collect());
            let y = g.softmax_last(&g.matmul(&x, &x));
            y.to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn finite_inputs_stay_finite() {
        let g = Tape::new();
        let x = Tensor::from_vec(&[4], vec![-700.0, -1.0, 1.0, 700.0]);
        assert!(g.sigmoid(&x).all_finite());
        assert!(g.softplus(&x).all_finite());
        assert!(g.relu(&x).all_finite());
        let big = Tensor::from_vec(&[2, 2], vec![500.0, -500.0, 300.0, -300.0]);
        assert!(g.softmax_last(&big).all_finite());
    }
}
