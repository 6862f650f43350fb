//! Forward constructors and backward rules for the primitive suite.

use super::{shape_err, AdError, Graph, Op, Scalar, Tensor, Var};

/// `C := A^{ta} * B^{tb} + beta * C` on row-major slices.
fn gemm<T: Scalar>(
    c: &mut [T],
    beta: T,
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
) {
    let (m, k) = if ta { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (k2, n) = if tb { (b_cols, b_rows) } else { (b_rows, b_cols) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    let (rsa, csa) = if ta { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;
const LAYER_NORM_EPS: f64 = 1.0e-5;

fn softplus<T: Scalar>(z: T) -> T {
    // max(z, 0) + ln(1 + exp(-|z|)), finite for any finite z.
    z.max(T::zero()) + (T::one() + (-z.abs()).exp()).ln()
}

fn sigmoid_scalar<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), AdError> {
        let t = self.value(v);
        match t.shape().len() {
            1 => Ok((t.shape()[0], 1)),
            2 => Ok((t.shape()[0], t.shape()[1])),
            d => Err(shape_err(op, format!("expected 1-D or 2-D tensor, got {d}-D"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(shape_err("matmul", format!("{m}x{ka} * {kb}x{n}")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            out.data_mut(),
            T::zero(),
            self.value(a).data(),
            m,
            ka,
            false,
            self.value(b).data(),
            kb,
            n,
            false,
        );
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, rg, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data);
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data);
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    /// Broadcast a length-`c` bias over the rows of an `(r, c)` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AdError> {
        let (r, c) = self.dims2(x, "add_bias")?;
        if self.value(bias).numel() != c {
            return Err(shape_err(
                "add_bias",
                format!("bias length {} vs {} columns", self.value(bias).numel(), c),
            ));
        }
        let mut data = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for row in 0..r {
            for col in 0..c {
                data[row * c + col] += b[col];
            }
        }
        let out = Tensor::from_vec(self.value(x).shape(), data);
        let rg = self.requires(&[x, bias]);
        Ok(self.push(out, rg, Op::AddBias(x, bias)))
    }

    /// Add an `(lm, c)` tile to an `(r, c)` tensor, repeating every `lm`
    /// rows; used to apply one attention mask across a whole batch.
    pub fn add_tiled(&mut self, x: Var, tile: Var) -> Result<Var, AdError> {
        let (r, c) = self.dims2(x, "add_tiled")?;
        let (lm, cm) = self.dims2(tile, "add_tiled")?;
        if cm != c || lm == 0 || r % lm != 0 {
            return Err(shape_err(
                "add_tiled",
                format!("tile {lm}x{cm} does not tile {r}x{c}"),
            ));
        }
        let mut data = self.value(x).data().to_vec();
        let t = self.value(tile).data();
        for row in 0..r {
            let trow = row % lm;
            for col in 0..c {
                data[row * c + col] += t[trow * c + col];
            }
        }
        let out = Tensor::from_vec(self.value(x).shape(), data);
        let rg = self.requires(&[x, tile]);
        Ok(self.push(out, rg, Op::AddTiled(x, tile)))
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AdError> {
        if inputs.is_empty() || axis > 1 {
            return Err(shape_err("concat", format!("{} inputs, axis {axis}", inputs.len())));
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|&v| self.dims2(v, "concat"))
            .collect::<Result<_, _>>()?;
        let (r0, c0) = dims[0];
        let out = if axis == 0 {
            if dims.iter().any(|&(_, c)| c != c0) {
                return Err(shape_err("concat", "column counts differ".into()));
            }
            let rows: usize = dims.iter().map(|&(r, _)| r).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::from_vec(&[rows, c0], data)
        } else {
            if dims.iter().any(|&(r, _)| r != r0) {
                return Err(shape_err("concat", "row counts differ".into()));
            }
            let cols: usize = dims.iter().map(|&(_, c)| c).sum();
            let mut data = vec![T::zero(); r0 * cols];
            let mut offset = 0;
            for (idx, &v) in inputs.iter().enumerate() {
                let (_, c) = dims[idx];
                let src = self.value(v).data();
                for row in 0..r0 {
                    data[row * cols + offset..row * cols + offset + c]
                        .copy_from_slice(&src[row * c..(row + 1) * c]);
                }
                offset += c;
            }
            Tensor::from_vec(&[r0, cols], data)
        };
        let rg = self.requires(inputs);
        Ok(self.push(out, rg, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Per-sample sequence concatenation of two batch-stacked tensors:
    /// blocks of `seq_a` rows of `a` interleaved with blocks of `seq_b`
    /// rows of `b`.
    pub fn concat_blocks(
        &mut self,
        a: Var,
        b: Var,
        seq_a: usize,
        seq_b: usize,
    ) -> Result<Var, AdError> {
        let (ra, ca) = self.dims2(a, "concat_blocks")?;
        let (rb, cb) = self.dims2(b, "concat_blocks")?;
        if ca != cb || seq_a == 0 || seq_b == 0 || ra % seq_a != 0 || rb % seq_b != 0 {
            return Err(shape_err(
                "concat_blocks",
                format!("a {ra}x{ca} / {seq_a}, b {rb}x{cb} / {seq_b}"),
            ));
        }
        let batch = ra / seq_a;
        if rb / seq_b != batch {
            return Err(shape_err(
                "concat_blocks",
                format!("batch {} vs {}", batch, rb / seq_b),
            ));
        }
        let c = ca;
        let mut data = Vec::with_capacity((ra + rb) * c);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for blk in 0..batch {
            data.extend_from_slice(&da[blk * seq_a * c..(blk + 1) * seq_a * c]);
            data.extend_from_slice(&db[blk * seq_b * c..(blk + 1) * seq_b * c]);
        }
        let out = Tensor::from_vec(&[ra + rb, c], data);
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, rg, Op::ConcatBlocks { a, b, seq_a, seq_b }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + len > c || len == 0 {
            return Err(shape_err("slice_cols", format!("[{start}, {start}+{len}) of {c}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        let out = Tensor::from_vec(&[r, len], data);
        let rg = self.requires(&[x]);
        Ok(self.push(out, rg, Op::SliceCols { x, start, len }))
    }

    /// Reinterpret the data under a new shape of the same length.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} to {:?}", self.value(x).shape(), shape),
            ));
        }
        let out = Tensor::from_vec(shape, self.value(x).data().to_vec());
        let rg = self.requires(&[x]);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, AdError> {
        let mut total = T::zero();
        for &v in self.value(x).data() {
            total += v;
        }
        let rg = self.requires(&[x]);
        Ok(self.push(Tensor::scalar(total), rg, Op::SumAll(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, AdError> {
        let (r, c) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); r * c];
        for row in 0..r {
            for col in 0..c {
                data[col * r + row] = src[row * c + col];
            }
        }
        let out = Tensor::from_vec(&[c, r], data);
        let rg = self.requires(&[x]);
        Ok(self.push(out, rg, Op::Transpose(x)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, AdError> {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.requires(&[x]);
        Ok(self.push(out, rg, Op::Scale(x, factor)))
    }

    /// GELU with the tanh approximation; the backward pass differentiates
    /// the approximation itself.
    pub fn gelu(&mut self, x: Var) -> Result<Var, AdError> {
        let c0 = T::of_f64(GELU_C0);
        let c1 = T::of_f64(GELU_C1);
        let half = T::of_f64(0.5);
        let src = self.value(x).data();
        // tanh dominates the cost of this op; cache it for the backward pass.
        let mut tanh_u = Vec::with_capacity(src.len());
        let mut data = Vec::with_capacity(src.len());
        for &v in src {
            let t = (c0 * (v + c1 * v * v * v)).tanh();
            tanh_u.push(t);
            data.push(half * v * (T::one() + t));
        }
        let out = Tensor::from_vec(self.value(x).shape(), data);
        let rg = self.requires(&[x]);
        Ok(self.push(out, rg, Op::Gelu { x, tanh_u }))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AdError> {
        let (r, c) = self.dims2(x, "layer_norm")?;
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "gain {} / bias {} vs {} columns",
                    self.value(gain).numel(),
                    self.value(bias).numel(),
                    c
                ),
            ));
        }
        let eps = T::of_f64(LAYER_NORM_EPS);
        let inv_c = T::one() / T::of_f64(c as f64);
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut data = vec![T::zero(); r * c];
        for row in 0..r {
            let s = &src[row * c..(row + 1) * c];
            let mut mean = T::zero();
            for &v in s {
                mean += v;
            }
            mean = mean * inv_c;
            let mut var = T::zero();
            for &v in s {
                let d = v - mean;
                var += d * d;
            }
            var = var * inv_c;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[row] = istd;
            for col in 0..c {
                let xhat = (s[col] - mean) * istd;
                normalized[row * c + col] = xhat;
                data[row * c + col] = g[col] * xhat + b[col];
            }
        }
        let out = Tensor::from_vec(self.value(x).shape(), data);
        let rg = self.requires(&[x, gain, bias]);
        Ok(self.push(out, rg, Op::LayerNorm { x, gain, bias, normalized, inv_std }))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AdError> {
        let (r, c) = self.dims2(x, "softmax")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); r * c];
        for row in 0..r {
            let s = &src[row * c..(row + 1) * c];
            let mut max = s[0];
            for &v in &s[1..] {
                if v > max {
                    max = v;
                }
            }
            // exp underflows (slowly, via the libm slow path) for strongly
            // masked entries; anything below -80 contributes < 2e-35 to the
            // sum, so short-circuit it to exactly zero.
            let floor = T::of_f64(-80.0);
            let mut sum = T::zero();
            for col in 0..c {
                let d = s[col] - max;
                let e = if d < floor { T::zero() } else { d.exp() };
                data[row * c + col] = e;
                sum += e;
            }
            let inv = T::one() / sum;
            for col in 0..c {
                data[row * c + col] *= inv;
            }
        }
        let out = Tensor::from_vec(self.value(x).shape(), data);
        let rg = self.requires(&[x]);
        Ok(self.push(out, rg, Op::Softmax(x)))
    }

    /// `softmax(logits + mask)` with the `(lm, c)` mask tiled over the batch,
    /// fused into one op: the masked intermediate is never materialized, and
    /// entries the mask drives below the numeric floor skip `exp` entirely.
    pub fn softmax_masked(&mut self, logits: Var, mask: Var) -> Result<Var, AdError> {
        let (r, c) = self.dims2(logits, "softmax_masked")?;
        let (lm, cm) = self.dims2(mask, "softmax_masked")?;
        if cm != c || lm == 0 || r % lm != 0 {
            return Err(shape_err(
                "softmax_masked",
                format!("mask {lm}x{cm} does not tile {r}x{c}"),
            ));
        }
        let src = self.value(logits).data();
        let mv = self.value(mask).data();
        let floor = T::of_f64(-80.0);
        let mut data: Vec<T> = vec![T::zero(); r * c];
        for row in 0..r {
            let s = &src[row * c..(row + 1) * c];
            let trow = row % lm;
            let m = &mv[trow * c..(trow + 1) * c];
            let d = &mut data[row * c..(row + 1) * c];
            for ((dv, &sv), &tv) in d.iter_mut().zip(s).zip(m) {
                *dv = sv + tv;
            }
            let mut max = d[0];
            for &v in d[1..].iter() {
                if v > max {
                    max = v;
                }
            }
            let cutoff = max + floor;
            let mut sum = T::zero();
            for dv in d.iter_mut() {
                let e = if *dv < cutoff { T::zero() } else { (*dv - max).exp() };
                *dv = e;
                sum += e;
            }
            let inv = T::one() / sum;
            for dv in d.iter_mut() {
                *dv *= inv;
            }
        }
        let out = Tensor::from_vec(self.value(logits).shape(), data);
        let rg = self.requires(&[logits, mask]);
        Ok(self.push(out, rg, Op::SoftmaxMasked { x: logits, mask }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AdError> {
        let out = self.value(x).map(sigmoid_scalar);
        let rg = self.requires(&[x]);
        Ok(self.push(out, rg, Op::Sigmoid(x)))
    }

    /// Numerically stable binary cross-entropy with logits, sum reduction:
    /// `sum_i t_i softplus(-l_i) + (1 - t_i) softplus(l_i)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var, AdError> {
        if self.value(logits).shape() != self.value(targets).shape() {
            return Err(shape_err(
                "bce_with_logits",
                format!(
                    "{:?} vs {:?}",
                    self.value(logits).shape(),
                    self.value(targets).shape()
                ),
            ));
        }
        let mut total = T::zero();
        for (&l, &t) in self.value(logits).data().iter().zip(self.value(targets).data()) {
            total += t * softplus(-l) + (T::one() - t) * softplus(l);
        }
        let rg = self.requires(&[logits, targets]);
        Ok(self.push(Tensor::scalar(total), rg, Op::BceWithLogits { logits, targets }))
    }

    /// Shared sequence-mixing matrix applied per batch block:
    /// `w (p, seq_in)` times each `(seq_in, d)` block of `x (B*seq_in, d)`.
    pub fn seq_linear(&mut self, w: Var, x: Var, seq_in: usize) -> Result<Var, AdError> {
        let (p, wi) = self.dims2(w, "seq_linear")?;
        let (r, d) = self.dims2(x, "seq_linear")?;
        if wi != seq_in || seq_in == 0 || r % seq_in != 0 {
            return Err(shape_err(
                "seq_linear",
                format!("w {p}x{wi}, x {r}x{d}, seq_in {seq_in}"),
            ));
        }
        let batch = r / seq_in;
        let mut data = vec![T::zero(); batch * p * d];
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        for blk in 0..batch {
            gemm(
                &mut data[blk * p * d..(blk + 1) * p * d],
                T::zero(),
                wd,
                p,
                seq_in,
                false,
                &xd[blk * seq_in * d..(blk + 1) * seq_in * d],
                seq_in,
                d,
                false,
            );
        }
        let out = Tensor::from_vec(&[batch * p, d], data);
        let rg = self.requires(&[w, x]);
        Ok(self.push(out, rg, Op::SeqLinear { w, x, seq_in }))
    }

    /// Per-block `A_b * B_b^T`: `a (B*seq_a, k)`, `b (B*seq_b, k)` to
    /// `(B*seq_a, seq_b)`. Attention scores.
    pub fn batched_matmul_nt(
        &mut self,
        a: Var,
        b: Var,
        seq_a: usize,
        seq_b: usize,
    ) -> Result<Var, AdError> {
        self.batched_matmul(a, b, seq_a, seq_b, true)
    }

    /// Per-block `A_b * B_b`: `a (B*seq_a, seq_b)`, `b (B*seq_b, k)` to
    /// `(B*seq_a, k)`. Attention applied to values.
    pub fn batched_matmul_nn(
        &mut self,
        a: Var,
        b: Var,
        seq_a: usize,
        seq_b: usize,
    ) -> Result<Var, AdError> {
        self.batched_matmul(a, b, seq_a, seq_b, false)
    }

    fn batched_matmul(
        &mut self,
        a: Var,
        b: Var,
        seq_a: usize,
        seq_b: usize,
        transpose_b: bool,
    ) -> Result<Var, AdError> {
        let (ra, ca) = self.dims2(a, "batched_matmul")?;
        let (rb, cb) = self.dims2(b, "batched_matmul")?;
        if seq_a == 0 || seq_b == 0 || ra % seq_a != 0 || rb % seq_b != 0 {
            return Err(shape_err(
                "batched_matmul",
                format!("a {ra}x{ca} / {seq_a}, b {rb}x{cb} / {seq_b}"),
            ));
        }
        let batch = ra / seq_a;
        if rb / seq_b != batch || (transpose_b && ca != cb) || (!transpose_b && ca != seq_b) {
            return Err(shape_err(
                "batched_matmul",
                format!(
                    "a {ra}x{ca}, b {rb}x{cb}, seq_a {seq_a}, seq_b {seq_b}, tb {transpose_b}"
                ),
            ));
        }
        let out_cols = if transpose_b { seq_b } else { cb };
        let mut data = vec![T::zero(); ra * out_cols];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for blk in 0..batch {
            gemm(
                &mut data[blk * seq_a * out_cols..(blk + 1) * seq_a * out_cols],
                T::zero(),
                &ad[blk * seq_a * ca..(blk + 1) * seq_a * ca],
                seq_a,
                ca,
                false,
                &bd[blk * seq_b * cb..(blk + 1) * seq_b * cb],
                seq_b,
                cb,
                transpose_b,
            );
        }
        let out = Tensor::from_vec(&[ra, out_cols], data);
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, rg, Op::BatchedMatmul { a, b, seq_a, seq_b, transpose_b }))
    }

    /// Initial embedding: scale row `t mod L` of the `(L, d)` table by the
    /// `t`-th input scalar, producing `(B*L, d)` tokens.
    pub fn embed_scale(&mut self, scalars: Var, table: Var) -> Result<Var, AdError> {
        let count = self.value(scalars).numel();
        let (l, d) = self.dims2(table, "embed_scale")?;
        if l == 0 || count % l != 0 {
            return Err(shape_err(
                "embed_scale",
                format!("{count} scalars vs table {l}x{d}"),
            ));
        }
        let sd = self.value(scalars).data();
        let td = self.value(table).data();
        let mut data = vec![T::zero(); count * d];
        for (row, &s) in sd.iter().enumerate() {
            let trow = row % l;
            for col in 0..d {
                data[row * d + col] = s * td[trow * d + col];
            }
        }
        let out = Tensor::from_vec(&[count, d], data);
        let rg = self.requires(&[scalars, table]);
        Ok(self.push(out, rg, Op::EmbedScale { scalars, table }))
    }
}

/// Propagate the gradient of node `i` to its inputs.
pub(super) fn backward_step<T: Scalar>(graph: &mut Graph<T>, i: usize) {
    let mut deltas: Vec<(Var, Tensor<T>)> = Vec::new();
    {
        let nodes = &graph.nodes;
        let node = &nodes[i];
        let grad = node.grad.as_ref().expect("grad present");
        let g = grad.data();
        let val = |v: Var| nodes[v.0].value.data();
        let shape_of = |v: Var| nodes[v.0].value.shape();
        let dims = |v: Var| -> (usize, usize) {
            let t = &nodes[v.0].value;
            match t.shape().len() {
                1 => (t.shape()[0], 1),
                _ => (t.shape()[0], t.shape()[1]),
            }
        };
        let needs = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = dims(*a);
                let (_, n) = dims(*b);
                if needs(*a) {
                    let mut da = Tensor::zeros(shape_of(*a));
                    gemm(da.data_mut(), T::zero(), g, m, n, false, val(*b), k, n, true);
                    deltas.push((*a, da));
                }
                if needs(*b) {
                    let mut db = Tensor::zeros(shape_of(*b));
                    gemm(db.data_mut(), T::zero(), val(*a), m, k, true, g, m, n, false);
                    deltas.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        deltas.push((v, grad.clone()));
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = Tensor::from_vec(
                        shape_of(*a),
                        g.iter().zip(val(*b)).map(|(&gv, &bv)| gv * bv).collect(),
                    );
                    deltas.push((*a, d));
                }
                if needs(*b) {
                    let d = Tensor::from_vec(
                        shape_of(*b),
                        g.iter().zip(val(*a)).map(|(&gv, &av)| gv * av).collect(),
                    );
                    deltas.push((*b, d));
                }
            }
            Op::AddBias(x, bias) => {
                if needs(*x) {
                    deltas.push((*x, grad.clone()));
                }
                if needs(*bias) {
                    let (r, c) = dims(*x);
                    let mut db = Tensor::zeros(shape_of(*bias));
                    for row in 0..r {
                        for col in 0..c {
                            db.data_mut()[col] += g[row * c + col];
                        }
                    }
                    deltas.push((*bias, db));
                }
            }
            Op::AddTiled(x, tile) => {
                if needs(*x) {
                    deltas.push((*x, grad.clone()));
                }
                if needs(*tile) {
                    let (r, c) = dims(*x);
                    let (lm, _) = dims(*tile);
                    let mut dt = Tensor::zeros(shape_of(*tile));
                    for row in 0..r {
                        let trow = row % lm;
                        for col in 0..c {
                            dt.data_mut()[trow * c + col] += g[row * c + col];
                        }
                    }
                    deltas.push((*tile, dt));
                }
            }
            Op::Concat { inputs, axis } => {
                let dims_in: Vec<(usize, usize)> = inputs.iter().map(|&v| dims(v)).collect();
                if *axis == 0 {
                    let mut offset = 0;
                    for (idx, &v) in inputs.iter().enumerate() {
                        let (r, c) = dims_in[idx];
                        if needs(v) {
                            let d = Tensor::from_vec(
                                shape_of(v),
                                g[offset..offset + r * c].to_vec(),
                            );
                            deltas.push((v, d));
                        }
                        offset += r * c;
                    }
                } else {
                    let r0 = dims_in[0].0;
                    let total_cols: usize = dims_in.iter().map(|&(_, c)| c).sum();
                    let mut offset = 0;
                    for (idx, &v) in inputs.iter().enumerate() {
                        let (_, c) = dims_in[idx];
                        if needs(v) {
                            let mut data = Vec::with_capacity(r0 * c);
                            for row in 0..r0 {
                                data.extend_from_slice(
                                    &g[row * total_cols + offset..row * total_cols + offset + c],
                                );
                            }
                            deltas.push((v, Tensor::from_vec(shape_of(v), data)));
                        }
                        offset += c;
                    }
                }
            }
            Op::ConcatBlocks { a, b, seq_a, seq_b } => {
                let (ra, c) = dims(*a);
                let batch = ra / seq_a;
                let stride = (seq_a + seq_b) * c;
                if needs(*a) {
                    let mut data = Vec::with_capacity(ra * c);
                    for blk in 0..batch {
                        data.extend_from_slice(&g[blk * stride..blk * stride + seq_a * c]);
                    }
                    deltas.push((*a, Tensor::from_vec(shape_of(*a), data)));
                }
                if needs(*b) {
                    let (rb, _) = dims(*b);
                    let mut data = Vec::with_capacity(rb * c);
                    for blk in 0..batch {
                        data.extend_from_slice(
                            &g[blk * stride + seq_a * c..(blk + 1) * stride],
                        );
                    }
                    deltas.push((*b, Tensor::from_vec(shape_of(*b), data)));
                }
            }
            Op::SliceCols { x, start, len } => {
                if needs(*x) {
                    let (r, c) = dims(*x);
                    let mut dx = Tensor::zeros(shape_of(*x));
                    for row in 0..r {
                        for col in 0..*len {
                            dx.data_mut()[row * c + start + col] = g[row * len + col];
                        }
                    }
                    deltas.push((*x, dx));
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    deltas.push((*x, Tensor::from_vec(shape_of(*x), g.to_vec())));
                }
            }
            Op::SumAll(x) => {
                if needs(*x) {
                    let gs = g[0];
                    let n = nodes[x.0].value.numel();
                    deltas.push((*x, Tensor::from_vec(shape_of(*x), vec![gs; n])));
                }
            }
            Op::Transpose(x) => {
                if needs(*x) {
                    let (r, c) = dims(*x);
                    let mut dx = Tensor::zeros(shape_of(*x));
                    for row in 0..r {
                        for col in 0..c {
                            dx.data_mut()[row * c + col] = g[col * r + row];
                        }
                    }
                    deltas.push((*x, dx));
                }
            }
            Op::Scale(x, factor) => {
                if needs(*x) {
                    let f = *factor;
                    deltas.push((*x, grad.map(|v| v * f)));
                }
            }
            Op::Gelu { x, tanh_u } => {
                if needs(*x) {
                    let c0 = T::of_f64(GELU_C0);
                    let c1 = T::of_f64(GELU_C1);
                    let half = T::of_f64(0.5);
                    let three = T::of_f64(3.0);
                    let d = Tensor::from_vec(
                        shape_of(*x),
                        val(*x)
                            .iter()
                            .zip(tanh_u)
                            .zip(g)
                            .map(|((&v, &t), &gv)| {
                                let du = c0 * (T::one() + three * c1 * v * v);
                                gv * (half * (T::one() + t)
                                    + half * v * (T::one() - t * t) * du)
                            })
                            .collect(),
                    );
                    deltas.push((*x, d));
                }
            }
            Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                let (r, c) = dims(*x);
                let gainv = val(*gain);
                let inv_c = T::one() / T::of_f64(c as f64);
                if needs(*gain) {
                    let mut dg = Tensor::zeros(shape_of(*gain));
                    for row in 0..r {
                        for col in 0..c {
                            dg.data_mut()[col] += g[row * c + col] * normalized[row * c + col];
                        }
                    }
                    deltas.push((*gain, dg));
                }
                if needs(*bias) {
                    let mut db = Tensor::zeros(shape_of(*bias));
                    for row in 0..r {
                        for col in 0..c {
                            db.data_mut()[col] += g[row * c + col];
                        }
                    }
                    deltas.push((*bias, db));
                }
                if needs(*x) {
                    let mut dx = Tensor::zeros(shape_of(*x));
                    for row in 0..r {
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for col in 0..c {
                            let dxhat = g[row * c + col] * gainv[col];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * normalized[row * c + col];
                        }
                        mean_dxhat = mean_dxhat * inv_c;
                        mean_dxhat_xhat = mean_dxhat_xhat * inv_c;
                        for col in 0..c {
                            let dxhat = g[row * c + col] * gainv[col];
                            dx.data_mut()[row * c + col] = inv_std[row]
                                * (dxhat
                                    - mean_dxhat
                                    - normalized[row * c + col] * mean_dxhat_xhat);
                        }
                    }
                    deltas.push((*x, dx));
                }
            }
            Op::Softmax(x) => {
                if needs(*x) {
                    let (r, c) = dims(*x);
                    let s = node.value.data();
                    let mut dx = Tensor::zeros(shape_of(*x));
                    for row in 0..r {
                        let mut dot = T::zero();
                        for col in 0..c {
                            dot += g[row * c + col] * s[row * c + col];
                        }
                        for col in 0..c {
                            dx.data_mut()[row * c + col] =
                                s[row * c + col] * (g[row * c + col] - dot);
                        }
                    }
                    deltas.push((*x, dx));
                }
            }
            Op::SoftmaxMasked { x, mask } => {
                // Same Jacobian as plain softmax in `x` (the additive mask
                // shifts logits only); the mask gradient is the `x` gradient
                // summed over the batch tiles.
                let (r, c) = dims(*x);
                let (lm, _) = dims(*mask);
                let s = node.value.data();
                let want_x = needs(*x);
                let want_mask = needs(*mask);
                let mut dx: Vec<T> = vec![T::zero(); if want_x { r * c } else { 0 }];
                let mut dm = Tensor::zeros(shape_of(*mask));
                for row in 0..r {
                    let sr = &s[row * c..(row + 1) * c];
                    let gr = &g[row * c..(row + 1) * c];
                    let mut dot = T::zero();
                    for (&sv, &gv) in sr.iter().zip(gr) {
                        dot += gv * sv;
                    }
                    if want_x {
                        let dxr = &mut dx[row * c..(row + 1) * c];
                        for ((dv, &sv), &gv) in dxr.iter_mut().zip(sr).zip(gr) {
                            *dv = sv * (gv - dot);
                        }
                    }
                    if want_mask {
                        let trow = row % lm;
                        let dmr = &mut dm.data_mut()[trow * c..(trow + 1) * c];
                        for ((&sv, &gv), dv) in sr.iter().zip(gr).zip(dmr) {
                            *dv += sv * (gv - dot);
                        }
                    }
                }
                if want_x {
                    deltas.push((*x, Tensor::from_vec(shape_of(*x), dx)));
                }
                if want_mask {
                    deltas.push((*mask, dm));
                }
            }
            Op::Sigmoid(x) => {
                if needs(*x) {
                    let s = node.value.data();
                    let d = Tensor::from_vec(
                        shape_of(*x),
                        s.iter()
                            .zip(g)
                            .map(|(&sv, &gv)| gv * sv * (T::one() - sv))
                            .collect(),
                    );
                    deltas.push((*x, d));
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let gs = g[0];
                if needs(*logits) {
                    let d = Tensor::from_vec(
                        shape_of(*logits),
                        val(*logits)
                            .iter()
                            .zip(val(*targets))
                            .map(|(&l, &t)| gs * (sigmoid_scalar(l) - t))
                            .collect(),
                    );
                    deltas.push((*logits, d));
                }
                if needs(*targets) {
                    let d = Tensor::from_vec(
                        shape_of(*targets),
                        val(*logits).iter().map(|&l| gs * -l).collect(),
                    );
                    deltas.push((*targets, d));
                }
            }
            Op::SeqLinear { w, x, seq_in } => {
                let (p, _) = dims(*w);
                let (r, d) = dims(*x);
                let batch = r / seq_in;
                if needs(*w) {
                    let mut dw = Tensor::zeros(shape_of(*w));
                    for blk in 0..batch {
                        gemm(
                            dw.data_mut(),
                            T::one(),
                            &g[blk * p * d..(blk + 1) * p * d],
                            p,
                            d,
                            false,
                            &val(*x)[blk * seq_in * d..(blk + 1) * seq_in * d],
                            *seq_in,
                            d,
                            true,
                        );
                    }
                    deltas.push((*w, dw));
                }
                if needs(*x) {
                    let mut dx = Tensor::zeros(shape_of(*x));
                    for blk in 0..batch {
                        gemm(
                            &mut dx.data_mut()[blk * seq_in * d..(blk + 1) * seq_in * d],
                            T::zero(),
                            val(*w),
                            p,
                            *seq_in,
                            true,
                            &g[blk * p * d..(blk + 1) * p * d],
                            p,
                            d,
                            false,
                        );
                    }
                    deltas.push((*x, dx));
                }
            }
            Op::BatchedMatmul { a, b, seq_a, seq_b, transpose_b } => {
                let (ra, ca) = dims(*a);
                let (_, cb) = dims(*b);
                let batch = ra / seq_a;
                let out_cols = if *transpose_b { *seq_b } else { cb };
                if needs(*a) {
                    let mut da = Tensor::zeros(shape_of(*a));
                    for blk in 0..batch {
                        let gb = &g[blk * seq_a * out_cols..(blk + 1) * seq_a * out_cols];
                        let bb = &val(*b)[blk * seq_b * cb..(blk + 1) * seq_b * cb];
                        // nt: dA = dY * B; nn: dA = dY * B^T.
                        gemm(
                            &mut da.data_mut()[blk * seq_a * ca..(blk + 1) * seq_a * ca],
                            T::zero(),
                            gb,
                            *seq_a,
                            out_cols,
                            false,
                            bb,
                            *seq_b,
                            cb,
                            !*transpose_b,
                        );
                    }
                    deltas.push((*a, da));
                }
                if needs(*b) {
                    let mut db = Tensor::zeros(shape_of(*b));
                    for blk in 0..batch {
                        let gb = &g[blk * seq_a * out_cols..(blk + 1) * seq_a * out_cols];
                        let ab = &val(*a)[blk * seq_a * ca..(blk + 1) * seq_a * ca];
                        // nt: dB = dY^T * A; nn: dB = A^T * dY.
                        if *transpose_b {
                            gemm(
                                &mut db.data_mut()[blk * seq_b * cb..(blk + 1) * seq_b * cb],
                                T::zero(),
                                gb,
                                *seq_a,
                                out_cols,
                                true,
                                ab,
                                *seq_a,
                                ca,
                                false,
                            );
                        } else {
                            gemm(
                                &mut db.data_mut()[blk * seq_b * cb..(blk + 1) * seq_b * cb],
                                T::zero(),
                                ab,
                                *seq_a,
                                ca,
                                true,
                                gb,
                                *seq_a,
                                out_cols,
                                false,
                            );
                        }
                    }
                    deltas.push((*b, db));
                }
            }
            Op::EmbedScale { scalars, table } => {
                let count = nodes[scalars.0].value.numel();
                let (l, d) = dims(*table);
                if needs(*scalars) {
                    let td = val(*table);
                    let mut ds = Tensor::zeros(shape_of(*scalars));
                    for row in 0..count {
                        let trow = row % l;
                        let mut dot = T::zero();
                        for col in 0..d {
                            dot += g[row * d + col] * td[trow * d + col];
                        }
                        ds.data_mut()[row] = dot;
                    }
                    deltas.push((*scalars, ds));
                }
                if needs(*table) {
                    let sd = val(*scalars);
                    let mut dt = Tensor::zeros(shape_of(*table));
                    for row in 0..count {
                        let trow = row % l;
                        let s = sd[row];
                        for col in 0..d {
                            dt.data_mut()[trow * d + col] += s * g[row * d + col];
                        }
                    }
                    deltas.push((*table, dt));
                }
            }
        }
    }
    for (v, d) in deltas {
        graph.accumulate(v, d);
    }
}
