use super::{AutodiffError, ParamId, ParamStore, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        input: Var,
        window: usize,
        stride: usize,
    },
    Affine {
        input: Var,
        weight: Var,
    },
    Relu(Var),
    LinComb {
        base: Var,
        terms: Vec<(T, Var)>,
    },
    /// Normalization by the statistics of the input itself; the output doubles
    /// as the normalized activations needed by the backward pass.
    BatchNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    FixedNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Per-channel statistics computed by [`Tape::batch_norm`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of elements each channel was reduced over.
    pub count: u64,
}

/// Records primitive operations so that gradients of a scalar output can be
/// replayed in reverse.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// `(batch, length, channels)` view of a rank-2 or rank-3 tensor.
fn blc(dims: &[usize], what: &str) -> Result<(usize, usize, usize), AutodiffError> {
    match *dims {
        [l, c] => Ok((1, l, c)),
        [b, l, c] => Ok((b, l, c)),
        _ => Err(AutodiffError::Shape(format!(
            "{what} expects (length, channels) or (batch, length, channels), got {dims:?}"
        ))),
    }
}

fn with_blc(rank: usize, b: usize, l: usize, c: usize) -> Vec<usize> {
    if rank == 2 {
        vec![l, c]
    } else {
        vec![b, l, c]
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `len`. Handles issued past that point
    /// become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<(), AutodiffError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::Graph(format!("variable {} is not on the tape", v.0)))
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// Temporal cross-correlation without bias. `input` is `(l, c_in)` or
    /// `(b, l, c_in)`, `kernel` is `(m, c_in, c_out)`.
    pub fn conv_temporal(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, AutodiffError> {
        self.check(input)?;
        self.check(kernel)?;
        let x = self.value(input);
        let w = self.value(kernel);
        let rank = x.dims().len();
        let (b, l, c_in) = blc(x.dims(), "conv_temporal")?;
        let &[m, kc_in, c_out] = w.dims() else {
            return Err(AutodiffError::Shape(format!(
                "kernel must be (m, c_in, c_out), got {:?}",
                w.dims()
            )));
        };
        if kc_in != c_in {
            return Err(AutodiffError::Shape(format!(
                "kernel expects {kc_in} input channels, input has {c_in}"
            )));
        }
        if stride == 0 || m == 0 {
            return Err(AutodiffError::Shape("stride and kernel length must be ≥ 1".into()));
        }
        if l + 2 * padding < m {
            return Err(AutodiffError::Shape(format!(
                "kernel length {m} exceeds padded input length {}",
                l + 2 * padding
            )));
        }
        let l_out = (l + 2 * padding - m) / stride + 1;
        let xd = x.data();
        let wd = w.data();
        let mut out = vec![T::zero(); b * l_out * c_out];
        for bi in 0..b {
            for o in 0..l_out {
                let orow = &mut out[(bi * l_out + o) * c_out..(bi * l_out + o + 1) * c_out];
                for k in 0..m {
                    let Some(i) = (o * stride + k).checked_sub(padding) else {
                        continue;
                    };
                    if i >= l {
                        continue;
                    }
                    let xrow = &xd[(bi * l + i) * c_in..(bi * l + i + 1) * c_in];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &wd[(k * c_in + ci) * c_out..(k * c_in + ci + 1) * c_out];
                        for (acc, &wv) in orow.iter_mut().zip(wrow) {
                            *acc += xv * wv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(with_blc(rank, b, l_out, c_out), out)?;
        Ok(self.push(
            value,
            Op::Conv {
                input,
                kernel,
                stride,
                padding,
            },
        ))
    }

    /// Per-channel mean over temporal windows; trailing frames that do not
    /// fill a window are dropped.
    pub fn avg_pool_temporal(
        &mut self,
        input: Var,
        window: usize,
        stride: usize,
    ) -> Result<Var, AutodiffError> {
        self.check(input)?;
        let x = self.value(input);
        let rank = x.dims().len();
        let (b, l, c) = blc(x.dims(), "avg_pool_temporal")?;
        if window == 0 || stride == 0 {
            return Err(AutodiffError::Shape("window and stride must be ≥ 1".into()));
        }
        if window > l {
            return Err(AutodiffError::Shape(format!(
                "pool window {window} exceeds length {l}"
            )));
        }
        let l_out = (l - window) / stride + 1;
        let scale = T::one() / T::of(window as f64);
        let xd = x.data();
        let mut out = vec![T::zero(); b * l_out * c];
        for bi in 0..b {
            for o in 0..l_out {
                let orow = &mut out[(bi * l_out + o) * c..(bi * l_out + o + 1) * c];
                for k in 0..window {
                    let i = o * stride + k;
                    let xrow = &xd[(bi * l + i) * c..(bi * l + i + 1) * c];
                    for (acc, &v) in orow.iter_mut().zip(xrow) {
                        *acc += v;
                    }
                }
                orow.iter_mut().for_each(|v| *v *= scale);
            }
        }
        let value = Tensor::new(with_blc(rank, b, l_out, c), out)?;
        Ok(self.push(
            value,
            Op::AvgPool {
                input,
                window,
                stride,
            },
        ))
    }

    /// Bias-free linear map over the last axis: `(..., d_in) × (d_in, d_out)`.
    pub fn affine(&mut self, input: Var, weight: Var) -> Result<Var, AutodiffError> {
        self.check(input)?;
        self.check(weight)?;
        let x = self.value(input);
        let w = self.value(weight);
        let &[d_in, d_out] = w.dims() else {
            return Err(AutodiffError::Shape(format!(
                "affine weight must be (d_in, d_out), got {:?}",
                w.dims()
            )));
        };
        let last = *x.dims().last().expect("tensors have rank ≥ 1");
        if last != d_in {
            return Err(AutodiffError::Shape(format!(
                "affine expects {d_in} input features, got {last}"
            )));
        }
        let rows = x.len() / d_in;
        let xd = x.data();
        let wd = w.data();
        let mut out = vec![T::zero(); rows * d_out];
        for r in 0..rows {
            let orow = &mut out[r * d_out..(r + 1) * d_out];
            for (i, &xv) in xd[r * d_in..(r + 1) * d_in].iter().enumerate() {
                for (acc, &wv) in orow.iter_mut().zip(&wd[i * d_out..(i + 1) * d_out]) {
                    *acc += xv * wv;
                }
            }
        }
        let mut dims = x.dims().to_vec();
        *dims.last_mut().expect("rank ≥ 1") = d_out;
        let value = Tensor::new(dims, out)?;
        Ok(self.push(value, Op::Affine { input, weight }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, AutodiffError> {
        self.check(input)?;
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.dims().to_vec(), data)?;
        Ok(self.push(value, Op::Relu(input)))
    }

    /// `base + Σ coef · term`, all operands of identical dims.
    pub fn lincomb(&mut self, base: Var, terms: &[(T, Var)]) -> Result<Var, AutodiffError> {
        self.check(base)?;
        let mut data = self.value(base).data().to_vec();
        let dims = self.value(base).dims().to_vec();
        for &(coef, v) in terms {
            self.check(v)?;
            let t = self.value(v);
            if t.dims() != dims.as_slice() {
                return Err(AutodiffError::Shape(format!(
                    "lincomb operand {:?} does not match base {:?}",
                    t.dims(),
                    dims
                )));
            }
            if coef == T::zero() {
                continue;
            }
            for (acc, &tv) in data.iter_mut().zip(t.data()) {
                let d = coef * tv;
                if d != T::zero() {
                    *acc += d;
                }
            }
        }
        let terms = terms
            .iter()
            .filter(|(c, _)| *c != T::zero())
            .copied()
            .collect();
        Ok(self.push(Tensor::new(dims, data)?, Op::LinComb { base, terms }))
    }

    /// Per-channel statistics over the batch and temporal axes.
    pub fn channel_stats(&self, input: Var) -> Result<ChannelStats, AutodiffError> {
        self.check(input)?;
        let x = self.value(input);
        let (b, l, c) = blc(x.dims(), "channel_stats")?;
        let n = b * l;
        let mut mean = vec![0.0f64; c];
        for row in x.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        // One refinement pass so constant channels get their exact value.
        let mut resid = vec![0.0f64; c];
        for row in x.data().chunks_exact(c) {
            for ((r, &v), &m) in resid.iter_mut().zip(row).zip(&mean) {
                *r += v.as_f64() - m;
            }
        }
        for (m, r) in mean.iter_mut().zip(resid) {
            *m += r / n as f64;
        }
        let mut var = vec![0.0f64; c];
        for row in x.data().chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.as_f64() - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        Ok(ChannelStats {
            mean,
            var,
            count: n as u64,
        })
    }

    /// Normalizes each channel by the input's own biased statistics over the
    /// batch and temporal axes. Gradients flow through the statistics.
    pub fn batch_norm(&mut self, input: Var, eps: f64) -> Result<(Var, ChannelStats), AutodiffError> {
        let stats = self.channel_stats(input)?;
        let x = self.value(input);
        let c = stats.mean.len();
        let mean: Vec<T> = stats.mean.iter().map(|&m| T::of(m)).collect();
        let inv_std: Vec<T> = stats
            .var
            .iter()
            .map(|&v| T::of(1.0 / (v + eps).sqrt()))
            .collect();
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let value = Tensor::new(x.dims().to_vec(), data)?;
        let var = self.push(value, Op::BatchNorm { input, inv_std });
        Ok((var, stats))
    }

    /// Normalizes each channel by externally supplied statistics, which are
    /// treated as constants.
    pub fn fixed_norm(
        &mut self,
        input: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        self.check(input)?;
        let x = self.value(input);
        let (_, _, c) = blc(x.dims(), "fixed_norm")?;
        if mean.len() != c || var.len() != c {
            return Err(AutodiffError::Shape(format!(
                "statistics for {} channels applied to {c} channels",
                mean.len()
            )));
        }
        let mean: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + eps).sqrt())).collect();
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let value = Tensor::new(x.dims().to_vec(), data)?;
        Ok(self.push(value, Op::FixedNorm { input, inv_std }))
    }

    /// Mean over rows of `−log softmax(logits)[label]`. `logits` is
    /// `(..., n)`; one label per row.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        self.check(logits)?;
        let z = self.value(logits);
        let n = *z.dims().last().expect("rank ≥ 1");
        let rows = z.len() / n;
        if rows != labels.len() {
            return Err(AutodiffError::Shape(format!(
                "{rows} logit rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(AutodiffError::Shape(format!("label {bad} out of range for {n} classes")));
        }
        let mut probs = Vec::with_capacity(z.len());
        let mut loss = 0.0f64;
        for (row, &label) in z.data().chunks_exact(n).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).as_f64().exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss += sum.ln() - (row[label] - max).as_f64();
            probs.extend(exps.iter().map(|&e| T::of(e / sum)));
        }
        let value = Tensor::scalar(T::of(loss / rows as f64));
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `Σ weights ⊙ input` as a scalar.
    pub fn weighted_sum(&mut self, input: Var, weights: &[T]) -> Result<Var, AutodiffError> {
        self.check(input)?;
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(AutodiffError::Shape(format!(
                "{} weights for {} values",
                weights.len(),
                x.len()
            )));
        }
        let s = x.data().iter().zip(weights).fold(T::zero(), |a, (&v, &w)| a + v * w);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Accumulates d`loss`/dθ into the gradient of every parameter reached
    /// from `loss`, then clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<(), AutodiffError> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::Graph(format!(
                "backward needs a scalar output, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let pg = store.get_mut(*id).grad.data_mut();
                    for (acc, &v) in pg.iter_mut().zip(&g) {
                        *acc += v;
                    }
                }
                Op::Conv {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[kernel.0].value;
                    let (b, l, c_in) = blc(x.dims(), "conv_temporal")?;
                    let (m, c_out) = (w.dims()[0], w.dims()[2]);
                    let l_out = g.len() / (b * c_out);
                    let (xd, wd) = (x.data(), w.data());
                    let mut dx = vec![T::zero(); xd.len()];
                    let mut dw = vec![T::zero(); wd.len()];
                    for bi in 0..b {
                        for o in 0..l_out {
                            let grow = &g[(bi * l_out + o) * c_out..(bi * l_out + o + 1) * c_out];
                            for k in 0..m {
                                let Some(i) = (o * stride + k).checked_sub(*padding) else {
                                    continue;
                                };
                                if i >= l {
                                    continue;
                                }
                                let base = (bi * l + i) * c_in;
                                for ci in 0..c_in {
                                    let woff = (k * c_in + ci) * c_out;
                                    let wrow = &wd[woff..woff + c_out];
                                    let mut sx = T::zero();
                                    for (&gv, &wv) in grow.iter().zip(wrow) {
                                        sx += gv * wv;
                                    }
                                    dx[base + ci] += sx;
                                    let xv = xd[base + ci];
                                    for (dwv, &gv) in dw[woff..woff + c_out].iter_mut().zip(grow) {
                                        *dwv += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                    add_into(&mut grads[input.0], dx);
                    add_into(&mut grads[kernel.0], dw);
                }
                Op::AvgPool {
                    input,
                    window,
                    stride,
                } => {
                    let x = &self.nodes[input.0].value;
                    let (b, l, c) = blc(x.dims(), "avg_pool_temporal")?;
                    let l_out = (l - window) / stride + 1;
                    let scale = T::one() / T::of(*window as f64);
                    let dx = accumulate(&mut grads[input.0], x.len());
                    for bi in 0..b {
                        for o in 0..l_out {
                            let grow = &g[(bi * l_out + o) * c..(bi * l_out + o + 1) * c];
                            for k in 0..*window {
                                let i = o * stride + k;
                                for (d, &gv) in dx[(bi * l + i) * c..(bi * l + i + 1) * c]
                                    .iter_mut()
                                    .zip(grow)
                                {
                                    *d += gv * scale;
                                }
                            }
                        }
                    }
                }
                Op::Affine { input, weight } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let (d_in, d_out) = (w.dims()[0], w.dims()[1]);
                    let rows = x.len() / d_in;
                    let (xd, wd) = (x.data(), w.data());
                    let mut dx = vec![T::zero(); xd.len()];
                    let mut dw = vec![T::zero(); wd.len()];
                    for r in 0..rows {
                        let grow = &g[r * d_out..(r + 1) * d_out];
                        for i in 0..d_in {
                            let wrow = &wd[i * d_out..(i + 1) * d_out];
                            dx[r * d_in + i] =
                                grow.iter().zip(wrow).fold(T::zero(), |a, (&gv, &wv)| a + gv * wv);
                            let xv = xd[r * d_in + i];
                            for (dwv, &gv) in dw[i * d_out..(i + 1) * d_out].iter_mut().zip(grow) {
                                *dwv += xv * gv;
                            }
                        }
                    }
                    add_into(&mut grads[input.0], dx);
                    add_into(&mut grads[weight.0], dw);
                }
                Op::Relu(input) => {
                    let x = self.nodes[input.0].value.data();
                    let dx = accumulate(&mut grads[input.0], x.len());
                    for ((d, &gv), &xv) in dx.iter_mut().zip(&g).zip(x) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                }
                Op::LinComb { base, terms } => {
                    for &(coef, v) in terms {
                        let d = accumulate(&mut grads[v.0], g.len());
                        for (dv, &gv) in d.iter_mut().zip(&g) {
                            *dv += coef * gv;
                        }
                    }
                    add_into(&mut grads[base.0], g);
                }
                Op::BatchNorm { input, inv_std } => {
                    let y = node.value.data();
                    let c = inv_std.len();
                    let n = T::of((y.len() / c) as f64);
                    let mut sum_g = vec![T::zero(); c];
                    let mut sum_gy = vec![T::zero(); c];
                    for (grow, yrow) in g.chunks_exact(c).zip(y.chunks_exact(c)) {
                        for ch in 0..c {
                            sum_g[ch] += grow[ch];
                            sum_gy[ch] += grow[ch] * yrow[ch];
                        }
                    }
                    let dx = accumulate(&mut grads[input.0], y.len());
                    for ((drow, grow), yrow) in
                        dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.chunks_exact(c))
                    {
                        for ch in 0..c {
                            drow[ch] += inv_std[ch]
                                * (grow[ch] - sum_g[ch] / n - yrow[ch] * sum_gy[ch] / n);
                        }
                    }
                }
                Op::FixedNorm { input, inv_std } => {
                    let c = inv_std.len();
                    let dx = accumulate(&mut grads[input.0], g.len());
                    for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                        for ch in 0..c {
                            drow[ch] += grow[ch] * inv_std[ch];
                        }
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = probs.len() / labels.len();
                    let scale = g[0] / T::of(labels.len() as f64);
                    let dz = accumulate(&mut grads[logits.0], probs.len());
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..n {
                            let target = if j == label { T::one() } else { T::zero() };
                            dz[r * n + j] += scale * (probs[r * n + j] - target);
                        }
                    }
                }
                Op::WeightedSum { input, weights } => {
                    let dx = accumulate(&mut grads[input.0], weights.len());
                    for (d, &w) in dx.iter_mut().zip(weights) {
                        *d += g[0] * w;
                    }
                }
            }
        }
        self.clear();
        Ok(())
    }
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, delta: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
}
