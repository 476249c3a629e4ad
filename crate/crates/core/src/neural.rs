//! Dueling Q-network: a rectified-linear trunk feeding a scalar value head and
//! a per-action advantage head, combined as `Q = V + (A - mean(A))`.
//!
//! Parameters live in one flat vector so that the optimizer, target sync,
//! checkpoints and the finite-difference checker can treat them uniformly.
//! Each dense layer stores its weights input-major (`w[i * out + j]`), so the
//! forward pass is a sequence of contiguous axpy updates.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Result, SimError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
}

impl Architecture {
    /// Three hidden layers of width 32.
    pub fn standard(inputs: usize, actions: usize) -> Self {
        Architecture {
            inputs,
            hidden: vec![32, 32, 32],
            actions,
        }
    }

    fn last_hidden(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.inputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    weights: usize,
    bias: usize,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

fn layout(arch: &Architecture) -> (Vec<Dense>, usize) {
    let mut dims = vec![arch.inputs];
    dims.extend(&arch.hidden);
    let mut layers = Vec::with_capacity(dims.len() + 1);
    let mut offset = 0;
    let push = |inputs: usize, outputs: usize, offset: &mut usize| {
        let d = Dense {
            weights: *offset,
            bias: *offset + inputs * outputs,
            inputs,
            outputs,
        };
        *offset += d.len();
        d
    };
    for w in dims.windows(2) {
        layers.push(push(w[0], w[1], &mut offset));
    }
    let h = arch.last_hidden();
    layers.push(push(h, 1, &mut offset));
    layers.push(push(h, arch.actions, &mut offset));
    (layers, offset)
}

#[derive(Debug, Clone)]
pub struct QNetwork<T> {
    arch: Architecture,
    layers: Vec<Dense>,
    params: Vec<T>,
    /// Per-unit mean of the advantage weights and the mean advantage bias,
    /// so that `mean(A) = mean_bias + h . mean_row` costs O(h). Cleared on
    /// every parameter change.
    head_means: OnceLock<(Vec<T>, T)>,
}

impl<T: PartialEq> PartialEq for QNetwork<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    /// Post-activation outputs of each trunk layer.
    pub hidden: Vec<Vec<T>>,
    pub value: T,
    pub advantage: Vec<T>,
    pub q: Vec<T>,
}

/// One regression sample: input features, chosen action, target value.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, T> {
    pub input: &'a [T],
    pub action: usize,
    pub target: T,
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent partial sums.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl<T: Scalar> QNetwork<T> {
    /// Weights and biases uniform on `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let (layers, total) = layout(&arch);
        let mut params = vec![T::zero(); total];
        for d in &layers {
            let bound = 1.0 / (d.inputs.max(1) as f64).sqrt();
            for p in &mut params[d.weights..d.weights + d.len()] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
        }
        QNetwork {
            arch,
            layers,
            params,
            head_means: OnceLock::new(),
        }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let (layers, total) = layout(&arch);
        QNetwork {
            arch,
            layers,
            params: vec![T::zero(); total],
            head_means: OnceLock::new(),
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        self.head_means.take();
        &mut self.params
    }

    fn head_means(&self) -> &(Vec<T>, T) {
        self.head_means.get_or_init(|| {
            let al = self.advantage_layer();
            let a = al.outputs;
            let inv = T::one() / T::lit(a as f64);
            let w = &self.params[al.weights..al.bias];
            let row = (0..al.inputs)
                .map(|i| w[i * a..(i + 1) * a].iter().copied().sum::<T>() * inv)
                .collect();
            let bias = self.params[al.bias..al.bias + a].iter().copied().sum::<T>() * inv;
            (row, bias)
        })
    }

    /// Mean advantage over actions for last-layer activations `top`.
    fn mean_advantage(&self, top: &[T]) -> T {
        let (row, bias) = self.head_means();
        let mut m = *bias;
        for (&h, &r) in top.iter().zip(row) {
            if h != T::zero() {
                m += h * r;
            }
        }
        m
    }

    /// Post-activation outputs of every trunk layer.
    fn trunk_forward(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut hidden: Vec<Vec<T>> = Vec::with_capacity(self.trunk().len());
        for &d in self.trunk() {
            let input = hidden.last().map_or(x, Vec::as_slice);
            let mut out = Vec::with_capacity(d.outputs);
            self.dense(d, input, &mut out);
            for v in &mut out {
                *v = v.max(T::zero());
            }
            hidden.push(out);
        }
        hidden
    }

    /// `Q(x, a)` from the trunk output without evaluating the other actions.
    /// Agrees bit for bit with `forward(x)[a]`.
    fn q_from_top(&self, top: &[T], action: usize) -> T {
        let vl = self.value_layer();
        let al = self.advantage_layer();
        let mut value = Vec::with_capacity(1);
        self.dense(vl, top, &mut value);
        let a = al.outputs;
        let w = &self.params[al.weights..al.bias];
        let mut adv = self.params[al.bias + action];
        for (i, &h) in top.iter().enumerate() {
            if h != T::zero() {
                adv += h * w[i * a + action];
            }
        }
        value[0] + (adv - self.mean_advantage(top))
    }

    /// Q-value of a single action.
    pub fn q_value(&self, x: &[T], action: usize) -> Result<T> {
        self.check_input(x)?;
        if action >= self.arch.actions {
            return Err(SimError::ShapeMismatch {
                expected: self.arch.actions,
                got: action,
            });
        }
        let hidden = self.trunk_forward(x);
        Ok(self.q_from_top(hidden.last().map_or(x, Vec::as_slice), action))
    }

    fn trunk(&self) -> &[Dense] {
        &self.layers[..self.layers.len() - 2]
    }

    fn value_layer(&self) -> Dense {
        self.layers[self.layers.len() - 2]
    }

    fn advantage_layer(&self) -> Dense {
        self.layers[self.layers.len() - 1]
    }

    fn dense(&self, d: Dense, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend_from_slice(&self.params[d.bias..d.bias + d.outputs]);
        let w = &self.params[d.weights..d.bias];
        for (i, &xi) in input.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, &w[i * d.outputs..(i + 1) * d.outputs], out);
            }
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.arch.inputs {
            return Err(SimError::ShapeMismatch {
                expected: self.arch.inputs,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_full(&self, x: &[T]) -> Result<Forward<T>> {
        self.check_input(x)?;
        let hidden = self.trunk_forward(x);
        let top = hidden.last().map_or(x, Vec::as_slice);
        let mut value = Vec::with_capacity(1);
        self.dense(self.value_layer(), top, &mut value);
        let mut advantage = Vec::with_capacity(self.arch.actions);
        self.dense(self.advantage_layer(), top, &mut advantage);
        let value = value[0];
        let mean = self.mean_advantage(top);
        let q = advantage.iter().map(|&a| value + (a - mean)).collect();
        Ok(Forward { hidden, value, advantage, q })
    }

    /// Q-values for every action.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_full(x)?.q)
    }

    /// Squared error `(y - Q(x, a))^2`.
    pub fn loss(&self, sample: Sample<'_, T>) -> Result<T> {
        let e = sample.target - self.q_value(sample.input, sample.action)?;
        Ok(e * e)
    }

    /// Exact gradient of `(y - Q(x, a))^2` with respect to every parameter.
    pub fn backward(&self, x: &[T], action: usize, target: T) -> Result<Vec<T>> {
        let mut grads = vec![T::zero(); self.params.len()];
        self.accumulate_gradients(&[Sample { input: x, action, target }], &mut grads)?;
        Ok(grads)
    }

    /// Mean squared-error gradient over `batch`, returned with the mean loss.
    pub fn batch_gradient(&self, batch: &[Sample<'_, T>]) -> Result<(Vec<T>, T)> {
        let mut grads = vec![T::zero(); self.params.len()];
        let total = self.accumulate_gradients(batch, &mut grads)?;
        if !batch.is_empty() {
            let inv = T::one() / T::lit(batch.len() as f64);
            grads.iter_mut().for_each(|g| *g *= inv);
            return Ok((grads, total * inv));
        }
        Ok((grads, total))
    }

    /// Adds the summed per-sample gradients into `grads` and returns the
    /// summed loss.
    ///
    /// The advantage head only sees `dQ_a/dA_j = [j == a] - 1/|A|`, so its
    /// weight gradient is accumulated as a sparse column update plus one
    /// shared rank-one correction for the whole batch.
    fn accumulate_gradients(&self, batch: &[Sample<'_, T>], grads: &mut [T]) -> Result<T> {
        let actions = self.arch.actions;
        let inv_a = T::one() / T::lit(actions as f64);
        let vl = self.value_layer();
        let al = self.advantage_layer();
        let h = al.inputs;
        let aw = &self.params[al.weights..al.bias];
        let vw = &self.params[vl.weights..vl.bias];

        // mean advantage weight per trunk unit, for dh = g (w_v + w_a[:, a] - mean)
        let mean_row = &self.head_means().0;

        let mut shared = vec![T::zero(); h];
        let mut shared_bias = T::zero();
        let mut total_loss = T::zero();
        let mut delta = Vec::new();
        for s in batch {
            if s.action >= actions {
                return Err(SimError::ShapeMismatch { expected: actions, got: s.action });
            }
            self.check_input(s.input)?;
            let hidden = self.trunk_forward(s.input);
            let top: &[T] = hidden.last().map_or(s.input, Vec::as_slice);
            let err = self.q_from_top(top, s.action) - s.target;
            total_loss += err * err;
            let g = err + err;

            // value head
            grads[vl.bias] += g;
            axpy(g, top, &mut grads[vl.weights..vl.bias]);
            // advantage head, sparse part
            grads[al.bias + s.action] += g;
            for (i, &hi) in top.iter().enumerate() {
                grads[al.weights + i * actions + s.action] += g * hi;
            }
            axpy(g, top, &mut shared);
            shared_bias += g;

            // gradient reaching the last trunk layer
            delta.clear();
            delta.extend((0..h).map(|i| g * (vw[i] + aw[i * actions + s.action] - mean_row[i])));

            for (li, &d) in self.trunk().iter().enumerate().rev() {
                let out = &hidden[li];
                for (dv, &o) in delta.iter_mut().zip(out) {
                    if o <= T::zero() {
                        *dv = T::zero();
                    }
                }
                let input: &[T] = if li == 0 { s.input } else { &hidden[li - 1] };
                axpy(T::one(), &delta, &mut grads[d.bias..d.bias + d.outputs]);
                let w = &self.params[d.weights..d.bias];
                let mut next = Vec::with_capacity(d.inputs);
                for (i, &xi) in input.iter().enumerate() {
                    let row = i * d.outputs;
                    if xi != T::zero() {
                        axpy(xi, &delta, &mut grads[d.weights + row..d.weights + row + d.outputs]);
                    }
                    if li > 0 {
                        next.push(dot(&w[row..row + d.outputs], &delta));
                    }
                }
                delta = next;
            }
        }
        // dense rank-one correction: every advantage output loses 1/|A| of g
        for (i, &si) in shared.iter().enumerate() {
            let c = si * inv_a;
            for gw in &mut grads[al.weights + i * actions..al.weights + (i + 1) * actions] {
                *gw -= c;
            }
        }
        let cb = shared_bias * inv_a;
        for gb in &mut grads[al.bias..al.bias + actions] {
            *gb -= cb;
        }
        Ok(total_loss)
    }

    /// Relu on/off pattern of the trunk, for kink detection.
    fn activation_pattern(&self, x: &[T]) -> Result<Vec<bool>> {
        self.check_input(x)?;
        Ok(self.trunk_forward(x).iter().flatten().map(|&v| v > T::zero()).collect())
    }

    /// Copy every parameter into `target`.
    pub fn sync_into(&self, target: &mut QNetwork<T>) -> Result<()> {
        if target.arch != self.arch {
            return Err(SimError::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                self.arch, target.arch
            )));
        }
        target.params_mut().copy_from_slice(&self.params);
        Ok(())
    }
}

/// Target network update: `target <- online`.
pub fn sync_target<T: Scalar>(online: &QNetwork<T>, target: &mut QNetwork<T>) -> Result<()> {
    online.sync_into(target)
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step: u64,
    first: Vec<T>,
    second: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(num_params: usize, learning_rate: T) -> Self {
        OptimizerState {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            step: 0,
            first: vec![T::zero(); num_params],
            second: vec![T::zero(); num_params],
        }
    }

    pub fn for_network(net: &QNetwork<T>, learning_rate: T) -> Self {
        Self::new(net.num_params(), learning_rate)
    }
}

pub fn adam_step<T: Scalar>(net: &mut QNetwork<T>, grads: &[T], opt: &mut OptimizerState<T>) -> Result<()> {
    let n = net.params.len();
    if grads.len() != n || opt.first.len() != n {
        return Err(SimError::ShapeMismatch {
            expected: n,
            got: grads.len().min(opt.first.len()),
        });
    }
    opt.step += 1;
    let t = opt.step.min(i32::MAX as u64) as i32;
    let c1 = T::one() - opt.beta1.powi(t);
    let c2 = T::one() - opt.beta2.powi(t);
    let (b1, b2) = (opt.beta1, opt.beta2);
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let lr = opt.learning_rate;
    let eps = opt.epsilon;
    for (((p, &g), m), v) in net
        .params_mut()
        .iter_mut()
        .zip(grads)
        .zip(opt.first.iter_mut())
        .zip(opt.second.iter_mut())
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation flipped a relu.
    pub skipped: usize,
}

const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare `analytic` against central differences of the squared error over
/// the parameter indices in `indices`.
///
/// Relative error is `|a - n| / max(|a| + |n|, 1e-6)`. Perturbations that
/// change the relu pattern straddle a kink where the loss is not
/// differentiable; those parameters are skipped and counted.
pub fn grad_check_against<T: Scalar>(
    net: &QNetwork<T>,
    analytic: &[T],
    sample: Sample<'_, T>,
    h: T,
    indices: impl IntoIterator<Item = usize>,
) -> Result<GradCheck> {
    let pattern = net.activation_pattern(sample.input)?;
    let mut probe = net.clone();
    let mut report = GradCheck { max_relative_error: 0.0, checked: 0, skipped: 0 };
    for i in indices {
        let orig = probe.params[i];
        probe.params_mut()[i] = orig + h;
        let up = probe.loss(sample)?;
        let kink_up = probe.activation_pattern(sample.input)? != pattern;
        probe.params_mut()[i] = orig - h;
        let down = probe.loss(sample)?;
        let kink_down = probe.activation_pattern(sample.input)? != pattern;
        probe.params_mut()[i] = orig;
        if kink_up || kink_down {
            report.skipped += 1;
            continue;
        }
        let numeric = ((up - down) / (h + h)).as_f64();
        let a = analytic[i].as_f64();
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.max_relative_error = report.max_relative_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Check `backward` against central differences over every parameter.
pub fn grad_check<T: Scalar>(net: &QNetwork<T>, x: &[T], action: usize, target: T, h: T) -> Result<f64> {
    let analytic = net.backward(x, action, target)?;
    let sample = Sample { input: x, action, target };
    Ok(grad_check_against(net, &analytic, sample, h, 0..net.num_params())?.max_relative_error)
}

/// Like [`grad_check`], over a random subset of `count` parameters.
pub fn grad_check_sampled<T: Scalar, R: Rng + ?Sized>(
    net: &QNetwork<T>,
    x: &[T],
    action: usize,
    target: T,
    h: T,
    count: usize,
    rng: &mut R,
) -> Result<f64> {
    let analytic = net.backward(x, action, target)?;
    let sample = Sample { input: x, action, target };
    let n = net.num_params();
    let picks = rand::seq::index::sample(rng, n, count.min(n)).into_vec();
    Ok(grad_check_against(net, &analytic, sample, h, picks)?.max_relative_error)
}

const CHECKPOINT_MAGIC: &str = "chainradio-qnet";
const CHECKPOINT_VERSION: u32 = 1;

impl<T: Scalar> QNetwork<T> {
    /// Plain-text checkpoint:
    ///
    /// ```text
    /// chainradio-qnet 1
    /// scalar f64
    /// layers <inputs> <hidden..> <actions>
    /// params <count>
    /// <one value per line, flat layout order>
    /// ```
    ///
    /// Values are written in shortest round-trip form.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(w, "scalar {}", T::NAME)?;
        write!(w, "layers {}", self.arch.inputs)?;
        for h in &self.arch.hidden {
            write!(w, " {h}")?;
        }
        writeln!(w, " {}", self.arch.actions)?;
        writeln!(w, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(w, "{p:e}")?;
        }
        w.flush()
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let bad = |m: String| SimError::Checkpoint(m);
        let mut lines = BufReader::new(input).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad(format!("missing {what}")))?
                .map_err(|e| bad(e.to_string()))
        };
        let header = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("not a checkpoint: `{header}`")));
        }
        match parts.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(CHECKPOINT_VERSION) => {}
            other => return Err(bad(format!("unsupported version {other:?}"))),
        }
        let scalar = next("scalar")?;
        if scalar.trim() != format!("scalar {}", T::NAME) {
            return Err(SimError::ArchitectureMismatch(format!(
                "checkpoint `{}` loaded as {}",
                scalar.trim(),
                T::NAME
            )));
        }
        let shape = next("layers")?;
        let dims: Vec<usize> = shape
            .strip_prefix("layers ")
            .ok_or_else(|| bad(format!("bad layers line `{shape}`")))?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| bad(format!("bad dimension `{d}`"))))
            .collect::<Result<_>>()?;
        if dims.len() < 2 {
            return Err(bad("need at least input and action widths".into()));
        }
        let arch = Architecture {
            inputs: dims[0],
            hidden: dims[1..dims.len() - 1].to_vec(),
            actions: dims[dims.len() - 1],
        };
        let mut net = QNetwork::zeros(arch);
        let count_line = next("params")?;
        let count: usize = count_line
            .strip_prefix("params ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad params line `{count_line}`")))?;
        if count != net.num_params() {
            return Err(bad(format!("{count} params for shape expecting {}", net.num_params())));
        }
        for i in 0..count {
            let line = next("parameter value")?;
            net.params_mut()[i] = line
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad value `{line}` at {i}")))?;
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        self.write_checkpoint(f).map_err(|e| SimError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| SimError::io(path, e))?;
        Self::read_checkpoint(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> (QNetwork<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture { inputs: 3, hidden: vec![4, 4], actions: 3 };
        (QNetwork::new(arch, &mut rng), rng)
    }

    /// Sets the network so that V = v and A = adv for every input.
    fn constant_heads(v: f64, adv: &[f64]) -> QNetwork<f64> {
        let arch = Architecture { inputs: 2, hidden: vec![2], actions: adv.len() };
        let mut net = QNetwork::zeros(arch);
        let vl = net.value_layer();
        let al = net.advantage_layer();
        net.params_mut()[vl.bias] = v;
        net.params_mut()[al.bias..al.bias + adv.len()].copy_from_slice(adv);
        net
    }

    #[test]
    fn aggregation_examples() {
        let net = constant_heads(2.0, &[1.0, 2.0, 3.0]);
        assert_eq!(net.forward(&[0.3, 0.1]).unwrap(), vec![1.0, 2.0, 3.0]);
        let flat = constant_heads(-1.5, &[4.0, 4.0, 4.0, 4.0]);
        assert_eq!(flat.forward(&[1.0, 1.0]).unwrap(), vec![-1.5; 4]);
    }

    #[test]
    fn mean_q_equals_value() {
        let (net, mut rng) = small(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = net.forward_full(&x).unwrap();
            let mean = f.q.iter().sum::<f64>() / 3.0;
            assert!((mean - f.value).abs() < 1e-12);
        }
    }

    #[test]
    fn single_action_value_matches_forward_after_updates() {
        let (mut net, mut rng) = small(6);
        let x = [0.4, -1.1, 0.8];
        for round in 0..3 {
            let q = net.forward(&x).unwrap();
            for (a, &qa) in q.iter().enumerate() {
                assert_eq!(net.q_value(&x, a).unwrap(), qa, "round {round}");
            }
            // any parameter write must invalidate the cached head means
            let al = net.advantage_layer();
            net.params_mut()[al.bias + round] += rng.random_range(0.5..1.5);
        }
        assert!(net.q_value(&x, 3).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let (net, _) = small(1);
        assert!(matches!(net.forward(&[1.0]), Err(SimError::ShapeMismatch { .. })));
        assert!(net.backward(&[1.0, 2.0, 3.0], 3, 0.0).is_err());
    }

    #[test]
    fn zero_gradient_at_target() {
        let (net, _) = small(2);
        let x = [0.5, -0.2, 0.9];
        let q = net.forward(&x).unwrap();
        let g = net.backward(&x, 1, q[1]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn advantage_output_coefficient() {
        // dL/dA_j for the chosen action is (1 - 1/|A|) * 2 (Q - y); visible in the bias gradient
        let (net, _) = small(3);
        let x = [0.1, 0.7, -0.4];
        let q = net.forward(&x).unwrap();
        let y = q[2] + 1.5;
        let g = net.backward(&x, 2, y).unwrap();
        let al = net.advantage_layer();
        let chain = 2.0 * (q[2] - y);
        assert!((g[al.bias + 2] - (1.0 - 1.0 / 3.0) * chain).abs() < 1e-12);
        assert!((g[al.bias] - (-1.0 / 3.0) * chain).abs() < 1e-12);
        assert!((g[net.value_layer().bias] - chain).abs() < 1e-12);
    }

    #[test]
    fn batch_gradient_is_mean_of_singles() {
        let (net, mut rng) = small(5);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch: Vec<Sample<'_, f64>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample { input: x, action: i % 3, target: i as f64 - 1.0 })
            .collect();
        let (g, loss) = net.batch_gradient(&batch).unwrap();
        let mut mean = vec![0.0; net.num_params()];
        let mut mean_loss = 0.0;
        for s in &batch {
            let gi = net.backward(s.input, s.action, s.target).unwrap();
            mean.iter_mut().zip(gi).for_each(|(m, v)| *m += v / 4.0);
            mean_loss += net.loss(*s).unwrap() / 4.0;
        }
        for (a, b) in g.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((loss - mean_loss).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let arch = Architecture { inputs: 4, hidden: vec![4, 4], actions: 5 };
        for _ in 0..10 {
            let net: QNetwork<f64> = QNetwork::new(arch.clone(), &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = rng.random_range(0..5);
            let y = rng.random_range(-2.0..2.0);
            let err = grad_check(&net, &x, a, y, 1e-5).unwrap();
            assert!(err <= 1e-4, "relative error {err}");
            assert!(err >= 0.0);
        }
    }

    #[test]
    fn identity_like_net_is_exact() {
        // nonnegative inputs through identity hidden weights: relu never bites
        let arch = Architecture { inputs: 2, hidden: vec![2], actions: 2 };
        let mut net: QNetwork<f64> = QNetwork::zeros(arch);
        let trunk = net.layers[0];
        net.params_mut()[trunk.weights] = 1.0;
        net.params_mut()[trunk.weights + 3] = 1.0;
        let vl = net.value_layer();
        net.params_mut()[vl.weights] = 0.5;
        net.params_mut()[vl.weights + 1] = 0.5;
        let al = net.advantage_layer();
        net.params_mut()[al.weights] = 1.0;
        net.params_mut()[al.weights + 3] = 1.0;
        let err = grad_check(&net, &[0.6, 0.3], 0, 2.0, 1e-5).unwrap();
        assert!(err <= 1e-7, "relative error {err}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let (net, _) = small(8);
        let x = [0.2, 0.4, -0.6];
        let mut g = net.backward(&x, 0, 3.0).unwrap();
        g.iter_mut().for_each(|v| *v *= 1.01);
        let s = Sample { input: &x, action: 0, target: 3.0 };
        let r = grad_check_against(&net, &g, s, 1e-5, 0..net.num_params()).unwrap();
        assert!(r.max_relative_error > 1e-3);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let (mut net, _) = small(9);
        let before = net.clone();
        let mut opt = OptimizerState::for_network(&net, 1e-3);
        let zeros = vec![0.0; net.num_params()];
        for _ in 0..5 {
            adam_step(&mut net, &zeros, &mut opt).unwrap();
        }
        assert_eq!(net.params, before.params);
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn adam_constant_gradient_step_size() {
        let (mut net, _) = small(10);
        let mut opt = OptimizerState::for_network(&net, 1e-3);
        let g: Vec<f64> = (0..net.num_params()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
        for _ in 0..2000 {
            adam_step(&mut net, &g, &mut opt).unwrap();
        }
        let before = net.clone();
        adam_step(&mut net, &g, &mut opt).unwrap();
        for (i, (a, b)) in net.params.iter().zip(&before.params).enumerate() {
            let step = a - b;
            let want = -1e-3 * g[i].signum();
            assert!((step - want).abs() < 1e-6, "param {i}: step {step}");
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let (mut net, mut rng) = small(11);
            let mut opt = OptimizerState::for_network(&net, 1e-3);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = net.backward(&x, 1, 0.5).unwrap();
                adam_step(&mut net, &g, &mut opt).unwrap();
            }
            net
        };
        assert_eq!(run().params, run().params);
    }

    #[test]
    fn sync_copies_and_decouples() {
        let (mut online, mut rng) = small(12);
        let (mut target, _) = small(13);
        sync_target(&online, &mut target).unwrap();
        let x = [0.3, 0.3, 0.3];
        assert_eq!(online.forward(&x).unwrap(), target.forward(&x).unwrap());
        let snapshot = target.clone();
        sync_target(&online, &mut target).unwrap();
        assert_eq!(target, snapshot);
        let g = online.backward(&x, 0, 5.0).unwrap();
        let mut opt = OptimizerState::for_network(&online, 1e-2);
        adam_step(&mut online, &g, &mut opt).unwrap();
        assert_eq!(target, snapshot);
        assert_ne!(online.params, target.params);

        let other = QNetwork::<f64>::new(Architecture::standard(3, 2), &mut rng);
        assert!(matches!(
            sync_target(&other, &mut target),
            Err(SimError::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn init_bounded_by_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let net: QNetwork<f64> = QNetwork::new(Architecture::standard(9, 20), &mut rng);
        for d in &net.layers {
            let bound = 1.0 / (d.inputs as f64).sqrt();
            assert!(net.params[d.weights..d.weights + d.len()].iter().all(|p| p.abs() <= bound));
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let (net, _) = small(15);
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = QNetwork::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, net);
        assert!(matches!(
            QNetwork::<f32>::read_checkpoint(&buf[..]),
            Err(SimError::ArchitectureMismatch(_))
        ));
        let truncated = &buf[..buf.len() / 2];
        assert!(QNetwork::<f64>::read_checkpoint(truncated).is_err());
        assert!(QNetwork::<f64>::read_checkpoint(&b"garbage\n"[..]).is_err());
    }

    #[test]
    fn f32_network_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let net: QNetwork<f32> = QNetwork::new(Architecture::standard(5, 7), &mut rng);
        let q = net.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(q.len(), 7);
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4, 0.5], 3, 1.0).unwrap();
        assert_eq!(g.len(), net.num_params());
    }
}
