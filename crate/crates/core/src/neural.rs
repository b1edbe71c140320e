//! Dense networks with analytic gradients, layer normalization, Adam and
//! polyak blending.
//!
//! Parameters of a [`DenseNet`] live in one flat vector. Per layer the
//! order is weights (`out x in`, row-major), bias (`out`), then layer-norm
//! gain and offset (`out` each) when enabled. Batches are row-major
//! `batch x width` slices.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

const NET_MAGIC: &[u8; 8] = b"RISNET01";
const ADAM_MAGIC: &[u8; 8] = b"RISADAM1";
pub const CHECKPOINT_VERSION: u32 = 1;

static STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            _ => Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub layer_norm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, layer_norm: bool, activation: Activation) -> Self {
        Self {
            input,
            output,
            layer_norm,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.output * self.input + self.output + if self.layer_norm { 2 * self.output } else { 0 }
    }
}

/// Hidden layers of the given widths followed by an output layer without
/// layer norm.
pub fn mlp_specs(
    input: usize,
    hidden: &[usize],
    output: usize,
    layer_norm: bool,
    hidden_act: Activation,
    output_act: Activation,
) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, layer_norm, hidden_act));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, output, false, output_act));
    specs
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w: usize,
    b: usize,
    gain: usize,
    shift: usize,
}

fn layout(specs: &[LayerSpec]) -> (Vec<Offsets>, usize) {
    let mut at = 0;
    let offs = specs
        .iter()
        .map(|s| {
            let w = at;
            let b = w + s.output * s.input;
            let gain = b + s.output;
            let shift = gain + s.output;
            at += s.param_count();
            Offsets { w, b, gain, shift }
        })
        .collect();
    (offs, at)
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    specs: Vec<LayerSpec>,
    offsets: Vec<Offsets>,
    params: Vec<f64>,
    stamp: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.specs == other.specs && self.params == other.params
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    pre_act: Vec<f64>,
    output: Vec<f64>,
}

/// Activations recorded by [`DenseNet::forward`], consumed by
/// [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    batch: usize,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("non-empty net").output
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Option<Vec<f64>>,
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices; `op` transposes when the flag is set.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have exactly the extents implied by (m, k, n) and the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

impl DenseNet {
    /// Weights and biases uniform in `+-1/sqrt(fan_in)`; the last layer uses
    /// `+-final_scale` instead when given.
    pub fn new<R: Rng + ?Sized>(
        specs: Vec<LayerSpec>,
        final_scale: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        let last = net.specs.len() - 1;
        for (i, (s, o)) in net.specs.iter().zip(&net.offsets).enumerate() {
            let bound = match final_scale {
                Some(f) if i == last => f,
                _ => 1.0 / (s.input as f64).sqrt(),
            };
            for p in &mut net.params[o.w..o.b + s.output] {
                *p = rng.random_range(-bound..=bound);
            }
            if s.layer_norm {
                net.params[o.gain..o.shift].fill(1.0);
            }
        }
        Ok(net)
    }

    /// All parameters zero (layer-norm gains included).
    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Dimension("network needs at least one layer".into()));
        }
        for (i, pair) in specs.windows(2).enumerate() {
            if pair[0].output != pair[1].input {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    pair[0].output,
                    i + 1,
                    pair[1].input
                )));
            }
        }
        if specs.iter().any(|s| s.input == 0 || s.output == 0) {
            return Err(Error::Dimension("zero-width layer".into()));
        }
        let (offsets, n) = layout(&specs);
        Ok(Self {
            specs,
            offsets,
            params: vec![0.0; n],
            stamp: next_stamp(),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.specs.last().expect("non-empty").output
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = next_stamp();
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "{} parameters given, network has {}",
                p.len(),
                self.params.len()
            )));
        }
        self.params_mut().copy_from_slice(p);
        Ok(())
    }

    /// Weight matrix of layer `i`, row-major `out x in`.
    pub fn weights(&self, i: usize) -> &[f64] {
        let (s, o) = (&self.specs[i], &self.offsets[i]);
        &self.params[o.w..o.w + s.output * s.input]
    }

    pub fn bias(&self, i: usize) -> &[f64] {
        let (s, o) = (&self.specs[i], &self.offsets[i]);
        &self.params[o.b..o.b + s.output]
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Result<ForwardCache> {
        let d = self.input_dim();
        if batch == 0 || x.len() != batch * d {
            return Err(Error::Dimension(format!(
                "input of length {} is not a batch of {batch} x {d}",
                x.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.specs.len());
        let mut input = x.to_vec();
        for (s, o) in self.specs.iter().zip(&self.offsets) {
            let w = &self.params[o.w..o.b];
            let b = &self.params[o.b..o.b + s.output];
            let mut z = vec![0.0; batch * s.output];
            for row in z.chunks_mut(s.output) {
                row.copy_from_slice(b);
            }
            gemm(batch, s.input, s.output, &input, false, w, true, &mut z, 1.0);

            let (normalized, inv_std, pre_act) = if s.layer_norm {
                let gain = &self.params[o.gain..o.shift];
                let shift = &self.params[o.shift..o.shift + s.output];
                let mut normalized = z;
                let mut inv_std = Vec::with_capacity(batch);
                let mut pre = vec![0.0; batch * s.output];
                for (row, out) in normalized.chunks_mut(s.output).zip(pre.chunks_mut(s.output)) {
                    let n = s.output as f64;
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let is = 1.0 / (var + LN_EPS).sqrt();
                    for (((r, p), g), sh) in row.iter_mut().zip(out.iter_mut()).zip(gain).zip(shift) {
                        *r = (*r - mean) * is;
                        *p = g * *r + sh;
                    }
                    inv_std.push(is);
                }
                (normalized, inv_std, pre)
            } else {
                (Vec::new(), Vec::new(), z)
            };
            let output: Vec<f64> = pre_act.iter().map(|&v| s.activation.apply(v)).collect();
            let next = output.clone();
            layers.push(LayerCache {
                input,
                normalized,
                inv_std,
                pre_act,
                output,
            });
            input = next;
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            batch,
            layers,
        })
    }

    /// Single-sample convenience wrapper.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, 1)?.output().to_vec())
    }

    /// Gradients of `sum(d_out * output)` with respect to the parameters,
    /// and to the input when `want_input` is set.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], want_input: bool) -> Result<Gradients> {
        if cache.stamp != self.stamp || cache.layers.len() != self.specs.len() {
            return Err(Error::StaleCache("parameters changed since the forward pass".into()));
        }
        let batch = cache.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(Error::Dimension(format!(
                "output gradient has {} entries, expected {}",
                d_out.len(),
                batch * self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut upstream = d_out.to_vec();
        let mut d_input = None;
        for i in (0..self.specs.len()).rev() {
            let (s, o, lc) = (&self.specs[i], &self.offsets[i], &cache.layers[i]);
            let mut dz: Vec<f64> = upstream
                .iter()
                .zip(&lc.pre_act)
                .zip(&lc.output)
                .map(|((g, &x), &y)| g * s.activation.derivative(x, y))
                .collect();

            if s.layer_norm {
                let gain = &self.params[o.gain..o.shift];
                let (g_gain, g_shift) = grads[o.gain..o.shift + s.output].split_at_mut(s.output);
                let n = s.output as f64;
                for ((row, xhat), &is) in dz
                    .chunks_mut(s.output)
                    .zip(lc.normalized.chunks(s.output))
                    .zip(&lc.inv_std)
                {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..s.output {
                        g_gain[j] += row[j] * xhat[j];
                        g_shift[j] += row[j];
                        let dxhat = row[j] * gain[j];
                        row[j] = dxhat;
                        mean_d += dxhat;
                        mean_dx += dxhat * xhat[j];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    for j in 0..s.output {
                        row[j] = is * (row[j] - mean_d - xhat[j] * mean_dx);
                    }
                }
            }

            let g_b = &mut grads[o.b..o.b + s.output];
            for row in dz.chunks(s.output) {
                for (acc, v) in g_b.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            gemm(s.output, batch, s.input, &dz, true, &lc.input, false, &mut grads[o.w..o.b], 0.0);

            if i > 0 || want_input {
                let mut dx = vec![0.0; batch * s.input];
                gemm(batch, s.output, s.input, &dz, false, &self.params[o.w..o.b], false, &mut dx, 0.0);
                if i == 0 {
                    d_input = Some(dx);
                } else {
                    upstream = dx;
                }
            }
        }
        Ok(Gradients {
            params: grads,
            input: d_input,
        })
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(NET_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.specs.len() as u64).to_le_bytes())?;
        for s in &self.specs {
            out.write_all(&(s.input as u64).to_le_bytes())?;
            out.write_all(&(s.output as u64).to_le_bytes())?;
            out.write_all(&[u8::from(s.layer_norm), s.activation.tag()])?;
        }
        write_f64s(out, &self.params)
    }

    /// Reads a network; when `expect` is given the stored architecture must match it.
    pub fn read_from<R: Read>(input: &mut R, expect: Option<&[LayerSpec]>) -> Result<Self> {
        read_magic(input, NET_MAGIC)?;
        let n = read_u64(input)? as usize;
        if n == 0 || n > 1024 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let mut specs = Vec::with_capacity(n);
        for _ in 0..n {
            let i = read_u64(input)? as usize;
            let o = read_u64(input)? as usize;
            let mut flags = [0u8; 2];
            input.read_exact(&mut flags)?;
            specs.push(LayerSpec::new(i, o, flags[0] != 0, Activation::from_tag(flags[1])?));
        }
        if let Some(e) = expect {
            if e != specs.as_slice() {
                return Err(Error::Checkpoint("architecture mismatch".into()));
            }
        }
        let mut net = Self::zeros(specs).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let params = read_f64s(input)?;
        net.set_params(&params).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(net)
    }
}

fn write_f64s<W: Write>(out: &mut W, v: &[f64]) -> Result<()> {
    out.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(input: &mut R) -> Result<Vec<f64>> {
    let n = read_u64(input)? as usize;
    if n > 1 << 32 {
        return Err(Error::Checkpoint(format!("implausible tensor length {n}")));
    }
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn read_magic<R: Read>(input: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut m = [0u8; 8];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step on `net` along `grads`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &[f64]) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != net.param_count() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for {} parameters",
                grads.len(),
                net.param_count()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: "gradient",
                index: i,
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let p = net.params_mut();
        for (((p, g), m), v) in p.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(ADAM_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_f64s(out, &[self.lr, self.beta1, self.beta2, self.eps])?;
        out.write_all(&self.t.to_le_bytes())?;
        write_f64s(out, &self.m)?;
        write_f64s(out, &self.v)
    }

    pub fn read_from<R: Read>(input: &mut R, n: usize) -> Result<Self> {
        read_magic(input, ADAM_MAGIC)?;
        let h = read_f64s(input)?;
        if h.len() != 4 {
            return Err(Error::Checkpoint("bad optimizer header".into()));
        }
        let t = read_u64(input)?;
        let m = read_f64s(input)?;
        let v = read_f64s(input)?;
        if m.len() != n || v.len() != n {
            return Err(Error::Checkpoint("optimizer state does not match network".into()));
        }
        Ok(Self {
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            eps: h[3],
            m,
            v,
            t,
        })
    }
}

/// `target <- tau * main + (1 - tau) * target`.
pub fn polyak_blend(target: &mut DenseNet, main: &DenseNet, tau: f64) -> Result<()> {
    if target.specs != main.specs {
        return Err(Error::Dimension("polyak blend between different architectures".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("tau must lie in [0, 1], got {tau}")));
    }
    for (t, m) in target.params_mut().iter_mut().zip(&main.params) {
        *t = tau * m + (1.0 - tau) * *t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    #[test]
    fn identity_linear_layer() {
        let mut net = DenseNet::zeros(vec![LayerSpec::new(3, 3, false, Activation::Identity)]).unwrap();
        let p = net.params_mut();
        p[0] = 1.0;
        p[4] = 1.0;
        p[8] = 1.0;
        p[9..12].copy_from_slice(&[0.5, -1.0, 2.0]);
        assert_eq!(net.predict(&[1.0, 2.0, 3.0]).unwrap(), vec![1.5, 1.0, 5.0]);
    }

    #[test]
    fn tanh_head_bounded() {
        let mut rng = substream(1, Domain::Scratch, 0);
        let net = DenseNet::new(mlp_specs(4, &[8], 3, true, Activation::Relu, Activation::Tanh), None, &mut rng).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 - 20.0) * 30.0).collect();
        let c = net.forward(&x, 10).unwrap();
        assert!(c.output().iter().all(|v| v.abs() < 1.0 || v.abs() == 1.0));
        assert!(c.output().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn layer_norm_shift_invariant() {
        let mut rng = substream(2, Domain::Scratch, 0);
        let mut net = DenseNet::new(vec![LayerSpec::new(3, 5, true, Activation::Identity)], None, &mut rng).unwrap();
        // an all-ones column makes a constant input shift a constant pre-norm shift
        let p = net.params_mut();
        for r in 0..5 {
            p[r * 3] = 1.0;
        }
        let a = net.predict(&[0.3, -0.2, 0.9]).unwrap();
        let b = net.predict(&[7.3, -0.2, 0.9]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        assert!(DenseNet::zeros(vec![
            LayerSpec::new(3, 4, false, Activation::Relu),
            LayerSpec::new(5, 1, false, Activation::Identity),
        ])
        .is_err());
        let net = DenseNet::zeros(mlp_specs(3, &[4], 1, false, Activation::Relu, Activation::Identity)).unwrap();
        assert!(matches!(net.forward(&[1.0; 4], 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn linear_quadratic_gradient() {
        let mut rng = substream(3, Domain::Scratch, 0);
        let net = DenseNet::new(vec![LayerSpec::new(3, 2, false, Activation::Identity)], None, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0, 1.5, 0.25, -0.75];
        let y = [1.0, -2.0, 0.0, 0.5];
        let c = net.forward(&x, 2).unwrap();
        // loss = 0.5 * sum (out - y)^2
        let resid: Vec<f64> = c.output().iter().zip(&y).map(|(o, t)| o - t).collect();
        let g = net.backward(&c, &resid, true).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let expect: f64 = (0..2).map(|b| resid[b * 2 + o] * x[b * 3 + i]).sum();
                assert!((g.params[o * 3 + i] - expect).abs() < 1e-14);
            }
            let expect_b: f64 = (0..2).map(|b| resid[b * 2 + o]).sum();
            assert!((g.params[6 + o] - expect_b).abs() < 1e-14);
        }
        let w = net.weights(0);
        let gi = g.input.unwrap();
        for b in 0..2 {
            for i in 0..3 {
                let expect: f64 = (0..2).map(|o| resid[b * 2 + o] * w[o * 3 + i]).sum();
                assert!((gi[b * 3 + i] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let mut rng = substream(4, Domain::Scratch, 0);
        let net = DenseNet::new(mlp_specs(5, &[6, 4], 2, true, Activation::Relu, Activation::Tanh), None, &mut rng).unwrap();
        let x: Vec<f64> = (0..15).map(|i| i as f64 * 0.1).collect();
        let c = net.forward(&x, 3).unwrap();
        let g = net.backward(&c, &[0.0; 6], true).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = substream(5, Domain::Scratch, 0);
        let mut net = DenseNet::new(mlp_specs(2, &[3], 1, false, Activation::Relu, Activation::Identity), None, &mut rng).unwrap();
        let c = net.forward(&[0.1, 0.2], 1).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&c, &[1.0], false), Err(Error::StaleCache(_))));
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = substream(6, Domain::Scratch, 0);
        let net = DenseNet::new(vec![LayerSpec::new(4, 16, true, Activation::Identity)], None, &mut rng).unwrap();
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1e3..1e3)).collect();
        let c = net.forward(&x, 8).unwrap();
        for row in c.layers[0].normalized.chunks(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-9);
            assert!((var - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_noop_and_first_step() {
        let mut rng = substream(7, Domain::Scratch, 0);
        let mut net = DenseNet::new(mlp_specs(2, &[3], 1, false, Activation::Relu, Activation::Identity), None, &mut rng).unwrap();
        let before = net.params().to_vec();
        let mut opt = Adam::new(net.param_count(), 1e-3);
        opt.step(&mut net, &vec![0.0; before.len()]).unwrap();
        assert_eq!(net.params(), before.as_slice());
        assert_eq!(opt.steps(), 1);

        let mut opt = Adam::new(net.param_count(), 1e-3);
        opt.step(&mut net, &vec![0.37; before.len()]).unwrap();
        for (a, b) in net.params().iter().zip(&before) {
            assert!(((b - a) - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = DenseNet::zeros(vec![LayerSpec::new(1, 1, false, Activation::Identity)]).unwrap();
        let mut opt = Adam::new(2, 1e-3);
        let err = opt.step(&mut net, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn polyak_extremes() {
        let mut rng = substream(8, Domain::Scratch, 0);
        let specs = mlp_specs(3, &[4], 2, true, Activation::Relu, Activation::Tanh);
        let main = DenseNet::new(specs.clone(), None, &mut rng).unwrap();
        let mut target = DenseNet::new(specs, None, &mut rng).unwrap();
        let orig = target.clone();
        polyak_blend(&mut target, &main, 0.0).unwrap();
        assert_eq!(target, orig);
        polyak_blend(&mut target, &main, 1.0).unwrap();
        assert_eq!(target, main);
        assert!(polyak_blend(&mut target, &main, 1.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = substream(9, Domain::Scratch, 0);
        let specs = mlp_specs(3, &[4, 5], 2, true, Activation::Relu, Activation::Tanh);
        let net = DenseNet::new(specs.clone(), Some(1e-3), &mut rng).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = DenseNet::read_from(&mut buf.as_slice(), Some(&specs)).unwrap();
        assert_eq!(back, net);
        let other = mlp_specs(3, &[4, 6], 2, true, Activation::Relu, Activation::Tanh);
        assert!(matches!(
            DenseNet::read_from(&mut buf.as_slice(), Some(&other)),
            Err(Error::Checkpoint(_))
        ));
        let mut opt = Adam::new(net.param_count(), 1e-4);
        let mut n2 = net.clone();
        opt.step(&mut n2, &vec![0.1; net.param_count()]).unwrap();
        let mut buf = Vec::new();
        opt.write_to(&mut buf).unwrap();
        assert_eq!(Adam::read_from(&mut buf.as_slice(), net.param_count()).unwrap(), opt);
    }

    #[test]
    fn final_layer_scale() {
        let mut rng = substream(10, Domain::Scratch, 0);
        let net = DenseNet::new(mlp_specs(3, &[4], 2, false, Activation::Relu, Activation::Tanh), Some(1e-3), &mut rng).unwrap();
        assert!(net.weights(1).iter().chain(net.bias(1)).all(|v| v.abs() <= 1e-3));
        assert!(net.weights(0).iter().any(|v| v.abs() > 1e-3));
    }
}
