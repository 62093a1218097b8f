//! Fixed-topology dense networks `t ↦ y(t)` with binary weight masks.
//!
//! Two evaluation paths exist. [`forward_with_time_derivative`] evaluates a
//! single time point with [`Dual`] arithmetic. The batched path used by
//! [`loss_and_gradient`] and [`train`] propagates primal and tangent
//! activations for a whole grid at once, then back-propagates the residual
//! loss through both streams to get parameter gradients.
//!
//! Parameters live in one flat vector ordered layer by layer as
//! `[W₀ (row-major, out × in), b₀, W₁, b₁, …]`. Masks cover weights only, in
//! the same layer-by-layer row-major order.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dual::Dual;
use crate::tasks::{TaskBinding, TimeGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    #[default]
    Tanh,
    Sin,
}

impl Activation {
    /// Value, first and second derivative.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let s = libm::tanh(z);
                let d1 = 1.0 - s * s;
                (s, d1, -2.0 * s * d1)
            }
            Activation::Sin => {
                let s = libm::sin(z);
                (s, libm::cos(z), -s)
            }
        }
    }

    fn dual(self, z: Dual) -> Dual {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sin => z.sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Scalar time input, two hidden layers of 50 units, tanh.
    pub fn hnn(output_dim: usize) -> Self {
        Self::new(1, vec![50, 50], output_dim, Activation::Tanh).expect("valid spec")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec("input and output dims must be ≥ 1"));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidSpec("hidden dims must be ≥ 1"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// `(outputs, inputs)` for each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.num_layers());
        let mut fan_in = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(core::iter::once(&self.output_dim))
        {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    pub fn layouts(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        let mut mask_offset = 0;
        self.layer_shapes()
            .into_iter()
            .map(|(outputs, inputs)| {
                let l = LayerLayout {
                    inputs,
                    outputs,
                    weight_offset: offset,
                    bias_offset: offset + outputs * inputs,
                    mask_offset,
                };
                offset += outputs * inputs + outputs;
                mask_offset += outputs * inputs;
                l
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub mask_offset: usize,
}

impl LayerLayout {
    pub fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }
}

/// Location of a flat parameter offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamIndex {
    Weight {
        layer: usize,
        row: usize,
        col: usize,
    },
    Bias {
        layer: usize,
        row: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    spec: NetworkSpec,
    layouts: Vec<LayerLayout>,
    values: Vec<f64>,
}

impl ParamState {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            layouts: spec.layouts(),
            values: vec![0.0; spec.param_count()],
            spec: spec.clone(),
        })
    }

    pub fn from_flat(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        if values.len() != p.values.len() {
            return Err(Error::ShapeMismatch {
                what: "flat parameter vector",
                expected: p.values.len(),
                found: values.len(),
            });
        }
        p.values = values;
        Ok(p)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layouts(&self) -> &[LayerLayout] {
        &self.layouts
    }

    pub fn num_layers(&self) -> usize {
        self.layouts.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight_count(&self) -> usize {
        self.layouts.iter().map(LayerLayout::weight_count).sum()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = &self.layouts[layer];
        &self.values[l.weight_offset..l.bias_offset]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layouts[layer];
        &mut self.values[l.weight_offset..l.bias_offset]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = &self.layouts[layer];
        &self.values[l.bias_offset..l.bias_offset + l.outputs]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let l = self.layouts[layer];
        &mut self.values[l.bias_offset..l.bias_offset + l.outputs]
    }

    /// Maps a flat offset to its layer, row and column.
    pub fn locate(&self, offset: usize) -> Option<ParamIndex> {
        self.layouts.iter().enumerate().find_map(|(layer, l)| {
            if offset >= l.weight_offset && offset < l.bias_offset {
                let k = offset - l.weight_offset;
                Some(ParamIndex::Weight {
                    layer,
                    row: k / l.inputs,
                    col: k % l.inputs,
                })
            } else if offset >= l.bias_offset && offset < l.bias_offset + l.outputs {
                Some(ParamIndex::Bias {
                    layer,
                    row: offset - l.bias_offset,
                })
            } else {
                None
            }
        })
    }

    /// Flat parameter offset of the `k`-th weight in mask order.
    pub fn weight_offset_of(&self, mask_index: usize) -> Option<usize> {
        self.layouts.iter().find_map(|l| {
            let k = mask_index.checked_sub(l.mask_offset)?;
            (k < l.weight_count()).then(|| l.weight_offset + k)
        })
    }

    /// All weights in mask order.
    pub fn weight_values(&self) -> Vec<f64> {
        (0..self.num_layers())
            .flat_map(|l| self.weights(l).iter().copied())
            .collect()
    }

    /// FNV-1a over the IEEE bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }

    /// Copy with every weight multiplied by its mask bit.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        mask.check_against(self)?;
        let mut out = self.clone();
        for l in 0..self.num_layers() {
            for (w, &bit) in out.weights_mut(l).iter_mut().zip(mask.layer_bits(l)) {
                if !bit {
                    *w = 0.0;
                }
            }
        }
        Ok(out)
    }
}

#[inline]
fn bit_value(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        0.0
    }
}

/// Binary keep/prune indicator over weights. Biases have no entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mask {
    bits: Vec<bool>,
    /// `(outputs, inputs)` for each layer.
    shapes: Vec<(usize, usize)>,
}

impl Mask {
    pub fn ones(spec: &NetworkSpec) -> Self {
        Self::filled(spec.layer_shapes(), true)
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self::filled(spec.layer_shapes(), false)
    }

    pub fn filled(shapes: Vec<(usize, usize)>, value: bool) -> Self {
        let n = shapes.iter().map(|(o, i)| o * i).sum();
        Self {
            bits: vec![value; n],
            shapes,
        }
    }

    pub fn from_bits(shapes: Vec<(usize, usize)>, bits: Vec<bool>) -> Result<Self> {
        let n: usize = shapes.iter().map(|(o, i)| o * i).sum();
        if bits.len() != n {
            return Err(Error::ShapeMismatch {
                what: "mask bits",
                expected: n,
                found: bits.len(),
            });
        }
        Ok(Self { bits, shapes })
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    fn layer_range(&self, layer: usize) -> core::ops::Range<usize> {
        let start: usize = self.shapes[..layer].iter().map(|(o, i)| o * i).sum();
        let (o, i) = self.shapes[layer];
        start..start + o * i
    }

    pub fn layer_bits(&self, layer: usize) -> &[bool] {
        let r = self.layer_range(layer);
        &self.bits[r]
    }

    pub fn layer_bits_mut(&mut self, layer: usize) -> &mut [bool] {
        let r = self.layer_range(layer);
        &mut self.bits[r]
    }

    /// Start offset of `layer` in mask order.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layer_range(layer).start
    }

    pub fn surviving(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn surviving_in_layer(&self, layer: usize) -> usize {
        self.layer_bits(layer).iter().filter(|&&b| b).count()
    }

    /// Elementwise `self ≤ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shapes == other.shapes && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn check_against(&self, params: &ParamState) -> Result<()> {
        let expected = params.spec().layer_shapes();
        if self.shapes != expected {
            return Err(Error::ShapeMismatch {
                what: "mask",
                expected: params.weight_count(),
                found: self.bits.len(),
            });
        }
        Ok(())
    }
}

/// Uniform `±√(1/fan_in)` initialization for weights and biases, driven by a
/// ChaCha8 stream seeded from `seed`.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<ParamState> {
    let mut params = ParamState::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..params.num_layers() {
        let bound = libm::sqrt(1.0 / params.layouts[l].inputs as f64);
        for w in params.weights_mut(l) {
            *w = rng.gen_range(-bound..=bound);
        }
        for b in params.bias_mut(l) {
            *b = rng.gen_range(-bound..=bound);
        }
    }
    Ok(params)
}

/// Network outputs at `t` and their exact derivatives with respect to `t`.
pub fn forward_with_time_derivative(
    params: &ParamState,
    mask: &Mask,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    mask.check_against(params)?;
    let spec = params.spec();
    if spec.input_dim != 1 {
        return Err(Error::InvalidSpec(
            "time-derivative evaluation needs a scalar input",
        ));
    }
    let mut act = vec![Dual::variable(t)];
    let last = params.num_layers() - 1;
    for (l, layout) in params.layouts().iter().enumerate() {
        let w = params.weights(l);
        let bits = mask.layer_bits(l);
        let b = params.bias(l);
        let next: Vec<Dual> = (0..layout.outputs)
            .map(|o| {
                let row = o * layout.inputs;
                let mut z = Dual::constant(b[o]);
                for (i, a) in act.iter().enumerate() {
                    z += a.scale(w[row + i] * bit_value(bits[row + i]));
                }
                if l == last {
                    z
                } else {
                    spec.activation.dual(z)
                }
            })
            .collect();
        act = next;
    }
    Ok(act.iter().map(|d| (d.primal, d.tangent)).unzip())
}

/// `C = A·B + beta·C` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Activations of one layer over the batch, point-major.
#[derive(Debug, Clone, Default)]
struct LayerTape {
    /// Post-activation value and its time derivative.
    value: Vec<f64>,
    tangent: Vec<f64>,
    /// Pre-activation time derivative, σ'(z) and σ''(z) (hidden layers only).
    pre_tangent: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

/// Reusable buffers for batched loss and gradient evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator {
    layouts: Vec<LayerLayout>,
    activation: Activation,
    times: Vec<f64>,
    input_tangent: Vec<f64>,
    effective: Vec<f64>,
    tape: Vec<LayerTape>,
    g_value: Vec<f64>,
    g_tangent: Vec<f64>,
    g_prev_value: Vec<f64>,
    g_prev_tangent: Vec<f64>,
}

impl Evaluator {
    pub fn new(spec: &NetworkSpec, grid: &TimeGrid) -> Result<Self> {
        spec.validate()?;
        if spec.input_dim != 1 {
            return Err(Error::InvalidSpec(
                "time-derivative evaluation needs a scalar input",
            ));
        }
        let k = grid.len();
        let layouts = spec.layouts();
        let tape = layouts
            .iter()
            .map(|l| LayerTape {
                value: vec![0.0; k * l.outputs],
                tangent: vec![0.0; k * l.outputs],
                pre_tangent: vec![0.0; k * l.outputs],
                d1: vec![0.0; k * l.outputs],
                d2: vec![0.0; k * l.outputs],
            })
            .collect();
        let widest = layouts
            .iter()
            .map(|l| l.outputs.max(l.inputs))
            .max()
            .unwrap_or(1);
        Ok(Self {
            activation: spec.activation,
            times: grid.points().to_vec(),
            input_tangent: vec![1.0; k],
            effective: vec![0.0; spec.param_count()],
            tape,
            g_value: vec![0.0; k * widest],
            g_tangent: vec![0.0; k * widest],
            g_prev_value: vec![0.0; k * widest],
            g_prev_tangent: vec![0.0; k * widest],
            layouts,
        })
    }

    fn load_effective(&mut self, params: &ParamState, mask: &Mask) {
        self.effective.copy_from_slice(params.as_flat());
        for (l, layout) in self.layouts.iter().enumerate() {
            let w = &mut self.effective[layout.weight_offset..layout.bias_offset];
            for (w, &bit) in w.iter_mut().zip(mask.layer_bits(l)) {
                *w *= bit_value(bit);
            }
        }
    }

    fn forward(&mut self) {
        let k = self.times.len();
        let last = self.layouts.len() - 1;
        for l in 0..self.layouts.len() {
            let layout = self.layouts[l];
            let (out, inp) = (layout.outputs, layout.inputs);
            let (before, rest) = self.tape.split_at_mut(l);
            let cur = &mut rest[0];
            let (prev_value, prev_tangent): (&[f64], &[f64]) = if l == 0 {
                (&self.times, &self.input_tangent)
            } else {
                (&before[l - 1].value, &before[l - 1].tangent)
            };
            let w = &self.effective[layout.weight_offset..layout.bias_offset];
            let b = &self.effective[layout.bias_offset..layout.bias_offset + out];
            for row in cur.value.chunks_exact_mut(out) {
                row.copy_from_slice(b);
            }
            // Z = H·Wᵀ + b, Ż = Ḣ·Wᵀ
            gemm(
                k,
                inp,
                out,
                prev_value,
                (inp, 1),
                w,
                (1, inp),
                1.0,
                &mut cur.value,
                (out, 1),
            );
            gemm(
                k,
                inp,
                out,
                prev_tangent,
                (inp, 1),
                w,
                (1, inp),
                0.0,
                &mut cur.tangent,
                (out, 1),
            );
            if l != last {
                let act = self.activation;
                for j in 0..k * out {
                    let (s, d1, d2) = act.eval(cur.value[j]);
                    let dz = cur.tangent[j];
                    cur.pre_tangent[j] = dz;
                    cur.value[j] = s;
                    cur.tangent[j] = d1 * dz;
                    cur.d1[j] = d1;
                    cur.d2[j] = d2;
                }
            }
        }
    }

    /// Evaluates the task residual and, when `grad` is given, writes the
    /// masked parameter gradient into it.
    pub fn evaluate(
        &mut self,
        params: &ParamState,
        mask: &Mask,
        task: &TaskBinding,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        mask.check_against(params)?;
        let n_out = self.layouts.last().map(|l| l.outputs).unwrap_or(0);
        if task.arity() != n_out {
            return Err(Error::ArityMismatch {
                task: task.arity(),
                network: n_out,
            });
        }
        if params.layouts() != self.layouts.as_slice() {
            return Err(Error::ShapeMismatch {
                what: "parameters",
                expected: self.effective.len(),
                found: params.len(),
            });
        }
        self.load_effective(params, mask);
        self.forward();

        let k = self.times.len();
        let inv_k = 1.0 / k as f64;
        let last = self.layouts.len() - 1;
        let out_tape = &self.tape[last];
        let mut state = [0.0; 4];
        let mut derivs = [0.0; 4];
        let mut g_state = [0.0; 4];
        let mut g_derivs = [0.0; 4];
        let mut total = 0.0;
        for p in 0..k {
            let t = self.times[p];
            let row = p * n_out..(p + 1) * n_out;
            state[..n_out].copy_from_slice(&out_tape.value[row.clone()]);
            derivs[..n_out].copy_from_slice(&out_tape.tangent[row.clone()]);
            task.transform_outputs(t, &mut state[..n_out], &mut derivs[..n_out]);
            total += task.point_residual_grad(
                &state[..n_out],
                &derivs[..n_out],
                &mut g_state,
                &mut g_derivs,
            );
            task.transform_gradients(t, &mut g_state[..n_out], &mut g_derivs[..n_out]);
            for j in 0..n_out {
                self.g_value[p * n_out + j] = g_state[j] * inv_k;
                self.g_tangent[p * n_out + j] = g_derivs[j] * inv_k;
            }
        }
        let loss = total * inv_k;
        if let Some(grad) = grad {
            self.backward(mask, grad);
        }
        Ok(loss)
    }

    fn backward(&mut self, mask: &Mask, grad: &mut [f64]) {
        let k = self.times.len();
        for l in (0..self.layouts.len()).rev() {
            let layout = self.layouts[l];
            let (out, inp) = (layout.outputs, layout.inputs);
            // g_value / g_tangent hold ∂L/∂Z and ∂L/∂Ż for this layer.
            let gz = &self.g_value[..k * out];
            let gdz = &self.g_tangent[..k * out];
            let (prev_value, prev_tangent): (&[f64], &[f64]) = if l == 0 {
                (&self.times, &self.input_tangent)
            } else {
                (&self.tape[l - 1].value, &self.tape[l - 1].tangent)
            };
            let gw = &mut grad[layout.weight_offset..layout.bias_offset];
            // ∂L/∂W = Gᵀ·H + Ġᵀ·Ḣ
            gemm(
                out,
                k,
                inp,
                gz,
                (1, out),
                prev_value,
                (inp, 1),
                0.0,
                gw,
                (inp, 1),
            );
            gemm(
                out,
                k,
                inp,
                gdz,
                (1, out),
                prev_tangent,
                (inp, 1),
                1.0,
                gw,
                (inp, 1),
            );
            for (g, &bit) in gw.iter_mut().zip(mask.layer_bits(l)) {
                if !bit {
                    *g = 0.0;
                }
            }
            let gb = &mut grad[layout.bias_offset..layout.bias_offset + out];
            gb.fill(0.0);
            for row in gz.chunks_exact(out) {
                for (g, r) in gb.iter_mut().zip(row) {
                    *g += r;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.effective[layout.weight_offset..layout.bias_offset];
            let gh = &mut self.g_prev_value[..k * inp];
            let gdh = &mut self.g_prev_tangent[..k * inp];
            gemm(k, out, inp, gz, (out, 1), w, (inp, 1), 0.0, gh, (inp, 1));
            gemm(k, out, inp, gdz, (out, 1), w, (inp, 1), 0.0, gdh, (inp, 1));
            // Through h = σ(z), ḣ = σ'(z)·ż.
            let prev = &self.tape[l - 1];
            for j in 0..k * inp {
                let gv = gh[j] * prev.d1[j] + gdh[j] * prev.d2[j] * prev.pre_tangent[j];
                let gt = gdh[j] * prev.d1[j];
                gh[j] = gv;
                gdh[j] = gt;
            }
            core::mem::swap(&mut self.g_value, &mut self.g_prev_value);
            core::mem::swap(&mut self.g_tangent, &mut self.g_prev_tangent);
        }
    }
}

/// Residual loss of `task` over `grid` and its gradient in flat parameter
/// order. Gradient entries of masked weights are exactly zero.
pub fn loss_and_gradient(
    params: &ParamState,
    mask: &Mask,
    grid: &TimeGrid,
    task: &TaskBinding,
) -> Result<(f64, Vec<f64>)> {
    let mut eval = Evaluator::new(params.spec(), grid)?;
    let mut grad = vec![0.0; params.len()];
    let loss = eval.evaluate(params, mask, task, Some(&mut grad))?;
    Ok((loss, grad))
}

pub fn loss(params: &ParamState, mask: &Mask, grid: &TimeGrid, task: &TaskBinding) -> Result<f64> {
    Evaluator::new(params.spec(), grid)?.evaluate(params, mask, task, None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Full-batch Adam training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Collocation points K on the task's time domain.
    pub grid_points: usize,
    pub adam: AdamConfig,
    /// Abort once the loss exceeds this value.
    pub divergence_threshold: f64,
    /// Learning rate at the last epoch as a multiple of `lr`, reached by
    /// exponential decay. `1.0` keeps the rate constant.
    pub final_lr_factor: f64,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, grid_points: usize) -> Self {
        Self {
            epochs,
            lr,
            grid_points,
            adam: AdamConfig::default(),
            divergence_threshold: 1e6,
            final_lr_factor: 1.0,
        }
    }

    /// Learning rate used at `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.final_lr_factor == 1.0 || self.epochs < 2 {
            return self.lr;
        }
        let progress = epoch as f64 / (self.epochs - 1) as f64;
        self.lr * libm::pow(self.final_lr_factor, progress)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be ≥ 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive"));
        }
        if !(self.final_lr_factor > 0.0 && self.final_lr_factor <= 1.0) {
            return Err(Error::InvalidConfig(
                "final learning-rate factor must lie in (0, 1]",
            ));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig("grid needs at least two points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamState,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains under `mask` with full-batch Adam. Masked weights are zeroed
/// before the first step and never updated; their moment buffers stay at
/// zero. `final_loss` is evaluated after the last update.
pub fn train(
    params: &ParamState,
    mask: &Mask,
    task: &TaskBinding,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let grid = task.grid(config.grid_points)?;
    let mut params = params.masked(mask)?;
    let mut eval = Evaluator::new(params.spec(), &grid)?;

    let n = params.len();
    let mut trainable = vec![true; n];
    for (l, layout) in params.layouts().iter().enumerate() {
        for (slot, &bit) in trainable[layout.weight_offset..layout.bias_offset]
            .iter_mut()
            .zip(mask.layer_bits(l))
        {
            *slot = bit;
        }
    }

    let AdamConfig { beta1, beta2, eps } = config.adam;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut b1_pow = 1.0;
    let mut b2_pow = 1.0;
    let mut initial_loss = f64::NAN;

    let guard = |epoch: usize, loss: f64| -> Result<()> {
        if !loss.is_finite() || loss > config.divergence_threshold {
            Err(Error::Diverged { epoch, loss })
        } else {
            Ok(())
        }
    };

    for epoch in 0..config.epochs {
        let loss = eval.evaluate(&params, mask, task, Some(&mut grad))?;
        guard(epoch, loss)?;
        if epoch == 0 {
            initial_loss = loss;
        }
        b1_pow *= beta1;
        b2_pow *= beta2;
        let step = config.lr_at(epoch) * libm::sqrt(1.0 - b2_pow) / (1.0 - b1_pow);
        let values = params.as_flat_mut();
        for i in 0..n {
            if !trainable[i] {
                continue;
            }
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            values[i] -= step * m[i] / (libm::sqrt(v[i]) + eps * libm::sqrt(1.0 - b2_pow));
        }
    }
    let final_loss = eval.evaluate(&params, mask, task, None)?;
    guard(config.epochs, final_loss)?;
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
    })
}
