//! Dense three-layer feed-forward networks with hand-written reverse mode.
//!
//! Parameters live in one flat vector in canonical order: for each layer the
//! row-major weight matrix `(out, in)` followed by its bias vector. Every
//! network in the crate has exactly [`LAYER_COUNT`] affine layers
//! (input -> hidden -> hidden -> output).
//!
//! The batched entry points ([`Network::tape`], [`Network::backward_tape`])
//! are what the learners use; [`forward`] and [`backward`] are single-sample
//! conveniences built on them.

use std::io::{Read, Write};
use std::ops::{Deref, DerefMut};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Identity output.
    Linear,
    /// `tanh`, mapping every component into `[-1, 1]`.
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl NetworkShape {
    /// Rectified hidden layers, the default for every network in the crate.
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let shape = Self {
            input_dim,
            hidden_dim,
            output_dim,
            hidden_activation: HiddenActivation::Relu,
            output_activation,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn with_hidden_activation(mut self, activation: HiddenActivation) -> Self {
        self.hidden_activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidShape(format!(
                "all dims must be >= 1, got {}x{}x{}",
                self.input_dim, self.hidden_dim, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> [(usize, usize); LAYER_COUNT] {
        [
            (self.input_dim, self.hidden_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.hidden_dim, self.output_dim),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| o * i + o).sum()
    }

    /// Offsets of the weight block of each layer; the bias block follows it.
    fn offsets(&self) -> [usize; LAYER_COUNT] {
        let mut out = [0; LAYER_COUNT];
        let mut at = 0;
        for (slot, (i, o)) in out.iter_mut().zip(self.layer_dims()) {
            *slot = at;
            at += o * i + o;
        }
        out
    }
}

/// Flat parameter storage in canonical layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Activations recorded during a batched forward pass.
///
/// `activations[0]` is the input batch and `activations[LAYER_COUNT]` the
/// network output; rows are samples.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.activations[LAYER_COUNT]
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("tape holds every layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub shape: NetworkShape,
    pub params: ParameterVector,
}

impl Network {
    pub fn new(shape: NetworkShape, params: ParameterVector) -> Result<Self> {
        shape.validate()?;
        check_len("parameters", shape.parameter_count(), params.len())?;
        Ok(Self { shape, params })
    }

    pub fn init(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let params = init_parameters(&shape, seed);
        Ok(Self { shape, params })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        forward(&self.shape, &self.params, input)
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.tape(input)?.into_output())
    }

    /// Batched forward pass keeping every activation for [`Self::backward_tape`].
    pub fn tape(&self, input: ArrayView2<'_, f64>) -> Result<Tape> {
        run_tape(&self.shape, &self.params, input)
    }

    /// Reverse pass over a recorded tape.
    ///
    /// `output_grad` is the gradient of a scalar loss with respect to the
    /// network output. When `param_grad` is given the parameter gradient is
    /// accumulated into it (it is not cleared). Returns the input gradient.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<'_, f64>,
        param_grad: Option<&mut [f64]>,
    ) -> Result<Array2<f64>> {
        run_backward(&self.shape, &self.params, tape, output_grad, param_grad)
    }
}

fn layer<'a>(
    shape: &NetworkShape,
    params: &'a [f64],
    l: usize,
) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let (fan_in, fan_out) = shape.layer_dims()[l];
    let at = shape.offsets()[l];
    let w = &params[at..at + fan_in * fan_out];
    let b = &params[at + fan_in * fan_out..at + fan_in * fan_out + fan_out];
    (
        ArrayView2::from_shape((fan_out, fan_in), w).expect("layer block matches shape"),
        ArrayView1::from(b),
    )
}

fn run_tape(shape: &NetworkShape, params: &[f64], input: ArrayView2<'_, f64>) -> Result<Tape> {
    check_len("network input", shape.input_dim, input.ncols())?;
    let mut activations = Vec::with_capacity(LAYER_COUNT + 1);
    activations.push(input.to_owned());
    for l in 0..LAYER_COUNT {
        let (w, b) = layer(shape, params, l);
        if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }
        let mut z = activations[l].dot(&w.t());
        z += &b;
        if l + 1 < LAYER_COUNT {
            match shape.hidden_activation {
                HiddenActivation::Relu => z.mapv_inplace(|v| v.max(0.0)),
                HiddenActivation::Tanh => z.mapv_inplace(f64::tanh),
            }
        } else if shape.output_activation == OutputActivation::Bounded {
            z.mapv_inplace(f64::tanh);
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }
        activations.push(z);
    }
    Ok(Tape { activations })
}

fn run_backward(
    shape: &NetworkShape,
    params: &[f64],
    tape: &Tape,
    output_grad: ArrayView2<'_, f64>,
    mut param_grad: Option<&mut [f64]>,
) -> Result<Array2<f64>> {
    let batch = tape.activations[0].nrows();
    if output_grad.dim() != (batch, shape.output_dim) {
        return Err(Error::DimensionMismatch {
            what: "output gradient",
            expected: batch * shape.output_dim,
            got: output_grad.len(),
        });
    }
    if let Some(g) = param_grad.as_deref() {
        check_len("parameter gradient", shape.parameter_count(), g.len())?;
    }

    let offsets = shape.offsets();
    let mut upstream = output_grad.to_owned();
    for l in (0..LAYER_COUNT).rev() {
        let out = &tape.activations[l + 1];
        let x = &tape.activations[l];
        // upstream becomes dL/dz for this layer
        if l + 1 < LAYER_COUNT {
            match shape.hidden_activation {
                HiddenActivation::Relu => upstream.zip_mut_with(out, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                }),
                HiddenActivation::Tanh => upstream.zip_mut_with(out, |g, &a| *g *= 1.0 - a * a),
            }
        } else if shape.output_activation == OutputActivation::Bounded {
            upstream.zip_mut_with(out, |g, &a| *g *= 1.0 - a * a);
        }
        if !upstream.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }

        let (fan_in, fan_out) = shape.layer_dims()[l];
        if let Some(g) = param_grad.as_deref_mut() {
            let at = offsets[l];
            let (gw, rest) = g[at..].split_at_mut(fan_in * fan_out);
            let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).expect("grad block");
            general_mat_mul(1.0, &upstream.t(), x, 1.0, &mut gw);
            for (gb, s) in rest[..fan_out].iter_mut().zip(upstream.sum_axis(Axis(0))) {
                *gb += s;
            }
        }
        let (w, _) = layer(shape, params, l);
        upstream = upstream.dot(&w);
    }
    Ok(upstream)
}

/// Single-sample forward pass.
pub fn forward(shape: &NetworkShape, params: &ParameterVector, input: &[f64]) -> Result<Vec<f64>> {
    check_len("parameters", shape.parameter_count(), params.len())?;
    check_len("network input", shape.input_dim, input.len())?;
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    Ok(run_tape(shape, params, x)?.into_output().into_raw_vec())
}

/// Single-sample reverse pass: `(dL/dparams, dL/dinput)` given `dL/doutput`.
pub fn backward(
    shape: &NetworkShape,
    params: &ParameterVector,
    input: &[f64],
    output_gradient: &[f64],
) -> Result<(ParameterVector, Vec<f64>)> {
    check_len("parameters", shape.parameter_count(), params.len())?;
    check_len("network input", shape.input_dim, input.len())?;
    check_len("output gradient", shape.output_dim, output_gradient.len())?;
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    let tape = run_tape(shape, params, x)?;
    let g =
        ArrayView2::from_shape((1, output_gradient.len()), output_gradient).expect("row vector");
    let mut grad = ParameterVector::zeros(shape.parameter_count());
    let dx = run_backward(shape, params, &tape, g, Some(&mut grad))?;
    Ok((grad, dx.into_raw_vec()))
}

/// Uniform in `±1/sqrt(fan_in)` for weights and biases of every layer.
pub fn init_parameters(shape: &NetworkShape, seed: u64) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(shape.parameter_count());
    for (fan_in, fan_out) in shape.layer_dims() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        values.extend((0..fan_in * fan_out + fan_out).map(|_| dist.sample(&mut rng)));
    }
    ParameterVector(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam descent step, in place.
pub fn adam_step(params: &mut [f64], gradient: &[f64], state: &mut AdamState) -> Result<()> {
    check_len("gradient", params.len(), gradient.len())?;
    check_len("adam first moment", params.len(), state.first_moment.len())?;
    check_len(
        "adam second moment",
        params.len(),
        state.second_moment.len(),
    )?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(gradient)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn polyak_update(target: &mut [f64], online: &[f64], tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidTau(tau));
    }
    check_len("polyak online parameters", target.len(), online.len())?;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

fn activation_code(shape: &NetworkShape) -> (u32, u32) {
    let hidden = match shape.hidden_activation {
        HiddenActivation::Relu => 0,
        HiddenActivation::Tanh => 1,
    };
    let output = match shape.output_activation {
        OutputActivation::Linear => 0,
        OutputActivation::Bounded => 1,
    };
    (hidden, output)
}

/// Writes the checkpoint format: six little-endian `u32` header words
/// (input, hidden, output, layer count, hidden activation, output
/// activation) followed by the parameters as little-endian `f64`.
pub fn write_checkpoint<W: Write>(mut w: W, net: &Network) -> std::io::Result<()> {
    let (hidden_act, output_act) = activation_code(&net.shape);
    let header = [
        net.shape.input_dim as u32,
        net.shape.hidden_dim as u32,
        net.shape.output_dim as u32,
        LAYER_COUNT as u32,
        hidden_act,
        output_act,
    ];
    for word in header {
        w.write_all(&word.to_le_bytes())?;
    }
    for v in net.params.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let malformed = |reason: String| Error::Malformed {
        what: "checkpoint",
        reason,
    };
    let mut word = [0u8; 4];
    let mut header = [0u32; 6];
    for h in header.iter_mut() {
        r.read_exact(&mut word)
            .map_err(|e| malformed(format!("header: {e}")))?;
        *h = u32::from_le_bytes(word);
    }
    if header[3] as usize != LAYER_COUNT {
        return Err(malformed(format!(
            "layer count {} != {LAYER_COUNT}",
            header[3]
        )));
    }
    let hidden_activation = match header[4] {
        0 => HiddenActivation::Relu,
        1 => HiddenActivation::Tanh,
        other => return Err(malformed(format!("hidden activation code {other}"))),
    };
    let output_activation = match header[5] {
        0 => OutputActivation::Linear,
        1 => OutputActivation::Bounded,
        other => return Err(malformed(format!("output activation code {other}"))),
    };
    let shape = NetworkShape {
        input_dim: header[0] as usize,
        hidden_dim: header[1] as usize,
        output_dim: header[2] as usize,
        hidden_activation,
        output_activation,
    };
    shape.validate()?;
    let mut values = Vec::with_capacity(shape.parameter_count());
    let mut buf = [0u8; 8];
    for _ in 0..shape.parameter_count() {
        r.read_exact(&mut buf)
            .map_err(|e| malformed(format!("parameters: {e}")))?;
        values.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf).map_err(|e| malformed(e.to_string()))? != 0 {
        return Err(malformed("trailing bytes".into()));
    }
    Network::new(shape, ParameterVector(values))
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
