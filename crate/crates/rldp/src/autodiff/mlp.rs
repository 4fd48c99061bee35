//! Feedforward MLP building blocks over the tape.
//!
//! Weights live in a [`ParamStore`] under `{prefix}.w{i}` / `{prefix}.b{i}`.
//! Both a taped forward (for training) and an eager forward (for target
//! networks and evaluation, where no gradients are needed) are provided; they
//! share the same kernels, so their outputs are bit-identical.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::kernels;
use super::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    None,
    Tanh,
    /// Project output rows onto the radius-sqrt(d) hypersphere.
    Sphere,
}

/// Layer widths include the input width: `[in, h1, ..., out]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_transform: OutputTransform,
}

impl MlpSpec {
    /// Relu hidden layers, `None` on the last layer, then `output_transform`.
    pub fn relu(widths: Vec<usize>, output_transform: OutputTransform) -> Self {
        let n_layers = widths.len().saturating_sub(1);
        let mut activations = vec![Activation::Relu; n_layers];
        if let Some(last) = activations.last_mut() {
            *last = Activation::None;
        }
        MlpSpec { layer_widths: widths, activations, output_transform }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidArgument {
                context: "MlpSpec needs at least one layer (two widths)".into(),
            });
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument { context: "MlpSpec widths must be positive".into() });
        }
        if self.activations.len() != self.layer_widths.len() - 1 {
            return Err(Error::InvalidArgument {
                context: format!(
                    "MlpSpec has {} layers but {} activations",
                    self.layer_widths.len() - 1,
                    self.activations.len()
                ),
            });
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

/// Initialize weights uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
pub fn init_mlp_params(
    spec: &MlpSpec,
    prefix: &str,
    store: &mut ParamStore,
    rng: &mut impl Rng,
) -> Result<()> {
    spec.validate()?;
    for i in 0..spec.n_layers() {
        let fan_in = spec.layer_widths[i];
        let fan_out = spec.layer_widths[i + 1];
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        store.insert(format!("{prefix}.w{i}"), Tensor::matrix(fan_in, fan_out, w)?)?;
        store.insert(format!("{prefix}.b{i}"), Tensor::new(vec![fan_out], b)?)?;
    }
    Ok(())
}

fn check_input(spec: &MlpSpec, prefix: &str, got: usize) -> Result<()> {
    if got != spec.input_dim() {
        return Err(Error::LayerShape {
            layer: format!("{prefix}.w0"),
            expected: spec.input_dim(),
            got,
        });
    }
    Ok(())
}

/// Taped forward pass. When `trainable` is false the weights enter the tape
/// as constants, so no gradient flows to them (stop-gradient).
pub fn forward_mlp(
    graph: &mut Graph,
    spec: &MlpSpec,
    store: &ParamStore,
    prefix: &str,
    trainable: bool,
    input: Var,
) -> Result<Var> {
    spec.validate()?;
    check_input(spec, prefix, graph.value(input).cols())?;
    let mut x = input;
    for i in 0..spec.n_layers() {
        let w_name = format!("{prefix}.w{i}");
        let b_name = format!("{prefix}.b{i}");
        let w_t = store.get(&w_name)?;
        let b_t = store.get(&b_name)?;
        if w_t.rows() != graph.value(x).cols() {
            return Err(Error::LayerShape {
                layer: w_name,
                expected: w_t.rows(),
                got: graph.value(x).cols(),
            });
        }
        let (w, b) = if trainable {
            (graph.param(&w_name, w_t), graph.param(&b_name, b_t))
        } else {
            (graph.constant(w_t.clone()), graph.constant(b_t.clone()))
        };
        x = graph.matmul(x, w)?;
        x = graph.add_bias(x, b)?;
        x = match spec.activations[i] {
            Activation::Relu => graph.relu(x),
            Activation::Tanh => graph.tanh(x),
            Activation::None => x,
        };
    }
    Ok(match spec.output_transform {
        OutputTransform::None => x,
        OutputTransform::Tanh => graph.tanh(x),
        OutputTransform::Sphere => graph.sphere_rows(x),
    })
}

/// Eager forward pass with no tape; used for target branches and rollouts.
pub fn forward_mlp_eager(
    spec: &MlpSpec,
    store: &ParamStore,
    prefix: &str,
    input: &Tensor,
) -> Result<Tensor> {
    spec.validate()?;
    check_input(spec, prefix, input.cols())?;
    let mut rows = input.rows();
    let mut x = input.values().to_vec();
    let mut width = input.cols();
    for i in 0..spec.n_layers() {
        let w_name = format!("{prefix}.w{i}");
        let w = store.get(&w_name)?;
        let b = store.get(&format!("{prefix}.b{i}"))?;
        if w.rows() != width {
            return Err(Error::LayerShape { layer: w_name, expected: w.rows(), got: width });
        }
        let out_w = w.cols();
        let mut y = kernels::matmul(&x, w.values(), rows, width, out_w);
        for row in y.chunks_mut(out_w) {
            for (v, bv) in row.iter_mut().zip(b.values()) {
                *v += bv;
            }
        }
        match spec.activations[i] {
            Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => y.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::None => {}
        }
        x = y;
        width = out_w;
        rows = input.rows();
    }
    match spec.output_transform {
        OutputTransform::None => {}
        OutputTransform::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
        OutputTransform::Sphere => kernels::sphere_rows_inplace(&mut x, width),
    }
    Tensor::matrix(rows, width, x)
}

/// Eager hypersphere projection of each row of `v` onto radius sqrt(d).
pub fn sphere_project(v: &Tensor) -> Tensor {
    let mut vals = v.values().to_vec();
    kernels::sphere_rows_inplace(&mut vals, v.cols());
    Tensor::new(v.shape().to_vec(), vals).expect("same shape")
}
