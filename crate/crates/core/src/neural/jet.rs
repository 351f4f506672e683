//! Batched forward-mode jets through the MLP and their reverse-mode adjoint.
//!
//! A [`JetPlan`] stacks several *streams* of the same batch into one matrix so
//! that each layer is a single GEMM. A stream is either
//!
//! * `Value`: an ordinary input point,
//! * `Tangent { base }`: the first directional derivative along some input
//!   direction at the points of block `base`,
//! * `Second { base, tangent }`: the second directional derivative along the
//!   direction carried by `tangent`; the input rows hold the second-order
//!   seed, which is zero for straight-line directions.
//!
//! The output of a `Second` stream along direction `v` is `vᵀ H v`, obtained
//! without forming `H`. [`backward`] propagates gradients with respect to
//! every stream output back to the parameters (and optionally the inputs),
//! so losses built from values, directional derivatives and Hessian
//! quadratic forms all get exact parameter gradients.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{Activation, NetworkParams, ParamGrads};
use crate::error::{FinnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Value,
    Tangent { base: usize },
    Second { base: usize, tangent: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JetPlan {
    kinds: Vec<StreamKind>,
    batch: usize,
}

impl JetPlan {
    pub fn new(kinds: Vec<StreamKind>, batch: usize) -> Result<Self> {
        let bad = |msg: String| Err(FinnError::InvalidParameters(msg));
        for (i, k) in kinds.iter().enumerate() {
            match *k {
                StreamKind::Value => {}
                StreamKind::Tangent { base } => {
                    if kinds.get(base) != Some(&StreamKind::Value) {
                        return bad(format!("stream {i}: base {base} is not a value stream"));
                    }
                }
                StreamKind::Second { base, tangent } => {
                    if kinds.get(base) != Some(&StreamKind::Value) {
                        return bad(format!("stream {i}: base {base} is not a value stream"));
                    }
                    if kinds.get(tangent) != Some(&StreamKind::Tangent { base }) {
                        return bad(format!("stream {i}: {tangent} is not a tangent on {base}"));
                    }
                }
            }
        }
        Ok(Self { kinds, batch })
    }

    /// Just the value stream.
    pub fn values(batch: usize) -> Self {
        Self {
            kinds: vec![StreamKind::Value],
            batch,
        }
    }

    pub fn kinds(&self) -> &[StreamKind] {
        &self.kinds
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn rows(&self) -> usize {
        self.kinds.len() * self.batch
    }

    /// Row range of stream `b` in the stacked matrices.
    pub fn block(&self, b: usize) -> Range<usize> {
        b * self.batch..(b + 1) * self.batch
    }
}

/// Forward state kept for the adjoint pass.
#[derive(Debug, Clone)]
pub struct JetTape {
    plan: JetPlan,
    /// `acts[0]` is the normalized input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    d1: Vec<Array2<f64>>,
    d2: Vec<Array2<f64>>,
    d3: Vec<Array2<f64>>,
}

impl JetTape {
    pub fn plan(&self) -> &JetPlan {
        &self.plan
    }

    /// Network output for every stacked row.
    pub fn output(&self) -> &[f64] {
        self.acts
            .last()
            .and_then(|a| a.as_slice())
            .expect("output layer is contiguous with one column")
    }

    pub fn stream_output(&self, b: usize) -> &[f64] {
        &self.output()[self.plan.block(b)]
    }
}

fn contiguous_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn contiguous(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// Runs every stream of `plan` through the network. `inputs` holds raw
/// (un-normalized) rows, one block of `plan.batch()` rows per stream.
pub fn forward(params: &NetworkParams, plan: &JetPlan, inputs: ArrayView2<f64>) -> Result<JetTape> {
    let n_in = params.n_inputs();
    if inputs.dim() != (plan.rows(), n_in) {
        return Err(FinnError::Shape(format!(
            "jet inputs are {:?}, plan needs ({}, {n_in})",
            inputs.dim(),
            plan.rows()
        )));
    }
    let mut a0 = inputs.to_owned();
    for (b, kind) in plan.kinds.iter().enumerate() {
        let mut block = a0.slice_mut(s![plan.block(b), ..]);
        for mut row in block.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = match kind {
                    StreamKind::Value => (*x - params.norm.shift[j]) / params.norm.scale[j],
                    _ => *x / params.norm.scale[j],
                };
            }
        }
    }

    let n_layers = params.weights.len();
    let mut tape = JetTape {
        plan: plan.clone(),
        acts: Vec::with_capacity(n_layers + 1),
        pre: Vec::with_capacity(n_layers),
        d1: Vec::with_capacity(n_layers),
        d2: Vec::with_capacity(n_layers),
        d3: Vec::with_capacity(n_layers),
    };
    tape.acts.push(a0);
    for l in 0..n_layers {
        let w = &params.weights[l];
        let mut z = tape.acts[l].dot(&w.t());
        for (b, kind) in plan.kinds.iter().enumerate() {
            if *kind == StreamKind::Value {
                let mut block = z.slice_mut(s![plan.block(b), ..]);
                block += &params.biases[l];
            }
        }
        let width = w.nrows();
        let shape = (plan.rows(), width);
        let mut a = Array2::zeros(shape);
        let mut d1 = Array2::zeros(shape);
        let mut d2 = Array2::zeros(shape);
        let mut d3 = Array2::zeros(shape);
        activate(
            params.activations[l],
            plan,
            width,
            contiguous(&z),
            contiguous_mut(&mut a),
            contiguous_mut(&mut d1),
            contiguous_mut(&mut d2),
            contiguous_mut(&mut d3),
        );
        tape.pre.push(z);
        tape.acts.push(a);
        tape.d1.push(d1);
        tape.d2.push(d2);
        tape.d3.push(d3);
    }
    Ok(tape)
}

#[allow(clippy::too_many_arguments)]
fn activate(
    act: Activation,
    plan: &JetPlan,
    width: usize,
    z: &[f64],
    a: &mut [f64],
    d1: &mut [f64],
    d2: &mut [f64],
    d3: &mut [f64],
) {
    let span = |b: usize| {
        let r = plan.block(b);
        r.start * width..r.end * width
    };
    for (b, kind) in plan.kinds.iter().enumerate() {
        if *kind == StreamKind::Value {
            for i in span(b) {
                let (v, p1, p2, p3) = act.eval(z[i]);
                a[i] = v;
                d1[i] = p1;
                d2[i] = p2;
                d3[i] = p3;
            }
        }
    }
    for (b, kind) in plan.kinds.iter().enumerate() {
        match *kind {
            StreamKind::Value => {}
            StreamKind::Tangent { base } => {
                let (rs, rb) = (span(b), span(base));
                for (i, j) in rs.zip(rb) {
                    a[i] = d1[j] * z[i];
                }
            }
            StreamKind::Second { base, tangent } => {
                let (rs, rb, rt) = (span(b), span(base), span(tangent));
                for ((i, j), t) in rs.zip(rb).zip(rt) {
                    a[i] = d2[j] * z[t] * z[t] + d1[j] * z[i];
                }
            }
        }
    }
}

fn activation_adjoint(
    plan: &JetPlan,
    width: usize,
    tape: &JetTape,
    l: usize,
    g_a: &[f64],
    g_z: &mut [f64],
) {
    let z = contiguous(&tape.pre[l]);
    let d1 = contiguous(&tape.d1[l]);
    let d2 = contiguous(&tape.d2[l]);
    let d3 = contiguous(&tape.d3[l]);
    let span = |b: usize| {
        let r = plan.block(b);
        r.start * width..r.end * width
    };
    g_z.iter_mut().for_each(|g| *g = 0.0);
    for (b, kind) in plan.kinds.iter().enumerate() {
        match *kind {
            StreamKind::Value => {
                for i in span(b) {
                    g_z[i] += g_a[i] * d1[i];
                }
            }
            StreamKind::Tangent { base } => {
                for (i, j) in span(b).zip(span(base)) {
                    g_z[i] += g_a[i] * d1[j];
                    g_z[j] += g_a[i] * d2[j] * z[i];
                }
            }
            StreamKind::Second { base, tangent } => {
                for ((i, j), t) in span(b).zip(span(base)).zip(span(tangent)) {
                    let g = g_a[i];
                    g_z[i] += g * d1[j];
                    g_z[t] += 2.0 * g * d2[j] * z[t];
                    g_z[j] += g * (d3[j] * z[t] * z[t] + d2[j] * z[i]);
                }
            }
        }
    }
}

/// Adjoint of [`forward`]. `g_out[r]` is the loss gradient with respect to
/// the output of stacked row `r`. Returns parameter gradients and, if asked,
/// gradients with respect to the raw input rows.
pub fn backward(
    params: &NetworkParams,
    tape: &JetTape,
    g_out: &[f64],
    want_inputs: bool,
) -> Result<(ParamGrads, Option<Array2<f64>>)> {
    let plan = &tape.plan;
    if g_out.len() != plan.rows() {
        return Err(FinnError::Shape(format!(
            "output gradient has {} rows, plan has {}",
            g_out.len(),
            plan.rows()
        )));
    }
    let n_layers = params.weights.len();
    let mut grads = ParamGrads::zeros_like(params);
    let mut g_a = Array2::from_shape_vec((plan.rows(), 1), g_out.to_vec())
        .expect("shape checked above");
    for l in (0..n_layers).rev() {
        let width = params.weights[l].nrows();
        let mut g_z = Array2::zeros((plan.rows(), width));
        activation_adjoint(plan, width, tape, l, contiguous(&g_a), contiguous_mut(&mut g_z));

        grads.weights[l] = g_z.t().dot(&tape.acts[l]);
        let mut gb = Array1::zeros(width);
        for (b, kind) in plan.kinds.iter().enumerate() {
            if *kind == StreamKind::Value {
                gb += &g_z.slice(s![plan.block(b), ..]).sum_axis(Axis(0));
            }
        }
        grads.biases[l] = gb;
        if l > 0 || want_inputs {
            g_a = g_z.dot(&params.weights[l]);
        }
    }
    if !want_inputs {
        return Ok((grads, None));
    }
    for mut row in g_a.rows_mut() {
        for (j, g) in row.iter_mut().enumerate() {
            *g /= params.norm.scale[j];
        }
    }
    Ok((grads, Some(g_a)))
}
