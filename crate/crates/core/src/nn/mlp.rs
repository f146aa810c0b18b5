//! A small multilayer perceptron with rectifier activations and exact
//! reverse-mode gradients, plus a JSON checkpoint format.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::metrics::format_json_f64;
use crate::rng::RngState;

/// One affine layer; `weight` has shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Symmetric uniform initialization scaled by the inverse square root of
    /// the fan-in.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut RngState) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weight =
            Array2::from_shape_fn((out_dim, in_dim), |_| (rng.uniform() * 2.0 - 1.0) * scale);
        let bias = Array1::from_shape_fn(out_dim, |_| (rng.uniform() * 2.0 - 1.0) * scale);
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `x (B, in) -> (B, out)`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                where_: "linear forward",
                expected: format!("(_, {})", self.in_dim()),
                got: format!("(_, {})", x.ncols()),
            });
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }
}

/// Gradients mirroring a [`Linear`].
#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        Self {
            weight: Array2::zeros(layer.weight.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }

    pub fn add(&mut self, other: &LinearGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Rectifier MLP: hidden affine layers with ReLU, then a linear head (logits
/// for classification, one unit for regression). An optional second head
/// shares the encoder for dual-branch training.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub hidden: Vec<Linear>,
    pub head: Linear,
    pub bbn_head: Option<Linear>,
}

/// Intermediate encoder activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    /// Pre-activation values per hidden layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activation (rectified) values per hidden layer.
    pub post: Vec<Array2<f64>>,
}

impl EncoderPass {
    /// The representation fed to the head: the last hidden activation, or the
    /// input itself for a model without hidden layers.
    pub fn penultimate<'a>(&'a self, input: &'a Array2<f64>) -> &'a Array2<f64> {
        self.post.last().unwrap_or(input)
    }
}

/// All parameter gradients of a model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub hidden: Vec<LinearGrad>,
    pub head: LinearGrad,
    pub bbn_head: Option<LinearGrad>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            hidden: model.hidden.iter().map(LinearGrad::zeros_like).collect(),
            head: LinearGrad::zeros_like(&model.head),
            bbn_head: model.bbn_head.as_ref().map(LinearGrad::zeros_like),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().all(LinearGrad::is_finite)
            && self.head.is_finite()
            && self.bbn_head.as_ref().map_or(true, LinearGrad::is_finite)
    }
}

impl MlpModel {
    /// Seeded model with the given hidden sizes.
    pub fn init(
        in_dim: usize,
        hidden_dims: &[usize],
        out_dim: usize,
        rng: &mut RngState,
    ) -> Self {
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        let mut prev = in_dim;
        for &width in hidden_dims {
            hidden.push(Linear::init(prev, width, rng));
            prev = width;
        }
        let head = Linear::init(prev, out_dim, rng);
        Self {
            hidden,
            head,
            bbn_head: None,
        }
    }

    /// Add the second classifier head for dual-branch training.
    pub fn with_bbn_head(mut self, rng: &mut RngState) -> Self {
        self.bbn_head = Some(Linear::init(self.head.in_dim(), self.head.out_dim(), rng));
        self
    }

    pub fn in_dim(&self) -> usize {
        self.hidden
            .first()
            .map(Linear::in_dim)
            .unwrap_or_else(|| self.head.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// Run the hidden stack, retaining the activations.
    pub fn encoder_forward(&self, x: ArrayView2<'_, f64>) -> Result<EncoderPass> {
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.hidden.len());
        let mut current = x.to_owned();
        for layer in &self.hidden {
            let z = layer.forward(current.view())?;
            let a = z.mapv(|v| v.max(0.0));
            pre.push(z);
            post.push(a.clone());
            current = a;
        }
        Ok(EncoderPass { pre, post })
    }

    /// Full forward pass: `(outputs, encoder activations)`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, EncoderPass)> {
        let pass = self.encoder_forward(x)?;
        let x_owned = x.to_owned();
        let h = pass.penultimate(&x_owned);
        let out = self.head.forward(h.view())?;
        Ok((out, pass))
    }

    /// Inference outputs: the head's logits, averaged equally with the second
    /// head when one exists.
    pub fn inference_logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let pass = self.encoder_forward(x)?;
        let x_owned = x.to_owned();
        let h = pass.penultimate(&x_owned);
        let mut logits = self.head.forward(h.view())?;
        if let Some(second) = &self.bbn_head {
            let other = second.forward(h.view())?;
            logits = (logits + other) * 0.5;
        }
        Ok(logits)
    }

    /// Gradient of a head and of its input representation.
    pub fn head_backward(
        head: &Linear,
        h: ArrayView2<'_, f64>,
        grad_out: ArrayView2<'_, f64>,
    ) -> Result<(LinearGrad, Array2<f64>)> {
        if grad_out.ncols() != head.out_dim() || h.ncols() != head.in_dim() {
            return Err(Error::ShapeMismatch {
                where_: "head backward",
                expected: format!("(_, {}) and (_, {})", head.in_dim(), head.out_dim()),
                got: format!("(_, {}) and (_, {})", h.ncols(), grad_out.ncols()),
            });
        }
        let grad = LinearGrad {
            weight: grad_out.t().dot(&h),
            bias: grad_out.sum_axis(ndarray::Axis(0)),
        };
        let grad_h = grad_out.dot(&head.weight);
        Ok((grad, grad_h))
    }

    /// Backpropagate through the hidden stack given the gradient at the
    /// penultimate representation.
    pub fn encoder_backward(
        &self,
        x: ArrayView2<'_, f64>,
        pass: &EncoderPass,
        grad_penultimate: Array2<f64>,
    ) -> Result<Vec<LinearGrad>> {
        let mut grads: Vec<LinearGrad> = self
            .hidden
            .iter()
            .map(LinearGrad::zeros_like)
            .collect();
        let mut grad_post = grad_penultimate;
        for l in (0..self.hidden.len()).rev() {
            // Through the rectifier.
            let grad_pre = &grad_post * &pass.pre[l].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let input = if l == 0 {
                x.to_owned()
            } else {
                pass.post[l - 1].clone()
            };
            grads[l].weight = grad_pre.t().dot(&input);
            grads[l].bias = grad_pre.sum_axis(ndarray::Axis(0));
            grad_post = grad_pre.dot(&self.hidden[l].weight);
        }
        Ok(grads)
    }

    /// Order-stable hash of the encoder parameters, for freeze assertions.
    pub fn encoder_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.hidden {
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Versioned JSON checkpoint with shape headers and 17-significant-digit
    /// values.
    pub fn to_checkpoint_json(&self) -> String {
        let mut out = String::from("{\"version\":1,\"hidden\":[");
        for (i, layer) in self.hidden.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_linear(&mut out, layer);
        }
        out.push_str("],\"head\":");
        write_linear(&mut out, &self.head);
        out.push_str(",\"bbn_head\":");
        match &self.bbn_head {
            Some(layer) => write_linear(&mut out, layer),
            None => out.push_str("null"),
        }
        out.push('}');
        out
    }

    pub fn from_checkpoint_json(text: &str) -> Result<MlpModel> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::MalformedCheckpoint("missing version".into()))?;
        if version != 1 {
            return Err(Error::MalformedCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let hidden = value
            .get("hidden")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::MalformedCheckpoint("missing hidden layers".into()))?
            .iter()
            .map(read_linear)
            .collect::<Result<Vec<_>>>()?;
        let head = read_linear(
            value
                .get("head")
                .ok_or_else(|| Error::MalformedCheckpoint("missing head".into()))?,
        )?;
        let bbn_head = match value.get("bbn_head") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(read_linear(v)?),
        };
        Ok(MlpModel {
            hidden,
            head,
            bbn_head,
        })
    }
}

fn write_linear(out: &mut String, layer: &Linear) {
    out.push_str(&format!(
        "{{\"shape\":[{},{}],\"weight\":[",
        layer.out_dim(),
        layer.in_dim()
    ));
    for (i, v) in layer.weight.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_json_f64(*v));
    }
    out.push_str("],\"bias\":[");
    for (i, v) in layer.bias.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_json_f64(*v));
    }
    out.push_str("]}");
}

fn read_linear(value: &serde_json::Value) -> Result<Linear> {
    let shape = value
        .get("shape")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::MalformedCheckpoint("layer missing shape".into()))?;
    if shape.len() != 2 {
        return Err(Error::MalformedCheckpoint("shape must have two entries".into()));
    }
    let out_dim = shape[0].as_u64().unwrap_or(0) as usize;
    let in_dim = shape[1].as_u64().unwrap_or(0) as usize;
    let weight_values = read_f64_array(value.get("weight"), "weight")?;
    let bias_values = read_f64_array(value.get("bias"), "bias")?;
    if weight_values.len() != out_dim * in_dim || bias_values.len() != out_dim {
        return Err(Error::MalformedCheckpoint(format!(
            "layer data does not match shape ({out_dim}, {in_dim})"
        )));
    }
    Ok(Linear {
        weight: Array2::from_shape_vec((out_dim, in_dim), weight_values)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?,
        bias: Array1::from_vec(bias_values),
    })
}

fn read_f64_array(value: Option<&serde_json::Value>, what: &str) -> Result<Vec<f64>> {
    value
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::MalformedCheckpoint(format!("layer missing {what}")))?
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::MalformedCheckpoint(format!("non-numeric {what} entry")))
        })
        .collect()
}
