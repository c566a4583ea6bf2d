//! Feed-forward ReLU networks.
//!
//! A [`LayeredReluNetwork`] is an ordered chain of affine layers, each followed
//! by either a ReLU or the identity. Weights are stored row-compressed so the
//! hand-built perception network (tens of thousands of neurons with at most a
//! handful of inputs each) and the dense learned controller share one type.
//!
//! Networks are immutable once built and every constructor runs the
//! dimension-chain validator, so any value of this type is well formed.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Errors raised while building, evaluating or (de)serializing a network.
#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error in layer {layer}: {message}")]
    Validation { layer: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

/// Activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }
}

/// One affine layer `act(W x + b)` with `W` stored in compressed-row form.
///
/// Entries are kept exactly as supplied (explicit zeros included), which keeps
/// serialization round trips byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    /// Builds a layer from a row-major dense weight matrix.
    pub fn dense(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(NetworkError::DimensionMismatch {
                expected: rows * cols,
                actual: weights.len(),
                context: "dense weight count".into(),
            });
        }
        let row_ptr = (0..=rows).map(|r| r * cols).collect();
        let col_idx = (0..rows).flat_map(|_| 0..cols).collect();
        Self::from_parts(rows, cols, row_ptr, col_idx, weights, bias, activation)
    }

    /// Builds a layer from `(row, col, value)` triplets. Triplets are sorted by
    /// `(row, col)`; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows || c >= cols {
                return Err(NetworkError::Invalid(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols}"
                )));
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::from_parts(rows, cols, row_ptr, col_idx, values, bias, activation)
    }

    fn from_parts(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let layer = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            bias,
            activation,
        };
        layer.validate(0)?;
        Ok(layer)
    }

    /// Identity map on `n` coordinates.
    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    /// `scale * I` on `n` coordinates, no bias, identity activation.
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let triplets = (0..n).map(|i| (i, i, scale)).collect();
        Self::from_triplets(n, n, triplets, vec![0.0; n], Activation::Identity)
            .expect("scaled identity is well formed")
    }

    fn validate(&self, index: usize) -> Result<()> {
        let fail = |message: String| NetworkError::Validation {
            layer: index,
            message,
        };
        if self.rows == 0 || self.cols == 0 {
            return Err(fail("layer has zero width".into()));
        }
        if self.bias.len() != self.rows {
            return Err(fail(format!(
                "bias length {} does not match {} rows",
                self.bias.len(),
                self.rows
            )));
        }
        if self.row_ptr.len() != self.rows + 1
            || self.row_ptr[0] != 0
            || self.row_ptr[self.rows] != self.values.len()
            || self.col_idx.len() != self.values.len()
            || self.row_ptr.windows(2).any(|w| w[0] > w[1])
        {
            return Err(fail("inconsistent row structure".into()));
        }
        if self.col_idx.iter().any(|&c| c >= self.cols) {
            return Err(fail("column index out of range".into()));
        }
        if self
            .values
            .iter()
            .chain(self.bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(NetworkError::NonFinite(format!("layer {index}")));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Stored entries `(col, value)` of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.rows).map(|r| {
            let mut acc = self.bias[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            acc
        }));
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        self.affine(x, out);
        if self.activation == Activation::Relu {
            for v in out.iter_mut() {
                *v = Activation::Relu.apply(*v);
            }
        }
    }

    /// Row-major dense copy of the weight matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                dense[r * self.cols + c] += v;
            }
        }
        dense
    }

    fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    /// Affine composition `self ∘ inner` for an identity-activated `inner`.
    fn fuse_after(&self, inner: &Layer) -> Layer {
        debug_assert_eq!(inner.activation, Activation::Identity);
        let mut triplets = Vec::new();
        let mut bias = self.bias.clone();
        let mut acc = vec![0.0; inner.cols];
        let mut touched = vec![false; inner.cols];
        let mut cols_used = Vec::new();
        for r in 0..self.rows {
            for (k, w) in self.row(r) {
                bias[r] += w * inner.bias[k];
                for (c, v) in inner.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols_used.push(c);
                    }
                    acc[c] += w * v;
                }
            }
            cols_used.sort_unstable();
            for &c in &cols_used {
                triplets.push((r, c, acc[c]));
                acc[c] = 0.0;
                touched[c] = false;
            }
            cols_used.clear();
        }
        Layer::from_triplets(self.rows, inner.cols, triplets, bias, self.activation)
            .expect("fused layer is well formed")
    }
}

/// A validated chain of [`Layer`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredReluNetwork {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl LayeredReluNetwork {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    /// One identity layer on `n` coordinates.
    pub fn identity(n: usize) -> Self {
        Self::new(n, vec![Layer::identity(n)]).expect("identity is well formed")
    }

    /// Dimension-chain validator: widths agree between consecutive layers,
    /// every entry is finite and the network is non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NetworkError::Invalid("network has no layers".into()));
        }
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if layer.cols != width {
                return Err(NetworkError::Validation {
                    layer: i,
                    message: format!("expects {} inputs, previous width is {width}", layer.cols),
                });
            }
            width = layer.rows;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(self.input_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Widths of every layer output, in order.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.rows).collect()
    }

    /// Total number of ReLU neurons.
    pub fn relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .map(|l| l.rows)
            .sum()
    }

    /// Forward pass.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(NetworkError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
                context: "network input".into(),
            });
        }
        Ok(self.forward(x))
    }

    /// Forward pass without the length check. Panics on a short input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass that also returns every layer's pre-activation.
    pub fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = Vec::new();
            layer.affine(&cur, &mut z);
            cur = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
        }
        pre
    }

    /// Network computing `second(first(x))`. Layers are concatenated without
    /// fusing, so the layer count is the sum of both counts.
    pub fn compose(first: &Self, second: &Self) -> Result<Self> {
        if first.output_dim() != second.input_dim {
            return Err(NetworkError::DimensionMismatch {
                expected: second.input_dim,
                actual: first.output_dim(),
                context: "composition boundary".into(),
            });
        }
        let mut layers = first.layers.clone();
        layers.extend(second.layers.iter().cloned());
        Self::new(first.input_dim, layers)
    }

    /// Like [`compose`](Self::compose) but folds the boundary into one layer
    /// when the last layer of `first` is identity-activated.
    pub fn compose_fused(first: &Self, second: &Self) -> Result<Self> {
        let plain = Self::compose(first, second)?;
        let boundary = first.layers.len() - 1;
        if first.layers[boundary].activation != Activation::Identity {
            return Ok(plain);
        }
        let mut layers = first.layers[..boundary].to_vec();
        layers.push(second.layers[0].fuse_after(&first.layers[boundary]));
        layers.extend(second.layers[1..].iter().cloned());
        Self::new(first.input_dim, layers)
    }

    /// Block-diagonal stack: the result maps the concatenation of the inputs to
    /// the concatenation of the outputs. Shorter networks are padded with
    /// trailing identity layers.
    pub fn stack_parallel(nets: &[Self]) -> Result<Self> {
        if nets.is_empty() {
            return Err(NetworkError::Invalid("cannot stack an empty list".into()));
        }
        let depth = nets.iter().map(|n| n.layers.len()).max().unwrap_or(0);
        let padded: Vec<Vec<Layer>> = nets
            .iter()
            .map(|n| {
                let mut layers = n.layers.clone();
                while layers.len() < depth {
                    layers.push(Layer::identity(n.output_dim()));
                }
                layers
            })
            .collect();
        let mut layers = Vec::with_capacity(depth);
        for k in 0..depth {
            let act = padded[0][k].activation;
            if padded.iter().any(|p| p[k].activation != act) {
                return Err(NetworkError::Invalid(format!(
                    "activations differ across stacked networks at layer {k}"
                )));
            }
            let rows: usize = padded.iter().map(|p| p[k].rows).sum();
            let cols: usize = padded.iter().map(|p| p[k].cols).sum();
            let mut triplets = Vec::new();
            let mut bias = Vec::with_capacity(rows);
            let (mut r0, mut c0) = (0, 0);
            for p in &padded {
                let layer = &p[k];
                triplets.extend(layer.triplets().into_iter().map(|(r, c, v)| (r + r0, c + c0, v)));
                bias.extend_from_slice(&layer.bias);
                r0 += layer.rows;
                c0 += layer.cols;
            }
            layers.push(Layer::from_triplets(rows, cols, triplets, bias, act)?);
        }
        let input_dim = nets.iter().map(|n| n.input_dim).sum();
        Self::new(input_dim, layers)
    }

    /// Writes the network in the weight-file format (see `docs/formats.md`).
    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_weights_string())?;
        Ok(())
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_weights_str(&text)
    }

    pub fn to_weights_string(&self) -> String {
        let file = WeightFile {
            format: WEIGHT_FORMAT.to_string(),
            input_dim: self.input_dim,
            layers: self.layers.iter().map(LayerRecord::from_layer).collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("weight file serializes");
        text.push('\n');
        text
    }

    pub fn from_weights_str(text: &str) -> Result<Self> {
        let file: WeightFile = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.format != WEIGHT_FORMAT {
            return Err(NetworkError::Parse {
                line: 1,
                column: 1,
                message: format!("unsupported format tag {:?}", file.format),
            });
        }
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, rec)| rec.into_layer(i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.input_dim, layers)
    }

    /// Copy with the activation of layer `index` replaced.
    pub fn with_layer_activation(&self, index: usize, activation: Activation) -> Result<Self> {
        let mut layers = self.layers.clone();
        let layer = layers
            .get_mut(index)
            .ok_or_else(|| NetworkError::Invalid(format!("no layer {index}")))?;
        *layer = layer.clone().with_activation(activation);
        Self::new(self.input_dim, layers)
    }
}

impl fmt::Display for LayeredReluNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for l in &self.layers {
            let tag = match l.activation {
                Activation::Relu => "relu",
                Activation::Identity => "id",
            };
            write!(f, " -> {}({tag})", l.rows)?;
        }
        Ok(())
    }
}

const WEIGHT_FORMAT: &str = "layered-relu/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    format: String,
    input_dim: usize,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    activation: Activation,
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entries: Option<Vec<(usize, usize, f64)>>,
    bias: Vec<f64>,
}

impl LayerRecord {
    fn from_layer(layer: &Layer) -> Self {
        let full = layer.nnz() == layer.rows * layer.cols
            && (0..layer.rows).all(|r| layer.row(r).map(|(c, _)| c).eq(0..layer.cols));
        let (weights, entries) = if full {
            (Some(layer.values.clone()), None)
        } else {
            (None, Some(layer.triplets()))
        };
        Self {
            activation: layer.activation,
            rows: layer.rows,
            cols: layer.cols,
            weights,
            entries,
            bias: layer.bias.clone(),
        }
    }

    fn into_layer(self, index: usize) -> Result<Layer> {
        let fail = |message: String| NetworkError::Validation {
            layer: index,
            message,
        };
        if self.bias.len() != self.rows {
            return Err(fail(format!(
                "bias length {} does not match rows {}",
                self.bias.len(),
                self.rows
            )));
        }
        let layer = match (self.weights, self.entries) {
            (Some(w), None) => {
                if w.len() != self.rows * self.cols {
                    return Err(fail(format!(
                        "weights length {} does not match {}x{}",
                        w.len(),
                        self.rows,
                        self.cols
                    )));
                }
                Layer::dense(self.rows, self.cols, w, self.bias, self.activation)
            }
            (None, Some(e)) => {
                Layer::from_triplets(self.rows, self.cols, e, self.bias, self.activation)
            }
            _ => return Err(fail("exactly one of `weights` or `entries` is required".into())),
        };
        layer.map_err(|e| match e {
            NetworkError::Validation { message, .. } => fail(message),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_relu() -> LayeredReluNetwork {
        let layer = Layer::dense(1, 1, vec![1.0], vec![0.0], Activation::Relu).unwrap();
        LayeredReluNetwork::new(1, vec![layer]).unwrap()
    }

    fn negate(n: usize) -> LayeredReluNetwork {
        LayeredReluNetwork::new(n, vec![Layer::scaled_identity(n, -1.0)]).unwrap()
    }

    #[test]
    fn identity_passes_through() {
        let net = LayeredReluNetwork::identity(2);
        assert_eq!(net.evaluate(&[3.0, -2.0]).unwrap(), vec![3.0, -2.0]);
    }

    #[test]
    fn relu_clamps_negative() {
        assert_eq!(single_relu().evaluate(&[-5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let err = single_relu().evaluate(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, NetworkError::DimensionMismatch { .. }));
    }

    #[test]
    fn negate_twice_is_identity() {
        let n = negate(3);
        let twice = LayeredReluNetwork::compose(&n, &n).unwrap();
        assert_eq!(twice.layers().len(), 2);
        assert_eq!(twice.evaluate(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn compose_rejects_mismatch() {
        let err = LayeredReluNetwork::compose(&negate(2), &negate(3)).unwrap_err();
        assert!(matches!(err, NetworkError::DimensionMismatch { .. }));
    }

    #[test]
    fn fused_compose_drops_identity_boundary() {
        let a = LayeredReluNetwork::new(
            2,
            vec![Layer::dense(2, 2, vec![1.0, 2.0, -1.0, 0.5], vec![0.1, -0.2], Activation::Identity).unwrap()],
        )
        .unwrap();
        let b = LayeredReluNetwork::new(
            2,
            vec![Layer::dense(1, 2, vec![3.0, -1.0], vec![0.5], Activation::Relu).unwrap()],
        )
        .unwrap();
        let fused = LayeredReluNetwork::compose_fused(&a, &b).unwrap();
        let plain = LayeredReluNetwork::compose(&a, &b).unwrap();
        assert_eq!(fused.layers().len(), 1);
        for x in [[0.3, -0.7], [2.0, 1.0], [-1.0, -4.0]] {
            let u = fused.evaluate(&x).unwrap()[0];
            let v = plain.evaluate(&x).unwrap()[0];
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn stacking_requires_input() {
        assert!(LayeredReluNetwork::stack_parallel(&[]).is_err());
    }

    #[test]
    fn stack_of_one_is_that_net() {
        let net = single_relu();
        let stacked = LayeredReluNetwork::stack_parallel(std::slice::from_ref(&net)).unwrap();
        assert_eq!(stacked, net);
    }

    #[test]
    fn bias_length_mismatch_is_a_validation_error() {
        let text = r#"{"format":"layered-relu/1","input_dim":1,"layers":[
            {"activation":"relu","rows":1,"cols":1,"weights":[1.0],"bias":[0.0,1.0]}]}"#;
        let err = LayeredReluNetwork::from_weights_str(text).unwrap_err();
        assert!(matches!(err, NetworkError::Validation { layer: 0, .. }), "{err}");
    }

    #[test]
    fn malformed_file_reports_line() {
        let text = "{\n\"format\": \"layered-relu/1\",\n\"input_dim\": 1,\n\"layers\": [ nope ]\n}";
        match LayeredReluNetwork::from_weights_str(text).unwrap_err() {
            NetworkError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_finite_literals_are_rejected() {
        for bad in ["NaN", "Infinity", "1e999"] {
            let text = format!(
                r#"{{"format":"layered-relu/1","input_dim":1,"layers":[
                {{"activation":"identity","rows":1,"cols":1,"weights":[{bad}],"bias":[0.0]}}]}}"#
            );
            assert!(LayeredReluNetwork::from_weights_str(&text).is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn layer_chain_mismatch_is_rejected() {
        let l1 = Layer::dense(2, 1, vec![1.0, 1.0], vec![0.0, 0.0], Activation::Relu).unwrap();
        let l2 = Layer::dense(1, 3, vec![1.0, 1.0, 1.0], vec![0.0], Activation::Identity).unwrap();
        assert!(LayeredReluNetwork::new(1, vec![l1, l2]).is_err());
    }
}
