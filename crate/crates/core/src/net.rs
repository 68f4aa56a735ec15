//! Feed-forward conv/dense networks: on-disk format, validation and exact
//! forward passes that keep every post-activation tensor for relevance
//! propagation.
//!
//! Activations between layers use the `[channels, rows, cols]` layout. The
//! conv-to-dense boundary flattens according to the network's
//! [`FlattenOrder`], and [`unflatten`] is its exact inverse.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "network.json";
pub const BLOB_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// Order in which a `[c, h, w]` conv output is laid out as a dense input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlattenOrder {
    /// channel slowest, then row, then column
    #[default]
    Chw,
    /// row slowest, then column, then channel
    Hwc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// conv: `[out, in, kh, kw]`; dense: `[out, in]`
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    /// (rows, cols); `(1, 1)` for dense layers
    pub stride: (usize, usize),
}

impl LayerSpec {
    pub fn conv(
        name: impl Into<String>,
        weights: Tensor,
        bias: Tensor,
        activation: Activation,
        stride: (usize, usize),
    ) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            kind: LayerKind::Conv,
            weights,
            bias,
            activation,
            stride,
        };
        layer.check_params()?;
        Ok(layer)
    }

    pub fn dense(
        name: impl Into<String>,
        weights: Tensor,
        bias: Tensor,
        activation: Activation,
    ) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            kind: LayerKind::Dense,
            weights,
            bias,
            activation,
            stride: (1, 1),
        };
        layer.check_params()?;
        Ok(layer)
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// (kh, kw) for conv layers.
    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weights.shape();
        (s[2], s[3])
    }

    fn check_params(&self) -> Result<()> {
        let rank = match self.kind {
            LayerKind::Conv => 4,
            LayerKind::Dense => 2,
        };
        if self.weights.shape().len() != rank {
            return Err(Error::Network(format!(
                "layer {}: {:?} weights must have rank {rank}, got {:?}",
                self.name,
                self.kind,
                self.weights.shape()
            )));
        }
        if self.bias.shape() != [self.out_dim()] {
            return Err(Error::Network(format!(
                "layer {}: bias shape {:?} does not match {} outputs",
                self.name,
                self.bias.shape(),
                self.out_dim()
            )));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Network(format!(
                "layer {}: stride must be >= 1",
                self.name
            )));
        }
        Ok(())
    }

    /// Output shape for a given input shape, or an error if they do not compose.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            LayerKind::Conv => {
                let [c, h, w] = input[..] else {
                    return Err(Error::Shape(format!(
                        "conv layer {} needs a [c, h, w] input, got {input:?}",
                        self.name
                    )));
                };
                if c != self.in_dim() {
                    return Err(Error::Shape(format!(
                        "conv layer {} expects {} input channels, got {c}",
                        self.name,
                        self.in_dim()
                    )));
                }
                let (kh, kw) = self.kernel();
                if kh > h || kw > w {
                    return Err(Error::Shape(format!(
                        "conv layer {}: kernel {kh}x{kw} larger than input {h}x{w}",
                        self.name
                    )));
                }
                Ok(vec![
                    self.out_dim(),
                    (h - kh) / self.stride.0 + 1,
                    (w - kw) / self.stride.1 + 1,
                ])
            }
            LayerKind::Dense => {
                let n: usize = input.iter().product();
                if n != self.in_dim() {
                    return Err(Error::Shape(format!(
                        "dense layer {} expects {} inputs, got {n}",
                        self.name,
                        self.in_dim()
                    )));
                }
                Ok(vec![self.out_dim()])
            }
        }
    }
}

/// Valid (unpadded) strided convolution over a `[c, h, w]` input.
pub fn conv_forward(input: &Tensor, layer: &LayerSpec) -> Result<Tensor> {
    if layer.kind != LayerKind::Conv {
        return Err(Error::InvalidArgument(format!(
            "layer {} is not a conv layer",
            layer.name
        )));
    }
    let out_shape = layer.output_shape(input.shape())?;
    let (cin, h, w) = input.dims3()?;
    let (oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = layer.kernel();
    let (sh, sw) = layer.stride;
    let x = input.data();
    let wt = layer.weights.data();
    let bias = layer.bias.data();

    let mut out = vec![0.0f32; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for c in 0..cin {
                    let wbase = ((o * cin + c) * kh) * kw;
                    let xbase = c * h * w;
                    for ky in 0..kh {
                        let row = xbase + (oy * sh + ky) * w + ox * sw;
                        let wrow = wbase + ky * kw;
                        for kx in 0..kw {
                            acc += wt[wrow + kx] * x[row + kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = layer.activation.apply(acc);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Fully connected layer on a rank-1 input.
pub fn dense_forward(input: &Tensor, layer: &LayerSpec) -> Result<Tensor> {
    if layer.kind != LayerKind::Dense {
        return Err(Error::InvalidArgument(format!(
            "layer {} is not a dense layer",
            layer.name
        )));
    }
    if input.len() != layer.in_dim() {
        return Err(Error::Shape(format!(
            "dense layer {} expects {} inputs, got {}",
            layer.name,
            layer.in_dim(),
            input.len()
        )));
    }
    let n_in = layer.in_dim();
    let x = input.data();
    let out = layer
        .weights
        .data()
        .chunks_exact(n_in)
        .zip(layer.bias.data())
        .map(|(row, &b)| {
            let dot: f32 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            layer.activation.apply(dot + b)
        })
        .collect();
    Tensor::new(vec![layer.out_dim()], out)
}

/// Flattens a `[c, h, w]` tensor into a rank-1 tensor in the given order.
pub fn flatten(t: &Tensor, order: FlattenOrder) -> Result<Tensor> {
    let flat = match order {
        FlattenOrder::Chw => t.data().to_vec(),
        FlattenOrder::Hwc => t.chw_to_hwc()?.into_data(),
    };
    Ok(Tensor::from_vec(flat))
}

/// Inverse of [`flatten`]: restores a `[c, h, w]` tensor.
pub fn unflatten(flat: &Tensor, shape: &[usize], order: FlattenOrder) -> Result<Tensor> {
    let [c, h, w] = shape[..] else {
        return Err(Error::Shape(format!("unflatten target must be rank 3, got {shape:?}")));
    };
    match order {
        FlattenOrder::Chw => Tensor::new(vec![c, h, w], flat.data().to_vec()),
        FlattenOrder::Hwc => Tensor::new(vec![h, w, c], flat.data().to_vec())?.hwc_to_chw(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    /// (h, w, c)
    pub input_shape: (usize, usize, usize),
    pub action_labels: Vec<String>,
    pub flatten_order: FlattenOrder,
}

impl NetworkSpec {
    pub fn new(
        layers: Vec<LayerSpec>,
        input_shape: (usize, usize, usize),
        action_labels: Vec<String>,
        flatten_order: FlattenOrder,
    ) -> Result<Self> {
        let net = Self {
            layers,
            input_shape,
            action_labels,
            flatten_order,
        };
        net.validate()?;
        Ok(net)
    }

    /// Input tensor shape in activation layout `[c, h, w]`.
    pub fn input_dims(&self) -> [usize; 3] {
        let (h, w, c) = self.input_shape;
        [c, h, w]
    }

    pub fn num_actions(&self) -> usize {
        self.action_labels.len()
    }

    /// Index of the first dense layer.
    pub fn first_dense(&self) -> usize {
        self.layers
            .iter()
            .position(|l| l.kind == LayerKind::Dense)
            .unwrap_or(self.layers.len())
    }

    /// Shapes of every activation, index 0 being the input.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_dims().to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::Network(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Network("input dims must be >= 1".into()));
        }
        let boundary = self.first_dense();
        if boundary == 0 {
            return Err(Error::Network("network must start with a conv layer".into()));
        }
        if boundary == self.layers.len() {
            return Err(Error::Network("network must end with dense layers".into()));
        }
        if let Some(i) = self.layers[boundary..]
            .iter()
            .position(|l| l.kind == LayerKind::Conv)
        {
            return Err(Error::Network(format!(
                "layer {}: conv layer after the flatten boundary",
                boundary + i
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check_params()
                .map_err(|e| Error::Network(format!("layer {i}: {e}")))?;
        }
        let shapes = self.activation_shapes()?;
        let out = shapes.last().unwrap()[0];
        if out != self.action_labels.len() {
            return Err(Error::Network(format!(
                "final layer has {out} outputs but {} action labels",
                self.action_labels.len()
            )));
        }
        Ok(())
    }

    /// Layer index by name.
    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Post-activation outputs; index 0 is the input.
    pub per_layer: Vec<Tensor>,
    pub q_values: Vec<f32>,
}

/// Applies one layer, flattening first when a dense layer follows a rank-3 activation.
pub fn apply_layer(net: &NetworkSpec, layer: &LayerSpec, input: &Tensor) -> Result<Tensor> {
    match layer.kind {
        LayerKind::Conv => conv_forward(input, layer),
        LayerKind::Dense if input.shape().len() == 3 => {
            dense_forward(&flatten(input, net.flatten_order)?, layer)
        }
        LayerKind::Dense => dense_forward(input, layer),
    }
}

/// Runs the network on an input already in `[c, h, w]` layout and scaled to [0, 1].
pub fn forward(net: &NetworkSpec, state: &Tensor) -> Result<ForwardTrace> {
    if state.shape() != net.input_dims() {
        return Err(Error::Shape(format!(
            "state shape {:?} does not match network input {:?}",
            state.shape(),
            net.input_dims()
        )));
    }
    let mut per_layer = Vec::with_capacity(net.layers.len() + 1);
    per_layer.push(state.clone());
    for layer in &net.layers {
        let next = apply_layer(net, layer, per_layer.last().unwrap())?;
        per_layer.push(next);
    }
    let q_values = per_layer.last().unwrap().data().to_vec();
    Ok(ForwardTrace {
        per_layer,
        q_values,
    })
}

// --- on-disk format -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    input_shape: [usize; 3],
    #[serde(default)]
    flatten_order: FlattenOrder,
    action_labels: Vec<String>,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    #[serde(default)]
    name: Option<String>,
    kind: LayerKind,
    /// conv: `[out, in, kh, kw]`; dense: `[out, in]`
    weight_shape: Vec<usize>,
    #[serde(default)]
    stride: Option<[usize; 2]>,
    #[serde(default = "default_padding")]
    padding: String,
    activation: Activation,
    weight_offset: u64,
    bias_offset: u64,
}

fn default_padding() -> String {
    "valid".into()
}

fn read_f32s(blob: &[u8], offset: u64, count: usize, layer: usize) -> Result<Vec<f32>> {
    let start = usize::try_from(offset)
        .map_err(|_| Error::Network(format!("weight blob truncated at layer {layer}")))?;
    let end = start
        .checked_add(count * 4)
        .filter(|&e| e <= blob.len())
        .ok_or_else(|| Error::Network(format!("weight blob truncated at layer {layer}")))?;
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Loads a network directory (`network.json` + `weights.bin`).
pub fn load_network(dir: impl AsRef<Path>) -> Result<NetworkSpec> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let blob_path = dir.join(BLOB_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    let (mut n_conv, mut n_dense) = (0, 0);
    let mut expected_len = 0usize;
    for (i, entry) in manifest.layers.iter().enumerate() {
        if entry.padding != "valid" {
            return Err(Error::Network(format!(
                "layer {i}: unsupported padding {:?}",
                entry.padding
            )));
        }
        let rank = match entry.kind {
            LayerKind::Conv => 4,
            LayerKind::Dense => 2,
        };
        if entry.weight_shape.len() != rank || entry.weight_shape.contains(&0) {
            return Err(Error::Network(format!(
                "layer {i}: bad weight_shape {:?}",
                entry.weight_shape
            )));
        }
        let n_w: usize = entry.weight_shape.iter().product();
        let n_b = entry.weight_shape[0];
        let w = read_f32s(&blob, entry.weight_offset, n_w, i)?;
        let b = read_f32s(&blob, entry.bias_offset, n_b, i)?;
        expected_len = expected_len
            .max(entry.weight_offset as usize + 4 * n_w)
            .max(entry.bias_offset as usize + 4 * n_b);
        let weights = Tensor::new(entry.weight_shape.clone(), w)?;
        let bias = Tensor::new(vec![n_b], b)?;
        let layer = match entry.kind {
            LayerKind::Conv => {
                n_conv += 1;
                let stride = entry.stride.unwrap_or([1, 1]);
                LayerSpec::conv(
                    entry.name.clone().unwrap_or(format!("conv{n_conv}")),
                    weights,
                    bias,
                    entry.activation,
                    (stride[0], stride[1]),
                )
            }
            LayerKind::Dense => {
                n_dense += 1;
                LayerSpec::dense(
                    entry.name.clone().unwrap_or(format!("fc{n_dense}")),
                    weights,
                    bias,
                    entry.activation,
                )
            }
        }
        .map_err(|e| Error::Network(format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    if blob.len() > expected_len {
        return Err(Error::Network(format!(
            "weight blob has {} trailing bytes",
            blob.len() - expected_len
        )));
    }
    let [h, w, c] = manifest.input_shape;
    NetworkSpec::new(layers, (h, w, c), manifest.action_labels, manifest.flatten_order)
}

/// Writes a network directory; weights are packed in layer order, weights before bias.
pub fn save_network(net: &NetworkSpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let weight_offset = blob.len() as u64;
        blob.extend(layer.weights.data().iter().flat_map(|v| v.to_le_bytes()));
        let bias_offset = blob.len() as u64;
        blob.extend(layer.bias.data().iter().flat_map(|v| v.to_le_bytes()));
        entries.push(LayerEntry {
            name: Some(layer.name.clone()),
            kind: layer.kind,
            weight_shape: layer.weights.shape().to_vec(),
            stride: (layer.kind == LayerKind::Conv).then_some([layer.stride.0, layer.stride.1]),
            padding: default_padding(),
            activation: layer.activation,
            weight_offset,
            bias_offset,
        });
    }
    let (h, w, c) = net.input_shape;
    let manifest = Manifest {
        input_shape: [h, w, c],
        flatten_order: net.flatten_order,
        action_labels: net.action_labels.clone(),
        layers: entries,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    fn naive_conv(x: &Tensor, l: &LayerSpec) -> Vec<f32> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let ws = l.weights.shape();
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let (sh, sw) = l.stride;
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        let mut out = Vec::new();
        for oo in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = l.bias.data()[oo] as f64;
                    for cc in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wv = l.weights.data()[((oo * c + cc) * kh + ky) * kw + kx];
                                let iv = x.data()[(cc * h + y * sh + ky) * w + xx * sw + kx];
                                s += wv as f64 * iv as f64;
                            }
                        }
                    }
                    out.push(l.activation.apply(s as f32));
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let l = LayerSpec::conv(
            "c",
            Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(vec![1]),
            Activation::Identity,
            (1, 1),
        )
        .unwrap();
        assert_eq!(conv_forward(&x, &l).unwrap(), x);
    }

    #[test]
    fn conv_constant_sum() {
        let x = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let l = LayerSpec::conv(
            "c",
            Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(),
            Tensor::zeros(vec![1]),
            Activation::Relu,
            (1, 1),
        )
        .unwrap();
        let y = conv_forward(&x, &l).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn conv_kernel_too_large() {
        let x = Tensor::zeros(vec![1, 2, 2]);
        let l = LayerSpec::conv(
            "c",
            Tensor::zeros(vec![1, 1, 3, 3]),
            Tensor::zeros(vec![1]),
            Activation::Relu,
            (1, 1),
        )
        .unwrap();
        assert!(matches!(conv_forward(&x, &l), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for stride in [(1, 1), (2, 1), (2, 3)] {
            let x = rand_tensor(&mut rng, vec![2, 8, 8], -1.0, 1.0);
            let l = LayerSpec::conv(
                "c",
                rand_tensor(&mut rng, vec![3, 2, 3, 2], -1.0, 1.0),
                rand_tensor(&mut rng, vec![3], -1.0, 1.0),
                Activation::Relu,
                stride,
            )
            .unwrap();
            let got = conv_forward(&x, &l).unwrap();
            for (a, b) in got.data().iter().zip(naive_conv(&x, &l)) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dense_cases() {
        let l = LayerSpec::dense(
            "d",
            Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
            Tensor::new(vec![1], vec![3.0]).unwrap(),
            Activation::Relu,
        )
        .unwrap();
        let y = dense_forward(&Tensor::from_vec(vec![4.0, 5.0]), &l).unwrap();
        assert_eq!(y.data(), &[17.0]);
        assert!(dense_forward(&Tensor::from_vec(vec![1.0; 3]), &l).is_err());

        let eye = LayerSpec::dense(
            "i",
            Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
            Tensor::zeros(vec![3]),
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor::from_vec(vec![-1.0, 0.5, 2.0]);
        assert_eq!(dense_forward(&x, &eye).unwrap(), x);
    }

    #[test]
    fn dense_matches_dot_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = LayerSpec::dense(
            "d",
            rand_tensor(&mut rng, vec![9, 32], -1.0, 1.0),
            rand_tensor(&mut rng, vec![9], -1.0, 1.0),
            Activation::Identity,
        )
        .unwrap();
        let x = rand_tensor(&mut rng, vec![32], -10.0, 10.0);
        let y = dense_forward(&x, &l).unwrap();
        for k in 0..9 {
            let mut s = l.bias.data()[k] as f64;
            for j in 0..32 {
                s += l.weights.data()[k * 32 + j] as f64 * x.data()[j] as f64;
            }
            assert!((y.data()[k] as f64 - s).abs() <= 1e-5);
        }
    }

    #[test]
    fn flatten_orders_invert() {
        let t = Tensor::new(vec![2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        for order in [FlattenOrder::Chw, FlattenOrder::Hwc] {
            let f = flatten(&t, order).unwrap();
            assert_eq!(unflatten(&f, &[2, 2, 3], order).unwrap(), t);
        }
        assert_eq!(flatten(&t, FlattenOrder::Hwc).unwrap().data()[..3], [0.0, 6.0, 1.0]);
    }

    #[test]
    fn toy_network_hand_computed() {
        // input 1x2x2 -> conv 1x1 (w=2, b=-1, relu) -> dense 2x4
        let conv = LayerSpec::conv(
            "conv1",
            Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap(),
            Tensor::new(vec![1], vec![-1.0]).unwrap(),
            Activation::Relu,
            (1, 1),
        )
        .unwrap();
        let fc = LayerSpec::dense(
            "fc1",
            Tensor::new(vec![2, 4], vec![1., 1., 1., 1., 1., -1., 0., 2.]).unwrap(),
            Tensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
            Activation::Identity,
        )
        .unwrap();
        let net =
            NetworkSpec::new(vec![conv, fc], (2, 2, 1), vec!["a".into(), "b".into()], FlattenOrder::Chw)
                .unwrap();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 0.25, 2.0, 0.75]).unwrap();
        // conv: relu(2x-1) = [1, 0, 3, 0.5]
        let tr = forward(&net, &x).unwrap();
        assert_eq!(tr.per_layer[1].data(), &[1.0, 0.0, 3.0, 0.5]);
        assert_eq!(tr.q_values, vec![5.0, 2.0]);
        assert_eq!(tr.per_layer.len(), 3);
        assert!(forward(&net, &Tensor::zeros(vec![1, 3, 3])).is_err());
    }

    #[test]
    fn rejects_non_composing() {
        let conv = LayerSpec::conv(
            "conv1",
            Tensor::zeros(vec![1, 1, 1, 1]),
            Tensor::zeros(vec![1]),
            Activation::Relu,
            (1, 1),
        )
        .unwrap();
        let fc = LayerSpec::dense("fc1", Tensor::zeros(vec![2, 5]), Tensor::zeros(vec![2]), Activation::Identity)
            .unwrap();
        let err = NetworkSpec::new(vec![conv, fc], (2, 2, 1), vec!["a".into(), "b".into()], FlattenOrder::Chw)
            .unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }
}
