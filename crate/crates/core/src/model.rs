//! Sequential models built from dense or SVD-form layers, and the two
//! desk-scale reference architectures.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{ConvGeometry, DecompositionScheme, DenseLayer, LayerGeometry, SvdLayer};
use crate::regularizers::FactorVars;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum ParamLayer {
    Dense(DenseLayer),
    Svd(SvdLayer),
}

impl ParamLayer {
    pub fn geometry(&self) -> &LayerGeometry {
        match self {
            ParamLayer::Dense(l) => &l.geometry,
            ParamLayer::Svd(l) => &l.geometry,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            ParamLayer::Dense(l) => l.tensors(),
            ParamLayer::Svd(l) => l.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            ParamLayer::Dense(l) => l.tensors_mut(),
            ParamLayer::Svd(l) => l.tensors_mut(),
        }
    }

    pub fn kinds(&self) -> Vec<ParamKind> {
        let (main, bias): (&[ParamKind], bool) = match self {
            ParamLayer::Dense(l) => (&[ParamKind::Weight], l.bias.is_some()),
            ParamLayer::Svd(l) => (&[ParamKind::U, ParamKind::S, ParamKind::V], l.bias.is_some()),
        };
        let mut kinds = main.to_vec();
        if bias {
            kinds.push(ParamKind::Bias);
        }
        kinds
    }

    pub fn param_count(&self) -> usize {
        match self {
            ParamLayer::Dense(l) => l.param_count(),
            ParamLayer::Svd(l) => l.param_count(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        match self {
            ParamLayer::Dense(l) => l.forward(tape, vars, input),
            ParamLayer::Svd(l) => l.forward(tape, vars, input),
        }
    }

    pub fn as_svd(&self) -> Option<&SvdLayer> {
        match self {
            ParamLayer::Svd(l) => Some(l),
            ParamLayer::Dense(_) => None,
        }
    }

    /// Dense weight equivalent (the composed weight for SVD layers).
    pub fn dense_weight(&self) -> Tensor {
        match self {
            ParamLayer::Dense(l) => l.weight.clone(),
            ParamLayer::Svd(l) => l.compose_effective_weight(),
        }
    }
}

/// Role of a trainable tensor; used to exempt singular values from weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    U,
    S,
    V,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Layer(ParamLayer),
    Relu,
    MaxPool(usize),
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    /// Architecture identifier, e.g. `cnn-s`.
    pub name: String,
    /// Per-sample input shape (`[d]` or `[c, h, w]`).
    pub input_shape: Vec<usize>,
    pub blocks: Vec<Block>,
}

/// Tape handles for every parameter layer of a model, in block order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub layers: Vec<Vec<Var>>,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flatten().copied().collect()
    }
}

impl Model {
    /// `input → 256 → 64 → classes` fully connected network with ReLU.
    pub fn mlp_s<R: Rng + ?Sized>(input_shape: &[usize], classes: usize, rng: &mut R) -> Self {
        let d: usize = input_shape.iter().product();
        let fc = |o, i, rng: &mut R| Block::Layer(ParamLayer::Dense(DenseLayer::init(LayerGeometry::linear(o, i), rng)));
        let blocks = vec![
            Block::Flatten,
            fc(256, d, rng),
            Block::Relu,
            fc(64, 256, rng),
            Block::Relu,
            fc(classes, 64, rng),
        ];
        Model {
            name: "mlp-s".into(),
            input_shape: input_shape.to_vec(),
            blocks,
        }
    }

    /// conv 8@3×3 → conv 16@3×3 → 2×2 max-pool → fully connected, ReLU
    /// after each conv, same padding.
    pub fn cnn_s<R: Rng + ?Sized>(input_shape: &[usize], classes: usize, rng: &mut R) -> Result<Self> {
        let &[c, h, w] = input_shape else {
            return Err(Error::Geometry(format!(
                "cnn-s needs a [c, h, w] input, got {input_shape:?}"
            )));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Geometry(format!("cnn-s needs even spatial extents, got {h}x{w}")));
        }
        let conv = |n, c, rng: &mut R| -> Result<Block> {
            let g = LayerGeometry::Conv(ConvGeometry::new(n, c, 3, 3, 1, 1)?);
            Ok(Block::Layer(ParamLayer::Dense(DenseLayer::init(g, rng))))
        };
        let blocks = vec![
            conv(8, c, rng)?,
            Block::Relu,
            conv(16, 8, rng)?,
            Block::Relu,
            Block::MaxPool(2),
            Block::Flatten,
            Block::Layer(ParamLayer::Dense(DenseLayer::init(
                LayerGeometry::linear(classes, 16 * (h / 2) * (w / 2)),
                rng,
            ))),
        ];
        Ok(Model {
            name: "cnn-s".into(),
            input_shape: input_shape.to_vec(),
            blocks,
        })
    }

    /// Builds a reference architecture by id.
    pub fn reference<R: Rng + ?Sized>(id: &str, input_shape: &[usize], classes: usize, rng: &mut R) -> Result<Self> {
        match id {
            "mlp-s" => Ok(Model::mlp_s(input_shape, classes, rng)),
            "cnn-s" => Model::cnn_s(input_shape, classes, rng),
            other => Err(Error::Parameter(format!("unknown model id `{other}`"))),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &ParamLayer> {
        self.blocks.iter().filter_map(|b| match b {
            Block::Layer(l) => Some(l),
            _ => None,
        })
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ParamLayer> {
        self.blocks.iter_mut().filter_map(|b| match b {
            Block::Layer(l) => Some(l),
            _ => None,
        })
    }

    pub fn svd_layers(&self) -> impl Iterator<Item = &SvdLayer> {
        self.layers().filter_map(ParamLayer::as_svd)
    }

    pub fn is_decomposed(&self) -> bool {
        self.layers().all(|l| matches!(l, ParamLayer::Svd(_)))
    }

    /// Full-rank SVD form of every dense layer. Fully connected layers use
    /// [`DecompositionScheme::FullyConnected`]; convolutions use `conv_scheme`.
    pub fn decompose(&self, conv_scheme: DecompositionScheme) -> Result<Model> {
        if conv_scheme == DecompositionScheme::FullyConnected {
            return Err(Error::Parameter("convolution scheme must be channel-wise or spatial-wise".into()));
        }
        let mut out = self.clone();
        for layer in out.layers_mut() {
            if let ParamLayer::Dense(d) = layer {
                let scheme = match d.geometry {
                    LayerGeometry::Linear { .. } => DecompositionScheme::FullyConnected,
                    LayerGeometry::Conv(_) => conv_scheme,
                };
                *layer = ParamLayer::Svd(SvdLayer::from_dense_layer(d, scheme)?);
            }
        }
        Ok(out)
    }

    /// Dense model with the composed weights of every SVD layer.
    pub fn to_dense(&self) -> Model {
        let mut out = self.clone();
        for layer in out.layers_mut() {
            if let ParamLayer::Svd(s) = layer {
                *layer = ParamLayer::Dense(s.to_dense());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(ParamLayer::param_count).sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers().flat_map(ParamLayer::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut().flat_map(ParamLayer::tensors_mut).collect()
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        self.layers().flat_map(ParamLayer::kinds).collect()
    }

    /// Registers every tensor on `tape`, as parameters or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let layers = self
            .layers()
            .map(|l| {
                l.tensors()
                    .into_iter()
                    .map(|t| {
                        if trainable {
                            tape.param(t.clone())
                        } else {
                            tape.constant(t.clone())
                        }
                    })
                    .collect()
            })
            .collect();
        ModelVars { layers }
    }

    /// `(u, s, v)` handles of every SVD layer.
    pub fn factor_vars(&self, vars: &ModelVars) -> Vec<FactorVars> {
        self.layers()
            .zip(&vars.layers)
            .filter(|(l, _)| matches!(l, ParamLayer::Svd(_)))
            .map(|(_, v)| FactorVars {
                u: v[0],
                s: v[1],
                v: v[2],
            })
            .collect()
    }

    /// Logits for a batch `N × input_shape`.
    pub fn forward(&self, tape: &mut Tape, vars: &ModelVars, input: Var) -> Result<Var> {
        let mut x = input;
        let mut layer_idx = 0;
        for block in &self.blocks {
            x = match block {
                Block::Layer(l) => {
                    let out = l.forward(tape, &vars.layers[layer_idx], x)?;
                    layer_idx += 1;
                    out
                }
                Block::Relu => tape.relu(x),
                Block::MaxPool(k) => tape.max_pool2d(x, *k)?,
                Block::Flatten => {
                    let shape = tape.shape(x);
                    let n = shape[0];
                    let d = shape[1..].iter().product::<usize>();
                    tape.reshape(x, &[n, d])?
                }
            };
        }
        Ok(x)
    }

    /// Per-sample input shape seen by each parameter layer.
    pub fn layer_input_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::new();
        for block in &self.blocks {
            match block {
                Block::Layer(l) => {
                    out.push(shape.clone());
                    shape = match (l.geometry(), shape.as_slice()) {
                        (LayerGeometry::Linear { out_features, in_features }, &[d]) if d == *in_features => {
                            vec![*out_features]
                        }
                        (LayerGeometry::Conv(g), &[c, h, w]) if c == g.c => {
                            let (oh, ow) = g.output_hw(h, w)?;
                            vec![g.n, oh, ow]
                        }
                        (geometry, s) => {
                            return Err(Error::Geometry(format!("layer {geometry:?} cannot take input {s:?}")))
                        }
                    };
                }
                Block::Relu => {}
                Block::MaxPool(k) => match shape.as_slice() {
                    &[c, h, w] => {
                        let oh = crate::conv::output_extent(h, *k, *k, 0)?;
                        let ow = crate::conv::output_extent(w, *k, *k, 0)?;
                        shape = vec![c, oh, ow];
                    }
                    s => return Err(Error::Geometry(format!("max-pool cannot take input {s:?}"))),
                },
                Block::Flatten => shape = vec![shape.iter().product()],
            }
        }
        Ok(out)
    }

    /// Logits for all samples, evaluated in chunks without recording gradients.
    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 256;
        let n = inputs.shape()[0];
        let sample: usize = inputs.shape()[1..].iter().product();
        let mut logits = Vec::new();
        let mut classes = 0;
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let mut shape = inputs.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, inputs.data()[start * sample..end * sample].to_vec())?;
            let mut tape = Tape::new();
            let vars = self.register(&mut tape, false);
            let x = tape.constant(chunk);
            let out = self.forward(&mut tape, &vars, x)?;
            classes = tape.shape(out)[1];
            logits.extend_from_slice(tape.value(out).data());
        }
        Tensor::new(vec![n, classes], logits)
    }

    /// Fraction of samples whose arg-max logit equals the label.
    pub fn accuracy(&self, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.predict(inputs)?;
        let k = logits.cols();
        let correct = logits
            .data()
            .chunks(k)
            .zip(labels)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
        Ok(correct as f64 / labels.len().max(1) as f64)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
