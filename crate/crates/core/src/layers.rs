//! Fully connected and convolution layers, dense and in SVD form.
//!
//! An [`SvdLayer`] stores a weight as trainable factors `(u, s, v)` of the
//! reshaped weight matrix `Ŵ ≈ u · diag(|s|) · vᵀ` and runs its forward pass as
//! two consecutive sub-layers built from `diag(√|s|)·vᵀ` and `u·diag(√|s|)`.
//!
//! Convolution kernels are `n×c×w×h`, where `w` spans input axis 2 (rows,
//! vertical) and `h` spans input axis 3 (columns, horizontal). Two reshapes of
//! a kernel to a matrix are supported:
//!
//! * channel-wise: `n × (c·w·h)`, giving a `w×h` conv to `r` channels followed
//!   by a `1×1` conv;
//! * spatial-wise: `(n·w) × (c·h)`, giving a `1×h` conv followed by a `w×1`
//!   conv.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{output_extent, Conv2dParams};
use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompositionScheme {
    FullyConnected,
    ChannelWise,
    SpatialWise,
}

/// Kernel geometry `n×c×w×h` plus the (square) stride and zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub w: usize,
    pub h: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(n: usize, c: usize, w: usize, h: usize, stride: usize, padding: usize) -> Result<Self> {
        if n == 0 || c == 0 || w == 0 || h == 0 || stride == 0 {
            return Err(Error::Geometry(format!(
                "conv geometry needs positive extents and stride, got n={n} c={c} w={w} h={h} stride={stride}"
            )));
        }
        Ok(ConvGeometry { n, c, w, h, stride, padding })
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.n, self.c, self.w, self.h]
    }

    pub fn params(&self) -> Conv2dParams {
        Conv2dParams::square(self.stride, self.padding)
    }

    /// Output spatial extent for an `in_h × in_w` input.
    pub fn output_hw(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        Ok((
            output_extent(in_h, self.w, self.stride, self.padding)?,
            output_extent(in_w, self.h, self.stride, self.padding)?,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerGeometry {
    Linear { out_features: usize, in_features: usize },
    Conv(ConvGeometry),
}

impl LayerGeometry {
    pub fn linear(out_features: usize, in_features: usize) -> Self {
        LayerGeometry::Linear {
            out_features,
            in_features,
        }
    }

    /// Shape of the dense weight tensor.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerGeometry::Linear {
                out_features,
                in_features,
            } => vec![*out_features, *in_features],
            LayerGeometry::Conv(g) => g.kernel_shape().to_vec(),
        }
    }

    /// Number of output features / channels.
    pub fn out_channels(&self) -> usize {
        match self {
            LayerGeometry::Linear { out_features, .. } => *out_features,
            LayerGeometry::Conv(g) => g.n,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            LayerGeometry::Linear { in_features, .. } => *in_features,
            LayerGeometry::Conv(g) => g.c * g.w * g.h,
        }
    }

    /// `(rows, cols)` of the reshaped weight matrix under `scheme`.
    pub fn matrix_shape(&self, scheme: DecompositionScheme) -> Result<(usize, usize)> {
        match (self, scheme) {
            (
                LayerGeometry::Linear {
                    out_features,
                    in_features,
                },
                DecompositionScheme::FullyConnected,
            ) => Ok((*out_features, *in_features)),
            (LayerGeometry::Conv(g), DecompositionScheme::ChannelWise) => Ok((g.n, g.c * g.w * g.h)),
            (LayerGeometry::Conv(g), DecompositionScheme::SpatialWise) => Ok((g.n * g.w, g.c * g.h)),
            (geometry, scheme) => Err(Error::Geometry(format!(
                "scheme {scheme:?} does not apply to {geometry:?}"
            ))),
        }
    }

    /// Reshapes a dense weight to its matrix form under `scheme`.
    pub fn to_matrix(&self, weight: &Tensor, scheme: DecompositionScheme) -> Result<Tensor> {
        self.check_weight(weight)?;
        match scheme {
            DecompositionScheme::FullyConnected => {
                self.matrix_shape(scheme)?;
                Ok(weight.clone())
            }
            DecompositionScheme::ChannelWise => reshape_channelwise(weight),
            DecompositionScheme::SpatialWise => reshape_spatialwise(weight),
        }
    }

    /// Inverse of [`LayerGeometry::to_matrix`].
    pub fn from_matrix(&self, matrix: &Tensor, scheme: DecompositionScheme) -> Result<Tensor> {
        let (rows, cols) = self.matrix_shape(scheme)?;
        if matrix.shape() != [rows, cols] {
            return Err(Error::dim("from_matrix", matrix.shape(), &[rows, cols]));
        }
        match (self, scheme) {
            (LayerGeometry::Conv(g), DecompositionScheme::ChannelWise) => unreshape_channelwise(matrix, g),
            (LayerGeometry::Conv(g), DecompositionScheme::SpatialWise) => unreshape_spatialwise(matrix, g),
            _ => Ok(matrix.clone()),
        }
    }

    fn check_weight(&self, weight: &Tensor) -> Result<()> {
        let expect = self.weight_shape();
        if weight.shape() != expect.as_slice() {
            return Err(Error::dim("layer weight", weight.shape(), &expect));
        }
        Ok(())
    }
}

fn kernel_dims(kernel: &Tensor) -> Result<[usize; 4]> {
    match kernel.shape() {
        &[n, c, w, h] => Ok([n, c, w, h]),
        other => Err(Error::dim("kernel reshape", other, &[4])),
    }
}

/// `n×c×w×h` → `n × (c·w·h)`; column `c_i·(w·h) + w_i·h + h_i`.
pub fn reshape_channelwise(kernel: &Tensor) -> Result<Tensor> {
    let [n, c, w, h] = kernel_dims(kernel)?;
    kernel.reshape(&[n, c * w * h])
}

pub fn unreshape_channelwise(matrix: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    matrix.reshape(&g.kernel_shape())
}

/// `n×c×w×h` → `(n·w) × (c·h)`; row `n_i·w + w_i`, column `c_i·h + h_i`.
pub fn reshape_spatialwise(kernel: &Tensor) -> Result<Tensor> {
    let [n, c, w, h] = kernel_dims(kernel)?;
    kernel.permute(&[0, 2, 1, 3])?.reshape(&[n * w, c * h])
}

pub fn unreshape_spatialwise(matrix: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    matrix
        .reshape(&[g.n, g.w, g.c, g.h])?
        .permute(&[0, 2, 1, 3])
}

/// A layer with an ordinary dense weight.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub geometry: LayerGeometry,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl DenseLayer {
    pub fn new(geometry: LayerGeometry, weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        geometry.check_weight(&weight)?;
        check_bias(&geometry, bias.as_ref())?;
        Ok(DenseLayer { geometry, weight, bias })
    }

    /// Fan-in scaled normal initialization (`std = √(2/fan_in)`), zero bias.
    pub fn init<R: Rng + ?Sized>(geometry: LayerGeometry, rng: &mut R) -> Self {
        let std = (2.0 / geometry.fan_in() as f64).sqrt();
        let weight = Tensor::randn(&geometry.weight_shape(), std, rng);
        let bias = Some(Tensor::zeros(&[geometry.out_channels()]));
        DenseLayer { geometry, weight, bias }
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        let weight = vars[0];
        let out = match &self.geometry {
            LayerGeometry::Linear { .. } => {
                let wt = tape.transpose(weight)?;
                tape.matmul(input, wt)?
            }
            LayerGeometry::Conv(g) => tape.conv2d(input, weight, g.params())?,
        };
        match vars.get(1) {
            Some(&b) => tape.add_bias(out, b),
            None => Ok(out),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

fn check_bias(geometry: &LayerGeometry, bias: Option<&Tensor>) -> Result<()> {
    if let Some(b) = bias {
        let expect = [geometry.out_channels()];
        if b.shape() != expect {
            return Err(Error::dim("bias", b.shape(), &expect));
        }
    }
    Ok(())
}

/// A layer trained in SVD form. `s` is unconstrained in sign; the effective
/// singular values are `|s|`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdLayer {
    pub scheme: DecompositionScheme,
    pub geometry: LayerGeometry,
    pub u: Tensor,
    pub s: Tensor,
    pub v: Tensor,
    pub bias: Option<Tensor>,
}

impl SvdLayer {
    pub fn new(
        scheme: DecompositionScheme,
        geometry: LayerGeometry,
        u: Tensor,
        s: Tensor,
        v: Tensor,
        bias: Option<Tensor>,
    ) -> Result<Self> {
        let (rows, cols) = geometry.matrix_shape(scheme)?;
        let r = s.numel();
        if s.ndim() != 1 || r == 0 || r > rows.min(cols) {
            return Err(Error::Geometry(format!(
                "rank {r} invalid for a {rows}x{cols} matrix"
            )));
        }
        if u.shape() != [rows, r] {
            return Err(Error::dim("svd layer u", u.shape(), &[rows, r]));
        }
        if v.shape() != [cols, r] {
            return Err(Error::dim("svd layer v", v.shape(), &[cols, r]));
        }
        check_bias(&geometry, bias.as_ref())?;
        Ok(SvdLayer {
            scheme,
            geometry,
            u,
            s,
            v,
            bias,
        })
    }

    /// Full-rank decomposition of a dense weight.
    pub fn from_dense(
        weight: &Tensor,
        bias: Option<Tensor>,
        scheme: DecompositionScheme,
        geometry: LayerGeometry,
    ) -> Result<Self> {
        let matrix = geometry.to_matrix(weight, scheme)?;
        let f = svd(&matrix)?;
        SvdLayer::new(scheme, geometry, f.u, f.s, f.v, bias)
    }

    pub fn from_dense_layer(layer: &DenseLayer, scheme: DecompositionScheme) -> Result<Self> {
        SvdLayer::from_dense(&layer.weight, layer.bias.clone(), scheme, layer.geometry)
    }

    pub fn rank(&self) -> usize {
        self.s.numel()
    }

    pub fn matrix_shape(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }

    pub fn param_count(&self) -> usize {
        self.u.numel() + self.s.numel() + self.v.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }

    /// `u · diag(|s|) · vᵀ`, reshaped back to the dense weight layout.
    pub fn compose_effective_weight(&self) -> Tensor {
        let r = self.rank();
        let abs_s: Vec<f64> = self.s.data().iter().map(|x| x.abs()).collect();
        let c = r;
        let us_data = self
            .u
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * abs_s[i % c])
            .collect();
        let us = Tensor::from_parts(self.u.shape().to_vec(), us_data);
        let matrix = us
            .matmul(&self.v.transpose().expect("v is a matrix"))
            .expect("factor shapes validated at construction");
        self.geometry
            .from_matrix(&matrix, self.scheme)
            .expect("matrix shape follows geometry")
    }

    pub fn to_dense(&self) -> DenseLayer {
        DenseLayer {
            geometry: self.geometry,
            weight: self.compose_effective_weight(),
            bias: self.bias.clone(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        [&self.u, &self.s, &self.v]
            .into_iter()
            .chain(self.bias.as_ref())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.u, &mut self.s, &mut self.v]
            .into_iter()
            .chain(self.bias.as_mut())
            .collect()
    }

    /// Two-sub-layer forward pass. `vars` are the layer's tensors registered
    /// on `tape` in [`SvdLayer::tensors`] order.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        let (u, s, v) = (vars[0], vars[1], vars[2]);
        let r = self.rank();
        let root = tape.sqrt_abs(s);
        // diag(√|s|)·vᵀ is materialized as its transpose v·diag(√|s|).
        let vs = tape.scale_columns(v, root)?;
        let us = tape.scale_columns(u, root)?;
        let out = match (&self.geometry, self.scheme) {
            (LayerGeometry::Linear { .. }, _) => {
                let hidden = tape.matmul(input, vs)?;
                let ust = tape.transpose(us)?;
                tape.matmul(hidden, ust)?
            }
            (LayerGeometry::Conv(g), DecompositionScheme::ChannelWise) => {
                let first = tape.transpose(vs)?;
                let k1 = tape.reshape(first, &[r, g.c, g.w, g.h])?;
                let mid = tape.conv2d(input, k1, g.params())?;
                let k2 = tape.reshape(us, &[g.n, r, 1, 1])?;
                tape.conv2d(mid, k2, Conv2dParams::square(1, 0))?
            }
            (LayerGeometry::Conv(g), DecompositionScheme::SpatialWise) => {
                let first = tape.transpose(vs)?;
                let k1 = tape.reshape(first, &[r, g.c, 1, g.h])?;
                let mid = tape.conv2d(
                    input,
                    k1,
                    Conv2dParams {
                        stride: (1, g.stride),
                        padding: (0, g.padding),
                    },
                )?;
                let second = tape.reshape(us, &[g.n, g.w, r])?;
                let second = tape.permute(second, &[0, 2, 1])?;
                let k2 = tape.reshape(second, &[g.n, r, g.w, 1])?;
                tape.conv2d(
                    mid,
                    k2,
                    Conv2dParams {
                        stride: (g.stride, 1),
                        padding: (g.padding, 0),
                    },
                )?
            }
            (LayerGeometry::Conv(_), DecompositionScheme::FullyConnected) => {
                unreachable!("scheme validated at construction")
            }
        };
        match vars.get(3) {
            Some(&b) => tape.add_bias(out, b),
            None => Ok(out),
        }
    }

    /// Forward with all tensors registered as constants.
    pub fn forward_const(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.constant(t.clone())).collect();
        self.forward(tape, &vars, input)
    }
}

impl DenseLayer {
    pub fn forward_const(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| tape.constant(t.clone())).collect();
        self.forward(tape, &vars, input)
    }
}
