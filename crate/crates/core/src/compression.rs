//! Energy-threshold singular value pruning and FLOPs accounting.
//!
//! FLOPs are counted as multiply–accumulates throughout; biases, activations
//! and pooling are not counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{DecompositionScheme, LayerGeometry, SvdLayer};
use crate::model::{Model, ParamLayer};

#[derive(Clone, Debug, PartialEq)]
pub struct PruneDecision {
    /// Retained indices into `s`, ordered by descending `|s|`.
    pub keep_indices: Vec<usize>,
    pub pruned_energy_fraction: f64,
    pub rank_after: usize,
}

/// Chooses the largest set `K` with `Σ_{j∈K} s_j² ≤ e · Σ_i s_i²`.
///
/// Entries are taken smallest-energy first (lower index first on ties), which
/// is optimal for a cardinality objective under a sum budget. At least one
/// entry, the largest, is always kept.
pub fn select_prune_set(s: &[f64], e: f64) -> PruneDecision {
    assert!(!s.is_empty(), "cannot prune an empty spectrum");
    assert!((0.0..=1.0).contains(&e), "energy threshold must lie in [0, 1]");
    let energy: Vec<f64> = s.iter().map(|x| x * x).collect();
    let total: f64 = energy.iter().sum();
    let budget = e * total;

    let mut ascending: Vec<usize> = (0..s.len()).collect();
    ascending.sort_by(|&a, &b| energy[a].total_cmp(&energy[b]).then(a.cmp(&b)));

    let mut pruned = 0;
    let mut acc = 0.0;
    for &i in &ascending {
        if acc + energy[i] > budget {
            break;
        }
        acc += energy[i];
        pruned += 1;
    }

    let mut keep: Vec<usize> = ascending[pruned..].to_vec();
    if keep.is_empty() {
        // Rank floor: keep the largest entry (lowest index among equals).
        let top = (0..s.len())
            .max_by(|&a, &b| energy[a].total_cmp(&energy[b]).then(b.cmp(&a)))
            .expect("non-empty");
        acc -= energy[top];
        keep.push(top);
    }
    keep.sort_by(|&a, &b| s[b].abs().total_cmp(&s[a].abs()).then(a.cmp(&b)));

    PruneDecision {
        rank_after: keep.len(),
        keep_indices: keep,
        pruned_energy_fraction: if total > 0.0 { (acc / total).clamp(0.0, 1.0) } else { 0.0 },
    }
}

/// New layer with only the kept singular triplets, in decision order.
pub fn prune_layer(layer: &SvdLayer, decision: &PruneDecision) -> Result<SvdLayer> {
    let keep = &decision.keep_indices;
    if keep.is_empty() {
        return Err(Error::Invariant("prune decision keeps no singular values".into()));
    }
    let r = layer.rank();
    let mut seen = vec![false; r];
    for &i in keep {
        if i >= r || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invariant(format!("invalid keep index {i} for rank {r}")));
        }
    }
    SvdLayer::new(
        layer.scheme,
        layer.geometry,
        layer.u.select_columns(keep),
        layer.s.select(keep),
        layer.v.select_columns(keep),
        layer.bias.clone(),
    )
}

/// Multiply–accumulate count of the dense layer with this geometry.
pub fn dense_flops(geometry: &LayerGeometry, input_hw: (usize, usize)) -> Result<u64> {
    match geometry {
        LayerGeometry::Linear {
            out_features,
            in_features,
        } => Ok((out_features * in_features) as u64),
        LayerGeometry::Conv(g) => {
            let (oh, ow) = g.output_hw(input_hw.0, input_hw.1)?;
            Ok((g.n * g.c * g.w * g.h * oh * ow) as u64)
        }
    }
}

/// Multiply–accumulate count of the two sub-layers of an SVD layer at its
/// current rank.
pub fn svd_flops(layer: &SvdLayer, input_hw: (usize, usize)) -> Result<u64> {
    let r = layer.rank();
    let count = match (&layer.geometry, layer.scheme) {
        (LayerGeometry::Linear { out_features, in_features }, _) => r * in_features + out_features * r,
        (LayerGeometry::Conv(g), DecompositionScheme::ChannelWise) => {
            let (oh, ow) = g.output_hw(input_hw.0, input_hw.1)?;
            r * g.c * g.w * g.h * oh * ow + g.n * r * oh * ow
        }
        (LayerGeometry::Conv(g), DecompositionScheme::SpatialWise) => {
            let (oh, ow) = g.output_hw(input_hw.0, input_hw.1)?;
            // First sub-layer: 1×h kernel, vertical stride 1 and no vertical padding.
            let mid_h = input_hw.0;
            r * g.c * g.h * mid_h * ow + g.n * r * g.w * oh * ow
        }
        (LayerGeometry::Conv(_), DecompositionScheme::FullyConnected) => {
            return Err(Error::Geometry("fully connected scheme on a convolution".into()))
        }
    };
    Ok(count as u64)
}

pub fn flops_count(layer: &ParamLayer, input_hw: (usize, usize)) -> Result<u64> {
    match layer {
        ParamLayer::Dense(d) => dense_flops(&d.geometry, input_hw),
        ParamLayer::Svd(s) => svd_flops(s, input_hw),
    }
}

fn spatial(shape: &[usize]) -> (usize, usize) {
    match shape {
        &[_, h, w] => (h, w),
        _ => (1, 1),
    }
}

/// Per-layer FLOPs of a model together with its dense-equivalent cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub index: usize,
    pub kind: String,
    pub rank: Option<usize>,
    pub flops: u64,
    pub flops_dense: u64,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub total_flops: u64,
    pub total_flops_dense: u64,
    /// Dense FLOPs over actual FLOPs.
    pub speedup_vs_dense: f64,
}

pub fn scheme_label(layer: &ParamLayer) -> &'static str {
    match layer {
        ParamLayer::Dense(d) => match d.geometry {
            LayerGeometry::Linear { .. } => "dense-fc",
            LayerGeometry::Conv(_) => "dense-conv",
        },
        ParamLayer::Svd(s) => match s.scheme {
            DecompositionScheme::FullyConnected => "svd-fc",
            DecompositionScheme::ChannelWise => "svd-channel",
            DecompositionScheme::SpatialWise => "svd-spatial",
        },
    }
}

pub fn flops_report(model: &Model) -> Result<FlopsReport> {
    let shapes = model.layer_input_shapes()?;
    let mut layers = Vec::new();
    for (index, (layer, shape)) in model.layers().zip(&shapes).enumerate() {
        let hw = spatial(shape);
        layers.push(LayerFlops {
            index,
            kind: scheme_label(layer).to_string(),
            rank: layer.as_svd().map(SvdLayer::rank),
            flops: flops_count(layer, hw)?,
            flops_dense: dense_flops(layer.geometry(), hw)?,
            params: layer.param_count(),
        });
    }
    let total_flops = layers.iter().map(|l| l.flops).sum();
    let total_flops_dense = layers.iter().map(|l| l.flops_dense).sum();
    Ok(FlopsReport {
        layers,
        total_flops,
        total_flops_dense,
        speedup_vs_dense: ratio(total_flops_dense, total_flops),
    })
}

impl FlopsReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            let rank = l.rank.map_or("-".to_string(), |r| r.to_string());
            writeln!(
                out,
                "layer={} kind={} rank={} flops={} flops_dense={} params={}",
                l.index, l.kind, rank, l.flops, l.flops_dense, l.params
            )
            .unwrap();
        }
        writeln!(
            out,
            "total flops={} flops_dense={} speedup_vs_dense={}",
            self.total_flops, self.total_flops_dense, self.speedup_vs_dense
        )
        .unwrap();
        out
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::INFINITY
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPruneRecord {
    pub index: usize,
    pub kind: String,
    pub rank_before: usize,
    pub rank_after: usize,
    pub pruned_energy_fraction: f64,
    pub flops_dense: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub params_before: usize,
    pub params_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub energy_threshold: f64,
    pub layers: Vec<LayerPruneRecord>,
    pub total_flops_dense: u64,
    pub total_flops_before: u64,
    pub total_flops_after: u64,
    pub total_params_before: usize,
    pub total_params_after: usize,
    /// FLOPs before pruning over FLOPs after.
    pub speedup: f64,
    /// Dense-model FLOPs over FLOPs after pruning.
    pub speedup_vs_dense: f64,
}

impl PruneReport {
    /// Line-oriented `key=value` block: one `layer` line per layer, then a
    /// `total` line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            writeln!(
                out,
                "layer={} kind={} rank_before={} rank_after={} pruned_energy_fraction={} flops_dense={} flops_before={} flops_after={} params_before={} params_after={}",
                l.index,
                l.kind,
                l.rank_before,
                l.rank_after,
                l.pruned_energy_fraction,
                l.flops_dense,
                l.flops_before,
                l.flops_after,
                l.params_before,
                l.params_after
            )
            .unwrap();
        }
        writeln!(
            out,
            "total energy_threshold={} flops_dense={} flops_before={} flops_after={} params_before={} params_after={} speedup={} speedup_vs_dense={}",
            self.energy_threshold,
            self.total_flops_dense,
            self.total_flops_before,
            self.total_flops_after,
            self.total_params_before,
            self.total_params_after,
            self.speedup,
            self.speedup_vs_dense
        )
        .unwrap();
        out
    }
}

/// Prunes every SVD layer with the same threshold `e`; dense layers pass
/// through unchanged.
pub fn prune_model(model: &Model, e: f64) -> Result<(Model, PruneReport)> {
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::Parameter(format!("energy threshold {e} outside [0, 1]")));
    }
    let shapes = model.layer_input_shapes()?;
    let mut pruned = model.clone();
    let mut records = Vec::new();
    for (index, (layer, shape)) in pruned.layers_mut().zip(&shapes).enumerate() {
        let hw = spatial(shape);
        let flops_before = flops_count(layer, hw)?;
        let params_before = layer.param_count();
        let (rank_before, rank_after, fraction) = match layer {
            ParamLayer::Svd(svd) => {
                let decision = select_prune_set(svd.s.data(), e);
                let before = svd.rank();
                *svd = prune_layer(svd, &decision)?;
                (before, decision.rank_after, decision.pruned_energy_fraction)
            }
            ParamLayer::Dense(d) => {
                let r = d.geometry.matrix_shape(default_scheme(&d.geometry)).map(|(a, b)| a.min(b))?;
                (r, r, 0.0)
            }
        };
        records.push(LayerPruneRecord {
            index,
            kind: scheme_label(layer).to_string(),
            rank_before,
            rank_after,
            pruned_energy_fraction: fraction,
            flops_dense: dense_flops(layer.geometry(), hw)?,
            flops_before,
            flops_after: flops_count(layer, hw)?,
            params_before,
            params_after: layer.param_count(),
        });
    }
    let sum = |f: fn(&LayerPruneRecord) -> u64| records.iter().map(f).sum::<u64>();
    let total_flops_dense = sum(|r| r.flops_dense);
    let total_flops_before = sum(|r| r.flops_before);
    let total_flops_after = sum(|r| r.flops_after);
    let report = PruneReport {
        energy_threshold: e,
        total_params_before: records.iter().map(|r| r.params_before).sum(),
        total_params_after: records.iter().map(|r| r.params_after).sum(),
        speedup: ratio(total_flops_before, total_flops_after),
        speedup_vs_dense: ratio(total_flops_dense, total_flops_after),
        total_flops_dense,
        total_flops_before,
        total_flops_after,
        layers: records,
    };
    Ok((pruned, report))
}

fn default_scheme(g: &LayerGeometry) -> DecompositionScheme {
    match g {
        LayerGeometry::Linear { .. } => DecompositionScheme::FullyConnected,
        LayerGeometry::Conv(_) => DecompositionScheme::ChannelWise,
    }
}
