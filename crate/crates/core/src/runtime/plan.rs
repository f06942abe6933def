//! Static assignment of layers to mats and subarrays.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::model::{Layer, Network};
use crate::error::{Error, Result};
use crate::primitives::{bit_length, ConvPlan};
use crate::subarray::SubarrayGeometry;

/// Machine geometry: identical mats of identical subarrays on a shared bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub subarray: SubarrayGeometry,
    pub subarrays_per_mat: usize,
    pub mats: usize,
    pub bus_width: usize,
    /// Reject program pulses aimed at MTJs that are already in P.
    pub strict: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            subarray: SubarrayGeometry::default(),
            subarrays_per_mat: 16,
            mats: 16,
            bus_width: 128,
            strict: true,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        self.subarray.validate()?;
        if self.subarrays_per_mat == 0 || self.mats == 0 || self.bus_width == 0 {
            return Err(Error::GeometryMismatch(format!(
                "subarrays per mat, mats and bus width must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn beats_per_row(&self) -> u64 {
        self.subarray.columns.div_ceil(self.bus_width) as u64
    }
}

/// Output channels handled together in one round; `kernels` run on `mat`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KernelGroup {
    pub mat: usize,
    pub kernels: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvMapping {
    pub layer: usize,
    pub plan: ConvPlan,
    /// Subarrays `0..sources` of every mat used hold input plane `n`.
    pub sources: usize,
    /// Subarrays after the sources, kernel-major and position tile minor.
    pub kernels_per_mat: usize,
    /// Rounds run one after the other; groups in a round run concurrently.
    pub rounds: Vec<Vec<KernelGroup>>,
}

/// One pooling tile: output positions `tile * columns ..` on `(mat, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PoolSlot {
    pub mat: usize,
    pub index: usize,
    pub tile: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoolMapping {
    pub layer: usize,
    pub tiles: usize,
    pub rounds: Vec<Vec<PoolSlot>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerMapping {
    Conv(ConvMapping),
    Pool(PoolMapping),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MappingPlan {
    pub layers: Vec<LayerMapping>,
}

fn map_conv(layer: &super::model::ConvLayer, arch: &ArchConfig) -> Result<ConvMapping> {
    let kind = layer.kind.name();
    let plan = ConvPlan::new(layer.geometry, &arch.subarray, layer.index, kind)?;
    plan.verify()?;
    let n = plan.sources();
    let pt = plan.position_tiles;
    let s = arch.subarrays_per_mat;
    if n + pt > s {
        return Err(Error::capacity(
            layer.index,
            kind,
            format!("needs {n} input subarrays and {pt} accumulation subarrays per kernel, a mat has {s}"),
        ));
    }
    let kpm = (s - n) / pt;
    let k = layer.geometry.kernels;
    let groups: Vec<KernelGroup> = (0..k.div_ceil(kpm))
        .map(|i| KernelGroup {
            mat: i % arch.mats,
            kernels: i * kpm..((i + 1) * kpm).min(k),
        })
        .collect();
    let rounds = groups.chunks(arch.mats).map(<[_]>::to_vec).collect();
    Ok(ConvMapping {
        layer: layer.index,
        plan,
        sources: n,
        kernels_per_mat: kpm,
        rounds,
    })
}

fn map_pool(layer: &super::model::PoolLayer, arch: &ArchConfig) -> Result<PoolMapping> {
    let g = &arch.subarray;
    let d = layer.window();
    let k = layer.bits as usize;
    let groups = |rows: usize| rows.div_ceil(g.group_size);
    let sum_rows = k + bit_length(d as u128 - 1) as usize;
    let need = d * groups(k) + groups(sum_rows).max(groups(k)) + groups(2) + 2 * groups(k);
    if need > g.device_rows {
        return Err(Error::capacity(
            layer.index,
            layer.kind.name(),
            format!("a {d}-element window of {k}-bit values needs {need} row groups, a subarray has {}", g.device_rows),
        ));
    }
    let tiles = layer.output.len().div_ceil(g.columns);
    let per_round = arch.mats * arch.subarrays_per_mat;
    let slots: Vec<PoolSlot> = (0..tiles)
        .map(|t| {
            let u = t % per_round;
            PoolSlot {
                mat: u / arch.subarrays_per_mat,
                index: u % arch.subarrays_per_mat,
                tile: t,
            }
        })
        .collect();
    Ok(PoolMapping {
        layer: layer.index,
        tiles,
        rounds: slots.chunks(per_round).map(<[_]>::to_vec).collect(),
    })
}

/// Deterministic placement of every layer; fails with `CapacityExceeded`
/// naming the first layer that does not fit.
pub fn plan_mapping(net: &Network, arch: &ArchConfig) -> Result<MappingPlan> {
    arch.validate()?;
    let layers = net
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => map_conv(c, arch).map(LayerMapping::Conv),
            Layer::Pool(p) => map_pool(p, arch).map(LayerMapping::Pool),
        })
        .collect::<Result<_>>()?;
    Ok(MappingPlan { layers })
}
