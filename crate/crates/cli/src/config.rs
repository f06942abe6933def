//! Run configuration file (TOML).

use std::path::Path;

use serde::Deserialize;

use nandspin::{ArchConfig, CostParams, SubarrayGeometry};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub group_size: usize,
    pub columns: usize,
    pub bit_rows: usize,
    pub buffer_rows: usize,
    pub counter_width: u32,
    pub subarrays_per_mat: usize,
    pub mats: usize,
    pub bus_width: usize,
    pub strict: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        let s = arch.subarray;
        Self {
            group_size: s.group_size,
            columns: s.columns,
            bit_rows: s.bit_rows(),
            buffer_rows: s.buffer_rows,
            counter_width: s.counter_width,
            subarrays_per_mat: arch.subarrays_per_mat,
            mats: arch.mats,
            bus_width: arch.bus_width,
            strict: arch.strict,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub costs: CostParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
        cfg.arch()?;
        cfg.costs.validate().map_err(Failure::from)?;
        Ok(cfg)
    }

    pub fn arch(&self) -> Result<ArchConfig, Failure> {
        let g = &self.geometry;
        let positive = [
            g.group_size,
            g.columns,
            g.bit_rows,
            g.buffer_rows,
            g.subarrays_per_mat,
            g.mats,
            g.bus_width,
        ];
        if positive.contains(&0) || g.counter_width == 0 {
            return Err(Failure::parse("config: geometry values must be positive"));
        }
        if g.bit_rows % g.group_size != 0 {
            return Err(Failure::parse(format!(
                "config: bit_rows {} is not a multiple of group_size {}",
                g.bit_rows, g.group_size
            )));
        }
        let arch = ArchConfig {
            subarray: SubarrayGeometry {
                device_rows: g.bit_rows / g.group_size,
                columns: g.columns,
                group_size: g.group_size,
                buffer_rows: g.buffer_rows,
                counter_width: g.counter_width,
            },
            subarrays_per_mat: g.subarrays_per_mat,
            mats: g.mats,
            bus_width: g.bus_width,
            strict: g.strict,
        };
        arch.validate().map_err(|e| Failure::parse(format!("config: {e}")))?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_library() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.arch().unwrap(), ArchConfig::default());
        assert_eq!(cfg.costs, CostParams::default());
    }

    #[test]
    fn overrides_and_validation() {
        let cfg: RunConfig = toml::from_str("[geometry]\ncolumns = 16\nbit_rows = 64\n[costs]\nbus_beat_energy_fj = 2.5\n").unwrap();
        let arch = cfg.arch().unwrap();
        assert_eq!((arch.subarray.columns, arch.subarray.device_rows), (16, 8));
        assert_eq!(cfg.costs.bus_beat_energy_fj, 2.5);
        let bad: RunConfig = toml::from_str("[geometry]\nbit_rows = 60\n").unwrap();
        assert_eq!(bad.arch().unwrap_err().code, 2);
        assert!(toml::from_str::<RunConfig>("[geometry]\nrows = 1\n").is_err());
    }
}
