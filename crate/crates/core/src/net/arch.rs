//! Architecture descriptor. Parameter shapes are derived from it alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../../assets/fovnet_arch.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputArch {
    pub blocks: usize,
    pub bands: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialArch {
    pub channels: Vec<usize>,
    pub kernel_time: usize,
    pub kernel_space: usize,
    pub stride_space: usize,
    pub space_padding: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceArch {
    pub channels: Vec<usize>,
    pub kernel_time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruArch {
    pub layers: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadArch {
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormArch {
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input: InputArch,
    pub spatial: SpatialArch,
    pub reference: ReferenceArch,
    pub gru: GruArch,
    pub head: HeadArch,
    pub norm: NormArch,
}

/// Geometry of one depthwise-separable spatial layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialLayerShape {
    pub c_in: usize,
    pub c_out: usize,
    pub w_in: usize,
    pub w_out: usize,
    pub kernel_time: usize,
    pub kernel_space: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ArchConfig {
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED).expect("bundled architecture is valid")
    }

    pub fn shipped_toml() -> &'static str {
        SHIPPED
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let arch: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("architecture serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spatial;
        if s.channels.is_empty() || s.channels.len() != s.space_padding.len() {
            return Err(Error::InvalidConfig(
                "spatial channel plan and padding schedule must have equal, nonzero length".into(),
            ));
        }
        if s.kernel_time == 0 || s.kernel_space == 0 || s.stride_space == 0 {
            return Err(Error::InvalidConfig("spatial kernel and stride must be positive".into()));
        }
        if self.reference.channels.is_empty() || self.reference.kernel_time == 0 {
            return Err(Error::InvalidConfig("reference branch needs at least one layer".into()));
        }
        if self.gru.layers == 0 || self.gru.hidden == 0 || self.head.outputs == 0 {
            return Err(Error::InvalidConfig("recurrent and head sizes must be positive".into()));
        }
        let mut w = self.input.blocks;
        for (l, &pad) in s.space_padding.iter().enumerate() {
            let padded = w + 2 * pad;
            if padded < s.kernel_space {
                return Err(Error::InvalidConfig(format!(
                    "spatial layer {l}: width {w} with padding {pad} is narrower than the kernel; \
                     regenerate the padding schedule for {} blocks",
                    self.input.blocks
                )));
            }
            w = (padded - s.kernel_space) / s.stride_space + 1;
        }
        if w != 1 {
            return Err(Error::InvalidConfig(format!(
                "padding schedule {:?} leaves spatial width {w} for {} blocks (must collapse to 1); \
                 regenerate the schedule",
                s.space_padding, self.input.blocks
            )));
        }
        Ok(())
    }

    pub fn spatial_layers(&self) -> Vec<SpatialLayerShape> {
        let s = &self.spatial;
        let mut out = Vec::with_capacity(s.channels.len());
        let (mut c, mut w) = (self.input.bands, self.input.blocks);
        for (&c_out, &pad) in s.channels.iter().zip(&s.space_padding) {
            let w_out = (w + 2 * pad - s.kernel_space) / s.stride_space + 1;
            out.push(SpatialLayerShape {
                c_in: c,
                c_out,
                w_in: w,
                w_out,
                kernel_time: s.kernel_time,
                kernel_space: s.kernel_space,
                stride: s.stride_space,
                pad,
            });
            c = c_out;
            w = w_out;
        }
        out
    }

    pub fn reference_layers(&self) -> Vec<ConvLayerShape> {
        let mut c = self.input.bands;
        self.reference
            .channels
            .iter()
            .map(|&c_out| {
                let l = ConvLayerShape {
                    c_in: c,
                    c_out,
                    kernel: self.reference.kernel_time,
                };
                c = c_out;
                l
            })
            .collect()
    }

    pub fn spatial_out(&self) -> usize {
        *self.spatial.channels.last().unwrap()
    }

    pub fn reference_out(&self) -> usize {
        *self.reference.channels.last().unwrap()
    }

    /// Input width of GRU layer `l`.
    pub fn gru_input(&self, l: usize) -> usize {
        if l == 0 {
            self.spatial_out() + self.reference_out()
        } else {
            self.gru.hidden
        }
    }

    /// Every parameter tensor as `(name, shape, trainable)`, in container order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, bool)> {
        let b = self.input.bands;
        let mut out = Vec::new();
        for name in ["emb.in_mu", "emb.in_sigma", "emb.out_mu", "emb.out_sigma"] {
            out.push((name.to_string(), vec![b], true));
        }
        for (l, s) in self.spatial_layers().iter().enumerate() {
            out.push((format!("spatial.{l}.depthwise"), vec![s.c_in, s.kernel_time, s.kernel_space], true));
            out.push((format!("spatial.{l}.pointwise"), vec![s.c_in, s.c_out], true));
            push_bn(&mut out, &format!("spatial.{l}.bn"), s.c_out);
        }
        for (l, r) in self.reference_layers().iter().enumerate() {
            out.push((format!("ref.{l}.kernel"), vec![r.c_in, r.kernel, r.c_out], true));
            push_bn(&mut out, &format!("ref.{l}.bn"), r.c_out);
        }
        let h = self.gru.hidden;
        for l in 0..self.gru.layers {
            let i = self.gru_input(l);
            for g in ["w_r", "w_z", "w_h"] {
                out.push((format!("gru.{l}.{g}"), vec![i, h], true));
            }
            for g in ["u_r", "u_z", "u_h"] {
                out.push((format!("gru.{l}.{g}"), vec![h, h], true));
            }
            for g in ["b_ir", "b_iz", "b_ih", "b_hr", "b_hz", "b_hh"] {
                out.push((format!("gru.{l}.{g}"), vec![h], true));
            }
        }
        out.push(("head.weight".into(), vec![h, self.head.outputs], true));
        out.push(("head.bias".into(), vec![self.head.outputs], true));
        out
    }
}

fn push_bn(out: &mut Vec<(String, Vec<usize>, bool)>, prefix: &str, c: usize) {
    out.push((format!("{prefix}.gamma"), vec![c], true));
    out.push((format!("{prefix}.beta"), vec![c], true));
    out.push((format!("{prefix}.running_mean"), vec![c], false));
    out.push((format!("{prefix}.running_var"), vec![c], false));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_plan_collapses_twenty_blocks() {
        let arch = ArchConfig::shipped();
        let widths: Vec<usize> = arch.spatial_layers().iter().map(|l| l.w_out).collect();
        assert_eq!(widths, vec![10, 5, 3, 1]);
        let chans: Vec<(usize, usize)> =
            arch.spatial_layers().iter().map(|l| (l.c_in, l.c_out)).collect();
        assert_eq!(chans, vec![(64, 80), (80, 80), (80, 80), (80, 80)]);
        assert_eq!(arch.gru_input(0), 160);
        assert_eq!(arch.gru_input(1), 96);
    }

    #[test]
    fn other_block_counts_demand_a_new_schedule() {
        let mut arch = ArchConfig::shipped();
        arch.input.blocks = 16;
        let err = arch.validate().unwrap_err().to_string();
        assert!(err.contains("regenerate"), "{err}");
        arch.input.blocks = 40;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let arch = ArchConfig::shipped();
        assert_eq!(ArchConfig::from_toml_str(&arch.to_toml_string()).unwrap(), arch);
    }
}
