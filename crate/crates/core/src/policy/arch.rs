use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PolicyError;
use crate::scenario::{ScenarioConfig, NUM_LOGITS, SCREEN_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Layer sizes of the actor-critic network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub screen_channels: usize,
    pub screen_size: usize,
    /// Conv stack, each followed by relu.
    pub conv: Vec<ConvLayer>,
    /// Width of the dense layer after the flattened conv stack.
    pub screen_dense: usize,
    /// Nonspatial input length, control-group one-hot included.
    pub nonspatial_len: usize,
    pub nonspatial_dense: usize,
    pub trunk: usize,
}

impl ArchConfig {
    pub fn for_scenario(cfg: &ScenarioConfig) -> Self {
        Self {
            screen_channels: SCREEN_CHANNELS,
            screen_size: cfg.map_size,
            conv: vec![
                ConvLayer {
                    filters: 8,
                    kernel: 5,
                    stride: 2,
                },
                ConvLayer {
                    filters: 16,
                    kernel: 3,
                    stride: 2,
                },
            ],
            screen_dense: 64,
            nonspatial_len: cfg.nonspatial_len(),
            nonspatial_dense: 64,
            trunk: 64,
        }
    }

    /// A narrow variant for small inputs (tests, toy environments).
    pub fn small(screen_channels: usize, screen_size: usize, nonspatial_len: usize) -> Self {
        Self {
            screen_channels,
            screen_size,
            conv: vec![ConvLayer {
                filters: 2,
                kernel: 3.min(screen_size),
                stride: 2,
            }],
            screen_dense: 6,
            nonspatial_len,
            nonspatial_dense: 6,
            trunk: 8,
        }
    }

    /// Spatial side length after each conv layer.
    pub fn conv_sizes(&self) -> Result<Vec<usize>, PolicyError> {
        let mut s = self.screen_size;
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel == 0 || c.stride == 0 || c.filters == 0 || c.kernel > s {
                return Err(PolicyError::InvalidArch(format!(
                    "conv layer {i} ({c:?}) does not fit a {s}x{s} input"
                )));
            }
            s = (s - c.kernel) / c.stride + 1;
            out.push(s);
        }
        Ok(out)
    }

    pub fn flat_len(&self) -> Result<usize, PolicyError> {
        let sizes = self.conv_sizes()?;
        Ok(match (self.conv.last(), sizes.last()) {
            (Some(c), Some(&s)) => c.filters * s * s,
            _ => self.screen_channels * self.screen_size * self.screen_size,
        })
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.conv_sizes()?;
        if [
            self.screen_channels,
            self.screen_dense,
            self.nonspatial_len,
            self.nonspatial_dense,
            self.trunk,
        ]
        .contains(&0)
        {
            return Err(PolicyError::InvalidArch("zero-width layer".into()));
        }
        Ok(())
    }

    /// (name, shape, fan_in) of every parameter tensor, in graph order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>, usize)>, PolicyError> {
        self.validate()?;
        let mut out = Vec::new();
        let mut ch = self.screen_channels;
        for (i, c) in self.conv.iter().enumerate() {
            let fan_in = ch * c.kernel * c.kernel;
            out.push((format!("conv{}.w", i + 1), vec![c.filters, ch, c.kernel, c.kernel], fan_in));
            out.push((format!("conv{}.b", i + 1), vec![c.filters], fan_in));
            ch = c.filters;
        }
        let mut dense = |name: &str, d_in: usize, d_out: usize| {
            out.push((format!("{name}.w"), vec![d_in, d_out], d_in));
            out.push((format!("{name}.b"), vec![d_out], d_in));
        };
        dense("screen_fc", self.flat_len()?, self.screen_dense);
        dense("nonspatial_fc", self.nonspatial_len, self.nonspatial_dense);
        dense("trunk_fc", self.screen_dense + self.nonspatial_dense, self.trunk);
        dense("logits", self.trunk, NUM_LOGITS);
        dense("value", self.trunk, 1);
        Ok(out)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("arch config serializes");
        Sha256::digest(&json).into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }
}
