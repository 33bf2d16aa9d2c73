use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_output_len;

/// One stack of 1-D convolutions over the time axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStackConfig {
    pub layers: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Output channels of every layer except where the stack ends at the model width.
    pub channels: usize,
}

impl ConvStackConfig {
    /// Output length after the whole stack, or `None` when some layer's
    /// kernel does not fit its padded input.
    pub fn output_len(&self, mut len: usize) -> Option<usize> {
        for _ in 0..self.layers {
            len = conv_output_len(len, self.kernel, self.stride, self.padding)?;
        }
        Some(len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub projection_layers: usize,
    pub decoder_layers: usize,
    /// Number of memory slots `m`.
    pub memory_len: usize,
    /// Feature width of raw speech frames.
    pub speech_dim: usize,
    /// Trainable frame encoder (GELU after every layer).
    pub frontend: ConvStackConfig,
    /// Length-reducing CNN; its last layer outputs `d_model`.
    pub downsample: ConvStackConfig,
    pub max_positions: usize,
    /// Decoder output layer reuses the decoder embedding table.
    pub tie_output: bool,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Small configuration used for the synthetic experiments.
    pub fn desk() -> Self {
        Self {
            vocab_size: 32,
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            encoder_layers: 2,
            projection_layers: 2,
            decoder_layers: 2,
            memory_len: 16,
            speech_dim: 16,
            frontend: ConvStackConfig { layers: 2, kernel: 5, stride: 1, padding: 2, channels: 64 },
            downsample: ConvStackConfig { layers: 2, kernel: 5, stride: 2, padding: 2, channels: 64 },
            max_positions: 1024,
            tie_output: true,
            layer_norm_eps: 1e-5,
        }
    }

    /// Full-size layout with 64 memory slots.
    pub fn full_scale(vocab_size: usize, speech_dim: usize) -> Self {
        Self {
            vocab_size,
            d_model: 512,
            heads: 8,
            ffn_dim: 512,
            encoder_layers: 6,
            projection_layers: 3,
            decoder_layers: 6,
            memory_len: 64,
            speech_dim,
            frontend: ConvStackConfig { layers: 2, kernel: 5, stride: 2, padding: 2, channels: 512 },
            downsample: ConvStackConfig { layers: 2, kernel: 5, stride: 2, padding: 2, channels: 1024 },
            max_positions: 1024,
            tie_output: true,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} leaves no content tokens", self.vocab_size));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible into {} heads", self.d_model, self.heads));
        }
        if self.ffn_dim == 0 || self.memory_len == 0 || self.speech_dim == 0 || self.max_positions == 0 {
            return bad("ffn_dim, memory_len, speech_dim and max_positions must be positive".into());
        }
        if self.encoder_layers == 0 || self.projection_layers == 0 || self.decoder_layers == 0 {
            return bad("every stack needs at least one layer".into());
        }
        for (name, c) in [("frontend", &self.frontend), ("downsample", &self.downsample)] {
            if c.kernel == 0 || c.stride == 0 || c.channels == 0 {
                return bad(format!("{name}: kernel, stride and channels must be positive"));
            }
        }
        if self.downsample.layers == 0 {
            return bad("downsample needs at least one layer to reach d_model".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Rows reaching the shared encoder for `frames` raw speech frames.
    pub fn speech_output_len(&self, frames: usize) -> Option<usize> {
        self.downsample.output_len(self.frontend.output_len(frames)?)
    }
}
