use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimulus::Scale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Volterra,
    Tdnn,
    Lstm,
    Cat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Volterra,
        ModelKind::Tdnn,
        ModelKind::Lstm,
        ModelKind::Cat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Volterra => "volterra",
            ModelKind::Tdnn => "tdnn",
            ModelKind::Lstm => "lstm",
            ModelKind::Cat => "cat",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown model kind '{s}' (volterra, tdnn, lstm, cat)"
                ))
            })
    }
}

/// Architecture of one surrogate. Fields a kind does not use are ignored.
///
/// * `hidden_nodes`: MLP width (CAT), hidden width (TDNN), state width (LSTM).
/// * `hidden_layers`: decoder layers (CAT), ReLU layers (TDNN), stacked cells (LSTM).
/// * `mlp_sublayers`: linear layers in each CAT feed-forward block.
/// * `conv_window`: causal window of the CAT query/key/embedding convs, or of the TDNN input.
/// * `memory`: Volterra kernel length.
/// * `max_len`: length of the CAT positional-embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHyper {
    pub kind: ModelKind,
    pub hidden_nodes: usize,
    pub hidden_layers: usize,
    pub mlp_sublayers: usize,
    pub conv_window: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub memory: usize,
    pub max_len: usize,
    pub profile: Scale,
}

impl ModelHyper {
    fn base(kind: ModelKind, profile: Scale) -> Self {
        ModelHyper {
            kind,
            hidden_nodes: 0,
            hidden_layers: 0,
            mlp_sublayers: 0,
            conv_window: 0,
            embed_dim: 0,
            n_heads: 0,
            memory: 0,
            max_len: 1024,
            profile,
        }
    }

    /// Sizes of the published models.
    pub fn paper(kind: ModelKind) -> Self {
        let b = Self::base(kind, Scale::Paper);
        match kind {
            ModelKind::Volterra => ModelHyper { memory: 16, ..b },
            ModelKind::Tdnn => ModelHyper {
                hidden_nodes: 2048,
                hidden_layers: 1,
                mlp_sublayers: 2,
                conv_window: 31,
                ..b
            },
            ModelKind::Lstm => ModelHyper {
                hidden_nodes: 64,
                hidden_layers: 2,
                ..b
            },
            ModelKind::Cat => ModelHyper {
                hidden_nodes: 128,
                hidden_layers: 2,
                mlp_sublayers: 2,
                conv_window: 9,
                embed_dim: 128,
                n_heads: 8,
                ..b
            },
        }
    }

    /// Reduced widths that keep every structural element.
    pub fn desk(kind: ModelKind) -> Self {
        let p = Self::paper(kind);
        let p = ModelHyper {
            profile: Scale::Desk,
            ..p
        };
        match kind {
            ModelKind::Volterra => p,
            ModelKind::Tdnn => ModelHyper {
                hidden_nodes: 256,
                ..p
            },
            ModelKind::Lstm => ModelHyper {
                hidden_nodes: 32,
                ..p
            },
            ModelKind::Cat => ModelHyper {
                hidden_nodes: 32,
                embed_dim: 32,
                n_heads: 2,
                ..p
            },
        }
    }

    pub fn for_scale(kind: ModelKind, scale: Scale) -> Self {
        match scale {
            Scale::Paper => Self::paper(kind),
            Scale::Desk => Self::desk(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::param(format!("{}: {what}", self.kind)))
            }
        };
        match self.kind {
            ModelKind::Volterra => need(self.memory >= 1, "memory must be at least 1"),
            ModelKind::Tdnn => {
                need(self.hidden_nodes >= 1, "hidden_nodes must be at least 1")?;
                need(self.hidden_layers >= 1, "hidden_layers must be at least 1")?;
                need(self.conv_window >= 1, "conv_window must be at least 1")
            }
            ModelKind::Lstm => {
                need(self.hidden_nodes >= 1, "hidden_nodes must be at least 1")?;
                need(self.hidden_layers >= 1, "hidden_layers must be at least 1")
            }
            ModelKind::Cat => {
                need(
                    self.embed_dim >= 1 && self.n_heads >= 1,
                    "embed_dim and n_heads must be positive",
                )?;
                need(
                    self.embed_dim % self.n_heads == 0,
                    &format!(
                        "embed_dim {} is not divisible by n_heads {}",
                        self.embed_dim, self.n_heads
                    ),
                )?;
                need(self.hidden_nodes >= 1, "hidden_nodes must be at least 1")?;
                need(self.hidden_layers >= 1, "hidden_layers must be at least 1")?;
                need(self.mlp_sublayers >= 1, "mlp_sublayers must be at least 1")?;
                need(self.conv_window >= 1, "conv_window must be at least 1")?;
                need(self.max_len >= 1, "max_len must be at least 1")
            }
        }
    }
}
