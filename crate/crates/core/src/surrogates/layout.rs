use serde::{Deserialize, Serialize};

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// `U(−√(1/fan_in), +√(1/fan_in))`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
    Normal {
        std: f64,
    },
    /// Zero gate biases except the forget gate (second quarter), set to one.
    ForgetBias {
        hidden: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Weight `[fan_in × out]` plus zero bias `[out]`.
pub(crate) fn linear(specs: &mut Vec<ParamSpec>, name: &str, fan_in: usize, out: usize) {
    specs.push(ParamSpec::new(
        format!("{name}.w"),
        &[fan_in, out],
        Init::Uniform { fan_in },
    ));
    specs.push(ParamSpec::new(format!("{name}.b"), &[out], Init::Zeros));
}

/// Causal conv kernel `[K × cin × cout]` plus zero bias.
pub(crate) fn conv(specs: &mut Vec<ParamSpec>, name: &str, k: usize, cin: usize, cout: usize) {
    specs.push(ParamSpec::new(
        format!("{name}.w"),
        &[k, cin, cout],
        Init::Uniform { fan_in: k * cin },
    ));
    specs.push(ParamSpec::new(format!("{name}.b"), &[cout], Init::Zeros));
}

pub(crate) fn layer_norm(specs: &mut Vec<ParamSpec>, name: &str, d: usize) {
    specs.push(ParamSpec::new(format!("{name}.g"), &[d], Init::Ones));
    specs.push(ParamSpec::new(format!("{name}.b"), &[d], Init::Zeros));
}
