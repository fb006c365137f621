use std::path::Path;

use dml_autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::hyper::{ModelHyper, ModelKind};
use super::layout::{Init, ParamSpec};
use super::{cat, lstm, tdnn, volterra};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// A surrogate channel: architecture plus parameter tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub hyper: ModelHyper,
    pub params: Vec<Param>,
    pub seed: u64,
}

pub fn layout(h: &ModelHyper) -> Vec<ParamSpec> {
    match h.kind {
        ModelKind::Volterra => volterra::layout(h),
        ModelKind::Tdnn => tdnn::layout(h),
        ModelKind::Lstm => lstm::layout(h),
        ModelKind::Cat => cat::layout(h),
    }
}

fn init_values<R: Rng>(spec: &ParamSpec, rng: &mut R) -> Vec<f64> {
    let n = spec.numel();
    match spec.init {
        Init::Uniform { fan_in } => {
            let a = (1.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        }
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Normal { std } => {
            let d = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Init::ForgetBias { hidden } => (0..n)
            .map(|i| {
                if (hidden..2 * hidden).contains(&i) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// Fresh model with weights drawn from the seed's initialization stream.
pub fn init_model(hyper: &ModelHyper, seed: u64) -> Result<SurrogateModel> {
    hyper.validate()?;
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let params = layout(hyper)
        .into_iter()
        .map(|spec| {
            let data = init_values(&spec, &mut rng);
            Ok(Param {
                tensor: Tensor::param(&spec.shape, data)?,
                name: spec.name,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SurrogateModel {
        hyper: *hyper,
        params,
        seed,
    })
}

impl SurrogateModel {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }

    /// Records the parameters on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    Ok(tape.leaf(&p.tensor.clone().with_requires_grad(true)))
                } else {
                    Ok(tape.constant(p.tensor.shape(), p.tensor.data().to_vec())?)
                }
            })
            .collect()
    }

    /// Maps `x[T×1]` to the predicted sequence `[T×1]` on `tape`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        if p.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                p.len()
            )));
        }
        match self.hyper.kind {
            ModelKind::Volterra => volterra::forward(&self.hyper, tape, p, x),
            ModelKind::Tdnn => tdnn::forward(&self.hyper, tape, p, x),
            ModelKind::Lstm => lstm::forward(&self.hyper, tape, p, x),
            ModelKind::Cat => Ok(cat::forward_traced(&self.hyper, tape, p, x)?.0),
        }
    }

    /// Inference with frozen parameters.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false)?;
        let xv = tape.constant(&[x.len(), 1], x.to_vec())?;
        let y = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(y).to_vec())
    }

    /// Attention probabilities (`heads × T × T`) of every CAT layer for input `x`.
    pub fn attention_maps(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.hyper.kind != ModelKind::Cat {
            return Err(Error::param("attention maps exist only for the CAT model"));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false)?;
        let xv = tape.constant(&[x.len(), 1], x.to_vec())?;
        let (_, attns) = cat::forward_traced(&self.hyper, &mut tape, &p, xv)?;
        Ok(attns
            .into_iter()
            .map(|a| tape.attention_probs(a).expect("attention node"))
            .collect())
    }

    /// Flattened parameter vector in layout order.
    pub fn flat(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }
}

/// Training provenance stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub train_config_hash: String,
    pub dataset_hash: String,
    pub epoch: usize,
    pub val_nrmse: f64,
}

const KIND: &str = "checkpoint";

pub fn save_checkpoint(path: &Path, model: &SurrogateModel, meta: &CheckpointMeta) -> Result<()> {
    let names: Vec<_> = model
        .params
        .iter()
        .map(|p| json!({"name": p.name, "shape": p.tensor.shape()}))
        .collect();
    let header = json!({
        "hyper": model.hyper,
        "seed": model.seed,
        "training": meta,
        "params": names,
    });
    let mut c = Container::new(KIND, header);
    for p in &model.params {
        c.push(&p.name, p.tensor.data().to_vec());
    }
    c.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(SurrogateModel, CheckpointMeta)> {
    let mut c = Container::read(path, KIND)?;
    let get = |k: &str| {
        c.meta
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("checkpoint header lacks '{k}'")))
    };
    let hyper: ModelHyper = serde_json::from_value(get("hyper")?)?;
    let seed: u64 = serde_json::from_value(get("seed")?)?;
    let meta: CheckpointMeta = serde_json::from_value(get("training")?)?;
    hyper.validate()?;
    let mut params = Vec::new();
    for spec in layout(&hyper) {
        let data = c.take(&spec.name)?;
        let tensor = Tensor::param(&spec.shape, data)
            .map_err(|e| Error::Format(format!("parameter '{}': {e}", spec.name)))?;
        params.push(Param {
            name: spec.name,
            tensor,
        });
    }
    if !c.arrays.is_empty() {
        return Err(Error::Format(format!(
            "unexpected arrays in checkpoint: {}",
            c.arrays.len()
        )));
    }
    Ok((
        SurrogateModel {
            hyper,
            params,
            seed,
        },
        meta,
    ))
}
