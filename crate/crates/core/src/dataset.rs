use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::laser::{LaserConfig, MinMax};
use crate::rng::{stream_rng, Stream};
use crate::stimulus::{build_drive_sequence, PulseShape, RawSequence, StimulusSpec};

/// Normalized drive and detected power of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    pub drive: Vec<f64>,
    pub target: Vec<f64>,
    pub symbols: Vec<u8>,
    pub shapes: Vec<PulseShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Grid and normalization shared by every waveform of a data set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Relaxation frequency at the configured bias, Hz.
    pub f_r: f64,
    pub symbol_rate: f64,
    pub sample_rate: f64,
    pub drive_map: MinMax,
    pub target_map: MinMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: StimulusSpec,
    pub laser: LaserConfig,
    pub grid: Grid,
    pub train: Vec<SequencePair>,
    pub val: Vec<SequencePair>,
}

const KIND: &str = "dataset";

pub fn raw_sequence(
    spec: &StimulusSpec,
    symbol_rate: f64,
    split: Split,
    index: usize,
) -> Result<RawSequence> {
    let stream = match split {
        Split::Train => Stream::Train,
        Split::Validation => Stream::Validation,
    };
    build_drive_sequence(
        spec,
        symbol_rate,
        &mut stream_rng(spec.seed, stream, index as u64),
    )
}

/// Builds stimulus, solves the rate equations for every sequence and applies
/// one min-max map per quantity, fitted on the training split.
pub fn generate_dataset(spec: &StimulusSpec, laser: &LaserConfig) -> Result<Dataset> {
    spec.validate()?;
    laser.validate()?;
    let f_r = laser.relaxation_frequency()?;
    let symbol_rate = spec.rate_fraction * f_r;
    let sample_rate = symbol_rate * spec.sps as f64;

    let raw_train: Vec<RawSequence> = (0..spec.n_train_seq)
        .map(|i| raw_sequence(spec, symbol_rate, Split::Train, i))
        .collect::<Result<_>>()?;
    let raw_val: Vec<RawSequence> = (0..spec.n_val_seq())
        .map(|i| raw_sequence(spec, symbol_rate, Split::Validation, i))
        .collect::<Result<_>>()?;

    let drive_map = raw_train
        .iter()
        .map(|r| MinMax::fit(&r.waveform))
        .reduce(|a, b| Ok(a?.union(&b?)))
        .expect("at least one training sequence")?;

    let solve = |offset: usize,
                 raws: Vec<RawSequence>|
     -> Result<Vec<(RawSequence, Vec<f64>, Vec<f64>)>> {
        raws.into_iter()
            .enumerate()
            .map(|(i, r)| {
                let drive = drive_map.apply(&r.waveform);
                let power = laser
                    .simulate(&drive, sample_rate)
                    .map_err(|e| Error::Sequence {
                        index: offset + i,
                        source: Box::new(e),
                    })?;
                Ok((r, drive, power))
            })
            .collect()
    };
    let train = solve(0, raw_train)?;
    let val = solve(spec.n_train_seq, raw_val)?;

    let target_map = train
        .iter()
        .map(|(_, _, p)| MinMax::fit(p))
        .reduce(|a, b| Ok(a?.union(&b?)))
        .expect("at least one training sequence")?;
    let finish = |v: Vec<(RawSequence, Vec<f64>, Vec<f64>)>| -> Vec<SequencePair> {
        v.into_iter()
            .map(|(r, drive, power)| SequencePair {
                drive,
                target: target_map.apply(&power),
                symbols: r.symbols,
                shapes: r.shapes,
            })
            .collect()
    };

    Ok(Dataset {
        spec: *spec,
        laser: *laser,
        grid: Grid {
            f_r,
            symbol_rate,
            sample_rate,
            drive_map,
            target_map,
        },
        train: finish(train),
        val: finish(val),
    })
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SequencePair] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.val,
        }
    }

    fn to_container(&self) -> Container {
        let shapes = |s: &[SequencePair]| s.iter().map(|p| p.shapes.clone()).collect::<Vec<_>>();
        let meta = json!({
            "spec": self.spec,
            "laser": self.laser,
            "grid": self.grid,
            "train_shapes": shapes(&self.train),
            "val_shapes": shapes(&self.val),
        });
        let mut c = Container::new(KIND, meta);
        for (name, seqs) in [("train", &self.train), ("val", &self.val)] {
            c.push(
                &format!("{name}.drive"),
                seqs.iter().flat_map(|p| p.drive.iter().copied()).collect(),
            );
            c.push(
                &format!("{name}.target"),
                seqs.iter().flat_map(|p| p.target.iter().copied()).collect(),
            );
            c.push(
                &format!("{name}.symbols"),
                seqs.iter()
                    .flat_map(|p| p.symbols.iter().map(|&s| s as f64))
                    .collect(),
            );
        }
        c
    }

    /// Hash of everything that defines the data set (metadata and arrays).
    pub fn content_hash(&self) -> String {
        self.to_container().hash()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Container::read(path, KIND)?;
        let field = |name: &str| {
            c.meta
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("dataset header lacks '{name}'")))
        };
        let spec: StimulusSpec = serde_json::from_value(field("spec")?)?;
        let laser: LaserConfig = serde_json::from_value(field("laser")?)?;
        let grid: Grid = serde_json::from_value(field("grid")?)?;
        let train_shapes: Vec<Vec<PulseShape>> = serde_json::from_value(field("train_shapes")?)?;
        let val_shapes: Vec<Vec<PulseShape>> = serde_json::from_value(field("val_shapes")?)?;
        let mut unpack = |name: &str, shapes: Vec<Vec<PulseShape>>| -> Result<Vec<SequencePair>> {
            let drive = c.take(&format!("{name}.drive"))?;
            let target = c.take(&format!("{name}.target"))?;
            let symbols = c.take(&format!("{name}.symbols"))?;
            let n = shapes.len();
            let (l, ns) = (spec.seq_len, spec.symbols_per_seq());
            if drive.len() != n * l || target.len() != n * l || symbols.len() != n * ns {
                return Err(Error::Format(format!(
                    "{name} arrays do not match {n} sequences"
                )));
            }
            Ok(shapes
                .into_iter()
                .enumerate()
                .map(|(i, shapes)| SequencePair {
                    drive: drive[i * l..(i + 1) * l].to_vec(),
                    target: target[i * l..(i + 1) * l].to_vec(),
                    symbols: symbols[i * ns..(i + 1) * ns]
                        .iter()
                        .map(|&s| s as u8)
                        .collect(),
                    shapes,
                })
                .collect())
        };
        let train = unpack("train", train_shapes)?;
        let val = unpack("val", val_shapes)?;
        Ok(Dataset {
            spec,
            laser,
            grid,
            train,
            val,
        })
    }
}
