use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use segadapt_tensor::Array;

use crate::error::{format_err, io_err, Result};
use crate::model::{ModelBundle, ParamStore};

use super::{AdamW, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

const GROUPS: [&str; 5] = ["student", "teacher", "reference", "adam_m", "adam_v"];

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; the position does not fit JSON numbers.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self.word_pos.parse().map_err(|e: std::num::ParseIntError| e.to_string()).map_err(format_err("rng state"))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Full training state: the three parameter sets, optimizer moments, RNG
/// position and the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    pub optimizer: AdamW,
    pub rng: RngState,
}

fn to_bytes(a: &Array) -> Vec<u8> {
    a.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn iteration(&self) -> u64 {
        self.bundle.step
    }

    /// Writes a safetensors archive: tensors named `<group>/<parameter>` in
    /// `f64`, everything else in the header metadata.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let stores: [&ParamStore; 5] = [
            &self.bundle.student,
            &self.bundle.teacher,
            &self.bundle.reference,
            &self.optimizer.m,
            &self.optimizer.v,
        ];
        let mut buffers = Vec::new();
        for (group, store) in GROUPS.iter().zip(stores) {
            for (name, a) in store.iter() {
                buffers.push((format!("{group}/{name}"), a.shape().to_vec(), to_bytes(a)));
            }
        }
        let views = buffers
            .iter()
            .map(|(n, shape, bytes)| Ok((n.clone(), TensorView::new(Dtype::F64, shape.clone(), bytes)?)))
            .collect::<std::result::Result<Vec<_>, safetensors::SafeTensorError>>()
            .map_err(|e| e.to_string())
            .map_err(format_err("checkpoint"))?;
        let meta = HashMap::from([
            ("format_version".to_string(), CHECKPOINT_VERSION.to_string()),
            ("iteration".to_string(), self.bundle.step.to_string()),
            ("optimizer_steps".to_string(), self.optimizer.steps.to_string()),
            ("optimizer".to_string(), serde_json::to_string(&self.optimizer.cfg).expect("plain struct")),
            ("rng".to_string(), serde_json::to_string(&self.rng).expect("plain struct")),
            ("config".to_string(), self.config.to_toml()?),
        ]);
        let bytes = safetensors::serialize(views, Some(meta))
            .map_err(|e| e.to_string())
            .map_err(format_err(path.display().to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let (_, header) = SafeTensors::read_metadata(&bytes)
            .map_err(|e| e.to_string())
            .map_err(format_err(ctx.clone()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let field = |key: &str| -> Result<&String> {
            meta.get(key)
                .ok_or_else(|| format!("missing metadata {key}"))
                .map_err(format_err(ctx.clone()))
        };
        let version: u32 = field("format_version")?.parse().map_err(|_| "bad format_version".to_string()).map_err(format_err(ctx.clone()))?;
        if version != CHECKPOINT_VERSION {
            return Err(crate::Error::Format {
                context: ctx,
                msg: format!("format version {version}, expected {CHECKPOINT_VERSION}"),
            });
        }
        let parse_u64 = |key: &str| -> Result<u64> {
            field(key)?
                .parse()
                .map_err(|_| format!("bad {key}"))
                .map_err(format_err(ctx.clone()))
        };
        let step = parse_u64("iteration")?;
        let opt_steps = parse_u64("optimizer_steps")?;
        let json_err = |e: serde_json::Error| e.to_string();
        let opt_cfg = serde_json::from_str(field("optimizer")?).map_err(json_err).map_err(format_err(ctx.clone()))?;
        let rng: RngState = serde_json::from_str(field("rng")?).map_err(json_err).map_err(format_err(ctx.clone()))?;
        let config = TrainConfig::from_toml(field("config")?)?;

        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| e.to_string())
            .map_err(format_err(ctx.clone()))?;
        let mut stores: [ParamStore; 5] = Default::default();
        for (name, view) in st.tensors() {
            let Some((group, param)) = name.split_once('/') else {
                return Err(crate::Error::Format {
                    context: ctx,
                    msg: format!("tensor {name} has no group"),
                });
            };
            let Some(slot) = GROUPS.iter().position(|g| *g == group) else {
                return Err(crate::Error::Format {
                    context: ctx,
                    msg: format!("unknown group {group}"),
                });
            };
            if view.dtype() != Dtype::F64 {
                return Err(crate::Error::Format {
                    context: ctx,
                    msg: format!("{name} is {}, expected F64", view.dtype()),
                });
            }
            let data = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            stores[slot].insert(param, Array::new(view.shape().to_vec(), data)?);
        }
        let [student, teacher, reference, m, v] = stores;
        let bundle = ModelBundle {
            student,
            teacher,
            reference,
            step,
        };
        bundle.check_layout()?;
        let optimizer = AdamW {
            cfg: opt_cfg,
            m,
            v,
            steps: opt_steps,
        };
        bundle.student.check_same_layout(&optimizer.m)?;
        bundle.student.check_same_layout(&optimizer.v)?;
        Ok(Self {
            config,
            bundle,
            optimizer,
            rng,
        })
    }
}
