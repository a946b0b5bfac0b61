//! Binary checkpoint container.
//!
//! Layout: the magic `TNGR1`, then records of
//! `name_len: u32 | name | rank: u32 | extents: u32 * rank | dtype: u8 | values`,
//! all little-endian. Dtype 0 is f32, 1 is f64, and 2 is raw UTF-8 text
//! (used for the run configuration under `__config__`).

use std::collections::BTreeMap;
use std::path::Path;

use tanger_autograd::{Element, Tensor};

use crate::config::RunConfig;
use crate::error::{Result, TangerError};
use crate::model::ModelParams;
use crate::visual_words::Codebook;

pub const MAGIC: &[u8; 5] = b"TNGR1";
pub const CONFIG_RECORD: &str = "__config__";
pub const CODEBOOK_RECORD: &str = "codebook.centroids";
pub const DIGEST_RECORD: &str = "codebook.digest";

const TEXT_TAG: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    Text(String),
}

/// Ordered named records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub records: Vec<(String, Record)>,
}

impl Container {
    pub fn push(&mut self, name: &str, record: Record) {
        self.records.push((name.to_string(), record));
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        for (name, rec) in &self.records {
            u32le(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            match rec {
                Record::F32(t) => {
                    u32le(&mut out, t.rank());
                    t.shape().iter().for_each(|&e| u32le(&mut out, e));
                    out.push(0);
                    t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                Record::F64(t) => {
                    u32le(&mut out, t.rank());
                    t.shape().iter().for_each(|&e| u32le(&mut out, e));
                    out.push(1);
                    t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                Record::Text(s) => {
                    u32le(&mut out, 1);
                    u32le(&mut out, s.len());
                    out.push(TEXT_TAG);
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| TangerError::Checkpoint(m);
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(err("missing TNGR1 magic".into()));
        }
        let mut pos = MAGIC.len();
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
            let end = end.ok_or_else(|| err(format!("truncated at byte {pos}")))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let mut records = Vec::new();
        loop {
            // a clean end of file can only occur between records
            let Ok(head) = take(4) else { break };
            let name_len = u32::from_le_bytes(head.try_into().expect("4 bytes")) as usize;
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|_| err("record name is not UTF-8".into()))?
                .to_string();
            let rank = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let shape: Vec<usize> = (0..rank)
                .map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize))
                .collect::<Result<_>>()?;
            let tag = take(1)?[0];
            let n: usize = shape.iter().product();
            let rec = match tag {
                0 => Record::F32(Tensor::new(
                    shape,
                    take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
                )?),
                1 => Record::F64(Tensor::new(
                    shape,
                    take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
                )?),
                TEXT_TAG if rank == 1 => Record::Text(
                    String::from_utf8(take(n)?.to_vec()).map_err(|_| err(format!("record {name} is not UTF-8")))?,
                ),
                other => return Err(err(format!("record {name} has unknown dtype tag {other}"))),
            };
            records.push((name, rec));
        }
        if pos != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { records })
    }
}

fn to_record<F: Element>(t: &Tensor<F>) -> Record {
    match F::DTYPE {
        tanger_autograd::DType::F32 => Record::F32(t.cast()),
        tanger_autograd::DType::F64 => Record::F64(t.cast()),
    }
}

/// Everything a trained run needs to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F: Element> {
    pub config: RunConfig,
    pub params: ModelParams<F>,
    pub codebook: Option<Codebook>,
}

impl<F: Element> Checkpoint<F> {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.push(CONFIG_RECORD, Record::Text(self.config.to_text()));
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            c.push(name, to_record(t));
        }
        if let Some(cb) = &self.codebook {
            let t = Tensor::new(vec![cb.k(), cb.dim()], cb.centroids().to_vec()).expect("codebook shape");
            c.push(CODEBOOK_RECORD, Record::F64(t));
            c.push(DIGEST_RECORD, Record::Text(cb.digest().to_string()));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let Some(Record::Text(text)) = c.get(CONFIG_RECORD) else {
            return Err(TangerError::Checkpoint(format!("no {CONFIG_RECORD} text record")));
        };
        let config = RunConfig::parse(text)?;
        let mut named = BTreeMap::new();
        let mut centroids = None;
        let mut digest = String::new();
        for (name, rec) in &c.records {
            match (name.as_str(), rec) {
                (CONFIG_RECORD, _) => {}
                (CODEBOOK_RECORD, Record::F64(t)) => centroids = Some(t.clone()),
                (DIGEST_RECORD, Record::Text(s)) => digest = s.clone(),
                (_, Record::F32(t)) => {
                    named.insert(name.clone(), t.cast::<F>());
                }
                (_, Record::F64(t)) => {
                    named.insert(name.clone(), t.cast::<F>());
                }
                (_, Record::Text(_)) => {
                    return Err(TangerError::Checkpoint(format!("unexpected text record {name}")));
                }
            }
        }
        let params = ModelParams::from_named(&config.model, named)?;
        let codebook = centroids
            .map(|t| {
                if t.rank() != 2 {
                    return Err(TangerError::Checkpoint("codebook must be a matrix".into()));
                }
                Codebook::new(t.to_vec(), t.shape()[0], t.shape()[1], digest.clone())
            })
            .transpose()?;
        Ok(Self {
            config,
            params,
            codebook,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_container().to_bytes()).map_err(|e| TangerError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TangerError::io(path, e))?;
        Self::from_container(&Container::from_bytes(&bytes)?)
            .map_err(|e| TangerError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
