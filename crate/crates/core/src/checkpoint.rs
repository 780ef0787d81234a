//! Versioned binary container for models, optimizer state and TT layers.
//!
//! Layout: the 8-byte magic `TTPINNCK`, a little-endian `u32` version, a
//! little-endian `u64` header length, the JSON header, then raw little-endian
//! `f64` arrays in the order the header lists them.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet2;
use crate::network::{MlpSpec, Pinn};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::problem::{ExactSolution, HelmholtzProblem, Surrogate};
use crate::tensor::DenseTensor;
use crate::tt::{TtLinear, TtShape};

pub const MAGIC: &[u8; 8] = b"TTPINNCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Content {
    Network { spec: MlpSpec, optimizer: Option<OptimizerInfo> },
    Exact,
    TtLayer { shape: TtShape },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerInfo {
    config: AdamConfig,
    t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    content: Content,
    problem: HelmholtzProblem,
    iteration: usize,
    arrays: Vec<ArrayInfo>,
}

/// A model that can be written to and restored from a checkpoint.
#[derive(Clone, Debug)]
pub enum Model {
    Network(Pinn),
    Exact(ExactSolution),
}

impl Surrogate for Model {
    fn solution_jets(&self, points: &[(f64, f64)]) -> Result<Vec<Jet2>> {
        match self {
            Model::Network(n) => n.solution_jets(points),
            Model::Exact(e) => e.solution_jets(points),
        }
    }

    fn predict(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        match self {
            Model::Network(n) => Surrogate::predict(n, points),
            Model::Exact(e) => e.predict(points),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub problem: HelmholtzProblem,
    /// Number of optimizer steps already taken.
    pub iteration: usize,
    pub optimizer: Option<AdamState>,
}

fn write_container(mut w: impl Write, header: &Header, arrays: &[&[f64]]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(arrays.iter().map(|a| a.len() * 8).sum());
    for a in arrays {
        for x in *a {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_container(mut r: impl Read) -> Result<(Header, Vec<Vec<f64>>)> {
    let corrupt = |msg: String| Error::Checkpoint(msg);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body_start = 20usize.checked_add(len).filter(|&e| e <= bytes.len());
    let body_start = body_start.ok_or_else(|| corrupt(format!("header length {len} exceeds file size")))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..body_start]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let mut body = &bytes[body_start..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for info in &header.arrays {
        let n: usize = info.shape.iter().product();
        if body.len() < n * 8 {
            return Err(corrupt(format!("truncated data in array {}", info.name)));
        }
        let (head, rest) = body.split_at(n * 8);
        arrays.push(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
        body = rest;
    }
    if !body.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", body.len())));
    }
    Ok((header, arrays))
}

impl Checkpoint {
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut arrays: Vec<ArrayInfo> = Vec::new();
        let mut data: Vec<&[f64]> = Vec::new();
        let content = match &self.model {
            Model::Exact(_) => Content::Exact,
            Model::Network(net) => {
                for (_, p) in net.params().iter() {
                    arrays.push(ArrayInfo { name: p.name.clone(), shape: p.shape.clone() });
                    data.push(&p.data);
                }
                let optimizer = self.optimizer.as_ref().map(|adam| {
                    for (moment, tag) in [(&adam.m, "m"), (&adam.v, "v")] {
                        for ((_, p), a) in net.params().iter().zip(moment) {
                            arrays.push(ArrayInfo { name: format!("adam.{tag}.{}", p.name), shape: p.shape.clone() });
                            data.push(a);
                        }
                    }
                    OptimizerInfo { config: adam.config, t: adam.t }
                });
                Content::Network { spec: net.spec().clone(), optimizer }
            }
        };
        let header = Header { content, problem: self.problem, iteration: self.iteration, arrays };
        write_container(w, &header, &data)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let (header, mut arrays) = read_container(r)?;
        let (model, optimizer) = match header.content {
            Content::Exact => (Model::Exact(ExactSolution(header.problem)), None),
            Content::TtLayer { .. } => return Err(Error::Checkpoint("file holds a single TT layer, not a model".into())),
            Content::Network { spec, optimizer } => {
                let template = Pinn::init(spec.clone(), 0)?;
                let n = template.params().len();
                let expected = if optimizer.is_some() { 3 * n } else { n };
                if arrays.len() != expected {
                    return Err(Error::Checkpoint(format!("expected {expected} arrays, found {}", arrays.len())));
                }
                let moments = arrays.split_off(n);
                let mut store = ParamStore::new();
                for ((info, data), (_, p)) in header.arrays.iter().zip(arrays).zip(template.params().iter()) {
                    if info.name != p.name || info.shape != p.shape {
                        return Err(Error::Checkpoint(format!(
                            "array {} {:?} does not match {} {:?}",
                            info.name, info.shape, p.name, p.shape
                        )));
                    }
                    store.register(info.name.clone(), info.shape.clone(), data)?;
                }
                let adam = optimizer.map(|o| {
                    let mut m = moments;
                    let v = m.split_off(n);
                    AdamState { config: o.config, t: o.t, m, v }
                });
                (Model::Network(Pinn::from_params(spec, store)?), adam)
            }
        };
        Ok(Self { model, problem: header.problem, iteration: header.iteration, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        self.write_to(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Writes a TT layer: shape and ranks in the header, then the cores in
/// order, then the bias.
pub fn write_tt_layer(layer: &TtLinear, w: impl Write) -> Result<()> {
    layer.validate()?;
    let mut arrays: Vec<ArrayInfo> = layer
        .cores
        .iter()
        .enumerate()
        .map(|(k, c)| ArrayInfo { name: format!("core{k}"), shape: c.shape().to_vec() })
        .collect();
    arrays.push(ArrayInfo { name: "bias".into(), shape: vec![layer.bias.len()] });
    let mut data: Vec<&[f64]> = layer.cores.iter().map(|c| c.data()).collect();
    data.push(&layer.bias);
    let header = Header {
        content: Content::TtLayer { shape: layer.shape.clone() },
        problem: HelmholtzProblem::benchmark(),
        iteration: 0,
        arrays,
    };
    write_container(w, &header, &data)
}

pub fn read_tt_layer(r: impl Read) -> Result<TtLinear> {
    let (header, mut arrays) = read_container(r)?;
    let Content::TtLayer { shape } = header.content else {
        return Err(Error::Checkpoint("file does not hold a TT layer".into()));
    };
    let bias = arrays.pop().ok_or_else(|| Error::Checkpoint("missing bias".into()))?;
    let cores = header
        .arrays
        .iter()
        .zip(arrays)
        .map(|(info, data)| DenseTensor::new(info.shape.clone(), data))
        .collect::<Result<Vec<_>>>()?;
    TtLinear::from_parts(shape, cores, bias).map_err(|e| Error::Checkpoint(e.to_string()))
}
