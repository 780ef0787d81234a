//! The PINN approximator: a dense input layer, a stack of hidden layers that
//! are either dense or TT-factorized, and a dense output layer, with sine
//! activations on every hidden neuron.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Jet2;
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tape::{JetBatch, NodeId, Tape, Value};
use crate::tensor::DenseTensor;
use crate::tt::{tt_init_with, TtLinear, TtShape};

pub use crate::params::{Gradients, Param};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sine,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HiddenKind {
    Dense,
    Tt { shape: TtShape },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    pub hidden: HiddenKind,
    #[serde(default)]
    pub activation: Activation,
    /// Multiply the output by `x(x-1)y(y-1)` so zero Dirichlet data holds
    /// exactly on the unit square.
    #[serde(default = "default_true")]
    pub hard_bc: bool,
}

fn default_true() -> bool {
    true
}

impl MlpSpec {
    pub fn dense(width: usize, hidden_layers: usize) -> Self {
        Self {
            input_dim: 2,
            hidden_width: width,
            hidden_layers,
            output_dim: 1,
            hidden: HiddenKind::Dense,
            activation: Activation::Sine,
            hard_bc: true,
        }
    }

    pub fn tt(shape: TtShape, hidden_layers: usize) -> Self {
        Self { hidden_width: shape.rows(), hidden: HiddenKind::Tt { shape }, ..Self::dense(0, hidden_layers) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 2 {
            return Err(Error::Config(format!("input_dim must be 2 (x, y), got {}", self.input_dim)));
        }
        if self.output_dim != 1 {
            return Err(Error::Config(format!("output_dim must be 1, got {}", self.output_dim)));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config("hidden width and layer count must be positive".into()));
        }
        if let HiddenKind::Tt { shape } = &self.hidden {
            if shape.rows() != self.hidden_width || shape.cols() != self.hidden_width {
                return Err(Error::Config(format!(
                    "TT factors give a {}x{} layer, hidden width is {}",
                    shape.rows(),
                    shape.cols(),
                    self.hidden_width
                )));
            }
        }
        Ok(())
    }

    /// Weight entries of one hidden layer.
    pub fn hidden_weight_count(&self) -> usize {
        match &self.hidden {
            HiddenKind::Dense => self.hidden_width * self.hidden_width,
            HiddenKind::Tt { shape } => shape.param_count(),
        }
    }

    /// Total trainable scalars, biases included.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_width;
        (self.input_dim * h + h)
            + self.hidden_layers * (self.hidden_weight_count() + h)
            + (h * self.output_dim + self.output_dim)
    }

    /// Dense-to-TT weight ratio of one hidden layer (1 for dense layers).
    pub fn hidden_compression(&self) -> f64 {
        (self.hidden_width * self.hidden_width) as f64 / self.hidden_weight_count() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Dense { w: ParamId, b: ParamId },
    Tt { shape: TtShape, cores: Vec<ParamId>, b: ParamId },
}

/// A network specification together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Pinn {
    spec: MlpSpec,
    params: ParamStore,
    layers: Vec<Layer>,
}

/// Points per block in value-only prediction.
const PREDICT_BLOCK: usize = 4096;

impl Pinn {
    /// Xavier-normal dense weights, TT cores per [`crate::tt::core_std`], zero
    /// biases. Deterministic in `seed`.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let h = spec.hidden_width;

        let dense = |params: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize| {
            let std = (2.0 / (out + inp) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let w = (0..out * inp).map(|_| normal.sample(rng)).collect();
            let w = params.register(format!("{name}.weight"), vec![out, inp], w)?;
            let b = params.register(format!("{name}.bias"), vec![out], vec![0.0; out])?;
            Ok::<_, Error>(Layer::Dense { w, b })
        };

        let mut layers = vec![dense(&mut params, &mut rng, "input", h, spec.input_dim)?];
        for i in 0..spec.hidden_layers {
            let name = format!("hidden{i}");
            let layer = match &spec.hidden {
                HiddenKind::Dense => dense(&mut params, &mut rng, &name, h, h)?,
                HiddenKind::Tt { shape } => {
                    let tt = tt_init_with(shape, &mut rng);
                    register_tt(&mut params, &name, tt)?
                }
            };
            layers.push(layer);
        }
        layers.push(dense(&mut params, &mut rng, "output", spec.output_dim, h)?);
        Ok(Self { spec, params, layers })
    }

    /// Rebuilds a network from parameters stored in registry order, as
    /// written by [`Pinn::init`].
    pub fn from_params(spec: MlpSpec, params: ParamStore) -> Result<Self> {
        let template = Self::init(spec.clone(), 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "spec needs {} parameter arrays, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for ((_, want), (_, got)) in template.params.iter().zip(params.iter()) {
            if want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    want.name, got.shape, want.shape
                )));
            }
        }
        Ok(Self { spec, params, layers: template.layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.element_count()
    }

    /// Hidden layer `i` as a standalone TT layer, if it is factorized.
    pub fn tt_layer(&self, i: usize) -> Option<TtLinear> {
        match self.layers.get(i + 1)? {
            Layer::Tt { shape, cores, b } if i < self.spec.hidden_layers => {
                let cores = cores
                    .iter()
                    .map(|&c| {
                        let p = &self.params.data(c);
                        DenseTensor::new(self.params.get(c).ok()?.shape.clone(), p.to_vec()).ok()
                    })
                    .collect::<Option<Vec<_>>>()?;
                TtLinear::from_parts(shape.clone(), cores, self.params.data(*b).to_vec()).ok()
            }
            _ => None,
        }
    }

    /// Same function with every TT hidden layer replaced by its reconstructed
    /// dense matrix.
    pub fn densified(&self) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.hidden = HiddenKind::Dense;
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense { w, b } => {
                    let (pw, pb) = (self.params.get(*w)?, self.params.get(*b)?);
                    let w = params.register(pw.name.clone(), pw.shape.clone(), pw.data.clone())?;
                    let b = params.register(pb.name.clone(), pb.shape.clone(), pb.data.clone())?;
                    layers.push(Layer::Dense { w, b });
                }
                Layer::Tt { .. } => {
                    let tt = self.tt_layer(i - 1).expect("hidden TT layer");
                    let name = format!("hidden{}", i - 1);
                    let w = params.register(format!("{name}.weight"), vec![tt.rows(), tt.cols()], tt.dense_matrix()?)?;
                    let b = params.register(format!("{name}.bias"), vec![tt.rows()], tt.bias.clone())?;
                    layers.push(Layer::Dense { w, b });
                }
            }
        }
        Ok(Self { spec, params, layers })
    }

    /// Records `f_θ` on the tape for the input node `x` (two features).
    pub fn record_forward(&self, tape: &mut Tape<'_>, x: NodeId) -> Result<NodeId> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Dense { w, b } => {
                    let w = tape.param(*w)?;
                    let b = tape.param(*b)?;
                    tape.affine(w, Some(b), h)?
                }
                Layer::Tt { shape, cores, b } => {
                    let cores = cores.iter().map(|&c| tape.param(c)).collect::<Result<Vec<_>>>()?;
                    let b = tape.param(*b)?;
                    tape.tt_affine(shape, &cores, Some(b), h)?
                }
            };
            if i != last {
                h = tape.sin(h)?;
            }
        }
        Ok(h)
    }

    /// Records `u_θ` at `points`: the network output, times the boundary mask
    /// when hard boundary conditions are on.
    pub fn record_solution(&self, tape: &mut Tape<'_>, points: &[(f64, f64)]) -> Result<NodeId> {
        let x = tape.seeds(points);
        let f = self.record_forward(tape, x)?;
        if !self.spec.hard_bc {
            return Ok(f);
        }
        let mask = JetBatch::from_fn(self.spec.output_dim, points.len(), |_, p| bc_mask(points[p].0, points[p].1));
        let mask = tape.constant(Value::Jets(mask));
        tape.mul(f, mask)
    }

    fn jets_at(&self, points: &[(f64, f64)], solution: bool) -> Result<Vec<Jet2>> {
        let mut tape = Tape::new(&self.params);
        let out = if solution {
            self.record_solution(&mut tape, points)?
        } else {
            let x = tape.seeds(points);
            self.record_forward(&mut tape, x)?
        };
        let jets = tape.value(out)?.as_jets().expect("network output is a jet batch");
        Ok((0..points.len()).map(|p| jets.get(0, p)).collect())
    }

    /// `f_θ` and its input derivatives at one point.
    pub fn forward(&self, point: (f64, f64)) -> Result<Jet2> {
        Ok(self.jets_at(&[point], false)?[0])
    }

    pub fn forward_batch(&self, points: &[(f64, f64)]) -> Result<Vec<Jet2>> {
        self.jets_at(points, false)
    }

    /// `u_θ` and its input derivatives at one point.
    pub fn solution(&self, point: (f64, f64)) -> Result<Jet2> {
        Ok(self.jets_at(&[point], true)?[0])
    }

    pub fn solution_batch(&self, points: &[(f64, f64)]) -> Result<Vec<Jet2>> {
        self.jets_at(points, true)
    }

    /// Value of `u_θ` only, without derivative channels or a tape.
    pub fn predict(&self, points: &[(f64, f64)]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for block in points.chunks(PREDICT_BLOCK) {
            out.extend(self.predict_block(block));
        }
        out
    }

    fn predict_block(&self, points: &[(f64, f64)]) -> Vec<f64> {
        let n = points.len();
        let mut h: Vec<f64> = points.iter().map(|p| p.0).chain(points.iter().map(|p| p.1)).collect();
        let mut dim = self.spec.input_dim;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Dense { w, b } => {
                    let out_dim = self.params.get(*w).expect("registered").shape[0];
                    let y = kernels::affine_forward(self.params.data(*w), Some(self.params.data(*b)), &h, out_dim, dim, n, n);
                    dim = out_dim;
                    y
                }
                Layer::Tt { shape, cores, b } => {
                    let core_data: Vec<&[f64]> = cores.iter().map(|&c| self.params.data(c)).collect();
                    let (mut y, _) = kernels::tt_forward(shape, &core_data, &h, n);
                    kernels::add_bias(&mut y, self.params.data(*b), n, n);
                    dim = shape.rows();
                    y
                }
            };
            if i != last {
                h.iter_mut().for_each(|v| *v = v.sin());
            }
        }
        if self.spec.hard_bc {
            for (v, &(x, y)) in h.iter_mut().zip(points) {
                *v *= x * (x - 1.0) * y * (y - 1.0);
            }
        }
        h
    }
}

fn register_tt(params: &mut ParamStore, name: &str, tt: TtLinear) -> Result<Layer> {
    let TtLinear { shape, cores, bias } = tt;
    let cores = cores
        .into_iter()
        .enumerate()
        .map(|(k, c)| params.register(format!("{name}.core{k}"), c.shape().to_vec(), c.into_data()))
        .collect::<Result<Vec<_>>>()?;
    let b = params.register(format!("{name}.bias"), vec![shape.rows()], bias)?;
    Ok(Layer::Tt { shape, cores, b })
}

/// `x(x-1)y(y-1)` as a jet; vanishes on the boundary of the unit square.
pub fn bc_mask(x: f64, y: f64) -> Jet2 {
    let xj = Jet2::var_x(x);
    let yj = Jet2::var_y(y);
    xj * (xj - 1.0) * yj * (yj - 1.0)
}

/// `u = x(x-1)y(y-1) · f`, with derivatives by the product rule.
pub fn apply_hard_bc(f: Jet2, x: f64, y: f64) -> Jet2 {
    bc_mask(x, y) * f
}
