//! PDE problem definition, collocation sampling, the composite PINN loss and
//! error metrics.

use std::f64::consts::PI;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet2, CHANNELS};
use crate::network::Pinn;
use crate::params::Gradients;
use crate::tape::{NodeId, Tape, Value};
use crate::tensor::DenseTensor;

/// A differential operator applied pointwise to a jet of the solution.
pub trait PdeOperator {
    /// Residual at `(x, y)` and its partials with respect to
    /// `(u, u_x, u_y, u_xx, u_yy)`.
    fn residual(&self, u: Jet2, x: f64, y: f64) -> (f64, [f64; CHANNELS]);
}

/// `(Δ + k²) u - g = 0` on the unit square with zero Dirichlet data.
///
/// The source is `g = -k² sin(kx) sin(ky)`, which makes
/// `u*(x, y) = sin(kx) sin(ky)` the exact solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelmholtzProblem {
    pub wave_number: f64,
}

impl Default for HelmholtzProblem {
    fn default() -> Self {
        Self::benchmark()
    }
}

impl HelmholtzProblem {
    /// Wave number `4π`: two full periods per axis.
    pub fn benchmark() -> Self {
        Self { wave_number: 4.0 * PI }
    }

    pub fn source(&self, x: f64, y: f64) -> f64 {
        let k = self.wave_number;
        -k * k * (k * x).sin() * (k * y).sin()
    }

    pub fn exact(&self, x: f64, y: f64) -> f64 {
        let k = self.wave_number;
        (k * x).sin() * (k * y).sin()
    }

    pub fn exact_jet(&self, x: f64, y: f64) -> Jet2 {
        let k = self.wave_number;
        (Jet2::var_x(x) * k).sin() * (Jet2::var_y(y) * k).sin()
    }
}

impl PdeOperator for HelmholtzProblem {
    fn residual(&self, u: Jet2, x: f64, y: f64) -> (f64, [f64; CHANNELS]) {
        let k2 = self.wave_number * self.wave_number;
        let r = u.dxx + u.dyy + k2 * u.v - self.source(x, y);
        (r, [k2, 0.0, 0.0, 1.0, 1.0])
    }
}

/// Anything that can be evaluated as a candidate solution.
pub trait Surrogate {
    fn solution_jets(&self, points: &[(f64, f64)]) -> Result<Vec<Jet2>>;

    fn predict(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        Ok(self.solution_jets(points)?.into_iter().map(|j| j.v).collect())
    }
}

impl Surrogate for Pinn {
    fn solution_jets(&self, points: &[(f64, f64)]) -> Result<Vec<Jet2>> {
        self.solution_batch(points)
    }

    fn predict(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        Ok(Pinn::predict(self, points))
    }
}

/// The closed-form solution, standing in for a trained network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactSolution(pub HelmholtzProblem);

impl Surrogate for ExactSolution {
    fn solution_jets(&self, points: &[(f64, f64)]) -> Result<Vec<Jet2>> {
        Ok(points.iter().map(|&(x, y)| self.0.exact_jet(x, y)).collect())
    }

    fn predict(&self, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        Ok(points.iter().map(|&(x, y)| self.0.exact(x, y)).collect())
    }
}

/// PDE residual of `model` at one interior point.
pub fn residual(model: &impl Surrogate, op: &impl PdeOperator, point: (f64, f64)) -> Result<f64> {
    let u = model.solution_jets(&[point])?[0];
    Ok(op.residual(u, point.0, point.1).0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub residual_points: usize,
    pub boundary_points: usize,
    pub initial_points: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { residual_points: 1200, boundary_points: 0, initial_points: 0, seed: 0 }
    }
}

/// Points with target values for a data-misfit term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataTerm {
    pub points: Vec<(f64, f64)>,
    pub targets: Vec<f64>,
}

impl DataTerm {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    pub residual: Vec<(f64, f64)>,
    pub boundary: DataTerm,
    pub initial: DataTerm,
}

fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is used for parameter initialization.
    rng.set_stream(1);
    rng
}

/// `residual_points` i.i.d. uniform points strictly inside the unit square.
pub fn sample_collocation(config: &SamplingConfig) -> Vec<(f64, f64)> {
    let mut rng = sampling_rng(config.seed);
    draw_interior(&mut rng, config.residual_points)
}

fn draw_interior(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.sample(Open01), rng.sample(Open01))).collect()
}

/// Draws every point set of `config`. Boundary points are uniform along the
/// perimeter and initial points lie on `y = 0` (the second input read as
/// time); targets come from the exact solution.
pub fn sample(config: &SamplingConfig, problem: &HelmholtzProblem) -> Samples {
    let mut rng = sampling_rng(config.seed);
    let residual = draw_interior(&mut rng, config.residual_points);
    let boundary_points: Vec<(f64, f64)> = (0..config.boundary_points)
        .map(|_| {
            let s: f64 = rng.random::<f64>() * 4.0;
            let t = s.fract();
            match s as u32 {
                0 => (t, 0.0),
                1 => (1.0, t),
                2 => (1.0 - t, 1.0),
                _ => (0.0, 1.0 - t),
            }
        })
        .collect();
    let initial_points: Vec<(f64, f64)> = (0..config.initial_points).map(|_| (rng.random::<f64>(), 0.0)).collect();
    let term = |points: Vec<(f64, f64)>| {
        let targets = points.iter().map(|&(x, y)| problem.exact(x, y)).collect();
        DataTerm { points, targets }
    };
    Samples { residual, boundary: term(boundary_points), initial: term(initial_points) }
}

/// Loss components; `total` is `residual + boundary + initial`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub residual: f64,
    pub boundary: f64,
    pub initial: f64,
}

/// Records the composite loss on `tape`; returns the total node.
pub fn record_loss(
    tape: &mut Tape<'_>,
    net: &Pinn,
    op: &impl PdeOperator,
    samples: &Samples,
) -> Result<(NodeId, [Option<NodeId>; 3])> {
    if samples.residual.is_empty() {
        return Err(Error::Config("the residual term needs at least one collocation point".into()));
    }
    let pts = &samples.residual;
    let u = net.record_solution(tape, pts)?;
    let r = tape.pointwise(u, |_, p, jet| op.residual(jet, pts[p].0, pts[p].1))?;
    let l_r = tape.mean_square(r)?;

    let data_term = |tape: &mut Tape<'_>, term: &DataTerm| -> Result<Option<NodeId>> {
        if term.is_empty() {
            return Ok(None);
        }
        let u = net.record_solution(tape, &term.points)?;
        let v = tape.values(u)?;
        let neg = DenseTensor::new(vec![1, term.len()], term.targets.iter().map(|t| -t).collect())?;
        let neg = tape.constant(Value::Plain(neg));
        let diff = tape.add(v, neg)?;
        Ok(Some(tape.mean_square(diff)?))
    };
    let l_b = data_term(tape, &samples.boundary)?;
    let l_0 = data_term(tape, &samples.initial)?;

    let mut total = l_r;
    for term in [l_b, l_0].into_iter().flatten() {
        total = tape.add(total, term)?;
    }
    Ok((total, [Some(l_r), l_b, l_0]))
}

fn breakdown(tape: &Tape<'_>, total: NodeId, parts: [Option<NodeId>; 3]) -> Result<LossBreakdown> {
    let get = |n: Option<NodeId>| n.map_or(Ok(0.0), |n| tape.scalar(n));
    Ok(LossBreakdown {
        total: tape.scalar(total)?,
        residual: get(parts[0])?,
        boundary: get(parts[1])?,
        initial: get(parts[2])?,
    })
}

pub fn loss(net: &Pinn, op: &impl PdeOperator, samples: &Samples) -> Result<LossBreakdown> {
    let mut tape = Tape::new(net.params());
    let (total, parts) = record_loss(&mut tape, net, op, samples)?;
    breakdown(&tape, total, parts)
}

pub fn loss_and_grad(net: &Pinn, op: &impl PdeOperator, samples: &Samples) -> Result<(LossBreakdown, Gradients)> {
    let mut tape = Tape::new(net.params());
    let (total, parts) = record_loss(&mut tape, net, op, samples)?;
    let grads = tape.backward(total)?;
    Ok((breakdown(&tape, total, parts)?, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub rel_l2: f64,
}

pub fn metrics(prediction: &[f64], truth: &[f64]) -> Metrics {
    assert_eq!(prediction.len(), truth.len());
    let (mut err2, mut ref2) = (0.0, 0.0);
    for (p, t) in prediction.iter().zip(truth) {
        err2 += (p - t) * (p - t);
        ref2 += t * t;
    }
    Metrics { mse: err2 / truth.len() as f64, rel_l2: (err2 / ref2).sqrt() }
}

/// Uniform `res × res` grid over the closed unit square, row-major with rows
/// along `y` and columns along `x`.
pub fn grid(res: usize) -> Vec<(f64, f64)> {
    let step = 1.0 / (res - 1) as f64;
    let coord = |i: usize| if i == res - 1 { 1.0 } else { i as f64 * step };
    (0..res).flat_map(|i| (0..res).map(move |j| (coord(j), coord(i)))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub resolution: usize,
    pub metrics: Metrics,
    pub prediction: Vec<f64>,
    pub truth: Vec<f64>,
    pub abs_error: Vec<f64>,
}

pub fn evaluate(model: &impl Surrogate, problem: &HelmholtzProblem, resolution: usize) -> Result<Evaluation> {
    if resolution < 2 {
        return Err(Error::Config(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let pts = grid(resolution);
    let prediction = model.predict(&pts)?;
    let truth: Vec<f64> = pts.iter().map(|&(x, y)| problem.exact(x, y)).collect();
    let abs_error = prediction.iter().zip(&truth).map(|(p, t)| (p - t).abs()).collect();
    Ok(Evaluation { resolution, metrics: metrics(&prediction, &truth), prediction, truth, abs_error })
}
