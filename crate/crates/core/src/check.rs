//! Self-verification suites shared by the `check` command and the tests.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SweepConfig;
use crate::error::{Error, Result};
use crate::network::{MlpSpec, Pinn};
use crate::params::ParamId;
use crate::problem::{loss, loss_and_grad, residual, ExactSolution, HelmholtzProblem, PdeOperator, Samples};
use crate::tensor::DenseTensor;
use crate::tt::{plan_ranks, tt_init_with, TtLinear, TtShape};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub suites: Vec<SuiteResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(f, "{} {:<12} {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub seed: u64,
    pub matvec_cases: usize,
    pub residual_points: usize,
    pub jet_points: usize,
    /// Replaces one core of the first TT case with a wrongly shaped tensor.
    pub corrupt_core: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { seed: 0, matvec_cases: 200, residual_points: 10_000, jet_points: 1000, corrupt_core: false }
    }
}

impl CheckConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random TT layer with `d ∈ {2,3,4}`, factors in `1..=4`, internal ranks
/// in `1..=8` and a zero bias.
pub fn random_tt_layer(rng: &mut ChaCha8Rng) -> TtLinear {
    let d = rng.random_range(2..=4);
    let mut f = || (0..d).map(|_| rng.random_range(1..=4)).collect::<Vec<usize>>();
    let (rows, cols) = (f(), f());
    let mut ranks = vec![1];
    ranks.extend((1..2 * d).map(|_| rng.random_range(1..=8)));
    ranks.push(1);
    let shape = TtShape::new(rows, cols, ranks).expect("valid random shape");
    tt_init_with(&shape, rng)
}

/// Largest `|tt_matvec(z) - W z|` with `W` rebuilt densely from the cores.
pub fn matvec_discrepancy(layer: &TtLinear, z: &[f64]) -> Result<f64> {
    let fast = layer.matvec(z)?;
    let w = layer.dense_matrix()?;
    let (m, n) = (layer.rows(), layer.cols());
    let mut worst = 0.0f64;
    for i in 0..m {
        let slow: f64 = (0..n).map(|j| w[i * n + j] * z[j]).sum::<f64>() + layer.bias[i];
        worst = worst.max((fast[i] - slow).abs());
    }
    Ok(worst)
}

pub fn tt_matvec_suite(cases: usize, seed: u64, corrupt_core: bool) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut layer = random_tt_layer(&mut rng);
        if corrupt_core && case == 0 {
            let [a, b, c] = layer.shape.core_shape(1);
            layer.cores[1] = DenseTensor::zeros(&[a + 1, b, c]).expect("shape is valid");
        }
        let z: Vec<f64> = (0..layer.cols()).map(|_| gaussian(&mut rng)).collect();
        match matvec_discrepancy(&layer, &z) {
            Ok(e) => worst = worst.max(e),
            Err(e) => {
                return SuiteResult { name: "tt-matvec", passed: false, detail: format!("case {case}: {e}") };
            }
        }
    }
    SuiteResult {
        name: "tt-matvec",
        passed: worst <= 1e-10,
        detail: format!("{cases} random layers, max |tt - dense| = {worst:.2e} (tol 1e-10)"),
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares tape gradients with central differences of the full loss.
/// Each parameter array is scored by `‖g - fd‖₂ / ‖fd‖₂`; the worst array is
/// reported.
pub fn gradient_check(net: &Pinn, op: &impl PdeOperator, samples: &Samples, h: f64) -> Result<GradientCheck> {
    let (_, grads) = loss_and_grad(net, op, samples)?;
    let mut probe = net.clone();
    let mut worst = GradientCheck { max_rel: 0.0, param: String::new(), entries: 0 };
    for id in (0..net.params().len()).map(ParamId) {
        let (mut err2, mut ref2) = (0.0, 0.0);
        for j in 0..net.params().data(id).len() {
            let orig = net.params().data(id)[j];
            let mut at = |v: f64| -> Result<f64> {
                probe.params_mut().get_mut(id)?.data[j] = v;
                Ok(loss(&probe, op, samples)?.total)
            };
            let fd = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
            at(orig)?;
            err2 += (grads.get(id)[j] - fd).powi(2);
            ref2 += fd * fd;
            worst.entries += 1;
        }
        let rel = if ref2 > 0.0 { (err2 / ref2).sqrt() } else { err2.sqrt() };
        if rel > worst.max_rel || rel.is_nan() {
            worst.max_rel = rel;
            worst.param = net.params().get(id)?.name.clone();
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel: f64,
    /// Array with the largest error.
    pub param: String,
    pub entries: usize,
}

fn interior(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95))).collect()
}

pub fn gradient_suite(seed: u64) -> SuiteResult {
    let run = || -> Result<Vec<(String, GradientCheck)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = HelmholtzProblem::benchmark();
        let samples = Samples { residual: interior(&mut rng, 6), ..Samples::default() };
        let tt = TtShape::uniform(vec![4, 4], vec![4, 4], 2)?;
        let nets = [
            ("dense 2x8", MlpSpec::dense(8, 2)),
            ("dense 2x16", MlpSpec::dense(16, 2)),
            ("tt 2x16", MlpSpec::tt(tt, 2)),
        ];
        nets.into_iter()
            .map(|(name, spec)| {
                let net = Pinn::init(spec, seed)?;
                Ok((name.to_string(), gradient_check(&net, &problem, &samples, 1e-6)?))
            })
            .collect()
    };
    match run() {
        Ok(checks) => {
            let worst = checks.iter().map(|(_, c)| c.max_rel).fold(0.0, f64::max);
            let detail = checks
                .iter()
                .map(|(n, c)| format!("{n}: {:.1e} ({}) over {} entries", c.max_rel, c.param, c.entries))
                .collect::<Vec<_>>()
                .join("; ");
            SuiteResult { name: "gradient", passed: worst <= 1e-5, detail: format!("{detail} (tol 1e-5)") }
        }
        Err(e) => SuiteResult { name: "gradient", passed: false, detail: e.to_string() },
    }
}

pub fn residual_suite(points: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = HelmholtzProblem::benchmark();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let pt = (rng.random_range(f64::EPSILON..1.0), rng.random_range(f64::EPSILON..1.0));
        match residual(&ExactSolution(p), &p, pt) {
            Ok(r) => worst = worst.max(r.abs()),
            Err(e) => return SuiteResult { name: "residual", passed: false, detail: e.to_string() },
        }
    }
    SuiteResult {
        name: "residual",
        passed: worst <= 1e-8,
        detail: format!("exact solution at {points} interior points, max |r| = {worst:.2e} (tol 1e-8)"),
    }
}

/// Worst relative error of `u_x, u_y, u_xx, u_yy` against fourth-order
/// central differences (`h = 1e-3`) of the value channel, with relative
/// errors measured against `max(|a|, |b|, 1e-3)`.
pub fn jet_fd_error(net: &Pinn, points: &[(f64, f64)]) -> Result<f64> {
    const H: f64 = 1e-3;
    let offsets = [-2.0, -1.0, 1.0, 2.0];
    let mut stencil = Vec::with_capacity(points.len() * 8);
    for &(x, y) in points {
        stencil.extend(offsets.iter().map(|o| (x + o * H, y)));
        stencil.extend(offsets.iter().map(|o| (x, y + o * H)));
    }
    let values: Vec<f64> = net.solution_batch(&stencil)?.iter().map(|j| j.v).collect();
    let jets = net.solution_batch(points)?;
    let mut worst = 0.0f64;
    for (p, jet) in jets.iter().enumerate() {
        for (axis, (d1, d2)) in [(jet.dx, jet.dxx), (jet.dy, jet.dyy)].into_iter().enumerate() {
            let f = &values[p * 8 + axis * 4..p * 8 + axis * 4 + 4];
            let fd1 = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * H);
            let fd2 = (-f[0] + 16.0 * f[1] - 30.0 * jet.v + 16.0 * f[2] - f[3]) / (12.0 * H * H);
            worst = worst.max(relative_error(d1, fd1, 1e-3)).max(relative_error(d2, fd2, 1e-3));
        }
    }
    Ok(worst)
}

pub fn jet_suite(points: usize, seed: u64) -> SuiteResult {
    let run = || -> Result<Vec<(&'static str, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = interior(&mut rng, points);
        let tt = TtShape::uniform(vec![4, 4], vec![4, 4], 3)?;
        [("dense 2x16", MlpSpec::dense(16, 2)), ("tt 2x16", MlpSpec::tt(tt, 2))]
            .into_iter()
            .map(|(name, spec)| Ok((name, jet_fd_error(&Pinn::init(spec, seed)?, &pts)?)))
            .collect()
    };
    match run() {
        Ok(errs) => {
            let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
            let detail = errs.iter().map(|(n, e)| format!("{n}: {e:.1e}")).collect::<Vec<_>>().join("; ");
            SuiteResult {
                name: "jets",
                passed: worst <= 1e-4,
                detail: format!("u_x, u_y, u_xx, u_yy at {points} points, {detail} (tol 1e-4)"),
            }
        }
        Err(e) => SuiteResult { name: "jets", passed: false, detail: e.to_string() },
    }
}

/// Parameter totals of the reference architectures and the 40x rank plan.
pub fn param_count_suite() -> SuiteResult {
    let run = || -> Result<Vec<String>> {
        let mut failures = Vec::new();
        let mut expect = |what: String, got: usize, want: usize| {
            if got != want {
                failures.push(format!("{what}: {got} != {want}"));
            }
        };
        let presets = SweepConfig::dense_widths().runs.into_iter().chain(SweepConfig::tt_compressions().runs);
        for (config, want) in presets.zip([3297, 12737, 50049, 198401, 3713, 6593, 12449]) {
            let spec = config.network_spec()?;
            expect(format!("{} total", config.name), spec.param_count(), want);
            expect(format!("{} store", config.name), Pinn::init(spec, 0)?.params().element_count(), want);
        }
        let f = [4usize; 4];
        let plan = plan_ranks(256, 256, &f, &f, 40.0)?;
        expect("40x layer weights".into(), plan.per_layer_params, 1600);
        if plan.chosen_ranks != [1, 8, 8, 8, 8, 8, 8, 8, 1] {
            return Err(Error::Config(format!("40x plan chose ranks {:?}", plan.chosen_ranks)));
        }
        Ok(failures)
    };
    match run() {
        Ok(f) if f.is_empty() => SuiteResult {
            name: "param-count",
            passed: true,
            detail: "totals 3297/12737/50049/198401 and 3713/6593/12449; 40x plan (1,8,...,8,1) = 1600 weights".into(),
        },
        Ok(f) => SuiteResult { name: "param-count", passed: false, detail: f.join("; ") },
        Err(e) => SuiteResult { name: "param-count", passed: false, detail: e.to_string() },
    }
}

pub fn cmd_check(config: &CheckConfig) -> CheckReport {
    CheckReport {
        suites: vec![
            tt_matvec_suite(config.matvec_cases, config.seed, config.corrupt_core),
            gradient_suite(config.seed),
            jet_suite(config.jet_points, config.seed),
            residual_suite(config.residual_points, config.seed),
            param_count_suite(),
        ],
    }
}
