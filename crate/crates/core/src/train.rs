//! Training loop, sweeps and field export.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint::{Checkpoint, Model};
use crate::config::{ExperimentConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::export::write_fields;
use crate::network::Pinn;
use crate::optim::{AdamConfig, AdamState};
use crate::problem::{evaluate, loss, loss_and_grad, sample, Evaluation, LossBreakdown, Metrics, Samples};

/// One line of `metrics.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss_r: f64,
    pub mse: f64,
    pub rel_l2: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub rows: Vec<LogRow>,
    pub metrics: Metrics,
    pub n_theta: usize,
    pub compression: f64,
}

pub const METRICS_HEADER: &str = "iteration,lr,loss_r,mse,rel_l2,seconds";
pub const TABLE_HEADER: &str = "name,n_theta,compression,mse,rel_l2";

pub fn metrics_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e},{:e},{:.3}", r.iteration, r.lr, r.loss_r, r.mse, r.rel_l2, r.seconds).unwrap();
    }
    out
}

/// Network, optimizer and fixed collocation set of one run.
pub struct Trainer {
    config: ExperimentConfig,
    net: Pinn,
    adam: AdamState,
    samples: Samples,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let net = Pinn::init(config.network_spec()?, config.training.seed)?;
        let adam = AdamState::new(net.params(), AdamConfig::default());
        let samples = sample(&config.sampling(), &config.problem);
        Ok(Self { config, net, adam, samples, iteration: 0 })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: ExperimentConfig, checkpoint: Checkpoint) -> Result<Self> {
        let mut t = Self::new(config)?;
        let Model::Network(net) = checkpoint.model else {
            return Err(Error::Checkpoint("checkpoint holds no trainable network".into()));
        };
        if net.spec() != t.net.spec() {
            return Err(Error::Config("checkpoint architecture differs from the config".into()));
        }
        t.adam = checkpoint.optimizer.unwrap_or_else(|| AdamState::new(net.params(), AdamConfig::default()));
        t.net = net;
        t.iteration = checkpoint.iteration;
        Ok(t)
    }

    pub fn net(&self) -> &Pinn {
        &self.net
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: Model::Network(self.net.clone()),
            problem: self.config.problem,
            iteration: self.iteration,
            optimizer: Some(self.adam.clone()),
        }
    }

    pub fn loss(&self) -> Result<LossBreakdown> {
        loss(&self.net, &self.config.problem, &self.samples)
    }

    /// One full-batch Adam step. Returns the loss at the parameters before
    /// the update.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let (l, grads) = loss_and_grad(&self.net, &self.config.problem, &self.samples)?;
        if !l.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {} at iteration {}", l.total, self.iteration)));
        }
        let lr = self.config.schedule.lr_at(self.iteration);
        self.adam
            .step(self.net.params_mut(), &grads, lr)
            .map_err(|e| Error::NonFinite(format!("{e} at iteration {}", self.iteration)))?;
        self.iteration += 1;
        Ok(l)
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(&self.net, &self.config.problem, self.config.evaluation.resolution)
    }
}

/// Trains one configuration, writing `metrics.csv`, the field exports and
/// `model.ckpt` into `out`. Progress goes to `log`.
pub fn cmd_train(config: &ExperimentConfig, out: &Path, log: &mut dyn Write) -> Result<RunRecord> {
    let mut trainer = Trainer::new(config.clone())?;
    let spec = trainer.net().spec().clone();
    let n_theta = trainer.net().param_count();
    writeln!(log, "{}: n_theta = {n_theta}", config.name)?;
    std::fs::create_dir_all(out)?;
    let ckpt_path = out.join("model.ckpt");
    trainer.checkpoint().save(&ckpt_path)?;

    let start = Instant::now();
    let seconds = || if config.evaluation.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 };
    let iterations = config.training.iterations;
    let interval = config.evaluation.report_interval;
    let mut rows = Vec::new();
    let log_row = |rows: &mut Vec<LogRow>, it: usize, loss_r: f64, m: Metrics, log: &mut dyn Write| -> Result<()> {
        let row = LogRow { iteration: it, lr: config.schedule.lr_at(it), loss_r, mse: m.mse, rel_l2: m.rel_l2, seconds: seconds() };
        writeln!(log, "  iter {:>6}  lr {:.3e}  loss_r {:.4e}  mse {:.4e}  rel_l2 {:.4e}", it, row.lr, loss_r, m.mse, m.rel_l2)?;
        rows.push(row);
        Ok(())
    };

    let mut outcome = Ok(());
    for it in 0..iterations {
        let eval = if it % interval == 0 { Some(trainer.evaluate()?.metrics) } else { None };
        match trainer.step() {
            Ok(l) => {
                if let Some(m) = eval {
                    log_row(&mut rows, it, l.residual, m, log)?;
                    trainer.checkpoint().save(&ckpt_path)?;
                }
            }
            Err(e) => {
                outcome = Err(e);
                break;
            }
        }
    }
    if let Err(e) = outcome {
        std::fs::write(out.join("metrics.csv"), metrics_csv(&rows))?;
        return Err(Error::NonFinite(format!("{e}; last good checkpoint left in {}", ckpt_path.display())));
    }

    let eval = trainer.evaluate()?;
    let final_loss = trainer.loss()?;
    log_row(&mut rows, iterations, final_loss.residual, eval.metrics, log)?;
    trainer.checkpoint().save(&ckpt_path)?;
    std::fs::write(out.join("metrics.csv"), metrics_csv(&rows))?;
    write_fields(&eval, out)?;
    Ok(RunRecord {
        name: config.name.clone(),
        rows,
        metrics: eval.metrics,
        n_theta,
        compression: spec.hidden_compression(),
    })
}

/// Outcome of one sweep entry; failed runs keep their error message.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub n_theta: Option<usize>,
    pub compression: Option<f64>,
    pub result: std::result::Result<Metrics, String>,
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in rows {
        let n = r.n_theta.map_or("NA".to_string(), |n| n.to_string());
        let c = r.compression.map_or("NA".to_string(), |c| format!("{c:.4}"));
        let (mse, rel) = match &r.result {
            Ok(m) => (format!("{:e}", m.mse), format!("{:e}", m.rel_l2)),
            Err(_) => ("failed".into(), "failed".into()),
        };
        writeln!(out, "{},{n},{c},{mse},{rel}", r.name).unwrap();
    }
    out
}

/// Runs every configuration in order, each in its own subdirectory of `out`,
/// and keeps `table.csv` up to date after every run.
pub fn cmd_sweep(sweep: &SweepConfig, out: &Path, log: &mut dyn Write) -> Result<Vec<TableRow>> {
    sweep.validate()?;
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for config in &sweep.runs {
        let spec = config.network_spec().ok();
        let row = match cmd_train(config, &out.join(&config.name), log) {
            Ok(rec) => TableRow {
                name: rec.name,
                n_theta: Some(rec.n_theta),
                compression: Some(rec.compression),
                result: Ok(rec.metrics),
            },
            Err(e) => {
                writeln!(log, "{}: FAILED: {e}", config.name)?;
                TableRow {
                    name: config.name.clone(),
                    n_theta: spec.as_ref().map(|s| s.param_count()),
                    compression: spec.as_ref().map(|s| s.hidden_compression()),
                    result: Err(e.to_string()),
                }
            }
        };
        rows.push(row);
        std::fs::write(out.join("table.csv"), table_csv(&rows))?;
    }
    Ok(rows)
}

/// Evaluates a checkpoint on a `resolution`² grid and writes the field files.
pub fn cmd_export_fields(checkpoint: &Path, resolution: usize, out: &Path) -> Result<Evaluation> {
    let ck = Checkpoint::load(checkpoint)?;
    let eval = evaluate(&ck.model, &ck.problem, resolution)?;
    write_fields(&eval, out)?;
    Ok(eval)
}
