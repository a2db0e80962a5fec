//! The work behind each subcommand. Everything here returns values as well as
//! writing files so tests can drive it without a subprocess.

use std::fs;
use std::path::{Path, PathBuf};

use disentangle_core::eval::encode_dataset;
use disentangle_core::{
    ablation_reconstruction, class_similarity, head_accuracy, linear_probe, split, swap_synthesis, AblationRow, Dataset,
    Head, MetricsRow, Network, Splits, Tensor, TrainObserver, TrainState, Trainer,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::dataset_io::{load_image, save_dataset};
use crate::error::{AppError, Result};
use crate::metrics::{read_metrics, MetricsWriter};
use crate::plot;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CURVES_FILE: &str = "curves.png";
pub const REPORT_FILE: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_PLOT: &str = "ablation.png";
pub const SWAP_FILE: &str = "swap.png";
pub const DATASET_FILE: &str = "dataset.bin";

pub const REPORT_HEADER: [&str; 11] = [
    "split",
    "n_samples",
    "acc_c_exp",
    "acc_c_adv",
    "acc_c_adv_id",
    "probe_acc",
    "probe_chance",
    "probe_gap",
    "cos_same",
    "cos_cross",
    "cos_gap",
];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(format!("creating {}", dir.display()), e))
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()).map_err(|e| AppError::io(format!("writing {}", path.display()), e))
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    img.save(path)?;
    Ok(())
}

/// Loads the dataset and makes the model match its geometry.
fn prepare(cfg: &mut RunConfig) -> Result<(Dataset, Splits)> {
    let ds = cfg.load_dataset()?;
    cfg.adopt_dataset_shape(&ds);
    let parts = split(&ds, cfg.split, cfg.split_seed)?;
    Ok((ds, parts))
}

/// Renders or reads the configured dataset and writes it as a cache file.
pub fn gen_data(cfg: &RunConfig, out: Option<&Path>) -> Result<(PathBuf, Dataset)> {
    let ds = cfg.load_dataset()?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(DATASET_FILE));
    save_dataset(&ds, &path)?;
    println!("{} samples", ds.len());
    println!(
        "{} expression classes, {} identity classes, {}x{}x{} images -> {}",
        ds.n_exp_classes,
        ds.n_id_classes,
        ds.image_size,
        ds.image_size,
        ds.channels,
        path.display()
    );
    Ok((path, ds))
}

struct RunObserver {
    metrics: MetricsWriter,
    checkpoint_dir: PathBuf,
    model: disentangle_core::ModelConfig,
    train: disentangle_core::TrainConfig,
    failure: Option<AppError>,
}

impl RunObserver {
    fn stash(&mut self, r: Result<()>) -> disentangle_core::Result<()> {
        r.map_err(|e| {
            let msg = e.to_string();
            self.failure = Some(e);
            disentangle_core::Error::Input(msg)
        })
    }
}

impl TrainObserver for RunObserver {
    fn on_metrics(&mut self, row: &MetricsRow) -> disentangle_core::Result<()> {
        log::info!(
            "step {} l_exp {:.4} l_adv_exp {:.4} l_adv_en {:.4} acc_c_exp {:.3} acc_c_adv {:.3}",
            row.step,
            row.report.l_exp,
            row.report.l_adv_exp,
            row.report.l_adv_en,
            row.acc_c_exp,
            row.acc_c_adv
        );
        let r = self.metrics.append(row);
        self.stash(r)
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> disentangle_core::Result<()> {
        let ckpt = Checkpoint { model: self.model.clone(), train: self.train.clone(), state: state.clone() };
        let path = self.checkpoint_dir.join(format!("step_{:08}.ckpt", state.step));
        let r = save_checkpoint(&ckpt, &path);
        self.stash(r)
    }
}

/// Trains from scratch, or continues from `resume`, and fills the run directory.
pub fn train(mut cfg: RunConfig, resume: Option<&Path>) -> Result<Checkpoint> {
    let resumed = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            cfg.model = ckpt.model;
            cfg.train = ckpt.train;
            Some(ckpt.state)
        }
        None => None,
    };
    let (_, parts) = prepare(&mut cfg)?;
    let (trainer, mut state) = match resumed {
        Some(state) => (Trainer::new(cfg.model.clone(), cfg.train.clone())?, state),
        None => {
            cfg.validate()?;
            let trainer = Trainer::new(cfg.model.clone(), cfg.train.clone())?;
            let state = trainer.init_state();
            (trainer, state)
        }
    };
    write_config(&cfg)?;
    let out = cfg.output_dir.clone();
    let checkpoint_dir = out.join("checkpoints");
    create_dir(&checkpoint_dir)?;

    let metrics_path = out.join(METRICS_FILE);
    let metrics = match resume {
        Some(_) => MetricsWriter::resume(&metrics_path, state.step)?,
        None => MetricsWriter::create(&metrics_path)?,
    };
    let mut observer =
        RunObserver { metrics, checkpoint_dir, model: cfg.model.clone(), train: cfg.train.clone(), failure: None };
    let outcome = trainer.run(&mut state, &parts.train, &parts.val, &mut observer, None);
    if let Some(e) = observer.failure.take() {
        return Err(e);
    }
    outcome?;

    let ckpt = Checkpoint { model: cfg.model, train: cfg.train, state };
    save_checkpoint(&ckpt, &out.join(FINAL_CHECKPOINT))?;
    plot_curves(&metrics_path, &out.join(CURVES_FILE))?;
    Ok(ckpt)
}

/// One panel per metrics column after `step`.
pub fn plot_curves(metrics: &Path, out: &Path) -> Result<()> {
    let rows = read_metrics(metrics)?;
    let columns: Vec<Vec<f64>> = (1..8).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    save_png(&plot::line_panels(&columns), out)
}

/// Evaluation numbers written to `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub split: String,
    pub n_samples: usize,
    pub acc_c_exp: f64,
    pub acc_c_adv: f64,
    pub acc_c_adv_id: Option<f64>,
    pub probe_acc: f64,
    pub probe_chance: f64,
    pub probe_gap: f64,
    pub cos_same: f64,
    pub cos_cross: f64,
}

impl Report {
    fn record(&self) -> Vec<String> {
        vec![
            self.split.clone(),
            self.n_samples.to_string(),
            self.acc_c_exp.to_string(),
            self.acc_c_adv.to_string(),
            self.acc_c_adv_id.map(|v| v.to_string()).unwrap_or_default(),
            self.probe_acc.to_string(),
            self.probe_chance.to_string(),
            self.probe_gap.to_string(),
            self.cos_same.to_string(),
            self.cos_cross.to_string(),
            (self.cos_same - self.cos_cross).to_string(),
        ]
    }
}

/// Scores a checkpoint on one split (`train`, `val`, `test` or `all`) of the configured dataset.
pub fn eval(mut cfg: RunConfig, checkpoint: &Path, which: &str) -> Result<Report> {
    let ckpt = load_checkpoint(checkpoint)?;
    cfg.model = ckpt.model.clone();
    cfg.train = ckpt.train.clone();
    let (full, parts) = prepare(&mut cfg)?;
    let m = &ckpt.model;
    if (full.image_size, full.channels, full.n_exp_classes) != (m.image_size, m.channels, m.n_exp_classes) {
        return Err(AppError::Config(format!(
            "dataset has {0}x{0}x{1} images and {2} classes, checkpoint expects {3}x{3}x{4} and {5}",
            full.image_size, full.channels, full.n_exp_classes, m.image_size, m.channels, m.n_exp_classes
        )));
    }
    let ds = match which {
        "train" => parts.train,
        "val" => parts.val,
        "test" => parts.test,
        "all" => full,
        other => return Err(AppError::Config(format!("unknown split {other:?}; use train, val, test or all"))),
    };
    let net = Network::new(ckpt.model.clone())?;
    let params = &ckpt.state.params;
    let pair = encode_dataset(&net, params, &ds)?;
    let labels = ds.exp_labels();
    let probe = linear_probe(&pair.code_non_exp, &labels, &cfg.probe)?;
    let sim = class_similarity(&pair.code_exp, &labels)?;
    let report = Report {
        split: which.to_string(),
        n_samples: ds.len(),
        acc_c_exp: head_accuracy(&net, params, &ds, Head::Expression)?,
        acc_c_adv: head_accuracy(&net, params, &ds, Head::Adversary)?,
        acc_c_adv_id: match params.c_adv_id {
            Some(_) => Some(head_accuracy(&net, params, &ds, Head::IdentityAdversary)?),
            None => None,
        },
        probe_acc: probe.accuracy,
        probe_chance: probe.chance,
        probe_gap: probe.gap,
        cos_same: sim.same_class,
        cos_cross: sim.cross_class,
    };

    write_config(&cfg)?;
    let path = cfg.output_dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(REPORT_HEADER)?;
    w.write_record(report.record())?;
    w.flush().map_err(|e| AppError::io(format!("writing {}", path.display()), e))?;
    for (k, v) in REPORT_HEADER.iter().zip(report.record()) {
        println!("{k:>13}  {v}");
    }
    Ok(report)
}

/// Writes a 2 x 3 grid: each row is an input, its reconstruction, and its
/// synthesis with the other image's expression.
pub fn swap(checkpoint: &Path, image_a: &Path, image_b: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let m = &ckpt.model;
    if !m.enable_decoder {
        return Err(AppError::Config("checkpoint has no decoder; swap synthesis needs one".into()));
    }
    let shape = [1, m.image_size, m.image_size, m.channels];
    let x1 = Tensor::from_vec(&shape, load_image(image_a, m.image_size, m.channels)?)?;
    let x2 = Tensor::from_vec(&shape, load_image(image_b, m.image_size, m.channels)?)?;
    let net = Network::new(m.clone())?;
    let q = swap_synthesis(&net, &ckpt.state.params, &x1, &x2)?;
    let tiles: Vec<Vec<f64>> =
        [&q.x1, &q.x1_rec, &q.x1_swap, &q.x2, &q.x2_rec, &q.x2_swap].iter().map(|t| t.data().to_vec()).collect();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_png(&plot::tile_grid(&tiles, 3, m.image_size, m.channels, 4), out)
}

/// Trains once per reconstruction weight and writes `ablation.csv` and a bar plot.
pub fn ablate(mut cfg: RunConfig, beta1_values: &[f64]) -> Result<Vec<AblationRow>> {
    if let Some(b) = beta1_values.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(AppError::Config(format!("beta1 must be finite and non-negative, got {b}")));
    }
    let (_, parts) = prepare(&mut cfg)?;
    cfg.train.validate()?;
    cfg.ablation_beta1 = beta1_values.to_vec();
    write_config(&cfg)?;
    let rows = ablation_reconstruction(&cfg.model, &cfg.train, &parts.train, &parts.val, &parts.test, beta1_values)?;

    let path = cfg.output_dir.join(ABLATION_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["beta1", "acc_c_exp", "acc_c_adv"])?;
    for r in &rows {
        w.write_record([r.beta1.to_string(), r.acc_c_exp.to_string(), r.acc_c_adv.to_string()])?;
        println!("beta1 {:>8}  acc_c_exp {:.4}  acc_c_adv {:.4}", r.beta1, r.acc_c_exp, r.acc_c_adv);
    }
    w.flush().map_err(|e| AppError::io(format!("writing {}", path.display()), e))?;
    let bars: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.acc_c_exp, r.acc_c_adv]).collect();
    save_png(&plot::grouped_bars(&bars), &cfg.output_dir.join(ABLATION_PLOT))?;
    Ok(rows)
}
