use std::fs::{self, File};
use std::io::BufWriter;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{mode_label, LayerKind, Model, NnError, OptimizerState};
use crate::precision::{mixed_step, NumberFormat};

use super::config::TrainConfig;
use super::metrics::{MetricsRecord, MetricsWriter};
use super::mnist::{load_splits, Dataset};
use super::HarnessError;

/// Result of a completed run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub label: String,
    pub records: Vec<MetricsRecord>,
    pub model: Model,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.test_accuracy)
    }
}

/// Label of a run: the layer-mode label, marked when multiplies are bf16.
pub fn run_label(config: &TrainConfig) -> String {
    let label = mode_label(&config.layers);
    match config.precision.multiply_format {
        NumberFormat::Fp32 => label,
        NumberFormat::Bf16 if label == "baseline(FP32)" => "baseline(BF16)".to_string(),
        NumberFormat::Bf16 => format!("{label}@bf16"),
    }
}

/// Loads the configured MNIST splits and trains on them, appending one
/// record per epoch to `config.metrics_out` and saving the final model to
/// `config.model_out` when set.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    config.check_data()?;
    let (mut train_set, mut test_set) = load_splits(&config.data.dir)?;
    if let Some(n) = config.data.train_limit {
        train_set = train_set.truncate(n);
    }
    if let Some(n) = config.data.test_limit {
        test_set = test_set.truncate(n);
    }
    let mut writer = config.metrics_out.as_ref().map(MetricsWriter::append).transpose()?;
    let outcome = train_on(config, &train_set, &test_set, |r| match writer.as_mut() {
        Some(w) => w.write(r),
        None => Ok(()),
    })?;
    if let Some(path) = &config.model_out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        outcome.model.save(BufWriter::new(File::create(path)?))?;
    }
    Ok(outcome)
}

/// Trains on in-memory data. Everything random (initialization, then the
/// per-epoch shuffles) derives from `config.seed`, so identical inputs give
/// bit-identical weights and records apart from wall-clock time.
pub fn train_on(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<(), HarnessError>,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(HarnessError::Config("empty training set".into()));
    }
    let label = run_label(config);
    let mut model = Model::new(config.layers.clone(), config.input_shape.clone(), config.seed)?;
    model.set_gamma_multiplier(config.gamma_multiplier);
    let mut optimizer = OptimizerState::new(config.optimizer);
    let has_batchnorm = config.layers.iter().any(|l| matches!(l.kind, LayerKind::BatchNorm { .. }));

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let start = Instant::now();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            if has_batchnorm && idx.len() < 2 {
                continue;
            }
            let x = train_set.images.gather_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let loss = match mixed_step(&mut model, &x, &y, &mut optimizer, &config.precision) {
                Ok(loss) => loss,
                Err(NnError::NonFiniteLoss(loss)) => {
                    return Err(HarnessError::Diverged { label, epoch, step: step + 1, loss })
                }
                Err(e) => return Err(e.into()),
            };
            step += 1;
            batches += 1;
            loss_sum += loss as f64;
        }
        let test_accuracy = model.accuracy(&test_set.images, &test_set.labels, config.eval_batch_size, &config.precision)?;
        let record = MetricsRecord {
            label: label.clone(),
            seed: config.seed,
            epoch,
            step,
            train_loss: loss_sum / batches.max(1) as f64,
            test_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} seed {} epoch {}/{}: loss {:.4}, test accuracy {:.4} ({:.1}s)",
            record.label,
            record.seed,
            epoch,
            config.epochs,
            record.train_loss,
            record.test_accuracy,
            record.wall_seconds
        );
        on_record(&record)?;
        records.push(record);
    }
    Ok(TrainOutcome { label, records, model })
}
