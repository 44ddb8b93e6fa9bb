//! SGD training loop with periodic validation and CSV-able metrics.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::checkpoint::{Checkpoint, TrainMeta};
use crate::nn::loss::{cross_entropy, one_hot};
use crate::nn::network::{LayerGrads, LayerParams, Network};
use crate::nn::{NetworkConfig, TrainConfig};
use crate::rng::{stream, STREAM_DROPOUT, STREAM_INIT, STREAM_SHUFFLE, STREAM_SPLIT};
use crate::tensor::Tensor;

/// One labeled image; labels are 1-based class ids.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: GrayImage,
    pub label: u8,
}

impl Sample {
    pub fn new(image: GrayImage, label: u8) -> Self {
        Self { image, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iteration: u64,
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    /// CSV text; validation columns are empty off-schedule.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "# losses are summed cross-entropy over the batch (train) or the validation set; \
             updates apply (gradient + lambda*weight)/batch_size at the learning rate\n",
        );
        out.push_str("iteration,epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.rows {
            let val_loss = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let val_acc = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration, r.epoch, r.train_loss, r.train_acc, val_loss, val_acc
            ));
        }
        out
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.val_acc).fold(None, |acc, v| {
            Some(match acc {
                Some(best) => best.max(v),
                None => v,
            })
        })
    }

    pub fn last_val_accuracy(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_acc)
    }
}

/// Batch activations at desk scale run tens of megabytes; stop glibc from
/// returning them to the kernel between iterations, which would re-fault
/// the pages every batch.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 28);
    });
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

/// Plain SGD update: θ ← θ − η·g.
pub fn sgd_step(net: &mut Network, grads: &[LayerGrads], learning_rate: f64) {
    for (p, g) in net.params_mut().iter_mut().zip(grads) {
        match (p, g) {
            (LayerParams::Conv { weights, bias }, LayerGrads::Conv { dw, db })
            | (LayerParams::Fc { weights, bias }, LayerGrads::Fc { dw, db }) => {
                for (w, gv) in weights.data_mut().iter_mut().zip(dw) {
                    *w -= learning_rate * gv;
                }
                for (b, gv) in bias.iter_mut().zip(db) {
                    *b -= learning_rate * gv;
                }
            }
            (
                LayerParams::BatchNorm { scale, shift, .. },
                LayerGrads::BatchNorm { dscale, dshift },
            ) => {
                for (s, gv) in scale.iter_mut().zip(dscale) {
                    *s -= learning_rate * gv;
                }
                for (s, gv) in shift.iter_mut().zip(dshift) {
                    *s -= learning_rate * gv;
                }
            }
            _ => {}
        }
    }
}

fn batch_tensor(samples: &[&Sample], h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        data.extend_from_slice(s.image.data());
    }
    Tensor::from_vec(&[samples.len(), 1, h, w], data).expect("checked sample dimensions")
}

fn accuracy(probabilities: &Tensor, labels_idx: &[usize]) -> f64 {
    let k = probabilities.shape()[1];
    let mut correct = 0usize;
    for (s, &want) in labels_idx.iter().enumerate() {
        let row = &probabilities.data()[s * k..(s + 1) * k];
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        if best == want {
            correct += 1;
        }
    }
    correct as f64 / labels_idx.len().max(1) as f64
}

/// Summed cross-entropy and accuracy over a sample set, inference mode.
fn evaluate(net: &Network, samples: &[&Sample], batch_size: usize, h: usize, w: usize) -> Result<(f64, f64)> {
    let classes = net.config().classes;
    let mut loss = 0.0;
    let mut correct = 0.0;
    for chunk in samples.chunks(batch_size) {
        let batch = batch_tensor(chunk, h, w);
        let labels_idx: Vec<usize> = chunk.iter().map(|s| s.label as usize - 1).collect();
        let labels = one_hot(&labels_idx, classes)?;
        let pass = net.forward_infer(&batch)?;
        loss += cross_entropy(pass.probabilities(), &labels)?;
        correct += accuracy(pass.probabilities(), &labels_idx) * chunk.len() as f64;
    }
    Ok((loss, correct / samples.len().max(1) as f64))
}

/// Train a network on labeled images.
///
/// The dataset is split once into training and validation parts; training
/// batches are reshuffled every epoch and a trailing partial batch is
/// dropped. Validation runs every `val_frequency` iterations over the whole
/// validation split (shuffled first). All randomness derives from
/// `cfg.seed`, so a fixed seed reproduces the checkpoint bit for bit.
pub fn train(
    dataset: &[Sample],
    config: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, MetricLog)> {
    tune_allocator();
    cfg.validate()?;
    config.validate()?;
    let classes = config.classes;
    if dataset.len() < classes * 2 {
        return Err(Error::Dataset(format!(
            "need at least {} samples for {classes} classes, got {}",
            classes * 2,
            dataset.len()
        )));
    }
    let mut class_counts = vec![0usize; classes];
    for s in dataset {
        let label = s.label as usize;
        if label == 0 || label > classes {
            return Err(Error::Dataset(format!(
                "label {label} out of range 1..={classes}"
            )));
        }
        class_counts[label - 1] += 1;
        if s.image.width() != config.input.width || s.image.height() != config.input.height {
            return Err(Error::ShapeMismatch(format!(
                "sample is {}x{}, network expects {}x{}",
                s.image.width(),
                s.image.height(),
                config.input.width,
                config.input.height
            )));
        }
    }
    if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::Dataset(format!("class {} has no samples", empty + 1)));
    }

    let (h, w) = (config.input.height, config.input.width);
    let mut init_rng = stream(cfg.seed, STREAM_INIT, 0);
    let mut split_rng = stream(cfg.seed, STREAM_SPLIT, 0);
    let mut shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE, 0);
    let mut dropout_rng = stream(cfg.seed, STREAM_DROPOUT, 0);

    let mut net = Network::init(config.clone(), &mut init_rng)?;

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut split_rng);
    let n_train = ((dataset.len() as f64) * (1.0 - cfg.val_fraction)).round() as usize;
    let n_train = n_train.clamp(1, dataset.len() - 1);
    let (train_idx, val_idx) = indices.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    if cfg.batch_size > train_idx.len() {
        return Err(Error::Dataset(format!(
            "batch size {} exceeds training split of {}",
            cfg.batch_size,
            train_idx.len()
        )));
    }

    let mut log = MetricLog::default();
    let mut iteration: u64 = 0;
    let mut last_train_loss = f64::NAN;
    let lr = cfg.learning_rate / cfg.batch_size as f64;

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        for chunk in train_idx.chunks_exact(cfg.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let batch = batch_tensor(&samples, h, w);
            let labels_idx: Vec<usize> = samples.iter().map(|s| s.label as usize - 1).collect();
            let labels = one_hot(&labels_idx, classes)?;

            let pass = net.forward_train(&batch, &mut dropout_rng)?;
            let train_loss = cross_entropy(pass.probabilities(), &labels)?;
            let train_acc = accuracy(pass.probabilities(), &labels_idx);
            let grads = net.backward(&pass, &labels, cfg.l2_lambda)?;
            net.commit_batchnorm(&pass);
            sgd_step(&mut net, &grads, lr);

            iteration += 1;
            last_train_loss = train_loss;
            let mut row = MetricRow {
                iteration,
                epoch,
                train_loss,
                train_acc,
                val_loss: None,
                val_acc: None,
            };
            if iteration % cfg.val_frequency == 0 {
                val_idx.shuffle(&mut shuffle_rng);
                let val_samples: Vec<&Sample> = val_idx.iter().map(|&i| &dataset[i]).collect();
                let (vl, va) = evaluate(&net, &val_samples, cfg.batch_size, h, w)?;
                row.val_loss = Some(vl);
                row.val_acc = Some(va);
            }
            log.rows.push(row);
        }
    }

    let val_samples: Vec<&Sample> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let (final_val_loss, final_val_acc) = evaluate(&net, &val_samples, cfg.batch_size, h, w)?;
    let meta = TrainMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        final_train_loss: last_train_loss,
        final_val_loss,
        final_val_acc,
    };
    Ok((Checkpoint::new(net, meta), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InputShape, LayerSpec};
    use rand::Rng;

    fn tiny_fc_config(classes: usize) -> NetworkConfig {
        NetworkConfig {
            input: InputShape { width: 6, height: 6, channels: 1 },
            layers: vec![
                LayerSpec::FullyConnected { outputs: classes },
                LayerSpec::Softmax,
            ],
            classes,
        }
    }

    /// Two classes separated by pixel mean, plus noise.
    fn mean_separated_dataset(n_per_class: usize, seed: u64) -> Vec<Sample> {
        let mut rng = stream(seed, "dataset", 0);
        let mut out = Vec::new();
        for label in 1..=2u8 {
            let offset = if label == 1 { 0.8 } else { -0.8 };
            for _ in 0..n_per_class {
                let data: Vec<f64> =
                    (0..36).map(|_| offset + rng.gen_range(-0.3..0.3)).collect();
                out.push(Sample::new(GrayImage::from_vec(6, 6, data).unwrap(), label));
            }
        }
        out
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            learning_rate: 0.5,
            epochs: 5,
            val_fraction: 0.3,
            val_frequency: 3,
            l2_lambda: 0.0,
            dropout_rate: 0.0,
            seed: 11,
            deterministic: true,
        }
    }

    #[test]
    fn sgd_examples() {
        let config = tiny_fc_config(2);
        let mut init = stream(1, STREAM_INIT, 0);
        let mut net = Network::init(config, &mut init).unwrap();
        let before = net.learnable_vector();

        let zero_grads: Vec<LayerGrads> = vec![
            LayerGrads::Fc { dw: vec![0.0; 36 * 2], db: vec![0.0; 2] },
            LayerGrads::None,
        ];
        sgd_step(&mut net, &zero_grads, 0.01);
        assert_eq!(net.learnable_vector(), before);

        let mut theta = before.clone();
        theta.fill(1.0);
        net.set_learnable_vector(&theta).unwrap();
        let grads: Vec<LayerGrads> = vec![
            LayerGrads::Fc { dw: vec![0.5; 36 * 2], db: vec![0.5; 2] },
            LayerGrads::None,
        ];
        sgd_step(&mut net, &grads, 0.01);
        assert!(net.learnable_vector().iter().all(|&v| (v - 0.995).abs() < 1e-15));

        // two equal-gradient steps match one step at doubled rate
        net.set_learnable_vector(&theta).unwrap();
        sgd_step(&mut net, &grads, 0.01);
        sgd_step(&mut net, &grads, 0.01);
        let twice = net.learnable_vector();
        net.set_learnable_vector(&theta).unwrap();
        sgd_step(&mut net, &grads, 0.02);
        assert_eq!(net.learnable_vector(), twice);
    }

    #[test]
    fn mean_separable_dataset_trains_to_full_accuracy() {
        let dataset = mean_separated_dataset(20, 5);

        // oracle: a mean-threshold classifier already separates the classes
        for s in &dataset {
            let predicted = if s.image.mean() > 0.0 { 1 } else { 2 };
            assert_eq!(predicted, s.label);
        }

        let (ckpt, log) = train(&dataset, &tiny_fc_config(2), &quick_cfg()).unwrap();
        assert_eq!(ckpt.meta().final_val_acc, 1.0);
        assert_eq!(log.last_val_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = mean_separated_dataset(12, 9);
        let cfg = quick_cfg();
        let (a, log_a) = train(&dataset, &tiny_fc_config(2), &cfg).unwrap();
        let (b, log_b) = train(&dataset, &tiny_fc_config(2), &cfg).unwrap();
        assert_eq!(a.encode(), b.encode());
        assert_eq!(log_a.to_csv(), log_b.to_csv());
    }

    #[test]
    fn training_loss_trends_down() {
        let dataset = mean_separated_dataset(20, 6);
        let (_, log) = train(&dataset, &tiny_fc_config(2), &quick_cfg()).unwrap();
        let first = log.rows.first().unwrap().train_loss;
        let last = log.rows.last().unwrap().train_loss;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn rejects_oversized_batch() {
        let dataset = mean_separated_dataset(4, 7);
        let mut cfg = quick_cfg();
        cfg.batch_size = 50;
        assert!(matches!(
            train(&dataset, &tiny_fc_config(2), &cfg),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn rejects_empty_class_and_bad_labels() {
        let mut dataset = mean_separated_dataset(6, 8);
        dataset.retain(|s| s.label != 2);
        let err = train(&dataset, &tiny_fc_config(2), &quick_cfg());
        assert!(matches!(err, Err(Error::Dataset(_))));

        let mut dataset = mean_separated_dataset(6, 8);
        dataset[0].label = 9;
        assert!(train(&dataset, &tiny_fc_config(2), &quick_cfg()).is_err());
    }

    #[test]
    fn metric_csv_has_off_schedule_gaps() {
        let dataset = mean_separated_dataset(12, 10);
        let (_, log) = train(&dataset, &tiny_fc_config(2), &quick_cfg()).unwrap();
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], "iteration,epoch,train_loss,train_acc,val_loss,val_acc");
        // iteration 1 is off the validation schedule (frequency 3)
        assert!(lines[2].ends_with(",,"));
        let on_schedule: Vec<&&str> = lines.iter().skip(2).filter(|l| !l.ends_with(",,")).collect();
        assert!(!on_schedule.is_empty());
    }
}
