//! Subcommand implementations wiring the library into the end-to-end
//! pipeline: generate, preprocess, train, fingerprint, stats, compare.

use std::fs;
use std::path::{Path, PathBuf};

use eigenprint_core::fingerprint::{
    alpha_fingerprint, dataset_mode_projection, eigen_fingerprint, mean_activation_per_class,
    reduced_capacity_config, save_fingerprint, Fingerprint,
};
use eigenprint_core::gradient::gradient_module_image;
use eigenprint_core::image::GrayImage;
use eigenprint_core::nn::{train, Checkpoint, Sample};
use eigenprint_core::pgm::{read_pgm, write_pgm, PgmMode};
use eigenprint_core::stats::{compute_statistics, report_csv};
use eigenprint_core::svd::pearson;
use eigenprint_core::synth::{gen_dataset, DatasetManifest, ManifestEntry};
use eigenprint_core::{Error, Result};

use crate::config::RunConfig;

pub fn cmd_gen_data(config: &RunConfig) -> Result<()> {
    let gen = &config.generator;
    let manifest = gen_dataset(&gen.specs, gen.n_per_class, gen.size, config.seed, &config.data_dir)?;
    let path = config.data_dir.join("manifest.json");
    manifest.save(&path)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!("manifest: {}", path.display());
    println!("images: {}", manifest.entries.len());
    Ok(())
}

/// Gradient counterpart of a dataset: |∇Y| per image, rescaled onto 0-255
/// for PGM storage, plus a derived manifest recording the method.
pub fn cmd_preprocess(config: &RunConfig) -> Result<()> {
    let manifest = DatasetManifest::load(config.data_dir.join("manifest.json"))?;
    let out_dir = gradient_dir(config);
    fs::create_dir_all(&out_dir)?;
    let mut derived = DatasetManifest {
        version: manifest.version,
        seed: manifest.seed,
        method: Some(config.gradient_method.name().to_string()),
        warnings: Vec::new(),
        entries: Vec::new(),
    };
    for e in &manifest.entries {
        let img = read_pgm(config.data_dir.join(&e.path))?;
        let grad = gradient_module_image(&img, config.gradient_method)?;
        let stored = grad.rescale01().map(|v| v * 255.0);
        write_pgm(&stored, out_dir.join(&e.path), PgmMode::Binary)?;
        derived.entries.push(ManifestEntry {
            path: e.path.clone(),
            label: e.label,
            seed: e.seed,
            split: e.split.clone(),
        });
    }
    let path = out_dir.join("manifest.json");
    derived.save(&path)?;
    println!("manifest: {}", path.display());
    println!("method: {}", config.gradient_method.name());
    Ok(())
}

pub fn cmd_train(config: &RunConfig, reduced: bool) -> Result<()> {
    let dataset = load_training_set(config)?;
    let mut train_cfg = config.train_config();
    let network = if reduced {
        // the reduced-capacity control trains with smaller batches
        train_cfg.batch_size = 32;
        reduced_capacity_config(&config.network)?
    } else {
        config.network.clone()
    };
    let (ckpt, log) = train(&dataset, &network, &train_cfg)?;
    fs::create_dir_all(&config.out_dir)?;
    let suffix = if reduced { "_reduced" } else { "" };
    let ckpt_path = config.out_dir.join(format!("checkpoint{suffix}.mcnn"));
    let metrics_path = config.out_dir.join(format!("metrics{suffix}.csv"));
    ckpt.save(&ckpt_path)?;
    fs::write(&metrics_path, log.to_csv())?;
    println!("checkpoint: {}", ckpt_path.display());
    println!("metrics: {}", metrics_path.display());
    println!("final_val_acc: {}", ckpt.meta().final_val_acc);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FingerprintMethod {
    Alpha,
    Eigen,
    Both,
}

impl std::str::FromStr for FingerprintMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "eigen" => Ok(Self::Eigen),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!(
                "unknown fingerprint method {other:?} (expected alpha|eigen|both)"
            ))),
        }
    }
}

pub fn cmd_fingerprint(
    config: &RunConfig,
    image_path: &Path,
    method: FingerprintMethod,
    checkpoint: Option<&Path>,
) -> Result<()> {
    let ckpt_path = checkpoint
        .map(PathBuf::from)
        .unwrap_or_else(|| config.out_dir.join("checkpoint.mcnn"));
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let layer_index = ckpt.config().relu_index(config.fingerprint_relu)?;
    let img = read_pgm(image_path)?.zero_center_normalize()?;
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    fs::create_dir_all(&config.out_dir)?;

    let mut alpha_map = None;
    let mut eigen_map = None;
    if matches!(method, FingerprintMethod::Alpha | FingerprintMethod::Both) {
        let map = alpha_fingerprint(&ckpt, &img, layer_index)?;
        let fp = Fingerprint {
            image: map.clone(),
            spectrum: Vec::new(),
            layer_index,
            model_digest: ckpt.digest(),
            spectral_gap: 0.0,
        };
        let path = config.out_dir.join(format!("fingerprint_{stem}_alpha.fprt"));
        let rendering = save_fingerprint(&fp, &path)?;
        println!("alpha: {} ({})", path.display(), rendering.display());
        alpha_map = Some(map);
    }
    if matches!(method, FingerprintMethod::Eigen | FingerprintMethod::Both) {
        let fp = eigen_fingerprint(&ckpt, &img, layer_index)?;
        let path = config.out_dir.join(format!("fingerprint_{stem}_eigen.fprt"));
        let rendering = save_fingerprint(&fp, &path)?;
        println!("eigen: {} ({})", path.display(), rendering.display());
        println!("spectral_gap: {}", fp.spectral_gap);
        eigen_map = Some(fp.image);
    }
    if let (Some(a), Some(e)) = (&alpha_map, &eigen_map) {
        println!("pearson_alpha_eigen: {}", pearson(a.data(), e.data())?);
    }
    Ok(())
}

pub fn cmd_stats(config: &RunConfig, checkpoint: Option<&Path>, modes: bool) -> Result<()> {
    let manifest = DatasetManifest::load(config.data_dir.join("manifest.json"))?;
    let stats = compute_statistics(&manifest, &config.data_dir, config.gradient_method)?;
    let mut csv = report_csv(&stats);

    if let Some(ckpt_path) = checkpoint {
        let ckpt = Checkpoint::load(ckpt_path)?;
        let layer_index = ckpt.config().relu_index(config.fingerprint_relu)?;
        let dataset = load_training_images(config, false)?;
        let series = mean_activation_per_class(&ckpt, &dataset, layer_index, false)?;
        csv.push_str(&format!("# activations: layer {layer_index}, class,mean_activation\n"));
        for (label, mean) in &series.class_means {
            csv.push_str(&format!("# {label},{mean}\n"));
        }
    }

    fs::create_dir_all(&config.out_dir)?;
    let report_path = config.out_dir.join("stats.csv");
    fs::write(&report_path, &csv)?;
    println!("report: {}", report_path.display());
    println!(
        "gradient_order: {}",
        stats.gradient_order().iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
    );

    if modes {
        let gradient_manifest = DatasetManifest::load(gradient_dir(config).join("manifest.json"))?;
        let pairs = gradient_manifest.load_images(&gradient_dir(config))?;
        let images: Vec<GrayImage> = pairs.iter().map(|(i, _)| i.clone()).collect();
        let labels: Vec<u8> = pairs.iter().map(|&(_, l)| l).collect();
        let projection = dataset_mode_projection(&images, &labels)?;
        let mut out = String::from("label,mode1,mode2\n");
        for (label, l1, l2) in &projection.loadings {
            out.push_str(&format!("{label},{l1},{l2}\n"));
        }
        out.push_str("# histogram: class then 32 bin counts over the first-mode range\n");
        out.push_str(&format!(
            "# bin_edges,{}\n",
            projection.bin_edges.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        ));
        for h in &projection.histograms {
            out.push_str(&format!(
                "# {},{}\n",
                h.label,
                h.counts.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        let modes_path = config.out_dir.join("modes.csv");
        fs::write(&modes_path, out)?;
        println!("modes: {}", modes_path.display());
    }
    Ok(())
}

pub fn cmd_compare(config: &RunConfig, ckpt_a: &Path, ckpt_b: &Path, image: &Path) -> Result<()> {
    let a = Checkpoint::load(ckpt_a)?;
    let b = Checkpoint::load(ckpt_b)?;
    let img = read_pgm(image)?.zero_center_normalize()?;
    let layer_a = a.config().relu_index(config.fingerprint_relu)?;
    let layer_b = b.config().relu_index(config.fingerprint_relu)?;
    let fp_a = eigen_fingerprint(&a, &img, layer_a)?;
    let fp_b = eigen_fingerprint(&b, &img, layer_b)?;
    fs::create_dir_all(&config.out_dir)?;
    let stem = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    save_fingerprint(&fp_a, config.out_dir.join(format!("compare_{stem}_a.fprt")))?;
    save_fingerprint(&fp_b, config.out_dir.join(format!("compare_{stem}_b.fprt")))?;
    let r = pearson(fp_a.image.data(), fp_b.image.data())?;
    println!("pearson: {r}");
    Ok(())
}

fn gradient_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.join("gradient")
}

/// Gradient images as labeled, normalized samples; augmentation per config.
fn load_training_set(config: &RunConfig) -> Result<Vec<Sample>> {
    load_training_images(config, config.augment)
}

fn load_training_images(config: &RunConfig, augment: bool) -> Result<Vec<Sample>> {
    let dir = gradient_dir(config);
    let manifest = DatasetManifest::load(dir.join("manifest.json"))?;
    let mut out = Vec::new();
    for (img, label) in manifest.load_images(&dir)? {
        if augment {
            for aug in img.augment() {
                out.push(Sample::new(aug.zero_center_normalize()?, label));
            }
        } else {
            out.push(Sample::new(img.zero_center_normalize()?, label));
        }
    }
    Ok(out)
}
