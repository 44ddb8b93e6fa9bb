//! Visual fingerprints of a test image from a trained network: the
//! strongest-activation channel and the SVD eigenfeature (first left
//! singular vector of the feature-map matrix), plus the comparative
//! statistics used to judge them — per-class mean activations,
//! dataset-mode projections, and full-vs-reduced-capacity robustness.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::{Checkpoint, LayerSpec, NetworkConfig, Sample};
use crate::pgm::{write_pgm, PgmMode};
use crate::svd::{canonical_sign, pearson, svd_via_gram, FeatureMatrix};
use crate::tensor::Tensor;

pub const FINGERPRINT_MAGIC: &[u8; 4] = b"FPRT";
pub const FINGERPRINT_VERSION: u16 = 1;

/// Reshaped, sign-canonicalized first left singular vector of the
/// feature-map matrix, with its singular-value spectrum and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    /// Test-image-sized map, rescaled to [0, 1].
    pub image: GrayImage,
    /// Full singular-value spectrum, descending.
    pub spectrum: Vec<f64>,
    /// Index into the network's layer list where the maps were taken.
    pub layer_index: usize,
    pub model_digest: String,
    /// (σ₁ − σ₂)/σ₁; near-zero gaps mark ill-conditioned fingerprints.
    pub spectral_gap: f64,
}

/// Index of the channel holding the global maximum activation; ties break
/// toward the lowest channel.
pub fn strongest_channel(activations: &Tensor) -> Result<usize> {
    let shape = activations.shape();
    if shape.len() != 3 || shape[0] == 0 {
        return Err(Error::ShapeMismatch(format!(
            "expected non-empty [C, H, W] activations, got {shape:?}"
        )));
    }
    let per_channel = shape[1] * shape[2];
    let mut best_channel = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &v) in activations.data().iter().enumerate() {
        if v > best {
            best = v;
            best_channel = i / per_channel;
        }
    }
    Ok(best_channel)
}

fn channel_image(activations: &Tensor, channel: usize) -> Result<GrayImage> {
    let shape = activations.shape();
    let (h, w) = (shape[1], shape[2]);
    let per_channel = h * w;
    let data = activations.data()[channel * per_channel..(channel + 1) * per_channel].to_vec();
    GrayImage::from_vec(w, h, data)
}

/// Strongest-activation fingerprint: the α channel's map, rescaled to
/// [0, 1] and resized to the test image's dimensions.
pub fn alpha_fingerprint(
    ckpt: &Checkpoint,
    img: &GrayImage,
    layer_index: usize,
) -> Result<GrayImage> {
    let activations = ckpt.activations_at(img, layer_index)?;
    let alpha = strongest_channel(&activations)?;
    channel_image(&activations, alpha)?
        .rescale01()
        .resize_bilinear(img.width(), img.height())
}

/// Column-per-channel matrix of the layer's feature maps, each rescaled to
/// [0, 1] and resized to the test image's dimensions before flattening.
pub fn assemble_feature_matrix(
    ckpt: &Checkpoint,
    img: &GrayImage,
    layer_index: usize,
) -> Result<FeatureMatrix> {
    let activations = ckpt.activations_at(img, layer_index)?;
    let channels = activations.shape()[0];
    let mut columns = Vec::with_capacity(channels);
    for c in 0..channels {
        let map = channel_image(&activations, c)?
            .rescale01()
            .resize_bilinear(img.width(), img.height())?;
        columns.push(map.data().to_vec());
    }
    FeatureMatrix::from_columns(&columns)
}

/// SVD eigenfeature fingerprint of `img` at `layer_index`.
///
/// A fully degenerate layer response (all singular values zero) yields a
/// zero fingerprint; a small spectral gap is recorded in the metadata, not
/// treated as an error.
pub fn eigen_fingerprint(
    ckpt: &Checkpoint,
    img: &GrayImage,
    layer_index: usize,
) -> Result<Fingerprint> {
    let x = assemble_feature_matrix(ckpt, img, layer_index)?;
    let svd = svd_via_gram(&x)?;
    let image = if svd.rank() == 0 {
        GrayImage::constant(img.width(), img.height(), 0.0)?
    } else {
        let u1 = canonical_sign(svd.u_column(0))?;
        GrayImage::from_vec(img.width(), img.height(), u1)?.rescale01()
    };
    Ok(Fingerprint {
        image,
        spectrum: svd.sigma().to_vec(),
        layer_index,
        model_digest: ckpt.digest(),
        spectral_gap: svd.spectral_gap(),
    })
}

/// Per-image mean activation at a layer, grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassActivationSeries {
    pub layer_index: usize,
    /// One (label, mean activation) entry per dataset image, dataset order.
    pub per_image: Vec<(u8, f64)>,
    /// Grand mean per class, ascending label.
    pub class_means: Vec<(u8, f64)>,
}

impl ClassActivationSeries {
    /// Class labels sorted by descending grand mean.
    pub fn descending_order(&self) -> Vec<u8> {
        let mut order = self.class_means.clone();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        order.into_iter().map(|(l, _)| l).collect()
    }
}

/// Mean post-activation value per image at `layer_index`, grouped by class.
/// With `alpha_only` the mean covers just the strongest channel of each
/// image instead of all channels.
pub fn mean_activation_per_class(
    ckpt: &Checkpoint,
    dataset: &[Sample],
    layer_index: usize,
    alpha_only: bool,
) -> Result<ClassActivationSeries> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let mut per_image = Vec::with_capacity(dataset.len());
    for s in dataset {
        let activations = ckpt.activations_at(&s.image, layer_index)?;
        let value = if alpha_only {
            let alpha = strongest_channel(&activations)?;
            channel_image(&activations, alpha)?.mean()
        } else {
            activations.data().iter().sum::<f64>() / activations.numel() as f64
        };
        per_image.push((s.label, value));
    }
    let mut labels: Vec<u8> = per_image.iter().map(|&(l, _)| l).collect();
    labels.sort_unstable();
    labels.dedup();
    let class_means = labels
        .into_iter()
        .map(|label| {
            let vs: Vec<f64> =
                per_image.iter().filter(|&&(l, _)| l == label).map(|&(_, v)| v).collect();
            (label, vs.iter().sum::<f64>() / vs.len() as f64)
        })
        .collect();
    Ok(ClassActivationSeries { layer_index, per_image, class_means })
}

pub const MODE_HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassHistogram {
    pub label: u8,
    pub counts: Vec<u32>,
}

/// Loadings of each image on the first two dataset modes, with per-class
/// histograms of the first-mode loadings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeProjection {
    /// (label, first-mode loading, second-mode loading) per image.
    pub loadings: Vec<(u8, f64, f64)>,
    /// 33 edges of 32 uniform bins spanning the first-mode loading range.
    pub bin_edges: Vec<f64>,
    pub histograms: Vec<ClassHistogram>,
}

/// Stack flattened images as matrix columns, decompose, and project every
/// column onto the first two left singular vectors.
pub fn dataset_mode_projection(images: &[GrayImage], labels: &[u8]) -> Result<ModeProjection> {
    if images.len() < 2 || images.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "need at least 2 images with matching labels, got {} images / {} labels",
            images.len(),
            labels.len()
        )));
    }
    let (w, h) = (images[0].width(), images[0].height());
    if images.iter().any(|i| i.width() != w || i.height() != h) {
        return Err(Error::ShapeMismatch("projection images differ in size".into()));
    }
    let columns: Vec<Vec<f64>> = images.iter().map(|i| i.data().to_vec()).collect();
    let x = FeatureMatrix::from_columns(&columns)?;
    let svd = svd_via_gram(&x)?;
    let u1 = if svd.rank() >= 1 {
        canonical_sign(svd.u_column(0))?
    } else {
        vec![0.0; x.rows()]
    };
    let u2 = if svd.rank() >= 2 {
        canonical_sign(svd.u_column(1))?
    } else {
        vec![0.0; x.rows()]
    };
    let loadings: Vec<(u8, f64, f64)> = columns
        .iter()
        .zip(labels)
        .map(|(col, &label)| {
            let l1: f64 = col.iter().zip(&u1).map(|(a, b)| a * b).sum();
            let l2: f64 = col.iter().zip(&u2).map(|(a, b)| a * b).sum();
            (label, l1, l2)
        })
        .collect();

    let lo = loadings.iter().map(|&(_, l, _)| l).fold(f64::INFINITY, f64::min);
    let hi = loadings.iter().map(|&(_, l, _)| l).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bin_edges: Vec<f64> = (0..=MODE_HISTOGRAM_BINS)
        .map(|i| lo + span * i as f64 / MODE_HISTOGRAM_BINS as f64)
        .collect();
    let mut class_labels: Vec<u8> = labels.to_vec();
    class_labels.sort_unstable();
    class_labels.dedup();
    let histograms = class_labels
        .into_iter()
        .map(|label| {
            let mut counts = vec![0u32; MODE_HISTOGRAM_BINS];
            for &(l, v, _) in &loadings {
                if l == label {
                    let bin = (((v - lo) / span) * MODE_HISTOGRAM_BINS as f64) as usize;
                    counts[bin.min(MODE_HISTOGRAM_BINS - 1)] += 1;
                }
            }
            ClassHistogram { label, counts }
        })
        .collect();
    Ok(ModeProjection { loadings, bin_edges, histograms })
}

/// Overfitting-control variant of an architecture: the last convolutional
/// block is removed and the first two convolutions keep half their
/// channels. The first two convolutions must have even channel counts.
pub fn reduced_capacity_config(config: &NetworkConfig) -> Result<NetworkConfig> {
    let conv_indices = config.conv_indices();
    if conv_indices.len() < 2 {
        return Err(Error::Config(format!(
            "reduced-capacity variant needs at least 2 conv blocks, found {}",
            conv_indices.len()
        )));
    }
    for &i in &conv_indices[..2] {
        if let LayerSpec::Conv { filters, .. } = config.layers[i] {
            if filters % 2 != 0 {
                return Err(Error::Config(format!(
                    "cannot halve odd channel count {filters} at layer {i}"
                )));
            }
        }
    }
    // the last conv block spans the conv layer plus the batch-norm, relu
    // and pooling layers that follow it
    let last_conv = *conv_indices.last().unwrap();
    let mut block_end = last_conv;
    while block_end + 1 < config.layers.len()
        && matches!(
            config.layers[block_end + 1],
            LayerSpec::BatchNorm { .. } | LayerSpec::Relu | LayerSpec::MaxPool { .. }
        )
    {
        block_end += 1;
    }
    let mut layers = config.layers.clone();
    layers.drain(last_conv..=block_end);
    for &i in &conv_indices[..2] {
        if i >= last_conv {
            continue;
        }
        if let LayerSpec::Conv { filters, .. } = &mut layers[i] {
            *filters /= 2;
        }
    }
    let reduced = NetworkConfig { input: config.input, layers, classes: config.classes };
    reduced.shape_check()?;
    Ok(reduced)
}

/// Pearson correlation between the eigen fingerprints two checkpoints
/// produce for the same test image at the same layer index.
pub fn robustness_compare(
    ckpt_a: &Checkpoint,
    ckpt_b: &Checkpoint,
    img: &GrayImage,
    layer_index: usize,
) -> Result<f64> {
    let a = eigen_fingerprint(ckpt_a, img, layer_index)?;
    let b = eigen_fingerprint(ckpt_b, img, layer_index)?;
    pearson(a.image.data(), b.image.data())
}

// ---- fingerprint file format ----

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::CorruptPayload(format!(
                "truncated file: wanted {n} bytes at offset {}",
                self.pos
            ))),
        }
    }
}

pub fn encode_fingerprint(fp: &Fingerprint) -> Vec<u8> {
    let meta = format!(
        "layer_index {}\nmodel_digest {}\nspectral_gap {}\n",
        fp.layer_index, fp.model_digest, fp.spectral_gap
    );
    let mut out = Vec::new();
    out.extend_from_slice(FINGERPRINT_MAGIC);
    out.extend_from_slice(&FINGERPRINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(fp.image.width() as u32).to_le_bytes());
    out.extend_from_slice(&(fp.image.height() as u32).to_le_bytes());
    out.extend_from_slice(&(fp.spectrum.len() as u32).to_le_bytes());
    for v in fp.image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &fp.spectrum {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_fingerprint(bytes: &[u8]) -> Result<Fingerprint> {
    let mut cursor = Cursor { bytes, pos: 0 };
    if cursor.take(4)? != FINGERPRINT_MAGIC {
        return Err(Error::BadMagic { expected: "FPRT" });
    }
    let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
    if version != FINGERPRINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FINGERPRINT_VERSION });
    }
    let width = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
    let spectrum_len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
    let mut image_data = Vec::with_capacity(width * height);
    for _ in 0..width.checked_mul(height).ok_or_else(|| Error::CorruptPayload("size overflow".into()))? {
        image_data.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
    }
    let mut spectrum = Vec::with_capacity(spectrum_len);
    for _ in 0..spectrum_len {
        spectrum.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
    }
    let meta_len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
    let meta = std::str::from_utf8(cursor.take(meta_len)?)
        .map_err(|_| Error::CorruptPayload("non-utf8 metadata".into()))?
        .to_string();
    let stored_crc = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    if cursor.pos != bytes.len() {
        return Err(Error::CorruptPayload("trailing bytes after checksum".into()));
    }
    if crc32fast::hash(&bytes[..bytes.len() - 4]) != stored_crc {
        return Err(Error::CorruptPayload("checksum mismatch".into()));
    }

    let mut layer_index = 0usize;
    let mut model_digest = String::new();
    let mut spectral_gap = 0.0f64;
    for line in meta.lines() {
        match line.split_once(' ') {
            Some(("layer_index", v)) => {
                layer_index = v
                    .parse()
                    .map_err(|_| Error::CorruptPayload(format!("bad layer_index {v:?}")))?
            }
            Some(("model_digest", v)) => model_digest = v.to_string(),
            Some(("spectral_gap", v)) => {
                spectral_gap = v
                    .parse()
                    .map_err(|_| Error::CorruptPayload(format!("bad spectral_gap {v:?}")))?
            }
            _ => return Err(Error::CorruptPayload(format!("bad metadata line {line:?}"))),
        }
    }
    Ok(Fingerprint {
        image: GrayImage::from_vec(width, height, image_data)?,
        spectrum,
        layer_index,
        model_digest,
        spectral_gap,
    })
}

/// Write the binary fingerprint plus a contrast-stretched PGM rendering
/// (1% tails saturated) alongside it. Returns the rendering's path.
pub fn save_fingerprint(fp: &Fingerprint, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    fs::write(path, encode_fingerprint(fp))?;
    let rendering = path.with_extension("pgm");
    let stretched = fp.image.contrast_stretch(0.01, 0.01)?.map(|v| v * 255.0);
    write_pgm(&stretched, &rendering, PgmMode::Binary)?;
    Ok(rendering)
}

pub fn load_fingerprint(path: impl AsRef<Path>) -> Result<Fingerprint> {
    decode_fingerprint(&fs::read(path)?)
}
