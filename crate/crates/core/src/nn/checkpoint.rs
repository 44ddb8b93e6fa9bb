//! Checkpoint container and its binary file format.
//!
//! Layout: magic `MCNN`, u16 version, length-prefixed canonical text
//! (architecture plus training metadata), u32 parameter count, parameters
//! as 64-bit little-endian floats in declaration order, trailing CRC32 of
//! everything before it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::loss::Prediction;
use crate::nn::network::{LayerParams, Network};
use crate::nn::{InputShape, LayerSpec, NetworkConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCNN";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: u32,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub final_val_acc: f64,
}

impl Default for TrainMeta {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 0,
            final_train_loss: f64::NAN,
            final_val_loss: f64::NAN,
            final_val_acc: f64::NAN,
        }
    }
}

/// A trained (or initialized) network plus its training metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    network: Network,
    meta: TrainMeta,
}

impl Checkpoint {
    pub fn new(network: Network, meta: TrainMeta) -> Self {
        Self { network, meta }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &NetworkConfig {
        self.network.config()
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    /// Class probabilities for one image, inference mode.
    pub fn predict(&self, img: &GrayImage) -> Result<Prediction> {
        let batch = self.image_batch(img)?;
        let pass = self.network.forward_infer(&batch)?;
        Prediction::from_probabilities(pass.probabilities().data().to_vec())
    }

    /// Post-activation tensor `[C, H, W]` at `layer_index`, inference mode.
    pub fn activations_at(&self, img: &GrayImage, layer_index: usize) -> Result<Tensor> {
        if layer_index >= self.config().layers.len() {
            return Err(Error::IndexOutOfRange {
                index: layer_index,
                limit: self.config().layers.len(),
            });
        }
        let batch = self.image_batch(img)?;
        let pass = self.network.forward_infer(&batch)?;
        let out = pass.layer_output(layer_index)?;
        let (c, h, w) = self.network.shapes()[layer_index + 1];
        out.reshape(&[c, h, w])
    }

    fn image_batch(&self, img: &GrayImage) -> Result<Tensor> {
        let input = self.config().input;
        if img.width() != input.width || img.height() != input.height {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{}, network expects {}x{}",
                img.width(),
                img.height(),
                input.width,
                input.height
            )));
        }
        Tensor::from_vec(&[1, 1, input.height, input.width], img.data().to_vec())
    }

    /// Stable identifier of this checkpoint's exact bytes (the same CRC32
    /// the file carries as its trailing checksum).
    pub fn digest(&self) -> String {
        let encoded = self.encode();
        format!("crc32:{:08x}", crc32fast::hash(&encoded[..encoded.len() - 4]))
    }

    pub fn encode(&self) -> Vec<u8> {
        let text = canonical_text(self.config(), &self.meta);
        let params = param_values(self.network.params());
        let mut out = Vec::with_capacity(16 + text.len() + params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for v in &params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: "MCNN" });
        }
        let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let text_len = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
        let text = std::str::from_utf8(cursor.take(text_len)?)
            .map_err(|_| Error::CorruptPayload("non-utf8 config text".into()))?
            .to_string();
        let count = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let v = f64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::CorruptPayload(format!("non-finite parameter {v}")));
            }
            params.push(v);
        }
        let stored_crc = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
        if cursor.pos != bytes.len() {
            return Err(Error::CorruptPayload("trailing bytes after checksum".into()));
        }
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        if crc != stored_crc {
            return Err(Error::CorruptPayload(format!(
                "checksum mismatch: stored {stored_crc:08x}, computed {crc:08x}"
            )));
        }
        let (config, meta) = parse_canonical_text(&text)?;
        let layer_params = build_params(&config, &params)?;
        let network = Network::from_params(config, layer_params)?;
        Ok(Self { network, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes)
    }
}

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

fn canonical_text(config: &NetworkConfig, meta: &TrainMeta) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "input {} {} {}\n",
        config.input.width, config.input.height, config.input.channels
    ));
    out.push_str(&format!("classes {}\n", config.classes));
    for layer in &config.layers {
        match layer {
            LayerSpec::Conv { kernel, filters, pad, stride } => {
                out.push_str(&format!("layer conv {kernel} {filters} {pad} {stride}\n"))
            }
            LayerSpec::BatchNorm { epsilon } => {
                out.push_str(&format!("layer batch_norm {epsilon}\n"))
            }
            LayerSpec::Relu => out.push_str("layer relu\n"),
            LayerSpec::MaxPool { size, stride } => {
                out.push_str(&format!("layer max_pool {size} {stride}\n"))
            }
            LayerSpec::FullyConnected { outputs } => {
                out.push_str(&format!("layer fully_connected {outputs}\n"))
            }
            LayerSpec::Dropout { rate } => out.push_str(&format!("layer dropout {rate}\n")),
            LayerSpec::Softmax => out.push_str("layer softmax\n"),
        }
    }
    out.push_str(&format!("meta seed {}\n", meta.seed));
    out.push_str(&format!("meta epochs {}\n", meta.epochs));
    out.push_str(&format!("meta final_train_loss {}\n", meta.final_train_loss));
    out.push_str(&format!("meta final_val_loss {}\n", meta.final_val_loss));
    out.push_str(&format!("meta final_val_acc {}\n", meta.final_val_acc));
    out
}

fn parse_canonical_text(text: &str) -> Result<(NetworkConfig, TrainMeta)> {
    let bad = |line: &str| Error::CorruptPayload(format!("bad config line: {line:?}"));
    let mut input = None;
    let mut classes = None;
    let mut layers = Vec::new();
    let mut meta = TrainMeta::default();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["input", w, h, c] => {
                input = Some(InputShape {
                    width: parse(w, line)?,
                    height: parse(h, line)?,
                    channels: parse(c, line)?,
                });
            }
            ["classes", k] => classes = Some(parse(k, line)?),
            ["layer", "conv", k, f, p, s] => layers.push(LayerSpec::Conv {
                kernel: parse(k, line)?,
                filters: parse(f, line)?,
                pad: parse(p, line)?,
                stride: parse(s, line)?,
            }),
            ["layer", "batch_norm", eps] => {
                layers.push(LayerSpec::BatchNorm { epsilon: parse(eps, line)? })
            }
            ["layer", "relu"] => layers.push(LayerSpec::Relu),
            ["layer", "max_pool", size, stride] => layers.push(LayerSpec::MaxPool {
                size: parse(size, line)?,
                stride: parse(stride, line)?,
            }),
            ["layer", "fully_connected", outputs] => {
                layers.push(LayerSpec::FullyConnected { outputs: parse(outputs, line)? })
            }
            ["layer", "dropout", rate] => {
                layers.push(LayerSpec::Dropout { rate: parse(rate, line)? })
            }
            ["layer", "softmax"] => layers.push(LayerSpec::Softmax),
            ["meta", "seed", v] => meta.seed = parse(v, line)?,
            ["meta", "epochs", v] => meta.epochs = parse(v, line)?,
            ["meta", "final_train_loss", v] => meta.final_train_loss = parse_f64(v, line)?,
            ["meta", "final_val_loss", v] => meta.final_val_loss = parse_f64(v, line)?,
            ["meta", "final_val_acc", v] => meta.final_val_acc = parse_f64(v, line)?,
            [] => {}
            _ => return Err(bad(line)),
        }
    }
    let config = NetworkConfig {
        input: input.ok_or_else(|| Error::CorruptPayload("missing input line".into()))?,
        layers,
        classes: classes.ok_or_else(|| Error::CorruptPayload("missing classes line".into()))?,
    };
    Ok((config, meta))
}

fn parse<T: std::str::FromStr>(field: &str, line: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::CorruptPayload(format!("bad field {field:?} in line {line:?}")))
}

fn parse_f64(field: &str, line: &str) -> Result<f64> {
    // NaN round-trips for never-validated metadata
    if field == "NaN" {
        return Ok(f64::NAN);
    }
    parse(field, line)
}

fn param_values(params: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::new();
    for p in params {
        match p {
            LayerParams::Conv { weights, bias } | LayerParams::Fc { weights, bias } => {
                out.extend_from_slice(weights.data());
                out.extend_from_slice(bias);
            }
            LayerParams::BatchNorm { scale, shift, running_mean, running_var } => {
                out.extend_from_slice(scale);
                out.extend_from_slice(shift);
                out.extend_from_slice(running_mean);
                out.extend_from_slice(running_var);
            }
            LayerParams::None => {}
        }
    }
    out
}

fn build_params(config: &NetworkConfig, values: &[f64]) -> Result<Vec<LayerParams>> {
    let shapes = config.shape_check()?;
    let mut offset = 0usize;
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let end = offset.checked_add(n).filter(|&e| e <= values.len());
        match end {
            Some(end) => {
                let v = values[offset..end].to_vec();
                offset = end;
                Ok(v)
            }
            None => Err(Error::CorruptPayload("parameter payload too short".into())),
        }
    };
    let mut params = Vec::with_capacity(config.layers.len());
    for (i, spec) in config.layers.iter().enumerate() {
        let (in_c, in_h, in_w) = shapes[i];
        let p = match *spec {
            LayerSpec::Conv { kernel, filters, .. } => LayerParams::Conv {
                weights: Tensor::from_vec(
                    &[filters, in_c, kernel, kernel],
                    take(filters * in_c * kernel * kernel)?,
                )?,
                bias: take(filters)?,
            },
            LayerSpec::BatchNorm { .. } => LayerParams::BatchNorm {
                scale: take(in_c)?,
                shift: take(in_c)?,
                running_mean: take(in_c)?,
                running_var: take(in_c)?,
            },
            LayerSpec::FullyConnected { outputs } => LayerParams::Fc {
                weights: Tensor::from_vec(
                    &[in_c * in_h * in_w, outputs],
                    take(in_c * in_h * in_w * outputs)?,
                )?,
                bias: take(outputs)?,
            },
            _ => LayerParams::None,
        };
        params.push(p);
    }
    let expected = offset;
    if values.len() != expected {
        return Err(Error::CorruptPayload(format!(
            "parameter count {} does not match architecture ({expected})",
            values.len()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::desk_scale_config;
    use crate::rng::{stream, STREAM_INIT};

    fn small_checkpoint() -> Checkpoint {
        let config = NetworkConfig {
            input: InputShape { width: 6, height: 6, channels: 1 },
            layers: vec![
                LayerSpec::Conv { kernel: 3, filters: 2, pad: 1, stride: 1 },
                LayerSpec::BatchNorm { epsilon: 1e-5 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::FullyConnected { outputs: 3 },
                LayerSpec::Softmax,
            ],
            classes: 3,
        };
        let mut rng = stream(21, STREAM_INIT, 0);
        let network = Network::init(config, &mut rng).unwrap();
        Checkpoint::new(
            network,
            TrainMeta {
                seed: 21,
                epochs: 3,
                final_train_loss: 0.125,
                final_val_loss: 0.25,
                final_val_acc: 0.875,
            },
        )
    }

    fn test_image() -> GrayImage {
        GrayImage::from_vec(6, 6, (0..36).map(|i| (i as f64) / 36.0 - 0.5).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = small_checkpoint();
        let bytes = ckpt.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.config(), ckpt.config());
        assert_eq!(back.meta(), ckpt.meta());

        let img = test_image();
        let a = ckpt.predict(&img).unwrap();
        let b = back.predict(&img).unwrap();
        assert_eq!(a.probabilities(), b.probabilities());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = small_checkpoint().encode();
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(Checkpoint::decode(cut), Err(Error::CorruptPayload(_))));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = small_checkpoint().encode();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::CorruptPayload(_))));
    }

    #[test]
    fn bumped_version_is_rejected() {
        let mut bytes = small_checkpoint().encode();
        bytes[4] = 0x02; // version low byte
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = small_checkpoint().encode();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn zeroed_fc_gives_uniform_prediction() {
        let mut ckpt = small_checkpoint();
        if let LayerParams::Fc { weights, bias } = &mut ckpt.network.params_mut()[5] {
            weights.data_mut().fill(0.0);
            bias.fill(0.0);
        }
        let pred = ckpt.predict(&test_image()).unwrap();
        for &p in pred.probabilities() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_is_repeatable() {
        let ckpt = small_checkpoint();
        let img = test_image();
        let a = ckpt.predict(&img).unwrap();
        let b = ckpt.predict(&img).unwrap();
        assert_eq!(a.probabilities(), b.probabilities());
    }

    #[test]
    fn activations_are_non_negative_at_relu() {
        let ckpt = small_checkpoint();
        let relu_index = ckpt.config().relu_index(1).unwrap();
        let act = ckpt.activations_at(&test_image(), relu_index).unwrap();
        assert_eq!(act.shape(), &[2, 6, 6]);
        assert!(act.data().iter().all(|&v| v >= 0.0));
        assert!(ckpt.activations_at(&test_image(), 99).is_err());
    }

    #[test]
    fn full_scale_config_text_round_trips() {
        let config = desk_scale_config(0.5);
        let text = canonical_text(&config, &TrainMeta::default());
        let (back, _) = parse_canonical_text(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let ckpt = small_checkpoint();
        assert_eq!(ckpt.digest(), ckpt.digest());
        let mut other = small_checkpoint();
        if let LayerParams::Conv { bias, .. } = &mut other.network.params_mut()[0] {
            bias[0] = 1.0;
        }
        assert_ne!(ckpt.digest(), other.digest());
    }
}
