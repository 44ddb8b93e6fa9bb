//! Texture fingerprinting of grayscale images: robust gradient
//! preprocessing, a small from-scratch CNN for material-like texture
//! classification, and extraction of a visual fingerprint as the first
//! left singular vector of the early-layer feature-map matrix.

pub mod error;
pub mod fingerprint;
pub mod gradient;
pub mod image;
pub mod nn;
pub mod pgm;
pub mod rng;
pub mod stats;
pub mod svd;
pub mod synth;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use gradient::{
    gradient, gradient_forward, gradient_magnitude, gradient_module_image, gradient_prewitt,
    gradient_sobel, mask_convolve, mean_gradient_module, mean_intensity, total_variation,
    Boundary, GradientMethod, GradientPair, Mask3x3, PREWITT_X, PREWITT_Y, SOBEL_X, SOBEL_Y,
};
pub use fingerprint::{
    alpha_fingerprint, assemble_feature_matrix, dataset_mode_projection, eigen_fingerprint,
    load_fingerprint, mean_activation_per_class, reduced_capacity_config, robustness_compare,
    save_fingerprint, strongest_channel, ClassActivationSeries, Fingerprint, ModeProjection,
};
pub use image::GrayImage;
pub use nn::{
    desk_scale_config, full_scale_config, output_size, Checkpoint, LayerSpec, MetricLog,
    Network, NetworkConfig, Prediction, Sample, TrainConfig, TrainMeta,
};
pub use pgm::{read_pgm, write_pgm, PgmMode};
pub use stats::{compute_statistics, write_report, SliceStatistics};
pub use svd::{
    canonical_sign, gram, jacobi_eigh, pearson, rank1_column, svd_via_gram, truncate,
    FeatureMatrix, SvdResult,
};
pub use synth::{
    default_class_specs, gen_dataset, gen_field, verify_ordering, ClassSpec, DatasetManifest,
};
pub use tensor::Tensor;
