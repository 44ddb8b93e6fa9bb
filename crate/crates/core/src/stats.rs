//! Per-image and per-class statistics of a dataset: mean intensity, mean
//! gradient module, total variation, with CSV reporting.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gradient::{mean_gradient_module, mean_intensity, total_variation, GradientMethod};
use crate::pgm::read_pgm;
use crate::synth::DatasetManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageStat {
    pub image_id: String,
    pub label: u8,
    pub mean_intensity: f64,
    pub mean_grad: f64,
    pub tv: f64,
}

/// Mean and sample standard deviation of one quantity within a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAggregate {
    pub label: u8,
    pub count: usize,
    pub mean_intensity: Aggregate,
    pub mean_grad: Aggregate,
    pub tv: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceStatistics {
    pub method: GradientMethod,
    pub records: Vec<ImageStat>,
    pub aggregates: Vec<ClassAggregate>,
}

impl SliceStatistics {
    /// Class labels by descending mean gradient module.
    pub fn gradient_order(&self) -> Vec<u8> {
        let mut order: Vec<(u8, f64)> =
            self.aggregates.iter().map(|a| (a.label, a.mean_grad.mean)).collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        order.into_iter().map(|(l, _)| l).collect()
    }
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, std }
}

/// One record per manifest image plus per-class aggregates, in manifest
/// order; deterministic for a fixed manifest.
pub fn compute_statistics(
    manifest: &DatasetManifest,
    dir: &Path,
    method: GradientMethod,
) -> Result<SliceStatistics> {
    if manifest.entries.is_empty() {
        return Err(Error::Dataset("manifest has no entries".into()));
    }
    let mut records = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let img = read_pgm(dir.join(&e.path))?;
        records.push(ImageStat {
            image_id: e.path.clone(),
            label: e.label,
            mean_intensity: mean_intensity(&img),
            mean_grad: mean_gradient_module(&img, method)?,
            tv: total_variation(&img, method)?,
        });
    }
    Ok(SliceStatistics { method, aggregates: aggregates_of(&records), records })
}

fn aggregates_of(records: &[ImageStat]) -> Vec<ClassAggregate> {
    let mut labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .map(|label| {
            let class: Vec<&ImageStat> = records.iter().filter(|r| r.label == label).collect();
            ClassAggregate {
                label,
                count: class.len(),
                mean_intensity: aggregate(
                    &class.iter().map(|r| r.mean_intensity).collect::<Vec<_>>(),
                ),
                mean_grad: aggregate(&class.iter().map(|r| r.mean_grad).collect::<Vec<_>>()),
                tv: aggregate(&class.iter().map(|r| r.tv).collect::<Vec<_>>()),
            }
        })
        .collect()
}

/// CSV rendering: fixed column order, then a '#'-prefixed aggregate block
/// that plain CSV parsers skip.
pub fn report_csv(stats: &SliceStatistics) -> String {
    let mut out = String::from("image_id,class,mean_intensity,mean_grad,tv\n");
    for r in &stats.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.image_id, r.label, r.mean_intensity, r.mean_grad, r.tv
        ));
    }
    out.push_str(&format!("# method {}\n", stats.method.name()));
    out.push_str(
        "# aggregate: class,count,mean_intensity_mean,mean_intensity_std,mean_grad_mean,mean_grad_std,tv_mean,tv_std\n",
    );
    for a in &stats.aggregates {
        out.push_str(&format!(
            "# {},{},{},{},{},{},{},{}\n",
            a.label,
            a.count,
            a.mean_intensity.mean,
            a.mean_intensity.std,
            a.mean_grad.mean,
            a.mean_grad.std,
            a.tv.mean,
            a.tv.std
        ));
    }
    out
}

pub fn write_report(stats: &SliceStatistics, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, report_csv(stats))?;
    Ok(())
}

/// Parse a report produced by [`report_csv`]; used to check that the
/// written artifact is lossless.
pub fn parse_report(text: &str) -> Result<Vec<ImageStat>> {
    let mut records = Vec::new();
    for line in text.lines().skip(1) {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Dataset(format!("bad report line {line:?}")));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Dataset(format!("bad number {s:?}")))
        };
        records.push(ImageStat {
            image_id: fields[0].to_string(),
            label: fields[1]
                .parse()
                .map_err(|_| Error::Dataset(format!("bad label {:?}", fields[1])))?,
            mean_intensity: parse_f(fields[2])?,
            mean_grad: parse_f(fields[3])?,
            tv: parse_f(fields[4])?,
        });
    }
    Ok(records)
}
