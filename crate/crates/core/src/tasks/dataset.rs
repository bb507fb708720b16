use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels { labels: Vec<usize>, num_classes: usize },
    Values(Tensor),
}

/// Inputs (leading dimension `N`) with class labels or real targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn classification(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.is_empty() || inputs.rows() == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::invalid(format!("{} inputs but {} labels", inputs.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            inputs,
            targets: Targets::Labels { labels, num_classes },
        })
    }

    pub fn regression(inputs: Tensor, values: Tensor) -> Result<Self> {
        if inputs.is_empty() || values.rows() != inputs.rows() {
            return Err(Error::invalid("regression targets must have one row per input"));
        }
        Ok(Self {
            inputs,
            targets: Targets::Values(values),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.row_len()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { num_classes, .. } => Some(*num_classes),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&Tensor> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Labels { .. } => None,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::Labels { labels, num_classes } => Targets::Labels {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Values(v) => Targets::Values(v.select_rows(indices)),
        };
        Self {
            inputs: self.inputs.select_rows(indices),
            targets,
        }
    }

    pub(crate) fn labels_mut(&mut self) -> Option<(&mut Vec<usize>, usize)> {
        match &mut self.targets {
            Targets::Labels { labels, num_classes } => Some((labels, *num_classes)),
            Targets::Values(_) => None,
        }
    }
}

/// `n` standard normal samples of per-sample shape `shape`, drawn from the
/// probe stream of `seed`.
pub fn gaussian_inputs(shape: &[usize], n: usize, seed: u64) -> Result<Tensor> {
    let mut rng = substream(seed, Stream::Probe, 1);
    let dim: usize = shape.iter().product();
    let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut full = vec![n];
    full.extend_from_slice(shape);
    Tensor::new(full, data)
}

/// Gaussian class clusters: unit within-class variance, class means centered
/// and scaled so the closest pair sits 4 apart. Classes are balanced and the
/// sample order is shuffled.
pub fn synth_dataset(num_classes: usize, input_dim: usize, n_per_class: usize, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || input_dim == 0 || n_per_class == 0 {
        return Err(Error::invalid("synth_dataset sizes must be positive"));
    }
    let mut rng = substream(seed, Stream::Data, 0);
    let mut means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..input_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    if num_classes > 1 {
        let centroid: Vec<f64> = (0..input_dim)
            .map(|d| means.iter().map(|m| m[d]).sum::<f64>() / num_classes as f64)
            .collect();
        let mut closest = f64::INFINITY;
        for a in 0..num_classes {
            for b in a + 1..num_classes {
                let d2: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                closest = closest.min(d2.sqrt());
            }
        }
        let s = 4.0 / closest;
        for m in &mut means {
            m.iter_mut().zip(&centroid).for_each(|(v, c)| *v = (*v - c) * s);
        }
    } else {
        means[0].fill(0.0);
    }

    let n = num_classes * n_per_class;
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let mut data = Vec::with_capacity(n * input_dim);
    for &l in &labels {
        data.extend(means[l].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
    }
    Dataset::classification(Tensor::new(vec![n, input_dim], data)?, labels, num_classes)
}

/// Resamples the labels of exactly `floor(epsilon * N)` indices, chosen
/// uniformly without replacement, uniformly over all classes (a new label
/// may equal the old one).
pub fn randomize_labels(ds: &Dataset, epsilon: f64, seed: u64) -> Result<Dataset> {
    randomize_labels_with(ds, epsilon, &mut substream(seed, Stream::Task, 0))
}

pub(crate) fn randomize_labels_with(ds: &Dataset, epsilon: f64, rng: &mut crate::rng::Rng) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let mut out = ds.clone();
    let n = out.len();
    let (labels, k) = out
        .labels_mut()
        .ok_or_else(|| Error::invalid("label randomization needs a classification dataset"))?;
    let count = (epsilon * n as f64).floor() as usize;
    for i in sample(rng, n, count).into_iter() {
        labels[i] = rng.random_range(0..k);
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header, needed 4 bytes at offset {offset}"),
        })
}

fn idx_payload<'a>(bytes: &'a [u8], magic: u32, dims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad IDX magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    let shape: Vec<usize> = (0..dims)
        .map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let header = 4 + 4 * dims;
    let expected = header + shape.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            message: format!("IDX body has {} bytes, header implies {}", bytes.len() - header, expected - header),
        });
    }
    Ok((shape, &bytes[header..]))
}

/// MNIST-style IDX files (magic 2051 for images, 2049 for labels). Pixels
/// are scaled to [0, 1]; inputs have shape `[N, 1, rows, cols]`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read(images_path)?;
    let lab = read(labels_path)?;
    let (shape, pixels) = idx_payload(&img, 2051, 3)?;
    let (lshape, labels) = idx_payload(&lab, 2049, 1)?;
    if shape[0] != lshape[0] {
        return Err(Error::invalid(format!("{} images but {} labels", shape[0], lshape[0])));
    }
    if shape.contains(&0) {
        return Err(Error::invalid("IDX file holds no images"));
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let inputs = Tensor::new(vec![shape[0], 1, shape[1], shape[2]], data)?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().max().map_or(1, |m| m + 1).max(10);
    Dataset::classification(inputs, labels, k)
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// CIFAR-10 binary batches: 3073-byte records, one label byte followed by
/// 3072 channel-major pixels. Inputs have shape `[N, 3, 32, 32]`.
pub fn load_cifar10_bin(paths: &[&Path]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let full = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
            return Err(Error::Format {
                offset: full as u64,
                message: format!(
                    "{}: partial record of {} bytes (records are {CIFAR_RECORD} bytes)",
                    path.display(),
                    bytes.len() - full
                ),
            });
        }
        for (r, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(Error::Format {
                    offset: (r * CIFAR_RECORD) as u64,
                    message: format!("label byte {} outside 0..=9", rec[0]),
                });
            }
            labels.push(rec[0] as usize);
            data.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::invalid("no CIFAR-10 records found"));
    }
    let inputs = Tensor::new(vec![labels.len(), 3, 32, 32], data)?;
    Dataset::classification(inputs, labels, 10)
}
