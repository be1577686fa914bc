//! Synthetic datasets, label-skew partitioning, and IDX ingestion.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub batch: Batch,
    pub split: Split,
}

/// Number of Rect-4 domains.
pub const RECT4_DOMAINS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect4Config {
    pub points_per_domain: usize,
    #[serde(default = "default_noise")]
    pub noise_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.1
}

impl Rect4Config {
    pub fn new(points_per_domain: usize, seed: u64) -> Self {
        Rect4Config {
            points_per_domain,
            noise_fraction: default_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.points_per_domain == 0 {
            return Err(("points_per_domain", "must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.noise_fraction) {
            return Err((
                "noise_fraction",
                format!("must lie in [0, 0.5), got {}", self.noise_fraction),
            ));
        }
        Ok(())
    }
}

/// Horizontal extent `[lo, hi]` of Rect-4 domain `d` (0-based).
pub fn rect4_x_range(d: usize) -> (f64, f64) {
    let lo = -8.0 + 4.0 * d as f64;
    (lo, lo + 4.0)
}

/// The vertical line `x = c` that labels domain `d`'s noisy points.
pub fn rect4_local_boundary(d: usize) -> f64 {
    -6.0 + 4.0 * d as f64
}

/// Rect-4 samples with a per-point flag marking the relabeled ones.
pub(crate) fn gen_rect4_with_mask(cfg: &Rect4Config) -> Result<Vec<(DomainDataset, Vec<bool>)>> {
    cfg.validate()
        .map_err(|(f, m)| Error::InvalidInput(format!("{f} {m}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.points_per_domain;
    let noisy = (cfg.noise_fraction * n as f64).round() as usize;
    (0..RECT4_DOMAINS)
        .map(|d| {
            let (lo, hi) = rect4_x_range(d);
            let boundary = rect4_local_boundary(d);
            let mut inputs = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let x = rng.random_range(lo..=hi);
                let mag = rng.random_range(0.5..=4.0);
                let y = if rng.random_bool(0.5) { mag } else { -mag };
                inputs.extend_from_slice(&[x, y]);
                labels.push(usize::from(y > 0.0));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut mask = vec![false; n];
            for &i in &order[..noisy] {
                mask[i] = true;
                labels[i] = usize::from(inputs[2 * i] > boundary);
            }
            let batch = Batch::new(inputs, 2, labels)?;
            Ok((
                DomainDataset {
                    domain_id: d,
                    batch,
                    split: Split::Train,
                },
                mask,
            ))
        })
        .collect()
}

/// Four domains of 2-D points whose shared label is `[y > 0]`; a
/// `noise_fraction` of each domain is relabeled by the domain's own
/// vertical boundary.
pub fn gen_rect4(cfg: &Rect4Config) -> Result<Vec<DomainDataset>> {
    Ok(gen_rect4_with_mask(cfg)?
        .into_iter()
        .map(|(d, _)| d)
        .collect())
}

/// Isotropic Gaussian classes with centers evenly spaced on a circle in the
/// first two coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsConfig {
    pub num_classes: usize,
    #[serde(default = "default_blob_dim")]
    pub dim: usize,
    pub points_per_class: usize,
    #[serde(default = "default_center_radius")]
    pub center_radius: f64,
    #[serde(default = "default_std")]
    pub std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_blob_dim() -> usize {
    2
}

fn default_center_radius() -> f64 {
    3.0
}

fn default_std() -> f64 {
    1.0
}

impl BlobsConfig {
    pub fn new(num_classes: usize, points_per_class: usize, seed: u64) -> Self {
        BlobsConfig {
            num_classes,
            dim: default_blob_dim(),
            points_per_class,
            center_radius: default_center_radius(),
            std: default_std(),
            seed,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.num_classes < 2 {
            return Err(("num_classes", "must be >= 2".into()));
        }
        if self.dim < 2 {
            return Err(("dim", "must be >= 2".into()));
        }
        if self.points_per_class == 0 {
            return Err(("points_per_class", "must be >= 1".into()));
        }
        if !(self.std.is_finite() && self.std > 0.0) {
            return Err(("std", "must be > 0".into()));
        }
        if !self.center_radius.is_finite() {
            return Err(("center_radius", "must be finite".into()));
        }
        Ok(())
    }
}

pub fn gen_blobs(cfg: &BlobsConfig) -> Result<Batch> {
    cfg.validate()
        .map_err(|(f, m)| Error::InvalidInput(format!("{f} {m}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut inputs = Vec::with_capacity(cfg.num_classes * cfg.points_per_class * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.num_classes * cfg.points_per_class);
    for _ in 0..cfg.points_per_class {
        for c in 0..cfg.num_classes {
            let angle = std::f64::consts::TAU * c as f64 / cfg.num_classes as f64;
            for k in 0..cfg.dim {
                let center = match k {
                    0 => cfg.center_radius * angle.cos(),
                    1 => cfg.center_radius * angle.sin(),
                    _ => 0.0,
                };
                inputs.push(center + noise.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    Batch::new(inputs, cfg.dim, labels)
}

/// Seeded random split; returns `(train, test)` with
/// `round(test_fraction·n)` test rows (at least one of each when `n ≥ 2`).
pub fn train_test_split(batch: &Batch, test_fraction: f64, seed: u64) -> Result<(Batch, Batch)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two rows to split".into()));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = order.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((batch.subset(&train)?, batch.subset(&test)?))
}

/// Splits every train-split domain into train and test parts with the same
/// seed.
pub fn split_domains(
    domains: &[DomainDataset],
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    let mut out = Vec::with_capacity(2 * domains.len());
    for d in domains.iter().filter(|d| d.split == Split::Train) {
        let (train, test) = train_test_split(&d.batch, test_fraction, seed)?;
        out.push(DomainDataset {
            domain_id: d.domain_id,
            batch: train,
            split: Split::Train,
        });
        out.push(DomainDataset {
            domain_id: d.domain_id,
            batch: test,
            split: Split::Test,
        });
    }
    Ok(out)
}

/// Label-skew partition parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletPartition {
    pub alpha: f64,
    pub num_clients: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DirichletPartition {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if self.num_clients == 0 {
            return Err(("num_clients", "must be >= 1".into()));
        }
        Ok(())
    }
}

/// Largest-remainder rounding of `proportions · total`.
fn apportion(proportions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut by_remainder: Vec<usize> = (0..raw.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in by_remainder.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Per-client sample indices (ascending) of a Dirichlet label-skew split.
///
/// For each class, client shares are drawn from `Dirichlet(α, …, α)` and the
/// class's shuffled samples are dealt out in those proportions. Any client
/// left empty then takes one sample from the currently largest client.
pub fn dirichlet_partition_indices(
    labels: &[usize],
    part: &DirichletPartition,
) -> Result<Vec<Vec<usize>>> {
    part.validate()
        .map_err(|(f, m)| Error::InvalidInput(format!("{f} {m}")))?;
    let k = part.num_clients;
    if labels.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} samples cannot cover {k} clients",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(part.seed);
    let gamma = Gamma::new(part.alpha, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); k];
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let mut shares: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = shares.iter().sum();
        if total > 0.0 && total.is_finite() {
            shares.iter_mut().for_each(|s| *s /= total);
        } else {
            // every draw underflowed: give the class to one client
            let winner = rng.random_range(0..k);
            shares = (0..k).map(|j| f64::from(u8::from(j == winner))).collect();
        }
        let counts = apportion(&shares, members.len());
        let mut start = 0;
        for (client, &n) in clients.iter_mut().zip(&counts) {
            client.extend_from_slice(&members[start..start + n]);
            start += n;
        }
    }
    for empty in 0..k {
        if !clients[empty].is_empty() {
            continue;
        }
        let donor = (1..k).fold(0, |best, j| {
            if clients[j].len() > clients[best].len() {
                j
            } else {
                best
            }
        });
        let moved = clients[donor].pop().expect("donor has the most samples");
        clients[empty].push(moved);
    }
    for c in clients.iter_mut() {
        c.sort_unstable();
    }
    Ok(clients)
}

pub fn dirichlet_partition(data: &Batch, part: &DirichletPartition) -> Result<Vec<Batch>> {
    dirichlet_partition_indices(data.labels(), part)?
        .iter()
        .map(|idx| data.subset(idx))
        .collect()
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn format(&self, field: &'static str, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            field,
            detail: detail.into(),
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.format(field, "file truncated"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn body(&mut self, len: usize, field: &'static str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(self.format(
                field,
                format!("file truncated: expected {len} bytes, found {available}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an IDX image file (`0x00000803`, u8, 3-D) and its label file
/// (`0x00000801`, u8, 1-D). Pixels are scaled to `[0, 1]` and each image is
/// flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Batch> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;

    let mut r = IdxReader {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    let magic = r.u32("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(r.format(
            "magic",
            format!("expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = r.u32("count")? as usize;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(r.format("rows", "image dimensions must be nonzero"));
    }
    let pixels = r.body(count * rows * cols, "pixels")?;
    let inputs: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();

    let mut r = IdxReader {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    let magic = r.u32("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(r.format(
            "magic",
            format!("expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let label_count = r.u32("count")? as usize;
    if label_count != count {
        return Err(r.format(
            "count",
            format!("{label_count} labels for {count} images"),
        ));
    }
    let labels: Vec<usize> = r.body(count, "labels")?.iter().map(|&b| b as usize).collect();
    Batch::new(inputs, rows * cols, labels)
}
