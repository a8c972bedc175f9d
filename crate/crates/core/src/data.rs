//! Synthetic identity/viewpoint datasets, viewpoint-label noise, and the
//! JSON-lines dataset format.
//!
//! Each sample's latent point is `normalize(μ_k + δ_{k,v} + σ_n·g)`: an
//! identity prototype, a fixed per-(identity, viewpoint) offset and isotropic
//! noise. With distortion on, the raw features are the latent passed through
//! a fixed random invertible linear map.
//!
//! Viewpoint labels follow `0 = front`, `1 = side`, `2 = back` when `V = 3`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::normalize;
use crate::scalar::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "id")]
    pub identity: usize,
    #[serde(rename = "view")]
    pub viewpoint: usize,
    pub camera: usize,
    pub split: Split,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_ids: usize,
    pub num_views: usize,
    pub per_cell: usize,
    pub raw_dim: usize,
    /// Norm of each identity prototype.
    pub identity_spread: f64,
    /// Norm of each per-(identity, viewpoint) offset.
    pub offset: f64,
    /// Per-coordinate standard deviation of the sample noise.
    pub noise: f64,
    pub distort: bool,
    /// Cameras per viewpoint; a sample's camera is `view + V·c`.
    pub cameras_per_view: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_ids: 20,
            num_views: 3,
            per_cell: 8,
            raw_dim: 32,
            identity_spread: 1.0,
            offset: 0.8,
            noise: 0.2,
            distort: true,
            cameras_per_view: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth: {m}")));
        if self.num_ids < 2 || self.num_views < 2 {
            return bad("need at least two identities and two viewpoints");
        }
        if self.per_cell < 1 || self.cameras_per_view < 1 {
            return bad("per-cell and camera counts must be at least one");
        }
        if self.raw_dim < 2 {
            return bad("raw dimension must be at least two");
        }
        for (name, v) in [("identity spread", self.identity_spread), ("offset", self.offset), ("noise", self.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}

/// Independent random stream for one generation component.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform direction on the sphere, redrawn in the measure-zero collapse case.
fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        if let Ok(u) = normalize(&gaussian(rng, n)) {
            return u;
        }
    }
}

/// Random rotation times a log-uniform diagonal scaling in `[0.5, 2]`.
/// Returned row-major.
fn random_distortion(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = gaussian(rng, n);
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if let Ok(u) = normalize(&v) {
            if u.iter().all(|x| x.is_finite()) {
                basis.push(u);
            }
        }
    }
    let log_scale = Uniform::new_inclusive(-std::f64::consts::LN_2, std::f64::consts::LN_2).expect("valid range");
    let scales: Vec<f64> = (0..n).map(|_| log_scale.sample(rng).exp()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = basis[j][i] * scales[j];
        }
    }
    out
}

/// Generates the dataset along with each sample's latent point (before
/// distortion). Deterministic in `cfg`.
pub fn generate_with_latents(cfg: &SynthConfig) -> Result<(Vec<Sample>, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let d = cfg.raw_dim;
    let mut proto_rng = stream(cfg.seed, 1);
    let mut offset_rng = stream(cfg.seed, 2);
    let mut noise_rng = stream(cfg.seed, 3);
    let mut camera_rng = stream(cfg.seed, 4);
    let distortion = cfg.distort.then(|| random_distortion(&mut stream(cfg.seed, 5), d));

    let gallery_per_cell = (cfg.per_cell - 1) / 2;
    let mut samples = Vec::with_capacity(cfg.num_ids * cfg.num_views * cfg.per_cell);
    let mut latents = Vec::with_capacity(samples.capacity());
    for k in 0..cfg.num_ids {
        let proto: Vec<f64> = random_unit(&mut proto_rng, d).iter().map(|x| x * cfg.identity_spread).collect();
        for v in 0..cfg.num_views {
            let offset = random_unit(&mut offset_rng, d);
            for i in 0..cfg.per_cell {
                let noise = gaussian(&mut noise_rng, d);
                let point: Vec<f64> =
                    (0..d).map(|j| proto[j] + cfg.offset * offset[j] + cfg.noise * noise[j]).collect();
                let latent = normalize(&point)?;
                let raw = match &distortion {
                    Some(a) => a.chunks(d).map(|row| dot(row, &latent)).collect(),
                    None => latent.clone(),
                };
                let split = match i {
                    0 => Split::Query,
                    i if i <= gallery_per_cell => Split::Gallery,
                    _ => Split::Train,
                };
                let camera = v + cfg.num_views * camera_rng.random_range(0..cfg.cameras_per_view);
                samples.push(Sample { identity: k, viewpoint: v, camera, split, raw });
                latents.push(latent);
            }
        }
    }
    Ok((samples, latents))
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    generate_with_latents(cfg).map(|(s, _)| s)
}

/// Number of viewpoint classes present: `max(view) + 1`.
pub fn num_views(samples: &[Sample]) -> usize {
    samples.iter().map(|s| s.viewpoint + 1).max().unwrap_or(0)
}

pub fn num_ids(samples: &[Sample]) -> usize {
    samples.iter().map(|s| s.identity + 1).max().unwrap_or(0)
}

/// Resamples the viewpoint of exactly `round(rate · n_train)` training
/// samples, uniformly among the other `V - 1` viewpoints.
pub fn flip_viewpoint_labels(samples: &[Sample], rate: f64, seed: u64) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    let mut out = samples.to_vec();
    let train: Vec<usize> = (0..out.len()).filter(|&i| out[i].split == Split::Train).collect();
    let n_flip = (rate * train.len() as f64).round() as usize;
    if n_flip == 0 {
        return Ok(out);
    }
    let views = num_views(samples);
    if views < 2 {
        return Err(Error::InvalidConfig("cannot flip viewpoints with a single viewpoint".into()));
    }
    let mut rng = stream(seed, 6);
    let mut chosen = index::sample(&mut rng, train.len(), n_flip).into_vec();
    chosen.sort_unstable();
    for c in chosen {
        let s = &mut out[train[c]];
        let shift = rng.random_range(1..views);
        s.viewpoint = (s.viewpoint + shift) % views;
    }
    Ok(out)
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Writes one JSON object per line; gzip when the path ends in `.gz`.
pub fn save(samples: &[Sample], path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut out: Box<dyn Write> =
        if is_gzip(path) { Box::new(GzEncoder::new(file, Compression::default())) } else { Box::new(file) };
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    drop(out);
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gzip(path) { Box::new(GzDecoder::new(file)) } else { Box::new(file) };
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        samples.push(s);
    }
    Ok(samples)
}
