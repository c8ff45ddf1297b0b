//! Planted-pattern synthetic datasets.
//!
//! Every category gets a random unit channel pattern and a home location.
//! While there are no more categories than channels the patterns are made
//! mutually orthogonal, since the attention scores see channel content only
//! and two nearly parallel patterns would be indistinguishable.
//! An image labelled with a category carries `pattern_strength · pattern` at
//! that category's home, on top of Gaussian noise everywhere. Stored values
//! are rounded to `f32` so the in-memory dataset equals what is read back
//! from disk.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use ssgrl_core::decoupling::{EmbeddingTable, FeatureMap};
use ssgrl_core::optim::Sample;
use ssgrl_core::Tensor;

use crate::dataset::{self, TEST, TRAIN};
use crate::error::{write_file, Error, Result};
use crate::text;

fn default_bias_probability() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub categories: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Expected labels per sample before bias pairs are applied.
    pub label_density: f64,
    pub pattern_strength: f64,
    pub noise_sigma: f64,
    /// `(a, b)`: when `a` is present, `b` is added with `bias_probability`.
    #[serde(default)]
    pub bias_pairs: Vec<(usize, usize)>,
    #[serde(default = "default_bias_probability")]
    pub bias_probability: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        let dims = [
            ("categories", self.categories),
            ("width", self.width),
            ("height", self.height),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be at least 1"));
        }
        if !(self.label_density > 0.0 && self.label_density <= self.categories as f64) {
            return bad(format!(
                "label_density must lie in (0, {}], got {}",
                self.categories, self.label_density
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !self.pattern_strength.is_finite() {
            return bad("pattern_strength must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.bias_probability) {
            return bad(format!(
                "bias_probability must lie in [0, 1], got {}",
                self.bias_probability
            ));
        }
        for &(a, b) in &self.bias_pairs {
            if a >= self.categories || b >= self.categories || a == b {
                return bad(format!(
                    "bias pair ({a}, {b}) is invalid for {} categories",
                    self.categories
                ));
            }
        }
        Ok(())
    }

    pub fn locations(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub categories: Vec<String>,
    pub embeddings: EmbeddingTable,
    /// Unit channel pattern of each category.
    pub patterns: Vec<Vec<f64>>,
    /// Home location `(w, h)` of each category.
    pub homes: Vec<(usize, usize)>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Gram-Schmidt over Gaussian draws for the first `channels` patterns;
/// any further ones are plain random unit vectors.
fn draw_patterns<R: Rng>(rng: &mut R, count: usize, channels: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = unit_vector(rng, channels);
        if out.len() < channels {
            for u in &out {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
        }
        out.push(v);
    }
    out
}

pub fn category_names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("cat{i}")).collect()
}

/// Draws the whole dataset from one seeded stream.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.categories;
    let l = spec.locations();
    let patterns = draw_patterns(&mut rng, c, spec.channels);
    let home_index: Vec<usize> = if c <= l {
        let mut all: Vec<usize> = (0..l).collect();
        all.shuffle(&mut rng);
        all.truncate(c);
        all
    } else {
        (0..c).map(|_| rng.random_range(0..l)).collect()
    };
    let homes = home_index
        .iter()
        .map(|&i| (i / spec.height, i % spec.height))
        .collect();
    let mut emb = Vec::with_capacity(c * spec.embed_dim);
    for _ in 0..c {
        emb.extend(unit_vector(&mut rng, spec.embed_dim));
    }
    let categories = category_names(c);
    let embeddings = EmbeddingTable::new(
        categories.clone(),
        Tensor::new(vec![c, spec.embed_dim], emb)?,
    )?;

    let mut split = |name: &str, count: usize| -> Result<Vec<Sample>> {
        (0..count)
            .map(|i| {
                let labels = draw_labels(spec, &mut rng);
                let mut values = vec![0.0; l * spec.channels];
                for v in values.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = spec.noise_sigma * z;
                }
                for (k, _) in labels.iter().enumerate().filter(|(_, &y)| y) {
                    let base = home_index[k] * spec.channels;
                    for (v, p) in values[base..base + spec.channels]
                        .iter_mut()
                        .zip(&patterns[k])
                    {
                        *v += spec.pattern_strength * p;
                    }
                }
                let values = values.into_iter().map(|v| v as f32 as f64).collect();
                Ok(Sample {
                    id: format!("{name}-{i:05}"),
                    features: FeatureMap::new(spec.width, spec.height, spec.channels, values)?,
                    labels,
                })
            })
            .collect()
    };
    let train = split(TRAIN, spec.train_samples)?;
    let test = split(TEST, spec.test_samples)?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        categories,
        embeddings,
        patterns,
        homes,
        train,
        test,
    })
}

fn draw_labels<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<bool> {
    let q = spec.label_density / spec.categories as f64;
    let mut labels: Vec<bool> = (0..spec.categories)
        .map(|_| rng.random::<f64>() < q)
        .collect();
    for &(a, b) in &spec.bias_pairs {
        if labels[a] && !labels[b] && rng.random::<f64>() < spec.bias_probability {
            labels[b] = true;
        }
    }
    labels
}

impl SyntheticDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(
            &dataset::categories_path(dir),
            text::render_categories(&self.categories),
        )?;
        text::write_embeddings(&dataset::embeddings_path(dir), &self.embeddings)?;
        dataset::write_split(dir, TRAIN, &self.categories, &self.train)?;
        dataset::write_split(dir, TEST, &self.categories, &self.test)
    }

    /// Short human-readable description.
    pub fn summary(&self) -> String {
        let count = |s: &[Sample]| {
            s.iter()
                .map(|x| x.labels.iter().filter(|&&y| y).count())
                .sum::<usize>()
        };
        let mut out = format!(
            "categories: {}\ngrid: {}x{}x{}\ntrain samples: {}\ntest samples: {}\nlabels per train sample: {:.3}\n",
            self.categories.len(),
            self.spec.width,
            self.spec.height,
            self.spec.channels,
            self.train.len(),
            self.test.len(),
            count(&self.train) as f64 / self.train.len().max(1) as f64,
        );
        for (c, (w, h)) in self.homes.iter().enumerate() {
            out.push_str(&format!("home {}: ({w}, {h})\n", self.categories[c]));
        }
        out
    }
}
