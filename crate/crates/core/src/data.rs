//! Labeled image datasets, the procedural two-factor face renderer, stratified
//! splitting and deterministic batching.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Result};
use crate::tensor::Tensor;

/// Smallest canvas on which the face features stay distinguishable.
pub const MIN_RENDER_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `[height, width, channels]`, row-major, values in `[0, 1]`.
    pub image: Vec<f64>,
    pub exp_label: usize,
    pub id_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub image_size: usize,
    pub channels: usize,
    pub n_exp_classes: usize,
    pub n_id_classes: usize,
    pub samples: Vec<Sample>,
    /// Generating spec, for synthetic datasets.
    pub spec: Option<SyntheticSpec>,
}

/// One batch: images `[b, H, W, C]` and one-hot label matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub exp: Tensor,
    pub id: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), n_classes]);
    for (i, &c) in labels.iter().enumerate() {
        t.row_mut(i)[c] = 1.0;
    }
    t
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    /// Checks image lengths, value range and label ranges.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.image.len() != self.image_len() {
                return Err(input_err!("sample {i} has {} values, expected {}", s.image.len(), self.image_len()));
            }
            if !s.image.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(input_err!("sample {i} has pixel values outside [0, 1]"));
            }
            if s.exp_label >= self.n_exp_classes || s.id_label >= self.n_id_classes.max(1) {
                return Err(input_err!("sample {i} has labels out of range"));
            }
        }
        Ok(())
    }

    pub fn images(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(&self.samples[i].image);
        }
        Tensor::from_vec(&[indices.len(), self.image_size, self.image_size, self.channels], data)
            .expect("sample images have the dataset's shape")
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let exp: Vec<usize> = indices.iter().map(|&i| self.samples[i].exp_label).collect();
        let id: Vec<usize> = indices.iter().map(|&i| self.samples[i].id_label).collect();
        Batch {
            images: self.images(indices),
            exp: one_hot(&exp, self.n_exp_classes),
            id: one_hot(&id, self.n_id_classes.max(1)),
        }
    }

    pub fn exp_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.exp_label).collect()
    }

    pub fn id_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id_label).collect()
    }

    /// Same metadata, the given samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            image_size: self.image_size,
            channels: self.channels,
            n_exp_classes: self.n_exp_classes,
            n_id_classes: self.n_id_classes,
            samples: Vec::new(),
            spec: self.spec.clone(),
        }
    }

    /// Iterates over batches; see [`Batches`].
    pub fn batches(&self, batch_size: usize, seed: u64, shuffle: bool) -> Batches<'_> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Batches { dataset: self, order, batch_size: batch_size.max(1), pos: 0 }
    }
}

/// Batch iterator in a fixed order; the last batch may be smaller.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Levels of the expression-like factor (mouth curvature, eye openness).
    pub n_exp_classes: usize,
    /// Levels of the nuisance factor (head shape, background texture).
    pub n_id_classes: usize,
    pub image_size: usize,
    pub channels: usize,
    pub samples_per_combo: usize,
    /// Amplitude of position (in half-canvas units) and brightness noise.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_exp_classes: 4, n_id_classes: 6, image_size: 32, channels: 1, samples_per_combo: 100, jitter: 0.1, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < MIN_RENDER_SIZE {
            return Err(config_err!("image_size {} is too small to render faces (minimum {MIN_RENDER_SIZE})", self.image_size));
        }
        if self.n_exp_classes < 2 || self.n_id_classes < 2 {
            return Err(config_err!("need at least 2 expression and 2 identity classes"));
        }
        if self.samples_per_combo == 0 {
            return Err(config_err!("samples_per_combo must be at least 1"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(config_err!("channels must be 1 or 3"));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(config_err!("jitter must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.n_exp_classes * self.n_id_classes * self.samples_per_combo
    }
}

/// Nuisance perturbation of one rendered sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JitterDraw {
    pub dx: f64,
    pub dy: f64,
    pub brightness: f64,
}

impl JitterDraw {
    pub fn sample<R: Rng>(amplitude: f64, rng: &mut R) -> Self {
        if amplitude == 0.0 {
            return Self::default();
        }
        Self {
            dx: rng.gen_range(-amplitude..=amplitude),
            dy: rng.gen_range(-amplitude..=amplitude),
            brightness: rng.gen_range(-amplitude..=amplitude),
        }
    }
}

fn level(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Renders one stylized face.
///
/// The expression level sets the mouth curvature (evenly spaced in `[-1, 1]`)
/// and the eye openness; the identity level sets the head aspect ratio, the
/// head tone and the background stripe texture. Jitter shifts the face and
/// offsets the brightness.
pub fn render(spec: &SyntheticSpec, exp: usize, id: usize, jitter: &JitterDraw) -> Vec<f64> {
    let s = spec.image_size;
    let t_exp = level(exp, spec.n_exp_classes);
    let t_id = level(id, spec.n_id_classes);

    let curvature = 2.0 * t_exp - 1.0;
    let eye_open = 0.03 + 0.08 * t_exp;
    let head_w = 0.48 + 0.30 * t_id;
    let head_h = 0.80;
    let head_tone = 0.72 + 0.16 * level(id % 3, 3);
    let theta = PI * id as f64 / spec.n_id_classes as f64;
    let freq = 5.0 + 2.0 * (id % 3) as f64;
    let (ct, st) = (libm::cos(theta), libm::sin(theta));

    let shade = |u: f64, v: f64| -> f64 {
        // face-local coordinates
        let (fu, fv) = (u - jitter.dx, v - jitter.dy);
        let in_head = (fu / head_w) * (fu / head_w) + (fv / head_h) * (fv / head_h) <= 1.0;
        if !in_head {
            return 0.30 + 0.15 * libm::sin(freq * PI * (u * ct + v * st));
        }
        for ex in [-0.2, 0.2] {
            let (du, dv) = ((fu - ex) / 0.1, (fv + 0.22) / eye_open);
            if du * du + dv * dv <= 1.0 {
                return 0.08;
            }
        }
        let mouth_w = 0.26;
        if fu.abs() <= mouth_w {
            let r = fu / mouth_w;
            let centre = 0.38 + 0.16 * curvature * (1.0 - r * r);
            if (fv - centre).abs() <= 0.06 {
                return 0.12;
            }
        }
        head_tone
    };

    // 3x3 supersampling per pixel
    const SUB: usize = 3;
    let mut out = Vec::with_capacity(s * s * spec.channels);
    for py in 0..s {
        for px in 0..s {
            let mut acc = 0.0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let u = ((px as f64 + (sx as f64 + 0.5) / SUB as f64) / s as f64) * 2.0 - 1.0;
                    let v = ((py as f64 + (sy as f64 + 0.5) / SUB as f64) / s as f64) * 2.0 - 1.0;
                    acc += shade(u, v);
                }
            }
            let value = acc / (SUB * SUB) as f64 + jitter.brightness;
            for c in 0..spec.channels {
                let tint = if spec.channels == 1 {
                    1.0
                } else {
                    0.85 + 0.15 * libm::cos(2.0 * PI * (t_id + c as f64 / 3.0))
                };
                out.push((value * tint).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Renders `samples_per_combo` images for every (expression, identity) pair.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.total_samples());
    for exp in 0..spec.n_exp_classes {
        for id in 0..spec.n_id_classes {
            for _ in 0..spec.samples_per_combo {
                let draw = JitterDraw::sample(spec.jitter, &mut rng);
                samples.push(Sample { image: render(spec, exp, id, &draw), exp_label: exp, id_label: id });
            }
        }
    }
    let ds = Dataset {
        image_size: spec.image_size,
        channels: spec.channels,
        n_exp_classes: spec.n_exp_classes,
        n_id_classes: spec.n_id_classes,
        samples,
        spec: Some(spec.clone()),
    };
    ds.validate()?;
    Ok(ds)
}

/// Train, validation and test subsets with the original indices of each.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: [Vec<usize>; 3],
}

/// Stratified (by expression label) split into three parts.
///
/// Within each class the shuffled members are cut at the rounded cumulative
/// fractions; each part keeps the original dataset order.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(config_err!("split fractions must be positive, got {fractions:?}"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(config_err!("split fractions must sum to 1, got {total}"));
    }
    let mut by_class = vec![Vec::new(); dataset.n_exp_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.exp_label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < fractions.len() {
            return Err(config_err!("class {class} has {} samples, fewer than the {} splits", members.len(), fractions.len()));
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let mut start = 0;
        let mut cum = 0.0;
        for (k, f) in fractions.iter().enumerate() {
            cum += f;
            let end = if k + 1 == fractions.len() { members.len() } else { libm::round(cum * n) as usize };
            parts[k].extend_from_slice(&members[start..end.max(start)]);
            start = end.max(start);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(Splits {
        train: dataset.subset(&parts[0]),
        val: dataset.subset(&parts[1]),
        test: dataset.subset(&parts[2]),
        indices: parts,
    })
}
