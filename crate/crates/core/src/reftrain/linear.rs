//! Per-voxel multinomial logistic regression.
//!
//! Features per voxel: intensity, mean intensity of the in-bounds
//! 6-neighbors, distance from the volume center (normalized to [0, 1]) and a
//! constant bias. Four output classes map to labels {0, 1, 2, 4}. Parameters
//! are a row-major `N_CLASSES x N_FEATURES` weight matrix.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::synth::SyntheticCase;
use super::Trainer;
use crate::error::{Error, Result};
use crate::fedcore::{ModelParams, DEFAULT_WIRE_WIDTH};
use crate::metrics::dice;
use crate::seed;
use crate::volumes::{IntensityVolume, LabelVolume, Region, RegionMapping};

pub const N_FEATURES: usize = 4;
pub const N_CLASSES: usize = 4;
pub const CLASS_LABELS: [u8; N_CLASSES] = [0, 1, 2, 4];
pub const N_PARAMS: usize = N_FEATURES * N_CLASSES;

pub type Features = [f64; N_FEATURES];

fn class_of(label: u8) -> u8 {
    match label {
        0 => 0,
        1 => 1,
        2 => 2,
        _ => 3,
    }
}

pub fn features_for(image: &IntensityVolume) -> Vec<Features> {
    let g = *image.geometry();
    let [nx, ny, nz] = g.dims;
    let values = image.data().to_f64();
    let half = [(nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0, (nz - 1) as f64 / 2.0];
    let half_diag = half.iter().map(|h| h * h).sum::<f64>().sqrt();
    let norm = if half_diag > 0.0 { half_diag } else { 1.0 };
    let mut out = Vec::with_capacity(values.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                let mut sum = 0.0;
                let mut n = 0.0;
                let mut add = |j: usize| {
                    sum += values[j];
                    n += 1.0;
                };
                if x > 0 {
                    add(i - 1);
                }
                if x + 1 < nx {
                    add(i + 1);
                }
                if y > 0 {
                    add(i - nx);
                }
                if y + 1 < ny {
                    add(i + nx);
                }
                if z > 0 {
                    add(i - nx * ny);
                }
                if z + 1 < nz {
                    add(i + nx * ny);
                }
                let neighbor_mean = if n > 0.0 { sum / n } else { values[i] };
                let d = ((x as f64 - half[0]).powi(2)
                    + (y as f64 - half[1]).powi(2)
                    + (z as f64 - half[2]).powi(2))
                .sqrt();
                out.push([values[i], neighbor_mean, d / norm, 1.0]);
            }
        }
    }
    out
}

/// Precomputed features and targets for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseFeatures {
    pub features: Vec<Features>,
    pub targets: Vec<u8>,
    pub truth: LabelVolume,
}

impl CaseFeatures {
    pub fn new(image: &IntensityVolume, truth: &LabelVolume) -> Result<Self> {
        image.geometry().ensure_same(truth.geometry())?;
        Ok(Self {
            features: features_for(image),
            targets: truth.data().iter().map(|&l| class_of(l)).collect(),
            truth: truth.clone(),
        })
    }
}

/// A local train or validation split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoxelDataset {
    pub cases: Vec<CaseFeatures>,
}

impl VoxelDataset {
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a IntensityVolume, &'a LabelVolume)>,
    {
        let cases = pairs
            .into_iter()
            .map(|(img, lab)| CaseFeatures::new(img, lab))
            .collect::<Result<_>>()?;
        Ok(Self { cases })
    }

    pub fn from_synthetic<'a, I: IntoIterator<Item = &'a SyntheticCase>>(cases: I) -> Result<Self> {
        Self::from_pairs(cases.into_iter().map(|c| (&c.image, &c.labels)))
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn n_voxels(&self) -> usize {
        self.cases.iter().map(|c| c.targets.len()).sum()
    }

    pub fn concat(sets: &[&VoxelDataset]) -> Self {
        Self {
            cases: sets.iter().flat_map(|s| s.cases.iter().cloned()).collect(),
        }
    }
}

fn logits(params: &[f64], x: &Features) -> [f64; N_CLASSES] {
    let mut z = [0.0; N_CLASSES];
    for (c, zc) in z.iter_mut().enumerate() {
        let row = &params[c * N_FEATURES..(c + 1) * N_FEATURES];
        *zc = row.iter().zip(x).map(|(w, v)| w * v).sum();
    }
    z
}

fn softmax(z: [f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e = z.map(|v| (v - max).exp());
    let s: f64 = e.iter().sum();
    for v in e.iter_mut() {
        *v /= s;
    }
    e
}

fn log_sum_exp(z: &[f64; N_CLASSES]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn accumulate<'a, I>(params: &[f64], samples: I, grad: &mut [f64]) -> (f64, usize)
where
    I: Iterator<Item = (&'a Features, u8)>,
{
    let mut loss = 0.0;
    let mut n = 0;
    for (x, t) in samples {
        let z = logits(params, x);
        loss += log_sum_exp(&z) - z[t as usize];
        let p = softmax(z);
        for c in 0..N_CLASSES {
            let err = p[c] - if c == t as usize { 1.0 } else { 0.0 };
            for f in 0..N_FEATURES {
                grad[c * N_FEATURES + f] += err * x[f];
            }
        }
        n += 1;
    }
    (loss, n)
}

/// Mean cross-entropy over the samples.
pub fn cross_entropy(params: &[f64], features: &[Features], targets: &[u8]) -> f64 {
    let total: f64 = features
        .iter()
        .zip(targets)
        .map(|(x, &t)| {
            let z = logits(params, x);
            log_sum_exp(&z) - z[t as usize]
        })
        .sum();
    total / features.len().max(1) as f64
}

/// Mean cross-entropy and its gradient with respect to the weights.
pub fn cross_entropy_gradient(params: &[f64], features: &[Features], targets: &[u8]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; N_PARAMS];
    let (loss, n) = accumulate(params, features.iter().zip(targets.iter().copied()), &mut grad);
    let n = n.max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerParams {
    pub batch_size: usize,
    /// Half-width of the uniform initial weight distribution.
    pub init_scale: f64,
    /// Region definitions used by `validate`.
    pub regions: RegionMapping,
}

impl Default for TrainerParams {
    fn default() -> Self {
        Self {
            batch_size: 256,
            init_scale: 0.01,
            regions: RegionMapping::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceTrainer {
    params: TrainerParams,
}

impl ReferenceTrainer {
    pub fn new(params: TrainerParams) -> Result<Self> {
        if params.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !params.init_scale.is_finite() || params.init_scale < 0.0 {
            return Err(Error::Config("init_scale must be finite and non-negative".into()));
        }
        params.regions.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &TrainerParams {
        &self.params
    }

    pub fn predict_case(&self, params: &ModelParams, features: &[Features], truth_like: &LabelVolume) -> LabelVolume {
        let labels = features
            .iter()
            .map(|x| {
                let z = logits(params.values(), x);
                let mut best = 0;
                for c in 1..N_CLASSES {
                    if z[c] > z[best] {
                        best = c;
                    }
                }
                CLASS_LABELS[best]
            })
            .collect();
        LabelVolume::new(*truth_like.geometry(), labels).expect("class labels are valid")
    }

    /// Mean Dice of `region` over the cases of `data`.
    pub fn mean_region_dice(&self, params: &ModelParams, data: &VoxelDataset, region: Region) -> f64 {
        if data.cases.is_empty() {
            return 0.0;
        }
        let total: f64 = data
            .cases
            .iter()
            .map(|case| {
                let pred = self.predict_case(params, &case.features, &case.truth);
                let pm = self.params.regions.mask(&pred, region);
                let gt = self.params.regions.mask(&case.truth, region);
                dice(&pm, &gt).expect("prediction shares the case geometry").value
            })
            .sum();
        total / data.cases.len() as f64
    }

    pub fn loss(&self, params: &ModelParams, data: &VoxelDataset) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for case in &data.cases {
            total += cross_entropy(params.values(), &case.features, &case.targets) * case.targets.len() as f64;
            n += case.targets.len();
        }
        total / n.max(1) as f64
    }
}

impl Trainer for ReferenceTrainer {
    type Dataset = VoxelDataset;

    fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = seed::rng(seed);
        let s = self.params.init_scale;
        let values = (0..N_PARAMS)
            .map(|_| if s > 0.0 { rand::Rng::random_range(&mut rng, -s..=s) } else { 0.0 })
            .collect();
        ModelParams::new(values, DEFAULT_WIRE_WIDTH).expect("finite initial weights")
    }

    fn train(
        &self,
        params: &ModelParams,
        data: &VoxelDataset,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
    ) -> ModelParams {
        let mut w = params.values().to_vec();
        if learning_rate == 0.0 || epochs == 0 || data.n_voxels() == 0 {
            return params.clone();
        }
        let mut order: Vec<(u32, u32)> = data
            .cases
            .iter()
            .enumerate()
            .flat_map(|(c, case)| (0..case.targets.len() as u32).map(move |v| (c as u32, v)))
            .collect();
        let mut grad = vec![0.0; N_PARAMS];
        for epoch in 0..epochs {
            let mut rng = seed::rng(seed::derive(&[seed, epoch as u64]));
            order.shuffle(&mut rng);
            for batch in order.chunks(self.params.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let samples = batch.iter().map(|&(c, v)| {
                    let case = &data.cases[c as usize];
                    (&case.features[v as usize], case.targets[v as usize])
                });
                let (_, n) = accumulate(&w, samples, &mut grad);
                let step = learning_rate / n as f64;
                for (wi, gi) in w.iter_mut().zip(&grad) {
                    *wi -= step * gi;
                }
            }
        }
        ModelParams::new(w, params.wire_width()).unwrap_or_else(|_| params.clone())
    }

    fn validate(&self, params: &ModelParams, data: &VoxelDataset) -> f64 {
        let scores: f64 = Region::ALL
            .iter()
            .map(|r| self.mean_region_dice(params, data, *r))
            .sum();
        (scores / Region::ALL.len() as f64).clamp(0.0, 1.0)
    }

    fn predict(&self, params: &ModelParams, image: &IntensityVolume) -> LabelVolume {
        let features = features_for(image);
        let template = LabelVolume::zeros(*image.geometry());
        self.predict_case(params, &features, &template)
    }
}
