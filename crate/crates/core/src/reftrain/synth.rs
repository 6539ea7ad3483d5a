//! Synthetic tumor cases: concentric spherical blobs with an ET core inside
//! label-2 and label-1 shells, and a noisy single-channel image whose class
//! means are distinct constants shifted by an institution offset.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::volumes::{
    Geometry, IntensityVolume, LabelVolume, VoxelData, LABEL_ED, LABEL_ET, LABEL_NCR,
};

/// Noise-free intensity per label, before the institution offset.
pub const INTENSITY_MEANS: [(u8, f64); 4] = [(0, 0.1), (LABEL_NCR, 0.4), (LABEL_ED, 0.7), (LABEL_ET, 1.0)];
pub const ET_MEAN: f64 = 1.0;

/// Shell boundaries as fractions of the outer blob radius.
const ET_FRACTION: f64 = 0.35;
const TC_FRACTION: f64 = 0.65;

fn mean_for(label: u8) -> f64 {
    INTENSITY_MEANS
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, m)| *m)
        .unwrap_or(0.0)
}

/// Generation parameters of one institution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstitution {
    pub id: String,
    pub n_cases: usize,
    pub geometry: Geometry,
    pub intensity_offset: f64,
    pub noise_sd: f64,
    /// Outer blob radius bounds, in voxels.
    pub radius_range: [f64; 2],
    pub seed: u64,
}

impl SyntheticInstitution {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases < 2 {
            return Err(Error::Config(format!(
                "institution {} needs at least 2 cases for a train/validation split, got {}",
                self.id, self.n_cases
            )));
        }
        if self.id.is_empty() || self.id.contains([',', ';', '/', '\\']) {
            return Err(Error::Config(format!("invalid institution id {:?}", self.id)));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 || !self.intensity_offset.is_finite() {
            return Err(Error::Config(format!(
                "institution {}: offset must be finite and noise_sd non-negative",
                self.id
            )));
        }
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "institution {}: radius range {:?} must satisfy 0 < lo <= hi",
                self.id, self.radius_range
            )));
        }
        let smallest = *self.geometry.dims.iter().min().unwrap();
        if 2.0 * hi > (smallest - 1) as f64 {
            return Err(Error::Config(format!(
                "institution {}: radius {hi} does not fit in a volume of {:?} voxels",
                self.id, self.geometry.dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Index of the first validation case: the last `ceil(n / 5)` cases are
/// held out.
pub fn split_index(n_cases: usize) -> usize {
    n_cases - n_cases.div_ceil(5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub case_id: String,
    pub institution_id: String,
    pub split: Split,
    pub image: IntensityVolume,
    pub labels: LabelVolume,
}

fn blob_labels(geometry: Geometry, center: [f64; 3], radius: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(geometry.len());
    for i in 0..geometry.len() {
        let c = geometry.coords(i);
        let d2: f64 = (0..3).map(|a| (c[a] as f64 - center[a]).powi(2)).sum();
        let d = d2.sqrt();
        out.push(if d <= ET_FRACTION * radius {
            LABEL_ET
        } else if d <= TC_FRACTION * radius {
            LABEL_ED
        } else if d <= radius {
            LABEL_NCR
        } else {
            0
        });
    }
    out
}

pub fn generate_institution(spec: &SyntheticInstitution) -> Result<Vec<SyntheticCase>> {
    spec.validate()?;
    let geometry = spec.geometry;
    let val_from = split_index(spec.n_cases);
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut cases = Vec::with_capacity(spec.n_cases);
    for idx in 0..spec.n_cases {
        // Geometry and noise use separate streams so labels depend only on
        // the seed and radius range.
        let mut shape_rng = seed::rng(seed::derive(&[spec.seed, idx as u64, Stream::Generate as u64, 0]));
        let mut noise_rng = seed::rng(seed::derive(&[spec.seed, idx as u64, Stream::Generate as u64, 1]));
        let [lo, hi] = spec.radius_range;
        let radius = if hi > lo { shape_rng.random_range(lo..=hi) } else { lo };
        let mut center = [0.0; 3];
        for a in 0..3 {
            let max = (geometry.dims[a] - 1) as f64 - radius;
            center[a] = if max > radius {
                shape_rng.random_range(radius..=max)
            } else {
                radius
            };
        }
        let labels = blob_labels(geometry, center, radius);
        let image: Vec<f32> = labels
            .iter()
            .map(|&l| {
                let mut v = mean_for(l) + spec.intensity_offset;
                if spec.noise_sd > 0.0 {
                    v += noise.sample(&mut noise_rng);
                }
                v as f32
            })
            .collect();
        cases.push(SyntheticCase {
            case_id: format!("{}_{idx:03}", spec.id),
            institution_id: spec.id.clone(),
            split: if idx >= val_from { Split::Val } else { Split::Train },
            image: IntensityVolume::new(geometry, VoxelData::F32(image))?,
            labels: LabelVolume::new(geometry, labels)?,
        });
    }
    Ok(cases)
}

/// JSON description of one institution inside a [`DataSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstitutionSpec {
    pub id: String,
    pub n_cases: usize,
    #[serde(default)]
    pub intensity_offset: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_radius")]
    pub radius_range: [f64; 2],
    /// Overrides the seed derived from the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_noise() -> f64 {
    0.05
}

fn default_radius() -> [f64; 2] {
    [4.0, 8.0]
}

fn default_dims() -> [usize; 3] {
    [24, 24, 24]
}

fn default_spacing() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

/// A synthetic dataset: shared volume geometry plus per-institution shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "default_dims")]
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
    pub institutions: Vec<InstitutionSpec>,
}

impl DataSpec {
    pub fn resolve(&self, seed: u64) -> Result<Vec<SyntheticInstitution>> {
        if self.institutions.is_empty() {
            return Err(Error::Config("data spec lists no institutions".into()));
        }
        let geometry = Geometry::new(self.dims, self.spacing)
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        self.institutions
            .iter()
            .map(|i| {
                if !seen.insert(i.id.as_str()) {
                    return Err(Error::Config(format!("duplicate institution id {}", i.id)));
                }
                let inst = SyntheticInstitution {
                    id: i.id.clone(),
                    n_cases: i.n_cases,
                    geometry,
                    intensity_offset: i.intensity_offset,
                    noise_sd: i.noise_sd,
                    radius_range: i.radius_range,
                    seed: i
                        .seed
                        .unwrap_or_else(|| seed::derive(&[seed, seed::hash_id(&i.id), Stream::Generate as u64])),
                };
                inst.validate()?;
                Ok(inst)
            })
            .collect()
    }
}

/// All cases of every institution, institution by institution.
pub fn generate_cases(spec: &DataSpec, seed: u64) -> Result<Vec<SyntheticCase>> {
    let mut out = Vec::new();
    for inst in spec.resolve(seed)? {
        out.extend(generate_institution(&inst)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{region_mask, Region};

    fn inst(offset: f64, noise: f64) -> SyntheticInstitution {
        SyntheticInstitution {
            id: "siteA".into(),
            n_cases: 5,
            geometry: Geometry::isotropic([16, 16, 16]).unwrap(),
            intensity_offset: offset,
            noise_sd: noise,
            radius_range: [3.0, 6.0],
            seed: 17,
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_institution(&inst(0.0, 0.1)).unwrap(), generate_institution(&inst(0.0, 0.1)).unwrap());
    }

    #[test]
    fn noise_free_et_intensity_is_exact() {
        let cases = generate_institution(&inst(0.25, 0.0)).unwrap();
        let expected = (ET_MEAN + 0.25) as f32;
        for c in &cases {
            let VoxelData::F32(img) = c.image.data() else { panic!() };
            let mut seen = 0;
            for (l, v) in c.labels.data().iter().zip(img) {
                if *l == LABEL_ET {
                    assert_eq!(*v, expected);
                    seen += 1;
                }
            }
            assert!(seen > 0);
        }
    }

    #[test]
    fn offset_changes_only_images() {
        let a = generate_institution(&inst(0.0, 0.05)).unwrap();
        let b = generate_institution(&inst(0.3, 0.05)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.labels, y.labels);
            let (VoxelData::F32(p), VoxelData::F32(q)) = (x.image.data(), y.image.data()) else { panic!() };
            for (u, v) in p.iter().zip(q) {
                assert!(((v - u) as f64 - 0.3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn labels_and_nesting() {
        for c in generate_institution(&inst(0.0, 0.05)).unwrap() {
            let et = region_mask(&c.labels, Region::ET);
            let tc = region_mask(&c.labels, Region::TC);
            let wt = region_mask(&c.labels, Region::WT);
            assert!(!et.is_empty());
            for i in 0..et.data().len() {
                assert!(!et.data()[i] || tc.data()[i]);
                assert!(!tc.data()[i] || wt.data()[i]);
            }
            let present: std::collections::BTreeSet<u8> = c.labels.data().iter().copied().collect();
            assert!(present.iter().all(|l| [0, 1, 2, 4].contains(l)));
        }
    }

    #[test]
    fn split_is_last_fifth() {
        let cases = generate_institution(&inst(0.0, 0.0)).unwrap();
        let splits: Vec<_> = cases.iter().map(|c| c.split).collect();
        assert_eq!(splits, vec![Split::Train, Split::Train, Split::Train, Split::Train, Split::Val]);
        assert_eq!(split_index(2), 1);
        assert_eq!(split_index(10), 8);
        assert_eq!(split_index(4), 3);
    }

    #[test]
    fn infeasible_specs() {
        let mut s = inst(0.0, 0.0);
        s.radius_range = [3.0, 8.0];
        assert!(generate_institution(&s).is_err());
        let mut s = inst(0.0, 0.0);
        s.n_cases = 1;
        assert!(generate_institution(&s).is_err());
        let mut s = inst(0.0, 0.0);
        s.noise_sd = -1.0;
        assert!(generate_institution(&s).is_err());
    }

    #[test]
    fn data_spec_defaults() {
        let spec: DataSpec =
            serde_json::from_str(r#"{"institutions":[{"id":"a","n_cases":2},{"id":"b","n_cases":3}]}"#).unwrap();
        assert_eq!(spec.dims, [24, 24, 24]);
        let insts = spec.resolve(5).unwrap();
        assert_ne!(insts[0].seed, insts[1].seed);
        assert_eq!(generate_cases(&spec, 5).unwrap().len(), 5);
        let dup: DataSpec =
            serde_json::from_str(r#"{"institutions":[{"id":"a","n_cases":2},{"id":"a","n_cases":3}]}"#).unwrap();
        assert!(dup.resolve(5).is_err());
    }
}
