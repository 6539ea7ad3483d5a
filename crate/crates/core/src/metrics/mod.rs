//! Per-case overlap and boundary-distance metrics on binary masks.
//!
//! * Dice similarity coefficient: `2|GT ∩ PM| / (|GT| + |PM|)`.
//! * HD95: the larger of the two directed 95th-percentile nearest-surface
//!   distances between the mask contours, in millimeters.
//!
//! Contours are foreground voxels with at least one background 6-neighbor or
//! touching the volume border, represented by voxel centers. Percentiles use
//! the nearest-rank rule (no interpolation).
//!
//! Empty-mask policy: two empty masks agree perfectly (DSC 1, HD95 0). When
//! exactly one mask is empty, HD95 is a configurable penalty defaulting to
//! the distance between opposite corner voxels of the volume.

mod nearest;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::{BinaryMask, LabelVolume, Region, RegionMapping};

pub use nearest::NearestNeighbors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "DSC")]
    Dice,
    #[serde(rename = "HD95")]
    Hd95,
}

impl MetricKind {
    pub const ALL: [MetricKind; 2] = [MetricKind::Dice, MetricKind::Hd95];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Dice => "DSC",
            MetricKind::Hd95 => "HD95",
        }
    }

    /// Whether larger values are better.
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Dice)
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DSC" | "DICE" => Ok(MetricKind::Dice),
            "HD95" => Ok(MetricKind::Hd95),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    /// Set when an empty-mask policy produced the value.
    pub degenerate: bool,
}

/// HD95 settings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HausdorffConfig {
    /// Value reported when exactly one mask is empty. `None` uses the
    /// volume diagonal.
    pub empty_penalty: Option<f64>,
    /// Percentile in (0, 100]; `None` means 95.
    pub percentile: Option<f64>,
}

impl HausdorffConfig {
    pub fn penalty_for(&self, mask: &BinaryMask) -> f64 {
        self.empty_penalty
            .unwrap_or_else(|| mask.geometry().diagonal())
    }

    fn percentile(&self) -> f64 {
        self.percentile.unwrap_or(95.0)
    }
}

/// Surface voxel centers in millimeters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurfacePointSet {
    points: Vec<[f64; 3]>,
}

impl SurfacePointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidVolume("surface points must be finite".into()));
        }
        let mut sorted: Vec<[u64; 3]> = points
            .iter()
            .map(|p| [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()])
            .collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidVolume("surface points must be distinct".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn dice(pm: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    pm.geometry().ensure_same(gt.geometry())?;
    let mut inter = 0usize;
    let mut n_pm = 0usize;
    let mut n_gt = 0usize;
    for (&p, &g) in pm.data().iter().zip(gt.data()) {
        n_pm += p as usize;
        n_gt += g as usize;
        inter += (p && g) as usize;
    }
    if n_pm + n_gt == 0 {
        return Ok(MetricValue {
            kind: MetricKind::Dice,
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(MetricValue {
        kind: MetricKind::Dice,
        value: (2 * inter) as f64 / (n_pm + n_gt) as f64,
        degenerate: false,
    })
}

/// Foreground voxels on the mask boundary under 6-connectivity.
pub fn surface_voxels(mask: &BinaryMask) -> SurfacePointSet {
    let g = mask.geometry();
    let [nx, ny, nz] = g.dims;
    let data = mask.data();
    let mut points = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                if !data[i] {
                    continue;
                }
                let on_border =
                    x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                let boundary = on_border
                    || !data[i - 1]
                    || !data[i + 1]
                    || !data[i - nx]
                    || !data[i + nx]
                    || !data[i - nx * ny]
                    || !data[i + nx * ny];
                if boundary {
                    points.push(g.position(i));
                }
            }
        }
    }
    SurfacePointSet { points }
}

/// 1-based nearest-rank index `ceil(p/100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    let rank = (p * n as f64 / 100.0).ceil();
    (rank.max(1.0) as usize).min(n)
}

fn check_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Config(format!("percentile must be in (0, 100], got {p}")));
    }
    Ok(())
}

/// Nearest-rank `p`-th percentile of distances from each point of `a` to its
/// nearest point in `b`.
pub fn directed_percentile_distance(
    a: &SurfacePointSet,
    b: &SurfacePointSet,
    p: f64,
) -> Result<f64> {
    check_percentile(p)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let index = NearestNeighbors::new(b.points());
    let mut d: Vec<f64> = a.points().iter().map(|q| index.nearest_distance(q)).collect();
    let k = nearest_rank(p, d.len());
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

pub fn hd95(pm: &BinaryMask, gt: &BinaryMask) -> Result<MetricValue> {
    hd95_with(pm, gt, &HausdorffConfig::default())
}

pub fn hd95_with(pm: &BinaryMask, gt: &BinaryMask, config: &HausdorffConfig) -> Result<MetricValue> {
    pm.geometry().ensure_same(gt.geometry())?;
    let p = config.percentile();
    check_percentile(p)?;
    let (pm_empty, gt_empty) = (pm.is_empty(), gt.is_empty());
    let value = |value, degenerate| MetricValue {
        kind: MetricKind::Hd95,
        value,
        degenerate,
    };
    match (pm_empty, gt_empty) {
        (true, true) => return Ok(value(0.0, true)),
        (true, false) | (false, true) => return Ok(value(config.penalty_for(gt), true)),
        _ => {}
    }
    let a = surface_voxels(pm);
    let b = surface_voxels(gt);
    let forward = directed_percentile_distance(&a, &b, p)?;
    let backward = directed_percentile_distance(&b, &a, p)?;
    Ok(value(forward.max(backward), false))
}

/// Config for scoring a full case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub regions: RegionMapping,
    pub hausdorff: HausdorffConfig,
}

/// One metric for one region of a case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    pub region: Region,
    pub metric: MetricValue,
}

/// DSC and HD95 for ET, TC and WT, in that order.
pub fn evaluate_case(
    prediction: &LabelVolume,
    truth: &LabelVolume,
    config: &EvaluationConfig,
) -> Result<Vec<RegionScore>> {
    prediction.geometry().ensure_same(truth.geometry())?;
    let mut out = Vec::with_capacity(6);
    for region in Region::ALL {
        let pm = config.regions.mask(prediction, region);
        let gt = config.regions.mask(truth, region);
        out.push(RegionScore {
            region,
            metric: dice(&pm, &gt)?,
        });
        out.push(RegionScore {
            region,
            metric: hd95_with(&pm, &gt, &config.hausdorff)?,
        });
    }
    Ok(out)
}
