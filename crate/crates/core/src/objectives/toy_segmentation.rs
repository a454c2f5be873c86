//! Toy volumetric segmentation task scored by Dice.
//!
//! Each case is a noisy intensity volume with a binary ground-truth mask
//! (spheres and boxes at 0.7 on a 0.3 background, Gaussian noise 0.2). The
//! "trainer" augments the input with the strategy's policy and segments it
//! with a fixed threshold. The learning-rate coordinate stands in for
//! calibration quality: the threshold is `0.5 + 0.5·(lr − 0.4)` in normalized
//! units, so `lr = 0.4` is best. Smoothing removes noise and raises Dice;
//! added noise and sharpening lower it.
//!
//! Reward is the mean over cases of the mean over augmentation draws of the
//! foreground Dice.

use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dice::{dice_score, LabelVolume};
use super::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};
use crate::augmentation::{apply_policy, AugmentationPolicy, Volume3D, TRANSFORM_NAMES};
use crate::rng::rng_from_seed;
use crate::space::SearchSpace;

pub const BEST_LR: f64 = 0.4;
const DRAWS_PER_CASE: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCase {
    pub image: Volume3D,
    pub mask: LabelVolume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyFixture {
    pub cases: Vec<ToyCase>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    cases: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    image: String,
    mask: String,
}

impl ToyFixture {
    /// Deterministic fixture: `count` cases of `size³` voxels.
    pub fn generate(count: usize, size: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let cases = (0..count)
            .map(|i| {
                let s = size as f64;
                let center = [
                    rng.random_range(0.35 * s..0.65 * s),
                    rng.random_range(0.35 * s..0.65 * s),
                    rng.random_range(0.35 * s..0.65 * s),
                ];
                let radius = rng.random_range(0.18 * s..0.3 * s);
                let sphere = i % 2 == 0;
                let mut labels = Vec::with_capacity(size * size * size);
                let mut voxels = Vec::with_capacity(size * size * size);
                for z in 0..size {
                    for y in 0..size {
                        for x in 0..size {
                            let d = [
                                x as f64 - center[0],
                                y as f64 - center[1],
                                z as f64 - center[2],
                            ];
                            let inside = if sphere {
                                d.iter().map(|v| v * v).sum::<f64>() <= radius * radius
                            } else {
                                d.iter().all(|v| v.abs() <= radius)
                            };
                            labels.push(inside as u16);
                            let base = if inside { 0.7 } else { 0.3 };
                            let v: f64 = base + noise.sample(&mut rng);
                            voxels.push(v.clamp(0.0, 1.0) as f32);
                        }
                    }
                }
                let shape = (size, size, size);
                ToyCase {
                    image: Volume3D::new(shape, voxels).expect("finite voxels"),
                    mask: LabelVolume::new(shape, labels).expect("shape matches"),
                }
            })
            .collect();
        Self { cases }
    }

    /// Fixture bundled with the crate.
    pub fn builtin() -> Self {
        Self::generate(4, 16, 2024)
    }

    /// Writes `manifest.json` plus one image and one mask file per case.
    pub fn save(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |e: &dyn std::fmt::Display| EvalError::fixture(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(&e))?;
        let mut entries = Vec::new();
        for (i, case) in self.cases.iter().enumerate() {
            let image = format!("case{i:02}_image.svol");
            let mask = format!("case{i:02}_mask.svol");
            case.image.save(&dir.join(&image)).map_err(|e| io(&e))?;
            let mask_vol = Volume3D::new(
                case.mask.shape(),
                case.mask.labels().iter().map(|&l| l as f32).collect(),
            )
            .expect("labels are finite");
            mask_vol.save(&dir.join(&mask)).map_err(|e| io(&e))?;
            entries.push(ManifestEntry { image, mask });
        }
        let manifest = serde_json::to_string_pretty(&Manifest { cases: entries }).unwrap();
        std::fs::write(dir.join("manifest.json"), manifest + "\n").map_err(|e| io(&e))
    }

    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| EvalError::fixture(format!("{}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| EvalError::fixture(format!("{}: {e}", manifest_path.display())))?;
        if manifest.cases.is_empty() {
            return Err(EvalError::fixture(format!(
                "{}: no cases listed",
                manifest_path.display()
            )));
        }
        let mut cases = Vec::new();
        for entry in manifest.cases {
            let load = |name: &str| {
                let p = dir.join(name);
                Volume3D::load(&p).map_err(|e| EvalError::fixture(format!("{}: {e}", p.display())))
            };
            let image = load(&entry.image)?;
            let mask_vol = load(&entry.mask)?;
            if mask_vol.shape() != image.shape() {
                return Err(EvalError::fixture(format!(
                    "{}: mask shape differs from image",
                    entry.mask
                )));
            }
            let mut labels = Vec::with_capacity(mask_vol.len());
            for &v in mask_vol.voxels() {
                if v != 0.0 && v != 1.0 {
                    return Err(EvalError::fixture(format!(
                        "{}: mask values must be 0 or 1",
                        entry.mask
                    )));
                }
                labels.push(v as u16);
            }
            cases.push(ToyCase {
                image,
                mask: LabelVolume::new(mask_vol.shape(), labels).expect("shape matches"),
            });
        }
        Ok(Self { cases })
    }
}

/// Maps search-space coordinates onto the toy trainer's knobs by parameter name.
pub struct ToySegmentationEvaluator {
    fixture: ToyFixture,
    prob_index: [Option<usize>; 5],
    lr_index: Option<usize>,
}

impl ToySegmentationEvaluator {
    /// Probabilities are read from parameters named after the transforms and the
    /// learning rate from `lr_param`. Missing transforms are never applied; a
    /// missing learning rate means perfect calibration.
    pub fn new(fixture: ToyFixture, space: &SearchSpace, lr_param: &str) -> Self {
        let find = |name: &str| space.names().position(|n| n == name);
        Self {
            fixture,
            prob_index: TRANSFORM_NAMES.map(find),
            lr_index: find(lr_param),
        }
    }

    pub fn threshold(lr: f64) -> f32 {
        (0.5 + 0.5 * (lr - BEST_LR)) as f32
    }

    pub fn segment(image: &Volume3D, threshold: f32) -> LabelVolume {
        LabelVolume::new(
            image.shape(),
            image
                .voxels()
                .iter()
                .map(|&v| (v > threshold) as u16)
                .collect(),
        )
        .expect("shape preserved")
    }
}

impl Evaluator for ToySegmentationEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let start = Instant::now();
        let x = request.strategy.values();
        let pick = |idx: Option<usize>| -> Result<Option<f64>, EvalError> {
            match idx {
                None => Ok(None),
                Some(i) => x
                    .get(i)
                    .copied()
                    .map(Some)
                    .ok_or_else(|| EvalError::invalid("strategy shorter than search space")),
            }
        };
        let mut probs = [0.0; 5];
        for (p, idx) in probs.iter_mut().zip(self.prob_index) {
            *p = pick(idx)?.unwrap_or(0.0);
        }
        let policy =
            AugmentationPolicy::new(probs).map_err(|e| EvalError::invalid(e.to_string()))?;
        let threshold = Self::threshold(pick(self.lr_index)?.unwrap_or(BEST_LR));

        let mut rng = rng_from_seed(request.seed);
        let mut total = 0.0;
        let mut per_case = Vec::with_capacity(self.fixture.cases.len());
        for case in &self.fixture.cases {
            let mut case_sum = 0.0;
            for _ in 0..DRAWS_PER_CASE {
                let (aug, _) = apply_policy(&case.image, &policy, rng.random());
                let pred = Self::segment(&aug, threshold);
                case_sum += dice_score(&pred, &case.mask, 2)
                    .map_err(|e| EvalError::fixture(e.to_string()))?;
            }
            let case_dice = case_sum / DRAWS_PER_CASE as f64;
            per_case.push(case_dice);
            total += case_dice;
        }
        let reward = total / self.fixture.cases.len() as f64;
        let mut result = EvaluationResult::new(request.trial_id, reward, start.elapsed());
        result
            .detail
            .insert("case_dice".into(), serde_json::json!(per_case));
        result
            .detail
            .insert("threshold".into(), serde_json::json!(threshold));
        Ok(result)
    }
}
