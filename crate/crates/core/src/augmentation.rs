//! Probability-gated intensity augmentations on 3D volumes.
//!
//! Five transforms run in a fixed order: sharpen, smooth, Gaussian noise,
//! contrast, intensity shift. Transform `i` fires when a uniform draw
//! `r_i` falls below its probability `p_i`. Magnitudes are fixed; only the
//! probabilities are searched. Every transform clamps its output to `[0, 1]`.

use std::io::{self, Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng::rng_from_seed;

pub const NUM_TRANSFORMS: usize = 5;

/// Transform names in application order.
pub const TRANSFORM_NAMES: [&str; NUM_TRANSFORMS] = [
    "sharpen",
    "smooth",
    "gaussian_noise",
    "contrast",
    "intensity_shift",
];

const SMOOTH_KERNEL: [f32; 3] = [0.25, 0.5, 0.25];

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume shape {0:?} must be positive in every axis")]
    BadShape((usize, usize, usize)),
    #[error("volume has {actual} voxels, shape requires {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("voxel {0} is not finite")]
    NonFinite(usize),
    #[error("probability {index} = {value} outside [0, 1]")]
    BadProbability { index: usize, value: f64 },
    #[error("not a raw volume file (bad magic)")]
    BadMagic,
    #[error("unsupported raw volume version {0}")]
    UnsupportedVersion(u32),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Dense scalar volume, x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    shape: (usize, usize, usize),
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(shape: (usize, usize, usize), voxels: Vec<f32>) -> Result<Self, VolumeError> {
        let (nx, ny, nz) = shape;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(VolumeError::BadShape(shape));
        }
        let expected = nx * ny * nz;
        if voxels.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                actual: voxels.len(),
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self { shape, voxels })
    }

    pub fn filled(shape: (usize, usize, usize), value: f32) -> Result<Self, VolumeError> {
        Self::new(shape, vec![value; shape.0 * shape.1 * shape.2])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.shape.1 + y) * self.shape.0 + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            voxels: self.voxels.iter().map(|&v| f(v)).collect(),
        }
    }

    fn clamped(mut self) -> Self {
        for v in &mut self.voxels {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Writes the raw format: magic, version, nx, ny, nz, then little-endian f32 voxels.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<(), VolumeError> {
        w.write_all(RAW_MAGIC)?;
        for v in [
            RAW_VERSION,
            self.shape.0 as u32,
            self.shape.1 as u32,
            self.shape.2 as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.voxels.len() * 4);
        for v in &self.voxels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self, VolumeError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != RAW_MAGIC {
            return Err(VolumeError::BadMagic);
        }
        let mut word = [0u8; 4];
        let mut next = |r: &mut R| -> Result<u32, VolumeError> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next(&mut r)?;
        if version != RAW_VERSION {
            return Err(VolumeError::UnsupportedVersion(version));
        }
        let shape = (
            next(&mut r)? as usize,
            next(&mut r)? as usize,
            next(&mut r)? as usize,
        );
        let n = shape
            .0
            .checked_mul(shape.1)
            .and_then(|v| v.checked_mul(shape.2))
            .filter(|&n| n > 0 && n <= 1 << 28)
            .ok_or(VolumeError::BadShape(shape))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(VolumeError::Io(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{} trailing bytes after voxel data", rest.len()),
            )));
        }
        let voxels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(shape, voxels)
    }

    pub fn save(&self, path: &Path) -> Result<(), VolumeError> {
        let file = std::fs::File::create(path)?;
        self.write_raw(io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, VolumeError> {
        let file = std::fs::File::open(path)?;
        Self::read_raw(io::BufReader::new(file))
    }
}

const RAW_MAGIC: &[u8; 4] = b"SVOL";
const RAW_VERSION: u32 = 1;

/// Fixed transform strengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Magnitudes {
    pub sharpen_amount: f32,
    pub noise_stddev: f64,
    pub contrast_range: (f64, f64),
    pub shift_range: (f64, f64),
}

impl Default for Magnitudes {
    fn default() -> Self {
        Self {
            sharpen_amount: 1.0,
            noise_stddev: 0.05,
            contrast_range: (0.7, 1.3),
            shift_range: (-0.1, 0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    probs: [f64; NUM_TRANSFORMS],
    pub magnitudes: Magnitudes,
}

impl AugmentationPolicy {
    pub fn new(probs: [f64; NUM_TRANSFORMS]) -> Result<Self, VolumeError> {
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(VolumeError::BadProbability { index, value });
            }
        }
        Ok(Self {
            probs,
            magnitudes: Magnitudes::default(),
        })
    }

    pub fn probs(&self) -> &[f64; NUM_TRANSFORMS] {
        &self.probs
    }
}

// Linear part of the smoothing filter, without clamping.
#[doc(hidden)]
pub fn smooth_unclamped(vol: &Volume3D) -> Volume3D {
    let (nx, ny, nz) = vol.shape;
    let mut cur = vol.voxels.clone();
    let mut next = vec![0.0f32; cur.len()];
    for (len, stride) in [(nx, 1), (ny, nx), (nz, nx * ny)] {
        for (i, out) in next.iter_mut().enumerate() {
            let pos = (i / stride) % len;
            let lo = if pos == 0 { i } else { i - stride };
            let hi = if pos + 1 == len { i } else { i + stride };
            *out =
                SMOOTH_KERNEL[0] * cur[lo] + SMOOTH_KERNEL[1] * cur[i] + SMOOTH_KERNEL[2] * cur[hi];
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Volume3D {
        shape: vol.shape,
        voxels: cur,
    }
}

/// Separable `[0.25, 0.5, 0.25]` filter on each axis, replicating edges.
pub fn smooth(vol: &Volume3D) -> Volume3D {
    smooth_unclamped(vol).clamped()
}

/// Unsharp mask `v + amount·(v − smooth(v))`.
pub fn sharpen(vol: &Volume3D, amount: f32) -> Volume3D {
    let blurred = smooth_unclamped(vol);
    Volume3D {
        shape: vol.shape,
        voxels: vol
            .voxels
            .iter()
            .zip(&blurred.voxels)
            .map(|(&v, &b)| v + amount * (v - b))
            .collect(),
    }
    .clamped()
}

pub fn gaussian_noise(vol: &Volume3D, stddev: f64, seed: u64) -> Volume3D {
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, stddev).expect("noise stddev is finite and non-negative");
    Volume3D {
        shape: vol.shape,
        voxels: vol
            .voxels
            .iter()
            .map(|&v| v + normal.sample(&mut rng) as f32)
            .collect(),
    }
    .clamped()
}

/// `(v − 0.5)·c + 0.5` with `c` uniform in `range`.
pub fn contrast(vol: &Volume3D, range: (f64, f64), seed: u64) -> Volume3D {
    let c = rng_from_seed(seed).random_range(range.0..=range.1) as f32;
    vol.map(|v| (v - 0.5) * c + 0.5).clamped()
}

/// `v + s` with `s` uniform in `range`.
pub fn intensity_shift(vol: &Volume3D, range: (f64, f64), seed: u64) -> Volume3D {
    let s = rng_from_seed(seed).random_range(range.0..=range.1) as f32;
    vol.map(|v| v + s).clamped()
}

/// Runs the gated pipeline. Returns the augmented volume and which transforms fired.
pub fn apply_policy(
    vol: &Volume3D,
    policy: &AugmentationPolicy,
    seed: u64,
) -> (Volume3D, [bool; NUM_TRANSFORMS]) {
    let mut rng = rng_from_seed(seed);
    let mut gates = [0.0f64; NUM_TRANSFORMS];
    let mut seeds = [0u64; NUM_TRANSFORMS];
    for i in 0..NUM_TRANSFORMS {
        gates[i] = rng.random::<f64>();
        seeds[i] = rng.random::<u64>();
    }
    let applied: [bool; NUM_TRANSFORMS] = std::array::from_fn(|i| gates[i] < policy.probs[i]);

    let m = &policy.magnitudes;
    let mut out = vol.clone();
    for (i, _) in applied.iter().enumerate().filter(|(_, &on)| on) {
        out = match i {
            0 => sharpen(&out, m.sharpen_amount),
            1 => smooth(&out),
            2 => gaussian_noise(&out, m.noise_stddev, seeds[i]),
            3 => contrast(&out, m.contrast_range, seeds[i]),
            _ => intensity_shift(&out, m.shift_range, seeds[i]),
        };
    }
    (out.clamped(), applied)
}
