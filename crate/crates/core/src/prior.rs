//! Edge-map prior and network input assembly.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{resize_bilinear, sigmoid};

/// Where the edge channel comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMode {
    /// `<sample-id>.edge.png` files next to the data.
    Precomputed,
    /// A holistically-nested edge network loaded from a safetensors file.
    LearnedEdgeDetector,
    /// Sobel magnitude, non-maximum suppression and hysteresis.
    #[default]
    ClassicalFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mode: EdgeMode,
    /// Binarisation threshold in (0, 1).
    pub threshold: f64,
    /// Weights for the learned detector.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mode: EdgeMode::default(),
            threshold: 0.5,
            checkpoint: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "prior.threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.mode == EdgeMode::LearnedEdgeDetector && self.checkpoint.is_none() {
            return Err(Error::Config("learned-edge-detector mode needs prior.checkpoint".into()));
        }
        Ok(())
    }
}

/// Ready-to-run edge detector.
#[derive(Debug)]
pub enum EdgeDetector {
    Precomputed,
    Classical { threshold: f64 },
    Learned { net: Box<HedNet>, threshold: f64 },
}

impl EdgeDetector {
    pub fn from_config(cfg: &PriorConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.mode {
            EdgeMode::Precomputed => Self::Precomputed,
            EdgeMode::ClassicalFallback => Self::Classical {
                threshold: cfg.threshold,
            },
            EdgeMode::LearnedEdgeDetector => {
                let path = cfg.checkpoint.as_ref().expect("validated");
                Self::Learned {
                    net: Box::new(HedNet::load(path, device)?),
                    threshold: cfg.threshold,
                }
            }
        })
    }

    pub fn is_precomputed(&self) -> bool {
        matches!(self, Self::Precomputed)
    }

    /// Binary (0/1) edge map of `rgb`.
    pub fn compute(&self, rgb: &RgbImage) -> Result<GrayImage> {
        match self {
            Self::Precomputed => Err(Error::InvalidArgument(
                "precomputed edge maps are read from disk, not computed".into(),
            )),
            Self::Classical { threshold } => Ok(classical_edges(rgb, *threshold)),
            Self::Learned { net, threshold } => {
                let p = net.probabilities(rgb)?;
                let data = p.iter().map(|&v| u8::from(f64::from(v) >= *threshold)).collect();
                Ok(GrayImage::from_raw(rgb.width(), rgb.height(), data).expect("sized"))
            }
        }
    }
}

/// Path of the stored edge map for a sample id.
pub fn edge_path(dir: &Path, sample_id: &str) -> PathBuf {
    dir.join(format!("{sample_id}.edge.png"))
}

/// Reads a stored 0/255 edge map as 0/1.
pub fn load_edge_map(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    Ok(to_binary(&img))
}

/// Writes a 0/1 edge map as 0/255.
pub fn save_edge_map(path: &Path, edges: &GrayImage) -> Result<()> {
    let mut out = edges.clone();
    out.pixels_mut().for_each(|p| p.0[0] = if p.0[0] > 0 { 255 } else { 0 });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    out.save(path).map_err(|e| Error::image(path, e))
}

pub(crate) fn to_binary(img: &GrayImage) -> GrayImage {
    let mut out = img.clone();
    out.pixels_mut().for_each(|p| p.0[0] = u8::from(p.0[0] >= 128));
    out
}

fn luminance(rgb: &RgbImage) -> Vec<f64> {
    rgb.pixels()
        .map(|p| 0.299 * f64::from(p.0[0]) + 0.587 * f64::from(p.0[1]) + 0.114 * f64::from(p.0[2]))
        .collect()
}

/// Gradient-magnitude edges with hysteresis.
///
/// Edge strength is the Sobel magnitude divided by that of a 128-level step
/// (4·128), so `threshold` 0.5 keeps edges steeper than a 64-level step.
/// Pixels at or above `threshold` seed edges that grow through 8-connected
/// pixels at or above `threshold / 2`.
pub fn classical_edges(rgb: &RgbImage, threshold: f64) -> GrayImage {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let g = luminance(rgb);
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        g[r * w + c]
    };
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            let i = r as usize * w + c as usize;
            mag[i] = (gx * gx + gy * gy).sqrt() / 512.0;
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let m = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            mag[r as usize * w + c as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            let (dr, dc) = match dir[i] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            if mag[i] > 0.0 && mag[i] >= m(r + dr, c + dc) && mag[i] >= m(r - dr, c - dc) {
                thin[i] = mag[i];
            }
        }
    }
    let (high, low) = (threshold, threshold / 2.0);
    let mut out = vec![0u8; w * h];
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| thin[i] >= high).collect();
    queue.iter().for_each(|&i| out[i] = 1);
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if out[j] == 0 && thin[j] >= low {
                    out[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    GrayImage::from_raw(w as u32, h as u32, out).expect("sized")
}

/// Holistically-nested edge network (VGG-16 trunk, five side outputs, 1×1
/// fusion). Weights use the key names of the common PyTorch port
/// (`netVggOne.0.weight`, …, `netScoreOne.weight`, …, `netCombine.0.weight`),
/// stored as safetensors.
pub struct HedNet {
    weights: HashMap<String, Tensor>,
    device: Device,
}

impl std::fmt::Debug for HedNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HedNet").field("tensors", &self.weights.len()).finish()
    }
}

const HED_STAGES: [(&str, &[usize]); 5] = [
    ("netVggOne", &[0, 2]),
    ("netVggTwo", &[1, 3]),
    ("netVggThree", &[1, 3, 5]),
    ("netVggFour", &[1, 3, 5]),
    ("netVggFive", &[1, 3, 5]),
];
const HED_SCORES: [&str; 5] = ["netScoreOne", "netScoreTwo", "netScoreThree", "netScoreFour", "netScoreFive"];
// BGR channel means of the original Caffe model, on the 0–255 scale.
const HED_MEAN_BGR: [f32; 3] = [104.006_99, 116.668_77, 122.678_92];

impl HedNet {
    /// Every key the network reads.
    pub fn required_keys() -> Vec<String> {
        let mut keys = Vec::new();
        for (stage, idx) in HED_STAGES {
            for i in idx {
                keys.push(format!("{stage}.{i}.weight"));
                keys.push(format!("{stage}.{i}.bias"));
            }
        }
        for s in HED_SCORES {
            keys.push(format!("{s}.weight"));
            keys.push(format!("{s}.bias"));
        }
        keys.push("netCombine.0.weight".into());
        keys.push("netCombine.0.bias".into());
        keys
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: "edge-detector checkpoint not found".into(),
            });
        }
        let weights = candle_core::safetensors::load(path, device).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_tensors(weights, device).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn from_tensors(weights: HashMap<String, Tensor>, device: &Device) -> Result<Self> {
        if let Some(k) = Self::required_keys().into_iter().find(|k| !weights.contains_key(k)) {
            return Err(Error::Checkpoint {
                path: PathBuf::new(),
                reason: format!("missing tensor `{k}`"),
            });
        }
        let weights = weights
            .into_iter()
            .map(|(k, v)| Ok((k, v.to_dtype(DType::F32)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            weights,
            device: device.clone(),
        })
    }

    fn conv(&self, x: &Tensor, key: &str) -> Result<Tensor> {
        let w = &self.weights[&format!("{key}.weight")];
        let b = &self.weights[&format!("{key}.bias")];
        let pad = w.dim(2)? / 2;
        let y = x.conv2d(w, pad, 1, 1, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, b.elem_count(), 1, 1))?)?)
    }

    /// Edge probability per pixel, row-major.
    pub fn probabilities(&self, rgb: &RgbImage) -> Result<Vec<f32>> {
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut data = vec![0f32; 3 * h * w];
        for (i, p) in rgb.pixels().enumerate() {
            for (c, src) in [2usize, 1, 0].into_iter().enumerate() {
                data[c * h * w + i] = f32::from(p.0[src]) - HED_MEAN_BGR[c];
            }
        }
        let mut x = Tensor::from_vec(data, (1, 3, h, w), &self.device)?;
        let mut scores = Vec::with_capacity(5);
        for (k, (stage, idx)) in HED_STAGES.iter().enumerate() {
            if k > 0 {
                x = x.max_pool2d(2)?;
            }
            for i in *idx {
                x = self.conv(&x, &format!("{stage}.{i}"))?.relu()?;
            }
            let s = self.conv(&x, HED_SCORES[k])?;
            scores.push(resize_bilinear(&s, h, w)?);
        }
        let fused = self.conv(&Tensor::cat(&scores, 1)?, "netCombine.0")?;
        Ok(sigmoid(&fused)?.flatten_all()?.to_vec1::<f32>()?)
    }
}

/// Network input in channel-major order: RGB scaled by `v / 127.5 − 1`, then
/// the edge bit mapped to ±1 when an edge map is given.
pub fn assemble_input(rgb: &RgbImage, edges: Option<&GrayImage>) -> Result<Vec<f32>> {
    let (w, h) = rgb.dimensions();
    let n = (w * h) as usize;
    let channels = if edges.is_some() { 4 } else { 3 };
    let mut out = vec![0f32; channels * n];
    for (i, p) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out[c * n + i] = f32::from(p.0[c]) / 127.5 - 1.0;
        }
    }
    if let Some(e) = edges {
        if e.dimensions() != (w, h) {
            return Err(Error::Shape(format!(
                "edge map is {:?}, image is {:?}",
                e.dimensions(),
                (w, h)
            )));
        }
        for (i, Luma([v])) in e.pixels().enumerate() {
            if *v > 1 {
                return Err(Error::InvalidArgument(format!("edge map must be 0/1, found {v}")));
            }
            out[3 * n + i] = if *v == 1 { 1.0 } else { -1.0 };
        }
    }
    Ok(out)
}
