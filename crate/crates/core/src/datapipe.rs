//! Dataset ingestion, splitting, augmentation and batching.

use std::path::{Path, PathBuf};

use image::{imageops, GrayImage, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{edge_path, load_edge_map, to_binary};

/// Where images, masks and optional edge maps live under a dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layout {
    pub images: String,
    pub masks: String,
    /// Accepted image extensions, lower case, without the dot.
    pub image_extensions: Vec<String>,
    pub mask_extension: String,
    /// Appended to the image stem to form the mask stem (`_mask`, `_gt`, …).
    pub mask_suffix: String,
    /// Folder of `<id>.edge.png` files, if any.
    pub edges: Option<String>,
    pub dataset: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            images: "images".into(),
            masks: "masks".into(),
            image_extensions: vec!["png".into(), "jpg".into(), "jpeg".into()],
            mask_extension: "png".into(),
            mask_suffix: String::new(),
            edges: None,
            dataset: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<PathBuf>,
    #[serde(default)]
    pub dataset: String,
}

/// A record that could not be used, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub records: Vec<Record>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Rejected>,
}

impl SampleManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the records as a JSON list with paths relative to the file.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        // Paths under the manifest's folder are stored relative to it, others absolute.
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let base = abs(path.parent().unwrap_or(Path::new("")));
        let rel = |p: &Path| {
            let p = abs(p);
            p.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(p)
        };
        let records: Vec<Record> = self
            .records
            .iter()
            .map(|r| Record {
                image: rel(&r.image),
                mask: rel(&r.mask),
                edge: r.edge.as_deref().map(rel),
                ..r.clone()
            })
            .collect();
        let json = serde_json::to_string_pretty(&records).expect("records serialise");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Reads a JSON record list; relative paths resolve against the file.
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records: Vec<Record> =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut records {
            r.image = base.join(&r.image);
            r.mask = base.join(&r.mask);
            r.edge = r.edge.as_ref().map(|e| base.join(e));
        }
        Ok(Self {
            records,
            rejected: Vec::new(),
        })
    }
}

fn dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::image(path, e))
}

/// Pairs images with masks under `root`, in lexicographic order of file
/// name. Images without a mask and pairs whose sizes differ are listed in
/// [`SampleManifest::rejected`].
pub fn load_manifest(root: &Path, layout: &Layout) -> Result<SampleManifest> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let image_dir = root.join(&layout.images);
    let mut manifest = SampleManifest::default();
    if !image_dir.is_dir() {
        log::warn!("{} has no `{}` folder; manifest is empty", root.display(), layout.images);
        return Ok(manifest);
    }
    let mut images: Vec<PathBuf> = std::fs::read_dir(&image_dir)
        .map_err(|e| Error::io(&image_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| layout.image_extensions.iter().any(|x| x.eq_ignore_ascii_case(e)))
        })
        .collect();
    images.sort();
    for image in images {
        let id = image.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mask = root
            .join(&layout.masks)
            .join(format!("{id}{}.{}", layout.mask_suffix, layout.mask_extension));
        if !mask.is_file() {
            manifest.rejected.push(Rejected {
                path: image.clone(),
                reason: format!("no mask at {}", mask.display()),
            });
            continue;
        }
        let (di, dm) = (dimensions(&image)?, dimensions(&mask)?);
        if di != dm {
            manifest.rejected.push(Rejected {
                path: image.clone(),
                reason: format!(
                    "image is {}×{} but mask {} is {}×{}",
                    di.0,
                    di.1,
                    mask.display(),
                    dm.0,
                    dm.1
                ),
            });
            continue;
        }
        let edge = layout
            .edges
            .as_ref()
            .map(|d| edge_path(&root.join(d), &id))
            .filter(|p| p.is_file());
        manifest.records.push(Record {
            id,
            image,
            mask,
            edge,
            dataset: layout.dataset.clone(),
        });
    }
    if manifest.records.is_empty() {
        log::warn!("no usable samples under {}", root.display());
    }
    for r in &manifest.rejected {
        log::warn!("rejected {}: {}", r.path.display(), r.reason);
    }
    Ok(manifest)
}

/// An image with its 0/1 mask and optional 0/1 edge map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub mask: GrayImage,
    pub edge: Option<GrayImage>,
}

impl Sample {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn foreground(&self) -> u64 {
        self.mask.pixels().filter(|p| p.0[0] == 1).count() as u64
    }

    /// Mask pixels as a row-major 0/1 vector.
    pub fn mask_bits(&self) -> Vec<u8> {
        self.mask.as_raw().clone()
    }
}

/// Loads a record; masks are binarised at 128.
pub fn load_sample(record: &Record) -> Result<Sample> {
    let image = image::open(&record.image)
        .map_err(|e| Error::image(&record.image, e))?
        .to_rgb8();
    let mask = to_binary(
        &image::open(&record.mask)
            .map_err(|e| Error::image(&record.mask, e))?
            .to_luma8(),
    );
    if image.dimensions() != mask.dimensions() {
        return Err(Error::Data(format!(
            "{}: image is {:?}, mask is {:?}",
            record.id,
            image.dimensions(),
            mask.dimensions()
        )));
    }
    let edge = record.edge.as_deref().map(load_edge_map).transpose()?;
    if let Some(e) = &edge {
        if e.dimensions() != image.dimensions() {
            return Err(Error::Data(format!("{}: edge map size differs from the image", record.id)));
        }
    }
    Ok(Sample {
        id: record.id.clone(),
        image,
        mask,
        edge,
    })
}

pub fn load_samples(records: &[Record]) -> Result<Vec<Sample>> {
    records.iter().map(load_sample).collect()
}

/// Seeded shuffle, then the first `floor(n · fraction)` records form the
/// test split. Both halves come back in their original relative order.
pub fn split_holdout(records: &[Record], fraction: f64, seed: u64) -> Result<(Vec<Record>, Vec<Record>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} is outside (0, 1)")));
    }
    let n = records.len();
    let n_test = (n as f64 * fraction + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    order[..n_test].iter().for_each(|&i| is_test[i] = true);
    let (test, train): (Vec<_>, Vec<_>) = records.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    Ok((train.into_iter().map(|(r, _)| r).collect(), test.into_iter().map(|(r, _)| r).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Rotation angle is drawn from `[0, rotation_max]` degrees.
    pub rotation_max: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub crop_size: u32,
    pub crops_per_image: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max: 90.0,
            horizontal_flip: true,
            vertical_flip: true,
            crop_size: 256,
            crops_per_image: 1,
        }
    }
}

impl AugmentConfig {
    /// No rotation or flips; one crop of the given size.
    pub fn identity(crop_size: u32) -> Self {
        Self {
            rotation_max: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            crop_size,
            crops_per_image: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=90.0).contains(&self.rotation_max) {
            return Err(Error::Config(format!(
                "rotation_max must lie in [0, 90], got {}",
                self.rotation_max
            )));
        }
        if self.crop_size == 0 || self.crops_per_image == 0 {
            return Err(Error::Config("crop_size and crops_per_image must be positive".into()));
        }
        Ok(())
    }
}

// Symmetric reflection of a continuous coordinate into [0, n-1].
fn reflect(v: f64, n: u32) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = f64::from(n - 1);
    let period = 2.0 * last;
    let m = v.rem_euclid(period);
    if m > last {
        period - m
    } else {
        m
    }
}

fn rotation_source(deg: f64, w: u32, h: u32) -> impl Fn(u32, u32) -> (f64, f64) {
    let (s, c) = deg.to_radians().sin_cos();
    let (cx, cy) = (f64::from(w - 1) / 2.0, f64::from(h - 1) / 2.0);
    move |x, y| {
        let (dx, dy) = (f64::from(x) - cx, f64::from(y) - cy);
        (reflect(c * dx + s * dy + cx, w), reflect(-s * dx + c * dy + cy, h))
    }
}

fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = img.dimensions();
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - f64::from(x0), y - f64::from(y0));
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |xx, yy| f64::from(img.get_pixel(xx, yy).0[c]);
        let v = (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1));
        *o = v.round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

fn sample_nearest(img: &GrayImage, x: f64, y: f64) -> Luma<u8> {
    let (w, h) = img.dimensions();
    *img.get_pixel((x.round() as u32).min(w - 1), (y.round() as u32).min(h - 1))
}

/// Rotates about the image centre by `deg` (counter-clockwise), filling from
/// a mirrored copy. The image is interpolated bilinearly, mask and edge map
/// by nearest neighbour.
pub fn rotate(sample: &Sample, deg: f64) -> Sample {
    let (w, h) = sample.image.dimensions();
    let src = rotation_source(deg, w, h);
    let nearest = |m: &GrayImage| {
        GrayImage::from_fn(w, h, |x, y| {
            let (sx, sy) = src(x, y);
            sample_nearest(m, sx, sy)
        })
    };
    Sample {
        id: sample.id.clone(),
        image: RgbImage::from_fn(w, h, |x, y| {
            let (sx, sy) = src(x, y);
            sample_bilinear(&sample.image, sx, sy)
        }),
        mask: nearest(&sample.mask),
        edge: sample.edge.as_ref().map(nearest),
    }
}

/// Largest axis-aligned rectangle inside a `w`×`h` rectangle rotated by `deg`.
pub fn valid_region(w: u32, h: u32, deg: f64) -> (u32, u32) {
    let (w, h) = (f64::from(w), f64::from(h));
    let (sin_a, cos_a) = (deg.to_radians().sin().abs(), deg.to_radians().cos().abs());
    let (long, short) = if w >= h { (w, h) } else { (h, w) };
    let (wr, hr) = if short <= 2.0 * sin_a * cos_a * long || (sin_a - cos_a).abs() < 1e-10 {
        let x = 0.5 * short;
        if w >= h {
            (x / sin_a, x / cos_a)
        } else {
            (x / cos_a, x / sin_a)
        }
    } else {
        let cos_2a = cos_a * cos_a - sin_a * sin_a;
        ((w * cos_a - h * sin_a) / cos_2a, (h * cos_a - w * sin_a) / cos_2a)
    };
    ((wr + 1e-6).floor().min(w) as u32, (hr + 1e-6).floor().min(h) as u32)
}

pub fn crop(sample: &Sample, x: u32, y: u32, w: u32, h: u32) -> Sample {
    Sample {
        id: sample.id.clone(),
        image: imageops::crop_imm(&sample.image, x, y, w, h).to_image(),
        mask: imageops::crop_imm(&sample.mask, x, y, w, h).to_image(),
        edge: sample.edge.as_ref().map(|e| imageops::crop_imm(e, x, y, w, h).to_image()),
    }
}

pub fn hflip(sample: &Sample) -> Sample {
    Sample {
        id: sample.id.clone(),
        image: imageops::flip_horizontal(&sample.image),
        mask: imageops::flip_horizontal(&sample.mask),
        edge: sample.edge.as_ref().map(imageops::flip_horizontal),
    }
}

pub fn vflip(sample: &Sample) -> Sample {
    Sample {
        id: sample.id.clone(),
        image: imageops::flip_vertical(&sample.image),
        mask: imageops::flip_vertical(&sample.mask),
        edge: sample.edge.as_ref().map(imageops::flip_vertical),
    }
}

/// Scales up so the shorter side is at least `min_side`.
pub fn resize_up(sample: &Sample, min_side: u32) -> Sample {
    let (w, h) = sample.image.dimensions();
    let scale = f64::from(min_side) / f64::from(w.min(h));
    let (nw, nh) = (
        ((f64::from(w) * scale).ceil() as u32).max(min_side),
        ((f64::from(h) * scale).ceil() as u32).max(min_side),
    );
    let nearest = |m: &GrayImage| imageops::resize(m, nw, nh, imageops::FilterType::Nearest);
    Sample {
        id: sample.id.clone(),
        image: imageops::resize(&sample.image, nw, nh, imageops::FilterType::Triangle),
        mask: nearest(&sample.mask),
        edge: sample.edge.as_ref().map(nearest),
    }
}

/// Rotation by an angle drawn from `[0, rotation_max]`, crop to the valid
/// region, then `crops_per_image` joint random crops, each flipped at random
/// as configured.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let deg = if cfg.rotation_max > 0.0 {
        rng.random_range(0.0..=cfg.rotation_max)
    } else {
        0.0
    };
    let mut base = if deg != 0.0 {
        let rotated = rotate(sample, deg);
        let (w, h) = sample.image.dimensions();
        let (vw, vh) = valid_region(w, h, deg);
        crop(&rotated, (w - vw) / 2, (h - vh) / 2, vw, vh)
    } else {
        sample.clone()
    };
    let size = cfg.crop_size;
    if base.width() < size || base.height() < size {
        log::warn!(
            "{}: {}×{} is smaller than the {size} crop after rotation; resizing up",
            sample.id,
            base.width(),
            base.height()
        );
        base = resize_up(&base, size);
    }
    let mut out = Vec::with_capacity(cfg.crops_per_image);
    for _ in 0..cfg.crops_per_image {
        let x = rng.random_range(0..=base.width() - size);
        let y = rng.random_range(0..=base.height() - size);
        let mut s = crop(&base, x, y, size, size);
        if cfg.horizontal_flip && rng.random_bool(0.5) {
            s = hflip(&s);
        }
        if cfg.vertical_flip && rng.random_bool(0.5) {
            s = vflip(&s);
        }
        out.push(s);
    }
    Ok(out)
}

/// Pixel class shares in percent, rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceStats {
    pub crack: f64,
    pub non_crack: f64,
    pub pixels: u64,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn imbalance_stats<'a>(masks: impl IntoIterator<Item = &'a GrayImage>) -> ImbalanceStats {
    let (mut fg, mut total) = (0u64, 0u64);
    for m in masks {
        fg += m.pixels().filter(|p| p.0[0] != 0).count() as u64;
        total += u64::from(m.width()) * u64::from(m.height());
    }
    if total == 0 {
        return ImbalanceStats {
            crack: 0.0,
            non_crack: 0.0,
            pixels: 0,
        };
    }
    ImbalanceStats {
        crack: round2(100.0 * fg as f64 / total as f64),
        non_crack: round2(100.0 * (total - fg) as f64 / total as f64),
        pixels: total,
    }
}

/// Stats straight from the mask files of a manifest.
pub fn manifest_imbalance(manifest: &SampleManifest) -> Result<ImbalanceStats> {
    let masks = manifest
        .records
        .iter()
        .map(|r| {
            Ok(to_binary(
                &image::open(&r.mask).map_err(|e| Error::image(&r.mask, e))?.to_luma8(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(imbalance_stats(&masks))
}

/// Batches of sample indices for one epoch.
///
/// The order is a shuffle seeded by `(seed, epoch)`; with `deterministic`
/// off, fresh entropy is mixed into the seed. The last batch may be short.
pub fn batch_iterator(n: usize, batch: usize, seed: u64, epoch: u64, deterministic: bool) -> Vec<Vec<usize>> {
    let batch = batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(if deterministic {
        seed
    } else {
        seed ^ rand::random::<u64>()
    });
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}
