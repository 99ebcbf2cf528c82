//! Dataset layout, image decoding and preprocessing.
//!
//! A dataset root holds `RGB/<id>.png`, `depth/<id>.png` and `GT/<id>.png`,
//! plus an optional `labels.tsv` of depth-quality records.

pub mod synthetic;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};

use crate::autodiff::interpolation_taps;
use crate::error::{Error, Result};
use crate::quality::{read_records, QualityRecord};
use crate::tensor::Tensor;

/// Per-channel standardization applied to RGB and to the replicated depth.
pub const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const STD: [f64; 3] = [0.229, 0.224, 0.225];

pub const RGB_DIR: &str = "RGB";
pub const DEPTH_DIR: &str = "depth";
pub const GT_DIR: &str = "GT";
pub const LABELS_FILE: &str = "labels.tsv";

/// One preprocessed pair. Maps are `S × S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(3, S, S)`, standardized.
    pub rgb: Tensor,
    /// `(3, S, S)`, min-max normalized, replicated and standardized.
    pub depth: Tensor,
    /// `(1, S, S)` in {0, 1}.
    pub gt: Tensor,
    /// The depth map had a single value and was replaced by zeros.
    pub constant_depth: bool,
}

/// A single-channel `h × w` plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || data.is_empty() {
            return Err(Error::shape("plane", &[height, width], format!("{} values", data.len())));
        }
        Ok(Self { height, width, data })
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Plane {
        let rows = interpolation_taps(self.height, height);
        let cols = interpolation_taps(self.width, width);
        let mut out = Vec::with_capacity(height * width);
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let at = |r: usize, c: usize| self.data[r * self.width + c];
                let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
                let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Plane { height, width, data: out }
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Plane {
        let pick = |src: usize, dst: usize, o: usize| (((o as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1);
        let mut out = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                out.push(self.data[pick(self.height, height, r) * self.width + pick(self.width, width, c)]);
            }
        }
        Plane { height, width, data: out }
    }
}

/// Maps the depth range onto [0, 1]. A constant map becomes zeros and the flag is set.
pub fn normalize_depth(depth: &[f64]) -> (Vec<f64>, bool) {
    let lo = depth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return (vec![0.0; depth.len()], true);
    }
    // min→0, max→255, then /255; kept in floating point rather than re-quantized
    (depth.iter().map(|d| (d - lo) / (hi - lo)).collect(), false)
}

pub fn binarize(gt: &[f64]) -> Vec<f64> {
    gt.iter().map(|&g| if g >= 0.5 { 1.0 } else { 0.0 }).collect()
}

fn standardize(channels: [&[f64]; 3], size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(3 * size * size);
    for (c, plane) in channels.iter().enumerate() {
        data.extend(plane.iter().map(|v| (v - MEAN[c]) / STD[c]));
    }
    Tensor::new(&[3, size, size], data)
}

/// Preprocesses planes already scaled to [0, 1] (depth in any range).
pub fn preprocess_planes(id: &str, rgb: [Plane; 3], depth: &Plane, gt: &Plane, size: usize) -> Result<Sample> {
    for p in rgb.iter().chain([depth, gt]) {
        if (p.height, p.width) != (rgb[0].height, rgb[0].width) {
            return Err(Error::Data(format!(
                "pair {id}: image sizes differ ({}x{} vs {}x{})",
                p.height, p.width, rgb[0].height, rgb[0].width
            )));
        }
    }
    let rgb = rgb.map(|p| p.resize_bilinear(size, size));
    let rgb = standardize([&rgb[0].data, &rgb[1].data, &rgb[2].data], size)?;
    let (depth, constant_depth) = normalize_depth(&depth.resize_bilinear(size, size).data);
    if constant_depth {
        log::warn!("pair {id}: constant depth map, using zeros");
    }
    let depth = standardize([&depth, &depth, &depth], size)?;
    let gt = Tensor::new(&[1, size, size], binarize(&gt.resize_nearest(size, size).data))?;
    Ok(Sample {
        id: id.to_string(),
        rgb,
        depth,
        gt,
        constant_depth,
    })
}

pub fn rgb_planes(img: &DynamicImage) -> [Plane; 3] {
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    std::array::from_fn(|c| Plane {
        height: h,
        width: w,
        data: rgb.pixels().map(|p| f64::from(p.0[c])).collect(),
    })
}

pub fn gray_plane(img: &DynamicImage) -> Plane {
    let g = img.to_luma32f();
    Plane {
        height: g.height() as usize,
        width: g.width() as usize,
        data: g.pixels().map(|p| f64::from(p.0[0])).collect(),
    }
}

pub fn preprocess_images(id: &str, rgb: &DynamicImage, depth: &DynamicImage, gt: &DynamicImage, size: usize) -> Result<Sample> {
    preprocess_planes(id, rgb_planes(rgb), &gray_plane(depth), &gray_plane(gt), size)
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn preprocess_pair(id: &str, rgb: &Path, depth: &Path, gt: &Path, size: usize) -> Result<Sample> {
    preprocess_images(id, &load_image(rgb)?, &load_image(depth)?, &load_image(gt)?, size)
}

/// RGB and depth only, for inference. The returned tensors are `(1, 3, S, S)`.
pub fn preprocess_inputs(rgb: &Path, depth: &Path, size: usize) -> Result<(Tensor, Tensor, bool)> {
    let rgb = load_image(rgb)?;
    let depth = load_image(depth)?;
    let blank = DynamicImage::ImageLuma8(GrayImage::new(rgb.width(), rgb.height()));
    let s = preprocess_images("input", &rgb, &depth, &blank, size)?;
    Ok((
        s.rgb.reshaped(&[1, 3, size, size])?,
        s.depth.reshaped(&[1, 3, size, size])?,
        s.constant_depth,
    ))
}

/// Saves a `[0, 1]` map as an 8-bit grayscale PNG.
pub fn save_map(path: &Path, map: &[f64], height: usize, width: usize) -> Result<()> {
    if map.len() != height * width {
        return Err(Error::shape("save_map", &[height, width], format!("{} values", map.len())));
    }
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        let v = map[y as usize * width + x as usize];
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an 8-bit map back into `[0, 1]`.
pub fn load_map(path: &Path) -> Result<Plane> {
    Ok(gray_plane(&load_image(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFiles {
    pub id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub pairs: Vec<PairFiles>,
    /// Depth-quality labels by pair id, when `labels.tsv` exists.
    pub labels: Option<HashMap<String, QualityRecord>>,
}

/// PNG stems in a directory, sorted.
pub fn list_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

impl DatasetIndex {
    pub fn open(root: &Path) -> Result<Self> {
        let ids = list_stems(&root.join(RGB_DIR))?;
        if ids.is_empty() {
            return Err(Error::Data(format!("{}: no RGB images", root.display())));
        }
        let mut pairs = Vec::with_capacity(ids.len());
        for id in ids {
            let file = |dir: &str| root.join(dir).join(format!("{id}.png"));
            let pair = PairFiles {
                rgb: file(RGB_DIR),
                depth: file(DEPTH_DIR),
                gt: file(GT_DIR),
                id,
            };
            for p in [&pair.depth, &pair.gt] {
                if !p.is_file() {
                    return Err(Error::Data(format!("pair {}: missing {}", pair.id, p.display())));
                }
            }
            pairs.push(pair);
        }
        let labels_path = root.join(LABELS_FILE);
        let labels = if labels_path.is_file() {
            Some(read_records(&labels_path)?.into_iter().map(|r| (r.id.clone(), r)).collect())
        } else {
            None
        };
        Ok(Self {
            root: root.to_path_buf(),
            pairs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn load(&self, size: usize) -> Result<Vec<Sample>> {
        self.pairs
            .iter()
            .map(|p| preprocess_pair(&p.id, &p.rgb, &p.depth, &p.gt, size))
            .collect()
    }

    /// Labels in pair order; every pair must have one.
    pub fn label_vector(&self) -> Result<Option<Vec<f64>>> {
        let Some(labels) = &self.labels else { return Ok(None) };
        self.pairs
            .iter()
            .map(|p| {
                labels
                    .get(&p.id)
                    .map(|r| f64::from(r.label))
                    .ok_or_else(|| Error::Data(format!("{LABELS_FILE}: no label for pair {}", p.id)))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Samples stacked along a new batch axis.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub rgb: Tensor,
    pub depth: Tensor,
    pub gt: Tensor,
    pub labels: Option<Tensor>,
}

impl Batch {
    pub fn collate(samples: &[&Sample], labels: Option<&[f64]>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let stack = |f: &dyn Fn(&Sample) -> &Tensor| -> Result<Tensor> {
            let parts: Vec<Tensor> = samples
                .iter()
                .map(|s| {
                    let t = f(s);
                    let mut shape = vec![1];
                    shape.extend_from_slice(t.shape());
                    t.reshaped(&shape)
                })
                .collect::<Result<_>>()?;
            Tensor::cat_rows(&parts)
        };
        let labels = labels.map(|l| Tensor::new(&[l.len()], l.to_vec())).transpose()?;
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            rgb: stack(&|s| &s.rgb)?,
            depth: stack(&|s| &s.depth)?,
            gt: stack(&|s| &s.gt)?,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_range_maps_to_unit_interval() {
        let (d, flat) = normalize_depth(&[500.0, 1000.0, 1500.0]);
        assert!(!flat);
        assert_eq!(d, vec![0.0, 0.5, 1.0]);
        let (d, flat) = normalize_depth(&[7.0; 4]);
        assert!(flat && d == vec![0.0; 4]);
    }

    #[test]
    fn gt_binarization() {
        assert_eq!(binarize(&[0.0, 128.0 / 255.0, 1.0]), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn resizing() {
        let p = Plane::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.resize_bilinear(2, 2), p);
        assert_eq!(p.resize_nearest(2, 2), p);
        let up = p.resize_nearest(4, 4);
        assert_eq!(&up.data[..4], &[0.0, 0.0, 1.0, 1.0]);
        let down = Plane::new(4, 4, (0..16).map(f64::from).collect()).unwrap().resize_bilinear(2, 2);
        assert_eq!(down.data, vec![2.5, 4.5, 10.5, 12.5]);
        let wide = p.resize_nearest(2, 4);
        assert_eq!(wide.data, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let c = Plane::new(3, 5, vec![0.25; 15]).unwrap().resize_bilinear(7, 7);
        assert!(c.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn constant_depth_pair_is_flagged() {
        let plane = |v: f64| Plane::new(4, 4, vec![v; 16]).unwrap();
        let s = preprocess_planes("p", [plane(0.2), plane(0.4), plane(0.6)], &plane(3.0), &plane(1.0), 8).unwrap();
        assert!(s.constant_depth);
        assert_eq!(s.depth.shape(), &[3, 8, 8]);
        assert!((s.depth.at(&[0, 0, 0]) + MEAN[0] / STD[0]).abs() < 1e-12);
        assert!(s.gt.data().iter().all(|&g| g == 1.0));
        let bad = Plane::new(2, 8, vec![0.0; 16]).unwrap();
        assert!(preprocess_planes("p", [plane(0.2), plane(0.4), plane(0.6)], &bad, &plane(1.0), 8).is_err());
    }

    #[test]
    fn map_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map: Vec<f64> = (0..48).map(|i| i as f64 / 47.0).collect();
        save_map(&path, &map, 6, 8).unwrap();
        let back = load_map(&path).unwrap();
        assert_eq!((back.height, back.width), (6, 8));
        for (a, b) in map.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }
}
