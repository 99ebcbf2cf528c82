//! Procedural RGB-D pairs: one elliptical object in front of a sloped
//! background, with a matching mask. Some pairs can get depth maps that ignore
//! the object, as a stand-in for poor sensor data.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{preprocess_images, Sample, DEPTH_DIR, GT_DIR, RGB_DIR};
use crate::error::{Error, Result};

pub type DepthImage = ImageBuffer<Luma<u16>, Vec<u16>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub pairs: usize,
    pub size: u32,
    pub seed: u64,
    /// Share of pairs whose depth carries no object.
    pub poor_depth_fraction: f64,
}

impl SyntheticConfig {
    pub fn new(pairs: usize, size: u32, seed: u64) -> Self {
        Self {
            pairs,
            size,
            seed,
            poor_depth_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub id: String,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub gt: GrayImage,
    pub poor_depth: bool,
}

impl SyntheticPair {
    pub fn sample(&self, size: usize) -> Result<Sample> {
        preprocess_images(
            &self.id,
            &DynamicImage::ImageRgb8(self.rgb.clone()),
            &DynamicImage::ImageLuma16(self.depth.clone()),
            &DynamicImage::ImageLuma8(self.gt.clone()),
            size,
        )
    }
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    std::array::from_fn(|_| rng.gen_range(lo..hi))
}

fn pair(id: String, size: u32, poor: bool, rng: &mut ChaCha8Rng) -> SyntheticPair {
    let s = f64::from(size);
    let (cx, cy) = (rng.gen_range(0.3..0.7) * s, rng.gen_range(0.3..0.7) * s);
    let (rx, ry) = (rng.gen_range(0.14..0.28) * s, rng.gen_range(0.14..0.28) * s);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (sin, cos) = angle.sin_cos();
    let inside = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
        (u / rx).powi(2) + (v / ry).powi(2)
    };

    // dark background blending two colors, bright object
    let (bg0, bg1) = (color(rng, 0.0, 0.35), color(rng, 0.0, 0.35));
    let obj = color(rng, 0.55, 1.0);
    let noise = 0.03;
    let mut rgb = RgbImage::new(size, size);
    let mut gt = GrayImage::new(size, size);
    for (x, y, px) in rgb.enumerate_pixels_mut() {
        let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let t = (fx + fy) / (2.0 * s);
        let on = inside(fx, fy) <= 1.0;
        let c: [f64; 3] = std::array::from_fn(|k| {
            let base = if on { obj[k] } else { bg0[k] * (1.0 - t) + bg1[k] * t };
            (base + rng.gen_range(-noise..noise)).clamp(0.0, 1.0)
        });
        *px = Rgb(c.map(|v| (v * 255.0).round() as u8));
        gt.put_pixel(x, y, Luma([if on { 255 } else { 0 }]));
    }

    // depth in millimetres: a tilted back plane, the object well in front
    let far: f64 = rng.gen_range(2500.0..4000.0);
    let tilt: f64 = rng.gen_range(-800.0..800.0);
    let near: f64 = rng.gen_range(600.0..1200.0);
    let (bx, by) = (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s);
    let depth = DepthImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let back = far + tilt * (fy / s - 0.5);
        let d = if poor {
            // a blob unrelated to the object
            let r2 = ((fx - bx).powi(2) + (fy - by).powi(2)) / (0.2 * s).powi(2);
            back - 1500.0 * (-r2).exp() + rng.gen_range(-300.0..300.0)
        } else {
            let e = inside(fx, fy);
            if e <= 1.0 {
                near + 150.0 * e
            } else {
                back
            }
        };
        Luma([d.round().clamp(0.0, 65535.0) as u16])
    });
    SyntheticPair {
        id,
        rgb,
        depth,
        gt,
        poor_depth: poor,
    }
}

/// Deterministic in the seed.
pub fn generate(cfg: &SyntheticConfig) -> Vec<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.pairs)
        .map(|i| {
            let poor = rng.gen_bool(cfg.poor_depth_fraction.clamp(0.0, 1.0));
            pair(format!("syn_{i:04}"), cfg.size, poor, &mut rng)
        })
        .collect()
}

/// Writes pairs in the dataset layout under `root`.
pub fn write_dataset(root: &Path, pairs: &[SyntheticPair]) -> Result<()> {
    for dir in [RGB_DIR, DEPTH_DIR, GT_DIR] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let wrap = |path: &Path, r: image::ImageResult<()>| {
        r.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    };
    for p in pairs {
        let file = |dir: &str| root.join(dir).join(format!("{}.png", p.id));
        let (rgb, depth, gt) = (file(RGB_DIR), file(DEPTH_DIR), file(GT_DIR));
        wrap(&rgb, p.rgb.save(&rgb))?;
        wrap(&depth, p.depth.save(&depth))?;
        wrap(&gt, p.gt.save(&gt))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetIndex;

    #[test]
    fn deterministic_and_nontrivial() {
        let cfg = SyntheticConfig::new(3, 32, 5);
        let (a, b) = (generate(&cfg), generate(&cfg));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.rgb, &x.depth, &x.gt), (&y.rgb, &y.depth, &y.gt));
            let fg = x.gt.pixels().filter(|p| p.0[0] == 255).count();
            assert!(fg > 0 && fg < 32 * 32);
        }
        assert_ne!(a[0].rgb, a[1].rgb);
    }

    #[test]
    fn files_round_trip_through_index() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = generate(&SyntheticConfig {
            poor_depth_fraction: 0.5,
            ..SyntheticConfig::new(4, 24, 1)
        });
        write_dataset(dir.path(), &pairs).unwrap();
        let index = DatasetIndex::open(dir.path()).unwrap();
        assert_eq!(index.len(), 4);
        assert!(index.labels.is_none());
        let loaded = index.load(16).unwrap();
        for (s, p) in loaded.iter().zip(&pairs) {
            assert_eq!(s, &p.sample(16).unwrap());
        }
    }

    #[test]
    fn missing_counterpart_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = generate(&SyntheticConfig::new(2, 16, 1));
        write_dataset(dir.path(), &pairs).unwrap();
        std::fs::remove_file(dir.path().join(GT_DIR).join("syn_0001.png")).unwrap();
        assert!(matches!(DatasetIndex::open(dir.path()), Err(Error::Data(_))));
    }
}
