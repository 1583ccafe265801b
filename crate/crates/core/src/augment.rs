//! Label-preserving image augmentation: camera-rotation warps with the
//! matching pose update, in-plane rotation, and an appearance chain for
//! closing the synthetic-to-real gap.
//!
//! Pixel `(u, v)` covers `[u, u + 1) x [v, v + 1)` in image coordinates, so
//! its center is `(u + 0.5, v + 0.5)` and `cx = width / 2` is the image center.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PoseSample;
use crate::rotation::{compose, Quaternion, Vec3};

/// Sampling slack at the image border, in pixels.
const BORDER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && cx > 0.0
            && cx < width as f64
            && cy > 0.0
            && cy < height as f64;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy} size={width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Square-pixel pinhole camera centered on the image.
pub fn intrinsics_from_hfov(width: u32, height: u32, hfov_rad: f64) -> Result<CameraIntrinsics> {
    if !(hfov_rad > 0.0 && hfov_rad < std::f64::consts::PI) {
        return Err(Error::InvalidConfig(format!("hfov must be in (0, pi), got {hfov_rad}")));
    }
    let f = (width as f64 / 2.0) / (hfov_rad / 2.0).tan();
    CameraIntrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    /// Grayscale from interleaved 8-bit RGB with luma weights 0.299/0.587/0.114.
    pub fn from_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Self> {
        let expected = 3 * width as usize * height as usize;
        if rgb.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: rgb.len(),
            });
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|c| (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64).round() as u8)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, u: u32, v: u32) -> u8 {
        self.pixels[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: u8) {
        self.pixels[v as usize * self.width as usize + u as usize] = value;
    }

    /// Bilinear sample at image coordinates `(x, y)`; zero outside the frame.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        // pixel-index coordinates
        let (xs, ys) = (x - 0.5, y - 0.5);
        if !(xs >= -BORDER_TOL && ys >= -BORDER_TOL && xs <= w - 1.0 + BORDER_TOL && ys <= h - 1.0 + BORDER_TOL) {
            return 0.0;
        }
        let xs = xs.clamp(0.0, w - 1.0);
        let ys = ys.clamp(0.0, h - 1.0);
        let (x0, y0) = (xs.floor() as u32, ys.floor() as u32);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (xs - x0 as f64, ys - y0 as f64);
        let p = |u, v| self.get(u, v) as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Pose seen by a camera rotated by `r_delta`: `t' = R^T t`, `q' = r_delta^-1 q`.
pub fn rotate_pose(r_delta: &Quaternion, pose: &PoseSample) -> PoseSample {
    let inv = r_delta.conj();
    PoseSample::new(compose(&inv, &pose.q), inv.rotate_vec(&pose.translation()))
}

/// The pure-rotation homography `K R^T K^-1` taking old pixels to new ones.
pub fn rotation_homography(k: &CameraIntrinsics, r_delta: &Quaternion) -> Matrix3<f64> {
    k.matrix() * r_delta.to_rotation_matrix().matrix().transpose() * k.inverse()
}

pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let p = h * Vector3::new(x, y, 1.0);
    (p.z > 0.0).then(|| (p.x / p.z, p.y / p.z))
}

/// Warps the image as seen by a camera rotated by `r_delta` and updates the
/// pose label. Regions with no source pixel are filled with zero.
pub fn warp_rotation(
    img: &GrayImage,
    k: &CameraIntrinsics,
    r_delta: &Quaternion,
    pose: &PoseSample,
) -> (GrayImage, PoseSample) {
    // output pixel p' samples the input at H^-1 p' = K R K^-1 p'
    let back = k.matrix() * r_delta.to_rotation_matrix().matrix() * k.inverse();
    let mut out = GrayImage::filled(img.width, img.height, 0);
    for v in 0..img.height {
        for u in 0..img.width {
            if let Some((x, y)) = apply_homography(&back, u as f64 + 0.5, v as f64 + 0.5) {
                out.set(u, v, to_u8(img.sample_bilinear(x, y)));
            }
        }
    }
    (out, rotate_pose(r_delta, pose))
}

/// Rotation of the camera by `theta` about its optical axis.
pub fn inplane_rotate(
    img: &GrayImage,
    k: &CameraIntrinsics,
    theta: f64,
    pose: &PoseSample,
) -> (GrayImage, PoseSample) {
    warp_rotation(img, k, &Quaternion::about_z(theta), pose)
}

/// Uniform random axis and an angle uniform in `[0, max_angle]`.
pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Quaternion {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let axis = loop {
        let a = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        if a.norm() > 1e-9 {
            break a;
        }
    };
    let angle = if max_angle > 0.0 {
        rng.random_range(0.0..=max_angle)
    } else {
        0.0
    };
    Quaternion::from_axis_angle(&axis, angle).expect("nonzero axis")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    Constant,
    Noise,
}

/// Appearance perturbation ranges. Intensities are fractions of 255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sim2RealConfig {
    /// Contrast gain about mid-gray.
    pub gain_range: [f64; 2],
    /// Exposure offset.
    pub bias_range: [f64; 2],
    pub awgn_sigma_range: [f64; 2],
    /// Pixels.
    pub blur_sigma_range: [f64; 2],
    pub patch_count_range: [u32; 2],
    /// Patch side as a fraction of the smaller image dimension.
    pub patch_size_range: [f64; 2],
    pub fill_mode: FillMode,
    /// Constant fill intensity.
    pub fill_value: u8,
}

impl Default for Sim2RealConfig {
    fn default() -> Self {
        Self {
            gain_range: [0.7, 1.3],
            bias_range: [-0.1, 0.1],
            awgn_sigma_range: [0.0, 0.04],
            blur_sigma_range: [0.0, 1.5],
            patch_count_range: [0, 3],
            patch_size_range: [0.05, 0.2],
            fill_mode: FillMode::Constant,
            fill_value: 0,
        }
    }
}

impl Sim2RealConfig {
    /// Gain 1, bias 0, no blur, noise or patches.
    pub fn identity() -> Self {
        Self {
            gain_range: [1.0, 1.0],
            bias_range: [0.0, 0.0],
            awgn_sigma_range: [0.0, 0.0],
            blur_sigma_range: [0.0, 0.0],
            patch_count_range: [0, 0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let within = |r: [f64; 2], lo: f64, hi: f64| r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi;
        let checks = [
            ("gain_range", within(self.gain_range, 0.0, 4.0)),
            ("bias_range", within(self.bias_range, -1.0, 1.0)),
            ("awgn_sigma_range", within(self.awgn_sigma_range, 0.0, 1.0)),
            ("blur_sigma_range", within(self.blur_sigma_range, 0.0, 10.0)),
            (
                "patch_count_range",
                self.patch_count_range[0] <= self.patch_count_range[1] && self.patch_count_range[1] <= 64,
            ),
            (
                "patch_size_range",
                within(self.patch_size_range, 0.0, 1.0) && self.patch_size_range[0] > 0.0,
            ),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::InvalidConfig(format!("{name} out of bounds or reversed"))),
            None => Ok(()),
        }
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|x| x / s).collect()
}

/// Separable Gaussian blur of a row-major plane, radius `ceil(3 sigma)`,
/// edges clamped.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || plane.is_empty() {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(j, kj)| kj * row[clamp(x as i64 + j as i64 - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(j, kj)| kj * tmp[clamp(y as i64 + j as i64 - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Gain/bias, blur, white noise, then patch dropout, on intensities in [0, 1].
pub fn sim2real<R: Rng + ?Sized>(img: &GrayImage, cfg: &Sim2RealConfig, rng: &mut R) -> Result<GrayImage> {
    cfg.validate()?;
    let (w, h) = (img.width as usize, img.height as usize);
    let gain = draw(rng, cfg.gain_range);
    let bias = draw(rng, cfg.bias_range);
    let blur = draw(rng, cfg.blur_sigma_range);
    let noise = draw(rng, cfg.awgn_sigma_range);

    let mut plane: Vec<f64> = img
        .pixels
        .iter()
        .map(|&p| (gain * (p as f64 / 255.0 - 0.5) + 0.5 + bias).clamp(0.0, 1.0))
        .collect();
    plane = blur_plane(&plane, w, h, blur);
    if noise > 0.0 {
        let n = Normal::new(0.0, noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for p in &mut plane {
            *p = (*p + n.sample(rng)).clamp(0.0, 1.0);
        }
    }

    let [c0, c1] = cfg.patch_count_range;
    let count = if c0 == c1 { c0 } else { rng.random_range(c0..=c1) };
    let min_dim = w.min(h) as f64;
    for _ in 0..count {
        let pw = ((draw(rng, cfg.patch_size_range) * min_dim).round() as usize).clamp(1, w);
        let ph = ((draw(rng, cfg.patch_size_range) * min_dim).round() as usize).clamp(1, h);
        let x0 = rng.random_range(0..=w - pw);
        let y0 = rng.random_range(0..=h - ph);
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                plane[y * w + x] = match cfg.fill_mode {
                    FillMode::Constant => cfg.fill_value as f64 / 255.0,
                    FillMode::Noise => rng.random::<f64>(),
                };
            }
        }
    }

    let pixels = plane.iter().map(|p| to_u8(p * 255.0)).collect();
    GrayImage::new(img.width, img.height, pixels)
}
