//! Video quality indicators at desk scale.
//!
//! `consistency_lite` is the mean cosine similarity of adjacent frames'
//! features, and `fvd_lite` is a Fréchet distance over pooled
//! spatiotemporal features. Both use a fixed random convolutional extractor
//! whose weights come from a pinned seed and are never trained. PSNR and
//! SSIM are the usual pixel-space definitions.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::numcore::{Rng, Tensor};

pub const FEATURE_SEED: u64 = 0x00C0_FFEE;
pub const FEATURE_CHANNELS: usize = 16;
/// Side of the average-pooling grid over the last feature map.
pub const POOL_GRID: usize = 4;
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const FRECHET_RIDGE: f64 = 1e-6;

/// Two stride-2 3×3 convolutions with ReLU, then a `POOL_GRID²` average pool.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    w1: Vec<f32>,
    w2: Vec<f32>,
    c_in: usize,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(FEATURE_SEED, 3)
    }
}

impl FeatureExtractor {
    pub fn new(seed: u64, c_in: usize) -> Self {
        let mut rng = Rng::new(seed).derive("features");
        let mut draw = |n: usize, fan_in: usize| -> Vec<f32> {
            let std = (2.0 / fan_in as f32).sqrt();
            (0..n).map(|_| rng.normal() * std).collect()
        };
        let w1 = draw(FEATURE_CHANNELS * c_in * 9, c_in * 9);
        let w2 = draw(FEATURE_CHANNELS * FEATURE_CHANNELS * 9, FEATURE_CHANNELS * 9);
        Self { w1, w2, c_in }
    }

    /// Last feature map `[16, h/4, w/4]` (rounded up) of one `[C, H, W]` frame.
    pub fn feature_map(&self, frame: &Tensor) -> Result<(Vec<f32>, usize, usize)> {
        ensure!(frame.rank() == 3 && frame.shape()[0] == self.c_in, InvalidShape,
            "feature extractor expects [{}, H, W], got {:?}", self.c_in, frame.shape());
        let (h, w) = (frame.shape()[1], frame.shape()[2]);
        let centred: Vec<f32> = frame.data().iter().map(|v| v - 0.5).collect();
        let (m1, h1, w1) = conv3x3_s2_relu(&centred, self.c_in, h, w, &self.w1, FEATURE_CHANNELS);
        let (m2, h2, w2) = conv3x3_s2_relu(&m1, FEATURE_CHANNELS, h1, w1, &self.w2, FEATURE_CHANNELS);
        ensure!(h2 >= POOL_GRID && w2 >= POOL_GRID, InvalidShape, "frame {}x{} too small for features", h, w);
        Ok((m2, h2, w2))
    }

    /// `16·POOL_GRID²` features of one frame.
    pub fn frame_features(&self, frame: &Tensor) -> Result<Vec<f64>> {
        let (m, h, w) = self.feature_map(frame)?;
        let mut out = Vec::with_capacity(FEATURE_CHANNELS * POOL_GRID * POOL_GRID);
        for c in 0..FEATURE_CHANNELS {
            let plane = &m[c * h * w..(c + 1) * h * w];
            for gy in 0..POOL_GRID {
                let (y0, y1) = (gy * h / POOL_GRID, (gy + 1) * h / POOL_GRID);
                for gx in 0..POOL_GRID {
                    let (x0, x1) = (gx * w / POOL_GRID, (gx + 1) * w / POOL_GRID);
                    let mut s = 0.0f64;
                    for y in y0..y1 {
                        s += plane[y * w + x0..y * w + x1].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        Ok(out)
    }

    pub fn video_frame_features(&self, video: &Tensor) -> Result<Vec<Vec<f64>>> {
        frames(video)?.iter().map(|f| self.frame_features(f)).collect()
    }

    /// Spatiotemporal descriptor: per-channel mean activation over the clip
    /// followed by the per-channel mean absolute change between adjacent
    /// frames (zero for a single frame).
    pub fn fvd_features(&self, video: &Tensor) -> Result<Vec<f64>> {
        let means: Vec<Vec<f64>> = frames(video)?
            .iter()
            .map(|f| {
                let (m, h, w) = self.feature_map(f)?;
                Ok(m.chunks(h * w).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64).collect())
            })
            .collect::<Result<_>>()?;
        let n = means.len() as f64;
        let mut out = vec![0.0; 2 * FEATURE_CHANNELS];
        for m in &means {
            out[..FEATURE_CHANNELS].iter_mut().zip(m).for_each(|(o, v)| *o += v / n);
        }
        if means.len() > 1 {
            let pairs = (means.len() - 1) as f64;
            for w in means.windows(2) {
                for c in 0..FEATURE_CHANNELS {
                    out[FEATURE_CHANNELS + c] += (w[1][c] - w[0][c]).abs() / pairs;
                }
            }
        }
        Ok(out)
    }

    /// [`fvd_features`](Self::fvd_features) over many videos in parallel.
    pub fn fvd_features_batch(&self, videos: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        videos.par_iter().map(|v| self.fvd_features(v)).collect()
    }
}

fn conv3x3_s2_relu(x: &[f32], c_in: usize, h: usize, w: usize, weights: &[f32], c_out: usize) -> (Vec<f32>, usize, usize) {
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0f32; c_out * ho * wo];
    for o in 0..c_out {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for i in 0..c_in {
                    for ky in 0..3 {
                        let y = (2 * oy + ky) as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let xx = (2 * ox + kx) as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += weights[((o * c_in + i) * 3 + ky) * 3 + kx] * x[(i * h + y as usize) * w + xx as usize];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc.max(0.0);
            }
        }
    }
    (out, ho, wo)
}

fn frames(video: &Tensor) -> Result<Vec<Tensor>> {
    ensure!(video.rank() == 4, InvalidShape, "video must be [F, C, H, W], got {:?}", video.shape());
    (0..video.shape()[0]).map(|f| {
        let fr = video.slice_axis0(f, f + 1)?;
        fr.into_reshape(&video.shape()[1..])
    }).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity of adjacent frames' features, in `[−1, 1]`.
pub fn consistency_score(fx: &FeatureExtractor, video: &Tensor) -> Result<f64> {
    ensure!(video.rank() == 4 && video.shape()[0] >= 2, Degenerate,
        "consistency needs at least two frames, got shape {:?}", video.shape());
    let feats = fx.video_frame_features(video)?;
    let pairs = feats.windows(2).map(|w| cosine(&w[0], &w[1]));
    Ok(pairs.sum::<f64>() / (feats.len() - 1) as f64)
}

/// `10·log10(peak²/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    ensure!(a.shape() == b.shape(), ShapeMismatch, "psnr of {:?} vs {:?}", a.shape(), b.shape());
    ensure!(peak > 0.0, Config, "peak must be positive");
    ensure!(a.numel() > 0, InvalidShape, "psnr of empty frames");
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over every 8×8 window (stride 1) of every channel.
///
/// Frames are `[H, W]` or `[C, H, W]`; window statistics use the sample
/// (n − 1) covariance.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    ensure!(a.shape() == b.shape(), ShapeMismatch, "ssim of {:?} vs {:?}", a.shape(), b.shape());
    ensure!(a.rank() == 2 || a.rank() == 3, InvalidShape, "ssim expects [H, W] or [C, H, W]");
    let r = a.rank();
    let (h, w) = (a.shape()[r - 2], a.shape()[r - 1]);
    ensure!(h >= SSIM_WINDOW && w >= SSIM_WINDOW, InvalidShape, "frame {}x{} smaller than the SSIM window", h, w);
    let channels = a.numel() / (h * w);
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..channels {
        let pa = &a.data()[c * h * w..(c + 1) * h * w];
        let pb = &b.data()[c * h * w..(c + 1) * h * w];
        let sa = integral(h, w, |i| pa[i] as f64);
        let sb = integral(h, w, |i| pb[i] as f64);
        let saa = integral(h, w, |i| (pa[i] as f64).powi(2));
        let sbb = integral(h, w, |i| (pb[i] as f64).powi(2));
        let sab = integral(h, w, |i| pa[i] as f64 * pb[i] as f64);
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let box_sum = |t: &[f64]| window_sum(t, w, y, x);
                let (ma, mb) = (box_sum(&sa) / n, box_sum(&sb) / n);
                let va = (box_sum(&saa) - n * ma * ma) / (n - 1.0);
                let vb = (box_sum(&sbb) - n * mb * mb) / (n - 1.0);
                let cov = (box_sum(&sab) - n * ma * mb) / (n - 1.0);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Summed-area table with a zero border: `(h+1)·(w+1)` entries.
fn integral(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut t = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
        }
    }
    t
}

fn window_sum(t: &[f64], w: usize, y: usize, x: usize) -> f64 {
    let s = w + 1;
    let (y1, x1) = (y + SSIM_WINDOW, x + SSIM_WINDOW);
    t[y1 * s + x1] - t[y * s + x1] - t[y1 * s + x] + t[y * s + x]
}

/// Mean per-frame PSNR and SSIM between two videos of equal shape.
pub fn video_psnr_ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<(f64, f64)> {
    ensure!(a.shape() == b.shape(), ShapeMismatch, "videos {:?} vs {:?}", a.shape(), b.shape());
    let (fa, fb) = (frames(a)?, frames(b)?);
    ensure!(!fa.is_empty(), InvalidShape, "empty video");
    let mut ps = 0.0;
    let mut ss = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        ps += psnr(x, y, peak)?;
        ss += ssim(x, y, peak)?;
    }
    Ok((ps / fa.len() as f64, ss / fa.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrechetResult {
    pub distance: f64,
    /// A ridge of [`FRECHET_RIDGE`] was added to both covariances.
    pub regularized: bool,
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_lite(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<FrechetResult> {
    let d = a.first().map(Vec::len).unwrap_or(0);
    ensure!(d >= 1, InvalidShape, "empty feature set");
    ensure!(a.iter().chain(b).all(|v| v.len() == d), ShapeMismatch, "feature dimensions differ");
    ensure!(a.len() > d && b.len() > d, Degenerate,
        "each set needs more than {} samples, got {} and {}", d, a.len(), b.len());
    let (mu_a, mut cov_a) = gaussian_fit(a, d);
    let (mu_b, mut cov_b) = gaussian_fit(b, d);
    let min_eig = |m: &DMatrix<f64>| SymmetricEigen::new(m.clone()).eigenvalues.min();
    let scale = (cov_a.trace() + cov_b.trace()).max(1e-300) / (2 * d) as f64;
    let regularized = min_eig(&cov_a) <= 1e-9 * scale || min_eig(&cov_b) <= 1e-9 * scale;
    if regularized {
        cov_a += DMatrix::identity(d, d) * FRECHET_RIDGE;
        cov_b += DMatrix::identity(d, d) * FRECHET_RIDGE;
    }
    let sqrt_a = psd_sqrt(&cov_a);
    let middle = &sqrt_a * &cov_b * &sqrt_a;
    let middle = (&middle + middle.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(middle).eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let diff = &mu_a - &mu_b;
    let distance = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(FrechetResult { distance: distance.max(0.0), regularized })
}

fn gaussian_fit(x: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len() as f64;
    let mut mu = DVector::zeros(d);
    for v in x {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in x {
        let c = DVector::from_column_slice(v) - &mu;
        cov.ger(1.0, &c, &c, 1.0);
    }
    (mu, cov / (n - 1.0))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Binary P6 image of a `[3, H, W]` frame in `[0, 1]` (values are clamped).
pub fn encode_ppm(frame: &Tensor) -> Result<Vec<u8>> {
    ensure!(frame.rank() == 3 && frame.shape()[0] == 3, InvalidShape, "PPM needs [3, H, W], got {:?}", frame.shape());
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    for i in 0..h * w {
        for c in 0..3 {
            let v = frame.data()[c * h * w + i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Parses a binary P6 image (maxval ≤ 255) into `[3, H, W]` in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        ensure!(pos > start, Format, "truncated PPM header");
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    ensure!(fields[0] == "P6", Format, "not a binary PPM (magic {})", fields[0]);
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM field {s}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    ensure!((1..=255).contains(&max), Format, "unsupported PPM maxval {}", max);
    ensure!(bytes.len() >= pos + 3 * w * h, Format, "truncated PPM payload");
    let px = &bytes[pos..pos + 3 * w * h];
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = px[3 * i + c] as f32 / max as f32;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes `frame_00000.ppm`, `frame_00001.ppm`, … under `dir`.
pub fn write_frames(dir: &Path, video: &Tensor) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    frames(video)?
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("frame_{i:05}.ppm"));
            fs::write(&path, encode_ppm(f)?)?;
            Ok(path)
        })
        .collect()
}

/// Reads every `frame_*.ppm` under `dir`, in name order, as `[F, 3, H, W]`.
pub fn read_frames(dir: &Path) -> Result<Tensor> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("frame_") && name.ends_with(".ppm")
        })
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), Config, "no frame_*.ppm files in {}", dir.display());
    let frames = paths.iter().map(|p| decode_ppm(&fs::read(p)?)).collect::<Result<Vec<_>>>()?;
    ensure!(frames.iter().all(|f| f.shape() == frames[0].shape()), ShapeMismatch, "frames differ in size");
    let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
    let refs: Vec<&Tensor> = frames.iter().collect();
    Tensor::concat_axis0(&refs)?.into_reshape(&[frames.len(), 3, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_video(seed: u64, f: usize) -> Tensor {
        let mut rng = Rng::new(seed);
        let data = (0..f * 3 * 32 * 32).map(|_| rng.uniform() as f32).collect();
        Tensor::new(&[f, 3, 32, 32], data).unwrap()
    }

    #[test]
    fn static_video_is_fully_consistent() {
        let fx = FeatureExtractor::default();
        let frame = noise_video(1, 1);
        let refs = vec![&frame; 6];
        let video = Tensor::concat_axis0(&refs).unwrap();
        assert!((consistency_score(&fx, &video).unwrap() - 1.0).abs() < 1e-6);
        assert!(consistency_score(&fx, &frame).is_err());
    }

    #[test]
    fn noise_video_is_less_consistent_and_order_symmetric() {
        let fx = FeatureExtractor::default();
        for trial in 0..10 {
            let v = noise_video(100 + trial, 5);
            let s = consistency_score(&fx, &v).unwrap();
            assert!(s < 1.0 - 1e-6);
            let rev: Vec<usize> = (0..5).rev().collect();
            let r = consistency_score(&fx, &v.select_axis0(&rev).unwrap()).unwrap();
            assert!((s - r).abs() < 1e-12);
        }
    }

    #[test]
    fn extractor_is_pinned() {
        let a = FeatureExtractor::default().frame_features(&noise_video(3, 1).reshape(&[3, 32, 32]).unwrap()).unwrap();
        let b = FeatureExtractor::default().frame_features(&noise_video(3, 1).reshape(&[3, 32, 32]).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 256);
    }

    #[test]
    fn psnr_values() {
        let a = Tensor::full(&[4, 4], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);
        let c = a.map(|v| v + 1.0);
        assert!(psnr(&a, &c, 1.0).unwrap().abs() < 1e-9);
        assert!(psnr(&a, &Tensor::zeros(&[2]), 1.0).is_err());
    }

    #[test]
    fn ssim_values() {
        let a = noise_video(4, 1).reshape(&[3, 32, 32]).unwrap();
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let b = a.add(&Rng::new(5).randn(a.shape()).unwrap().scale(0.8)).unwrap();
        assert!(ssim(&a, &b, 1.0).unwrap() < 0.5);
        let checker: Vec<f32> = (0..256).map(|i| ((i / 16 + i % 16) % 2) as f32).collect();
        let c = Tensor::new(&[16, 16], checker).unwrap();
        let inv = c.map(|v| 1.0 - v);
        assert!(ssim(&c, &inv, 1.0).unwrap() < 0.0);
        assert!(ssim(&Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4, 4]), 1.0).is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let v = noise_video(6, 1).reshape(&[3, 32, 32]).unwrap();
        let q = v.map(|x| (x * 255.0).round() / 255.0);
        let back = decode_ppm(&encode_ppm(&v).unwrap()).unwrap();
        assert!(back.max_abs_diff(&q).unwrap() < 1e-6);
        let with_comment = b"P6\n# hi\n1 1\n255\n\x00\xff\x80";
        assert_eq!(decode_ppm(with_comment).unwrap().data(), &[0.0, 1.0, 128.0 / 255.0]);
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
    }

    #[test]
    fn frechet_identities() {
        let mut rng = Rng::new(7);
        let xs: Vec<Vec<f64>> = (0..400).map(|_| (0..4).map(|_| rng.normal() as f64).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..400).map(|_| (0..4).map(|_| rng.normal() as f64 * 2.0 + 1.0).collect()).collect();
        assert!(frechet_lite(&xs, &xs).unwrap().distance < 1e-4);
        let ab = frechet_lite(&xs, &ys).unwrap().distance;
        let ba = frechet_lite(&ys, &xs).unwrap().distance;
        assert!((ab - ba).abs() < 1e-6);
        assert!(frechet_lite(&xs[..4], &ys).is_err());
        let flat: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        assert!(frechet_lite(&flat, &flat).unwrap().regularized);
    }
}
