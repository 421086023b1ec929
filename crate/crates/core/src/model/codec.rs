//! Exactly invertible latent codec: per-frame patchify followed by a fixed
//! orthogonal rotation of each patch vector. Pixels are shifted and scaled
//! first so that latents of typical clips have roughly unit spread.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::{ops, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub channels: usize,
    pub patch: usize,
    pub seed: u64,
    /// Subtracted from every pixel before the rotation.
    #[serde(default)]
    pub shift: f32,
    /// Multiplies the shifted pixels; must be positive.
    #[serde(default = "unit")]
    pub scale: f32,
}

fn unit() -> f32 {
    1.0
}

impl CodecConfig {
    /// Plain rotation: no shift, unit scale.
    pub fn orthogonal(channels: usize, patch: usize, seed: u64) -> Self {
        Self { channels, patch, seed, shift: 0.0, scale: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct LatentCodec {
    config: CodecConfig,
    /// `[D, D]` orthogonal, `D = channels·patch²`; latent = patch · proj.
    proj: Tensor,
    proj_t: Tensor,
}

impl LatentCodec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        ensure!(config.channels >= 1 && config.patch >= 1, Config, "codec needs channels, patch >= 1");
        ensure!(config.scale > 0.0 && config.scale.is_finite() && config.shift.is_finite(), Config,
            "codec scale must be positive and finite, got {}", config.scale);
        let d = config.channels * config.patch * config.patch;
        let proj = orthogonal(d, &mut Rng::new(config.seed).derive("codec"));
        let proj_t = ops::transpose_last2(&proj)?;
        Ok(Self { config, proj, proj_t })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn latent_channels(&self) -> usize {
        self.config.channels * self.config.patch * self.config.patch
    }

    pub fn latent_shape(&self, frames: usize, height: usize, width: usize) -> Result<[usize; 4]> {
        let p = self.config.patch;
        ensure!(height % p == 0 && width % p == 0, InvalidShape,
            "{}x{} not divisible by patch {}", height, width, p);
        Ok([frames, self.latent_channels(), height / p, width / p])
    }

    pub fn proj(&self) -> &Tensor {
        &self.proj
    }

    /// `[F, C, H, W]` pixels → `[F, C·p², H/p, W/p]` latent.
    pub fn encode(&self, v: &Tensor) -> Result<Tensor> {
        ensure!(v.rank() == 4 && v.shape()[1] == self.config.channels, InvalidShape,
            "codec expects [F, {}, H, W], got {:?}", self.config.channels, v.shape());
        let (f, c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        let p = self.config.patch;
        let [_, d, hh, ww] = self.latent_shape(f, h, w)?;
        // [F, C, hh, p, ww, p] → [F, hh, ww, C, p, p]
        let patches = v.reshape(&[f, c, hh, p, ww, p])?.permute(&[0, 2, 4, 1, 3, 5])?;
        let (shift, scale) = (self.config.shift, self.config.scale);
        let rows = ops::matmul(&patches.into_reshape(&[f * hh * ww, d])?.map(|x| (x - shift) * scale), &self.proj)?;
        rows.into_reshape(&[f, hh, ww, d])?.permute(&[0, 3, 1, 2])
    }

    /// Exact inverse of [`encode`](Self::encode).
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let d = self.latent_channels();
        ensure!(z.rank() == 4 && z.shape()[1] == d, InvalidShape,
            "codec expects [F, {}, h, w], got {:?}", d, z.shape());
        let (f, hh, ww) = (z.shape()[0], z.shape()[2], z.shape()[3]);
        let (c, p) = (self.config.channels, self.config.patch);
        let rows = z.permute(&[0, 2, 3, 1])?.into_reshape(&[f * hh * ww, d])?;
        let (shift, scale) = (self.config.shift, self.config.scale);
        let patches = ops::matmul(&rows, &self.proj_t)?.map(|x| x / scale + shift);
        patches
            .into_reshape(&[f, hh, ww, c, p, p])?
            .permute(&[0, 3, 1, 4, 2, 5])?
            .into_reshape(&[f, c, hh * p, ww * p])
    }
}

/// Modified Gram-Schmidt on a Gaussian matrix, in f64.
fn orthogonal(d: usize, rng: &mut Rng) -> Tensor {
    let mut cols: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.normal() as f64).collect()).collect();
    for i in 0..d {
        for j in 0..i {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(i);
            tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = cols[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        cols[i].iter_mut().for_each(|a| *a /= norm);
    }
    let mut data = vec![0.0f32; d * d];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * d + j] = v as f32;
        }
    }
    Tensor::new(&[d, d], data).expect("square")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codec(patch: usize) -> LatentCodec {
        LatentCodec::new(CodecConfig::orthogonal(3, patch, 0)).unwrap()
    }

    #[test]
    fn projection_is_orthogonal() {
        let c = codec(2);
        let qtq = ops::matmul(&ops::transpose_last2(c.proj()).unwrap(), c.proj()).unwrap();
        assert!(qtq.max_abs_diff(&Tensor::eye(12)).unwrap() < 1e-6);
    }

    #[test]
    fn round_trip_and_shapes() {
        for patch in [1, 2, 4] {
            let c = codec(patch);
            let v = Rng::new(patch as u64).randn(&[3, 3, 16, 8]).unwrap();
            let z = c.encode(&v).unwrap();
            assert_eq!(z.shape(), &[3, 3 * patch * patch, 16 / patch, 8 / patch]);
            assert!(c.decode(&z).unwrap().max_abs_diff(&v).unwrap() < 1e-5);
        }
        let z = codec(2).encode(&Tensor::zeros(&[2, 3, 4, 4])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_per_patch_rotation() {
        // One lit pixel in patch (0,0) only touches latent cell (0,0).
        let c = codec(2);
        let mut v = Tensor::zeros(&[1, 3, 4, 4]);
        v.data_mut()[0] = 1.0;
        let z = c.encode(&v).unwrap();
        for ch in 0..12 {
            assert_eq!(z.data()[ch * 4], c.proj().data()[ch]);
            assert!(z.data()[ch * 4 + 1..ch * 4 + 4].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn affine_round_trip() {
        let c = LatentCodec::new(CodecConfig { shift: 0.3, scale: 6.0, ..CodecConfig::orthogonal(3, 4, 1) }).unwrap();
        let v = Rng::new(8).randn(&[2, 3, 8, 8]).unwrap().map(|x| 0.3 + 0.1 * x);
        let z = c.encode(&v).unwrap();
        assert!((z.std() - 0.6).abs() < 0.1);
        assert!(c.decode(&z).unwrap().max_abs_diff(&v).unwrap() < 1e-5);
        // Flat frame at the shift value encodes to zero.
        assert!(c.encode(&Tensor::full(&[1, 3, 4, 4], 0.3)).unwrap().data().iter().all(|x| x.abs() < 1e-6));
        assert!(LatentCodec::new(CodecConfig { scale: 0.0, ..CodecConfig::orthogonal(3, 2, 0) }).is_err());
    }

    #[test]
    fn indivisible_extents_rejected() {
        assert!(codec(4).encode(&Tensor::zeros(&[1, 3, 6, 8])).is_err());
        assert!(codec(2).encode(&Tensor::zeros(&[1, 2, 4, 4])).is_err());
    }
}
