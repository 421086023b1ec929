//! Procedural moving-shape clips with closed-grammar captions.
//!
//! One object (square or circle) moves with a constant integer velocity over
//! a smooth gradient background and bounces elastically off the borders.
//! Each clip comes with an 8-token caption that encodes shape, colour,
//! direction, speed, size and background exactly.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numcore::{Rng, Tensor};

pub const FRAME_SIZE: usize = 32;
pub const CHANNELS: usize = 3;
pub const DEFAULT_CLIP_LEN: usize = 24;
pub const VOCAB_SIZE: usize = 64;
pub const CAPTION_LEN: usize = 8;

pub const PALETTE: [(&str, [f32; 3]); 8] = [
    ("red", [0.9, 0.15, 0.1]),
    ("green", [0.15, 0.85, 0.2]),
    ("blue", [0.15, 0.25, 0.95]),
    ("yellow", [0.95, 0.9, 0.15]),
    ("cyan", [0.1, 0.85, 0.9]),
    ("magenta", [0.9, 0.15, 0.85]),
    ("white", [0.97, 0.97, 0.97]),
    ("orange", [0.95, 0.55, 0.1]),
];
pub const SIZES: [usize; 3] = [6, 8, 10];
pub const BACKGROUNDS: [f32; 4] = [0.1, 0.2, 0.3, 0.4];
const GRADIENT_AMPLITUDE: f32 = 0.08;

// Token layout of the caption vocabulary.
pub const TOK_PAD: u32 = 0;
pub const TOK_BOS: u32 = 1;
pub const TOK_EOS: u32 = 2;
const TOK_SHAPE: u32 = 3; // 2 shapes
const TOK_COLOR: u32 = 5; // 8 colours
const TOK_DIR: u32 = 13; // 9 directions
const TOK_SPEED: u32 = 22; // 3 speeds
const TOK_SIZE: u32 = 25; // 3 sizes
const TOK_BG: u32 = 28; // 4 backgrounds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Circle,
}

/// Sign pattern of the velocity, in caption order.
pub const DIRECTIONS: [(i32, i32); 9] =
    [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0), (-1, -1), (1, -1), (-1, 1), (1, 1)];
pub const DIRECTION_NAMES: [&str; 9] =
    ["still", "up", "down", "left", "right", "up-left", "up-right", "down-left", "down-right"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: ShapeKind,
    /// Index into [`PALETTE`].
    pub color: usize,
    /// Pixels per frame, `(x, y)`; each component is `0` or `±speed`.
    pub velocity: [i32; 2],
    /// Top-left corner of the object's bounding box in the first frame.
    pub start: [i32; 2],
    /// Bounding-box side in pixels; one of [`SIZES`].
    pub size: usize,
    /// Index into [`BACKGROUNDS`].
    pub background: usize,
    pub length: usize,
    pub frame_size: usize,
}

/// The spec fields a caption encodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFields {
    pub shape: ShapeKind,
    pub color: usize,
    pub direction: usize,
    pub speed: usize,
    pub size: usize,
    pub background: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.frame_size >= 1 && self.length >= 1, Config, "empty clip geometry");
        ensure!(self.size >= 1 && self.size <= self.frame_size, Config,
            "object of size {} does not fit a {}px frame", self.size, self.frame_size);
        ensure!(self.color < PALETTE.len(), Config, "colour index {}", self.color);
        ensure!(self.background < BACKGROUNDS.len(), Config, "background index {}", self.background);
        let max = (self.frame_size - self.size) as i32;
        ensure!((0..=max).contains(&self.start[0]) && (0..=max).contains(&self.start[1]), Config,
            "start {:?} puts the object outside the frame", self.start);
        ensure!(self.velocity.iter().all(|v| v.abs() <= max.max(1)), Config, "velocity too large");
        Ok(())
    }

    pub fn speed(&self) -> usize {
        self.velocity[0].unsigned_abs().max(self.velocity[1].unsigned_abs()) as usize
    }

    pub fn direction(&self) -> usize {
        let sig = (self.velocity[0].signum(), self.velocity[1].signum());
        DIRECTIONS.iter().position(|&d| d == sig).expect("every sign pair is listed")
    }

    pub fn fields(&self) -> CaptionFields {
        CaptionFields {
            shape: self.shape,
            color: self.color,
            direction: self.direction(),
            speed: self.speed(),
            size: SIZES.iter().position(|&s| s == self.size).unwrap_or(0),
            background: self.background,
        }
    }

    /// Top-left corner per frame under elastic bounces.
    pub fn trajectory(&self) -> Vec<[i32; 2]> {
        let max = (self.frame_size - self.size) as i32;
        let mut pos = self.start;
        let mut vel = self.velocity;
        let mut out = Vec::with_capacity(self.length);
        for _ in 0..self.length {
            out.push(pos);
            for k in 0..2 {
                pos[k] += vel[k];
                if pos[k] < 0 {
                    pos[k] = -pos[k];
                    vel[k] = -vel[k];
                } else if pos[k] > max {
                    pos[k] = 2 * max - pos[k];
                    vel[k] = -vel[k];
                }
            }
        }
        out
    }
}

/// Fixed 8-token caption: `BOS size colour shape direction speed background EOS`.
pub fn caption(spec: &SceneSpec) -> Vec<u32> {
    let f = spec.fields();
    let shape = match f.shape {
        ShapeKind::Square => 0,
        ShapeKind::Circle => 1,
    };
    vec![
        TOK_BOS,
        TOK_SIZE + f.size as u32,
        TOK_COLOR + f.color as u32,
        TOK_SHAPE + shape,
        TOK_DIR + f.direction as u32,
        TOK_SPEED + f.speed as u32,
        TOK_BG + f.background as u32,
        TOK_EOS,
    ]
}

/// Inverse of [`caption`].
pub fn decode_caption(tokens: &[u32]) -> Result<CaptionFields> {
    ensure!(tokens.len() == CAPTION_LEN, Format, "caption of {} tokens", tokens.len());
    ensure!(tokens[0] == TOK_BOS && tokens[7] == TOK_EOS, Format, "caption framing {:?}", tokens);
    let field = |tok: u32, base: u32, count: usize| -> Result<usize> {
        let v = tok.checked_sub(base).map(|v| v as usize).filter(|&v| v < count);
        v.ok_or_else(|| Error::Format(format!("token {} outside field at {}", tok, base)))
    };
    Ok(CaptionFields {
        size: field(tokens[1], TOK_SIZE, SIZES.len())?,
        color: field(tokens[2], TOK_COLOR, PALETTE.len())?,
        shape: if field(tokens[3], TOK_SHAPE, 2)? == 0 { ShapeKind::Square } else { ShapeKind::Circle },
        direction: field(tokens[4], TOK_DIR, DIRECTIONS.len())?,
        speed: field(tokens[5], TOK_SPEED, 3)?,
        background: field(tokens[6], TOK_BG, BACKGROUNDS.len())?,
    })
}

/// Human-readable caption text.
pub fn caption_text(tokens: &[u32]) -> Result<String> {
    let f = decode_caption(tokens)?;
    let size = ["small", "medium", "large"][f.size];
    let shape = match f.shape {
        ShapeKind::Square => "square",
        ShapeKind::Circle => "circle",
    };
    let speed = ["", " slowly", " fast"][f.speed];
    Ok(format!(
        "a {} {} {} moving {}{} on a {} background",
        size, PALETTE[f.color].0, shape, DIRECTION_NAMES[f.direction], speed,
        ["black", "dark", "grey", "light"][f.background]
    ))
}

/// Renders the clip as `[frames, 3, H, W]` pixels in `[0, 1]` plus its caption.
///
/// `rng` only shapes the static background gradient, so the clip is a pure
/// function of `(spec, seed)`.
pub fn make_clip(spec: &SceneSpec, rng: &mut Rng) -> Result<(Tensor, Vec<u32>)> {
    spec.validate()?;
    let n = spec.frame_size;
    let gx = (rng.uniform() * 2.0 - 1.0) as f32;
    let gy = (rng.uniform() * 2.0 - 1.0) as f32;
    let bg = BACKGROUNDS[spec.background];
    let mut background = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let u = (x as f32 / (n - 1).max(1) as f32) - 0.5;
            let v = (y as f32 / (n - 1).max(1) as f32) - 0.5;
            background[y * n + x] = bg + GRADIENT_AMPLITUDE * (gx * u + gy * v);
        }
    }
    let color = PALETTE[spec.color].1;
    let mask = object_mask(spec.shape, spec.size);
    let frame_len = CHANNELS * n * n;
    let mut data = vec![0.0f32; spec.length * frame_len];
    for (f, pos) in spec.trajectory().into_iter().enumerate() {
        let frame = &mut data[f * frame_len..(f + 1) * frame_len];
        for c in 0..CHANNELS {
            frame[c * n * n..(c + 1) * n * n].copy_from_slice(&background);
        }
        for dy in 0..spec.size {
            for dx in 0..spec.size {
                if !mask[dy * spec.size + dx] {
                    continue;
                }
                let (x, y) = (pos[0] as usize + dx, pos[1] as usize + dy);
                for c in 0..CHANNELS {
                    frame[c * n * n + y * n + x] = color[c];
                }
            }
        }
    }
    Ok((Tensor::new(&[spec.length, CHANNELS, n, n], data)?, caption(spec)))
}

fn object_mask(shape: ShapeKind, size: usize) -> Vec<bool> {
    let c = (size as f32 - 1.0) / 2.0;
    let r2 = (size as f32 / 2.0).powi(2);
    (0..size * size)
        .map(|i| {
            let (dy, dx) = ((i / size) as f32, (i % size) as f32);
            match shape {
                ShapeKind::Square => true,
                ShapeKind::Circle => (dx - c).powi(2) + (dy - c).powi(2) <= r2,
            }
        })
        .collect()
}

/// One spec from the pinned parameter grid.
pub fn sample_spec(rng: &mut Rng, length: usize) -> SceneSpec {
    let shape = if rng.below(2) == 0 { ShapeKind::Square } else { ShapeKind::Circle };
    let color = rng.below(PALETTE.len());
    let speed = 1 + rng.below(2) as i32;
    let (sx, sy) = DIRECTIONS[rng.below(DIRECTIONS.len())];
    let size = SIZES[rng.below(SIZES.len())];
    let background = rng.below(BACKGROUNDS.len());
    let max = FRAME_SIZE - size;
    let start = [rng.range_inclusive(0, max) as i32, rng.range_inclusive(0, max) as i32];
    SceneSpec {
        shape,
        color,
        velocity: [sx * speed, sy * speed],
        start,
        size,
        background,
        length,
        frame_size: FRAME_SIZE,
    }
}

#[derive(Clone, Debug)]
pub struct Clip {
    pub spec: SceneSpec,
    /// Seed of the stream that rendered this clip.
    pub seed: u64,
    pub video: Tensor,
    pub caption: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub clips: Vec<Clip>,
    pub n_train: usize,
}

impl Dataset {
    pub fn train(&self) -> &[Clip] {
        &self.clips[..self.n_train]
    }

    pub fn eval(&self) -> &[Clip] {
        &self.clips[self.n_train..]
    }
}

/// Clip `i` of a dataset rooted at `rng`, rendered from its own derived stream.
pub fn make_indexed_clip(rng: &Rng, index: usize, length: usize) -> Result<Clip> {
    let mut clip_rng = rng.derive(&format!("clip/{index}"));
    let seed = clip_rng.seed();
    let spec = sample_spec(&mut clip_rng, length);
    let (video, caption) = make_clip(&spec, &mut clip_rng)?;
    Ok(Clip { spec, seed, video, caption })
}

/// `n` clips; the first 90% (by index) form the training split.
pub fn make_dataset(n: usize, rng: &Rng, length: usize) -> Result<Dataset> {
    ensure!(n >= 1, Config, "dataset needs at least one clip");
    let clips = (0..n).map(|i| make_indexed_clip(rng, i, length)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { clips, n_train: n - n / 10 })
}
