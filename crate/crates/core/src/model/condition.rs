use crate::error::{ensure, Result};
use crate::numcore::Tensor;

/// What one sample is conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    /// Latent conditioning frames `[n_c, Cz, h, w]`.
    pub frames: Option<Tensor>,
    pub text: Option<Vec<u32>>,
    pub n_c: usize,
    pub is_null: bool,
}

impl ConditionBundle {
    pub fn new(frames: Tensor, text: Vec<u32>) -> Result<Self> {
        ensure!(frames.rank() == 4 && frames.shape()[0] >= 1, Conditioning,
            "condition frames must be [n_c >= 1, C, h, w], got {:?}", frames.shape());
        let n_c = frames.shape()[0];
        Ok(Self { frames: Some(frames), text: Some(text), n_c, is_null: false })
    }

    /// Caption only, no frames; the frame slots use the null tokens.
    pub fn text_only(text: Vec<u32>) -> Self {
        Self { frames: None, text: Some(text), n_c: 0, is_null: false }
    }

    pub fn null() -> Self {
        Self { frames: None, text: None, n_c: 0, is_null: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_null {
            ensure!(self.frames.is_none() && self.text.is_none() && self.n_c == 0, Conditioning,
                "null condition carries payload");
        }
        let frames = self.frames.as_ref().map_or(0, |f| f.shape()[0]);
        ensure!(frames == self.n_c, Conditioning, "n_c = {} but {} frames", self.n_c, frames);
        Ok(())
    }
}
