//! Caption embedding table with sinusoidal positions and a learned null row.

use super::layers::{sinusoid, Builder};
use super::params::{Bound, ParamId};
use crate::error::{ensure, Result};
use crate::numcore::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub table: ParamId,
    pub null: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl TextEncoder {
    pub fn new(bld: &mut Builder<'_>, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: bld.normal("text.table", &[vocab, dim], 1.0)?,
            null: bld.normal("text.null", &[1, dim], 1.0)?,
            vocab,
            dim,
        })
    }

    /// `[len, dim]`; the empty sequence maps to the `[1, dim]` null row.
    pub fn forward<'t>(&self, p: &Bound<'t>, tokens: &[u32]) -> Result<Var<'t>> {
        if tokens.is_empty() {
            return Ok(p.get(self.null));
        }
        let ids = tokens
            .iter()
            .map(|&t| {
                ensure!((t as usize) < self.vocab, Config, "token {} outside vocabulary of {}", t, self.vocab);
                Ok(t as usize)
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = p.get(self.table).select_axis0(&ids)?;
        let pos: Vec<f32> = (0..ids.len()).flat_map(|i| sinusoid(i as f64, self.dim)).collect();
        let tape = rows.tape();
        rows.add(tape.constant(Tensor::new(&[ids.len(), self.dim], pos)?))
    }

    /// The null row alone.
    pub fn null<'t>(&self, p: &Bound<'t>) -> Var<'t> {
        p.get(self.null)
    }
}
