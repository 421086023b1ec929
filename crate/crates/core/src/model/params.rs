//! Named parameters, their trainable groups, and binding onto a tape.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::{AdamState, Tape, Tensor, Var};

/// Which co-training group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Temporal transformer of the video projector.
    Theta,
    /// Temporal blocks of the denoiser.
    Phi,
    /// Everything else; updated only by spatial pretraining.
    Frozen,
}

impl ParamGroup {
    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::Theta => "theta",
            ParamGroup::Phi => "phi",
            ParamGroup::Frozen => "frozen",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
    pub adam: AdamState,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, value: Tensor, group: ParamGroup) -> Result<ParamId> {
        ensure!(self.find(name).is_none(), Config, "duplicate parameter name {}", name);
        let adam = AdamState::new(value.numel());
        self.params.push(Param { name: name.to_string(), value, group, adam });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter on `tape`; only groups accepted by
    /// `trainable` are leaves that collect gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(ParamGroup) -> bool) -> Bound<'t> {
        let vars = self.params.iter().map(|p| tape.leaf(p.value.clone(), trainable(p.group))).collect();
        Bound { tape, vars }
    }

    /// All parameters as constants.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind(tape, |_| false)
    }

    pub fn partition(&self) -> ParamPartition {
        let mut out = ParamPartition::default();
        for p in &self.params {
            let (names, numel) = match p.group {
                ParamGroup::Theta => (&mut out.theta, &mut out.theta_numel),
                ParamGroup::Phi => (&mut out.phi, &mut out.phi_numel),
                ParamGroup::Frozen => (&mut out.frozen, &mut out.frozen_numel),
            };
            names.push(p.name.clone());
            *numel += p.value.numel();
        }
        out
    }
}

/// A parameter store laid onto one tape.
pub struct Bound<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Vars in store order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// Disjoint split of parameter names into the three groups.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ParamPartition {
    pub theta: Vec<String>,
    pub phi: Vec<String>,
    pub frozen: Vec<String>,
    pub theta_numel: usize,
    pub phi_numel: usize,
    pub frozen_numel: usize,
}

impl ParamPartition {
    pub fn group_of(&self, name: &str) -> Option<ParamGroup> {
        let has = |v: &Vec<String>| v.iter().any(|n| n == name);
        if has(&self.theta) {
            Some(ParamGroup::Theta)
        } else if has(&self.phi) {
            Some(ParamGroup::Phi)
        } else if has(&self.frozen) {
            Some(ParamGroup::Frozen)
        } else {
            None
        }
    }

    pub fn total_numel(&self) -> usize {
        self.theta_numel + self.phi_numel + self.frozen_numel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_respects_groups() {
        let mut s = ParamStore::new();
        let a = s.push("a", Tensor::full(&[2], 1.0), ParamGroup::Theta).unwrap();
        let b = s.push("b", Tensor::full(&[2], 2.0), ParamGroup::Frozen).unwrap();
        assert!(s.push("a", Tensor::zeros(&[1]), ParamGroup::Phi).is_err());
        let tape = Tape::new();
        let bound = s.bind(&tape, |g| g != ParamGroup::Frozen);
        let loss = bound.get(a).mul(bound.get(b)).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(bound.get(a)).unwrap().data(), &[2.0, 2.0]);
        assert!(g.get(bound.get(b)).is_none());
        let part = s.partition();
        assert_eq!(part.group_of("b"), Some(ParamGroup::Frozen));
        assert_eq!(part.total_numel(), 4);
    }
}
