//! Combining the video-stream and keypoint-stream encodings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};
use crate::stgcn::{lstm_forward, LstmCellParams};
use crate::transformer::Linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionKind {
    #[default]
    Summation,
    Linear,
    Lstm,
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_matches('"') {
            "summation" | "sum" => Ok(FusionKind::Summation),
            "linear" => Ok(FusionKind::Linear),
            "lstm" => Ok(FusionKind::Lstm),
            other => Err(Error::invalid(format!(
                "unknown fusion strategy {other:?} (expected summation, linear or lstm)"
            ))),
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Summation => "summation",
            FusionKind::Linear => "linear",
            FusionKind::Lstm => "lstm",
        })
    }
}

/// A fusion strategy together with its parameters.
#[derive(Debug, Clone)]
pub enum FusionStrategy {
    Summation,
    /// `(ψ ⊕ H)·W + b`, `W` of shape `[2d × d]`.
    Linear(Linear),
    /// LSTM over the concatenated sequence, hidden size `d`.
    Lstm(LstmCellParams),
}

impl FusionStrategy {
    pub fn new(
        kind: FusionKind,
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match kind {
            FusionKind::Summation => FusionStrategy::Summation,
            FusionKind::Linear => FusionStrategy::Linear(Linear::new(
                store,
                &format!("{prefix}.linear"),
                2 * d_model,
                d_model,
                true,
                rng,
            )?),
            FusionKind::Lstm => FusionStrategy::Lstm(LstmCellParams::new(
                store,
                &format!("{prefix}.lstm"),
                2 * d_model,
                d_model,
                rng,
            )?),
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            FusionStrategy::Summation => FusionKind::Summation,
            FusionStrategy::Linear(_) => FusionKind::Linear,
            FusionStrategy::Lstm(_) => FusionKind::Lstm,
        }
    }
}

pub fn fuse<'p>(
    g: &mut Graph<'p>,
    store: &'p ParamStore,
    psi: Var,
    h: Var,
    strategy: &FusionStrategy,
) -> Result<Var> {
    if g.shape(psi) != g.shape(h) {
        return Err(Error::shape("fuse", g.shape(psi), g.shape(h)));
    }
    match strategy {
        FusionStrategy::Summation => g.add(psi, h),
        FusionStrategy::Linear(lin) => {
            let cat = g.concat(&[psi, h], 1)?;
            lin.forward(g, store, cat)
        }
        FusionStrategy::Lstm(cell) => {
            let cat = g.concat(&[psi, h], 1)?;
            lstm_forward(cell, g, store, cat)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn summation_example() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let y = fuse(&mut g, &store, a, b, &FusionStrategy::Summation).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 6.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 4]));
        let b = g.constant(Tensor::zeros(&[3, 4]));
        let err = fuse(&mut g, &store, a, b, &FusionStrategy::Summation).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 4]") && msg.contains("[3, 4]"), "{msg}");
    }

    #[test]
    fn kind_roundtrip() {
        for k in [FusionKind::Summation, FusionKind::Linear, FusionKind::Lstm] {
            assert_eq!(k.to_string().parse::<FusionKind>().unwrap(), k);
        }
        assert!("gate".parse::<FusionKind>().is_err());
    }
}
