//! Named MNIST model topologies.
//!
//! Every preset starts with 2x2 average pooling of the 28x28 image (196
//! features) and a dense `feat` layer to 288 units, viewed as a `(32, 3, 3)`
//! tensor. The layer named `fc` then maps those 288 units to 256 and is the one
//! the presets vary:
//!
//! | preset                   | `fc`                                            |
//! |--------------------------|-------------------------------------------------|
//! | `mnist-mlp-baseline`     | dense 288 -> 256                                |
//! | `mnist-mlp-kfc2`         | KFC, Formulation II `(32x64, 9x4)` rank 1       |
//! | `mnist-mlp-kfc-combined` | KFC, II `64x4` + III `128x2` + IV `128x2`       |
//! | `mnist-mlp-cut`          | dense 288 -> `width`, next layer `width -> 10`  |
//! | `mnist-mlp-lowrank`      | `fc.0` dense 288 -> `width`, `fc.1` `width -> 256` |
//!
//! followed by `|tanh|`, dropout and a dense `out` layer to 10 classes.

use std::fmt;
use std::str::FromStr;

use super::layer::Layer;
use super::model::Model;
use super::trainer::streams;
use crate::error::{KfcError, Result};
use crate::kfc::{Formulation, KfcSpec};
use crate::linalg::Rng;

pub const IMAGE_SIDE: usize = 28;
pub const POOL: usize = 2;
/// `(C, H, W)` view of the `fc` input.
pub const FC_INPUT: (usize, usize, usize) = (32, 3, 3);
pub const FC_OUTPUT: usize = 256;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Baseline,
    Kfc2,
    KfcCombined,
    Cut,
    LowRank,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Baseline, Preset::Kfc2, Preset::KfcCombined, Preset::Cut, Preset::LowRank];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Baseline => "mnist-mlp-baseline",
            Preset::Kfc2 => "mnist-mlp-kfc2",
            Preset::KfcCombined => "mnist-mlp-kfc-combined",
            Preset::Cut => "mnist-mlp-cut",
            Preset::LowRank => "mnist-mlp-lowrank",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = KfcError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.as_str()).collect();
            KfcError::arg(format!("unknown model {s:?}; presets are {}", names.join(", ")))
        })
    }
}

/// One summand group of a KFC `fc` layer: formulation, output factors, rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub formulation: Formulation,
    pub outputs: Vec<usize>,
    pub rank: usize,
}

impl FromStr for GroupSpec {
    type Err = KfcError;

    /// `TAG:K1xK2[xK3][@rank]`, e.g. `II:64x4` or `III:128x2@3`.
    fn from_str(s: &str) -> Result<Self> {
        let (tag, rest) =
            s.split_once(':').ok_or_else(|| KfcError::arg(format!("group {s:?} is not TAG:K1xK2[@rank]")))?;
        let (ks, rank) = match rest.split_once('@') {
            Some((ks, r)) => (ks, r.parse().map_err(|_| KfcError::arg(format!("bad rank in group {s:?}")))?),
            None => (rest, 1),
        };
        let outputs = ks
            .split('x')
            .map(|k| k.parse::<usize>().map_err(|_| KfcError::arg(format!("bad factor size in group {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupSpec { formulation: tag.parse()?, outputs, rank })
    }
}

/// Model-shape settings shared by every preset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Groups of the KFC `fc` layer; `None` uses the preset's default.
    pub groups: Option<Vec<GroupSpec>>,
    /// Hidden width of the cut and low-rank presets.
    pub width: usize,
    pub dropout_keep: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { preset: Preset::Baseline, groups: None, width: 96, dropout_keep: 0.5 }
    }
}

impl ModelConfig {
    pub fn groups(&self) -> Vec<GroupSpec> {
        if let Some(g) = &self.groups {
            return g.clone();
        }
        let g = |formulation, outputs: &[usize]| GroupSpec { formulation, outputs: outputs.to_vec(), rank: 1 };
        match self.preset {
            Preset::KfcCombined => {
                vec![g(Formulation::II, &[64, 4]), g(Formulation::III, &[128, 2]), g(Formulation::IV, &[128, 2])]
            }
            _ => vec![g(Formulation::II, &[64, 4])],
        }
    }

    /// Structure of the `fc` layer for the KFC presets.
    pub fn fc_spec(&self) -> Result<KfcSpec> {
        let (c, h, w) = FC_INPUT;
        let parts = self
            .groups()
            .iter()
            .map(|g| KfcSpec::formulation(g.formulation, (c, h, w, FC_OUTPUT), &g.outputs, g.rank))
            .collect::<Result<Vec<_>>>()?;
        KfcSpec::combine(&parts)
    }

    /// Builds the preset with freshly initialized parameters drawn from the
    /// seed's init stream.
    pub fn build(&self, seed: u64) -> Result<Model> {
        let mut model = self.skeleton()?;
        model.init(&mut Rng::derive(seed, streams::INIT));
        Ok(model)
    }

    /// The preset with all parameters zero.
    pub fn skeleton(&self) -> Result<Model> {
        if self.width == 0 {
            return Err(KfcError::arg("width must be positive"));
        }
        let fc_in = FC_INPUT.0 * FC_INPUT.1 * FC_INPUT.2;
        let side = IMAGE_SIDE / POOL;
        let mut layers = vec![
            Layer::AvgPool { channels: 1, height: IMAGE_SIDE, width: IMAGE_SIDE, size: POOL },
            Layer::dense("feat", side * side, fc_in),
            Layer::AbsTanh,
        ];
        let hidden = match self.preset {
            Preset::Baseline => {
                layers.push(Layer::dense("fc", fc_in, FC_OUTPUT));
                FC_OUTPUT
            }
            Preset::Kfc2 | Preset::KfcCombined => {
                layers.push(Layer::kfc("fc", self.fc_spec()?));
                FC_OUTPUT
            }
            Preset::Cut => {
                layers.push(Layer::dense("fc", fc_in, self.width));
                self.width
            }
            Preset::LowRank => {
                layers.push(Layer::dense("fc.0", fc_in, self.width));
                layers.push(Layer::dense("fc.1", self.width, FC_OUTPUT));
                FC_OUTPUT
            }
        };
        layers.extend([
            Layer::AbsTanh,
            Layer::Dropout { keep: self.dropout_keep },
            Layer::dense("out", hidden, CLASSES),
        ]);
        Model::new(self.preset.as_str(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("mnist-cnn".parse::<Preset>().unwrap_err().to_string().contains("mnist-mlp-baseline"));
    }

    #[test]
    fn fc_layer_sizes() {
        let fc = |preset| {
            let m = ModelConfig { preset, ..Default::default() }.skeleton().unwrap();
            m.layers()
                .iter()
                .filter(|l| l.name().is_some_and(|n| n.starts_with("fc")))
                .map(Layer::param_count)
                .sum::<u64>()
        };
        assert_eq!(fc(Preset::Baseline), 288 * 256 + 256);
        assert_eq!(fc(Preset::Kfc2), 2084 + 256);
        assert_eq!(fc(Preset::KfcCombined), 26672 + 256);
        assert_eq!(fc(Preset::Cut), 288 * 96 + 96);
        assert_eq!(fc(Preset::LowRank), 288 * 96 + 96 + 96 * 256 + 256);
    }

    #[test]
    fn group_syntax() {
        let g: GroupSpec = "III:128x2@3".parse().unwrap();
        assert_eq!(g, GroupSpec { formulation: Formulation::III, outputs: vec![128, 2], rank: 3 });
        assert!("V:1x2".parse::<GroupSpec>().is_err());
        assert!("II:64-4".parse::<GroupSpec>().is_err());
    }

    #[test]
    fn build_is_seeded() {
        let cfg = ModelConfig { preset: Preset::Kfc2, ..Default::default() };
        assert_eq!(cfg.build(3).unwrap(), cfg.build(3).unwrap());
        assert_ne!(cfg.build(3).unwrap(), cfg.build(4).unwrap());
    }
}
