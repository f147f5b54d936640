//! Run configuration: `key = value` lines, `#` starts a comment.
//!
//! | key            | default              | meaning                                   |
//! |----------------|----------------------|-------------------------------------------|
//! | `model`        | `mnist-mlp-baseline` | preset name                               |
//! | `formulation`  | `II`                 | single-group KFC formulation (I–IV)       |
//! | `k1` `k2` `k3` | per formulation      | output factors (II 64x4, III/IV 128x2, I 16x4x4) |
//! | `rank`         | `1`                  | terms in the single group                 |
//! | `groups`       | preset               | `TAG:K1xK2[@rank]` list, comma separated  |
//! | `width`        | `96`                 | hidden width of the cut/low-rank presets  |
//! | `lr`           | `1e-4`               | learning rate                             |
//! | `weight_decay` | `1e-4`               | decoupled weight decay                    |
//! | `dropout_keep` | `0.5`                | keep probability                          |
//! | `batch_size`   | `64`                 |                                           |
//! | `epochs`       | `10`                 |                                           |
//! | `seed`         | `1`                  | run seed                                  |
//! | `optimizer`    | `adam`               | `adam` or `sgd`                           |
//! | `val_size`     | `10000`              | rows held out from the end of the training file |
//! | `train_limit`  | all                  | use only the first N training-file rows   |
//! | `data_dir`     | none                 | directory with the MNIST IDX files        |
//!
//! Unknown keys, repeated keys and unparsable values are errors.

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{KfcError, Result};
use crate::kfc::Formulation;
use crate::train::{GroupSpec, ModelConfig, OptimizerKind, Preset, TrainConfig};

pub const KEYS: [&str; 18] = [
    "model",
    "formulation",
    "k1",
    "k2",
    "k3",
    "rank",
    "groups",
    "width",
    "lr",
    "weight_decay",
    "dropout_keep",
    "batch_size",
    "epochs",
    "seed",
    "optimizer",
    "val_size",
    "train_limit",
    "data_dir",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Whether `model` was set explicitly.
    pub model_given: bool,
    /// Whether `seed` was set explicitly.
    pub seed_given: bool,
    pub train_limit: Option<usize>,
    pub data_dir: Option<PathBuf>,
}

fn default_outputs(f: Formulation) -> Vec<usize> {
    match f {
        Formulation::I => vec![16, 4, 4],
        Formulation::II => vec![64, 4],
        _ => vec![128, 2],
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(&str, usize)> = Vec::new();
    let mut formulation: Option<Formulation> = None;
    let mut ks: [Option<usize>; 3] = [None; 3];
    let mut rank: Option<usize> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| KfcError::Config { line, msg };
        let (key, value) =
            content.split_once('=').ok_or_else(|| err(format!("expected key=value, found {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let Some(&key) = KEYS.iter().find(|&&k| k == key) else {
            return Err(err(format!("unknown key {key:?}; valid keys are {}", KEYS.join(", "))));
        };
        if let Some((_, first)) = seen.iter().find(|(k, _)| *k == key) {
            return Err(err(format!("{key} already set on line {first}")));
        }
        seen.push((key, line));
        fn num<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
            value.parse().map_err(|_| KfcError::Config { line, msg: format!("{key}: cannot parse {value:?}") })
        }
        let positive = |v: usize| if v == 0 { Err(err(format!("{key} must be positive"))) } else { Ok(v) };
        match key {
            "model" => {
                cfg.model.preset = value.parse::<Preset>().map_err(|e| err(e.to_string()))?;
                cfg.model_given = true;
            }
            "formulation" => {
                let f = value.parse::<Formulation>().map_err(|e| err(e.to_string()))?;
                if f == Formulation::Kfcm {
                    return Err(err("KFCM applies to matrix input; the fc layer takes a (32,3,3) tensor".into()));
                }
                formulation = Some(f);
            }
            "k1" => ks[0] = Some(positive(num(key, value, line)?)?),
            "k2" => ks[1] = Some(positive(num(key, value, line)?)?),
            "k3" => ks[2] = Some(positive(num(key, value, line)?)?),
            "rank" => rank = Some(positive(num(key, value, line)?)?),
            "groups" => {
                let groups = value
                    .split(',')
                    .map(|g| g.trim().parse::<GroupSpec>())
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| err(e.to_string()))?;
                cfg.model.groups = Some(groups);
            }
            "width" => cfg.model.width = positive(num(key, value, line)?)?,
            "lr" => cfg.train.lr = num(key, value, line)?,
            "weight_decay" => cfg.train.weight_decay = num(key, value, line)?,
            "dropout_keep" => {
                let keep: f64 = num(key, value, line)?;
                cfg.train.dropout_keep = keep;
                cfg.model.dropout_keep = keep;
            }
            "batch_size" => cfg.train.batch_size = positive(num(key, value, line)?)?,
            "epochs" => cfg.train.epochs = positive(num(key, value, line)?)?,
            "seed" => {
                cfg.train.seed = num(key, value, line)?;
                cfg.seed_given = true;
            }
            "optimizer" => cfg.train.optimizer = value.parse::<OptimizerKind>().map_err(|e| err(e.to_string()))?,
            "val_size" => cfg.train.val_size = num(key, value, line)?,
            "train_limit" => cfg.train_limit = Some(positive(num(key, value, line)?)?),
            "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
            _ => unreachable!("key list and match arms agree"),
        }
        cfg.train.validate().map_err(|e| err(e.to_string()))?;
    }

    let single = ["formulation", "k1", "k2", "k3", "rank"];
    let last_single = seen.iter().filter(|(k, _)| single.contains(k)).map(|&(_, l)| l).max();
    if let Some(line) = last_single {
        if let Some(&(_, gl)) = seen.iter().find(|(k, _)| *k == "groups") {
            return Err(KfcError::Config {
                line: line.max(gl),
                msg: "groups cannot be combined with formulation/k1/k2/k3/rank".into(),
            });
        }
        let f = formulation.unwrap_or(Formulation::II);
        let mut outputs = default_outputs(f);
        for (o, k) in outputs.iter_mut().zip(ks) {
            if let Some(k) = k {
                *o = k;
            }
        }
        if ks[2].is_some() && f != Formulation::I {
            return Err(KfcError::Config { line, msg: format!("k3 only applies to formulation I, not {f}") });
        }
        cfg.model.groups = Some(vec![GroupSpec { formulation: f, outputs, rank: rank.unwrap_or(1) }]);
    }
    if matches!(cfg.model.preset, Preset::Kfc2 | Preset::KfcCombined) || cfg.model.groups.is_some() {
        let line =
            seen.iter().filter(|(k, _)| single.contains(k) || *k == "groups" || *k == "model").map(|&(_, l)| l).max();
        cfg.model.fc_spec().map_err(|e| KfcError::Config { line: line.unwrap_or(0), msg: e.to_string() })?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.lr, 1e-4);
    }

    #[test]
    fn hyperparameters() {
        let cfg = parse_config("lr=1e-4\nweight_decay=1e-4\ndropout_keep=0.5\n").unwrap();
        assert_eq!((cfg.train.lr, cfg.train.weight_decay, cfg.train.dropout_keep), (1e-4, 1e-4, 0.5));
        let cfg =
            parse_config("# comment\n model = mnist-mlp-kfc2 # trailing\nrank=3\nseed = 9\noptimizer=sgd").unwrap();
        assert_eq!(cfg.model.preset, Preset::Kfc2);
        assert_eq!(cfg.model.groups.as_ref().unwrap()[0].rank, 3);
        assert!(cfg.seed_given && cfg.train.seed == 9);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Sgd);
    }

    #[test]
    fn formulation_defaults_and_overrides() {
        let g = parse_config("model=mnist-mlp-kfc2\nformulation=III").unwrap().model.groups.unwrap();
        assert_eq!(g[0].outputs, vec![128, 2]);
        let g = parse_config("formulation=I\nk3=8\nk2=2").unwrap().model.groups.unwrap();
        assert_eq!(g[0].outputs, vec![16, 2, 8]);
        let g = parse_config("groups=II:64x4, IV:128x2@2").unwrap().model.groups.unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].rank, 2);
    }

    fn line_of(text: &str) -> (usize, String) {
        match parse_config(text).unwrap_err() {
            KfcError::Config { line, msg } => (line, msg),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let (line, msg) = line_of("lr=1\nformulation=V");
        assert_eq!(line, 2);
        assert!(msg.contains("I, II, III, IV, KFCM"), "{msg}");
        assert_eq!(line_of("\n\nbogus=1").0, 3);
        assert_eq!(line_of("epochs=ten").0, 1);
        assert_eq!(line_of("epochs=1\nepochs=2").0, 2);
        assert_eq!(line_of("dropout_keep=0").0, 1);
        assert_eq!(line_of("just words").0, 1);
        assert_eq!(line_of("model=mnist-mlp-kfc2\nk1=60").0, 2);
        assert_eq!(line_of("groups=II:64x4\nrank=2").0, 2);
        assert_eq!(line_of("k3=4").0, 1);
    }
}
