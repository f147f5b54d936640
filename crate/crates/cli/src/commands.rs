use std::io::Write;
use std::path::{Path, PathBuf};

use kfc::io::{self, Checkpoint, Meta, ReportRow, RunConfig};
use kfc::kfc::{materialize, near_sqrt_divisor, Formulation, InputKind, KfcSpec};
use kfc::nkp::{compress_fc, max_rank};
use kfc::selftest::{self, SelftestOptions};
use kfc::train::{self, Dataset, Layer, Model, Preset, TrainOutcome};
use kfc::KfcError;

use crate::{CompressArgs, EvalArgs, FinetuneArgs, ReportArgs, ReportFormat, SelftestArgs, TrainArgs};

pub const SEED_ENV: &str = "KFC_SEED";
const DEFAULT_SEED: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Kfc(#[from] KfcError),
    /// Already reported on stdout (selftest).
    #[error("checks failed")]
    Failed,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Kfc(KfcError::Config { .. }) => 64,
            CliError::Failed => 1,
            CliError::Kfc(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Flag, then config file, then `KFC_SEED`, then 1.
fn resolve_seed(flag: Option<u64>, cfg: Option<&RunConfig>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(c) = cfg.filter(|c| c.seed_given) {
        return Ok(c.train.seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn check_output_path(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(usage(format!("output directory {} does not exist", parent.display())));
    }
    if path.is_dir() {
        return Err(usage(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| KfcError::Data(format!("cannot read config {}: {e}", path.display())))?;
    io::parse_config(&text)
        .map_err(|e| match e {
            KfcError::Config { line, msg } => KfcError::Config { line, msg: format!("{}: {msg}", path.display()) },
            other => other,
        })
        .map_err(CliError::from)
}

fn data_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.data_dir.clone())
        .ok_or_else(|| usage("no data directory: pass --data or set data_dir in the config"))
}

fn percent(e: f64) -> String {
    format!("{:.2}%", 100.0 * e)
}

fn method_label(cfg: &RunConfig) -> String {
    let groups = cfg.model.groups();
    match cfg.model.preset {
        Preset::Baseline => "Baseline".into(),
        Preset::Cut => format!("Cut-{}", cfg.model.width),
        Preset::LowRank => format!("LowRank-{}", cfg.model.width),
        Preset::KfcCombined => "KFC-Combined".into(),
        Preset::Kfc2 if groups.len() > 1 => "KFC-Combined".into(),
        Preset::Kfc2 => {
            let g = &groups[0];
            if g.rank > 1 {
                format!("KFC-{}-Rank{}", g.formulation, g.rank)
            } else {
                format!("KFC-{}", g.formulation)
            }
        }
    }
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_splits(dir: &Path, cfg: &RunConfig) -> Result<Splits> {
    let mnist = io::load_mnist(dir)?;
    let mut full = mnist.train;
    if let Some(limit) = cfg.train_limit {
        full = full.slice(0, limit.min(full.len()));
    }
    let (train, val) = full
        .split_tail(cfg.train.val_size)
        .map_err(|e| KfcError::Data(format!("val_size {}: {e}", cfg.train.val_size)))?;
    Ok(Splits { train, val, test: mnist.test })
}

fn run_training(model: &mut Model, splits: &Splits, cfg: &train::TrainConfig) -> Result<(TrainOutcome, f64)> {
    println!(
        "model {} params {} train {} val {} test {}",
        model.name,
        model.param_count(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let total = cfg.epochs;
    let outcome = train::train(model, &splits.train, &splits.val, cfg, |s| {
        println!("epoch {}/{total} train_loss {:.6} val_error {}", s.epoch, s.train_loss, percent(s.val_error));
    })?;
    let test_error = train::evaluate(&outcome.best, &splits.test)?;
    println!(
        "best epoch {} val_error {} test_error {}",
        outcome.best_epoch,
        percent(outcome.best_val_error()),
        percent(test_error)
    );
    Ok((outcome, test_error))
}

fn run_meta(method: &str, seed: u64, cfg: &train::TrainConfig, outcome: &TrainOutcome, test_error: f64) -> Meta {
    Meta::from([
        ("method".to_string(), method.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("epoch".to_string(), outcome.best_epoch.to_string()),
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("lr".to_string(), cfg.lr.to_string()),
        ("val_error".to_string(), outcome.best_val_error().to_string()),
        ("test_error".to_string(), test_error.to_string()),
    ])
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = read_config(&a.config)?;
    let seed = resolve_seed(a.seed, Some(&cfg))?;
    let dir = data_dir(a.data, &cfg)?;
    check_output_path(&a.out)?;
    cfg.train.seed = seed;

    let splits = load_splits(&dir, &cfg)?;
    let mut model = cfg.model.build(seed)?;
    let (outcome, test_error) = run_training(&mut model, &splits, &cfg.train)?;
    let meta = run_meta(&method_label(&cfg), seed, &cfg.train, &outcome, test_error);
    io::save_checkpoint(&a.out, &outcome.best, &meta)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let mut cfg = read_config(&a.config)?;
    let seed = resolve_seed(a.seed, Some(&cfg))?;
    let dir = data_dir(a.data, &cfg)?;
    check_output_path(&a.out)?;
    cfg.train.seed = seed;

    let Checkpoint { mut model, meta: source } = io::load_checkpoint(&a.from)?;
    if cfg.model_given {
        io::check_topology(&cfg.model.skeleton()?, &model)?;
    }
    let splits = load_splits(&dir, &cfg)?;
    let (outcome, test_error) = run_training(&mut model, &splits, &cfg.train)?;
    let method = source.get("method").cloned().unwrap_or_else(|| model.name.clone());
    let mut meta = run_meta(&method, seed, &cfg.train, &outcome, test_error);
    meta.insert("finetuned_from".into(), a.from.display().to_string());
    io::save_checkpoint(&a.out, &outcome.best, &meta)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ck = io::load_checkpoint(&a.ckpt)?;
    let mnist = io::load_mnist(&a.data)?;
    let errors = train::error_count(&ck.model, &mnist.test)?;
    let rate = errors as f64 / mnist.test.len() as f64;
    println!("test_error {} ({errors}/{})", percent(rate), mnist.test.len());
    Ok(())
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(['x', ','])
        .map(|p| p.trim().parse().map_err(|_| usage(format!("--input-shape {s:?} is not CxHxW"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(usage(format!("--input-shape {s:?} is not CxHxW"))),
    }
}

enum RankArg {
    Full,
    Terms(usize),
}

pub fn compress(a: CompressArgs) -> Result<()> {
    let formulation: Formulation = a.formulation.parse().map_err(|e: KfcError| usage(e.to_string()))?;
    let rank = match a.rank.as_str() {
        "full" => RankArg::Full,
        r => match r.parse::<usize>() {
            Ok(n) if n > 0 => RankArg::Terms(n),
            _ => return Err(usage(format!("--rank {r:?} must be a positive integer or \"full\""))),
        },
    };
    if a.k3.is_some() != (formulation == Formulation::I) {
        return Err(usage("--k3 is required for formulation I and only valid there"));
    }
    if formulation == Formulation::Kfcm && a.input_shape.is_some() {
        return Err(usage("--input-shape applies to formulations I-IV"));
    }
    if formulation != Formulation::Kfcm && a.c1.is_some() {
        return Err(usage("--c1 applies to KFCM only"));
    }
    let input_shape = a.input_shape.as_deref().map(parse_shape).transpose()?;
    check_output_path(&a.out)?;

    let Checkpoint { mut model, meta } = io::load_checkpoint(&a.input)?;
    let index = model
        .position(&a.layer)
        .ok_or_else(|| KfcError::Data(format!("no layer named {:?} in {}", a.layer, a.input.display())))?;
    let Layer::Dense { weight, bias, .. } = &model.layers()[index] else {
        return Err(KfcError::Data(format!("layer {:?} is not dense", a.layer)).into());
    };
    let (weight, bias) = (weight.clone(), bias.clone());
    let (c, k) = weight.shape();

    let build = |r: usize| -> std::result::Result<KfcSpec, KfcError> {
        match formulation {
            Formulation::Kfcm => {
                let c1 = a.c1.unwrap_or_else(|| near_sqrt_divisor(c));
                if a.k1 * a.k2 != k {
                    return Err(KfcError::Shape(format!("--k1 {} x --k2 {} must equal the {k} outputs", a.k1, a.k2)));
                }
                KfcSpec::kfcm(c, k, c1, a.k1, r)
            }
            f => {
                let (ch, h, w) = match input_shape {
                    Some(s) => s,
                    None if c == 288 => kfc::train::presets::FC_INPUT,
                    None => {
                        return Err(KfcError::Argument(format!(
                            "layer input {c} needs --input-shape CxHxW for formulation {f}"
                        )))
                    }
                };
                if ch * h * w != c {
                    return Err(KfcError::Shape(format!("input shape {ch}x{h}x{w} does not cover {c} inputs")));
                }
                let outs: Vec<usize> = [Some(a.k1), Some(a.k2), a.k3].into_iter().flatten().collect();
                KfcSpec::formulation(f, (ch, h, w, k), &outs, r)
            }
        }
    };
    let probe = build(1)?;
    let terms = match rank {
        RankArg::Full => max_rank(&probe.groups()[0].shape),
        RankArg::Terms(n) => n,
    };
    let spec = build(terms)?;
    let weights = compress_fc(&weight, &bias, &spec)?;
    let approx = materialize(&spec, &weights)?;
    let norm = weight.frobenius_norm();
    let rel = if norm == 0.0 { 0.0 } else { weight.sub(&approx)?.frobenius_norm() / norm };

    let before = (weight.len() + bias.len()) as u64;
    let factors = kfc::kfc::count_params(&spec);
    let after = factors + bias.len() as u64;
    let input = match spec.input() {
        InputKind::Tensor { channels, height, width } => format!("({channels},{height},{width})"),
        InputKind::Matrix { features } => features.to_string(),
    };
    model.replace_layer(index, Layer::Kfc { name: a.layer.clone(), spec: spec.clone(), weights })?;
    let mut out_meta: Meta = meta.into_iter().filter(|(k, _)| k == "seed").collect();
    out_meta.insert("method".into(), format!("NKP-{formulation}-Rank{terms}"));
    out_meta.insert("rel_residual".into(), rel.to_string());
    out_meta.insert("compressed_from".into(), a.input.display().to_string());
    io::save_checkpoint(&a.out, &model, &out_meta)?;

    let g = &spec.groups()[0];
    println!("layer {}: dense {c}x{k} → KFC {formulation} input {input} rank {terms} factors {}", a.layer, g.shape);
    println!(
        "params {} → {} ({factors} factors + {} bias), reduction {:.1}%",
        io::human_count(before),
        io::human_count(after),
        bias.len(),
        io::report::reduction(after, before)
    );
    println!("rel_residual {rel:.6e}");
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Topology blocks (a layer line plus its group lines) keyed by layer name;
/// unnamed layers are keyed by their position among unnamed layers.
fn layer_blocks(model: &Model) -> Vec<(String, String)> {
    let text = model.structure();
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut unnamed = 0;
    for line in text.lines() {
        if line.starts_with("group ") {
            if let Some(last) = blocks.last_mut() {
                last.1.push_str("; ");
                last.1.push_str(line);
            }
            continue;
        }
        let key =
            match model.layers().iter().filter_map(Layer::name).find(|n| line.split_whitespace().nth(1) == Some(n)) {
                Some(name) if line.starts_with("dense ") || line.starts_with("kfc ") => name.to_string(),
                _ => {
                    unnamed += 1;
                    format!("#{unnamed}")
                }
            };
        blocks.push((key, line.to_string()));
    }
    blocks
}

/// Differences outside `layer` and its `layer.*` parts, which are expected to change.
fn structure_diff(base: &Model, other: &Model, layer: &str) -> Vec<String> {
    let keep = |(k, _): &(String, String)| k != layer && !k.starts_with(&format!("{layer}."));
    let a: Vec<_> = layer_blocks(base).into_iter().filter(keep).collect();
    let b: Vec<_> = layer_blocks(other).into_iter().filter(keep).collect();
    let mut out = Vec::new();
    for (key, line) in &a {
        match b.iter().find(|(k, _)| k == key) {
            Some((_, l)) if l == line => {}
            Some((_, l)) => out.push(format!("{line} → {l}")),
            None if key.starts_with('#') => out.push(format!("{line} → (absent)")),
            None => out.push(format!("layer {key} missing: {line}")),
        }
    }
    for (key, line) in &b {
        if !a.iter().any(|(k, _)| k == key) {
            out.push(format!("extra layer: {line}"));
        }
    }
    out
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut paths = vec![a.baseline.clone()];
    for p in a.ckpt {
        if !paths.contains(&p) {
            paths.push(p);
        }
    }
    let cks = paths.iter().map(|p| io::load_checkpoint(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    let base = &cks[0].model;
    let mut rows = Vec::new();
    for (path, ck) in paths.iter().zip(&cks) {
        let diff = structure_diff(base, &ck.model, &a.layer);
        if !diff.is_empty() {
            eprintln!("warning: {} differs from the baseline topology:", path.display());
            for d in diff {
                eprintln!("warning:   {d}");
            }
        }
        rows.push(ReportRow {
            method: ck.meta.get("method").cloned().unwrap_or_else(|| ck.model.name.clone()),
            layer_params: io::layer_params(&ck.model, &a.layer),
            model_params: ck.model.param_count(),
            test_error: ck.meta.get("test_error").and_then(|v| v.parse().ok()),
        });
    }
    let text = match a.format {
        ReportFormat::Text => io::emit_report(&rows),
        ReportFormat::Tsv => io::emit_report_tsv(&rows),
    };
    print!("{text}");
    Ok(())
}

pub fn selftest(a: SelftestArgs) -> Result<()> {
    let opts = SelftestOptions { seed: a.seed, inject_backward_fault: a.inject_fault };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let summary = selftest::run(&opts, &mut lock).map_err(KfcError::from)?;
    lock.flush().map_err(KfcError::from)?;
    if summary.ok() {
        Ok(())
    } else {
        Err(CliError::Failed)
    }
}
