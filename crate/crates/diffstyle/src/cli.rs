//! The `diffstyle` command line: `preprocess`, `train`, `generate`, `eval`
//! and `synthetic`, sharing one layered configuration surface
//! (`--config FILE`, `DIFFSTYLE_*` env vars, `--set key=value`, `--seed N`;
//! see [`crate::config`] for precedence).
//!
//! File formats:
//!
//! * raw pair file `<Transfers>.tsv`: `source<TAB>target[<TAB>extra]`, the
//!   stem naming the `+`-joined transfer list; compositional datasets are
//!   one directory of such files.
//! * generation input: `transfers<TAB>source[<TAB>extra]` per line.
//! * generation output and eval input: `label<TAB>sentence` per line.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use ndarray::Array2;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    count_tokens, load_pairs, parse_transfer_list, preprocess_pair, split, write_pairs,
    write_split_manifest, ConditionBuilder, ConditionedPair, CorpusError, SentencePair,
    TransferId,
};
use crate::denoiser::{DenoiserError, DenoiserParams};
use crate::metrics::{evaluate_corpus, MetricReport, MetricsError};
use crate::rng::derive_rng;
use crate::sampler::{ModelBundle, SampleConfig, SamplerError};
use crate::synthetic::{base_run_config, run_benchmark, SyntheticConfig, SyntheticError};
use crate::tokenizer::{TokenizerError, Vocabulary};
use crate::trainer::{EncodedDataset, FitReport, TrainError, Trainer};

/// Split proportions for `preprocess`.
pub const SPLIT_PROPORTIONS: [f64; 3] = [0.9, 0.05, 0.05];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad --mode {0:?}: expected multitask, single:<transfer> or compositional:<dataset>")]
    BadMode(String),
    #[error("no pair files (*.tsv) found under {0}")]
    NoDatasets(PathBuf),
    #[error("{path}:{line}: {reason}")]
    BadInputLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "diffstyle",
    version,
    about = "Diffusion-based fine-grained text style transfer"
)]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config file and `--set seed=N`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Individual overrides, repeatable: `--set lr=0.001`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize raw pair files, split 90/5/5, build the vocabulary.
    Preprocess {
        /// Directory of raw `<Transfers>.tsv` files (compositional datasets
        /// as subdirectories).
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a model on preprocessed data and save a generation bundle.
    Train {
        /// A `preprocess` output directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// `multitask`, `single:<transfer>` or `compositional:<dataset>`.
        #[arg(long, value_name = "MODE")]
        mode: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Generate transferred sentences from a trained bundle.
    Generate {
        /// A `train` output directory.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// TSV of `transfers<TAB>source[<TAB>extra]` lines.
        #[arg(long, value_name = "TSV")]
        input: PathBuf,
        /// Output TSV of `transfers<TAB>hypothesis` lines.
        #[arg(long, value_name = "TSV")]
        out: PathBuf,
    },
    /// Score hypotheses against references.
    Eval {
        #[arg(long, value_name = "TSV")]
        hyp: PathBuf,
        #[arg(long = "ref", value_name = "TSV")]
        reference: PathBuf,
        /// Where to write `report.csv` and `report.txt`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run the synthetic copy-vs-reverse benchmark (exit 0 iff it passes).
    Synthetic {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train_pairs: usize,
        #[arg(long, default_value_t = 200)]
        test_pairs: usize,
    },
}

/// Training data selection.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainMode {
    /// One transfer, bare-source conditions (no style token).
    Single(TransferId),
    /// Every top-level dataset, style-token conditions for all transfers.
    Multitask,
    /// One compositional dataset subdirectory, style-token conditions for
    /// the transfers it contains.
    Compositional(String),
}

impl FromStr for TrainMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "multitask" {
            return Ok(TrainMode::Multitask);
        }
        if let Some(name) = s.strip_prefix("single:") {
            return Ok(TrainMode::Single(name.parse()?));
        }
        if let Some(name) = s.strip_prefix("compositional:") {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(CliError::BadMode(s.to_string()));
            }
            return Ok(TrainMode::Compositional(name.to_string()));
        }
        Err(CliError::BadMode(s.to_string()))
    }
}

/// Layer `--config` / env / `--set` / `--seed` onto `base` and validate.
pub fn resolve_config(cli: &Cli, base: RunConfig) -> Result<RunConfig, CliError> {
    let mut cfg = base;
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env()?;
    cfg.apply_overrides(&cli.sets)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Dispatch a parsed command line; the returned code is the process exit
/// status (only `synthetic` uses a nonzero code without an error: a run
/// whose report misses a threshold exits 1).
pub fn run(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Preprocess { input, out } => {
            let cfg = resolve_config(&cli, RunConfig::default())?;
            let summary = cmd_preprocess(input, out, &cfg)?;
            print!("{}", summary.render());
            Ok(0)
        }
        Command::Train { data, mode, out } => {
            let cfg = resolve_config(&cli, RunConfig::default())?;
            let mode: TrainMode = mode.parse()?;
            let report = cmd_train(data, &mode, out, &cfg)?;
            match report.final_train_loss {
                Some(loss) => println!(
                    "trained {} steps (final loss {loss:.6}); bundle in {}",
                    report.steps_run,
                    out.display()
                ),
                None => println!("trained 0 steps; bundle in {}", out.display()),
            }
            if let Some((step, loss)) = report.best_valid {
                println!("best validation loss {loss:.6} at step {step}");
            }
            Ok(0)
        }
        Command::Generate { model, input, out } => {
            let cfg = resolve_config(&cli, RunConfig::default())?;
            let n = cmd_generate(model, input, out, cfg.train.seed)?;
            println!("wrote {n} hypotheses to {}", out.display());
            Ok(0)
        }
        Command::Eval { hyp, reference, out } => {
            let report = cmd_eval(hyp, reference, out)?;
            print!("{}", report.to_table());
            Ok(0)
        }
        Command::Synthetic {
            out,
            train_pairs,
            test_pairs,
        } => {
            let run = resolve_config(&cli, base_run_config())?;
            let cfg = SyntheticConfig {
                run,
                train_pairs: *train_pairs,
                test_pairs: *test_pairs,
            };
            let report = run_benchmark(&cfg, out)?;
            print!("{}", report.render());
            Ok(if report.pass { 0 } else { 1 })
        }
    }
}

/// One dataset discovered under the raw input directory.
struct RawDataset {
    /// Manifest name: the file stem, prefixed `subdir/` for compositional
    /// datasets.
    name: String,
    transfers: Vec<TransferId>,
    path: PathBuf,
}

fn discover_datasets(input: &Path) -> Result<Vec<RawDataset>, CliError> {
    fn tsv_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "tsv") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.push((stem.to_string(), path));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    let mut datasets = Vec::new();
    for (stem, path) in tsv_stems(input)? {
        datasets.push(RawDataset {
            transfers: parse_transfer_list(&stem)?,
            name: stem,
            path,
        });
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(io_err(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for dir in subdirs {
        let Some(sub) = dir.file_name().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        for (stem, path) in tsv_stems(&dir)? {
            datasets.push(RawDataset {
                transfers: parse_transfer_list(&stem)?,
                name: format!("{sub}/{stem}"),
                path,
            });
        }
    }
    if datasets.is_empty() {
        return Err(CliError::NoDatasets(input.to_path_buf()));
    }
    Ok(datasets)
}

/// What `preprocess` produced, for reporting.
pub struct PreprocessSummary {
    pub out_dir: PathBuf,
    /// `(name, total pairs, [train, valid, test] sizes)` per dataset.
    pub datasets: Vec<(String, usize, [usize; 3])>,
    pub vocab_size: usize,
}

impl PreprocessSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "preprocessed {} dataset(s) into {}\n",
            self.datasets.len(),
            self.out_dir.display()
        );
        for (name, total, sizes) in &self.datasets {
            writeln!(
                out,
                "  {name}: {total} pairs -> {}/{}/{}",
                sizes[0], sizes[1], sizes[2]
            )
            .unwrap();
        }
        writeln!(out, "  vocabulary: {} entries", self.vocab_size).unwrap();
        out
    }
}

/// Load every raw dataset, split it 90/5/5 under the run seed, normalize all
/// splits with the pooled training-split counts, and write per-split pair
/// files plus `splits.manifest`, `vocab.txt` and `counts.tsv`.
pub fn cmd_preprocess(
    input: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<PreprocessSummary, CliError> {
    let datasets = discover_datasets(input)?;
    let seed = cfg.train.seed;
    let mut splits = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let pairs = load_pairs(&ds.path, &ds.transfers)?;
        splits.push(split(&pairs, SPLIT_PROPORTIONS, seed)?);
    }

    // Rare-word counts come from the pooled raw training splits only.
    let pooled_train: Vec<SentencePair> = splits
        .iter()
        .flat_map(|s| s.train.iter().cloned())
        .collect();
    let counts = count_tokens(&pooled_train);

    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut manifest = Vec::new();
    let mut summary = Vec::with_capacity(datasets.len());
    let mut vocab_train = Vec::new();
    for (ds, sp) in datasets.iter().zip(&splits) {
        let total = sp.train.len() + sp.valid.len() + sp.test.len();
        summary.push((
            ds.name.clone(),
            total,
            [sp.train.len(), sp.valid.len(), sp.test.len()],
        ));
        write_split_manifest(&mut manifest, &ds.name, &sp.indices).expect("vec write");
        for (split_name, pairs) in
            [("train", &sp.train), ("valid", &sp.valid), ("test", &sp.test)]
        {
            let cooked: Vec<SentencePair> =
                pairs.iter().map(|p| preprocess_pair(p, &counts)).collect();
            if split_name == "train" {
                vocab_train.extend(cooked.iter().cloned());
            }
            let path = out.join(format!("{}.{split_name}.tsv", ds.name));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            let mut buf = Vec::new();
            write_pairs(&mut buf, &cooked).expect("vec write");
            std::fs::write(&path, buf).map_err(io_err(&path))?;
        }
    }
    let manifest_path = out.join("splits.manifest");
    std::fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;

    let vocab = Vocabulary::build(&vocab_train);
    vocab.save(&out.join("vocab.txt"))?;

    let mut count_rows: Vec<(&String, &usize)> = counts.iter().collect();
    count_rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut counts_text = String::new();
    for (token, count) in count_rows {
        writeln!(counts_text, "{token}\t{count}").unwrap();
    }
    let counts_path = out.join("counts.tsv");
    std::fs::write(&counts_path, counts_text).map_err(io_err(&counts_path))?;

    Ok(PreprocessSummary {
        out_dir: out.to_path_buf(),
        datasets: summary,
        vocab_size: vocab.len(),
    })
}

/// Which preprocessed datasets a mode trains on, as manifest names.
fn select_datasets(data: &Path, mode: &TrainMode) -> Result<Vec<(String, Vec<TransferId>)>, CliError> {
    let list = |dir: &Path, prefix: &str| -> Result<Vec<(String, Vec<TransferId>)>, CliError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            let Some(name) = path.file_name().and_then(|s| s.to_str()) else {
                continue;
            };
            if let Some(stem) = name.strip_suffix(".train.tsv") {
                out.push((
                    format!("{prefix}{stem}"),
                    parse_transfer_list(stem)?,
                ));
            }
        }
        out.sort();
        Ok(out)
    };
    let selected = match mode {
        TrainMode::Single(t) => {
            let path = data.join(format!("{}.train.tsv", t.name()));
            if !path.exists() {
                return Err(CliError::Io {
                    path,
                    source: io::Error::new(io::ErrorKind::NotFound, "no such dataset"),
                });
            }
            vec![(t.name().to_string(), vec![*t])]
        }
        TrainMode::Multitask => list(data, "")?,
        TrainMode::Compositional(sub) => list(&data.join(sub), &format!("{sub}/"))?,
    };
    if selected.is_empty() {
        return Err(CliError::NoDatasets(data.to_path_buf()));
    }
    Ok(selected)
}

fn load_split(
    data: &Path,
    datasets: &[(String, Vec<TransferId>)],
    split_name: &str,
) -> Result<Vec<SentencePair>, CliError> {
    let mut pairs = Vec::new();
    for (name, transfers) in datasets {
        let path = data.join(format!("{name}.{split_name}.tsv"));
        pairs.extend(load_pairs(&path, transfers)?);
    }
    Ok(pairs)
}

/// Train a model on a `preprocess` output directory and leave a loadable
/// generation bundle (plus trainer checkpoints and `loss.csv`) in `out`.
pub fn cmd_train(
    data: &Path,
    mode: &TrainMode,
    out: &Path,
    cfg: &RunConfig,
) -> Result<FitReport, CliError> {
    let datasets = select_datasets(data, mode)?;
    let builder = match mode {
        TrainMode::Single(t) => ConditionBuilder::single_task(*t),
        TrainMode::Multitask => ConditionBuilder::multitask(),
        TrainMode::Compositional(_) => {
            let present: HashSet<TransferId> = datasets
                .iter()
                .flat_map(|(_, ts)| ts.iter().copied())
                .collect();
            let union: Vec<TransferId> = TransferId::ALL
                .iter()
                .copied()
                .filter(|t| present.contains(t))
                .collect();
            ConditionBuilder::styled(&union)
        }
    };
    let vocab = Vocabulary::load(&data.join("vocab.txt"))?;

    let condition = |pairs: &[SentencePair]| -> Result<Vec<ConditionedPair>, CliError> {
        pairs
            .iter()
            .map(|p| builder.conditioned(p).map_err(CliError::from))
            .collect()
    };
    let dcfg = &cfg.denoiser;
    let train_pairs = condition(&load_split(data, &datasets, "train")?)?;
    let train_data =
        EncodedDataset::encode(&train_pairs, &vocab, dcfg.max_cond_len, dcfg.max_target_len)?;
    let valid_data = if cfg.train.valid_every > 0 {
        let pairs = condition(&load_split(data, &datasets, "valid")?)?;
        Some(EncodedDataset::encode(
            &pairs,
            &vocab,
            dcfg.max_cond_len,
            dcfg.max_target_len,
        )?)
    } else {
        None
    };

    let schedule = cfg.build_schedule()?;
    let params = DenoiserParams::<f32>::init(
        dcfg,
        vocab.len(),
        &mut derive_rng(cfg.train.seed, "init", 0),
    )?;
    let mut trainer = Trainer::new(params, dcfg.clone(), schedule.clone(), cfg.train.clone())?;
    let report = trainer.fit(&train_data, valid_data.as_ref(), out)?;

    let bundle = ModelBundle {
        params: trainer.params.clone(),
        dcfg: dcfg.clone(),
        schedule,
        vocab,
        builder,
        sample: SampleConfig { clamp: cfg.clamp },
    };
    bundle.save(out)?;
    Ok(report)
}

/// One parsed generation request.
pub struct GenerateRequest {
    /// The raw first column, echoed into the output.
    pub label: String,
    pub transfers: Vec<TransferId>,
    pub source: Vec<String>,
    pub extra: Vec<String>,
}

/// Parse a `transfers<TAB>source[<TAB>extra]` line. The error is a bare
/// reason; the caller attaches file/line context.
pub fn parse_generate_line(line: &str) -> Result<GenerateRequest, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(2..=3).contains(&fields.len()) {
        return Err(format!(
            "expected 2 or 3 tab-separated fields, got {}",
            fields.len()
        ));
    }
    let transfers = parse_transfer_list(fields[0]).map_err(|e| e.to_string())?;
    let source: Vec<String> = fields[1].split_whitespace().map(str::to_string).collect();
    if source.is_empty() {
        return Err("empty source sentence".to_string());
    }
    let extra = fields
        .get(2)
        .map(|f| f.split_whitespace().map(str::to_string).collect())
        .unwrap_or_default();
    Ok(GenerateRequest {
        label: fields[0].to_string(),
        transfers,
        source,
        extra,
    })
}

/// Generate hypotheses for every input line with a trained bundle; returns
/// how many lines were written.
pub fn cmd_generate(
    model: &Path,
    input: &Path,
    out: &Path,
    seed: u64,
) -> Result<usize, CliError> {
    let bundle = ModelBundle::load(model)?;
    let text = std::fs::read_to_string(input).map_err(io_err(input))?;
    let mut labels = Vec::new();
    let mut conds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let req = parse_generate_line(line).map_err(|reason| CliError::BadInputLine {
            path: input.to_path_buf(),
            line: i + 1,
            reason,
        })?;
        let cond = bundle.encode_condition(&req.transfers, &req.extra, &req.source)?;
        labels.push(req.label);
        conds.push(cond);
    }
    if conds.is_empty() {
        return Err(CliError::BadInputLine {
            path: input.to_path_buf(),
            line: 0,
            reason: "no input lines".to_string(),
        });
    }
    let ls = conds[0].len();
    let flat: Vec<u32> = conds.concat();
    let array = Array2::from_shape_vec((labels.len(), ls), flat).expect("uniform rows");
    let hyps = bundle.transfer_encoded_batch(array.view(), seed)?;

    let mut text = String::new();
    for (label, hyp) in labels.iter().zip(&hyps) {
        writeln!(text, "{label}\t{}", hyp.join(" ")).unwrap();
    }
    std::fs::write(out, text).map_err(io_err(out))?;
    Ok(labels.len())
}

/// Score hypothesis lines against reference lines and write `report.csv` and
/// `report.txt` into `out`.
pub fn cmd_eval(hyp: &Path, reference: &Path, out: &Path) -> Result<MetricReport, CliError> {
    let report = evaluate_corpus(hyp, reference)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let csv_path = out.join("report.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(io_err(&csv_path))?;
    let txt_path = out.join("report.txt");
    std::fs::write(&txt_path, report.to_table()).map_err(io_err(&txt_path))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_modes_parse_and_reject() {
        assert_eq!("multitask".parse::<TrainMode>().unwrap(), TrainMode::Multitask);
        assert_eq!(
            "single:ToPast".parse::<TrainMode>().unwrap(),
            TrainMode::Single(TransferId::ToPast)
        );
        assert_eq!(
            "compositional:TenseVoice".parse::<TrainMode>().unwrap(),
            TrainMode::Compositional("TenseVoice".to_string())
        );
        let err = "single:Bogus".parse::<TrainMode>().unwrap_err();
        assert!(err.to_string().contains("ToPast"), "lists valid names: {err}");
        assert!(matches!(
            "reverse".parse::<TrainMode>(),
            Err(CliError::BadMode(_))
        ));
        assert!(matches!(
            "compositional:a/b".parse::<TrainMode>(),
            Err(CliError::BadMode(_))
        ));
    }

    #[test]
    fn generate_lines_parse_and_reject() {
        let req = parse_generate_line("ToPast\the walks home").unwrap();
        assert_eq!(req.transfers, vec![TransferId::ToPast]);
        assert_eq!(req.source, ["he", "walks", "home"]);
        assert!(req.extra.is_empty());

        let req =
            parse_generate_line("ToPast+ActiveToPassive\the walks\tman lazy").unwrap();
        assert_eq!(req.transfers.len(), 2);
        assert_eq!(req.extra, ["man", "lazy"]);

        assert!(parse_generate_line("no tabs at all").is_err());
        assert!(parse_generate_line("a\tb\tc\td").is_err());
        assert!(parse_generate_line("NotATransfer\the walks").is_err());
        assert!(parse_generate_line("ToPast\t   ").is_err());
    }

    #[test]
    fn cli_verbs_and_global_flags_parse() {
        let cli = Cli::try_parse_from([
            "diffstyle",
            "preprocess",
            "--input",
            "raw",
            "--out",
            "cooked",
            "--seed",
            "7",
            "--set",
            "lr=0.5",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.sets, ["lr=0.5"]);
        assert!(matches!(cli.command, Command::Preprocess { .. }));

        let cli = Cli::try_parse_from([
            "diffstyle", "eval", "--hyp", "h.tsv", "--ref", "r.tsv", "--out", "rep",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Eval { .. }));

        assert!(Cli::try_parse_from(["diffstyle", "bogus"]).is_err());
        assert!(Cli::try_parse_from(["diffstyle", "train", "--data", "d"]).is_err());
    }

    #[test]
    fn resolve_config_applies_cli_layers() {
        let cli = Cli::try_parse_from([
            "diffstyle",
            "synthetic",
            "--out",
            "o",
            "--seed",
            "3",
            "--set",
            "max_steps=10",
        ])
        .unwrap();
        let cfg = resolve_config(&cli, base_run_config()).unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.train.max_steps, 10);
        // Base values not overridden survive.
        assert_eq!(cfg.denoiser.model_dim, base_run_config().denoiser.model_dim);
    }
}
