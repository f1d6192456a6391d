//! The `rcrank` command-line tool.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::diffcore::Checkpoint;
use crate::domain::sql::Vocab;
use crate::domain::{Dataset, QueryRecord, Split};
use crate::encoders::{EncoderConfig, Modality};
use crate::error::{Error, Result};
use crate::evalkit::{
    lambda_sweep, oracle_estimates, pretrain_encoders, run_variants, HarnessConfig, MetricOptions,
    MetricsReport, Timing, Variant,
};
use crate::fusion::FusionConfig;
use crate::pretrain::{run_pretraining, MaskMode, PretrainConfig};
use crate::synthgen::{generate_workload, CatalogKind, GenConfig};
use crate::trainer::{
    diagnose, labeled_inputs, train, ModelConfig, OrderMode, RCRankModel, TrainConfig,
};

/// Every tunable of every command, as one flat table. Unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,

    pub total: usize,
    pub labeled: usize,
    pub catalog: CatalogKind,
    pub delta: f64,
    pub label_margin: f64,
    pub noise_sigma: f64,
    pub tables: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,

    pub d: usize,
    pub sql_layers: usize,
    pub sql_heads: usize,
    pub max_sql_len: usize,
    pub plan_layers: usize,
    pub plan_heads: usize,
    pub structural_bias: bool,
    pub fusion_blocks: usize,
    pub main_modality: Modality,
    pub share_adaptive: bool,
    pub per_cause_heads: bool,

    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub dropout: f64,
    pub order: OrderMode,

    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub mask_mode: MaskMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        let e = EncoderConfig::default();
        let f = FusionConfig::default();
        let t = TrainConfig::default();
        let p = PretrainConfig::default();
        RunConfig {
            seed: 0,
            threads: None,
            total: g.total,
            labeled: g.labeled,
            catalog: g.catalog,
            delta: g.delta,
            label_margin: g.eta,
            noise_sigma: g.noise_sigma,
            tables: g.tables,
            train_ratio: g.train_ratio,
            val_ratio: g.val_ratio,
            test_ratio: g.test_ratio,
            d: e.d,
            sql_layers: e.sql_layers,
            sql_heads: e.sql_heads,
            max_sql_len: e.max_sql_len,
            plan_layers: e.plan_layers,
            plan_heads: e.plan_heads,
            structural_bias: e.structural_bias,
            fusion_blocks: f.blocks,
            main_modality: f.main,
            share_adaptive: f.share_adaptive,
            per_cause_heads: t.model.per_cause_heads,
            batch: t.batch,
            epochs: t.epochs,
            lr: t.lr,
            lambda: t.lambda,
            epsilon: t.epsilon,
            eta: t.eta,
            dropout: t.dropout,
            order: t.order,
            pretrain_epochs: p.epochs,
            pretrain_batch: p.batch,
            pretrain_lr: p.lr,
            mask_mode: p.mask_mode,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Apply one `key=value` override, parsed as a TOML value (bare words
    /// are taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("expected key=value, got `{assignment}`"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut table = toml::Table::try_from(&*self).expect("config serialises");
        if !table.contains_key(key) && key != "threads" {
            return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
        }
        table.insert(key.to_string(), parsed);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        Ok(())
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            total: self.total,
            labeled: self.labeled,
            catalog: self.catalog,
            delta: self.delta,
            epsilon: self.epsilon,
            eta: self.label_margin,
            noise_sigma: self.noise_sigma,
            tables: self.tables,
            train_ratio: self.train_ratio,
            val_ratio: self.val_ratio,
            test_ratio: self.test_ratio,
            ..GenConfig::default()
        }
    }

    pub fn encoder_config(&self, kpi: Option<(usize, usize)>) -> EncoderConfig {
        let mut e = EncoderConfig {
            d: self.d,
            sql_layers: self.sql_layers,
            sql_heads: self.sql_heads,
            max_sql_len: self.max_sql_len,
            plan_layers: self.plan_layers,
            plan_heads: self.plan_heads,
            structural_bias: self.structural_bias,
            log_hidden: vec![2 * self.d, self.d],
            dropout: self.dropout,
            ..EncoderConfig::default()
        };
        if let Some((q, t)) = kpi {
            e.kpi_q = q;
            e.kpi_t = t;
        }
        e
    }

    pub fn train_config(&self, kpi: Option<(usize, usize)>) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            epochs: self.epochs,
            lr: self.lr,
            lambda: self.lambda,
            epsilon: self.epsilon,
            eta: self.eta,
            seed: self.seed,
            dropout: self.dropout,
            order: self.order,
            model: ModelConfig {
                encoder: self.encoder_config(kpi),
                fusion: FusionConfig {
                    d: self.d,
                    blocks: self.fusion_blocks,
                    main: self.main_modality,
                    share_adaptive: self.share_adaptive,
                    dropout: self.dropout,
                },
                per_cause_heads: self.per_cause_heads,
                ..ModelConfig::default()
            },
        }
    }

    pub fn pretrain_config(&self, kpi: Option<(usize, usize)>) -> PretrainConfig {
        PretrainConfig {
            encoder: self.encoder_config(kpi),
            epochs: self.pretrain_epochs,
            batch: self.pretrain_batch,
            lr: self.pretrain_lr,
            seed: self.seed,
            mask_mode: self.mask_mode,
            ..PretrainConfig::default()
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "rcrank",
    version,
    about = "Root-cause ranking for slow SQL queries"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (also `RCRANK_THREADS`).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled synthetic workload as JSON lines.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the modality encoders on a dataset's pretraining pool.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ranker on the train split, selecting on val.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics of a model (or `oracle`) on one split.
    Eval {
        /// Checkpoint path, or `oracle` for estimates equal to the labels.
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// Report path; a `.csv` twin is written next to it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Add wall-clock inference timing to the report.
        #[arg(long)]
        timing: bool,
    },
    /// Rank the root causes of one record.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        /// File holding one record as JSON (a dataset line).
        #[arg(long)]
        query: PathBuf,
    },
    /// Train and test model variants over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variant names, or `all`.
        #[arg(long, default_value = "full,concat,no-gate,mse-only,no-pretrain")]
        variants: String,
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        /// Output directory for the table files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per lambda value.
    SweepLambda {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "1,3,5,7,10")]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Process exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotFound(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Numerical(_) => 4,
        Error::InvalidInput(_)
        | Error::InvalidPlan(_)
        | Error::MissingLogField(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::InvalidSpec(_)
        | Error::DegenerateSpec(_)
        | Error::InvalidConfig(_)
        | Error::Shape { .. }
        | Error::Checkpoint(_)
        | Error::Json(_)
        | Error::InsufficientData(_) => 3,
        _ => 1,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// `<path>.config.toml`, the resolved configuration of the run that wrote `path`.
pub fn config_echo_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.toml");
    PathBuf::from(s)
}

/// Write to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} `{p}`")))
        })
        .collect()
}

/// Resolve the configuration: defaults, then the file, then `--set`, then
/// dedicated flags and `RCRANK_THREADS`.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.set(o)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Ok(v) = std::env::var("RCRANK_THREADS") {
        let n = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("RCRANK_THREADS=`{v}` is not a count")))?;
        cfg.threads = Some(n);
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if cfg.threads == Some(0) {
        return Err(Error::InvalidConfig("threads must be positive".into()));
    }
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<RCRankModel> {
    RCRankModel::from_checkpoint(&Checkpoint::load(path)?)
}

fn split_of(ds: &Dataset, name: &str) -> Result<Dataset> {
    Ok(match name {
        "all" => ds.clone(),
        "train" => ds.subset(Split::Train),
        "val" => ds.subset(Split::Val),
        "test" => ds.subset(Split::Test),
        other => return Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
    })
}

fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(report)? + "\n"))?;
    write(
        &path.with_extension("csv"),
        &format!("{}\n{}\n", MetricsReport::csv_header(), report.csv_row()),
    )
}

/// Run one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::GenData { out } => {
            let ds = generate_workload(&cfg.gen_config(), cfg.seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            ds.save(&out)?;
            write(&config_echo_path(&out), &cfg.to_toml())?;
            emit(&format!(
                "wrote {} records ({} labeled) to {}\n",
                ds.len(),
                ds.labeled().count(),
                out.display()
            ));
        }
        Command::Pretrain { data, epochs, out } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.pretrain_epochs = e;
            }
            let ds = Dataset::load(&data)?;
            let pcfg = cfg.pretrain_config(ds.kpi_shape());
            let outcome = run_pretraining(&ds.pretrain_pool(), &pcfg)?;
            outcome.checkpoint(&pcfg).save(&out)?;
            write(&out.with_extension("csv"), &outcome.history_csv())?;
            write(&config_echo_path(&out), &cfg.to_toml())?;
            emit(&format!("wrote encoder checkpoint to {}\n", out.display()));
        }
        Command::Train {
            data,
            pretrained,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            let tcfg = cfg.train_config(ds.kpi_shape());
            let ckpt = pretrained.as_deref().map(Checkpoint::load).transpose()?;
            let outcome = train(
                &ds.subset(Split::Train),
                &ds.subset(Split::Val),
                ckpt.as_ref(),
                &tcfg,
            )?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            outcome.save(&tcfg, &out)?;
            write(&config_echo_path(&out), &cfg.to_toml())?;
            emit(&format!(
                "best epoch {} of {}; wrote {}\n",
                outcome.best_epoch + 1,
                tcfg.epochs,
                out.display()
            ));
        }
        Command::Eval {
            model,
            data,
            report,
            split,
            timing,
        } => {
            let ds = split_of(&Dataset::load(&data)?, &split)?;
            let opts = MetricOptions {
                epsilon: cfg.epsilon,
                ..MetricOptions::default()
            };
            let start = Instant::now();
            let (truth, est) = if model == "oracle" {
                let recs: Vec<QueryRecord> = ds.labeled().cloned().collect();
                let truth: Vec<Vec<f64>> = recs
                    .iter()
                    .map(|r| r.impacts.clone().expect("labeled"))
                    .collect();
                let est = oracle_estimates(&recs, ds.simulator.as_ref())?;
                (truth, est)
            } else {
                let m = load_model(Path::new(&model))?;
                let (xs, ys) = labeled_inputs(&m, &ds)?;
                (ys, m.estimate_all(&xs)?)
            };
            let elapsed = start.elapsed().as_secs_f64();
            let mut r = MetricsReport::compute(&truth, &est, &opts)?;
            if timing {
                r.timing = Some(Timing {
                    train_s_per_epoch: None,
                    inference_s_per_query: Some(elapsed / truth.len().max(1) as f64),
                });
            }
            write_report(&report, &r)?;
            write(&config_echo_path(&report), &cfg.to_toml())?;
            emit(&(serde_json::to_string_pretty(&r)? + "\n"));
        }
        Command::Diagnose { model, query } => {
            let m = load_model(&model)?;
            let text = read(&query)?;
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .ok_or_else(|| Error::InvalidInput("empty query file".into()))?;
            let v: serde_json::Value = serde_json::from_str(line)?;
            let record = QueryRecord::from_json(&v, &Vocab::standard())?;
            let d = diagnose(&m, &record, cfg.epsilon)?;
            emit(&format!(
                "{}\n{}",
                serde_json::to_string(&d.causes)?,
                d.table()
            ));
        }
        Command::Ablate {
            data,
            variants,
            seeds,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            let variants = Variant::parse_list(&variants)?;
            let seeds: Vec<u64> = parse_list(&seeds, "seed")?;
            let harness = HarnessConfig {
                train: cfg.train_config(ds.kpi_shape()),
                pretrain_epochs: cfg.pretrain_epochs,
            };
            let table = run_variants(&ds, &variants, &seeds, &harness)?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                write(&dir.join("ablation.json"), &table.to_json())?;
                write(&dir.join("ablation.csv"), &table.to_csv())?;
                write(&dir.join("ablation.txt"), &table.to_text())?;
                for m in ["top1_acc", "tau", "v_acc", "mc_acc"] {
                    write(&dir.join(format!("ablation_{m}.svg")), &table.to_svg(m))?;
                }
                write(&dir.join("run.config.toml"), &cfg.to_toml())?;
            }
            emit(&table.to_text());
        }
        Command::SweepLambda { data, values, out } => {
            let ds = Dataset::load(&data)?;
            let values: Vec<f64> = parse_list(&values, "lambda")?;
            let tcfg = cfg.train_config(ds.kpi_shape());
            let ckpt = if cfg.pretrain_epochs > 0 {
                info!("pretraining encoders for {} epochs", cfg.pretrain_epochs);
                Some(pretrain_encoders(
                    &ds,
                    &cfg.pretrain_config(ds.kpi_shape()),
                )?)
            } else {
                None
            };
            let sweep = lambda_sweep(&ds, &values, &tcfg, ckpt.as_ref())?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                write(&dir.join("lambda.json"), &sweep.to_json())?;
                write(&dir.join("lambda.csv"), &sweep.to_csv())?;
                write(&dir.join("run.config.toml"), &cfg.to_toml())?;
            }
            emit(&sweep.to_text());
        }
    }
    Ok(())
}

/// Entry point of the binary: parse, run, and map errors to exit codes.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "error: {}: {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.train_config(None), TrainConfig::default());
        assert_eq!(cfg.gen_config(), GenConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml("epochs = 3\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!(e.category(), "invalid_config");
        assert_eq!(exit_code(&e), 3);
        let mut cfg = RunConfig::default();
        assert!(cfg.set("nonsense=1").is_err());
        assert!(cfg.set("epochs").is_err());
    }

    #[test]
    fn overrides_parse_typed_values() {
        let mut cfg = RunConfig::default();
        cfg.set("epochs=7").unwrap();
        cfg.set("lr = 0.01").unwrap();
        cfg.set("main_modality=log").unwrap();
        cfg.set("catalog=\"extended10\"").unwrap();
        cfg.set("threads=2").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.main_modality, Modality::Log);
        assert_eq!(cfg.catalog, CatalogKind::Extended10);
        assert_eq!(cfg.threads, Some(2));
        assert!(cfg.set("epochs=many").is_err());
    }

    #[test]
    fn flags_take_precedence_over_the_file() {
        let common = Common {
            overrides: vec!["seed=5".into(), "epochs=2".into()],
            seed: Some(9),
            ..Common::default()
        };
        let cfg = resolve_config(&common).unwrap();
        assert_eq!((cfg.seed, cfg.epochs), (9, 2));
    }

    #[test]
    fn exit_codes_follow_the_error_kind() {
        assert_eq!(exit_code(&Error::NotFound("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 3);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
        assert_eq!(exit_code(&Error::Unsupported("x".into())), 1);
    }

    #[test]
    fn echo_path_appends_suffix() {
        assert_eq!(
            config_echo_path(Path::new("out/m.ckpt")),
            PathBuf::from("out/m.ckpt.config.toml")
        );
    }
}
