//! The `ctm` command line: `train`, `sample`, `eval` and `check`, all driven
//! by one TOML run file.
//!
//! Exit codes: 0 ok, 1 check failure, 2 config/usage error, 3 numeric incident.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::checks::{run_suite, CheckReport, CheckSettings, Suite};
use crate::eval::{accumulation_study, denoiser_score, evaluate_samples, nll_pf_ode, oracle_score, write_accumulation_csv, write_samples_csv};
use crate::model::{Architecture, Checkpoint, CtmNetwork, CtmParams, CtmView};
use crate::oracle::GaussianMixture;
use crate::sampling::{edm_stochastic_sample, gamma_sample, prior_samples, OracleFlow, SampleRun, SamplerSpec, SamplerVariant};
use crate::schedule::{sampling_times, ScheduleConfig};
use crate::training::{save_curve, CurvePoint, TrainConfig, Trainer};
use crate::{rng_for, CtmError, Result};

/// Overrides the root that relative `output_dir` values are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "CTM_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub gamma: f64,
    pub nfe: usize,
    pub n_samples: usize,
    pub variant: SamplerVariant,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            nfe: 1,
            n_samples: 10_000,
            variant: SamplerVariant::CtmGamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_mixture")]
    pub mixture: GaussianMixture,
    #[serde(default)]
    pub model: Architecture,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub eval: CheckSettings,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// The 1D two-mode benchmark: modes at ±1 with std 0.2.
pub fn default_mixture() -> GaussianMixture {
    GaussianMixture::symmetric_pair(1.0, 0.2).expect("valid default mixture")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            schedule: ScheduleConfig::default(),
            mixture: default_mixture(),
            model: Architecture::default(),
            training: TrainConfig::default(),
            sampler: SamplerSettings::default(),
            eval: CheckSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CtmError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CtmError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.eval.validate()?;
        self.sampler_spec(self.sampler.gamma, self.sampler.nfe)?;
        if self.sampler.n_samples == 0 {
            return Err(CtmError::config("sampler.n_samples must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON form of the parsed config.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn header(&self) -> String {
        format!("config_hash={}, seed={}", self.config_hash(), self.seed)
    }

    /// `output_dir`, resolved against `$CTM_OUTPUT_ROOT` when relative.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn sampler_spec(&self, gamma: f64, nfe: usize) -> Result<SamplerSpec> {
        if nfe == 0 {
            return Err(CtmError::config("sampler.nfe must be positive"));
        }
        SamplerSpec::new(gamma, sampling_times(&self.schedule, nfe)?, self.sampler.variant, self.seed)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctm", version, about = "Consistency trajectory models on Gaussian-mixture teachers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a student; writes checkpoints and the training curve.
    Train { config: PathBuf },
    /// Draw samples from a checkpoint or the exact oracle map.
    Sample {
        config: PathBuf,
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        nfe: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Defaults to `<output_dir>/samples.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// W1 / moment report (and optional NLL and γ × NFE table).
    Eval {
        config: PathBuf,
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
    },
    /// Oracle property suites with a JSON verdict.
    Check {
        config: PathBuf,
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

/// Maps an error to its exit code.
pub fn exit_code(err: &CtmError) -> i32 {
    match err {
        CtmError::Numeric(_) | CtmError::NonFiniteGradient { .. } | CtmError::Integration { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train { config } => cmd_train(&RunConfig::load(&config)?).map(|_| EXIT_OK),
        Command::Sample {
            config,
            checkpoint,
            oracle: _,
            gamma,
            nfe,
            n,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let opts = SampleOptions {
                checkpoint,
                gamma: gamma.unwrap_or(cfg.sampler.gamma),
                nfe: nfe.unwrap_or(cfg.sampler.nfe),
                n: n.unwrap_or(cfg.sampler.n_samples),
                out,
            };
            let (run, path) = cmd_sample(&cfg, &opts)?;
            println!(
                "wrote {} samples to {} (NFE per sample {}, total {})",
                run.samples.nrows(),
                path.display(),
                run.nfe,
                run.nfe * run.samples.nrows()
            );
            Ok(EXIT_OK)
        }
        Command::Eval { config, checkpoint, oracle: _ } => {
            let cfg = RunConfig::load(&config)?;
            let path = cmd_eval(&cfg, checkpoint.as_deref())?;
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Check { config, suite } => {
            let suites = Suite::parse(&suite).ok_or_else(|| CtmError::config(format!("unknown suite '{suite}' (expected lemma1|bilip|variance|accumulation|order|nll|all)")))?;
            let cfg = RunConfig::load(&config)?;
            let verdict = cmd_check(&cfg, &suites)?;
            println!("{}", serde_json::to_string_pretty(&verdict).expect("verdict serializes"));
            for r in &verdict.reports {
                eprintln!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.suite, r.reference);
            }
            Ok(if verdict.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
    }
}

/// Files written by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub final_checkpoint: PathBuf,
    pub curve: Option<PathBuf>,
}

fn checkpoint_of(cfg: &RunConfig, trainer: &Trainer, state: &crate::training::TrainState) -> Checkpoint {
    let mut ck = Checkpoint::from_model(&trainer.net, &cfg.schedule, &state.params, &state.ema.shadow, state.iteration, cfg.seed, &cfg.config_hash());
    ck.push_block("disc", state.disc.clone());
    ck
}

/// Runs the configured training. A run that aborts on repeated non-finite
/// steps leaves `last_good.ckpt` (the state before the failing step).
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir)?;
    let trainer = Trainer::new(cfg.mixture.clone(), cfg.schedule, cfg.model, cfg.training.clone())?;
    let mut state = trainer.init_state(cfg.seed)?;
    let final_path = dir.join("final.ckpt");
    if cfg.training.total_iters == 0 {
        checkpoint_of(cfg, &trainer, &state).save(&final_path)?;
        return Ok(TrainOutput {
            final_checkpoint: final_path,
            curve: None,
        });
    }
    let every = cfg.training.checkpoint_every;
    let mut curve = Vec::new();
    let mut periodic = Vec::new();
    let result = trainer.run(&mut state, cfg.training.total_iters, |st, loss| {
        curve.push(CurvePoint {
            iteration: st.iteration,
            loss: *loss,
        });
        if every > 0 && st.iteration % every == 0 && st.iteration < cfg.training.total_iters {
            periodic.push((st.iteration, checkpoint_of(cfg, &trainer, st)));
        }
        Ok(())
    });
    for (it, ck) in &periodic {
        ck.save(&dir.join(format!("ckpt_{it:08}.ckpt")))?;
    }
    let curve_path = dir.join("training_curve.csv");
    save_curve(&curve_path, &cfg.header(), &curve)?;
    if let Err(e) = result {
        checkpoint_of(cfg, &trainer, &state).save(&dir.join("last_good.ckpt"))?;
        return Err(e);
    }
    checkpoint_of(cfg, &trainer, &state).save(&final_path)?;
    Ok(TrainOutput {
        final_checkpoint: final_path,
        curve: Some(curve_path),
    })
}

/// Loads a checkpoint and checks it against the run config.
pub fn load_student(cfg: &RunConfig, path: &Path) -> Result<(CtmNetwork, CtmParams)> {
    let ck = Checkpoint::load(path)?;
    let h = &ck.header;
    if h.dim != cfg.mixture.dim() {
        return Err(CtmError::Schema(format!("checkpoint dimension {} does not match mixture dimension {}", h.dim, cfg.mixture.dim())));
    }
    if h.architecture != cfg.model {
        return Err(CtmError::Schema(format!("checkpoint architecture {:?} does not match config {:?}", h.architecture, cfg.model)));
    }
    if h.schedule != cfg.schedule {
        return Err(CtmError::Schema("checkpoint schedule does not match config".into()));
    }
    let (net, _, ema) = ck.to_model()?;
    Ok((net, ema))
}

#[derive(Debug, Clone, Default)]
pub struct SampleOptions {
    /// `None` samples with the exact oracle map.
    pub checkpoint: Option<PathBuf>,
    pub gamma: f64,
    pub nfe: usize,
    pub n: usize,
    pub out: Option<PathBuf>,
}

fn draw(cfg: &RunConfig, spec: &SamplerSpec, n: usize, student: Option<(&CtmNetwork, &CtmParams)>) -> Result<SampleRun> {
    let mut rng = rng_for(cfg.seed, 0x73616d70);
    let x_t = prior_samples(cfg.mixture.dim(), spec.times[0], n, &mut rng);
    match (student, spec.variant) {
        (Some((net, params)), SamplerVariant::CtmGamma) => gamma_sample(&CtmView { net, params }, spec, x_t.view(), &mut rng),
        (Some((net, params)), SamplerVariant::EdmStochastic) => edm_stochastic_sample(&CtmView { net, params }, spec, x_t.view(), &mut rng),
        (None, SamplerVariant::CtmGamma) => gamma_sample(&OracleFlow::new(cfg.mixture.clone()), spec, x_t.view(), &mut rng),
        (None, SamplerVariant::EdmStochastic) => edm_stochastic_sample(&cfg.mixture, spec, x_t.view(), &mut rng),
    }
}

pub fn cmd_sample(cfg: &RunConfig, opts: &SampleOptions) -> Result<(SampleRun, PathBuf)> {
    let spec = cfg.sampler_spec(opts.gamma, opts.nfe)?;
    if opts.n == 0 {
        return Err(CtmError::config("--n must be positive"));
    }
    let student = opts.checkpoint.as_deref().map(|p| load_student(cfg, p)).transpose()?;
    let run = draw(cfg, &spec, opts.n, student.as_ref().map(|(n, p)| (n, p)))?;
    if run.samples.iter().any(|v| !v.is_finite()) {
        return Err(CtmError::numeric("sampler produced non-finite values"));
    }
    let path = match &opts.out {
        Some(p) => p.clone(),
        None => {
            let dir = cfg.output_path();
            std::fs::create_dir_all(&dir)?;
            dir.join("samples.csv")
        }
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    write_samples_csv(&mut f, &cfg.header(), run.samples.view(), cfg.seed, opts.gamma, run.nfe)?;
    f.flush()?;
    Ok((run, path))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub config_hash: String,
    pub seed: u64,
    pub gamma: f64,
    pub report: crate::eval::EvalReport,
}

/// Writes `eval_report.json` (plus `accumulation.csv` when
/// `eval.accumulation_nfes` is non-empty) and returns the report path.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let spec = cfg.sampler_spec(cfg.sampler.gamma, cfg.sampler.nfe)?;
    let student = checkpoint.map(|p| load_student(cfg, p)).transpose()?;
    let student_ref = student.as_ref().map(|(n, p)| (n, p));
    let run = draw(cfg, &spec, cfg.sampler.n_samples, student_ref)?;
    let reference = cfg.mixture.sample_marginal(0.0, cfg.eval.reference_samples, &mut rng_for(cfg.seed, 0x72656631));
    let mut report = evaluate_samples(run.samples.view(), &cfg.mixture, reference.view(), run.nfe, cfg.seed)?;
    if cfg.eval.report_nll {
        let pts = cfg.mixture.sample_marginal(0.0, cfg.eval.nll_points, &mut rng_for(cfg.seed, 0x6e6c6c));
        let mut total = 0.0;
        for row in pts.rows() {
            let x = row.to_vec();
            total += match student_ref {
                Some((net, params)) => nll_pf_ode(denoiser_score(&CtmView { net, params }), &x, &cfg.schedule, cfg.eval.nll_steps)?,
                None => nll_pf_ode(oracle_score(&cfg.mixture), &x, &cfg.schedule, cfg.eval.nll_steps)?,
            };
        }
        report.nll = Some(total / pts.nrows() as f64);
    }
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir)?;
    if !cfg.eval.accumulation_nfes.is_empty() {
        let e = &cfg.eval;
        let table = match student_ref {
            Some((net, params)) => accumulation_study(&CtmView { net, params }, &cfg.mixture, &cfg.schedule, &e.gammas, &e.accumulation_nfes, e.accumulation_samples, e.accumulation_replicates, cfg.seed)?,
            None => accumulation_study(&OracleFlow::new(cfg.mixture.clone()), &cfg.mixture, &cfg.schedule, &e.gammas, &e.accumulation_nfes, e.accumulation_samples, e.accumulation_replicates, cfg.seed)?,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("accumulation.csv"))?);
        write_accumulation_csv(&mut f, &cfg.header(), &table)?;
        f.flush()?;
    }
    let out = EvalOutput {
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        gamma: cfg.sampler.gamma,
        report,
    };
    let path = dir.join("eval_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out).expect("report serializes") + "\n")?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckVerdict {
    pub config_hash: String,
    pub seed: u64,
    pub passed: bool,
    pub reports: Vec<CheckReport>,
}

/// Runs the suites against the oracle only; nothing is written to disk.
pub fn cmd_check(cfg: &RunConfig, suites: &[Suite]) -> Result<CheckVerdict> {
    let reports = suites
        .iter()
        .map(|s| run_suite(*s, &cfg.mixture, &cfg.schedule, &cfg.eval, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckVerdict {
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        passed: reports.iter().all(|r| r.passed),
        reports,
    })
}

/// Samples as a matrix, reading back a CSV written by `ctm sample`.
pub fn read_samples_csv(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| CtmError::Schema("empty samples file".into()))?;
    let d = header.split(',').filter(|c| c.starts_with('x')).count();
    let mut vals = Vec::new();
    let mut n = 0;
    for line in lines {
        for field in line.split(',').take(d) {
            vals.push(field.parse::<f64>().map_err(|e| CtmError::Schema(format!("bad sample value '{field}': {e}")))?);
        }
        n += 1;
    }
    Array2::from_shape_vec((n, d), vals).map_err(|e| CtmError::Schema(e.to_string()))
}
