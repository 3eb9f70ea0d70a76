use std::fs::OpenOptions;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spectro_core::bundle::{self, ModelBundle};
use spectro_core::config::{RunConfig, SamplerConfig};
use spectro_core::dataset::{extract_codemaps, load_nsynth, CodemapStore};
use spectro_core::dsp::wav::{encode_wav, write_wav, Waveform};
use spectro_core::inpaint::RegionSelection;
use spectro_core::lm::{ConditioningLabels, LabelVocab, Level};
use spectro_core::pipeline::{encode_notes, store_examples, synth_dataset, train_prior, train_vqvae};
use spectro_core::vqvae::{CodeGrid, CodemapPair};
use spectro_core::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  unexpected failure
  2  bad command line
  3  invalid configuration
  4  missing input file, checkpoint or model
  5  corrupt dataset, codemap store or checkpoint
  6  numeric failure during training
  7  invalid request (labels, region, codes)

Output layout under --out:
  data/          synthetic notes (examples.json + audio/*.wav)
  checkpoints/   vqvae.*, prior_top.*, prior_bottom.*
  stores/        codemaps.spin
  metrics.jsonl  one JSON object per training step";

/// Spectrogram inpainting pipeline: synthesize data, train the VQ-VAE and
/// both priors, then sample, inpaint, render or serve.
#[derive(Parser)]
#[command(name = "spectro", version, after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile used when no --config is given (toy or paper).
    #[arg(long, global = true, default_value = "toy")]
    profile: String,
    /// Run directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Labels {
    #[arg(long)]
    pitch: u8,
    /// Family index or name.
    #[arg(long)]
    instrument: String,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic notes as an NSynth-style directory.
    SynthData {
        #[arg(long)]
        n_notes: Option<usize>,
    },
    /// Train the VQ-VAE on a note directory.
    TrainVqvae {
        /// Note directory (defaults to <out>/data).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Encode every note into the codemap store.
    ExtractCodemaps {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one prior on the codemap store.
    TrainPrior {
        #[arg(long)]
        level: Level,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Generate a new sound.
    Sample {
        #[command(flatten)]
        labels: Labels,
        /// WAV output (codes are written next to it as .json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Regenerate a rectangle of an existing codemap pair.
    Inpaint {
        /// Codes JSON written by sample or inpaint.
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        level: Level,
        #[arg(long)]
        freq_start: usize,
        #[arg(long)]
        freq_end: usize,
        #[arg(long)]
        time_start: usize,
        #[arg(long)]
        time_end: usize,
        #[command(flatten)]
        labels: Labels,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decode a codes JSON file to audio.
    Render {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Checkpoint directory (defaults to <out>/checkpoints).
        #[arg(long, env = spectro_service::CHECKPOINT_ENV)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct CodesFile {
    pitch: u8,
    instrument: u8,
    top: Vec<Vec<usize>>,
    bottom: Vec<Vec<usize>>,
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn checkpoints(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    fn store(&self) -> PathBuf {
        self.out.join("stores").join("codemaps.spin")
    }

    fn data(&self, explicit: Option<PathBuf>) -> PathBuf {
        explicit.unwrap_or_else(|| self.out.join("data"))
    }

    fn vocab(&self) -> anyhow::Result<LabelVocab> {
        Ok(LabelVocab::new(self.cfg.data.families.clone())?)
    }

    fn metrics(&self) -> anyhow::Result<std::fs::File> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join("metrics.jsonl");
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))
    }

    fn bundle(&self) -> anyhow::Result<ModelBundle> {
        Ok(ModelBundle::load(&self.checkpoints())?)
    }
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::profile(&common.profile)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn labels(vocab: &LabelVocab, l: &Labels) -> anyhow::Result<ConditioningLabels> {
    let index = match l.instrument.parse::<u8>() {
        Ok(i) => i,
        Err(_) => vocab
            .families
            .iter()
            .position(|f| *f == l.instrument)
            .ok_or_else(|| Error::InvalidInput(format!("unknown instrument `{}`", l.instrument)))? as u8,
    };
    Ok(ConditioningLabels::new(l.pitch, index, vocab)?)
}

fn sampler(cfg: &RunConfig, l: &Labels) -> anyhow::Result<SamplerConfig> {
    let s = SamplerConfig {
        top_p: l.top_p.unwrap_or(cfg.sampler.top_p),
        temperature: l.temperature.unwrap_or(cfg.sampler.temperature),
        seed: cfg.seed,
    };
    s.validate()?;
    Ok(s)
}

fn read_codes(path: &Path, bundle: &ModelBundle) -> anyhow::Result<(CodemapPair, u8, u8)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let f: CodesFile =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let codes = CodemapPair {
        top: CodeGrid::from_nested(&f.top)?,
        bottom: CodeGrid::from_nested(&f.bottom)?,
    };
    codes.validate(&bundle.hierarchy(), bundle.codebook_size())?;
    Ok((codes, f.pitch, f.instrument))
}

/// Writes `<output>` as WAV and `<output>.json` with the codes.
fn write_outputs(bundle: &ModelBundle, codes: &CodemapPair, l: ConditioningLabels, output: &Path) -> anyhow::Result<Value> {
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let (_, wave) = bundle.render(codes)?;
    write_wav(output, &wave)?;
    let codes_path = output.with_extension("json");
    let file = CodesFile {
        pitch: l.pitch(),
        instrument: l.instrument(),
        top: codes.top.to_nested(),
        bottom: codes.bottom.to_nested(),
    };
    std::fs::write(&codes_path, serde_json::to_string(&file)?)?;
    Ok(json!({ "wav": output, "codes": codes_path, "duration_secs": wave.duration_secs() }))
}

fn synth_data(run: &Run) -> anyhow::Result<Value> {
    let cfg = &run.cfg;
    let dir = run.data(None);
    std::fs::create_dir_all(dir.join("audio"))?;
    let notes = synth_dataset(cfg)?;
    let mut meta = serde_json::Map::new();
    for n in &notes {
        let name = format!("{}_{:03}_{:05}", cfg.data.families[n.instrument as usize], n.pitch, n.id);
        write_wav(
            &dir.join("audio").join(format!("{name}.wav")),
            &Waveform {
                samples: n.waveform.clone(),
                sample_rate: n.sample_rate,
            },
        )?;
        meta.insert(
            name,
            json!({
                "pitch": n.pitch,
                "instrument_family": n.instrument,
                "instrument_family_str": cfg.data.families[n.instrument as usize],
            }),
        );
    }
    std::fs::write(dir.join("examples.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(json!({ "data": dir, "notes": notes.len() }))
}

fn load_notes(run: &Run, data: Option<PathBuf>) -> anyhow::Result<Vec<spectro_core::dataset::NoteRecord>> {
    let dir = run.data(data);
    if !dir.is_dir() {
        return Err(Error::Io {
            path: dir,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "note directory not found (run synth-data)"),
        }
        .into());
    }
    let load = load_nsynth(&dir, &run.cfg.data.families, run.cfg.dsp.sample_rate)?;
    if load.skipped > 0 {
        tracing::warn!(skipped = load.skipped, "unusable metadata entries");
    }
    if load.records.is_empty() {
        return Err(Error::InvalidDataset(format!("no usable notes in {}", dir.display())).into());
    }
    Ok(load.records)
}

fn train_vqvae_cmd(run: &Run, data: Option<PathBuf>, steps: Option<u64>) -> anyhow::Result<Value> {
    let steps = steps.unwrap_or(run.cfg.vqvae.steps);
    let notes = load_notes(run, data)?;
    let codec = run.cfg.dsp.codec()?;
    let grams = encode_notes(&codec, &notes)?;
    let mut log = run.metrics()?;
    let mut last = None;
    let mut first_recon = None;
    let mut io_err = None;
    let model = train_vqvae(&run.cfg, &grams, steps, &mut |m| {
        first_recon.get_or_insert(m.recon_loss);
        let line = json!({ "stage": "vqvae", "step": m.step, "loss": m.loss, "recon_loss": m.recon_loss,
            "commit_loss": m.commit_loss, "perplexity_top": m.perplexity_top, "perplexity_bottom": m.perplexity_bottom });
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
        last = Some(m.clone());
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    bundle::save_vqvae(&run.checkpoints(), &model, &run.cfg.dsp)?;
    let mut out = json!({ "checkpoint": run.checkpoints(), "steps": steps, "notes": notes.len() });
    if let Some(m) = last {
        out["loss"] = json!(m.loss);
        out["recon_loss"] = json!(m.recon_loss);
        out["initial_recon_loss"] = json!(first_recon);
        out["perplexity_top"] = json!(m.perplexity_top);
        out["perplexity_bottom"] = json!(m.perplexity_bottom);
    }
    Ok(out)
}

fn extract_cmd(run: &Run, data: Option<PathBuf>) -> anyhow::Result<Value> {
    let (model, dsp) = bundle::load_vqvae(&run.checkpoints())?;
    if dsp != run.cfg.dsp {
        bail!(Error::InvalidConfig("checkpoint DSP settings differ from the run configuration".into()));
    }
    let notes = load_notes(run, data)?;
    let path = run.store();
    std::fs::create_dir_all(path.parent().expect("store has a parent"))?;
    let store = extract_codemaps(&model, &dsp.codec()?, &notes, &path, run.cfg.vqvae.batch_size)?;
    Ok(json!({ "store": path, "records": store.len(), "bytes": store.byte_len() }))
}

fn train_prior_cmd(run: &Run, level: Level, steps: Option<u64>) -> anyhow::Result<Value> {
    let steps = steps.unwrap_or(run.cfg.lm.steps);
    let store = CodemapStore::open(&run.store())?;
    let hier = run.cfg.vqvae.hierarchy();
    if store.header().hierarchy() != hier || store.header().codebook_size as usize != run.cfg.vqvae.codebook_size {
        bail!(Error::InvalidStore(format!(
            "store holds top {:?} / bottom {:?} codemaps, configuration expects top {:?} / bottom {:?}",
            store.header().top_shape,
            store.header().bottom_shape,
            hier.top_shape,
            hier.bottom_shape()
        )));
    }
    let vocab = run.vocab()?;
    let examples = store_examples(&store, &vocab)?;
    let mut log = run.metrics()?;
    let mut io_err = None;
    let mut last = None;
    let prior = train_prior(&run.cfg, level, &vocab, &examples, steps, &mut |m| {
        let line = json!({ "stage": format!("prior_{level}"), "step": m.step, "loss": m.loss,
            "accuracy": m.accuracy, "grad_norm": m.grad_norm, "mask_prob": m.mask_prob });
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
        last = Some(m.clone());
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    bundle::save_prior(&run.checkpoints(), &prior)?;
    let mut out = json!({ "checkpoint": run.checkpoints(), "level": level, "steps": steps,
        "nll": prior.eval_nll(&examples)?, "ln_k": (run.cfg.vqvae.codebook_size as f64).ln() });
    if let Some(m) = last {
        out["loss"] = json!(m.loss);
    }
    Ok(out)
}

fn sample_cmd(run: &Run, l: &Labels, output: Option<PathBuf>) -> anyhow::Result<Value> {
    let bundle = run.bundle()?;
    let labels = labels(bundle.vocab(), l)?;
    let cfg = sampler(&run.cfg, l)?;
    let codes = bundle.engine().generate(labels, &cfg)?;
    let output = output.unwrap_or_else(|| {
        run.out
            .join("samples")
            .join(format!("p{}_i{}_s{}.wav", labels.pitch(), labels.instrument(), cfg.seed))
    });
    write_outputs(&bundle, &codes, labels, &output)
}

#[allow(clippy::too_many_arguments)]
fn inpaint_cmd(
    run: &Run,
    codes: &Path,
    level: Level,
    freq: (usize, usize),
    time: (usize, usize),
    l: &Labels,
    output: &Path,
) -> anyhow::Result<Value> {
    let bundle = run.bundle()?;
    let (codes, _, _) = read_codes(codes, &bundle)?;
    let labels = labels(bundle.vocab(), l)?;
    let cfg = sampler(&run.cfg, l)?;
    let region = RegionSelection {
        level,
        freq_range: freq.0..freq.1,
        time_range: time.0..time.1,
    };
    let new = bundle.engine().inpaint(&codes, &region, labels, &cfg)?;
    write_outputs(&bundle, &new, labels, output)
}

fn render_cmd(run: &Run, codes: &Path, output: &Path) -> anyhow::Result<Value> {
    let bundle = run.bundle()?;
    let (codes, pitch, instrument) = read_codes(codes, &bundle)?;
    let (_, wave) = bundle.render(&codes)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(output, encode_wav(&wave)?)?;
    Ok(json!({ "wav": output, "pitch": pitch, "instrument": instrument, "duration_secs": wave.duration_secs() }))
}

fn execute(cli: Cli) -> anyhow::Result<(String, Value, RunConfig)> {
    let mut cfg = load_config(&cli.common)?;
    if let Command::SynthData { n_notes: Some(n) } = cli.command {
        cfg.data.n_notes = n;
        cfg.validate()?;
    }
    let run = Run {
        cfg: cfg.clone(),
        out: cli.common.out.clone(),
    };
    let (name, result) = match cli.command {
        Command::SynthData { .. } => ("synth-data", synth_data(&run)?),
        Command::TrainVqvae { data, steps } => ("train-vqvae", train_vqvae_cmd(&run, data, steps)?),
        Command::ExtractCodemaps { data } => ("extract-codemaps", extract_cmd(&run, data)?),
        Command::TrainPrior { level, steps } => ("train-prior", train_prior_cmd(&run, level, steps)?),
        Command::Sample { labels, output } => ("sample", sample_cmd(&run, &labels, output)?),
        Command::Inpaint {
            codes,
            level,
            freq_start,
            freq_end,
            time_start,
            time_end,
            labels,
            output,
        } => (
            "inpaint",
            inpaint_cmd(&run, &codes, level, (freq_start, freq_end), (time_start, time_end), &labels, &output)?,
        ),
        Command::Render { codes, output } => ("render", render_cmd(&run, &codes, &output)?),
        Command::Serve {
            port,
            host,
            checkpoints,
            snapshot,
        } => {
            let opts = spectro_service::ServeOptions {
                addr: SocketAddr::new(host, port),
                checkpoints: Some(checkpoints.unwrap_or_else(|| run.checkpoints())),
                snapshot,
            };
            tokio::runtime::Runtime::new()?.block_on(spectro_service::run(opts))?;
            ("serve", json!({}))
        }
    };
    Ok((name.to_string(), result, cfg))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidConfig(_) => 3,
                Error::Io { .. } | Error::UnavailableModel(_) => 4,
                Error::InvalidDataset(_) | Error::InvalidStore(_) | Error::InvalidCheckpoint(_) => 5,
                Error::Numeric(_) => 6,
                Error::InvalidInput(_) | Error::InvalidShape(_) => 7,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok((command, result, cfg)) => {
            let config: Value = serde_json::from_str(&cfg.to_json()).expect("config is JSON");
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                json!({ "command": command, "status": "ok", "result": result, "config": config })
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                json!({ "status": "error", "exit_code": code, "error": format!("{e:#}") })
            );
            ExitCode::from(code)
        }
    }
}
