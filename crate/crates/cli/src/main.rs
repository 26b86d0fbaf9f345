use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use scodkit::decoder::FactorialModel;
use scodkit::eval::{
    align, emit_plots, run_experiment, train_noise_model, train_speech_models, ErrorCounts, ExperimentConfig,
    NoiseModelSpec, ResultTable, SourceModelSpec, SpeechModelSet,
};
use scodkit::features::{extract_features, AudioSegment, FeatureConfig, FeatureSpace};
use scodkit::hmm::{feature_rows, Hmm};
use scodkit::interaction::{MismatchModel, PhaseFactorMode};
use scodkit::mixing::{
    generate_synthetic_corpus, make_stereo_corpus, mix, read_manifest, EnvironmentSpec, GeneratedNoise,
    LabeledUtterance, ManifestEntry, Snr, SyntheticVocabulary, WordSpan,
};
use scodkit::persist;
use scodkit::scod::{build_grid, make_stereo_samples, ScodConfig, ScodGrid, ScodMethod, SourceStates};
use scodkit::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "scodkit", version, about = "Factorial models for noise-robust recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mix one speech file with noise at a target SNR.
    Mix(MixArgs),
    /// Write a seeded synthetic corpus (utterances, noises, manifest, alignments).
    GenCorpus(GenCorpusArgs),
    /// Train word, silence and short-pause models from a corpus directory.
    TrainSource(TrainSourceArgs),
    /// Train a noise HMM from noise recordings.
    TrainNoise(TrainNoiseArgs),
    /// Build a state-conditional observation grid.
    BuildScod(BuildScodArgs),
    /// Decode WAV files or a manifest with the factorial model.
    Decode(DecodeArgs),
    /// Score hypotheses against a manifest.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from a TOML config.
    Run(RunArgs),
    /// Write accuracy and improvement series from a results table.
    EmitPlots(EmitPlotsArgs),
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    speech: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    /// dB, or `inf` for clean.
    #[arg(long)]
    snr: Snr,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the scaled noise segment.
    #[arg(long)]
    noise_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long, default_value_t = 4)]
    words: usize,
    #[arg(long, default_value_t = 100)]
    utterances: usize,
    #[arg(long, default_value_t = 1)]
    min_words: usize,
    #[arg(long, default_value_t = 3)]
    max_words: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSourceArgs {
    /// Directory written by `gen-corpus`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "mfcc0d26")]
    features: FeatureSpace,
    #[arg(long, default_value_t = 6)]
    word_states: usize,
    #[arg(long, default_value_t = 3)]
    silence_states: usize,
    #[arg(long, default_value_t = 2)]
    components: usize,
    #[arg(long)]
    no_short_pause: bool,
    /// Use at most this many utterances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainNoiseArgs {
    #[arg(long, required = true, num_args = 1..)]
    noise: Vec<PathBuf>,
    #[arg(long, default_value = "mfcc0d26")]
    features: FeatureSpace,
    /// `single`, `bic:<max>` or `fixed:<n>`.
    #[arg(long, default_value = "single", value_parser = parse_noise_spec)]
    states: NoiseModelSpec,
    /// Linear gain applied to the recordings before feature extraction.
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildScodArgs {
    #[arg(long)]
    speech: PathBuf,
    #[arg(long)]
    noise_model: PathBuf,
    #[arg(long)]
    method: ScodMethod,
    /// Phase factor: `zero`, `const:<v>` or `sampled:<seed>`.
    #[arg(long, default_value = "zero")]
    alpha: PhaseFactorMode,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stereo corpus directory (WSS only).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Noise recording mixed into the stereo corpus (WSS only).
    #[arg(long)]
    noise_wav: Option<PathBuf>,
    /// Mixing SNR of the stereo corpus (WSS only).
    #[arg(long, default_value = "10")]
    snr: Snr,
    /// Observation space of the grid (WSS only); defaults to the source space.
    #[arg(long)]
    observation_features: Option<FeatureSpace>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    speech: PathBuf,
    #[arg(long)]
    noise_model: PathBuf,
    #[arg(long)]
    scod: PathBuf,
    /// Manifest of inputs; WAV paths are relative to its directory.
    #[arg(long, conflicts_with = "wav")]
    manifest: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    wav: Vec<PathBuf>,
    #[arg(long)]
    beam: Option<f64>,
    /// Output TSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Manifest holding the reference transcripts.
    #[arg(long)]
    manifest: PathBuf,
    /// TSV written by `decode`.
    #[arg(long)]
    hypotheses: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus_seed: Option<u64>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    vocabulary: Option<usize>,
    #[arg(long)]
    min_words: Option<usize>,
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    snrs: Option<Vec<Snr>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<ScodMethod>>,
    /// Comma list of `single`, `bic:<max>`, `fixed:<n>`.
    #[arg(long, value_delimiter = ',', value_parser = parse_noise_spec)]
    noise_models: Option<Vec<NoiseModelSpec>>,
    #[arg(long)]
    features: Option<FeatureSpace>,
    #[arg(long)]
    observation_features: Option<FeatureSpace>,
    #[arg(long)]
    word_states: Option<usize>,
    #[arg(long)]
    silence_states: Option<usize>,
    #[arg(long)]
    source_components: Option<usize>,
    #[arg(long)]
    short_pause: Option<bool>,
    #[arg(long)]
    alpha: Option<PhaseFactorMode>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    noise_train_fraction: Option<f64>,
    #[arg(long)]
    max_train: Option<usize>,
    #[arg(long)]
    max_test: Option<usize>,
    #[arg(long)]
    beam: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EmitPlotsArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_noise_spec(s: &str) -> std::result::Result<NoiseModelSpec, String> {
    let count = |v: &str| v.parse::<usize>().map_err(|_| format!("bad state count in `{s}`"));
    match s.split_once(':') {
        None if s == "single" => Ok(NoiseModelSpec::Single),
        Some(("bic", v)) => Ok(NoiseModelSpec::Bic { max_states: count(v)? }),
        Some(("fixed", v)) => Ok(NoiseModelSpec::Fixed { states: count(v)? }),
        _ => Err(format!("`{s}`: expected single, bic:<max> or fixed:<n>")),
    }
}

fn read_wav(path: &Path) -> Result<AudioSegment> {
    AudioSegment::read_wav(path).with_context(|| format!("reading {}", path.display()))
}

fn write_wav(path: &Path, audio: &AudioSegment) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    audio
        .write_wav(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| {
        Error::File {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn manifest_entries(path: &Path) -> Result<(PathBuf, Vec<ManifestEntry>)> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((base, read_manifest(&read_text(path)?)?))
}

/// Clean utterances of a corpus directory with their word alignments.
fn load_corpus(dir: &Path, limit: Option<usize>) -> Result<Vec<LabeledUtterance>> {
    let (base, mut entries) = manifest_entries(&dir.join("manifest.tsv"))?;
    let align_path = dir.join("alignments.json");
    let alignments: BTreeMap<String, Vec<WordSpan>> = serde_json::from_str(&read_text(&align_path)?)
        .map_err(|e| Error::Corrupt(format!("{}: {e}", align_path.display())))?;
    if let Some(n) = limit {
        entries.truncate(n);
    }
    entries
        .into_iter()
        .map(|e| {
            let words = alignments
                .get(&e.utterance_id)
                .cloned()
                .ok_or_else(|| Error::Corrupt(format!("no alignment for {}", e.utterance_id)))?;
            Ok(LabeledUtterance {
                audio: read_wav(&base.join(&e.wav_path))?,
                id: e.utterance_id,
                transcript: e.transcript,
                words,
                seed: e.seed,
            })
        })
        .collect()
}

fn cmd_mix(a: MixArgs) -> Result<()> {
    let x = read_wav(&a.speech)?;
    let n = read_wav(&a.noise)?;
    let m = mix(&x, &n, &EnvironmentSpec::additive(a.snr, a.seed))?;
    write_wav(&a.out, &m.y)?;
    if let Some(p) = &a.noise_out {
        write_wav(p, &m.noise)?;
    }
    println!("gain {} offset {}", m.gain, m.offset);
    Ok(())
}

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let vocab = SyntheticVocabulary::generate(a.words, a.seed);
    let corpus = generate_synthetic_corpus(&vocab, a.utterances, (a.min_words, a.max_words), a.seed)?;
    let mut manifest = String::new();
    let mut alignments = BTreeMap::new();
    for u in &corpus.utterances {
        let rel = format!("wav/{}.wav", u.id);
        write_wav(&a.out.join(&rel), &u.audio)?;
        let entry = ManifestEntry {
            utterance_id: u.id.clone(),
            wav_path: rel,
            transcript: u.transcript.clone(),
            snr: Snr::CLEAN,
            noise_id: "-".into(),
            seed: u.seed,
        };
        manifest.push_str(&entry.to_line());
        manifest.push('\n');
        alignments.insert(u.id.clone(), u.words.clone());
    }
    for n in &corpus.noises {
        write_wav(&a.out.join(format!("noise/{}.wav", n.id)), &n.audio)?;
    }
    std::fs::write(a.out.join("manifest.tsv"), manifest)?;
    std::fs::write(
        a.out.join("alignments.json"),
        serde_json::to_string_pretty(&alignments)? + "\n",
    )?;
    println!(
        "{} utterances, {} noises, vocabulary {}",
        corpus.utterances.len(),
        corpus.noises.len(),
        vocab.word_ids().join(" ")
    );
    Ok(())
}

fn cmd_train_source(a: TrainSourceArgs) -> Result<()> {
    let utts = load_corpus(&a.corpus, a.limit)?;
    let spec = SourceModelSpec {
        word_states: a.word_states,
        silence_states: a.silence_states,
        components: a.components,
        short_pause: !a.no_short_pause,
    };
    let models = train_speech_models(&utts, &FeatureConfig::for_space(a.features), &spec)?;
    persist::save(&a.out, &models)?;
    println!("{} word models from {} utterances", models.words.len(), utts.len());
    Ok(())
}

fn cmd_train_noise(a: TrainNoiseArgs) -> Result<()> {
    let cfg = FeatureConfig::for_space(a.features);
    let seqs = a
        .noise
        .iter()
        .map(|p| Ok(feature_rows(&extract_features(&read_wav(p)?.scaled(a.gain), &cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let (hmm, report) = train_noise_model(&seqs, a.features, &a.states)?;
    persist::save(&a.out, &hmm)?;
    println!("{} noise states", hmm.num_states());
    if let Some(r) = report {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(())
}

fn cmd_build_scod(a: BuildScodArgs) -> Result<()> {
    let speech: SpeechModelSet = persist::load(&a.speech)?;
    let noise: Hmm = persist::load(&a.noise_model)?;
    let space = speech.space();
    if noise.space() != space {
        return Err(Error::SpaceMismatch {
            expected: space.to_string(),
            got: noise.space().to_string(),
        }
        .into());
    }
    let grammar = speech.loop_grammar()?;
    let speech_states = grammar.source_states()?;
    let noise_states = SourceStates::from_hmm(&noise)?;
    let mut cfg = ScodConfig::new(a.method);
    cfg.phase = a.alpha;
    cfg.seed = a.seed;
    if let Some(v) = a.samples {
        cfg.samples_per_cell = v;
    }
    if let Some(v) = a.components {
        cfg.components = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    let source_cfg = FeatureConfig::for_space(space);
    let grid = if a.method == ScodMethod::Wss {
        let (Some(corpus), Some(noise_wav)) = (&a.corpus, &a.noise_wav) else {
            return Err(Error::InvalidConfig("wss needs --corpus and --noise-wav".into()).into());
        };
        let utts = load_corpus(corpus, a.limit)?;
        let recording = GeneratedNoise::from_audio("noise", read_wav(noise_wav)?);
        let obs_cfg = FeatureConfig::for_space(a.observation_features.unwrap_or(space));
        let stereo = make_stereo_corpus(&utts, &recording, &[a.snr], &source_cfg, Some(&obs_cfg), a.seed)?;
        let samples = make_stereo_samples(&stereo, &speech_states, &noise_states)?;
        build_grid(
            &speech_states,
            &noise_states,
            None,
            Some((&samples, obs_cfg.space)),
            &cfg,
        )?
    } else {
        if a.observation_features.is_some_and(|s| s != space) {
            return Err(Error::InvalidConfig(format!("{} grids live in the source space", a.method)).into());
        }
        let mm = MismatchModel::for_config(&source_cfg)?;
        build_grid(&speech_states, &noise_states, Some(&mm), None, &cfg)?
    };
    persist::save(&a.out, &grid)?;
    println!(
        "{} grid {}x{}, {} unsupported cells",
        grid.method(),
        grid.speech_states(),
        grid.noise_states(),
        grid.unsupported_cells()
    );
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let speech: SpeechModelSet = persist::load(&a.speech)?;
    let noise: Hmm = persist::load(&a.noise_model)?;
    let grid: ScodGrid = persist::load(&a.scod)?;
    let obs_cfg = FeatureConfig::for_space(grid.space());
    let model = FactorialModel::new(speech.loop_grammar()?, noise, grid)?;
    let inputs: Vec<(String, PathBuf)> = match &a.manifest {
        Some(m) => {
            let (base, entries) = manifest_entries(m)?;
            entries
                .into_iter()
                .map(|e| (e.utterance_id, base.join(e.wav_path)))
                .collect()
        }
        None => a
            .wav
            .iter()
            .map(|p| {
                (
                    p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                    p.clone(),
                )
            })
            .collect(),
    };
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("nothing to decode; pass --manifest or --wav".into()).into());
    }
    let mut out = String::from("utterance_id\thypothesis\tlog_likelihood\top_count\n");
    for (id, path) in inputs {
        let frames = extract_features(&read_wav(&path)?, &obs_cfg)?;
        let r = model
            .factorial_viterbi(&frames, a.beam)
            .with_context(|| format!("decoding {id}"))?;
        out.push_str(&format!(
            "{id}\t{}\t{}\t{}\n",
            r.word_sequence.join(" "),
            r.log_likelihood,
            r.op_count
        ));
    }
    match &a.out {
        Some(p) => std::fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (_, entries) = manifest_entries(&a.manifest)?;
    let text = read_text(&a.hypotheses)?;
    let hyps: BTreeMap<&str, Vec<String>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut f = l.split('\t');
            let id = f.next().unwrap_or_default();
            (
                id,
                f.next()
                    .unwrap_or_default()
                    .split_whitespace()
                    .map(str::to_string)
                    .collect(),
            )
        })
        .collect();
    let mut counts = ErrorCounts::default();
    for e in &entries {
        let hyp = hyps
            .get(e.utterance_id.as_str())
            .ok_or_else(|| Error::Corrupt(format!("no hypothesis for {}", e.utterance_id)))?;
        counts.add(&align(&e.transcript, hyp));
    }
    println!(
        "accuracy {:.2} N={} S={} D={} I={}",
        counts.accuracy()?,
        counts.reference,
        counts.substitutions,
        counts.deletions,
        counts.insertions
    );
    Ok(())
}

fn experiment_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($src:expr, $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(a.seed, cfg.seed);
    set!(a.corpus_seed, cfg.corpus.seed);
    set!(a.utterances, cfg.corpus.utterances);
    set!(a.vocabulary, cfg.corpus.vocabulary_size);
    set!(a.min_words, cfg.corpus.min_words);
    set!(a.max_words, cfg.corpus.max_words);
    set!(a.snrs, cfg.snrs);
    set!(a.methods, cfg.methods);
    set!(a.noise_models, cfg.noise_models);
    set!(a.word_states, cfg.source_model.word_states);
    set!(a.silence_states, cfg.source_model.silence_states);
    set!(a.source_components, cfg.source_model.components);
    set!(a.short_pause, cfg.source_model.short_pause);
    set!(a.alpha, cfg.scod.phase);
    set!(a.samples, cfg.scod.samples_per_cell);
    set!(a.max_iters, cfg.scod.max_iters);
    set!(a.train_fraction, cfg.train_fraction);
    set!(a.noise_train_fraction, cfg.noise_train_fraction);
    if let Some(s) = a.features {
        cfg.source_features = FeatureConfig::for_space(s);
    }
    if let Some(s) = a.observation_features {
        cfg.observation_features = Some(FeatureConfig::for_space(s));
    }
    if a.components.is_some() {
        cfg.scod.components = a.components;
    }
    if a.max_train.is_some() {
        cfg.max_train_utterances = a.max_train;
    }
    if a.max_test.is_some() {
        cfg.max_test_utterances = a.max_test;
    }
    if a.beam.is_some() {
        cfg.beam = a.beam;
    }
    if a.out.is_some() {
        cfg.output_dir = a.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let cfg = experiment_config(&a)?;
    if a.dry_run {
        print!("{}", toml::to_string(&cfg)?);
        return Ok(());
    }
    let out = run_experiment(&cfg)?;
    println!("noise\tsnr\tmethod\tstates\taccuracy");
    for r in &out.table.rows {
        println!(
            "{}\t{}\t{}\t{}({})\t{:.2}",
            r.noise_id, r.snr_db, r.method, r.noise_states, r.noise_state_count, r.accuracy
        );
    }
    Ok(())
}

fn cmd_emit_plots(a: EmitPlotsArgs) -> Result<()> {
    let text = read_text(&a.results)?;
    let table = ResultTable::read_csv(text.as_bytes())?;
    let report = emit_plots(&table, &a.out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for f in &report.files {
        println!("{}", f.display());
    }
    Ok(())
}

/// Cause chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Mix(a) => cmd_mix(a),
        Command::GenCorpus(a) => cmd_gen_corpus(a),
        Command::TrainSource(a) => cmd_train_source(a),
        Command::TrainNoise(a) => cmd_train_noise(a),
        Command::BuildScod(a) => cmd_build_scod(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(a),
        Command::EmitPlots(a) => cmd_emit_plots(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
