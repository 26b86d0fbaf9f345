use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{align, ErrorCounts, ResultRow, ResultTable};
use crate::decoder::{compose_grammar, FactorialModel, Grammar, GrammarOptions};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor, FeatureSpace};
use crate::hmm::{bic_select_noise_states, feature_rows, hmm_train, BicReport, Hmm, HmmTrainConfig};
use crate::interaction::{MismatchModel, PhaseFactorMode};
use crate::math::{derive_seed, rng_for};
use crate::mixing::{
    generate_synthetic_corpus, make_stereo_corpus, GeneratedNoise, LabeledUtterance, Snr, SyntheticVocabulary,
};
use crate::persist::Persist;
use crate::scod::{build_grid, make_stereo_samples, CovarianceKindChoice, ScodConfig, ScodMethod, SourceStates};

/// Seeded synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub vocabulary_size: usize,
    pub utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            vocabulary_size: 4,
            utterances: 2500,
            min_words: 1,
            max_words: 3,
            seed: 1,
        }
    }
}

/// Word, silence and short-pause model sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceModelSpec {
    pub word_states: usize,
    pub silence_states: usize,
    pub components: usize,
    pub short_pause: bool,
}

impl Default for SourceModelSpec {
    fn default() -> Self {
        Self {
            word_states: 6,
            silence_states: 3,
            components: 2,
            short_pause: true,
        }
    }
}

/// Noise HMM structure; every state has one diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModelSpec {
    Single,
    Bic { max_states: usize },
    Fixed { states: usize },
}

impl NoiseModelSpec {
    pub fn label(&self) -> String {
        match self {
            NoiseModelSpec::Single => "single".into(),
            NoiseModelSpec::Bic { .. } => "multi".into(),
            NoiseModelSpec::Fixed { states } => format!("fixed-{states}"),
        }
    }
}

/// Overrides applied on top of each method's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScodSettings {
    pub samples_per_cell: usize,
    pub max_iters: usize,
    pub phase: PhaseFactorMode,
    pub components: Option<usize>,
    pub covariance: Option<CovarianceKindChoice>,
}

impl Default for ScodSettings {
    fn default() -> Self {
        let d = ScodConfig::new(ScodMethod::Wss);
        Self {
            samples_per_cell: d.samples_per_cell,
            max_iters: d.max_iters,
            phase: d.phase,
            components: None,
            covariance: None,
        }
    }
}

impl ScodSettings {
    pub fn config(&self, method: ScodMethod, seed: u64) -> ScodConfig {
        let mut c = ScodConfig::new(method);
        c.samples_per_cell = self.samples_per_cell;
        c.max_iters = self.max_iters;
        c.phase = self.phase;
        c.seed = seed;
        if method != ScodMethod::Vts && method != ScodMethod::Dpmc {
            if let Some(k) = self.components {
                c.components = k;
            }
        }
        if let Some(cov) = self.covariance {
            c.covariance = cov;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub source_features: FeatureConfig,
    /// Observation space for corrupted speech; the source space when absent.
    pub observation_features: Option<FeatureConfig>,
    pub source_model: SourceModelSpec,
    pub noise_models: Vec<NoiseModelSpec>,
    pub methods: Vec<ScodMethod>,
    pub scod: ScodSettings,
    pub snrs: Vec<Snr>,
    pub train_fraction: f64,
    /// Fraction of each noise recording used for training mixtures; the rest
    /// corrupts test utterances.
    pub noise_train_fraction: f64,
    /// Caps on the number of split utterances actually used.
    pub max_train_utterances: Option<usize>,
    pub max_test_utterances: Option<usize>,
    pub beam: Option<f64>,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            source_features: FeatureConfig::mfcc0d26(),
            observation_features: None,
            source_model: SourceModelSpec::default(),
            noise_models: vec![NoiseModelSpec::Single, NoiseModelSpec::Bic { max_states: 4 }],
            methods: vec![ScodMethod::Vts, ScodMethod::Idpmc, ScodMethod::Wss],
            scod: ScodSettings::default(),
            snrs: [20.0, 10.0, 0.0].into_iter().map(Snr).collect(),
            train_fraction: 0.8,
            noise_train_fraction: 0.7,
            max_train_utterances: None,
            max_test_utterances: None,
            beam: None,
            seed: 1,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.snrs.is_empty() {
            return bad("SNR list is empty");
        }
        if self.methods.is_empty() || self.noise_models.is_empty() {
            return bad("at least one method and one noise model are required");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if !(self.noise_train_fraction > 0.0 && self.noise_train_fraction < 1.0) {
            return bad("noise_train_fraction must lie in (0, 1)");
        }
        if self.corpus.utterances < 2 {
            return bad("the corpus needs at least two utterances");
        }
        self.source_features.validate()?;
        if let Some(obs) = &self.observation_features {
            obs.validate()?;
            if obs.space != self.source_features.space && self.methods.iter().any(|m| *m != ScodMethod::Wss) {
                return bad("only WSS supports an observation space different from the source space");
            }
        }
        for spec in &self.noise_models {
            match spec {
                NoiseModelSpec::Bic { max_states: 0 } | NoiseModelSpec::Fixed { states: 0 } => {
                    return bad("noise models need at least one state")
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn observation(&self) -> &FeatureConfig {
        self.observation_features.as_ref().unwrap_or(&self.source_features)
    }
}

/// Trained clean-speech models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechModelSet {
    pub words: Vec<(String, Hmm)>,
    pub silence: Hmm,
    pub short_pause: Option<Hmm>,
}

impl Persist for SpeechModelSet {
    const KIND: &'static str = "speech-models";
}

impl SpeechModelSet {
    pub fn space(&self) -> FeatureSpace {
        self.silence.space()
    }

    pub fn loop_grammar(&self) -> Result<Grammar> {
        compose_grammar(
            &self.words,
            &self.silence,
            self.short_pause.as_ref(),
            &GrammarOptions::default(),
        )
    }
}

/// Word index (into `utt.words`) covering the centre of each frame.
pub fn frame_labels(utt: &LabeledUtterance, cfg: &FeatureConfig) -> Vec<Option<usize>> {
    (0..cfg.frame_count(utt.audio.len()))
        .map(|t| {
            let centre = t * cfg.hop_length + cfg.frame_length / 2;
            utt.words.iter().position(|w| w.start <= centre && centre < w.end)
        })
        .collect()
}

/// Trains one left-to-right model per word plus silence and short-pause
/// models from aligned clean utterances.
pub fn train_speech_models(
    utts: &[LabeledUtterance],
    cfg: &FeatureConfig,
    spec: &SourceModelSpec,
) -> Result<SpeechModelSet> {
    let first = utts.first().ok_or(Error::Empty("training utterances"))?;
    let extractor = FeatureExtractor::new(cfg, first.audio.sample_rate())?;
    let mut words: BTreeMap<String, Vec<Vec<Vec<f64>>>> = BTreeMap::new();
    let mut silence = Vec::new();
    let mut pauses = Vec::new();
    for utt in utts {
        let rows = feature_rows(&extractor.extract(&utt.audio)?);
        let labels = frame_labels(utt, cfg);
        let mut t = 0;
        while t < rows.len() {
            let label = labels[t];
            let end = (t..rows.len()).find(|&k| labels[k] != label).unwrap_or(rows.len());
            let seg = rows[t..end].to_vec();
            match label {
                Some(k) => words.entry(utt.words[k].word.clone()).or_default().push(seg),
                None => {
                    let inner = t > 0 && end < rows.len();
                    if inner {
                        pauses.push(seg.clone());
                    }
                    if seg.len() >= spec.silence_states {
                        silence.push(seg);
                    }
                }
            }
            t = end;
        }
    }
    let word_cfg = HmmTrainConfig::left_to_right(spec.word_states, spec.components);
    let words = words
        .into_iter()
        .map(|(w, seqs)| {
            let seqs: Vec<_> = seqs.into_iter().filter(|s| s.len() >= spec.word_states).collect();
            Ok((w, hmm_train(&seqs, cfg.space, &word_cfg)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let silence = hmm_train(
        &silence,
        cfg.space,
        &HmmTrainConfig::left_to_right(spec.silence_states, spec.components),
    )?;
    let short_pause = if spec.short_pause && !pauses.is_empty() {
        Some(hmm_train(
            &pauses,
            cfg.space,
            &HmmTrainConfig::left_to_right(1, spec.components),
        )?)
    } else {
        None
    };
    Ok(SpeechModelSet {
        words,
        silence,
        short_pause,
    })
}

/// Noise HMM for one structure choice, with the BIC trace when searched.
pub fn train_noise_model(
    seqs: &[Vec<Vec<f64>>],
    space: FeatureSpace,
    spec: &NoiseModelSpec,
) -> Result<(Hmm, Option<BicReport>)> {
    match spec {
        NoiseModelSpec::Single => Ok((hmm_train(seqs, space, &HmmTrainConfig::ergodic(1, 1))?, None)),
        NoiseModelSpec::Fixed { states } => Ok((hmm_train(seqs, space, &HmmTrainConfig::ergodic(*states, 1))?, None)),
        NoiseModelSpec::Bic { max_states } => {
            let (hmm, report) = bic_select_noise_states(seqs, space, *max_states)?;
            Ok((hmm, Some(report)))
        }
    }
}

/// Seeded shuffle of utterance indices into train and test parts.
pub fn split_train_test(count: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut rng_for(seed, &[0x73706c]));
    let n_train = ((count as f64 * train_fraction).round() as usize).clamp(1, count.saturating_sub(1).max(1));
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Splits a noise recording at `fraction` of its length.
pub fn noise_test_split(noise: &GeneratedNoise, fraction: f64) -> Result<(GeneratedNoise, GeneratedNoise)> {
    let len = noise.audio.len();
    let cut = ((len as f64 * fraction) as usize / noise.chunk) * noise.chunk;
    let part = |start: usize, end: usize, tag: &str| -> Result<GeneratedNoise> {
        Ok(GeneratedNoise {
            id: format!("{}{tag}", noise.id),
            audio: noise.audio.slice(start, end - start)?,
            states: noise.states[start / noise.chunk..end.div_ceil(noise.chunk).min(noise.states.len())].to_vec(),
            chunk: noise.chunk,
        })
    };
    let (mut train, mut test) = (part(0, cut, "")?, part(cut, len, "")?);
    train.id = noise.id.clone();
    test.id = noise.id.clone();
    Ok((train, test))
}

/// Decoded hypothesis of one test mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub noise_id: String,
    pub snr_db: Snr,
    pub method: ScodMethod,
    pub noise_states: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub log_likelihood: f64,
    pub op_count: u64,
}

/// Every parameter and seed of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub train_utterances: Vec<String>,
    pub test_utterances: Vec<String>,
    pub noise_models: Vec<NoiseModelRecord>,
    pub grids: Vec<GridRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelRecord {
    pub noise_id: String,
    pub snr_db: Snr,
    pub noise_states: String,
    pub states: usize,
    pub bic: Option<BicReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub noise_id: String,
    pub snr_db: Snr,
    pub method: ScodMethod,
    pub noise_states: String,
    pub seed: u64,
    pub unsupported_cells: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub manifest: RunManifest,
    pub records: Vec<UtteranceRecord>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Source training, noise training, SCOD construction, decoding and scoring
/// for every (noise, SNR, noise model, method) combination.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut seeds = BTreeMap::new();
    seeds.insert("corpus".to_string(), cfg.corpus.seed);
    let vocab = SyntheticVocabulary::generate(cfg.corpus.vocabulary_size, cfg.corpus.seed);
    let corpus = stage(
        "corpus",
        generate_synthetic_corpus(
            &vocab,
            cfg.corpus.utterances,
            (cfg.corpus.min_words, cfg.corpus.max_words),
            cfg.corpus.seed,
        ),
    )?;
    let split_seed = derive_seed(cfg.seed, &[0x73706c]);
    seeds.insert("split".into(), split_seed);
    let (mut train_idx, mut test_idx) = split_train_test(corpus.utterances.len(), cfg.train_fraction, split_seed);
    if let Some(n) = cfg.max_train_utterances {
        train_idx.truncate(n.max(1));
    }
    if let Some(n) = cfg.max_test_utterances {
        test_idx.truncate(n.max(1));
    }
    let train: Vec<LabeledUtterance> = train_idx.iter().map(|&i| corpus.utterances[i].clone()).collect();
    let test: Vec<LabeledUtterance> = test_idx.iter().map(|&i| corpus.utterances[i].clone()).collect();

    let source_cfg = &cfg.source_features;
    let obs_cfg = cfg.observation();
    let speech = stage(
        "train-sources",
        train_speech_models(&train, source_cfg, &cfg.source_model),
    )?;
    let grammar = stage("train-sources", speech.loop_grammar())?;
    let speech_states = stage("train-sources", grammar.source_states())?;
    let mismatch = if cfg.methods.iter().any(|m| *m != ScodMethod::Wss) {
        Some(stage("build-scod", MismatchModel::for_config(source_cfg))?)
    } else {
        None
    };

    let mut table = ResultTable::default();
    let mut records = Vec::new();
    let mut noise_records = Vec::new();
    let mut grid_records = Vec::new();
    for (ni, noise) in corpus.noises.iter().enumerate() {
        let (noise_train, noise_test) = stage("mix", noise_test_split(noise, cfg.noise_train_fraction))?;
        for (si, snr) in cfg.snrs.iter().enumerate() {
            let train_mix_seed = derive_seed(cfg.seed, &[0x6d6978, 0, ni as u64, si as u64]);
            let test_mix_seed = derive_seed(cfg.seed, &[0x6d6978, 1, ni as u64, si as u64]);
            seeds.insert(format!("mix-train/{}/{snr}", noise.id), train_mix_seed);
            seeds.insert(format!("mix-test/{}/{snr}", noise.id), test_mix_seed);
            let stereo = stage(
                "mix",
                make_stereo_corpus(&train, &noise_train, &[*snr], source_cfg, Some(obs_cfg), train_mix_seed),
            )?;
            let test_mix = stage(
                "mix",
                make_stereo_corpus(&test, &noise_test, &[*snr], source_cfg, Some(obs_cfg), test_mix_seed),
            )?;
            let noise_seqs: Vec<Vec<Vec<f64>>> = stereo.iter().map(|u| feature_rows(&u.n_features)).collect();
            for (ki, nspec) in cfg.noise_models.iter().enumerate() {
                let label = nspec.label();
                let (noise_hmm, bic) = stage("train-noise", train_noise_model(&noise_seqs, source_cfg.space, nspec))?;
                noise_records.push(NoiseModelRecord {
                    noise_id: noise.id.clone(),
                    snr_db: *snr,
                    noise_states: label.clone(),
                    states: noise_hmm.num_states(),
                    bic,
                });
                let noise_states = stage("train-noise", SourceStates::from_hmm(&noise_hmm))?;
                let samples = if cfg.methods.contains(&ScodMethod::Wss) {
                    Some(stage(
                        "build-scod",
                        make_stereo_samples(&stereo, &speech_states, &noise_states),
                    )?)
                } else {
                    None
                };
                for (mi, method) in cfg.methods.iter().enumerate() {
                    let grid_seed = derive_seed(cfg.seed, &[0x73636f64, ni as u64, si as u64, ki as u64, mi as u64]);
                    let scod_cfg = cfg.scod.config(*method, grid_seed);
                    let grid = stage(
                        "build-scod",
                        build_grid(
                            &speech_states,
                            &noise_states,
                            mismatch.as_ref(),
                            samples.as_deref().map(|s| (s, obs_cfg.space)),
                            &scod_cfg,
                        ),
                    )?;
                    grid_records.push(GridRecord {
                        noise_id: noise.id.clone(),
                        snr_db: *snr,
                        method: *method,
                        noise_states: label.clone(),
                        seed: grid_seed,
                        unsupported_cells: grid.unsupported_cells(),
                        notes: grid.report().iter().filter_map(|r| r.note.clone()).collect(),
                    });
                    let model = stage("decode", FactorialModel::new(grammar.clone(), noise_hmm.clone(), grid))?;
                    let mut counts = ErrorCounts::default();
                    let (mut ll_sum, mut ops_sum) = (0.0, 0.0);
                    for utt in &test_mix {
                        let r = stage("decode", model.factorial_viterbi(&utt.y_features, cfg.beam))?;
                        counts.add(&align(&utt.transcript, &r.word_sequence));
                        ll_sum += r.log_likelihood;
                        ops_sum += r.op_count as f64;
                        records.push(UtteranceRecord {
                            utterance_id: utt.id.clone(),
                            noise_id: noise.id.clone(),
                            snr_db: *snr,
                            method: *method,
                            noise_states: label.clone(),
                            reference: utt.transcript.clone(),
                            hypothesis: r.word_sequence,
                            log_likelihood: r.log_likelihood,
                            op_count: r.op_count,
                        });
                    }
                    let n = test_mix.len().max(1) as f64;
                    table.rows.push(ResultRow {
                        noise_id: noise.id.clone(),
                        snr_db: *snr,
                        method: *method,
                        noise_states: label.clone(),
                        noise_state_count: noise_hmm.num_states(),
                        accuracy: stage("evaluate", counts.accuracy())?,
                        utterances: test_mix.len(),
                        mean_log_likelihood: ll_sum / n,
                        mean_op_count: ops_sum / n,
                    });
                }
            }
        }
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        seeds,
        train_utterances: train.iter().map(|u| u.id.clone()).collect(),
        test_utterances: test.iter().map(|u| u.id.clone()).collect(),
        noise_models: noise_records,
        grids: grid_records,
    };
    let out = ExperimentOutput {
        table,
        manifest,
        records,
    };
    if let Some(dir) = &cfg.output_dir {
        stage("write-results", write_outputs(dir, &out))?;
    }
    Ok(out)
}

fn write_outputs(dir: &std::path::Path, out: &ExperimentOutput) -> Result<()> {
    let file_err = |path: PathBuf| move |source| Error::File { path, source };
    std::fs::create_dir_all(dir).map_err(file_err(dir.to_path_buf()))?;
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, out.table.to_csv()?).map_err(file_err(csv_path.clone()))?;
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&out.manifest).map_err(|e| Error::Corrupt(e.to_string()))?;
    std::fs::write(&manifest_path, text + "\n").map_err(file_err(manifest_path.clone()))?;
    let decodes_path = dir.join("decodes.tsv");
    let mut lines = String::from(
        "utterance_id\tnoise_id\tsnr_db\tmethod\tnoise_states\treference\thypothesis\tlog_likelihood\top_count\n",
    );
    for r in &out.records {
        lines.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.utterance_id,
            r.noise_id,
            r.snr_db,
            r.method,
            r.noise_states,
            r.reference.join(" "),
            r.hypothesis.join(" "),
            r.log_likelihood,
            r.op_count
        ));
    }
    std::fs::write(&decodes_path, lines).map_err(file_err(decodes_path.clone()))?;
    Ok(())
}
