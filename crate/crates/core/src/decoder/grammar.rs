use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::Gmm;
use crate::hmm::{Hmm, Topology};
use crate::math::stationary_distribution;
use crate::scod::SourceStates;

/// What a composite state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateLabel {
    Silence,
    ShortPause,
    Word { word: usize, position: usize },
}

/// Branching probabilities applied to model exit mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrammarOptions {
    /// Word loop when true, fixed word sequence otherwise.
    pub looped: bool,
    /// Word exit mass going to the short pause.
    pub word_to_pause: f64,
    /// Word exit mass going directly to another word.
    pub word_to_word: f64,
    /// Short-pause exit mass going to a word (the rest goes to silence).
    pub pause_to_word: f64,
    /// Prior mass on starting in silence.
    pub initial_silence: f64,
}

impl Default for GrammarOptions {
    fn default() -> Self {
        Self {
            looped: true,
            word_to_pause: 0.45,
            word_to_word: 0.45,
            pause_to_word: 0.9,
            initial_silence: 0.9,
        }
    }
}

impl GrammarOptions {
    pub fn sequence() -> Self {
        Self {
            looped: false,
            ..Self::default()
        }
    }
}

/// Composite speech chain with state labels.
///
/// Chain states index into an inventory of distinct emission models; the
/// observation grid is built over the inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    chain: Hmm,
    labels: Vec<StateLabel>,
    words: Vec<String>,
    inventory: Vec<Gmm>,
    inventory_labels: Vec<StateLabel>,
    inventory_index: Vec<usize>,
}

struct Block {
    label: Option<usize>,
    pause: bool,
    offset: usize,
    model: usize,
}

/// Joins word models with silence and an optional short pause.
///
/// In loop mode the chain is the inventory itself: silence, every word, then
/// the short pause. In sequence mode `words` is the utterance and the chain
/// is leading silence, each word in order, and a trailing silence copy.
pub fn compose_grammar(
    words: &[(String, Hmm)],
    silence: &Hmm,
    short_pause: Option<&Hmm>,
    opts: &GrammarOptions,
) -> Result<Grammar> {
    if words.is_empty() {
        return Err(Error::Empty("grammar words"));
    }
    let probs = [
        opts.word_to_pause,
        opts.word_to_word,
        opts.pause_to_word,
        opts.initial_silence,
    ];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || opts.word_to_pause + opts.word_to_word > 1.0 {
        return Err(Error::InvalidConfig("grammar branch probabilities out of range".into()));
    }
    let space = silence.space();
    let dim = silence.dim();
    for (name, h) in words
        .iter()
        .map(|(n, h)| (n.as_str(), h))
        .chain(short_pause.map(|h| ("sp", h)))
    {
        if h.space() != space {
            return Err(Error::SpaceMismatch {
                expected: space.to_string(),
                got: format!("{} ({name})", h.space()),
            });
        }
        if h.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: h.dim(),
            });
        }
    }

    // distinct models: silence, words by first occurrence, short pause
    let mut names: Vec<String> = Vec::new();
    let mut models: Vec<&Hmm> = vec![silence];
    let mut sequence = Vec::new();
    for (name, h) in words {
        let k = match names.iter().position(|n| n == name) {
            Some(k) => k,
            None => {
                names.push(name.clone());
                models.push(h);
                names.len() - 1
            }
        };
        sequence.push(k);
    }
    if let Some(sp) = short_pause {
        models.push(sp);
    }
    let mut inventory = Vec::new();
    let mut inventory_labels = Vec::new();
    let mut model_offset = Vec::new();
    for (m, h) in models.iter().enumerate() {
        model_offset.push(inventory.len());
        for (p, g) in h.emissions().iter().enumerate() {
            inventory.push(g.clone());
            inventory_labels.push(if m == 0 {
                StateLabel::Silence
            } else if m <= names.len() {
                StateLabel::Word {
                    word: m - 1,
                    position: p,
                }
            } else {
                StateLabel::ShortPause
            });
        }
    }

    // chain layout as blocks of model states
    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut push = |model: usize, label: Option<usize>, pause: bool, blocks: &mut Vec<Block>| {
        blocks.push(Block {
            label,
            pause,
            offset,
            model,
        });
        offset += models[model].num_states();
    };
    if opts.looped {
        push(0, None, false, &mut blocks);
        for w in 0..names.len() {
            push(w + 1, Some(w), false, &mut blocks);
        }
        if short_pause.is_some() {
            push(names.len() + 1, None, true, &mut blocks);
        }
    } else {
        push(0, None, false, &mut blocks);
        for &w in &sequence {
            push(w + 1, Some(w), false, &mut blocks);
        }
        push(0, None, false, &mut blocks);
    }
    let n = offset;
    let mut trans = vec![vec![0.0; n]; n];
    let mut exit = vec![0.0; n];
    let mut priors = vec![0.0; n];
    let mut index = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    let enter = |row: &mut [f64], b: &Block, mass: f64| {
        for (k, p) in models[b.model].priors().iter().enumerate() {
            row[b.offset + k] += mass * p;
        }
    };
    let word_blocks: Vec<&Block> = blocks.iter().filter(|b| b.label.is_some()).collect();
    let silence_block = &blocks[0];
    let pause_block = blocks.iter().find(|b| b.pause);
    let to_words = |row: &mut [f64], mass: f64| {
        let share = mass / word_blocks.len() as f64;
        for b in &word_blocks {
            enter(row, b, share);
        }
    };

    for (bi, b) in blocks.iter().enumerate() {
        let h = models[b.model];
        for s in 0..h.num_states() {
            let i = b.offset + s;
            index.push(model_offset[b.model] + s);
            labels.push(inventory_labels[model_offset[b.model] + s]);
            for (k, a) in h.transitions()[s].iter().enumerate() {
                trans[i][b.offset + k] = *a;
            }
            let e = h.exit()[s];
            if e == 0.0 {
                continue;
            }
            if opts.looped {
                if b.pause {
                    to_words(&mut trans[i], e * opts.pause_to_word);
                    enter(&mut trans[i], silence_block, e * (1.0 - opts.pause_to_word));
                } else if b.label.is_some() {
                    let (mut to_pause, mut direct) = (opts.word_to_pause, opts.word_to_word);
                    match pause_block {
                        Some(pb) => enter(&mut trans[i], pb, e * to_pause),
                        None => {
                            direct += to_pause;
                            to_pause = 0.0;
                        }
                    }
                    to_words(&mut trans[i], e * direct);
                    enter(&mut trans[i], silence_block, e * (1.0 - to_pause - direct));
                } else {
                    to_words(&mut trans[i], e);
                }
            } else if let Some(next) = blocks.get(bi + 1) {
                enter(&mut trans[i], next, e);
            } else {
                exit[i] = e;
            }
        }
    }
    if opts.looped {
        enter(&mut priors, silence_block, opts.initial_silence);
        to_words(&mut priors, 1.0 - opts.initial_silence);
    } else {
        enter(&mut priors, silence_block, 1.0);
    }
    // absorb rounding so rows stay exactly stochastic
    for (row, e) in trans.iter_mut().zip(&exit) {
        let total: f64 = row.iter().sum::<f64>() + e;
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    let emissions = index.iter().map(|&k| inventory[k].clone()).collect();
    let topology = if opts.looped {
        Topology::Ergodic
    } else {
        Topology::LeftToRight
    };
    let chain = Hmm::new(space, topology, priors, trans, exit, emissions)?;
    Ok(Grammar {
        chain,
        labels,
        words: names,
        inventory,
        inventory_labels,
        inventory_index: index,
    })
}

impl Grammar {
    pub fn chain(&self) -> &Hmm {
        &self.chain
    }

    pub fn labels(&self) -> &[StateLabel] {
        &self.labels
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn inventory(&self) -> &[Gmm] {
        &self.inventory
    }

    pub fn inventory_labels(&self) -> &[StateLabel] {
        &self.inventory_labels
    }

    pub fn inventory_len(&self) -> usize {
        self.inventory.len()
    }

    /// Inventory row of each chain state.
    pub fn inventory_index(&self) -> &[usize] {
        &self.inventory_index
    }

    /// Inventory states with priors from the chain's stationary distribution.
    pub fn source_states(&self) -> Result<SourceStates> {
        let stationary = stationary_distribution(self.chain.transitions());
        let mut p = vec![0.0; self.inventory.len()];
        for (s, &k) in self.inventory_index.iter().enumerate() {
            p[k] += stationary[s];
        }
        p.iter_mut().for_each(|v| *v = v.max(1e-6));
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        SourceStates::new(self.chain.space(), self.inventory.clone(), p)
    }
}

/// Word sequence read off a chain-state path. A new token starts whenever
/// the word changes or the position inside a word moves backwards.
pub fn transcript_from_path(path: &[usize], grammar: &Grammar) -> Vec<String> {
    let mut out = Vec::new();
    let mut prev: Option<(usize, usize)> = None;
    for &s in path {
        match grammar.labels.get(s) {
            Some(StateLabel::Word { word, position }) => {
                let fresh = match prev {
                    Some((w, p)) => w != *word || *position < p,
                    None => true,
                };
                if fresh {
                    out.push(grammar.words[*word].clone());
                }
                prev = Some((*word, *position));
            }
            _ => prev = None,
        }
    }
    out
}
