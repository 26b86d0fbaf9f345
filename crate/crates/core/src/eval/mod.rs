//! Scoring, experiment orchestration and result tables.

mod experiment;
mod plots;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use experiment::{
    frame_labels, noise_test_split, run_experiment, split_train_test, train_noise_model, train_speech_models,
    CorpusSpec, ExperimentConfig, ExperimentOutput, NoiseModelSpec, RunManifest, SourceModelSpec, SpeechModelSet,
    UtteranceRecord,
};
pub use plots::{emit_plots, PlotReport};

use crate::error::{Error, Result};
use crate::mixing::Snr;
use crate::scod::ScodMethod;

/// Edit counts of a minimum-cost alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub reference: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(N − S − D − I) / N × 100`; negative when insertions dominate.
    pub fn accuracy(&self) -> Result<f64> {
        if self.reference == 0 {
            return Err(Error::Empty("reference transcript"));
        }
        Ok((self.reference as f64 - self.errors() as f64) / self.reference as f64 * 100.0)
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.reference += other.reference;
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
    }
}

/// Levenshtein alignment with unit costs. Among equal-cost alignments
/// substitutions are preferred, then deletions.
pub fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> ErrorCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // (cost, S, D, I) per cell
    let mut prev: Vec<(usize, usize, usize, usize)> = (0..=m).map(|j| (j, 0, 0, j)).collect();
    for i in 1..=n {
        let mut cur = vec![(i, 0, i, 0); m + 1];
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let d = prev[j - 1];
            let diag = (d.0 + usize::from(!same), d.1 + usize::from(!same), d.2, d.3);
            let u = prev[j];
            let del = (u.0 + 1, u.1, u.2 + 1, u.3);
            let l = cur[j - 1];
            let ins = (l.0 + 1, l.1, l.2, l.3 + 1);
            let mut best = diag;
            if del.0 < best.0 {
                best = del;
            }
            if ins.0 < best.0 {
                best = ins;
            }
            cur[j] = best;
        }
        prev = cur;
    }
    let (_, s, d, ins) = prev[m];
    ErrorCounts {
        reference: n,
        substitutions: s,
        deletions: d,
        insertions: ins,
    }
}

/// Word accuracy in percent. An empty reference is an error.
pub fn word_accuracy<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    align(reference, hypothesis).accuracy()
}

/// One result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub noise_id: String,
    pub snr_db: Snr,
    pub method: ScodMethod,
    /// `single`, `multi` or `fixed-<n>`.
    pub noise_states: String,
    pub noise_state_count: usize,
    pub accuracy: f64,
    pub utterances: usize,
    pub mean_log_likelihood: f64,
    pub mean_op_count: f64,
}

/// Rows keyed by `(noise_id, snr_db, method, noise_states)`.
///
/// CSV columns, in order: `noise_id, snr_db, method, noise_states,
/// noise_state_count, accuracy, utterances, mean_log_likelihood,
/// mean_op_count`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "noise_id",
    "snr_db",
    "method",
    "noise_states",
    "noise_state_count",
    "accuracy",
    "utterances",
    "mean_log_likelihood",
    "mean_op_count",
];

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, noise_id: &str, snr: Snr, method: ScodMethod, noise_states: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.noise_id == noise_id && r.snr_db == snr && r.method == method && r.noise_states == noise_states)
    }

    /// Mean accuracy over `snrs` for one configuration; `None` if any cell is
    /// missing.
    pub fn average(&self, noise_id: &str, method: ScodMethod, noise_states: &str, snrs: &[Snr]) -> Option<f64> {
        if snrs.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for snr in snrs {
            total += self.get(noise_id, *snr, method, noise_states)?.accuracy;
        }
        Some(total / snrs.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record([
                r.noise_id.clone(),
                r.snr_db.to_string(),
                r.method.to_string(),
                r.noise_states.clone(),
                r.noise_state_count.to_string(),
                r.accuracy.to_string(),
                r.utterances.to_string(),
                r.mean_log_likelihood.to_string(),
                r.mean_op_count.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(csv_error)?.clone();
        if headers.iter().ne(CSV_COLUMNS) {
            return Err(Error::Corrupt(format!(
                "unexpected result columns `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_error)?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse()
                    .map_err(|_| Error::Corrupt(format!("bad {} `{}`", CSV_COLUMNS[k], &rec[k])))
            };
            let int = |k: usize| -> Result<usize> {
                rec[k]
                    .parse()
                    .map_err(|_| Error::Corrupt(format!("bad {} `{}`", CSV_COLUMNS[k], &rec[k])))
            };
            rows.push(ResultRow {
                noise_id: rec[0].to_string(),
                snr_db: rec[1].parse()?,
                method: rec[2].parse()?,
                noise_states: rec[3].to_string(),
                noise_state_count: int(4)?,
                accuracy: num(5)?,
                utterances: int(6)?,
                mean_log_likelihood: num(7)?,
                mean_op_count: num(8)?,
            });
        }
        Ok(Self { rows })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Corrupt(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(word_accuracy(&w("1 2 3 4 5"), &w("1 2 3 4 5")).unwrap(), 100.0);
        assert!((word_accuracy(&w("1 2 3"), &w("1 3")).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(word_accuracy(&w("1"), &w("1 1 1")).unwrap(), -100.0);
        assert!(matches!(word_accuracy::<&str>(&[], &w("1")), Err(Error::Empty(_))));
        let c = align(&w("a b c"), &w("a x c d"));
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 1));
    }

    fn row(snr: f64, method: ScodMethod, states: &str, acc: f64) -> ResultRow {
        ResultRow {
            noise_id: "n".into(),
            snr_db: Snr(snr),
            method,
            noise_states: states.into(),
            noise_state_count: 1,
            accuracy: acc,
            utterances: 3,
            mean_log_likelihood: -1.5,
            mean_op_count: 10.0,
        }
    }

    #[test]
    fn csv_round_trip_and_average() {
        let mut t = ResultTable::default();
        for (k, snr) in [20.0, 15.0, 10.0, 5.0, 0.0].iter().enumerate() {
            t.rows.push(row(*snr, ScodMethod::Wss, "multi", 90.0 - 7.0 * k as f64));
        }
        t.rows.push(row(f64::INFINITY, ScodMethod::Vts, "single", 99.5));
        let back = ResultTable::read_csv(t.to_csv().unwrap().as_bytes()).unwrap();
        assert_eq!(back, t);
        let snrs: Vec<Snr> = [20.0, 15.0, 10.0, 5.0, 0.0].into_iter().map(Snr).collect();
        let avg = t.average("n", ScodMethod::Wss, "multi", &snrs).unwrap();
        assert!((avg - (90.0 + 83.0 + 76.0 + 69.0 + 62.0) / 5.0).abs() < 1e-12);
        assert!(t.average("n", ScodMethod::Vts, "single", &snrs).is_none());
    }
}
