//! Synthetic click-through data with planted feature importance and
//! per-feature retrieval latencies.
//!
//! Labels come from a logistic model over hidden per-value weights of the
//! planted-informative features; the remaining features are label-independent.
//! The hidden weight tables stay inside the generator, so recovery of the
//! planted set is measurable without leaking it to the search.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::sigmoid;

/// Retrieval group of a feature, from the latency perspective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureGroup {
    /// Passed along from the matching stage.
    F1,
    /// Retrieved from the in-memory feature store.
    F2,
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureGroup::F1 => write!(f, "F1"),
            FeatureGroup::F2 => write!(f, "F2"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpec {
    pub id: usize,
    pub name: String,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub group: FeatureGroup,
    pub retrieval_latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub query_id: usize,
    pub feature_values: Vec<usize>,
    pub label: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_features: usize,
    pub num_informative: usize,
    pub num_queries: usize,
    pub items_per_query: usize,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Probability of flipping a label after drawing it; 0.5 destroys all signal.
    pub label_noise: f64,
    /// Std-dev of the hidden per-value weights of informative features.
    pub signal_strength: f64,
    /// Std-dev of the Gaussian noise added to the hidden score.
    pub score_noise: f64,
    /// Fraction of features passed from matching (group F1).
    pub f1_fraction: f64,
    pub f1_latency_range_ms: (f64, f64),
    pub f2_latency_range_ms: (f64, f64),
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_features: 50,
            num_informative: 10,
            num_queries: 400,
            items_per_query: 50,
            vocab_size: 50,
            embedding_dim: 4,
            label_noise: 0.05,
            signal_strength: 1.6,
            score_noise: 0.25,
            f1_fraction: 0.5,
            f1_latency_range_ms: (0.5, 2.0),
            f2_latency_range_ms: (2.0, 8.0),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn num_examples(&self) -> usize {
        self.num_queries * self.items_per_query
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_informative > self.num_features {
            return Err(Error::DatasetSpec(format!(
                "num_informative {} exceeds num_features {}",
                self.num_informative, self.num_features
            )));
        }
        if !(0.0..0.5 + 1e-12).contains(&self.label_noise) {
            return Err(Error::DatasetSpec(format!(
                "label_noise must be in [0, 0.5], got {}",
                self.label_noise
            )));
        }
        if self.num_features == 0 || self.vocab_size == 0 || self.embedding_dim == 0 {
            return Err(Error::DatasetSpec("zero-sized dataset dimension".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Vec<FeatureSpec>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Total concatenated embedding width.
    pub fn input_width(&self) -> usize {
        self.features.iter().map(|f| f.embedding_dim).sum()
    }

    /// Split by query: first `frac` of queries (in order of appearance) go to
    /// the train slice, the rest to the eval slice.
    pub fn split(&self, frac: f64) -> (Dataset, Dataset) {
        let mut qids: Vec<usize> = Vec::new();
        for e in &self.examples {
            if qids.last() != Some(&e.query_id) && !qids.contains(&e.query_id) {
                qids.push(e.query_id);
            }
        }
        let cut = ((qids.len() as f64) * frac).round() as usize;
        let train_q: BTreeSet<usize> = qids.iter().take(cut).cloned().collect();
        let (mut tr, mut ev) = (Vec::new(), Vec::new());
        for e in &self.examples {
            if train_q.contains(&e.query_id) {
                tr.push(e.clone());
            } else {
                ev.push(e.clone());
            }
        }
        (
            Dataset {
                features: self.features.clone(),
                examples: tr,
            },
            Dataset {
                features: self.features.clone(),
                examples: ev,
            },
        )
    }
}

/// Generate a dataset and the set of planted-informative feature ids.
pub fn generate(spec: &DatasetSpec) -> Result<(Dataset, BTreeSet<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut ids: Vec<usize> = (0..spec.num_features).collect();
    ids.shuffle(&mut rng);
    let planted: BTreeSet<usize> = ids.into_iter().take(spec.num_informative).collect();

    let mut features = Vec::with_capacity(spec.num_features);
    for id in 0..spec.num_features {
        let group = if rng.random::<f64>() < spec.f1_fraction {
            FeatureGroup::F1
        } else {
            FeatureGroup::F2
        };
        let (lo, hi) = match group {
            FeatureGroup::F1 => spec.f1_latency_range_ms,
            FeatureGroup::F2 => spec.f2_latency_range_ms,
        };
        features.push(FeatureSpec {
            id,
            name: format!("f{id:03}"),
            vocab_size: spec.vocab_size,
            embedding_dim: spec.embedding_dim,
            group,
            retrieval_latency_ms: rng.random_range(lo..hi),
        });
    }

    // Hidden per-value weights, generator-only.
    let weight_dist = Normal::new(0.0, spec.signal_strength)
        .map_err(|e| Error::DatasetSpec(e.to_string()))?;
    let noise_dist =
        Normal::new(0.0, spec.score_noise).map_err(|e| Error::DatasetSpec(e.to_string()))?;
    let mut hidden: Vec<Option<Vec<f64>>> = vec![None; spec.num_features];
    for &f in &planted {
        hidden[f] = Some(
            (0..spec.vocab_size)
                .map(|_| weight_dist.sample(&mut rng))
                .collect(),
        );
    }

    let mut examples = Vec::with_capacity(spec.num_examples());
    for q in 0..spec.num_queries {
        for _ in 0..spec.items_per_query {
            let values: Vec<usize> = (0..spec.num_features)
                .map(|_| rng.random_range(0..spec.vocab_size))
                .collect();
            let mut score = 0.0;
            for &f in &planted {
                score += hidden[f].as_ref().unwrap()[values[f]];
            }
            if spec.score_noise > 0.0 {
                score += noise_dist.sample(&mut rng);
            }
            let mut label = u8::from(rng.random::<f64>() < sigmoid(score));
            if rng.random::<f64>() < spec.label_noise {
                label = 1 - label;
            }
            examples.push(Example {
                query_id: q,
                feature_values: values,
                label,
            });
        }
    }

    Ok((Dataset { features, examples }, planted))
}

const FEATURE_HEADER: &str = "id\tname\tvocab_size\tembedding_dim\tgroup\tlatency_ms";

/// Write `<base>.features.tsv` and `<base>.examples.tsv`.
pub fn write_dataset(base: &Path, dataset: &Dataset) -> Result<()> {
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut feat = String::new();
    feat.push_str(FEATURE_HEADER);
    feat.push('\n');
    for f in &dataset.features {
        feat.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            f.id, f.name, f.vocab_size, f.embedding_dim, f.group, f.retrieval_latency_ms
        ));
    }
    fs::write(features_path(base), feat)?;

    let file = fs::File::create(examples_path(base))?;
    let mut w = std::io::BufWriter::new(file);
    for e in &dataset.examples {
        write!(w, "{}\t{}", e.query_id, e.label)?;
        for v in &e.feature_values {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn features_path(base: &Path) -> std::path::PathBuf {
    with_suffix(base, ".features.tsv")
}

pub fn examples_path(base: &Path) -> std::path::PathBuf {
    with_suffix(base, ".examples.tsv")
}

fn with_suffix(base: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    std::path::PathBuf::from(s)
}

pub fn read_dataset(base: &Path) -> Result<Dataset> {
    let feat_text = fs::read_to_string(features_path(base))?;
    let mut lines = feat_text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == FEATURE_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad feature header: {h:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty feature file".into(),
            })
        }
    }
    let mut features = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 6 columns, got {}", cols.len()),
            });
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad integer {s:?}"),
            })
        };
        let group = match cols[4] {
            "F1" => FeatureGroup::F1,
            "F2" => FeatureGroup::F2,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("bad group {other:?}"),
                })
            }
        };
        features.push(FeatureSpec {
            id: parse_usize(cols[0])?,
            name: cols[1].to_string(),
            vocab_size: parse_usize(cols[2])?,
            embedding_dim: parse_usize(cols[3])?,
            group,
            retrieval_latency_ms: cols[5].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad latency {:?}", cols[5]),
            })?,
        });
    }

    let m = features.len();
    let ex_text = fs::read_to_string(examples_path(base))?;
    let mut examples = Vec::new();
    for (i, line) in ex_text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != m + 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} columns, got {}", m + 2, cols.len()),
            });
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad integer {s:?}"),
            })
        };
        let label = parse_usize(cols[1])?;
        if label > 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("label must be 0 or 1, got {label}"),
            });
        }
        let mut values = Vec::with_capacity(m);
        for (fi, c) in cols[2..].iter().enumerate() {
            let v = parse_usize(c)?;
            if v >= features[fi].vocab_size {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("value {v} out of vocab for feature {fi}"),
                });
            }
            values.push(v);
        }
        examples.push(Example {
            query_id: parse_usize(cols[0])?,
            feature_values: values,
            label: label as u8,
        });
    }
    Ok(Dataset { features, examples })
}
