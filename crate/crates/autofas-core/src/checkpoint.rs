//! Versioned text checkpoints: every named tensor with its shape and values,
//! one per line, in deterministic name order. Optimizer state and trainable
//! flags are not persisted; loaded parameters start trainable with a fresh
//! accumulator.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::optim::ParamStore;

const HEADER: &str = "autofas-checkpoint v1";

/// Line format: `name<TAB>d1,d2,...<TAB>v1 v2 ...` with shortest-round-trip
/// float formatting, so identical stores produce byte-identical files.
pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let mut s = String::new();
    s.push_str(HEADER);
    s.push('\n');
    for (name, entry) in store.iter() {
        let dims: Vec<String> = entry.value.shape.iter().map(|d| d.to_string()).collect();
        let vals: Vec<String> = entry.value.data.iter().map(|v| format!("{v}")).collect();
        s.push_str(&format!("{name}\t{}\t{}\n", dims.join(","), vals.join(" ")));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        Some((_, h)) => {
            return Err(Error::Config(format!(
                "unsupported checkpoint header {h:?}"
            )))
        }
        None => return Err(Error::Config("empty checkpoint file".into())),
    }
    let mut store = ParamStore::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        let [name, dims, vals] = cols.as_slice() else {
            return Err(parse_err(format!("expected 3 columns, got {}", cols.len())));
        };
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| {
                d.parse()
                    .map_err(|_| parse_err(format!("bad dimension {d:?}")))
            })
            .collect::<Result<_>>()?;
        let data: Vec<f64> = vals
            .split(' ')
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse()
                    .map_err(|_| parse_err(format!("bad value {v:?}")))
            })
            .collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(parse_err(format!(
                "tensor {name}: shape {shape:?} wants {numel} values, found {}",
                data.len()
            )));
        }
        store.insert(name, Tensor::new(shape, data));
    }
    Ok(store)
}
