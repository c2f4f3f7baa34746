//! Over-parameterized pre-ranking search space: a chain of Mixops, each with
//! parallel candidate operators (single MLP layers of various widths plus an
//! optional zero operator) combined by softmax-weighted strengths.
//!
//! Strength row `i` weights the operators of Mixop `i`: it is applied when the
//! next Mixop (or the final head) consumes Mixop `i`'s parallel outputs. The
//! zero operator keeps the raw supernet input flowing unchanged, so its path
//! always has the input width; when several Mixops select zero the network
//! degenerates to the head on the raw masked embedding.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Tensor};
use crate::optim::{Binder, ParamStore};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SupernetConfig {
    /// Number of Mixops (L).
    pub num_mixops: usize,
    /// Output widths of the candidate MLP operators of every Mixop.
    pub unit_choices: Vec<usize>,
    pub include_zero: bool,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        SupernetConfig {
            num_mixops: 3,
            unit_choices: vec![64, 32, 16],
            include_zero: true,
        }
    }
}

/// A candidate operator inside a Mixop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpChoice {
    Mlp(usize),
    Zero,
}

impl SupernetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_mixops == 0 || self.unit_choices.is_empty() {
            return Err(Error::InvalidParameter(
                "supernet needs at least one Mixop and one unit choice".into(),
            ));
        }
        if self.unit_choices.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("zero-width unit choice".into()));
        }
        Ok(())
    }

    /// Operators of every Mixop, in strength order. The zero operator, when
    /// present, is the last index.
    pub fn ops(&self) -> Vec<OpChoice> {
        let mut v: Vec<OpChoice> = self.unit_choices.iter().map(|&w| OpChoice::Mlp(w)).collect();
        if self.include_zero {
            v.push(OpChoice::Zero);
        }
        v
    }

    pub fn num_ops(&self) -> usize {
        self.unit_choices.len() + usize::from(self.include_zero)
    }

    /// Width of an operator's output path given the supernet input width.
    pub fn path_width(&self, op: OpChoice, input_width: usize) -> usize {
        match op {
            OpChoice::Mlp(w) => w,
            OpChoice::Zero => input_width,
        }
    }
}

pub fn alpha_param(mixop: usize) -> String {
    format!("arch.alpha.{mixop}")
}

fn mixop_weight(layer: usize, source: usize, target: usize) -> (String, String) {
    (
        format!("sn.m{layer}.s{source}.k{target}.w"),
        format!("sn.m{layer}.s{source}.k{target}.b"),
    )
}

fn head_weight(path: usize) -> (String, String) {
    (format!("sn.head.k{path}.w"), format!("sn.head.k{path}.b"))
}

/// Insert alpha rows (zeros: uniform strengths) and all Mixop/head weights.
pub fn init_supernet_params(
    cfg: &SupernetConfig,
    input_width: usize,
    store: &mut ParamStore,
    rng: &mut impl Rng,
) {
    let ops = cfg.ops();
    for i in 0..cfg.num_mixops {
        store.insert_zeros(&alpha_param(i), &[cfg.num_ops()]);
    }
    for layer in 0..cfg.num_mixops {
        let source_widths: Vec<usize> = if layer == 0 {
            vec![input_width]
        } else {
            ops.iter().map(|&o| cfg.path_width(o, input_width)).collect()
        };
        for (j, &src_w) in source_widths.iter().enumerate() {
            for (k, &op) in ops.iter().enumerate() {
                if let OpChoice::Mlp(out_w) = op {
                    let (wn, bn) = mixop_weight(layer, j, k);
                    store.insert_he(&wn, src_w, out_w, rng);
                    store.insert_zeros(&bn, &[out_w]);
                }
            }
        }
    }
    for (k, &op) in ops.iter().enumerate() {
        let w = cfg.path_width(op, input_width);
        let (wn, bn) = head_weight(k);
        store.insert_he(&wn, w, 1, rng);
        store.insert_zeros(&bn, &[1]);
    }
}

/// One Mixop: combine the previous parallel outputs into this Mixop's parallel
/// outputs. `alpha_row` holds the strengths over the previous paths. The zero
/// operator passes through only width-compatible sources, with its strengths
/// renormalized over that subset (a restricted softmax).
pub fn mixop_forward(
    g: &mut Graph,
    binder: &mut Binder,
    cfg: &SupernetConfig,
    layer: usize,
    prev: &[NodeId],
    alpha_row: NodeId,
    input_width: usize,
) -> Result<Vec<NodeId>> {
    let strengths = g.softmax(alpha_row)?;
    let prev_widths: Vec<usize> = prev.iter().map(|&p| g.value(p).cols()).collect();
    let mut outputs = Vec::with_capacity(cfg.num_ops());
    for (k, &op) in cfg.ops().iter().enumerate() {
        match op {
            OpChoice::Mlp(_) => {
                let mut acc: Option<NodeId> = None;
                for (j, &src) in prev.iter().enumerate() {
                    let (wn, bn) = mixop_weight(layer, j, k);
                    let w = binder.bind(g, &wn);
                    let b = binder.bind(g, &bn);
                    let z = g.matmul(src, w)?;
                    let z = g.add_bias(z, b)?;
                    let a = g.relu(z);
                    let p = g.index(strengths, j);
                    let term = g.scalar_mul(a, p);
                    acc = Some(match acc {
                        None => term,
                        Some(prev_acc) => g.add(prev_acc, term)?,
                    });
                }
                outputs.push(acc.expect("mixop has at least one source"));
            }
            OpChoice::Zero => {
                let compat: Vec<usize> = (0..prev.len())
                    .filter(|&j| prev_widths[j] == input_width)
                    .collect();
                if compat.is_empty() {
                    return Err(Error::InvalidParameter(format!(
                        "mixop {layer}: zero operator has no width-{input_width} source"
                    )));
                }
                if compat.len() == 1 {
                    outputs.push(prev[compat[0]]);
                } else {
                    let picked: Vec<NodeId> =
                        compat.iter().map(|&j| g.index(alpha_row, j)).collect();
                    let stacked = g.concat_cols(&picked)?;
                    let renorm = g.softmax(stacked)?;
                    let mut acc: Option<NodeId> = None;
                    for (ci, &j) in compat.iter().enumerate() {
                        let p = g.index(renorm, ci);
                        let term = g.scalar_mul(prev[j], p);
                        acc = Some(match acc {
                            None => term,
                            Some(prev_acc) => g.add(prev_acc, term)?,
                        });
                    }
                    outputs.push(acc.unwrap());
                }
            }
        }
    }
    Ok(outputs)
}

/// Chain all Mixops from the (masked) input embedding to a single pre-ranking
/// logit. `alpha_rows[i]` are the strengths of Mixop i; the last row also
/// weighs the final per-path heads.
pub fn supernet_forward(
    g: &mut Graph,
    binder: &mut Binder,
    cfg: &SupernetConfig,
    input: NodeId,
    alpha_rows: &[NodeId],
) -> Result<NodeId> {
    cfg.validate()?;
    assert_eq!(alpha_rows.len(), cfg.num_mixops, "one alpha row per Mixop");
    let input_width = g.value(input).cols();

    // Mixop 0 consumes the single input path with trivial strength 1.
    let trivial = g.constant(Tensor::new(vec![1], vec![0.0]));
    let mut paths = mixop_forward(g, binder, cfg, 0, &[input], trivial, input_width)?;
    for layer in 1..cfg.num_mixops {
        paths = mixop_forward(
            g,
            binder,
            cfg,
            layer,
            &paths,
            alpha_rows[layer - 1],
            input_width,
        )?;
    }

    let strengths = g.softmax(alpha_rows[cfg.num_mixops - 1])?;
    let mut logit: Option<NodeId> = None;
    for (k, &path) in paths.iter().enumerate() {
        let (wn, bn) = head_weight(k);
        let w = binder.bind(g, &wn);
        let b = binder.bind(g, &bn);
        let z = g.matmul(path, w)?;
        let z = g.add_bias(z, b)?;
        let p = g.index(strengths, k);
        let term = g.scalar_mul(z, p);
        logit = Some(match logit {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(logit.unwrap())
}

/// Numeric strengths (softmax of a stored alpha row).
pub fn strengths_of(alpha: &Tensor) -> Vec<f64> {
    let max = alpha.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = alpha.data.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// The collapsed search result: which features and which operator per Mixop.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub feature_ids: Vec<usize>,
    pub operators: Vec<OpChoice>,
}

impl Selection {
    /// Widths of the retained (non-zero) layers, in order.
    pub fn layer_widths(&self) -> Vec<usize> {
        self.operators
            .iter()
            .filter_map(|op| match op {
                OpChoice::Mlp(w) => Some(*w),
                OpChoice::Zero => None,
            })
            .collect()
    }
}

/// Keep the top-n features by theta (ties: lower id) and the argmax-strength
/// operator of each Mixop (ties: lower index). Zero selections delete their
/// Mixop, reducing depth.
pub fn derive_architecture(
    cfg: &SupernetConfig,
    alpha_rows: &[Tensor],
    theta: &[f64],
    top_n_features: usize,
) -> Result<Selection> {
    if top_n_features > theta.len() {
        return Err(Error::InvalidParameter(format!(
            "top_n_features {} exceeds feature count {}",
            top_n_features,
            theta.len()
        )));
    }
    let mut ids: Vec<usize> = (0..theta.len()).collect();
    ids.sort_by(|&a, &b| theta[b].partial_cmp(&theta[a]).unwrap().then(a.cmp(&b)));
    let mut feature_ids: Vec<usize> = ids.into_iter().take(top_n_features).collect();
    feature_ids.sort_unstable();

    let ops = cfg.ops();
    let mut operators = Vec::with_capacity(cfg.num_mixops);
    for row in alpha_rows {
        let s = strengths_of(row);
        let mut best = 0;
        for j in 1..s.len() {
            if s[j] > s[best] {
                best = j;
            }
        }
        operators.push(ops[best]);
    }
    Ok(Selection {
        feature_ids,
        operators,
    })
}

const SELECTION_HEADER: &str = "autofas-architecture v1";

pub fn write_selection(path: &Path, sel: &Selection) -> Result<()> {
    let mut s = String::new();
    s.push_str(SELECTION_HEADER);
    s.push('\n');
    let ids: Vec<String> = sel.feature_ids.iter().map(|i| i.to_string()).collect();
    s.push_str(&format!("features\t{}\n", ids.join(",")));
    for (i, op) in sel.operators.iter().enumerate() {
        match op {
            OpChoice::Mlp(w) => s.push_str(&format!("mixop\t{i}\tmlp\t{w}\n")),
            OpChoice::Zero => s.push_str(&format!("mixop\t{i}\tzero\n")),
        }
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_selection(path: &Path) -> Result<Selection> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SELECTION_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "bad architecture file header".into(),
            })
        }
    }
    let mut feature_ids = Vec::new();
    let mut operators = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        match cols.as_slice() {
            ["features", ids] => {
                for part in ids.split(',').filter(|p| !p.is_empty()) {
                    feature_ids.push(part.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad feature id {part:?}"),
                    })?);
                }
            }
            ["mixop", _, "zero"] => operators.push(OpChoice::Zero),
            ["mixop", _, "mlp", w] => operators.push(OpChoice::Mlp(w.parse().map_err(|_| {
                Error::Parse {
                    line: lineno,
                    msg: format!("bad width {w:?}"),
                }
            })?)),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("bad architecture line {line:?}"),
                })
            }
        }
    }
    Ok(Selection {
        feature_ids,
        operators,
    })
}
