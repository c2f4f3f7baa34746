//! Differentiable latency models: expected feature retrieval latency with
//! per-group concurrency terms, and expected architecture latency via a
//! recursion over Mixops, checked against a brute-force enumeration oracle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureGroup, FeatureSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Tensor};
use crate::supernet::{OpChoice, SupernetConfig};

/// Profiled milliseconds per (input_dim, output_dim) MLP shape. The zero
/// operator costs 0 and never consults the table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyTable {
    entries: BTreeMap<(usize, usize), f64>,
}

impl LatencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, in_dim: usize, out_dim: usize, ms: f64) {
        assert!(ms >= 0.0, "negative latency for ({in_dim}, {out_dim})");
        self.entries.insert((in_dim, out_dim), ms);
    }

    pub fn get(&self, in_dim: usize, out_dim: usize) -> Result<f64> {
        self.entries
            .get(&(in_dim, out_dim))
            .copied()
            .ok_or(Error::MissingLatencyEntry { in_dim, out_dim })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &f64)> {
        self.entries.iter()
    }
}

/// Shapes the supernet will look up: every source width (input or unit) into
/// every unit width.
pub fn required_shapes(cfg: &SupernetConfig, input_width: usize) -> Vec<(usize, usize)> {
    let mut sources = vec![input_width];
    sources.extend_from_slice(&cfg.unit_choices);
    sources.sort_unstable();
    sources.dedup();
    let mut out = Vec::new();
    for &s in &sources {
        for &t in &cfg.unit_choices {
            out.push((s, t));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// FLOP-proxy table (T = 1e-6 · in · out ms) for runs that must not depend on
/// the machine.
pub fn synthetic_latency_table(cfg: &SupernetConfig, input_width: usize) -> LatencyTable {
    let mut table = LatencyTable::new();
    for (a, b) in required_shapes(cfg, input_width) {
        table.insert(a, b, 1e-6 * a as f64 * b as f64);
    }
    table
}

/// Median wall-clock of each required MLP shape's forward on this machine.
pub fn profile_latency_table(
    cfg: &SupernetConfig,
    input_width: usize,
    repetitions: usize,
) -> Result<LatencyTable> {
    if repetitions < 10 {
        return Err(Error::InvalidParameter(format!(
            "profiling needs at least 10 repetitions, got {repetitions}"
        )));
    }
    let mut table = LatencyTable::new();
    for (a, b) in required_shapes(cfg, input_width) {
        table.insert(a, b, profile_shape(a, b, repetitions));
    }
    Ok(table)
}

fn profile_shape(in_dim: usize, out_dim: usize, repetitions: usize) -> f64 {
    const BATCH: usize = 32;
    let x = Tensor::new(vec![BATCH, in_dim], vec![0.5; BATCH * in_dim]);
    let w = Tensor::new(vec![in_dim, out_dim], vec![0.5; in_dim * out_dim]);
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let wn = g.constant(w.clone());
        let start = Instant::now();
        let out = g.matmul(xn, wn).expect("profiled shapes conform");
        std::hint::black_box(g.value(out));
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

pub fn write_latency_table(path: &Path, table: &LatencyTable) -> Result<()> {
    let mut s = String::new();
    for (&(a, b), &ms) in table.iter() {
        s.push_str(&format!("{a}\t{b}\t{ms}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_latency_table(path: &Path) -> Result<LatencyTable> {
    let text = fs::read_to_string(path)?;
    let mut table = LatencyTable::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        match cols.as_slice() {
            [a, b, ms] => {
                let a: usize = a
                    .parse()
                    .map_err(|_| parse_err(format!("bad input dim {a:?}")))?;
                let b: usize = b
                    .parse()
                    .map_err(|_| parse_err(format!("bad output dim {b:?}")))?;
                let ms: f64 = ms
                    .parse()
                    .map_err(|_| parse_err(format!("bad latency {ms:?}")))?;
                if ms < 0.0 {
                    return Err(parse_err(format!("negative latency {ms}")));
                }
                table.insert(a, b, ms);
            }
            _ => return Err(parse_err(format!("expected 3 columns, got {}", cols.len()))),
        }
    }
    Ok(table)
}

/// Concurrency overheads and loss weights shared by the search losses.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ConcurrencyParams {
    /// F1 per-feature overhead (ms per expected selected feature).
    pub beta: f64,
    /// F2 per-feature overhead.
    pub gamma: f64,
    /// Loss1 feature-latency weight.
    pub lambda: f64,
    /// KD weight in Loss2.
    pub lambda1: f64,
    /// Loss2 architecture-latency weight.
    pub lambda2: f64,
    /// Count term uses the expected selected count Σθ when true; the constant
    /// group size when false.
    pub weighted_count: bool,
}

impl Default for ConcurrencyParams {
    fn default() -> Self {
        ConcurrencyParams {
            beta: 0.1,
            gamma: 0.1,
            lambda: 0.001,
            lambda1: 0.5,
            lambda2: 0.1,
            weighted_count: true,
        }
    }
}

impl ConcurrencyParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(Error::InvalidParameter(format!(
                "lambda1 must lie in [0,1], got {}",
                self.lambda1
            )));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("lambda2", self.lambda2),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Expected retrieval latency of one feature: θ_i · L_i.
pub fn expected_feature_latency_i(theta_i: f64, latency_ms: f64) -> f64 {
    theta_i * latency_ms
}

fn group_latency_node(
    g: &mut Graph,
    theta: NodeId,
    members: &[(usize, f64)],
    overhead: f64,
    weighted_count: bool,
) -> NodeId {
    if members.is_empty() {
        return g.zero_scalar();
    }
    let mut max_node: Option<NodeId> = None;
    let mut count_node: Option<NodeId> = None;
    for &(i, l) in members {
        let th = g.index(theta, i);
        let term = g.scale(th, l);
        max_node = Some(match max_node {
            None => term,
            Some(m) => g.max_pair(m, term),
        });
        count_node = Some(match count_node {
            None => th,
            Some(c) => g.add(c, th).expect("scalars conform"),
        });
    }
    let max_node = max_node.unwrap();
    let count = if weighted_count {
        g.scale(count_node.unwrap(), overhead)
    } else {
        g.constant(Tensor::scalar(overhead * members.len() as f64))
    };
    g.add(max_node, count).expect("scalars conform")
}

/// Eq.-4-style grouped feature latency as a graph node:
/// max over the F1 and F2 branches of (max θL + overhead · count). The F1
/// branch wins ties so subgradients are deterministic.
pub fn expected_feature_latency_node(
    g: &mut Graph,
    theta: NodeId,
    specs: &[FeatureSpec],
    cp: &ConcurrencyParams,
) -> NodeId {
    let pick = |group: FeatureGroup| -> Vec<(usize, f64)> {
        specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.group == group)
            .map(|(i, s)| (i, s.retrieval_latency_ms))
            .collect()
    };
    let f1 = pick(FeatureGroup::F1);
    let f2 = pick(FeatureGroup::F2);
    let b1 = group_latency_node(g, theta, &f1, cp.beta, cp.weighted_count);
    let b2 = group_latency_node(g, theta, &f2, cp.gamma, cp.weighted_count);
    g.max_pair(b1, b2)
}

/// Plain-value twin of `expected_feature_latency_node`.
pub fn expected_feature_latency(theta: &[f64], specs: &[FeatureSpec], cp: &ConcurrencyParams) -> f64 {
    assert_eq!(theta.len(), specs.len());
    let mut g = Graph::new();
    let t = g.constant(Tensor::new(vec![theta.len()], theta.to_vec()));
    let node = expected_feature_latency_node(&mut g, t, specs, cp);
    g.value(node).item()
}

/// Expected architecture latency as a graph node, by recursion over Mixops.
/// `alpha_rows[i]` are the strengths of Mixop i, mirroring `supernet_forward`:
/// row r weighs Mixop r's paths when Mixop r+1 (or the final head) consumes
/// them. The zero path preserves its source's expected latency and adds 0.
pub fn expected_arch_latency_node(
    g: &mut Graph,
    cfg: &SupernetConfig,
    table: &LatencyTable,
    input_width: usize,
    alpha_rows: &[NodeId],
) -> Result<NodeId> {
    cfg.validate()?;
    assert_eq!(alpha_rows.len(), cfg.num_mixops);
    let ops = cfg.ops();
    let widths: Vec<usize> = ops.iter().map(|&o| cfg.path_width(o, input_width)).collect();

    // Mixop 0: single input source, strength 1.
    let mut e: Vec<NodeId> = Vec::with_capacity(ops.len());
    for &op in &ops {
        let node = match op {
            OpChoice::Mlp(w) => {
                let t = table.get(input_width, w)?;
                g.constant(Tensor::scalar(t))
            }
            OpChoice::Zero => g.zero_scalar(),
        };
        e.push(node);
    }

    for layer in 1..cfg.num_mixops {
        let strengths = g.softmax(alpha_rows[layer - 1])?;
        let mut next = Vec::with_capacity(ops.len());
        for &op in &ops {
            match op {
                OpChoice::Mlp(w) => {
                    let mut acc: Option<NodeId> = None;
                    for (j, &ej) in e.iter().enumerate() {
                        let t = table.get(widths[j], w)?;
                        let tn = g.constant(Tensor::scalar(t));
                        let sum = g.add(ej, tn)?;
                        let p = g.index(strengths, j);
                        let term = g.scalar_mul(sum, p);
                        acc = Some(match acc {
                            None => term,
                            Some(a) => g.add(a, term)?,
                        });
                    }
                    next.push(acc.unwrap());
                }
                OpChoice::Zero => {
                    let compat: Vec<usize> = (0..ops.len())
                        .filter(|&j| widths[j] == input_width)
                        .collect();
                    if compat.len() == 1 {
                        next.push(e[compat[0]]);
                    } else {
                        let picked: Vec<NodeId> = compat
                            .iter()
                            .map(|&j| g.index(alpha_rows[layer - 1], j))
                            .collect();
                        let stacked = g.concat_cols(&picked)?;
                        let renorm = g.softmax(stacked)?;
                        let mut acc: Option<NodeId> = None;
                        for (ci, &j) in compat.iter().enumerate() {
                            let p = g.index(renorm, ci);
                            let term = g.scalar_mul(e[j], p);
                            acc = Some(match acc {
                                None => term,
                                Some(a) => g.add(a, term)?,
                            });
                        }
                        next.push(acc.unwrap());
                    }
                }
            }
        }
        e = next;
    }

    let strengths = g.softmax(alpha_rows[cfg.num_mixops - 1])?;
    let mut total: Option<NodeId> = None;
    for (k, &ek) in e.iter().enumerate() {
        let p = g.index(strengths, k);
        let term = g.scalar_mul(ek, p);
        total = Some(match total {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(total.unwrap())
}

/// Plain-value twin of `expected_arch_latency_node`.
pub fn expected_arch_latency(
    cfg: &SupernetConfig,
    table: &LatencyTable,
    input_width: usize,
    alpha_rows: &[Tensor],
) -> Result<f64> {
    let mut g = Graph::new();
    let nodes: Vec<NodeId> = alpha_rows.iter().map(|t| g.constant(t.clone())).collect();
    let node = expected_arch_latency_node(&mut g, cfg, table, input_width, &nodes)?;
    Ok(g.value(node).item())
}

pub const ENUMERATION_BOUND: u64 = 1_000_000;

/// Exact expectation by enumerating every operator assignment, one operator
/// per Mixop. Edges into a zero operator carry renormalized weight over
/// width-compatible sources, matching the recursion.
pub fn enumerate_arch_latency(
    cfg: &SupernetConfig,
    table: &LatencyTable,
    input_width: usize,
    alpha_rows: &[Tensor],
) -> Result<f64> {
    cfg.validate()?;
    assert_eq!(alpha_rows.len(), cfg.num_mixops);
    let n = cfg.num_ops();
    let size = (n as u64)
        .checked_pow(cfg.num_mixops as u32)
        .unwrap_or(u64::MAX);
    if size > ENUMERATION_BOUND {
        return Err(Error::SpaceTooLarge {
            size,
            bound: ENUMERATION_BOUND,
        });
    }
    let size = size as usize;
    let ops = cfg.ops();
    let widths: Vec<usize> = ops.iter().map(|&o| cfg.path_width(o, input_width)).collect();
    let strengths: Vec<Vec<f64>> = alpha_rows
        .iter()
        .map(crate::supernet::strengths_of)
        .collect();
    let compat: Vec<usize> = (0..n).filter(|&j| widths[j] == input_width).collect();
    let compat_mass = |row: &[f64]| -> f64 { compat.iter().map(|&j| row[j]).sum() };

    let mut total = 0.0;
    let mut assignment = vec![0usize; cfg.num_mixops];
    'outer: for ix in 0..size {
        let mut rem = ix;
        for a in assignment.iter_mut() {
            *a = rem % n;
            rem /= n;
        }
        let mut weight = strengths[cfg.num_mixops - 1][assignment[cfg.num_mixops - 1]];
        let mut cost = match ops[assignment[0]] {
            OpChoice::Mlp(w) => table.get(input_width, w)?,
            OpChoice::Zero => 0.0,
        };
        for layer in 1..cfg.num_mixops {
            let (src, dst) = (assignment[layer - 1], assignment[layer]);
            let row = &strengths[layer - 1];
            match ops[dst] {
                OpChoice::Mlp(w) => {
                    weight *= row[src];
                    cost += table.get(widths[src], w)?;
                }
                OpChoice::Zero => {
                    if !compat.contains(&src) {
                        continue 'outer;
                    }
                    weight *= row[src] / compat_mass(row);
                }
            }
        }
        total += weight * cost;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::grad_check;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn spec(id: usize, group: FeatureGroup, latency: f64) -> FeatureSpec {
        FeatureSpec {
            id,
            name: format!("f{id}"),
            vocab_size: 10,
            embedding_dim: 4,
            group,
            retrieval_latency_ms: latency,
        }
    }

    fn cp(beta: f64, gamma: f64) -> ConcurrencyParams {
        ConcurrencyParams {
            beta,
            gamma,
            ..ConcurrencyParams::default()
        }
    }

    #[test]
    fn per_feature_latency_is_theta_times_l() {
        assert_eq!(expected_feature_latency_i(1.0, 5.0), 5.0);
        assert_eq!(expected_feature_latency_i(0.0, 5.0), 0.0);
        assert!((expected_feature_latency_i(0.3, 7.0) - 2.1).abs() < 1e-12);
        // gradient of θ·L w.r.t. θ is L
        let err = grad_check(
            |g, leaves| {
                let th = g.index(leaves[0], 0);
                Ok(g.scale(th, 7.0))
            },
            &[Tensor::new(vec![1], vec![0.3])],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn all_zero_theta_gives_zero_latency() {
        let specs = vec![
            spec(0, FeatureGroup::F1, 1.0),
            spec(1, FeatureGroup::F2, 4.0),
        ];
        let v = expected_feature_latency(&[0.0, 0.0], &specs, &cp(0.1, 0.1));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn single_f1_feature_matches_closed_form() {
        let specs = vec![spec(0, FeatureGroup::F1, 5.0)];
        let v = expected_feature_latency(&[1.0], &specs, &cp(0.1, 0.1));
        assert!((v - 5.1).abs() < 1e-12);
    }

    #[test]
    fn mixed_four_feature_case_matches_hand_oracle() {
        let specs = vec![
            spec(0, FeatureGroup::F1, 1.5),
            spec(1, FeatureGroup::F1, 0.8),
            spec(2, FeatureGroup::F2, 6.0),
            spec(3, FeatureGroup::F2, 3.0),
        ];
        let theta = [0.9, 0.4, 0.7, 0.2];
        let p = cp(0.1, 0.25);
        // branch 1: max(0.9*1.5, 0.4*0.8) + 0.1*(0.9+0.4)
        let b1 = (0.9 * 1.5_f64).max(0.4 * 0.8) + 0.1 * (0.9 + 0.4);
        // branch 2: max(0.7*6.0, 0.2*3.0) + 0.25*(0.7+0.2)
        let b2 = (0.7 * 6.0_f64).max(0.2 * 3.0) + 0.25 * (0.7 + 0.2);
        let v = expected_feature_latency(&theta, &specs, &p);
        assert!((v - b1.max(b2)).abs() < 1e-12);
    }

    #[test]
    fn constant_count_flag_uses_group_size() {
        let specs = vec![
            spec(0, FeatureGroup::F1, 2.0),
            spec(1, FeatureGroup::F1, 1.0),
        ];
        let params = ConcurrencyParams {
            weighted_count: false,
            ..cp(0.1, 0.1)
        };
        let v = expected_feature_latency(&[0.5, 0.5], &specs, &params);
        assert!((v - (1.0 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn feature_latency_grad_check_away_from_ties() {
        let specs = vec![
            spec(0, FeatureGroup::F1, 1.5),
            spec(1, FeatureGroup::F1, 0.8),
            spec(2, FeatureGroup::F2, 6.0),
            spec(3, FeatureGroup::F2, 3.0),
        ];
        let p = cp(0.1, 0.25);
        let theta = Tensor::new(vec![4], vec![0.9, 0.4, 0.7, 0.2]);
        let err = grad_check(
            |g, leaves| Ok(expected_feature_latency_node(g, leaves[0], &specs, &p)),
            &[theta],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    proptest! {
        #[test]
        fn raising_theta_weakly_raises_feature_latency(
            theta in proptest::collection::vec(0.0..1.0f64, 4),
            ix in 0usize..4,
            bump in 0.0..0.5f64,
        ) {
            let specs = vec![
                spec(0, FeatureGroup::F1, 1.5),
                spec(1, FeatureGroup::F1, 0.8),
                spec(2, FeatureGroup::F2, 6.0),
                spec(3, FeatureGroup::F2, 3.0),
            ];
            let p = cp(0.1, 0.25);
            let before = expected_feature_latency(&theta, &specs, &p);
            let mut bumped = theta.clone();
            bumped[ix] = (bumped[ix] + bump).min(1.0);
            let after = expected_feature_latency(&bumped, &specs, &p);
            prop_assert!(after >= before - 1e-12);
        }
    }

    fn table_for(cfg: &SupernetConfig, input_width: usize, rng: &mut ChaCha8Rng) -> LatencyTable {
        let mut t = LatencyTable::new();
        for (a, b) in required_shapes(cfg, input_width) {
            t.insert(a, b, rng.random_range(0.1..5.0));
        }
        t
    }

    fn random_rows(cfg: &SupernetConfig, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        (0..cfg.num_mixops)
            .map(|_| {
                Tensor::new(
                    vec![cfg.num_ops()],
                    (0..cfg.num_ops()).map(|_| rng.random_range(-2.0..2.0)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn single_mixop_two_paths_is_the_mean() {
        let cfg = SupernetConfig {
            num_mixops: 1,
            unit_choices: vec![8, 4],
            include_zero: false,
        };
        let mut t = LatencyTable::new();
        t.insert(6, 8, 2.0);
        t.insert(6, 4, 4.0);
        let rows = vec![Tensor::zeros(&[2])]; // uniform strengths
        let v = expected_arch_latency(&cfg, &t, 6, &rows).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_alpha_gives_single_path_latency() {
        let cfg = SupernetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = table_for(&cfg, 12, &mut rng);
        let picks = [0usize, 1, 2];
        let rows: Vec<Tensor> = picks
            .iter()
            .map(|&k| {
                let mut v = vec![0.0; cfg.num_ops()];
                v[k] = 60.0;
                Tensor::new(vec![cfg.num_ops()], v)
            })
            .collect();
        let v = expected_arch_latency(&cfg, &t, 12, &rows).unwrap();
        let expect = t.get(12, 64).unwrap() + t.get(64, 32).unwrap() + t.get(32, 16).unwrap();
        assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");
    }

    #[test]
    fn recursion_matches_enumeration_across_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draws = 0;
        for n in 2..=4usize {
            for l in 2..=4usize {
                for include_zero in [false, true] {
                    let units: Vec<usize> = (0..n - usize::from(include_zero))
                        .map(|i| 4 * (i + 1))
                        .collect();
                    if units.is_empty() {
                        continue;
                    }
                    let cfg = SupernetConfig {
                        num_mixops: l,
                        unit_choices: units,
                        include_zero,
                    };
                    for _ in 0..4 {
                        let t = table_for(&cfg, 6, &mut rng);
                        let rows = random_rows(&cfg, &mut rng);
                        let rec = expected_arch_latency(&cfg, &t, 6, &rows).unwrap();
                        let enu = enumerate_arch_latency(&cfg, &t, 6, &rows).unwrap();
                        assert!(
                            (rec - enu).abs() < 1e-9,
                            "n={n} l={l} zero={include_zero}: {rec} vs {enu}"
                        );
                        draws += 1;
                    }
                }
            }
        }
        assert!(draws >= 50, "only {draws} draws");
    }

    #[test]
    fn zero_path_with_matching_unit_width_still_agrees_with_enumeration() {
        // one unit width equals the input width, so the zero operator has two
        // compatible sources and the renormalized mixing kicks in
        let cfg = SupernetConfig {
            num_mixops: 3,
            unit_choices: vec![6, 4],
            include_zero: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t = table_for(&cfg, 6, &mut rng);
            let rows = random_rows(&cfg, &mut rng);
            let rec = expected_arch_latency(&cfg, &t, 6, &rows).unwrap();
            let enu = enumerate_arch_latency(&cfg, &t, 6, &rows).unwrap();
            assert!((rec - enu).abs() < 1e-9, "{rec} vs {enu}");
        }
    }

    #[test]
    fn all_zero_op_space_costs_nothing() {
        let cfg = SupernetConfig {
            num_mixops: 3,
            unit_choices: vec![8],
            include_zero: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = table_for(&cfg, 6, &mut rng);
        let zero_ix = cfg.num_ops() - 1;
        let rows: Vec<Tensor> = (0..3)
            .map(|_| {
                let mut v = vec![-60.0; cfg.num_ops()];
                v[zero_ix] = 60.0;
                Tensor::new(vec![cfg.num_ops()], v)
            })
            .collect();
        let v = expected_arch_latency(&cfg, &t, 6, &rows).unwrap();
        assert!(v.abs() < 1e-9);
        let e = enumerate_arch_latency(&cfg, &t, 6, &rows).unwrap();
        assert!(e.abs() < 1e-9);
    }

    #[test]
    fn enumeration_refuses_oversized_spaces() {
        let cfg = SupernetConfig {
            num_mixops: 10,
            unit_choices: (1..=8).map(|i| i * 2).collect(),
            include_zero: false,
        };
        let t = synthetic_latency_table(&cfg, 6);
        let rows = vec![Tensor::zeros(&[8]); 10];
        match enumerate_arch_latency(&cfg, &t, 6, &rows) {
            Err(Error::SpaceTooLarge { size, bound }) => {
                assert!(size > bound);
                assert_eq!(bound, ENUMERATION_BOUND);
            }
            other => panic!("expected SpaceTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn arch_latency_invariant_to_alpha_shift() {
        let cfg = SupernetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = table_for(&cfg, 12, &mut rng);
        let rows = random_rows(&cfg, &mut rng);
        let shifted: Vec<Tensor> = rows
            .iter()
            .map(|r| {
                Tensor::new(r.shape.clone(), r.data.iter().map(|v| v + 3.7).collect())
            })
            .collect();
        let a = expected_arch_latency(&cfg, &t, 12, &rows).unwrap();
        let b = expected_arch_latency(&cfg, &t, 12, &shifted).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn arch_latency_grad_check() {
        let cfg = SupernetConfig {
            num_mixops: 3,
            unit_choices: vec![8, 4],
            include_zero: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = table_for(&cfg, 6, &mut rng);
        for trial in 0..5 {
            let rows = random_rows(&cfg, &mut rng);
            let err = grad_check(
                |g, leaves| expected_arch_latency_node(g, &cfg, &t, 6, leaves),
                &rows,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: err = {err}");
        }
    }

    #[test]
    fn missing_entry_error_names_the_shape() {
        let cfg = SupernetConfig {
            num_mixops: 1,
            unit_choices: vec![8],
            include_zero: false,
        };
        let t = LatencyTable::new();
        let rows = vec![Tensor::zeros(&[1])];
        match expected_arch_latency(&cfg, &t, 6, &rows) {
            Err(Error::MissingLatencyEntry { in_dim, out_dim }) => {
                assert_eq!((in_dim, out_dim), (6, 8));
            }
            other => panic!("expected MissingLatencyEntry, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_table_follows_flop_proxy() {
        let cfg = SupernetConfig {
            num_mixops: 1,
            unit_choices: vec![100],
            include_zero: false,
        };
        let t = synthetic_latency_table(&cfg, 100);
        assert!((t.get(100, 100).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn table_round_trips_through_file() {
        let cfg = SupernetConfig::default();
        let t = synthetic_latency_table(&cfg, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latency.tsv");
        write_latency_table(&path, &t).unwrap();
        assert_eq!(read_latency_table(&path).unwrap(), t);
    }

    #[test]
    fn profiling_orders_small_below_large() {
        let cfg = SupernetConfig {
            num_mixops: 1,
            unit_choices: vec![64, 512],
            include_zero: false,
        };
        let t = profile_latency_table(&cfg, 64, 15).unwrap();
        assert!(t.get(64, 64).unwrap() < t.get(512, 512).unwrap());
        assert!(profile_latency_table(&cfg, 64, 5).is_err());
    }

    #[test]
    fn concurrency_params_validate_bounds() {
        assert!(ConcurrencyParams::default().validate().is_ok());
        let bad = ConcurrencyParams {
            lambda1: 1.5,
            ..ConcurrencyParams::default()
        };
        assert!(bad.validate().is_err());
        let neg = ConcurrencyParams {
            beta: -0.1,
            ..ConcurrencyParams::default()
        };
        assert!(neg.validate().is_err());
    }
}
