//! The joint optimization driver: Loss1 (feature masks) + Loss2 (architecture
//! and pre-ranking weights) minimized together on shared batches, followed by
//! derivation, from-scratch retraining, and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSpec};
use crate::error::{Error, Result};
use crate::eval::{auc, recall_alignment, QueryGroup};
use crate::graph::{Graph, NodeId, Tensor};
use crate::latency::{
    expected_arch_latency_node, expected_feature_latency, expected_feature_latency_node,
    ConcurrencyParams, LatencyTable,
};
use crate::optim::{apply_adagrad, Binder, ParamStore};
use crate::supernet::{
    alpha_param, derive_architecture, init_supernet_params, strengths_of, supernet_forward,
    Selection, SupernetConfig,
};
use crate::teacher::{
    sample_masks, theta_values, warmup, BatchIter, MaskMode, Teacher, TeacherConfig, MASK_PHI,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Teacher warmup steps (S).
    pub warmup_steps: usize,
    pub search_steps: usize,
    pub retrain_steps: usize,
    pub batch_size: usize,
    /// Concurrency overheads and the λ / λ1 / λ2 loss weights.
    #[serde(rename = "concurrency")]
    pub cp: ConcurrencyParams,
    pub top_n_features: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Detach the masked embedding before the supernet, so Loss2 cannot move
    /// the mask logits.
    pub gradient_block: bool,
    /// Compute the KD target r(x) through the sampled feature mask instead of
    /// the unmasked forward.
    pub teacher_masked_kd: bool,
    /// Teacher-alignment recall parameters, clamped to the query-group size.
    pub recall_k: usize,
    pub recall_m: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            warmup_steps: 1500,
            search_steps: 800,
            retrain_steps: 1200,
            batch_size: 50,
            cp: ConcurrencyParams::default(),
            top_n_features: 10,
            learning_rate: 0.01,
            seed: 0,
            gradient_block: true,
            teacher_masked_kd: false,
            recall_k: 10,
            recall_m: 20,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.cp.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.top_n_features == 0 {
            return Err(Error::InvalidParameter(
                "top_n_features must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.recall_k == 0 || self.recall_k > self.recall_m {
            return Err(Error::InvalidParameter(format!(
                "recall needs 1 <= k <= m, got k={} m={}",
                self.recall_k, self.recall_m
            )));
        }
        Ok(())
    }
}

/// Feature-selection loss: BCE of the mask-gated teacher plus the weighted
/// expected feature latency.
pub fn loss1_node(
    g: &mut Graph,
    masked_logits: NodeId,
    labels: &[f64],
    theta: NodeId,
    specs: &[FeatureSpec],
    cp: &ConcurrencyParams,
) -> Result<NodeId> {
    let bce = g.bce_with_logits_mean(masked_logits, labels)?;
    let lat = expected_feature_latency_node(g, theta, specs, cp);
    let lat = g.scale(lat, cp.lambda);
    g.add(bce, lat)
}

/// Architecture-selection loss: supervised BCE, squared click-probability
/// distance to the teacher, and the weighted expected architecture latency.
pub fn loss2_node(
    g: &mut Graph,
    pre_logits: NodeId,
    teacher_logits: NodeId,
    labels: &[f64],
    arch_latency: NodeId,
    cp: &ConcurrencyParams,
) -> Result<NodeId> {
    let bce = g.bce_with_logits_mean(pre_logits, labels)?;
    let bce = g.scale(bce, 1.0 - cp.lambda1);
    let sp = g.sigmoid(pre_logits);
    let sr = g.sigmoid(teacher_logits);
    let kd = g.sq_diff_mean(sr, sp)?;
    let kd = g.scale(kd, cp.lambda1);
    let lat = g.scale(arch_latency, cp.lambda2);
    let sum = g.add(bce, kd)?;
    g.add(sum, lat)
}

#[derive(Clone, Debug)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub loss: f64,
    pub theta: Vec<f64>,
    pub strengths: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub selection: Selection,
    /// Final mask probabilities, one per feature.
    pub theta: Vec<f64>,
    /// Final softmax strengths, one row per Mixop.
    pub strengths: Vec<Vec<f64>>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub derived: Teacher,
    pub derived_store: ParamStore,
    /// Teacher + mask + supernet parameters as they stood after the search.
    pub search_store: ParamStore,
    pub retrain_auc: f64,
    pub teacher_auc: f64,
    pub recall: f64,
    /// Expected feature latency of the hard-selected set (θ = selection
    /// indicator).
    pub feature_latency_ms: f64,
    /// Summed table latency of the derived chain, with the supernet's input
    /// width as the cost model's entry width.
    pub arch_latency_ms: f64,
}

/// Hard-selection latencies of a derived architecture under the search's own
/// cost model.
pub fn derived_latencies(
    selection: &Selection,
    specs: &[FeatureSpec],
    cp: &ConcurrencyParams,
    table: &LatencyTable,
    input_width: usize,
) -> Result<(f64, f64)> {
    let theta: Vec<f64> = (0..specs.len())
        .map(|i| f64::from(selection.feature_ids.contains(&i)))
        .collect();
    let feat = expected_feature_latency(&theta, specs, cp);
    let mut arch = 0.0;
    let mut prev = input_width;
    for w in selection.layer_widths() {
        arch += table.get(prev, w)?;
        prev = w;
    }
    Ok((feat, arch))
}

/// Train a derived model from scratch with plain BCE on the train split and
/// report its validation AUC.
pub fn retrain(
    model: &Teacher,
    store: &mut ParamStore,
    train: &Dataset,
    val: &Dataset,
    steps: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    warmup(model, store, train, steps, batch_size, lr, seed)?;
    let scores = model.scores(store, val, MaskMode::None)?;
    let labels: Vec<u8> = val.examples.iter().map(|e| e.label).collect();
    auc(&scores, &labels)
}

/// Per-query score groups for recall, preserving example order.
pub fn query_groups(val: &Dataset, pre: &[f64], teacher: &[f64]) -> Vec<QueryGroup> {
    let mut groups: Vec<QueryGroup> = Vec::new();
    for (i, e) in val.examples.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if g.query_id == e.query_id => {
                g.pre_scores.push(pre[i]);
                g.teacher_scores.push(teacher[i]);
                g.labels.push(e.label);
            }
            _ => groups.push(QueryGroup {
                query_id: e.query_id,
                pre_scores: vec![pre[i]],
                teacher_scores: vec![teacher[i]],
                labels: vec![e.label],
            }),
        }
    }
    groups
}

/// The whole pipeline: warmup, joint search, derivation, retraining, and
/// evaluation. Deterministic given (dataset, configs, seed).
pub fn run_search(
    dataset: &Dataset,
    teacher_cfg: &TeacherConfig,
    sn_cfg: &SupernetConfig,
    cfg: &SearchConfig,
    table: &LatencyTable,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    sn_cfg.validate()?;
    let (train, val) = dataset.split(0.8);
    let input_width = dataset.input_width();
    let cp = &cfg.cp;

    let teacher = Teacher::new(dataset.features.clone(), teacher_cfg.clone());
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    teacher.init_params(&mut store, &mut rng);
    init_supernet_params(sn_cfg, input_width, &mut store, &mut rng);
    warmup(
        &teacher,
        &mut store,
        &train,
        cfg.warmup_steps,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.seed.wrapping_add(1),
    )?;

    let mut iter = BatchIter::new(&train, cfg.batch_size, cfg.seed.wrapping_add(2));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let sample_every = (cfg.search_steps / 64).max(1);
    let mut trajectory = Vec::new();
    for step in 0..cfg.search_steps {
        let batch = iter.next_batch();
        let theta = theta_values(&store);
        let gates = sample_masks(&theta, &mut mask_rng);

        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let input = teacher.masked_input(&mut g, &mut binder, &batch, MaskMode::Sampled(&gates))?;
        let t_logits = teacher.logits_from_input(&mut g, &mut binder, input)?;
        let phi = binder.bind(&mut g, MASK_PHI);
        let theta_node = g.sigmoid(phi);
        let l1 = loss1_node(&mut g, t_logits, &batch.labels, theta_node, &teacher.features, cp)?;

        let sn_input = if cfg.gradient_block {
            g.detach(input)
        } else {
            input
        };
        let r = if cfg.teacher_masked_kd {
            let r_input = g.detach(input);
            teacher.logits_from_input(&mut g, &mut binder, r_input)?
        } else {
            teacher.forward_unmasked(&mut g, &mut binder, &batch)?
        };
        let alphas: Vec<NodeId> = (0..sn_cfg.num_mixops)
            .map(|i| binder.bind(&mut g, &alpha_param(i)))
            .collect();
        let p = supernet_forward(&mut g, &mut binder, sn_cfg, sn_input, &alphas)?;
        let arch_lat = expected_arch_latency_node(&mut g, sn_cfg, table, input_width, &alphas)?;
        let l2 = loss2_node(&mut g, p, r, &batch.labels, arch_lat, cp)?;

        let loss = g.add(l1, l2)?;
        let loss_v = g.value(loss).item();
        if !loss_v.is_finite() {
            return Err(Error::Diverged { step });
        }
        g.backward(loss);
        let bindings = binder.bindings();
        apply_adagrad(&mut store, &g, &bindings, cfg.learning_rate);

        if step % sample_every == 0 || step + 1 == cfg.search_steps {
            trajectory.push(TrajectoryPoint {
                step,
                loss: loss_v,
                theta: theta_values(&store),
                strengths: (0..sn_cfg.num_mixops)
                    .map(|i| strengths_of(store.get(&alpha_param(i))))
                    .collect(),
            });
        }
    }

    let theta = theta_values(&store);
    let alphas: Vec<Tensor> = (0..sn_cfg.num_mixops)
        .map(|i| store.get(&alpha_param(i)).clone())
        .collect();
    let strengths: Vec<Vec<f64>> = alphas.iter().map(strengths_of).collect();
    let selection = derive_architecture(sn_cfg, &alphas, &theta, cfg.top_n_features)?;
    let (feature_latency_ms, arch_latency_ms) =
        derived_latencies(&selection, &dataset.features, cp, table, input_width)?;

    let derived_specs: Vec<FeatureSpec> = dataset
        .features
        .iter()
        .filter(|f| selection.feature_ids.contains(&f.id))
        .cloned()
        .collect();
    let derived = Teacher::new(
        derived_specs,
        TeacherConfig {
            tower: selection.layer_widths(),
        },
    );
    let mut derived_store = ParamStore::new();
    let mut derived_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
    derived.init_params(&mut derived_store, &mut derived_rng);
    let retrain_auc = retrain(
        &derived,
        &mut derived_store,
        &train,
        &val,
        cfg.retrain_steps,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.seed.wrapping_add(5),
    )?;

    let teacher_scores = teacher.scores(&store, &val, MaskMode::None)?;
    let labels: Vec<u8> = val.examples.iter().map(|e| e.label).collect();
    let teacher_auc = auc(&teacher_scores, &labels)?;
    let pre_scores = derived.scores(&derived_store, &val, MaskMode::None)?;
    let groups = query_groups(&val, &pre_scores, &teacher_scores);
    let smallest = groups.iter().map(|g| g.labels.len()).min().unwrap_or(0);
    let m = cfg.recall_m.min(smallest);
    let k = cfg.recall_k.min(m);
    let recall = recall_alignment(&groups, k, m)?;

    Ok(SearchOutcome {
        selection,
        search_store: store,
        theta,
        strengths,
        trajectory,
        derived,
        derived_store,
        retrain_auc,
        teacher_auc,
        recall,
        feature_latency_ms,
        arch_latency_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};
    use crate::graph::sigmoid;
    use crate::latency::synthetic_latency_table;
    use crate::supernet::OpChoice;
    use crate::teacher::Batch;
    use crate::data::Example;

    fn small_spec(seed: u64) -> DatasetSpec {
        DatasetSpec {
            num_features: 8,
            num_informative: 4,
            num_queries: 60,
            items_per_query: 20,
            vocab_size: 20,
            seed,
            ..DatasetSpec::default()
        }
    }

    fn small_sn() -> SupernetConfig {
        SupernetConfig {
            num_mixops: 2,
            unit_choices: vec![16, 8],
            include_zero: true,
        }
    }

    fn small_cfg(seed: u64) -> SearchConfig {
        SearchConfig {
            warmup_steps: 150,
            search_steps: 80,
            retrain_steps: 150,
            top_n_features: 4,
            seed,
            recall_k: 5,
            recall_m: 10,
            ..SearchConfig::default()
        }
    }

    fn setup(seed: u64) -> (Dataset, Teacher, ParamStore, SupernetConfig) {
        let (ds, _) = generate(&small_spec(seed)).unwrap();
        let teacher = Teacher::new(ds.features.clone(), TeacherConfig { tower: vec![16, 8] });
        let sn = small_sn();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        teacher.init_params(&mut store, &mut rng);
        init_supernet_params(&sn, ds.input_width(), &mut store, &mut rng);
        (ds, teacher, store, sn)
    }

    fn batch_of(ds: &Dataset, n: usize) -> Batch {
        let refs: Vec<&Example> = ds.examples.iter().take(n).collect();
        Batch::from_examples(ds.num_features(), &refs)
    }

    #[test]
    fn loss1_with_zero_lambda_is_pure_bce() {
        let (ds, teacher, store, _) = setup(0);
        let batch = batch_of(&ds, 16);
        let gates = vec![1.0; teacher.num_features()];
        let cp = ConcurrencyParams {
            lambda: 0.0,
            ..ConcurrencyParams::default()
        };

        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let logits = teacher.forward_masked(&mut g, &mut binder, &batch, &gates).unwrap();
        let phi = binder.bind(&mut g, MASK_PHI);
        let theta = g.sigmoid(phi);
        let l1 = loss1_node(&mut g, logits, &batch.labels, theta, &teacher.features, &cp).unwrap();
        let bce = g.bce_with_logits_mean(logits, &batch.labels).unwrap();
        assert_eq!(g.value(l1).item(), g.value(bce).item());
    }

    #[test]
    fn loss2_matches_hand_computed_three_term_sum() {
        let cp = ConcurrencyParams {
            lambda1: 0.3,
            lambda2: 0.2,
            ..ConcurrencyParams::default()
        };
        let p = vec![0.4, -1.2, 0.9];
        let r = vec![0.1, -0.5, 2.0];
        let labels = vec![1.0, 0.0, 1.0];
        let lat = 2.5;

        let mut g = Graph::new();
        let pn = g.constant(Tensor::new(vec![3, 1], p.clone()));
        let rn = g.constant(Tensor::new(vec![3, 1], r.clone()));
        let latn = g.constant(Tensor::scalar(lat));
        let l2 = loss2_node(&mut g, pn, rn, &labels, latn, &cp).unwrap();

        let bce: f64 = p
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / 3.0;
        let kd: f64 = p
            .iter()
            .zip(&r)
            .map(|(&zp, &zr)| (sigmoid(zr) - sigmoid(zp)).powi(2))
            .sum::<f64>()
            / 3.0;
        let expect = 0.7 * bce + 0.3 * kd + 0.2 * lat;
        assert!((g.value(l2).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn loss2_with_full_kd_and_matching_logits_leaves_latency_only() {
        let cp = ConcurrencyParams {
            lambda1: 1.0,
            lambda2: 0.2,
            ..ConcurrencyParams::default()
        };
        let mut g = Graph::new();
        let pn = g.constant(Tensor::new(vec![2, 1], vec![0.4, -1.2]));
        let latn = g.constant(Tensor::scalar(3.0));
        let l2 = loss2_node(&mut g, pn, pn, &[1.0, 0.0], latn, &cp).unwrap();
        assert!((g.value(l2).item() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn loss2_with_zero_kd_is_supervised_plus_latency() {
        let cp = ConcurrencyParams {
            lambda1: 0.0,
            lambda2: 0.5,
            ..ConcurrencyParams::default()
        };
        let labels = vec![1.0, 0.0];
        let mut g = Graph::new();
        let pn = g.constant(Tensor::new(vec![2, 1], vec![0.4, -1.2]));
        let rn = g.constant(Tensor::new(vec![2, 1], vec![9.0, -9.0]));
        let latn = g.constant(Tensor::scalar(2.0));
        let l2 = loss2_node(&mut g, pn, rn, &labels, latn, &cp).unwrap();
        let bce = g.bce_with_logits_mean(pn, &labels).unwrap();
        let expect = g.value(bce).item() + 1.0;
        assert!((g.value(l2).item() - expect).abs() < 1e-12);
    }

    /// Build the combined step graph and return (graph, binder-ish grads).
    fn combined_grads(
        ds: &Dataset,
        teacher: &Teacher,
        store: &ParamStore,
        sn: &SupernetConfig,
        gradient_block: bool,
        parts: &str,
    ) -> Vec<(String, Tensor)> {
        let batch = batch_of(ds, 16);
        let gates = vec![1.0; teacher.num_features()];
        let cp = ConcurrencyParams::default();
        let table = synthetic_latency_table(sn, ds.input_width());

        let mut g = Graph::new();
        let mut binder = Binder::new(store);
        let input = teacher
            .masked_input(&mut g, &mut binder, &batch, MaskMode::Sampled(&gates))
            .unwrap();
        let t_logits = teacher.logits_from_input(&mut g, &mut binder, input).unwrap();
        let phi = binder.bind(&mut g, MASK_PHI);
        let theta = g.sigmoid(phi);
        let l1 = loss1_node(&mut g, t_logits, &batch.labels, theta, &teacher.features, &cp).unwrap();

        let sn_input = if gradient_block { g.detach(input) } else { input };
        let r = teacher.forward_unmasked(&mut g, &mut binder, &batch).unwrap();
        let alphas: Vec<NodeId> = (0..sn.num_mixops)
            .map(|i| binder.bind(&mut g, &alpha_param(i)))
            .collect();
        let p = supernet_forward(&mut g, &mut binder, sn, sn_input, &alphas).unwrap();
        let lat = expected_arch_latency_node(&mut g, sn, &table, ds.input_width(), &alphas).unwrap();
        let l2 = loss2_node(&mut g, p, r, &batch.labels, lat, &cp).unwrap();

        let loss = match parts {
            "l1" => l1,
            "l2" => l2,
            _ => g.add(l1, l2).unwrap(),
        };
        g.backward(loss);
        binder.grads(&g)
    }

    fn grad_for<'a>(grads: &'a [(String, Tensor)], name: &str) -> &'a Tensor {
        &grads.iter().find(|(n, _)| n == name).unwrap().1
    }

    #[test]
    fn gradient_block_contract_holds() {
        let (ds, teacher, mut store, sn) = setup(1);
        warmup(&teacher, &mut store, &ds, 30, 16, 0.01, 0).unwrap();

        let combined = combined_grads(&ds, &teacher, &store, &sn, true, "both");
        let only1 = combined_grads(&ds, &teacher, &store, &sn, true, "l1");
        let only2 = combined_grads(&ds, &teacher, &store, &sn, true, "l2");

        // teacher weights and embeddings: exactly zero under the combined loss
        for name in ["t.out.w", "t.l0.w", "t.emb.0"] {
            assert!(grad_for(&combined, name).data.iter().all(|&v| v == 0.0));
        }
        // phi moves only through Loss1
        let phi_c = grad_for(&combined, MASK_PHI);
        let phi_1 = grad_for(&only1, MASK_PHI);
        assert_eq!(phi_c.data, phi_1.data);
        assert!(grad_for(&only2, MASK_PHI).data.iter().all(|&v| v == 0.0));
        // alpha and supernet weights move only through Loss2
        for i in 0..sn.num_mixops {
            let a = alpha_param(i);
            assert_eq!(grad_for(&combined, &a).data, grad_for(&only2, &a).data);
            assert!(grad_for(&only1, &a).data.iter().all(|&v| v == 0.0));
        }
        assert_eq!(
            grad_for(&combined, "sn.m0.s0.k0.w").data,
            grad_for(&only2, "sn.m0.s0.k0.w").data
        );
    }

    #[test]
    fn without_gradient_block_loss2_reaches_phi() {
        let (ds, teacher, mut store, sn) = setup(2);
        warmup(&teacher, &mut store, &ds, 30, 16, 0.01, 0).unwrap();
        let only2 = combined_grads(&ds, &teacher, &store, &sn, false, "l2");
        assert!(grad_for(&only2, MASK_PHI).data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn huge_lambda_drives_theta_to_zero() {
        let (ds, teacher, mut store, _) = setup(3);
        warmup(&teacher, &mut store, &ds, 30, 16, 0.01, 0).unwrap();
        let cp = ConcurrencyParams {
            lambda: 1e3,
            ..ConcurrencyParams::default()
        };
        let mut iter = BatchIter::new(&ds, 50, 0);
        let mut mask_rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let batch = iter.next_batch();
            let theta = theta_values(&store);
            let gates = sample_masks(&theta, &mut mask_rng);
            let mut g = Graph::new();
            let mut binder = Binder::new(&store);
            let logits = teacher.forward_masked(&mut g, &mut binder, &batch, &gates).unwrap();
            let phi = binder.bind(&mut g, MASK_PHI);
            let theta_node = g.sigmoid(phi);
            let l1 =
                loss1_node(&mut g, logits, &batch.labels, theta_node, &teacher.features, &cp)
                    .unwrap();
            g.backward(l1);
            let bindings = binder.bindings();
            // Adagrad movement scales with lr·sqrt(steps); 0.2 gives the mask
            // logits room to saturate within 500 steps
            apply_adagrad(&mut store, &g, &bindings, 0.2);
        }
        let theta = theta_values(&store);
        let mean = theta.iter().sum::<f64>() / theta.len() as f64;
        assert!(mean < 0.05, "mean theta = {mean}");
    }

    #[test]
    fn zero_search_steps_derives_the_uniform_start() {
        let (ds, _) = generate(&small_spec(4)).unwrap();
        let sn = small_sn();
        let cfg = SearchConfig {
            search_steps: 0,
            ..small_cfg(4)
        };
        let table = synthetic_latency_table(&sn, ds.input_width());
        let out = run_search(
            &ds,
            &TeacherConfig { tower: vec![16, 8] },
            &sn,
            &cfg,
            &table,
        )
        .unwrap();
        // theta all 0.5 -> ties break to the lowest ids; uniform strengths ->
        // first operator of every Mixop
        assert_eq!(out.selection.feature_ids, vec![0, 1, 2, 3]);
        assert_eq!(
            out.selection.operators,
            vec![OpChoice::Mlp(16), OpChoice::Mlp(16)]
        );
        assert!(out.theta.iter().all(|&t| (t - 0.5).abs() < 1e-12));
        assert!(out.trajectory.is_empty());
        assert!(out.retrain_auc > 0.0);
    }

    #[test]
    fn search_is_deterministic() {
        let (ds, _) = generate(&small_spec(5)).unwrap();
        let sn = small_sn();
        let cfg = small_cfg(5);
        let table = synthetic_latency_table(&sn, ds.input_width());
        let tc = TeacherConfig { tower: vec![16, 8] };
        let a = run_search(&ds, &tc, &sn, &cfg, &table).unwrap();
        let b = run_search(&ds, &tc, &sn, &cfg, &table).unwrap();
        assert_eq!(a.selection, b.selection);
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.strengths, b.strengths);
        assert_eq!(a.retrain_auc, b.retrain_auc);
        assert_eq!(a.recall, b.recall);
        assert_eq!(a.feature_latency_ms, b.feature_latency_ms);
        assert_eq!(a.arch_latency_ms, b.arch_latency_ms);
    }

    #[test]
    fn search_end_to_end_beats_chance() {
        let (ds, _) = generate(&small_spec(6)).unwrap();
        let sn = small_sn();
        let cfg = SearchConfig {
            warmup_steps: 400,
            search_steps: 200,
            retrain_steps: 400,
            ..small_cfg(6)
        };
        let table = synthetic_latency_table(&sn, ds.input_width());
        let out = run_search(
            &ds,
            &TeacherConfig { tower: vec![32, 16] },
            &sn,
            &cfg,
            &table,
        )
        .unwrap();
        assert!(out.retrain_auc > 0.55, "retrain auc = {}", out.retrain_auc);
        assert!(out.recall > 0.0);
        assert!((0.0..=1.0).contains(&out.recall));
        assert_eq!(out.selection.feature_ids.len(), 4);
    }

    #[test]
    fn diverging_search_reports_the_step() {
        let (ds, _) = generate(&small_spec(7)).unwrap();
        let sn = small_sn();
        let cfg = SearchConfig {
            learning_rate: 1e154,
            ..small_cfg(7)
        };
        let table = synthetic_latency_table(&sn, ds.input_width());
        match run_search(
            &ds,
            &TeacherConfig { tower: vec![16, 8] },
            &sn,
            &cfg,
            &table,
        ) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = SearchConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = SearchConfig::default();
        cfg.cp.lambda1 = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SearchConfig::default();
        cfg.recall_k = 30; // above recall_m
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn retrain_is_deterministic() {
        let (ds, _) = generate(&small_spec(8)).unwrap();
        let (train, val) = ds.split(0.8);
        let model = Teacher::new(ds.features.clone(), TeacherConfig { tower: vec![8] });
        let run = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            model.init_params(&mut store, &mut rng);
            retrain(&model, &mut store, &train, &val, 100, 50, 0.01, 10).unwrap()
        };
        assert_eq!(run(), run());
    }
}
