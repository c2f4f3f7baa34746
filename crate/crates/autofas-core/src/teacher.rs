//! The ranking network with stochastic feature masks: embedding tables per
//! feature, a fixed-width MLP tower, and a per-feature Bernoulli gate whose
//! probability is learned through a straight-through estimator.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, FeatureSpec};
use crate::error::{Error, Result};
use crate::eval::AblatableScorer;
use crate::graph::{sigmoid, Graph, NodeId, Tensor};
use crate::optim::{apply_adagrad, Binder, ParamStore};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Hidden widths of the MLP tower.
    pub tower: Vec<usize>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            tower: vec![256, 128, 64],
        }
    }
}

/// Shape description of the teacher; weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Teacher {
    pub features: Vec<FeatureSpec>,
    pub config: TeacherConfig,
}

/// A batch in feature-major layout: `per_feature[f][i]` is the categorical id
/// of feature `f` in the i-th example.
#[derive(Clone, Debug)]
pub struct Batch {
    pub per_feature: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_examples(num_features: usize, examples: &[&Example]) -> Batch {
        let mut per_feature = vec![Vec::with_capacity(examples.len()); num_features];
        let mut labels = Vec::with_capacity(examples.len());
        for e in examples {
            for (f, &v) in e.feature_values.iter().enumerate() {
                per_feature[f].push(v);
            }
            labels.push(e.label as f64);
        }
        Batch {
            per_feature,
            labels,
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

/// How feature embeddings are gated in a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum MaskMode<'a> {
    /// Plain forward, no gates.
    None,
    /// Sampled 0/1 gates with straight-through gradients to the mask logits.
    Sampled(&'a [f64]),
    /// Deterministic relaxation: multiply by theta itself. Differentiable
    /// everywhere; its gradient w.r.t. phi coincides with the straight-through
    /// rule, which is what grad_check exercises.
    Relaxed,
    /// Zero out a single feature's embedding (ablation at inference).
    Ablate(usize),
}

pub const MASK_PHI: &str = "mask.phi";

pub fn emb_param(f: usize) -> String {
    format!("t.emb.{f}")
}

impl Teacher {
    pub fn new(features: Vec<FeatureSpec>, config: TeacherConfig) -> Teacher {
        Teacher { features, config }
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn input_width(&self) -> usize {
        self.features.iter().map(|f| f.embedding_dim).sum()
    }

    /// Insert teacher weights and mask logits. phi starts at 0, i.e. theta 0.5.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for f in &self.features {
            let data = (0..f.vocab_size * f.embedding_dim)
                .map(|_| rng.random_range(-0.1..0.1))
                .collect();
            store.insert(
                &emb_param(f.id),
                Tensor::new(vec![f.vocab_size, f.embedding_dim], data),
            );
        }
        let mut prev = self.input_width();
        for (i, &w) in self.config.tower.iter().enumerate() {
            store.insert_he(&format!("t.l{i}.w"), prev, w, rng);
            store.insert_zeros(&format!("t.l{i}.b"), &[w]);
            prev = w;
        }
        store.insert_he("t.out.w", prev, 1, rng);
        store.insert_zeros("t.out.b", &[1]);
        store.insert_zeros(MASK_PHI, &[self.num_features()]);
    }

    /// Concatenated (optionally gated) feature embeddings, [batch, D].
    pub fn masked_input(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        batch: &Batch,
        mode: MaskMode,
    ) -> Result<NodeId> {
        let theta = match mode {
            MaskMode::Sampled(_) | MaskMode::Relaxed => {
                let phi = binder.bind(g, MASK_PHI);
                Some(g.sigmoid(phi))
            }
            _ => None,
        };
        let mut parts = Vec::with_capacity(self.features.len());
        for f in &self.features {
            let table = binder.bind(g, &emb_param(f.id));
            let emb = g.embed(table, &batch.per_feature[f.id])?;
            let gated = match mode {
                MaskMode::None => emb,
                MaskMode::Ablate(target) => {
                    if f.id == target {
                        g.scale(emb, 0.0)
                    } else {
                        emb
                    }
                }
                MaskMode::Sampled(gates) => {
                    let th = g.index(theta.unwrap(), f.id);
                    let gate = g.st_gate(th, gates[f.id]);
                    g.scalar_mul(emb, gate)
                }
                MaskMode::Relaxed => {
                    let th = g.index(theta.unwrap(), f.id);
                    g.scalar_mul(emb, th)
                }
            };
            parts.push(gated);
        }
        g.concat_cols(&parts)
    }

    /// MLP tower from a [batch, D] input to a [batch, 1] logit.
    pub fn logits_from_input(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        input: NodeId,
    ) -> Result<NodeId> {
        let mut x = input;
        for i in 0..self.config.tower.len() {
            let w = binder.bind(g, &format!("t.l{i}.w"));
            let b = binder.bind(g, &format!("t.l{i}.b"));
            let z = g.matmul(x, w)?;
            let z = g.add_bias(z, b)?;
            x = g.relu(z);
        }
        let w = binder.bind(g, "t.out.w");
        let b = binder.bind(g, "t.out.b");
        let z = g.matmul(x, w)?;
        g.add_bias(z, b)
    }

    pub fn forward_masked(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        batch: &Batch,
        gates: &[f64],
    ) -> Result<NodeId> {
        let input = self.masked_input(g, binder, batch, MaskMode::Sampled(gates))?;
        self.logits_from_input(g, binder, input)
    }

    /// Plain forward with no masks; the KD target r(x) path.
    pub fn forward_unmasked(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        batch: &Batch,
    ) -> Result<NodeId> {
        let input = self.masked_input(g, binder, batch, MaskMode::None)?;
        self.logits_from_input(g, binder, input)
    }

    /// Logit scores over a whole dataset, in eval batches.
    pub fn scores(&self, store: &ParamStore, dataset: &Dataset, mode: MaskMode) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(dataset.examples.len());
        for chunk in dataset.examples.chunks(512) {
            let refs: Vec<&Example> = chunk.iter().collect();
            // feature-major layout is indexed by original feature id, so use
            // the dataset's full width even when this model keeps a subset
            let batch = Batch::from_examples(dataset.num_features(), &refs);
            let mut g = Graph::new();
            let mut binder = Binder::new(store);
            let input = self.masked_input(&mut g, &mut binder, &batch, mode)?;
            let logits = self.logits_from_input(&mut g, &mut binder, input)?;
            out.extend_from_slice(&g.value(logits).data);
        }
        Ok(out)
    }
}

/// Current theta values, sigmoid of the stored phi.
pub fn theta_values(store: &ParamStore) -> Vec<f64> {
    store.get(MASK_PHI).data.iter().map(|&p| sigmoid(p)).collect()
}

/// One 0/1 gate per feature, g_i ~ Bernoulli(theta_i), one vector per batch.
pub fn sample_masks(theta: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    theta
        .iter()
        .map(|&t| f64::from(rng.random::<f64>() < t))
        .collect()
}

/// Deterministic batch iterator: reshuffles example order each epoch.
pub struct BatchIter<'d> {
    dataset: &'d Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<'d> BatchIter<'d> {
    pub fn new(dataset: &'d Dataset, batch_size: usize, seed: u64) -> Self {
        BatchIter {
            dataset,
            order: (0..dataset.examples.len()).collect(),
            pos: usize::MAX,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.pos == usize::MAX || self.pos + self.batch_size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let ixs = &self.order[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        let refs: Vec<&Example> = ixs.iter().map(|&i| &self.dataset.examples[i]).collect();
        Batch::from_examples(self.dataset.num_features(), &refs)
    }
}

/// Train the teacher with plain BCE and no masks, then freeze its weights and
/// embeddings. Mask logits stay trainable.
pub fn warmup(
    teacher: &Teacher,
    store: &mut ParamStore,
    dataset: &Dataset,
    steps: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "warmup requires at least one step".into(),
        ));
    }
    let mut iter = BatchIter::new(dataset, batch_size, seed);
    for step in 0..steps {
        let batch = iter.next_batch();
        let mut g = Graph::new();
        let mut binder = Binder::new(store);
        let logits = teacher.forward_unmasked(&mut g, &mut binder, &batch)?;
        let loss = g.bce_with_logits_mean(logits, &batch.labels)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::Diverged { step });
        }
        g.backward(loss);
        let bindings = binder.bindings().to_vec();
        apply_adagrad(store, &g, &bindings, lr);
    }
    store.freeze_matching("t.");
    Ok(())
}

/// Teacher + weights bundle that can score with one feature ablated.
pub struct TeacherScorer<'a> {
    pub teacher: &'a Teacher,
    pub store: &'a ParamStore,
}

impl AblatableScorer for TeacherScorer<'_> {
    fn scores_with_ablated(&self, dataset: &Dataset, ablated: Option<usize>) -> Result<Vec<f64>> {
        let mode = match ablated {
            None => MaskMode::None,
            Some(f) => MaskMode::Ablate(f),
        };
        self.teacher.scores(self.store, dataset, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetSpec};
    use crate::eval::auc;

    fn tiny_setup(seed: u64) -> (Dataset, Teacher, ParamStore) {
        let spec = DatasetSpec {
            num_features: 6,
            num_informative: 3,
            num_queries: 20,
            items_per_query: 10,
            vocab_size: 10,
            seed,
            ..DatasetSpec::default()
        };
        let (ds, _) = generate(&spec).unwrap();
        let teacher = Teacher::new(
            ds.features.clone(),
            TeacherConfig {
                tower: vec![16, 8],
            },
        );
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        teacher.init_params(&mut store, &mut rng);
        (ds, teacher, store)
    }

    fn first_batch(ds: &Dataset, n: usize) -> Batch {
        let refs: Vec<&Example> = ds.examples.iter().take(n).collect();
        Batch::from_examples(ds.num_features(), &refs)
    }

    #[test]
    fn saturated_phi_gives_constant_masks() {
        let theta_hi: Vec<f64> = vec![sigmoid(20.0); 8];
        let theta_lo: Vec<f64> = vec![sigmoid(-20.0); 8];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(sample_masks(&theta_hi, &mut rng).iter().all(|&g| g == 1.0));
            assert!(sample_masks(&theta_lo, &mut rng).iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn mask_frequency_matches_theta() {
        let theta = vec![0.5; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0.0; 4];
        let draws = 10_000;
        for _ in 0..draws {
            for (c, g) in counts.iter_mut().zip(sample_masks(&theta, &mut rng)) {
                *c += g;
            }
        }
        for c in counts {
            let freq = c / draws as f64;
            assert!((freq - 0.5).abs() <= 0.02, "freq = {freq}");
        }
    }

    #[test]
    fn all_ones_mask_equals_unmasked() {
        let (ds, teacher, store) = tiny_setup(2);
        let batch = first_batch(&ds, 8);
        let ones = vec![1.0; teacher.num_features()];

        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let masked = teacher.forward_masked(&mut g, &mut binder, &batch, &ones).unwrap();
        let unmasked = teacher.forward_unmasked(&mut g, &mut binder, &batch).unwrap();
        assert_eq!(g.value(masked).data, g.value(unmasked).data);
    }

    #[test]
    fn all_zeros_mask_equals_zero_input_forward() {
        let (ds, teacher, store) = tiny_setup(3);
        let batch = first_batch(&ds, 8);
        let zeros = vec![0.0; teacher.num_features()];

        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let masked = teacher.forward_masked(&mut g, &mut binder, &batch, &zeros).unwrap();
        let zero_in = g.constant(Tensor::zeros(&[8, teacher.input_width()]));
        let expect = teacher.logits_from_input(&mut g, &mut binder, zero_in).unwrap();
        for (a, b) in g.value(masked).data.iter().zip(&g.value(expect).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_feature_mask_matches_manual_zeroing() {
        let (ds, teacher, store) = tiny_setup(4);
        let batch = first_batch(&ds, 8);
        let mut gates = vec![1.0; teacher.num_features()];
        gates[2] = 0.0;

        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let masked = teacher.forward_masked(&mut g, &mut binder, &batch, &gates).unwrap();

        // manual construction: embed everything, zero feature 2's block by hand
        let mut parts = Vec::new();
        for f in &teacher.features {
            let table = binder.bind(&mut g, &emb_param(f.id));
            let emb = g.embed(table, &batch.per_feature[f.id]).unwrap();
            parts.push(if f.id == 2 { g.scale(emb, 0.0) } else { emb });
        }
        let manual_in = g.concat_cols(&parts).unwrap();
        let expect = teacher.logits_from_input(&mut g, &mut binder, manual_in).unwrap();
        for (a, b) in g.value(masked).data.iter().zip(&g.value(expect).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unmasked_forward_is_deterministic() {
        let (ds, teacher, store) = tiny_setup(5);
        let batch = first_batch(&ds, 8);
        let run = || {
            let mut g = Graph::new();
            let mut binder = Binder::new(&store);
            let l = teacher.forward_unmasked(&mut g, &mut binder, &batch).unwrap();
            g.value(l).data.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kd_distance_zero_when_student_copies_teacher() {
        let (ds, teacher, store) = tiny_setup(6);
        let batch = first_batch(&ds, 8);
        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let r = teacher.forward_unmasked(&mut g, &mut binder, &batch).unwrap();
        let rp = g.sigmoid(r);
        let kd = g.sq_diff_mean(rp, rp).unwrap();
        assert_eq!(g.value(kd).item(), 0.0);
    }

    #[test]
    fn warmup_rejects_zero_steps() {
        let (ds, teacher, mut store) = tiny_setup(7);
        let r = warmup(&teacher, &mut store, &ds, 0, 10, 0.01, 0);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn warmup_reaches_usable_auc_and_descends() {
        let spec = DatasetSpec {
            num_queries: 300,
            seed: 8,
            ..DatasetSpec::default()
        };
        let (ds, _) = generate(&spec).unwrap();
        let (train, eval) = ds.split(0.8);
        let teacher = Teacher::new(ds.features.clone(), TeacherConfig { tower: vec![64, 32] });
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        teacher.init_params(&mut store, &mut rng);

        let slice = Dataset {
            features: ds.features.clone(),
            examples: train.examples.iter().take(1000).cloned().collect(),
        };
        let loss_on = |store: &ParamStore| {
            let refs: Vec<&Example> = slice.examples.iter().collect();
            let batch = Batch::from_examples(slice.num_features(), &refs);
            let mut g = Graph::new();
            let mut binder = Binder::new(store);
            let logits = teacher.forward_unmasked(&mut g, &mut binder, &batch).unwrap();
            let l = g.bce_with_logits_mean(logits, &batch.labels).unwrap();
            g.value(l).item()
        };
        let loss_init = loss_on(&store);
        warmup(&teacher, &mut store, &train, 2500, 50, 0.01, 0).unwrap();
        assert!(loss_on(&store) < loss_init);

        let scores = teacher.scores(&store, &eval, MaskMode::None).unwrap();
        let labels: Vec<u8> = eval.examples.iter().map(|e| e.label).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!(a >= 0.80, "teacher auc = {a}");
    }

    #[test]
    fn warmup_freezes_teacher_but_not_mask() {
        let (ds, teacher, mut store) = tiny_setup(10);
        warmup(&teacher, &mut store, &ds, 5, 10, 0.01, 0).unwrap();
        assert!(!store.is_trainable("t.out.w"));
        assert!(!store.is_trainable(&emb_param(0)));
        assert!(store.is_trainable(MASK_PHI));
    }

    #[test]
    fn near_one_theta_matches_unmasked_expectation() {
        let (ds, teacher, mut store) = tiny_setup(11);
        let phi = Tensor::new(
            vec![teacher.num_features()],
            vec![20.0; teacher.num_features()],
        );
        store.set_value(MASK_PHI, phi);
        let batch = first_batch(&ds, 8);
        let theta = theta_values(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gates = sample_masks(&theta, &mut rng);
        assert!(gates.iter().all(|&g| g == 1.0));
        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let masked = teacher.forward_masked(&mut g, &mut binder, &batch, &gates).unwrap();
        let unmasked = teacher.forward_unmasked(&mut g, &mut binder, &batch).unwrap();
        assert_eq!(g.value(masked).data, g.value(unmasked).data);
    }

    #[test]
    fn straight_through_gradient_reaches_phi() {
        let (ds, teacher, mut store) = tiny_setup(13);
        warmup(&teacher, &mut store, &ds, 20, 10, 0.01, 0).unwrap();
        let batch = first_batch(&ds, 16);
        let theta = theta_values(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let gates = sample_masks(&theta, &mut rng);
        let mut g = Graph::new();
        let mut binder = Binder::new(&store);
        let logits = teacher.forward_masked(&mut g, &mut binder, &batch, &gates).unwrap();
        let loss = g.bce_with_logits_mean(logits, &batch.labels).unwrap();
        g.backward(loss);
        let phi_grad = g.grad(binder.node_for(MASK_PHI).unwrap());
        assert!(phi_grad.data.iter().any(|&v| v != 0.0));
    }
}
