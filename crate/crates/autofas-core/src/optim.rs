//! Named parameter store with Adagrad updates.

use std::collections::BTreeMap;

use rand::Rng;

use crate::graph::{Graph, NodeId, Tensor};

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    accum: Tensor,
    pub trainable: bool,
}

/// All learnable tensors of a model, keyed by name. BTreeMap keeps iteration
/// order deterministic for checkpointing and updates.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let accum = Tensor::zeros(&value.shape);
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                accum,
                trainable: true,
            },
        );
    }

    /// He-style uniform init for a [fan_in, fan_out] weight.
    pub fn insert_he(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data));
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .trainable
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .trainable = trainable;
    }

    pub fn freeze_matching(&mut self, prefix: &str) {
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                e.trainable = false;
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) {
        let e = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(e.value.shape, value.shape, "shape change for {name}");
        e.value = value;
    }
}

/// Binds named parameters into a graph, at most once per name, and remembers
/// the bindings so an optimizer step (or a gradient read) can route node
/// gradients back to the store. Frozen parameters are bound behind a detach,
/// so their leaves receive exactly zero gradient in any loss.
pub struct Binder<'s> {
    store: &'s ParamStore,
    bound: Vec<Binding>,
}

struct Binding {
    name: String,
    /// Leaf holding the parameter value; gradient target.
    leaf: NodeId,
    /// Node handed to callers: the leaf, or a detach of it when frozen.
    used: NodeId,
}

impl<'s> Binder<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Binder {
            store,
            bound: Vec::new(),
        }
    }

    pub fn bind(&mut self, g: &mut Graph, name: &str) -> NodeId {
        if let Some(b) = self.bound.iter().find(|b| b.name == name) {
            return b.used;
        }
        let leaf = g.leaf(self.store.get(name).clone());
        let used = if self.store.is_trainable(name) {
            leaf
        } else {
            g.detach(leaf)
        };
        self.bound.push(Binding {
            name: name.to_string(),
            leaf,
            used,
        });
        used
    }

    pub fn node_for(&self, name: &str) -> Option<NodeId> {
        self.bound.iter().find(|b| b.name == name).map(|b| b.used)
    }

    /// (name, gradient-target leaf) pairs for the optimizer.
    pub fn bindings(&self) -> Vec<(String, NodeId)> {
        self.bound
            .iter()
            .map(|b| (b.name.clone(), b.leaf))
            .collect()
    }

    /// Gradients of every bound parameter after `graph.backward`. Frozen
    /// parameters report exact zeros.
    pub fn grads(&self, graph: &Graph) -> Vec<(String, Tensor)> {
        self.bound
            .iter()
            .map(|b| (b.name.clone(), graph.grad(b.leaf)))
            .collect()
    }
}

/// Adagrad update for every trainable bound parameter. Call after
/// `graph.backward(loss)`.
pub fn apply_adagrad(
    store: &mut ParamStore,
    graph: &Graph,
    bindings: &[(String, NodeId)],
    lr: f64,
) {
    const EPS: f64 = 1e-10;
    for (name, id) in bindings {
        let entry = store.entries.get_mut(name).unwrap();
        if !entry.trainable {
            continue;
        }
        let grad = graph.grad(*id);
        for i in 0..grad.numel() {
            let g = grad.data[i];
            entry.accum.data[i] += g * g;
            entry.value.data[i] -= lr * g / (entry.accum.data[i].sqrt() + EPS);
        }
    }
}
