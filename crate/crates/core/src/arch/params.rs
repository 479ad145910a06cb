//! Named parameter storage and the per-pass binding of parameters to graph
//! nodes.

use rand::Rng;

use crate::autodiff::{Gradients, Graph, Var};
use crate::nn::{BatchStats, NormMode};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Trainable parameters and non-trainable buffers (batch-norm running
/// statistics), each in a stable creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub(crate) params: Vec<NamedTensor>,
    pub(crate) buffers: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[NamedTensor] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.buffers
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn add_param(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(NamedTensor { name, value });
        self.params.len() - 1
    }

    pub(crate) fn add_buffer(&mut self, name: String, value: Tensor) -> usize {
        self.buffers.push(NamedTensor { name, value });
        self.buffers.len() - 1
    }

    /// Kaiming-normal convolution weight: `N(0, 2 / fan_in)`.
    pub(crate) fn kaiming<R: Rng + ?Sized>(shape: [usize; 5], rng: &mut R) -> Tensor {
        let fan_in = shape[1] * shape[2] * shape[3] * shape[4];
        Tensor::randn(shape.to_vec(), (2.0 / fan_in as f64).sqrt(), rng)
    }
}

/// Running-statistic update recorded during a train-mode pass.
#[derive(Clone, Debug)]
pub struct NormUpdate {
    pub mean_buffer: usize,
    pub var_buffer: usize,
    pub stats: BatchStats,
}

/// One forward pass: the graph, the parameters bound into it so far, and the
/// batch-norm mode.
pub struct Forward<'a> {
    pub graph: &'a mut Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: NormMode,
    track_grads: bool,
    updates: Vec<NormUpdate>,
}

impl<'a> Forward<'a> {
    /// `track_grads` binds parameters as gradient-receiving leaves.
    pub fn new(graph: &'a mut Graph, store: &'a ParamStore, mode: NormMode, track_grads: bool) -> Self {
        Forward {
            graph,
            bound: vec![None; store.params.len()],
            store,
            mode,
            track_grads,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub(crate) fn store(&self) -> &ParamStore {
        self.store
    }

    /// Graph node for parameter `idx`, created on first use.
    pub(crate) fn param(&mut self, idx: usize) -> Var {
        if let Some(v) = self.bound[idx] {
            return v;
        }
        let value = self.store.params[idx].value.clone();
        let v = if self.track_grads {
            self.graph.parameter(value)
        } else {
            self.graph.constant(value)
        };
        self.bound[idx] = Some(v);
        v
    }

    pub(crate) fn record(&mut self, update: NormUpdate) {
        self.updates.push(update);
    }

    pub fn finish(self) -> Binding {
        Binding {
            bound: self.bound,
            updates: self.updates,
        }
    }
}

/// What a finished [`Forward`] leaves behind: parameter nodes and pending
/// running-statistic updates.
#[derive(Debug)]
pub struct Binding {
    bound: Vec<Option<Var>>,
    pub updates: Vec<NormUpdate>,
}

impl Binding {
    /// Gradients aligned with the store's parameter order; parameters the
    /// pass never touched get zeros.
    pub fn parameter_grads(&self, store: &ParamStore, grads: &Gradients) -> Vec<Tensor> {
        store
            .params
            .iter()
            .zip(&self.bound)
            .map(|(p, v)| {
                v.and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
            })
            .collect()
    }
}
