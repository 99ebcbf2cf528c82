use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::tensor::Tensor;

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Stored running statistics; no state changes.
    Eval,
}

/// One forward evaluation: binds store tensors onto a tape on first use and
/// collects batch-norm state updates for the caller to apply afterwards.
pub struct Session<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    mode: Mode,
    track: bool,
    bound: RefCell<BTreeMap<ParamId, Var<'t>>>,
    pending: RefCell<Vec<(ParamId, Tensor)>>,
    layer_macs: Cell<u64>,
    attention_macs: Cell<u64>,
}

impl<'t, 's> Session<'t, 's> {
    /// `track` records parameters as gradient leaves.
    pub fn new(tape: &'t Tape, store: &'s ParamStore, mode: Mode, track: bool) -> Self {
        Self {
            tape,
            store,
            mode,
            track,
            bound: RefCell::new(BTreeMap::new()),
            pending: RefCell::new(Vec::new()),
            layer_macs: Cell::new(0),
            attention_macs: Cell::new(0),
        }
    }

    pub fn training(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self::new(tape, store, Mode::Train, true)
    }

    pub fn inference(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self::new(tape, store, Mode::Eval, false)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&self, tensor: Tensor) -> Var<'t> {
        self.tape.constant(tensor)
    }

    /// The tape variable for a stored tensor; the same variable is returned on
    /// every call within a session.
    pub fn param(&self, id: ParamId) -> Var<'t> {
        *self.bound.borrow_mut().entry(id).or_insert_with(|| {
            let value = self.store.get(id).clone();
            if self.track && self.store.entry(id).kind == super::ParamKind::Trainable {
                self.tape.leaf(value)
            } else {
                self.tape.constant(value)
            }
        })
    }

    /// Every parameter this session has touched, in id order.
    pub fn used_params(&self) -> Vec<ParamId> {
        self.bound.borrow().keys().copied().collect()
    }

    pub(crate) fn push_state_update(&self, id: ParamId, value: Tensor) {
        self.pending.borrow_mut().push((id, value));
    }

    /// Gradients of bound trainable parameters.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(&id, &var)| grads.get(var).map(|g| (id, g.clone())))
            .collect()
    }

    /// Multiply-accumulates of linear and convolution layers run so far.
    pub fn layer_macs(&self) -> u64 {
        self.layer_macs.get()
    }

    /// Multiply-accumulates of the attention products (QKᵀ and AV) run so far.
    pub fn attention_macs(&self) -> u64 {
        self.attention_macs.get()
    }

    pub(crate) fn count_layer_macs(&self, n: usize) {
        self.layer_macs.set(self.layer_macs.get() + n as u64);
    }

    pub(crate) fn count_attention_macs(&self, n: usize) {
        self.attention_macs.set(self.attention_macs.get() + n as u64);
    }

    /// Buffer updates produced during the forward pass.
    pub fn take_state_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.pending.borrow_mut())
    }
}

impl ParamStore {
    pub fn apply_state_updates(&mut self, updates: Vec<(ParamId, Tensor)>) -> crate::Result<()> {
        for (id, t) in updates {
            self.set(id, t)?;
        }
        Ok(())
    }
}
