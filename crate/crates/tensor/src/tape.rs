use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::{Precision, Tensor};

/// Vector-Jacobian product of one recorded op.
///
/// Receives the upstream gradient and a mask telling which parents need a
/// gradient; returns one entry per parent (`None` where not needed).
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

struct TapeState {
    nodes: Vec<Node>,
    precision: Precision,
    generation: u64,
    params: HashMap<String, usize>,
    branch_hash: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Ordered record of executed ops.
///
/// Cloning a `Tape` clones a handle to the same record. A tape is
/// single-threaded; build one tape per forward/backward pass.
#[derive(Clone)]
pub struct Tape {
    state: Rc<RefCell<TapeState>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.state.borrow();
        f.debug_struct("Tape")
            .field("nodes", &s.nodes.len())
            .field("precision", &s.precision)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            state: Rc::new(RefCell::new(TapeState {
                nodes: Vec::new(),
                precision,
                generation: 0,
                params: HashMap::new(),
                branch_hash: FNV_OFFSET,
            })),
        }
    }

    pub fn precision(&self) -> Precision {
        self.state.borrow().precision
    }

    pub fn len(&self) -> usize {
        self.state.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf value.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut st = self.state.borrow_mut();
        let mut value = value;
        let precision = st.precision;
        precision.apply(value.data_mut());
        let id = st.nodes.len();
        st.nodes.push(Node {
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self.clone(),
            id,
            generation: st.generation,
            value: Rc::new(value),
            requires_grad,
        }
    }

    /// Leaf without gradient tracking.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a parameter as a leaf. Frozen parameters never receive a
    /// gradient. Repeated calls with the same parameter name return the same
    /// leaf so that shared weights accumulate one gradient.
    pub fn param(&self, param: &Param) -> Var {
        if let Some(&id) = self.state.borrow().params.get(&param.name) {
            let st = self.state.borrow();
            return Var {
                tape: self.clone(),
                id,
                generation: st.generation,
                value: Rc::new(param.value.clone()),
                requires_grad: st.nodes[id].requires_grad,
            };
        }
        let var = self.leaf(param.value.clone(), !param.frozen);
        self.state
            .borrow_mut()
            .params
            .insert(param.name.clone(), var.id);
        var
    }

    /// Folds a non-differentiable branch decision (ReLU sign pattern,
    /// max-pool argmax, ...) into the tape's branch signature.
    pub(crate) fn note_branch(&self, decisions: impl IntoIterator<Item = u64>) {
        let mut st = self.state.borrow_mut();
        let mut h = st.branch_hash ^ (st.nodes.len() as u64);
        h = h.wrapping_mul(FNV_PRIME);
        for d in decisions {
            h ^= d;
            h = h.wrapping_mul(FNV_PRIME);
        }
        st.branch_hash = h;
    }

    /// Hash of every branch decision taken by piecewise ops on this tape.
    ///
    /// Two evaluations with equal signatures took the same smooth piece of
    /// the function, so finite differences between them are meaningful.
    pub fn branch_signature(&self) -> u64 {
        self.state.borrow().branch_hash
    }

    /// Validates and rounds a freshly computed op output.
    pub(crate) fn prepare(&self, op: &'static str, mut value: Tensor) -> Result<Rc<Tensor>> {
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite { op, index });
        }
        self.state.borrow().precision.apply(value.data_mut());
        Ok(Rc::new(value))
    }

    /// Appends an op whose output was produced by [`Tape::prepare`].
    pub(crate) fn push(
        &self,
        value: Rc<Tensor>,
        parents: &[&Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        for p in parents {
            self.check_owned(p)?;
        }
        let mut st = self.state.borrow_mut();
        let requires_grad = parents.iter().any(|p| p.requires_grad);
        let id = st.nodes.len();
        st.nodes.push(Node {
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
        });
        Ok(Var {
            tape: self.clone(),
            id,
            generation: st.generation,
            value,
            requires_grad,
        })
    }

    pub(crate) fn record(
        &self,
        op: &'static str,
        value: Tensor,
        parents: &[&Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        let value = self.prepare(op, value)?;
        self.push(value, parents, backward)
    }

    pub(crate) fn check_owned(&self, var: &Var) -> Result<()> {
        if !Rc::ptr_eq(&self.state, &var.tape.state)
            || var.generation != self.state.borrow().generation
        {
            return Err(TensorError::StaleVar);
        }
        Ok(())
    }

    fn backward_from(&self, loss: &Var) -> Result<Gradients> {
        self.check_owned(loss)?;
        if !loss.value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "loss must be scalar, got shape {:?}",
                loss.value.shape()
            )));
        }
        let mut st = self.state.borrow_mut();
        if st.nodes.is_empty() {
            return Err(TensorError::Contract("tape is empty".into()));
        }

        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.id] = Some(Tensor::full(loss.value.shape().to_vec(), 1.0));

        let mut leaf_grads = HashMap::new();
        // Node ids are assigned in execution order, so a reverse sweep visits
        // every op after all of its consumers.
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &st.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                leaf_grads.insert(id, g);
                continue;
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| st.nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let by_param = st
            .params
            .iter()
            .filter_map(|(name, id)| leaf_grads.get(id).map(|g| (name.clone(), g.clone())))
            .collect();

        st.nodes.clear();
        st.params.clear();
        st.generation += 1;

        Ok(Gradients {
            by_id: leaf_grads,
            by_param,
        })
    }
}

/// A tensor recorded on a tape.
#[derive(Clone)]
pub struct Var {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
    generation: u64,
    pub(crate) value: Rc<Tensor>,
    pub(crate) requires_grad: bool,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Runs reverse-mode differentiation from this scalar and consumes the
    /// tape. Every leaf created with `requires_grad` that the loss depends on
    /// receives a gradient.
    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward_from(self)
    }
}

/// Leaf gradients produced by [`Var::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_id: HashMap<usize, Tensor>,
    by_param: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.by_id.get(&var.id)
    }

    /// Gradient of `var`, or zeros of its shape when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.by_param.get(name)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.by_param.keys().map(String::as_str)
    }
}

/// Named trainable (or frozen) tensor owned by a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            frozen: false,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }
}
