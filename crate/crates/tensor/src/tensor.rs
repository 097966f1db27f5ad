use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::array::Array;
use crate::error::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(usize);

impl TensorId {
    fn fresh() -> Self {
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        Self(COUNTER.fetch_add(1, Ordering::Relaxed))
    }
}

/// Maps the gradient of an op's output to gradients of its parents. The
/// `needs` mask tells which parents track gradients; entries for the others
/// may be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&Array, &[bool]) -> Result<Vec<Option<Array>>>>;

enum Kind {
    Constant,
    Leaf,
    Op {
        parents: Vec<Tensor>,
        backward: BackwardFn,
    },
}

struct Inner {
    id: TensorId,
    value: Array,
    kind: Kind,
}

/// Node of a dynamically built computation graph.
///
/// Constants carry no history. Leaves are trainable inputs. Every op whose
/// inputs include a leaf records a backward closure; ops over constants
/// only produce constants, so inference builds no graph at all.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.0.kind {
            Kind::Constant => "const",
            Kind::Leaf => "leaf",
            Kind::Op { .. } => "op",
        };
        write!(f, "Tensor[{kind} {:?}]", self.shape())
    }
}

impl Tensor {
    pub fn constant(value: Array) -> Self {
        Self(Rc::new(Inner {
            id: TensorId::fresh(),
            value,
            kind: Kind::Constant,
        }))
    }

    /// A trainable leaf; `backward` reports its gradient.
    pub fn leaf(value: Array) -> Self {
        Self(Rc::new(Inner {
            id: TensorId::fresh(),
            value,
            kind: Kind::Leaf,
        }))
    }

    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        Ok(Self::constant(Array::new(shape, data)?))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::constant(Array::zeros(shape))
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::constant(Array::ones(shape))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Array::scalar(v))
    }

    pub(crate) fn from_op(value: Array, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        if parents.iter().any(Tensor::tracks) {
            Self(Rc::new(Inner {
                id: TensorId::fresh(),
                value,
                kind: Kind::Op { parents, backward },
            }))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> TensorId {
        self.0.id
    }

    pub fn value(&self) -> &Array {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn rank(&self) -> usize {
        self.0.value.rank()
    }

    pub fn numel(&self) -> usize {
        self.0.value.numel()
    }

    pub fn data(&self) -> &[f64] {
        self.0.value.data()
    }

    pub fn item(&self) -> Result<f64> {
        self.0.value.item()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        self.0.value.dims4()
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        self.0.value.dims3()
    }

    /// Whether gradients flow through this tensor.
    pub fn tracks(&self) -> bool {
        !matches!(self.0.kind, Kind::Constant)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        if self.tracks() {
            Tensor::constant(self.0.value.clone())
        } else {
            self.clone()
        }
    }

    /// Reverse-mode differentiation from a scalar output.
    pub fn backward(&self) -> Result<Grads> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarBackward(self.shape().to_vec()));
        }
        let order = self.topo_order();
        let mut grads: HashMap<TensorId, Array> = HashMap::new();
        grads.insert(self.id(), Array::ones(self.shape().to_vec()));
        let mut leaves = HashMap::new();
        for node in order.iter().rev() {
            let Some(grad) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.kind {
                Kind::Constant => {}
                Kind::Leaf => {
                    leaves.insert(node.id(), grad);
                }
                Kind::Op { parents, backward } => {
                    let needs: Vec<bool> = parents.iter().map(Tensor::tracks).collect();
                    let parent_grads = backward(&grad, &needs)?;
                    for ((parent, pg), need) in parents.iter().zip(parent_grads).zip(needs) {
                        let (Some(pg), true) = (pg, need) else {
                            continue;
                        };
                        if pg.shape() != parent.shape() {
                            return Err(TensorError::ShapeMismatch {
                                op: "backward",
                                lhs: pg.shape().to_vec(),
                                rhs: parent.shape().to_vec(),
                            });
                        }
                        match grads.get_mut(&parent.id()) {
                            Some(acc) => acc.add_assign(&pg)?,
                            None => {
                                grads.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(Grads(leaves))
    }

    /// Post-order over tracked nodes reachable from `self`.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !node.tracks() || !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Kind::Op { parents, .. } = &node.0.kind {
                for p in parents.iter().rev() {
                    if p.tracks() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Gradients of leaves, keyed by tensor identity.
#[derive(Default)]
pub struct Grads(HashMap<TensorId, Array>);

impl Grads {
    pub fn get(&self, t: &Tensor) -> Option<&Array> {
        self.0.get(&t.id())
    }

    pub fn remove(&mut self, t: &Tensor) -> Option<Array> {
        self.0.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
