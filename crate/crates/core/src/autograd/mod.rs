//! A small tape-based reverse-mode differentiation engine.
//!
//! Values live on a [`Graph`]; every operation appends a node holding its
//! output and a closure that maps the output gradient onto the parents.
//! Nodes whose parents need no gradient drop their closure immediately, so
//! an inference pass keeps only values.

mod fno;
mod loss;
mod ops;

pub use fno::SpectralConvPlan;
pub use ops::MaskGate;

use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?} vs {} values", data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); n] }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        Tensor::new(shape, data.iter().map(|v| T::from_f64_lossy(*v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees: parent values, own value and the
/// gradient flowing into this node.
pub struct BackCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a [T],
}

/// Accumulates parent gradients, allocating lazily.
pub struct Sink<'a, T> {
    parents: &'a [usize],
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Sink<'_, T> {
    pub fn wants(&self, j: usize) -> bool {
        self.nodes[self.parents[j]].needs_grad
    }

    /// Gradient buffer of parent `j`, or `None` if it needs no gradient.
    pub fn grad(&mut self, j: usize) -> Option<&mut [T]> {
        let p = self.parents[j];
        if !self.nodes[p].needs_grad {
            return None;
        }
        let len = self.nodes[p].value.len();
        Some(self.grads[p].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
    }
}

type Backward<T> = Box<dyn Fn(&BackCtx<'_, T>, &mut Sink<'_, T>)>;

pub struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    needs_grad: bool,
    backward: Option<Backward<T>>,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of the leaves after [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Node { value, parents: vec![], needs_grad: false, backward: None })
    }

    /// A differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Node { value, parents: vec![], needs_grad: true, backward: None })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Appends an operation node. `backward` is dropped when no parent
    /// needs a gradient.
    pub fn op(
        &mut self,
        value: Tensor<T>,
        parents: &[Var],
        backward: impl Fn(&BackCtx<'_, T>, &mut Sink<'_, T>) + 'static,
    ) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let parents: Vec<usize> = parents.iter().map(|p| p.0).collect();
        let backward: Option<Backward<T>> = if needs_grad { Some(Box::new(backward)) } else { None };
        self.push(Node { value, parents, needs_grad, backward })
    }

    /// Reverse pass from a one-element `loss`. Returns leaf gradients.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Grads { grads };
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let ctx = BackCtx {
                inputs: node.parents.iter().map(|p| &self.nodes[*p].value).collect(),
                output: &node.value,
                grad: &g,
            };
            let mut sink = Sink { parents: &node.parents, nodes: &self.nodes, grads: &mut grads };
            bw(&ctx, &mut sink);
        }
        Grads { grads }
    }
}
