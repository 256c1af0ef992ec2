use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use super::{Element, Parameter, Shape, Tensor};
use crate::error::{Error, Result};

/// Computes parent gradients from the output gradient. The flags tell which
/// parents actually need one; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Records operations in execution order so gradients can be replayed
/// backwards. A tape is confined to one thread and is usually built fresh
/// for every forward pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.id, self.shape())
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf value.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Binds a parameter. Repeated calls with the same parameter name return
    /// the same leaf so that gradients from every use accumulate.
    pub fn param(&self, param: &Parameter<T>) -> Var<'_, T> {
        if let Some(&id) = self.params.borrow().get(param.name()) {
            return Var { tape: self, id };
        }
        let var = self.leaf(param.value().clone(), param.trainable());
        self.params
            .borrow_mut()
            .insert(param.name().to_owned(), var.id);
        var
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Result<Var<'_, T>> {
        value.check_finite(op)?;
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse pass from `root`, seeded with ones (so a non-scalar root
    /// behaves like its sum). Every node is visited at most once, in reverse
    /// recording order.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(vec![T::one(); nodes[root.id].value.numel()]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].as_ref() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&pid, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else {
                    debug_assert!(!need, "missing gradient for a parent that needs one");
                    continue;
                };
                if !need {
                    continue;
                }
                if pg.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                match grads[pid].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &g)| *a = *a + g),
                    None => grads[pid] = Some(pg),
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::from_vec(node.value.shape(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<String, usize>,
}

impl<T: Element> Gradients<T> {
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a parameter bound with [`Tape::param`].
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .get(name)
            .and_then(|&id| self.grads[id].as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(tape: &Tape<f64>, v: f64) -> Var<'_, f64> {
        tape.leaf(Tensor::scalar(v), true)
    }

    #[test]
    fn diamond_graph_accumulates() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let tape = Tape::new();
        let x = scalar_leaf(&tape, 3.0);
        let y = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 7.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = scalar_leaf(&tape, 2.0);
        let c = tape.constant(Tensor::scalar(5.0));
        let y = x.mul(c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 5.0);
        assert!(g.wrt(c).is_none());
    }

    #[test]
    fn shared_parameter_binds_once() {
        let tape = Tape::new();
        let p = Parameter::new("w", Tensor::scalar(2.0));
        let a = tape.param(&p);
        let b = tape.param(&p);
        assert_eq!(a.id(), b.id());
        let y = a.mul(b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.param("w").unwrap().item(), 4.0);
    }

    #[test]
    fn reachable_leaves_always_get_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 1, 1, 3), -1.0), true);
        // relu kills everything, the gradient is still populated (with zeros)
        let y = x.relu().unwrap().sum().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }
}
