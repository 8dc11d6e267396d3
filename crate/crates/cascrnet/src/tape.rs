//! Record-and-replay reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive executed during a forward pass together
//! with the intermediates its backward pass needs. Replaying the records in
//! exact reverse execution order accumulates one gradient per named leaf.
//! A tape belongs to a single training step and is never shared across steps.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum OpRecord<T: Element> {
    Leaf {
        name: Option<String>,
    },
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        spec: ConvSpec,
    },
    LeakyRelu {
        input: NodeId,
        alpha: T,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    AvgPool2d {
        input: NodeId,
        window: usize,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    BroadcastSpatial {
        input: NodeId,
    },
    ConcatChannels {
        inputs: Vec<NodeId>,
        channels: Vec<usize>,
    },
    Reshape {
        input: NodeId,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Sum {
        input: NodeId,
    },
    /// Scalar reduction Σ coeffs·x — handy terminal for gradient checks.
    WeightedSum {
        input: NodeId,
        coeffs: Tensor<T>,
    },
}

struct Node<T: Element> {
    op: OpRecord<T>,
    value: Tensor<T>,
}

/// Gradients keyed by leaf name, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Element> {
    map: HashMap<String, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn into_map(self) -> HashMap<String, Tensor<T>> {
        self.map
    }
}

pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: OpRecord<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient (network inputs, constants).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(OpRecord::Leaf { name: None }, value)
    }

    /// Named leaf; [`Tape::backward`] reports a gradient for every such leaf.
    /// Inserting the same name twice sums the two gradients.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> NodeId {
        self.push(
            OpRecord::Leaf {
                name: Some(name.into()),
            },
            value,
        )
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        spec: &ConvSpec,
    ) -> Result<NodeId> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            self.value(bias),
            spec,
        )?;
        Ok(self.push(
            OpRecord::Conv2d {
                input,
                weight,
                bias,
                spec: *spec,
            },
            out,
        ))
    }

    pub fn leaky_relu(&mut self, input: NodeId, alpha: T) -> Result<NodeId> {
        let out = ops::leaky_relu(self.value(input), alpha)?;
        Ok(self.push(OpRecord::LeakyRelu { input, alpha }, out))
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: usize) -> Result<NodeId> {
        let (out, argmax) = ops::maxpool2d_with_argmax(self.value(input), window)?;
        Ok(self.push(OpRecord::MaxPool2d { input, argmax }, out))
    }

    pub fn avgpool2d(&mut self, input: NodeId, window: usize) -> Result<NodeId> {
        let out = ops::avgpool2d(self.value(input), window)?;
        Ok(self.push(OpRecord::AvgPool2d { input, window }, out))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::global_avg_pool(self.value(input))?;
        Ok(self.push(OpRecord::GlobalAvgPool { input }, out))
    }

    pub fn broadcast_spatial(&mut self, input: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let out = ops::broadcast_spatial(self.value(input), h, w)?;
        Ok(self.push(OpRecord::BroadcastSpatial { input }, out))
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|&id| self.value(id)).collect();
        let channels: Vec<usize> = tensors.iter().map(|t| t.shape()[1]).collect();
        let out = ops::concat_channels(&tensors)?;
        Ok(self.push(
            OpRecord::ConcatChannels {
                inputs: inputs.to_vec(),
                channels,
            },
            out,
        ))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(input).reshape(shape)?;
        Ok(self.push(OpRecord::Reshape { input }, out))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::dense(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            OpRecord::Dense {
                input,
                weight,
                bias,
            },
            out,
        ))
    }

    /// Scalar Σx over all elements.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let mut acc = T::zero();
        for &v in self.value(input).data() {
            acc = acc + v;
        }
        self.push(OpRecord::Sum { input }, Tensor::scalar(acc))
    }

    /// Scalar Σ coeffs·x over all elements; coeffs must match the input shape.
    pub fn weighted_sum(&mut self, input: NodeId, coeffs: Tensor<T>) -> Result<NodeId> {
        if coeffs.shape() != self.value(input).shape() {
            return Err(Error::contract(format!(
                "weighted_sum coeffs shape {:?} does not match input {:?}",
                coeffs.shape(),
                self.value(input).shape()
            )));
        }
        let mut acc = T::zero();
        for (&c, &v) in coeffs.data().iter().zip(self.value(input).data()) {
            acc = acc + c * v;
        }
        Ok(self.push(OpRecord::WeightedSum { input, coeffs }, Tensor::scalar(acc)))
    }

    /// Reverse pass from a scalar terminal seeded with 1.0.
    ///
    /// Returns ∂terminal/∂θ for every named leaf; leaves the terminal does not
    /// depend on get zero gradients of their own shape. A non-scalar terminal
    /// is a contract violation.
    pub fn backward(&self, terminal: NodeId) -> Result<Gradients<T>> {
        if self.value(terminal).numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar terminal, got shape {:?}",
                self.value(terminal).shape()
            )));
        }
        let seed = Tensor::full(self.value(terminal).shape(), T::one());
        self.backward_from(terminal, seed)
    }

    /// Reverse pass from an arbitrary node with a caller-supplied upstream
    /// gradient (used when the loss gradient is computed analytically outside
    /// the tape).
    pub fn backward_from(&self, node: NodeId, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(node).shape() {
            return Err(Error::contract(format!(
                "seed gradient shape {:?} does not match node value {:?}",
                seed.shape(),
                self.value(node).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[node.0] = Some(seed);

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, OpRecord::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                OpRecord::Leaf { .. } => unreachable!(),
                OpRecord::Conv2d {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let (gi, gw, gb) =
                        ops::conv2d_vjp(self.value(*input), self.value(*weight), spec, &g)?;
                    accumulate(&mut grads, *input, gi)?;
                    accumulate(&mut grads, *weight, gw)?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                OpRecord::LeakyRelu { input, alpha } => {
                    let gi = ops::leaky_relu_vjp(self.value(*input), *alpha, &g);
                    accumulate(&mut grads, *input, gi)?;
                }
                OpRecord::MaxPool2d { input, argmax } => {
                    let gi = ops::maxpool2d_vjp(self.value(*input).shape(), argmax, &g)?;
                    accumulate(&mut grads, *input, gi)?;
                }
                OpRecord::AvgPool2d { input, window } => {
                    let gi = ops::avgpool2d_vjp(self.value(*input).shape(), *window, &g)?;
                    accumulate(&mut grads, *input, gi)?;
                }
                OpRecord::GlobalAvgPool { input } => {
                    let gi = ops::global_avg_pool_vjp(self.value(*input).shape(), &g)?;
                    accumulate(&mut grads, *input, gi)?;
                }
                OpRecord::BroadcastSpatial { input } => {
                    let gi = ops::broadcast_spatial_vjp(&g)?;
                    accumulate(&mut grads, *input, gi)?;
                }
                OpRecord::ConcatChannels { inputs, channels } => {
                    let parts = ops::concat_channels_vjp(channels, &g)?;
                    for (id, part) in inputs.iter().zip(parts) {
                        accumulate(&mut grads, *id, part)?;
                    }
                }
                OpRecord::Reshape { input } => {
                    let gi = g.reshape(self.value(*input).shape())?;
                    accumulate(&mut grads, *input, gi)?;
                }
                OpRecord::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let (gi, gw, gb) = ops::dense_vjp(self.value(*input), self.value(*weight), &g)?;
                    accumulate(&mut grads, *input, gi)?;
                    accumulate(&mut grads, *weight, gw)?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                OpRecord::Sum { input } => {
                    let gi = Tensor::full(self.value(*input).shape(), g.item());
                    accumulate(&mut grads, *input, gi)?;
                }
                OpRecord::WeightedSum { input, coeffs } => {
                    let s = g.item();
                    let gi = coeffs.map(|c| c * s);
                    accumulate(&mut grads, *input, gi)?;
                }
            }
        }

        // One gradient per named leaf; repeated names sum, untouched leaves
        // report zeros of their own shape.
        let mut map: HashMap<String, Tensor<T>> = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let OpRecord::Leaf { name: Some(name) } = &node.op {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match map.get_mut(name) {
                    Some(existing) => existing.add_assign(&g)?,
                    None => {
                        map.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(Gradients { map })
    }
}

fn accumulate<T: Element>(
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    g: Tensor<T>,
) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_leaf_gives_all_ones() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::new(vec![2, 3], vec![1.0f64; 6]).unwrap());
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        let gx = grads.get("x").unwrap();
        assert_eq!(gx.shape(), &[2, 3]);
        assert!(gx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_leaky_relu_has_piecewise_slopes() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::new(vec![2], vec![-1.0f64, 2.0]).unwrap());
        let y = tape.leaky_relu(x, 0.01).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[0.01, 1.0]);
    }

    #[test]
    fn non_scalar_terminal_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap());
        let y = tape.leaky_relu(x, 0.01).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn reused_parameter_gradients_are_summed() {
        // loss = sum(concat(x, x)) = 2·sum(x) → gradient 2 everywhere.
        let mut tape = Tape::new();
        let t = Tensor::new(vec![1, 2, 2, 2], vec![0.5f64; 8]).unwrap();
        let a = tape.param("x", t.clone());
        let b = tape.param("x", t);
        let cat = tape.concat_channels(&[a, b]).unwrap();
        let s = tape.sum(cat);
        let grads = tape.backward(s).unwrap();
        let gx = grads.get("x").unwrap();
        assert_eq!(gx.shape(), &[1, 2, 2, 2]);
        assert!(gx.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn unreached_parameters_get_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap());
        let unused = tape.param("w", Tensor::new(vec![3], vec![0.0f64; 3]).unwrap());
        let _ = unused;
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        let gw = grads.get("w").unwrap();
        assert_eq!(gw.shape(), &[3]);
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weighted_sum_gradient_is_the_coefficients() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap());
        let coeffs = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let s = tape.weighted_sum(x, coeffs).unwrap();
        assert_eq!(tape.value(s).item(), 0.5 - 2.0 + 6.0);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[0.5, -1.0, 2.0]);
    }
}
