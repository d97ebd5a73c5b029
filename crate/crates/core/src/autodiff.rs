//! Tape-based reverse-mode differentiation.
//!
//! Operations execute eagerly and append a node holding the result plus the
//! context its backward rule needs (argmax maps, batch statistics, membrane
//! traces). Nodes only ever reference earlier nodes, so the tape order is a
//! topological order and `backward` is a single reverse sweep: gradients
//! accumulate additively where a node fans out, and leaves never reached by
//! the sweep report zero.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::batchnorm::{batchnorm_backward, batchnorm_forward, BnMode, BnStats, RunningStats};
use crate::kernels::conv::{conv2d, conv2d_grad_input, conv2d_grad_weight};
use crate::kernels::pool::{
    avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward, ArgmaxMap,
};
use crate::lif::{lif_backward, lif_forward, LifConfig, LifTrace};
use crate::tensor::{real, PoolSpec, Scalar, Shape5, Tensor5};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op<T: Scalar> {
    Leaf,
    /// Value copied from another node; gradient stops here.
    Detach,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: BnStats<T>,
    },
    MaxPool {
        input: NodeId,
        map: ArgmaxMap,
    },
    AvgPool {
        input: NodeId,
        spec: PoolSpec,
    },
    Lif {
        input: NodeId,
        trace: LifTrace<T>,
    },
    SpatialMean {
        input: NodeId,
    },
    MeanTime {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: T,
    },
    SumAll {
        input: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        /// Softmax probabilities, `B*K` row-major, saved at forward time.
        probs: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor5<T>,
    op: Op<T>,
}

/// Recorded computation graph over [`Tensor5`] values.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    exec: Exec,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor5<T>>>,
    shapes: Vec<Shape5>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient accumulated at `id`, or `None` if the sweep never reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor5<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient at `id`, densified to zeros when unreachable.
    pub fn dense(&self, id: NodeId) -> Tensor5<T> {
        match self.grads[id.0] {
            Some(ref g) => g.clone(),
            None => Tensor5::zeros(self.shapes[id.0]),
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor5<T>>, add: Tensor5<T>) {
    match slot {
        Some(g) => g
            .add_assign(&add)
            .expect("fan-out gradients share the node shape"),
        None => *slot = Some(add),
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new(Exec::default())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new(exec: Exec) -> Self {
        Self {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value computed at `id`.
    pub fn value(&self, id: NodeId) -> &Tensor5<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape5 {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor5<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor5<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Copy of `input`'s value through which no gradient flows.
    pub fn detach(&mut self, input: NodeId) -> NodeId {
        let value = self.nodes[input.0].value.clone();
        self.push(value, Op::Detach)
    }

    /// Cross-correlation with optional per-output-channel bias.
    /// `weight` is `[1, Cout, Cin, kh, kw]`; `bias` is `[1, 1, Cout, 1, 1]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let b = bias.map(|id| self.nodes[id.0].value.data());
        let value = conv2d(
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            b,
            stride,
            pad,
            self.exec,
        )?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        ))
    }

    /// Fully connected map over the channel axis: a 1x1 convolution with
    /// `weight` of shape `[1, K, C, 1, 1]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        self.conv2d(input, weight, bias, 1, 0)
    }

    /// Batch normalization; `gamma`/`beta` are `[1, 1, C, 1, 1]` nodes.
    /// Returns the statistics used so train-mode callers can update their
    /// running averages.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &RunningStats<T>,
        mode: BnMode,
        eps: T,
    ) -> Result<(NodeId, BnStats<T>)> {
        let (value, stats) = batchnorm_forward(
            &self.nodes[input.0].value,
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
            running,
            mode,
            eps,
            self.exec,
        )?;
        let id = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                stats: stats.clone(),
            },
        );
        Ok((id, stats))
    }

    pub fn maxpool(&mut self, input: NodeId, spec: PoolSpec) -> Result<NodeId> {
        let (value, map) = maxpool_forward(&self.nodes[input.0].value, spec, self.exec)?;
        Ok(self.push(value, Op::MaxPool { input, map }))
    }

    pub fn avgpool(&mut self, input: NodeId, spec: PoolSpec) -> Result<NodeId> {
        let value = avgpool_forward(&self.nodes[input.0].value, spec, self.exec)?;
        Ok(self.push(value, Op::AvgPool { input, spec }))
    }

    /// Multi-step spiking neuron over the leading time axis.
    pub fn lif(&mut self, input: NodeId, config: &LifConfig) -> Result<NodeId> {
        let (value, trace) = lif_forward(&self.nodes[input.0].value, config, self.exec)?;
        Ok(self.push(value, Op::Lif { input, trace }))
    }

    /// Mean over the spatial axes: `[T,B,C,H,W] -> [T,B,C,1,1]`.
    pub fn spatial_mean(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input.0].value;
        let shape = x.shape();
        let plane = shape.plane();
        let inv = real::<T>(1.0 / plane as f64);
        let mut value = Tensor5::zeros(shape.with_spatial(1, 1));
        for (i, o) in value.data_mut().iter_mut().enumerate() {
            let tb = i / shape.c;
            let c = i % shape.c;
            let mut acc = T::ZERO;
            for &v in x.plane(tb, c) {
                acc = acc + v;
            }
            *o = acc * inv;
        }
        self.push(value, Op::SpatialMean { input })
    }

    /// Mean over the time axis: `[T,B,C,H,W] -> [1,B,C,H,W]`.
    pub fn mean_time(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input.0].value;
        let shape = x.shape();
        let step = shape.step();
        let inv = real::<T>(1.0 / shape.t.max(1) as f64);
        let mut out = vec![T::ZERO; step];
        for t in 0..shape.t {
            for (o, &v) in out.iter_mut().zip(x.step(t)) {
                *o = *o + v;
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        let mut shape1 = shape;
        shape1.t = 1;
        let value = Tensor5::from_vec(shape1, out).expect("step length matches");
        self.push(value, Op::MeanTime { input })
    }

    /// Elementwise sum of two nodes with identical shapes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: sa,
                right: sb,
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        value
            .add_assign(&self.nodes[b.0].value)
            .expect("shapes checked");
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, input: NodeId, factor: T) -> NodeId {
        let value = self.nodes[input.0].value.map(|v| v * factor);
        self.push(value, Op::Scale { input, factor })
    }

    /// Scalar sum of all elements.
    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let value = Tensor5::scalar(self.nodes[input.0].value.sum());
        self.push(value, Op::SumAll { input })
    }

    /// Mean cross-entropy between logits `[1, B, K, 1, 1]` and class labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let shape = self.shape(logits);
        if shape.t != 1 || shape.h != 1 || shape.w != 1 || shape.b == 0 {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: shape,
                right: Shape5::new(1, shape.b.max(1), shape.c, 1, 1),
            });
        }
        if labels.len() != shape.b {
            return Err(Error::DataLength {
                expected: shape.b,
                got: labels.len(),
            });
        }
        let k = shape.c;
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label: y,
                    classes: k,
                });
            }
        }
        let z = self.nodes[logits.0].value.data();
        let mut probs = vec![T::ZERO; shape.b * k];
        let mut loss = T::ZERO;
        for b in 0..shape.b {
            let row = &z[b * k..(b + 1) * k];
            let mut m = row[0];
            for &v in row {
                m = m.max_val(v);
            }
            let mut denom = T::ZERO;
            for &v in row {
                denom = denom + (v - m).exp();
            }
            let lse = m + denom.ln();
            loss = loss + (lse - row[labels[b]]);
            for (p, &v) in probs[b * k..(b + 1) * k].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        loss = loss / real::<T>(shape.b as f64);
        Ok(self.push(
            Tensor5::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from `root` seeded with ones.
    pub fn backward_ones(&self, root: NodeId) -> Result<Gradients<T>> {
        self.backward(root, Tensor5::ones(self.shape(root)))
    }

    /// Reverse sweep from `root` seeded with an external gradient.
    pub fn backward(&self, root: NodeId, seed: Tensor5<T>) -> Result<Gradients<T>> {
        let root_shape = self.shape(root);
        if seed.shape() != root_shape {
            return Err(Error::SeedShape {
                expected: root_shape,
                got: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor5<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf | Op::Detach => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let dx = conv2d_grad_input(
                        &g,
                        &self.nodes[weight.0].value,
                        self.shape(*input),
                        *stride,
                        *pad,
                        self.exec,
                    )?;
                    accumulate(&mut grads[input.0], dx);
                    let dw = conv2d_grad_weight(
                        &g,
                        &self.nodes[input.0].value,
                        self.shape(*weight),
                        *stride,
                        *pad,
                        self.exec,
                    )?;
                    accumulate(&mut grads[weight.0], dw);
                    if let Some(bid) = bias {
                        let gs = g.shape();
                        let mut db = Tensor5::zeros(self.shape(*bid));
                        for tb in 0..gs.folded_batch() {
                            for co in 0..gs.c {
                                let mut acc = T::ZERO;
                                for &v in g.plane(tb, co) {
                                    acc = acc + v;
                                }
                                db.data_mut()[co] = db.data_mut()[co] + acc;
                            }
                        }
                        accumulate(&mut grads[bid.0], db);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    stats,
                } => {
                    let (dx, dgamma, dbeta) = batchnorm_backward(
                        &g,
                        &self.nodes[input.0].value,
                        self.nodes[gamma.0].value.data(),
                        stats,
                        self.exec,
                    )?;
                    accumulate(&mut grads[input.0], dx);
                    let gshape = self.shape(*gamma);
                    accumulate(
                        &mut grads[gamma.0],
                        Tensor5::from_vec(gshape, dgamma).expect("per-channel length"),
                    );
                    accumulate(
                        &mut grads[beta.0],
                        Tensor5::from_vec(self.shape(*beta), dbeta).expect("per-channel length"),
                    );
                }
                Op::MaxPool { input, map } => {
                    accumulate(&mut grads[input.0], maxpool_backward(&g, map, self.exec)?);
                }
                Op::AvgPool { input, spec } => {
                    accumulate(
                        &mut grads[input.0],
                        avgpool_backward(&g, *spec, self.shape(*input), self.exec)?,
                    );
                }
                Op::Lif { input, trace } => {
                    accumulate(&mut grads[input.0], lif_backward(&g, trace, self.exec)?);
                }
                Op::SpatialMean { input } => {
                    let in_shape = self.shape(*input);
                    let inv = real::<T>(1.0 / in_shape.plane() as f64);
                    let mut dx = Tensor5::zeros(in_shape);
                    for tb in 0..in_shape.folded_batch() {
                        for c in 0..in_shape.c {
                            let gv = g.data()[tb * in_shape.c + c] * inv;
                            for v in dx.plane_mut(tb, c) {
                                *v = gv;
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::MeanTime { input } => {
                    let in_shape = self.shape(*input);
                    let inv = real::<T>(1.0 / in_shape.t.max(1) as f64);
                    let mut dx = Tensor5::zeros(in_shape);
                    for t in 0..in_shape.t {
                        for (d, &gv) in dx.step_mut(t).iter_mut().zip(g.data()) {
                            *d = gv * inv;
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut grads[input.0], g.map(|v| v * *factor));
                }
                Op::SumAll { input } => {
                    accumulate(
                        &mut grads[input.0],
                        Tensor5::filled(self.shape(*input), g.data()[0]),
                    );
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let lshape = self.shape(*logits);
                    let k = lshape.c;
                    let gv = g.data()[0] / real::<T>(lshape.b as f64);
                    let mut dz = Tensor5::zeros(lshape);
                    for b in 0..lshape.b {
                        for c in 0..k {
                            let mut p = probs[b * k + c];
                            if c == labels[b] {
                                p = p - T::ONE;
                            }
                            dz.data_mut()[b * k + c] = p * gv;
                        }
                    }
                    accumulate(&mut grads[logits.0], dz);
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: Shape5, vals: Vec<f64>) -> Tensor5<f64> {
        Tensor5::from_vec(shape, vals).unwrap()
    }

    #[test]
    fn maxpool_backward_is_one_hot_per_window() {
        let mut tape = Tape::new(Exec::Sequential);
        let x = tape.leaf(tensor(
            Shape5::new(1, 1, 1, 2, 4),
            vec![0.0, 1.0, 0.5, 0.25, 0.9, 0.2, 0.1, 2.0],
        ));
        let y = tape.maxpool(x, PoolSpec::square(2).unwrap()).unwrap();
        let g = tape.backward_ones(y).unwrap();
        assert_eq!(
            g.dense(x).data(),
            &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn avgpool_backward_spreads_quarter() {
        let mut tape = Tape::new(Exec::Sequential);
        let x = tape.leaf(Tensor5::<f64>::ones(Shape5::new(1, 1, 1, 2, 2)));
        let y = tape.avgpool(x, PoolSpec::square(2).unwrap()).unwrap();
        let g = tape.backward_ones(y).unwrap();
        assert_eq!(g.dense(x).data(), &[0.25; 4]);
    }

    #[test]
    fn fan_out_gradients_sum_exactly() {
        let mut tape = Tape::new(Exec::Sequential);
        let x = tape.leaf(tensor(Shape5::new(1, 1, 1, 1, 3), vec![1.0, 2.0, 3.0]));
        let a = tape.scale(x, 2.0);
        let b = tape.scale(x, 3.0);
        let s = tape.add(a, b).unwrap();
        let root = tape.sum_all(s);
        let g = tape.backward_ones(root).unwrap();
        assert_eq!(g.dense(x).data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn detach_stops_gradient() {
        let mut tape = Tape::new(Exec::Sequential);
        let x = tape.leaf(tensor(Shape5::new(1, 1, 1, 1, 2), vec![1.0, 2.0]));
        let d = tape.detach(x);
        let y = tape.sum_all(d);
        let g = tape.backward(y, Tensor5::scalar(1.0)).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.dense(x).data(), &[0.0, 0.0]);
        assert_eq!(g.dense(d).data(), &[1.0, 1.0]);
    }

    #[test]
    fn unreachable_leaf_reports_zero() {
        let mut tape = Tape::new(Exec::Sequential);
        let x = tape.leaf(Tensor5::<f64>::ones(Shape5::new(1, 1, 1, 1, 2)));
        let orphan = tape.leaf(Tensor5::<f64>::ones(Shape5::new(1, 1, 1, 1, 5)));
        let y = tape.sum_all(x);
        let g = tape.backward_ones(y).unwrap();
        assert!(g.get(orphan).is_none());
        assert_eq!(g.dense(orphan).data(), &[0.0; 5]);
    }

    #[test]
    fn seed_shape_is_checked() {
        let mut tape = Tape::new(Exec::Sequential);
        let x = tape.leaf(Tensor5::<f64>::ones(Shape5::new(1, 1, 1, 2, 2)));
        let err = tape.backward(x, Tensor5::scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::SeedShape { .. }));
    }

    #[test]
    fn mean_ops_match_hand_values() {
        let mut tape = Tape::new(Exec::Sequential);
        let x = tape.leaf(tensor(
            Shape5::new(2, 1, 1, 1, 2),
            vec![1.0, 3.0, 5.0, 7.0],
        ));
        let sm = tape.spatial_mean(x);
        assert_eq!(tape.value(sm).data(), &[2.0, 6.0]);
        let mt = tape.mean_time(sm);
        assert_eq!(tape.value(mt).data(), &[4.0]);
        let g = tape.backward_ones(mt).unwrap();
        assert_eq!(g.dense(x).data(), &[0.25; 4]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new(Exec::Sequential);
        let z = tape.leaf(Tensor5::<f64>::zeros(Shape5::new(1, 2, 4, 1, 1)));
        let loss = tape.cross_entropy(z, &[0, 3]).unwrap();
        // Uniform over 4 classes: loss = ln 4.
        assert!((tape.value(loss).data()[0] - 4.0f64.ln()).abs() < 1e-12);
        let g = tape.backward_ones(loss).unwrap();
        let dz = g.dense(z);
        // (softmax - onehot) / B: 0.25 everywhere except -0.75 at the label.
        for b in 0..2 {
            for c in 0..4 {
                let want = if (b == 0 && c == 0) || (b == 1 && c == 3) {
                    (0.25 - 1.0) / 2.0
                } else {
                    0.25 / 2.0
                };
                assert!((dz.at(0, b, c, 0, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let mut tape = Tape::<f64>::new(Exec::Sequential);
        let z = tape.leaf(Tensor5::zeros(Shape5::new(1, 2, 3, 1, 1)));
        assert!(matches!(
            tape.cross_entropy(z, &[0, 5]).unwrap_err(),
            Error::LabelOutOfRange { index: 1, label: 5, classes: 3 }
        ));
        assert!(matches!(
            tape.cross_entropy(z, &[0]).unwrap_err(),
            Error::DataLength { expected: 2, got: 1 }
        ));
    }

    #[test]
    fn linear_is_channel_matmul() {
        let mut tape = Tape::new(Exec::Sequential);
        // 2 -> 3 map on a [1,1,2,1,1] input.
        let x = tape.leaf(tensor(Shape5::new(1, 1, 2, 1, 1), vec![1.0, 2.0]));
        let w = tape.leaf(tensor(
            Shape5::new(1, 3, 2, 1, 1),
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        ));
        let b = tape.leaf(tensor(Shape5::new(1, 1, 3, 1, 1), vec![0.0, 0.0, 10.0]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 13.0]);
        let root = tape.sum_all(y);
        let g = tape.backward_ones(root).unwrap();
        assert_eq!(g.dense(x).data(), &[2.0, 2.0]);
        assert_eq!(g.dense(w).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(g.dense(b).data(), &[1.0, 1.0, 1.0]);
    }
}
