use super::ops::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// A node's operation. Operands always refer to earlier nodes, so node index
/// order is a valid topological order.
#[derive(Clone, Debug)]
pub enum Op {
    Input { slot: usize },
    Constant(Tensor),
    /// `weight · x + bias` with `x: [in]`, `weight: [out, in]`, `bias: [out]`.
    Dense { x: NodeId, weight: NodeId, bias: NodeId },
    /// Stride-1, zero-padded ("same") 2-D convolution over `[C, H, W]`.
    Conv2d { x: NodeId, kernel: NodeId, bias: NodeId },
    Relu(NodeId),
    Tanh(NodeId),
    /// 2×2 max pooling, stride 2. Ties route the gradient to the first
    /// maximal element in row-major window order.
    MaxPool2(NodeId),
    Flatten(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    L2Norm(NodeId),
    /// `-Σ t · log softmax(z)` against a target distribution.
    SoftmaxCrossEntropy { logits: NodeId, target: NodeId },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Incrementally builds a [`ComputeGraph`], checking shapes as nodes are added.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    /// Output shape of an already added node.
    pub fn shape(&self, id: NodeId) -> Option<&[usize]> {
        self.nodes.get(id).map(|n| n.shape.as_slice())
    }

    fn shape_of(&self, id: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(id)
            .map(|n| n.shape.as_slice())
            .ok_or_else(|| Error::InvalidInput(format!("unknown node {id}")))
    }

    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        let slot = self.inputs.len();
        let id = self.push(Op::Input { slot }, shape.to_vec());
        self.inputs.push(id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.shape_of(x)?.to_vec();
        let ws = self.shape_of(weight)?.to_vec();
        let bs = self.shape_of(bias)?.to_vec();
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "dense: x {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        Ok(self.push(Op::Dense { x, weight, bias }, vec![ws[0]]))
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.shape_of(x)?.to_vec();
        let ks = self.shape_of(kernel)?.to_vec();
        let bs = self.shape_of(bias)?.to_vec();
        let ok = xs.len() == 3
            && ks.len() == 4
            && ks[1] == xs[0]
            && ks[2] == ks[3]
            && ks[2] % 2 == 1
            && bs == [ks[0]];
        if !ok {
            return Err(Error::Shape(format!(
                "conv2d: x {xs:?}, kernel {ks:?}, bias {bs:?}"
            )));
        }
        Ok(self.push(Op::Conv2d { x, kernel, bias }, vec![ks[0], xs[1], xs[2]]))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape_of(x)?.to_vec();
        Ok(self.push(Op::Relu(x), s))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape_of(x)?.to_vec();
        Ok(self.push(Op::Tanh(x), s))
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape_of(x)?.to_vec();
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(Error::Shape(format!("max_pool2 needs [C, H>=2, W>=2], got {s:?}")));
        }
        Ok(self.push(Op::MaxPool2(x), vec![s[0], s[1] / 2, s[2] / 2]))
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.shape_of(x)?.iter().product();
        Ok(self.push(Op::Flatten(x), vec![n]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    fn same_shape(&self, what: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let sa = self.shape_of(a)?;
        let sb = self.shape_of(b)?;
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.shape_of(x)?;
        Ok(self.push(Op::Sum(x), vec![1]))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.shape_of(x)?;
        Ok(self.push(Op::Mean(x), vec![1]))
    }

    pub fn l2_norm(&mut self, x: NodeId) -> Result<NodeId> {
        self.shape_of(x)?;
        Ok(self.push(Op::L2Norm(x), vec![1]))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId> {
        let s = self.same_shape("softmax_cross_entropy", logits, target)?;
        if s.len() != 1 {
            return Err(Error::Shape(format!("softmax_cross_entropy needs vectors, got {s:?}")));
        }
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, target }, vec![1]))
    }

    pub fn build(self) -> ComputeGraph {
        ComputeGraph {
            nodes: self.nodes,
            inputs: self.inputs,
        }
    }
}

/// Immutable op graph. Evaluated with [`ComputeGraph::forward`].
#[derive(Clone, Debug)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
}

/// Frozen record of every node output from one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    values: Vec<Tensor>,
}

impl Forward {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }
}

/// `∂target/∂(node output)` for every node of the graph.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> &Tensor {
        &self.grads[id]
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }
}

impl ComputeGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id].op
    }

    pub fn input_nodes(&self) -> &[NodeId] {
        &self.inputs
    }

    fn check_inputs(&self, inputs: &[&Tensor]) -> Result<()> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Shape(format!(
                "graph takes {} inputs, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        for (slot, (&id, t)) in self.inputs.iter().zip(inputs).enumerate() {
            if t.shape() != self.nodes[id].shape.as_slice() {
                return Err(Error::Shape(format!(
                    "input {slot}: expected {:?}, got {:?}",
                    self.nodes[id].shape,
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Forward> {
        self.evaluate(inputs, None)
    }

    /// Forward pass where the output of `node` is replaced by `value` and
    /// downstream nodes are recomputed from it.
    pub fn forward_with_override(
        &self,
        inputs: &[&Tensor],
        node: NodeId,
        value: &Tensor,
    ) -> Result<Forward> {
        if node >= self.nodes.len() || value.shape() != self.nodes[node].shape.as_slice() {
            return Err(Error::Shape(format!("override of node {node} has wrong shape")));
        }
        self.evaluate(inputs, Some((node, value)))
    }

    fn evaluate(&self, inputs: &[&Tensor], overridden: Option<(NodeId, &Tensor)>) -> Result<Forward> {
        self.check_inputs(inputs)?;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let out = match overridden {
                Some((o, v)) if o == id => v.clone(),
                _ => self.eval_node(node, inputs, &values),
            };
            values.push(out);
        }
        Ok(Forward { values })
    }

    fn eval_node(&self, node: &Node, inputs: &[&Tensor], v: &[Tensor]) -> Tensor {
        let shape = node.shape.clone();
        let data = match &node.op {
            Op::Input { slot } => inputs[*slot].data().to_vec(),
            Op::Constant(t) => t.data().to_vec(),
            Op::Dense { x, weight, bias } => {
                ops::dense_forward(v[*x].data(), v[*weight].data(), v[*bias].data())
            }
            Op::Conv2d { x, kernel, bias } => {
                let d = self.conv_dims(*x, *kernel);
                ops::conv2d_forward(v[*x].data(), v[*kernel].data(), v[*bias].data(), d)
            }
            Op::Relu(a) => v[*a].data().iter().map(|&x| x.max(0.0)).collect(),
            Op::Tanh(a) => v[*a].data().iter().map(|x| x.tanh()).collect(),
            Op::MaxPool2(a) => {
                let s = &self.nodes[*a].shape;
                ops::maxpool2_forward(v[*a].data(), s[0], s[1], s[2])
            }
            Op::Flatten(a) => v[*a].data().to_vec(),
            Op::Add(a, b) => zip_with(v[*a].data(), v[*b].data(), |x, y| x + y),
            Op::Mul(a, b) => zip_with(v[*a].data(), v[*b].data(), |x, y| x * y),
            Op::Sum(a) => vec![v[*a].data().iter().sum()],
            Op::Mean(a) => {
                let d = v[*a].data();
                vec![d.iter().sum::<f64>() / d.len().max(1) as f64]
            }
            Op::L2Norm(a) => vec![v[*a].l2_norm()],
            Op::SoftmaxCrossEntropy { logits, target } => {
                vec![ops::softmax_xent_forward(v[*logits].data(), v[*target].data())]
            }
        };
        Tensor { shape, data }
    }

    fn conv_dims(&self, x: NodeId, kernel: NodeId) -> ConvDims {
        let xs = &self.nodes[x].shape;
        let ks = &self.nodes[kernel].shape;
        ConvDims {
            in_ch: xs[0],
            out_ch: ks[0],
            height: xs[1],
            width: xs[2],
            kernel: ks[2],
        }
    }

    /// Reverse-mode gradients of the scalar node `target` with respect to
    /// every node output recorded in `fwd`.
    pub fn backward(&self, fwd: &Forward, target: NodeId) -> Result<Gradients> {
        if target >= self.nodes.len() {
            return Err(Error::InvalidInput(format!("unknown target node {target}")));
        }
        if self.nodes[target].shape.iter().product::<usize>() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward target must be scalar, node {target} has shape {:?}",
                self.nodes[target].shape
            )));
        }
        if fwd.values.len() != self.nodes.len() {
            return Err(Error::InvalidInput("forward record belongs to another graph".into()));
        }
        let mut grads: Vec<Tensor> = self.nodes.iter().map(|n| Tensor::zeros(&n.shape)).collect();
        let mut reached = vec![false; self.nodes.len()];
        grads[target].data[0] = 1.0;
        reached[target] = true;

        for id in (0..=target).rev() {
            if !reached[id] {
                continue;
            }
            let g = std::mem::take(&mut grads[id].data);
            let contributions = self.node_vjp(id, &g, fwd);
            grads[id].data = g;
            for (operand, delta) in contributions {
                if matches!(self.nodes[operand].op, Op::Constant(_)) {
                    continue;
                }
                for (a, b) in grads[operand].data.iter_mut().zip(&delta) {
                    *a += b;
                }
                reached[operand] = true;
            }
        }
        Ok(Gradients { grads })
    }

    fn node_vjp(&self, id: NodeId, g: &[f64], fwd: &Forward) -> Vec<(NodeId, Vec<f64>)> {
        let v = &fwd.values;
        match &self.nodes[id].op {
            Op::Input { .. } | Op::Constant(_) => vec![],
            Op::Dense { x, weight, bias } => {
                let (dx, dw, db) = ops::dense_backward(g, v[*x].data(), v[*weight].data());
                vec![(*x, dx), (*weight, dw), (*bias, db)]
            }
            Op::Conv2d { x, kernel, bias } => {
                let d = self.conv_dims(*x, *kernel);
                let (dx, dk, db) = ops::conv2d_backward(g, v[*x].data(), v[*kernel].data(), d);
                vec![(*x, dx), (*kernel, dk), (*bias, db)]
            }
            Op::Relu(a) => {
                let d = zip_with(g, v[*a].data(), |gv, x| if x > 0.0 { gv } else { 0.0 });
                vec![(*a, d)]
            }
            Op::Tanh(a) => {
                let d = zip_with(g, v[id].data(), |gv, y| gv * (1.0 - y * y));
                vec![(*a, d)]
            }
            Op::MaxPool2(a) => {
                let s = &self.nodes[*a].shape;
                vec![(*a, ops::maxpool2_backward(g, v[*a].data(), s[0], s[1], s[2]))]
            }
            Op::Flatten(a) => vec![(*a, g.to_vec())],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => vec![
                (*a, zip_with(g, v[*b].data(), |x, y| x * y)),
                (*b, zip_with(g, v[*a].data(), |x, y| x * y)),
            ],
            Op::Sum(a) => vec![(*a, vec![g[0]; v[*a].len()])],
            Op::Mean(a) => {
                let n = v[*a].len().max(1) as f64;
                vec![(*a, vec![g[0] / n; v[*a].len()])]
            }
            Op::L2Norm(a) => {
                let norm = v[id].data()[0];
                let d = if norm > 0.0 {
                    v[*a].data().iter().map(|x| g[0] * x / norm).collect()
                } else {
                    vec![0.0; v[*a].len()]
                };
                vec![(*a, d)]
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let (dz, dt) =
                    ops::softmax_xent_backward(g[0], v[*logits].data(), v[*target].data());
                vec![(*logits, dz), (*target, dt)]
            }
        }
    }

    /// Central-difference estimate of `∂target/∂wrt`, perturbing the output of
    /// node `wrt` one coordinate at a time and recomputing everything
    /// downstream of it.
    pub fn finite_difference(
        &self,
        inputs: &[&Tensor],
        target: NodeId,
        wrt: NodeId,
        h: f64,
    ) -> Result<Tensor> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
        }
        let base = self.forward(inputs)?;
        let mut point = base.value(wrt).clone();
        let mut grad = Tensor::zeros(&self.nodes[wrt].shape);
        for i in 0..point.len() {
            let orig = point.data[i];
            point.data[i] = orig + h;
            let plus = self.forward_with_override(inputs, wrt, &point)?.value(target).item()?;
            point.data[i] = orig - h;
            let minus = self.forward_with_override(inputs, wrt, &point)?.value(target).item()?;
            point.data[i] = orig;
            grad.data[i] = (plus - minus) / (2.0 * h);
        }
        Ok(grad)
    }

    /// Central differences over a subset of coordinates of `wrt`.
    pub fn finite_difference_at(
        &self,
        inputs: &[&Tensor],
        target: NodeId,
        wrt: NodeId,
        coords: &[usize],
        h: f64,
    ) -> Result<Vec<f64>> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
        }
        let base = self.forward(inputs)?;
        let mut point = base.value(wrt).clone();
        coords
            .iter()
            .map(|&i| {
                let orig = point.data[i];
                point.data[i] = orig + h;
                let plus = self.forward_with_override(inputs, wrt, &point)?.value(target).item()?;
                point.data[i] = orig - h;
                let minus = self.forward_with_override(inputs, wrt, &point)?.value(target).item()?;
                point.data[i] = orig;
                Ok((plus - minus) / (2.0 * h))
            })
            .collect()
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_input(b: &mut GraphBuilder, n: usize) -> NodeId {
        b.input(&[n])
    }

    #[test]
    fn identity_graph_returns_input() {
        let mut b = GraphBuilder::new();
        let x = vec_input(&mut b, 3);
        let g = b.build();
        let input = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let f = g.forward(&[&input]).unwrap();
        assert_eq!(f.value(x).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn identity_dense_layer() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[2]);
        let w = b.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let bias = b.constant(Tensor::zeros(&[2]));
        let y = b.dense(x, w, bias).unwrap();
        let g = b.build();
        let f = g.forward(&[&Tensor::vector(vec![3.0, -1.0])]).unwrap();
        assert_eq!(f.value(y).data(), &[3.0, -1.0]);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let mut b = GraphBuilder::new();
        b.input(&[3]);
        let g = b.build();
        let err = g.forward(&[&Tensor::vector(vec![1.0, 2.0])]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(matches!(g.forward(&[]).unwrap_err(), Error::Shape(_)));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[4]);
        let s = b.sum(x).unwrap();
        let g = b.build();
        let input = Tensor::vector(vec![0.3, -2.0, 5.0, 1.0]);
        let f = g.forward(&[&input]).unwrap();
        let grads = g.backward(&f, s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0; 4]);
    }

    #[test]
    fn dot_product_gradients_swap_operands() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[3]);
        let w = b.input(&[3]);
        let p = b.mul(x, w).unwrap();
        let s = b.sum(p).unwrap();
        let g = b.build();
        let xv = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let wv = Tensor::vector(vec![-1.0, 0.5, 4.0]);
        let f = g.forward(&[&xv, &wv]).unwrap();
        let grads = g.backward(&f, s).unwrap();
        assert_eq!(grads.wrt(x).data(), wv.data());
        assert_eq!(grads.wrt(w).data(), xv.data());
    }

    #[test]
    fn non_scalar_target_is_rejected() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[3]);
        let r = b.relu(x).unwrap();
        let g = b.build();
        let f = g.forward(&[&Tensor::vector(vec![1.0, 2.0, 3.0])]).unwrap();
        assert!(matches!(g.backward(&f, r), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constant_gradient_is_zero() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[2]);
        let c = b.constant(Tensor::vector(vec![2.0, 3.0]));
        let p = b.mul(x, c).unwrap();
        let s = b.sum(p).unwrap();
        let g = b.build();
        let f = g.forward(&[&Tensor::vector(vec![1.0, 1.0])]).unwrap();
        let grads = g.backward(&f, s).unwrap();
        assert_eq!(grads.wrt(c).data(), &[0.0, 0.0]);
        assert_eq!(grads.wrt(x).data(), &[2.0, 3.0]);
    }

    #[test]
    fn finite_difference_of_square() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[1]);
        let sq = b.mul(x, x).unwrap();
        let g = b.build();
        let fd = g
            .finite_difference(&[&Tensor::scalar(3.0)], sq, x, 1e-5)
            .unwrap();
        assert!((fd.data()[0] - 6.0).abs() < 1e-6);
        let f = g.forward(&[&Tensor::scalar(3.0)]).unwrap();
        assert_eq!(g.backward(&f, sq).unwrap().wrt(x).data(), &[6.0]);
    }

    #[test]
    fn finite_difference_of_tanh_sum_at_zero() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[5]);
        let t = b.tanh(x).unwrap();
        let s = b.sum(t).unwrap();
        let g = b.build();
        let fd = g.finite_difference(&[&Tensor::zeros(&[5])], s, x, 1e-5).unwrap();
        for v in fd.data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_difference_rejects_nonpositive_step() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[1]);
        let s = b.sum(x).unwrap();
        let g = b.build();
        assert!(g.finite_difference(&[&Tensor::scalar(1.0)], s, x, 0.0).is_err());
    }

    #[test]
    fn max_pool_ties_route_to_first() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[1, 2, 2]);
        let p = b.max_pool2(x).unwrap();
        let s = b.sum(p).unwrap();
        let g = b.build();
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let f = g.forward(&[&input]).unwrap();
        let grads = g.backward(&f, s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let mut b = GraphBuilder::new();
        let z = b.input(&[3]);
        let t = b.input(&[3]);
        let l = b.softmax_cross_entropy(z, t).unwrap();
        let g = b.build();
        let zv = Tensor::vector(vec![1.0, 2.0, 0.5]);
        let tv = Tensor::one_hot(3, 1);
        let f = g.forward(&[&zv, &tv]).unwrap();
        let lse = (1f64.exp() + 2f64.exp() + 0.5f64.exp()).ln();
        assert!((f.value(l).data()[0] - (lse - 2.0)).abs() < 1e-12);
        let grads = g.backward(&f, l).unwrap();
        let fd = g.finite_difference(&[&zv, &tv], l, z, 1e-5).unwrap();
        for (a, b) in grads.wrt(z).data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let mut b = GraphBuilder::new();
        let x = b.input(&[1, 6, 6]);
        let k = b.constant(Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        let bias = b.constant(Tensor::vector(vec![0.1, -0.2]));
        let c = b.conv2d(x, k, bias).unwrap();
        let t = b.tanh(c).unwrap();
        let n = b.l2_norm(t).unwrap();
        let g = b.build();
        let input = Tensor::new(vec![1, 6, 6], (0..36).map(|i| (i as f64).cos()).collect()).unwrap();
        let a = g.forward(&[&input]).unwrap();
        let b2 = g.forward(&[&input]).unwrap();
        for (u, v) in a.values().iter().zip(b2.values()) {
            let ub: Vec<u64> = u.data().iter().map(|f| f.to_bits()).collect();
            let vb: Vec<u64> = v.data().iter().map(|f| f.to_bits()).collect();
            assert_eq!(ub, vb);
        }
        assert!(a.value(n).item().unwrap() > 0.0);
    }
}
