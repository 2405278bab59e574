use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Weight initialisation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform with bound `sqrt(6 / fan_in)`, for layers followed by ReLU.
    KaimingRelu,
    /// Uniform with bound `sqrt(3 / fan_in)`, for linear outputs.
    KaimingLinear,
    /// Uniform with an explicit bound.
    Uniform(f64),
}

/// Fully connected layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = match init {
            Init::KaimingRelu => (6.0 / in_dim as f64).sqrt(),
            Init::KaimingLinear => (3.0 / in_dim as f64).sqrt(),
            Init::Uniform(b) => b,
        };
        let data: Vec<f64> = if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect()
        } else {
            vec![0.0; in_dim * out_dim]
        };
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::matrix(in_dim, out_dim, data).expect("sized"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Stack of linear layers with ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply ReLU after the last layer too.
    pub relu_last: bool,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        relu_last: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let last = if relu_last { Init::KaimingRelu } else { Init::KaimingLinear };
        Self::with_output_init(store, name, dims, relu_last, last, rng)
    }

    /// Like [`Mlp::new`] with an explicit initialisation for the last layer.
    pub fn with_output_init(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        relu_last: bool,
        last_init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 < n { Init::KaimingRelu } else { last_init };
                Linear::new(store, &format!("{name}.{i}"), dims[i], dims[i + 1], init, rng)
            })
            .collect();
        Self { layers, relu_last }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i + 1 < n || self.relu_last {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }
}

/// Shared per-point MLP followed by max-pooling over each cloud.
///
/// Input is a `[clouds * points, 3]` stack; output is `[clouds, channels]`.
/// Max-pooling makes the feature invariant to point order.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    pub mlp: Mlp,
}

impl PointEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        channels: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(channels);
        Self {
            mlp: Mlp::new(store, name, &dims, true, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        points: Var,
        points_per_cloud: usize,
    ) -> Result<Var> {
        let per_point = self.mlp.forward(g, store, points)?;
        g.segment_max(per_point, points_per_cloud)
    }
}
