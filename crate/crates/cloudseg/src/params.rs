//! Named parameter registry. Every learnable array (and every running
//! statistic) lives here under a unique name, in registration order, which
//! makes checkpointing, counting, and optimizer state deterministic.

use crate::tensor::TensorId;
use crate::{Graph, Scalar};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<Scalar>,
    /// Running statistics are registered non-trainable: checkpointed but
    /// never bound for gradients or touched by the optimizer.
    pub trainable: bool,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<Scalar>,
        trainable: bool,
    ) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name,
            shape,
            data,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix with uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let a = (6.0 / (rows + cols) as Scalar).sqrt();
        let data: Vec<Scalar> = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, vec![rows, cols], data, true)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>, trainable: bool) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n], trainable)
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: Vec<usize>, trainable: bool) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![1.0; n], trainable)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total element count across the whole registry.
    pub fn count_values(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Element count over trainable entries only.
    pub fn count_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.numel())
            .sum()
    }
}

/// Tape leaves for the trainable parameters of one forward pass.
pub struct Bound {
    ids: Vec<Option<TensorId>>,
}

impl Bound {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0].expect("parameter was bound")
    }
}

/// Load every trainable parameter onto the tape as a differentiable leaf.
pub fn bind_all(store: &ParamStore, tape: &mut Graph) -> Bound {
    let ids = store
        .iter()
        .map(|(_, p)| {
            if p.trainable {
                Some(
                    tape.leaf(&p.shape, p.data.clone())
                        .expect("stored shapes are consistent"),
                )
            } else {
                None
            }
        })
        .collect();
    Bound { ids }
}

/// Gradients for every trainable parameter after a backward pass, aligned
/// with registry order (zeros where no gradient flowed).
pub fn collect_grads(store: &ParamStore, tape: &Graph, bound: &Bound) -> Vec<Vec<Scalar>> {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| match bound.ids[id.0].and_then(|t| tape.grad(t)) {
            Some(g) => g.to_vec(),
            None => vec![0.0; p.numel()],
        })
        .collect()
}
