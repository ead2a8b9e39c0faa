//! One forward pass: a tape, the parameter snapshot it reads, and the
//! dropout stream when training.

use crate::numerics::{Matrix, ParamId, ParamStore, Rng, Tape, Var};

pub struct Graph<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    dropout: Option<(f64, Rng)>,
}

impl<'s> Graph<'s> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn eval(store: &'s ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            dropout: None,
        }
    }

    /// Training-mode graph; a zero rate behaves like [`Graph::eval`].
    pub fn train(store: &'s ParamStore, rate: f64, rng: Rng) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self {
            tape: Tape::new(),
            store,
            dropout: (rate > 0.0).then_some((rate, rng)),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.tape.constant(m)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.tape.value(v)
    }

    /// `x · W` for a parameter `W`.
    pub fn linear(&mut self, x: Var, w: ParamId) -> Var {
        let w = self.p(w);
        self.tape.matmul(x, w)
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let rate = *rate;
        let (r, c) = self.tape.value(x).shape();
        let keep = 1.0 / (1.0 - rate);
        let mask = Matrix::from_fn(r, c, |_, _| if rng.uniform() < rate { 0.0 } else { keep });
        let m = self.tape.constant(mask);
        self.tape.mul(x, m)
    }
}
