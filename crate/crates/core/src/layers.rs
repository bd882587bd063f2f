//! Small dense building blocks shared by the model components.

use alloc::format;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::numerics::{uniform, Bound, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

/// Affine map `x·W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Uniform init in `±gain/√inputs`, zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
    ) -> Self {
        let bound = gain / libm::sqrt(inputs as f64);
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[inputs, outputs], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let h = tape.matmul(x, p[self.weight])?;
        tape.add(h, p[self.bias])
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

/// Inverted dropout with its own deterministic stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x).to_vec();
        let keep = 1.0 / (1.0 - self.rate);
        let len = tape.value(x).len();
        let mask = (0..len)
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let mask = tape.constant(Tensor::new(&shape, mask)?);
        tape.mul(x, mask)
    }
}
