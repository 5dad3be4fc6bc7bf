use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, TapeError, Tensor, Var};

/// One fully connected layer, `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Rectified feed-forward network; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Tape handles of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var)>,
}

impl Mlp {
    /// He-uniform hidden layers and a down-scaled output layer, so that an
    /// untrained network starts close to the zero map.
    pub fn init(widths: &[usize], output_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / w[0] as f64).sqrt() * if i + 1 == n { output_gain } else { 1.0 };
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..=bound)).collect();
                Layer {
                    weight: Tensor::new(w[0], w[1], data),
                    bias: Tensor::zeros(1, w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    /// All-zero network of the given shape.
    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Layer {
                    weight: Tensor::zeros(w[0], w[1]),
                    bias: Tensor::zeros(1, w[1]),
                })
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weight.rows).collect();
        w.extend(self.layers.last().map(|l| l.weight.cols));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Records the parameters on a tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            layers: self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect(),
        }
    }

    /// Evaluates without recording gradients.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor, TapeError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = bound.apply(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

impl BoundMlp {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, TapeError> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}
