//! Spectral normalization: divide a weight matrix by its largest singular
//! value, estimated with power iteration on a persistent vector pair.

use crate::error::{Error, Result};
use crate::tensor::{GradTape, Tensor, ValueId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Below this estimate the matrix is treated as zero and left unchanged.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent left/right singular-vector estimates for one weight matrix.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > SIGMA_FLOOR {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

impl SpectralState {
    pub fn new<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        normalize(&mut u);
        normalize(&mut v);
        SpectralState { u, v }
    }

    /// Run `iters` power iterations against `w` (rows×cols) and return the
    /// refreshed spectral-norm estimate u'Wv.
    pub fn refresh(&mut self, w: &Tensor, iters: usize) -> f64 {
        let (r, c) = (w.rows(), w.cols());
        debug_assert_eq!(self.u.len(), r);
        debug_assert_eq!(self.v.len(), c);
        for _ in 0..iters {
            // v ← normalize(Wᵀu)
            for j in 0..c {
                let mut s = 0.0;
                for i in 0..r {
                    s += w.at(i, j) * self.u[i];
                }
                self.v[j] = s;
            }
            if normalize(&mut self.v) <= SIGMA_FLOOR {
                return 0.0;
            }
            // u ← normalize(Wv)
            for (i, ui) in self.u.iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..c {
                    s += w.at(i, j) * self.v[j];
                }
                *ui = s;
            }
            if normalize(&mut self.u) <= SIGMA_FLOOR {
                return 0.0;
            }
        }
        self.sigma(w)
    }

    /// u'Wv with the current vectors, no iteration.
    pub fn sigma(&self, w: &Tensor) -> f64 {
        let (r, c) = (w.rows(), w.cols());
        let mut s = 0.0;
        for i in 0..r {
            for j in 0..c {
                s += self.u[i] * w.at(i, j) * self.v[j];
            }
        }
        s
    }
}

/// Normalize a matrix by its estimated largest singular value.
///
/// Rank-2 input required (flatten higher ranks first). A zero matrix
/// (estimate below [`SIGMA_FLOOR`]) is returned unchanged.
pub fn spectral_normalize(w: &Tensor, power_iters: usize) -> Result<(Tensor, f64)> {
    if w.rank() != 2 {
        return Err(Error::Contract(format!(
            "spectral_normalize expects a matrix, got {:?}",
            w.shape()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut state = SpectralState::new(w.rows(), w.cols(), &mut rng);
    let sigma = state.refresh(w, power_iters);
    if sigma <= SIGMA_FLOOR {
        return Ok((w.clone(), sigma));
    }
    let data: Vec<f64> = w.data().iter().map(|x| x / sigma).collect();
    Ok((Tensor::new(w.shape().to_vec(), data)?, sigma))
}

/// Emit W/σ on the tape with σ = u'Wv and (u, v) held constant, so the
/// −W·(g·W)/σ² term flows into W's gradient exactly.
pub fn normalize_on_tape(
    tape: &mut GradTape,
    w: ValueId,
    state: &SpectralState,
) -> Result<ValueId> {
    let (rows, cols) = {
        let t = tape.value(w);
        (t.rows(), t.cols())
    };
    let u = tape.constant(Tensor::new(vec![1, rows], state.u.clone())?);
    let v = tape.constant(Tensor::new(vec![cols, 1], state.v.clone())?);
    let uw = tape.matmul(u, w)?;
    let sigma = tape.matmul(uw, v)?; // [1,1]
    if tape.value(sigma).item().abs() <= SIGMA_FLOOR {
        return Ok(w);
    }
    tape.div(w, sigma)
}
