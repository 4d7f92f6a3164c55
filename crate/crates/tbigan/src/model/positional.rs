//! Positional encodings for the token sequence.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Fixed sinusoidal table or a trainable one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalMode {
    SinusoidalFixed,
    Learnable,
}

/// Standard interleaved sin/cos table: row `p`, columns `2i`/`2i+1` hold
/// `sin(p·ω_i)` / `cos(p·ω_i)` with `ω_i = 10000^(−2i/d)`.
pub fn sinusoidal_table(len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; len * d_model];
    for p in 0..len {
        for i in 0..d_model.div_ceil(2) {
            let omega = 10_000_f64.powf(-((2 * i) as f64) / d_model as f64);
            let angle = p as f64 * omega;
            data[p * d_model + 2 * i] = angle.sin();
            if 2 * i + 1 < d_model {
                data[p * d_model + 2 * i + 1] = angle.cos();
            }
        }
    }
    Tensor::new(vec![len, d_model], data).expect("sinusoids are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_is_sin0_cos1() {
        let t = sinusoidal_table(4, 8);
        for i in 0..4 {
            let v = t.at(0, i);
            assert_eq!(v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn deterministic_across_calls() {
        assert_eq!(sinusoidal_table(16, 32), sinusoidal_table(16, 32));
    }

    #[test]
    fn matches_direct_formula_recomputation() {
        let (len, d) = (32, 12);
        let t = sinusoidal_table(len, d);
        for p in 0..len {
            for j in 0..d {
                let i = j / 2;
                let omega = 10_000_f64.powf(-((2 * i) as f64) / d as f64);
                let expect = if j % 2 == 0 {
                    (p as f64 * omega).sin()
                } else {
                    (p as f64 * omega).cos()
                };
                assert_eq!(t.at(p, j), expect);
            }
        }
    }
}
