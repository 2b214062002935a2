//! Small statistics helpers for cross-seed aggregation.

use serde::{Deserialize, Serialize};

/// Mean and standard error over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    /// Sample standard deviation over `√n`; 0 when `n < 2`.
    pub stderr: f64,
    pub n: usize,
    /// False when `n < 2` and the stderr is a placeholder.
    pub stderr_defined: bool,
}

pub fn mean_stderr(values: &[f64]) -> MeanStderr {
    let n = values.len();
    if n == 0 {
        return MeanStderr {
            mean: f64::NAN,
            stderr: 0.0,
            n,
            stderr_defined: false,
        };
    }
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n as f64;
    if n < 2 {
        return MeanStderr {
            mean,
            stderr: 0.0,
            n,
            stderr_defined: false,
        };
    }
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    let sd = (ss / (n - 1) as f64).sqrt();
    MeanStderr {
        mean,
        stderr: sd / (n as f64).sqrt(),
        n,
        stderr_defined: true,
    }
}

/// One-sided sign test: `P(X ≥ wins)` for `X ~ Binomial(trials, 1/2)`.
pub fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut tail = 0.0;
    for k in wins..=trials {
        tail += binomial(trials, k);
    }
    tail / 2f64.powi(trials as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}
