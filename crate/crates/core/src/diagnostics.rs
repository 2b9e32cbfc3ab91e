//! Brooks-Gelman diagnostics, autocorrelation and credible intervals.

use crate::error::{Result, SepError};

/// `m` chains of `n` scalar samples each.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    chains: Vec<Vec<f64>>,
}

impl ChainSet {
    pub fn new(chains: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = chains.first() else {
            return Err(SepError::Empty("chain set has no chains".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(SepError::Empty("chains have no samples".into()));
        }
        if let Some(j) = chains.iter().position(|c| c.len() != n) {
            return Err(SepError::Shape(format!(
                "chain {} has {} samples, expected {n}",
                j + 1,
                chains[j].len()
            )));
        }
        Ok(Self { chains })
    }

    pub fn m(&self) -> usize {
        self.chains.len()
    }

    pub fn n(&self) -> usize {
        self.chains[0].len()
    }

    pub fn chain(&self, j: usize) -> &[f64] {
        &self.chains[j]
    }

    pub fn chains(&self) -> &[Vec<f64>] {
        &self.chains
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.chains.iter().flatten().copied().collect()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.pooled())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// `B / n`: variance of the chain means with divisor `m - 1`.
pub fn between_chain_var(c: &ChainSet) -> Result<f64> {
    if c.m() < 2 {
        return Err(SepError::Shape(
            "between-chain variance needs at least two chains".into(),
        ));
    }
    let means: Vec<f64> = c.chains.iter().map(|ch| mean(ch)).collect();
    Ok(sample_variance(&means))
}

/// `W`: mean of the per-chain sample variances.
pub fn within_chain_var(c: &ChainSet) -> Result<f64> {
    if c.n() < 2 {
        return Err(SepError::Shape(
            "within-chain variance needs at least two samples per chain".into(),
        ));
    }
    Ok(c.chains.iter().map(|ch| sample_variance(ch)).sum::<f64>() / c.m() as f64)
}

/// `(sigma2_plus, V_hat)` from `B/n` and `W`.
pub fn pooled_estimates(b_over_n: f64, w: f64, m: usize, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    let sigma2_plus = (n_f - 1.0) / n_f * w + b_over_n;
    (sigma2_plus, sigma2_plus + b_over_n / m as f64)
}

/// Both forms of the potential scale reduction factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psrf {
    Value {
        /// `(m + 1)/m * sigma2_plus / W - (n - 1)/(m n)`.
        classic: f64,
        /// `V_hat / W`.
        ratio: f64,
    },
    /// `W = 0` with spread between chains.
    Divergent,
    /// `W = 0` and `B = 0`.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsrfReport {
    pub w: f64,
    pub b_over_n: f64,
    pub sigma2_plus: f64,
    pub v_hat: f64,
    pub psrf: Psrf,
}

pub fn psrf(c: &ChainSet) -> Result<PsrfReport> {
    let b_over_n = between_chain_var(c)?;
    let w = within_chain_var(c)?;
    let (m, n) = (c.m(), c.n());
    let (sigma2_plus, v_hat) = pooled_estimates(b_over_n, w, m, n);
    let psrf = if w == 0.0 {
        if b_over_n > 0.0 {
            Psrf::Divergent
        } else {
            Psrf::Degenerate
        }
    } else {
        let (m_f, n_f) = (m as f64, n as f64);
        Psrf::Value {
            classic: (m_f + 1.0) / m_f * sigma2_plus / w - (n_f - 1.0) / (m_f * n_f),
            ratio: v_hat / w,
        }
    };
    Ok(PsrfReport {
        w,
        b_over_n,
        sigma2_plus,
        v_hat,
        psrf,
    })
}

/// Sample autocorrelation at `lag` (autocovariance over variance, both with divisor `n`).
pub fn autocorrelation(chain: &[f64], lag: usize) -> Result<f64> {
    let n = chain.len();
    if lag >= n {
        return Err(SepError::Domain(format!(
            "lag {lag} must be below the chain length {n}"
        )));
    }
    let m = mean(chain);
    let var: f64 = chain.iter().map(|v| (v - m) * (v - m)).sum();
    if var == 0.0 {
        return Err(SepError::Numeric("autocorrelation of a constant chain".into()));
    }
    let cov: f64 = chain[..n - lag]
        .iter()
        .zip(&chain[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    Ok(cov / var)
}

/// Quantile with linear interpolation between order statistics at
/// position `p (n - 1)` (zero based).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central credible interval at `level`.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(SepError::Empty("credible interval of no samples".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(SepError::Domain(format!("level must lie in (0, 1), got {level}")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok((quantile(&s, (1.0 - level) / 2.0), quantile(&s, (1.0 + level) / 2.0)))
}
