//! Stationary kernels, Gram matrices on the integer time grid, GP draws.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Starting jitter added to the Gram diagonal before factorization.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Largest jitter tolerated, relative to the kernel variance.
pub const MAX_RELATIVE_JITTER: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `σ² (1 + (τ−τ′)²/l²)⁻¹`
    Cauchy { variance: f64, length_scale: f64 },
    /// `σ² exp(−(τ−τ′)²/(2l²))`
    Rbf { variance: f64, length_scale: f64 },
    Constant { variance: f64 },
    Sum { members: Vec<KernelSpec> },
    Scaled { weight: f64, inner: Box<KernelSpec> },
}

impl KernelSpec {
    pub fn cauchy(variance: f64, length_scale: f64) -> Result<Self> {
        let k = KernelSpec::Cauchy {
            variance,
            length_scale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn rbf(variance: f64, length_scale: f64) -> Result<Self> {
        let k = KernelSpec::Rbf {
            variance,
            length_scale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn constant(variance: f64) -> Result<Self> {
        let k = KernelSpec::Constant { variance };
        k.validate()?;
        Ok(k)
    }

    /// `rbf_weight · RBF(1, l) + (1 − rbf_weight) · Constant(1)`, unit total variance.
    pub fn rbf_plus_constant(length_scale: f64, rbf_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rbf_weight) {
            return Err(Error::InvalidKernel(format!(
                "rbf weight {rbf_weight} outside [0, 1]"
            )));
        }
        let mut members = Vec::new();
        if rbf_weight > 0.0 {
            members.push(KernelSpec::Scaled {
                weight: rbf_weight,
                inner: Box::new(KernelSpec::rbf(1.0, length_scale)?),
            });
        }
        if rbf_weight < 1.0 {
            members.push(KernelSpec::Scaled {
                weight: 1.0 - rbf_weight,
                inner: Box::new(KernelSpec::Constant { variance: 1.0 }),
            });
        }
        let k = KernelSpec::Sum { members };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidKernel(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            KernelSpec::Cauchy {
                variance,
                length_scale,
            }
            | KernelSpec::Rbf {
                variance,
                length_scale,
            } => {
                positive("variance", *variance)?;
                positive("length_scale", *length_scale)
            }
            KernelSpec::Constant { variance } => positive("variance", *variance),
            KernelSpec::Sum { members } => {
                if members.is_empty() {
                    return Err(Error::InvalidKernel("sum kernel has no members".into()));
                }
                members.iter().try_for_each(KernelSpec::validate)
            }
            KernelSpec::Scaled { weight, inner } => {
                positive("weight", *weight)?;
                inner.validate()
            }
        }
    }

    /// Kernel value at lag `τ − τ′`.
    pub fn eval(&self, tau: f64, tau_prime: f64) -> f64 {
        let r = tau - tau_prime;
        match self {
            KernelSpec::Cauchy {
                variance,
                length_scale,
            } => variance / (1.0 + r * r / (length_scale * length_scale)),
            KernelSpec::Rbf {
                variance,
                length_scale,
            } => variance * (-0.5 * r * r / (length_scale * length_scale)).exp(),
            KernelSpec::Constant { variance } => *variance,
            KernelSpec::Sum { members } => members.iter().map(|k| k.eval(tau, tau_prime)).sum(),
            KernelSpec::Scaled { weight, inner } => weight * inner.eval(tau, tau_prime),
        }
    }

    /// Marginal variance `k(τ, τ)`.
    pub fn variance(&self) -> f64 {
        self.eval(0.0, 0.0)
    }
}

/// Kernel matrix on the grid `0..T` together with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    base: DMatrix<f64>,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.base.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.base.nrows() == 0
    }

    /// Kernel values before jitter.
    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `K + jitter·I`, the matrix that was factorized.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        &self.base + DMatrix::identity(n, n) * self.jitter
    }

    /// Lower-triangular `L` with `L Lᵀ = K + jitter·I`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..self.len()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Gram matrix of `spec` on the integer grid `0..len`.
///
/// Jitter starts at `jitter_start` and grows ×10 until the Cholesky
/// factorization succeeds; exceeding `1e-2·σ²` is an error.
pub fn gram(spec: &KernelSpec, len: usize, jitter_start: f64) -> Result<GramMatrix> {
    spec.validate()?;
    if len == 0 {
        return Err(Error::Dimension("gram matrix needs at least one time step".into()));
    }
    let base = DMatrix::from_fn(len, len, |i, j| spec.eval(i as f64, j as f64));
    let limit = MAX_RELATIVE_JITTER * spec.variance();
    let mut jitter = jitter_start;
    loop {
        if jitter > limit {
            return Err(Error::IllConditioned { jitter, limit });
        }
        let jittered = &base + DMatrix::identity(len, len) * jitter;
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(GramMatrix { base, jitter, chol });
        }
        jitter *= 10.0;
    }
}

/// `L ε` for a caller-supplied standard-normal vector `ε`.
pub fn sample_gp_with(gram: &GramMatrix, eps: &[f64]) -> Vec<f64> {
    let l = gram.chol.l_dirty();
    let n = gram.len();
    (0..n)
        .map(|i| (0..=i).map(|j| l[(i, j)] * eps[j]).sum())
        .collect()
}

/// One zero-mean draw from the GP restricted to the grid.
pub fn sample_gp<R: Rng + ?Sized>(gram: &GramMatrix, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..gram.len()).map(|_| rng.sample(StandardNormal)).collect();
    sample_gp_with(gram, &eps)
}

/// Solves `K x = b` with the stored factor.
pub fn solve(gram: &GramMatrix, b: &[f64]) -> Vec<f64> {
    gram.chol
        .solve(&DVector::from_column_slice(b))
        .as_slice()
        .to_vec()
}
