//! Smoothing kernels supported on `[-1/2, 1/2]`.
//!
//! Every kernel is stored as a polynomial in `u` on its support, which gives
//! exact derivatives (needed by the pilot estimator) and an exact
//! antiderivative (needed by the closed-form local-constant estimator).

use serde::{Deserialize, Serialize};

use crate::quad;
use crate::{Error, Result};

pub const HALF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Uniform,
    Epanechnikov,
    Biweight,
    Triweight,
    Custom,
}

/// `beta_K = ∫u²K`, `gamma_K = ∫K²`, `delta_K = ∫u²K²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub beta_k: f64,
    pub gamma_k: f64,
    pub delta_k: f64,
}

impl KernelConstants {
    /// The product minimised by the Epanechnikov kernel.
    pub fn efficiency_product(&self) -> f64 {
        self.beta_k * self.gamma_k * self.gamma_k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct Kernel {
    kind: KernelKind,
    /// Ascending polynomial coefficients on `[-1/2, 1/2]`.
    coefficients: Vec<f64>,
    /// Antiderivative coefficients, normalised to vanish at `u = -1/2`.
    primitive: Vec<f64>,
    constants: KernelConstants,
}

/// Serialized form: a built-in name or custom coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Named(String),
    Custom { coefficients: Vec<f64> },
}

impl TryFrom<KernelSpec> for Kernel {
    type Error = Error;
    fn try_from(spec: KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Named(name) => Kernel::from_name(&name),
            KernelSpec::Custom { coefficients } => Kernel::custom(coefficients),
        }
    }
}

impl From<Kernel> for KernelSpec {
    fn from(k: Kernel) -> Self {
        match k.kind {
            KernelKind::Custom => KernelSpec::Custom {
                coefficients: k.coefficients,
            },
            _ => KernelSpec::Named(k.name().to_string()),
        }
    }
}

fn poly_eval(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * u + a)
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &a)| k as f64 * a)
        .collect()
}

fn poly_primitive(c: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(c.len() + 1);
    p.push(0.0);
    p.extend(c.iter().enumerate().map(|(k, &a)| a / (k as f64 + 1.0)));
    p[0] = -poly_eval(&p, -HALF);
    p
}

impl Kernel {
    fn built_in(kind: KernelKind, coefficients: Vec<f64>, constants: KernelConstants) -> Self {
        let primitive = poly_primitive(&coefficients);
        Self {
            kind,
            coefficients,
            primitive,
            constants,
        }
    }

    pub fn uniform() -> Self {
        Self::built_in(
            KernelKind::Uniform,
            vec![1.0],
            KernelConstants {
                beta_k: 1.0 / 12.0,
                gamma_k: 1.0,
                delta_k: 1.0 / 12.0,
            },
        )
    }

    /// `K(u) = (3/2)(1 - 4u²)`.
    pub fn epanechnikov() -> Self {
        Self::built_in(
            KernelKind::Epanechnikov,
            vec![1.5, 0.0, -6.0],
            KernelConstants {
                beta_k: 1.0 / 20.0,
                gamma_k: 6.0 / 5.0,
                delta_k: 3.0 / 70.0,
            },
        )
    }

    /// `K(u) = (15/8)(1 - 4u²)²`.
    pub fn biweight() -> Self {
        Self::built_in(
            KernelKind::Biweight,
            vec![15.0 / 8.0, 0.0, -15.0, 0.0, 30.0],
            KernelConstants {
                beta_k: 1.0 / 28.0,
                gamma_k: 10.0 / 7.0,
                delta_k: 5.0 / 154.0,
            },
        )
    }

    /// `K(u) = (35/16)(1 - 4u²)³`; twice continuously differentiable on the line.
    pub fn triweight() -> Self {
        Self::built_in(
            KernelKind::Triweight,
            vec![35.0 / 16.0, 0.0, -105.0 / 4.0, 0.0, 105.0, 0.0, -140.0],
            KernelConstants {
                beta_k: 1.0 / 36.0,
                gamma_k: 700.0 / 429.0,
                delta_k: 35.0 / 1287.0,
            },
        )
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "uniform" | "rectangular" => Ok(Self::uniform()),
            "epanechnikov" | "epan" => Ok(Self::epanechnikov()),
            "biweight" | "quartic" => Ok(Self::biweight()),
            "triweight" => Ok(Self::triweight()),
            other => Err(Error::InvalidKernel(format!("unknown kernel `{other}`"))),
        }
    }

    /// A custom polynomial kernel `K(u) = Σ c_k u^k` on `[-1/2, 1/2]`.
    ///
    /// The kernel must be symmetric, nonnegative on its support and integrate
    /// to one; the moment constants are obtained by adaptive quadrature.
    pub fn custom(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidKernel(
                "coefficients must be finite and nonempty".into(),
            ));
        }
        let k = |u: f64| poly_eval(&coefficients, u);
        for i in 0..=1000 {
            let u = -HALF + i as f64 / 1000.0;
            let (a, b) = (k(u), k(-u));
            if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
                return Err(Error::InvalidKernel(format!("not symmetric at u = {u}")));
            }
            if a < -1e-12 {
                return Err(Error::InvalidKernel(format!("negative at u = {u}")));
            }
        }
        let tol = 1e-12;
        let mass = quad::adaptive(k, -HALF, HALF, tol)?;
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidKernel(format!(
                "integrates to {mass}, expected 1"
            )));
        }
        let beta_k = quad::adaptive(|u| u * u * k(u), -HALF, HALF, tol)?;
        let gamma_k = quad::adaptive(|u| k(u) * k(u), -HALF, HALF, tol)?;
        let delta_k = quad::adaptive(|u| u * u * k(u) * k(u), -HALF, HALF, tol)?;
        let constants = KernelConstants {
            beta_k,
            gamma_k,
            delta_k,
        };
        let primitive = poly_primitive(&coefficients);
        Ok(Self {
            kind: KernelKind::Custom,
            coefficients,
            primitive,
            constants,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            KernelKind::Uniform => "uniform",
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Biweight => "biweight",
            KernelKind::Triweight => "triweight",
            KernelKind::Custom => "custom",
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn constants(&self) -> KernelConstants {
        self.constants
    }

    /// `K(u)`, zero outside the closed support.
    #[inline]
    pub fn evaluate(&self, u: f64) -> f64 {
        if u.abs() > HALF {
            0.0
        } else {
            poly_eval(&self.coefficients, u)
        }
    }

    /// `K'(u)` inside the support, zero outside.
    pub fn derivative(&self, u: f64) -> f64 {
        if u.abs() > HALF {
            0.0
        } else {
            poly_eval(&poly_derivative(&self.coefficients), u)
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        if u.abs() > HALF {
            0.0
        } else {
            poly_eval(&poly_derivative(&poly_derivative(&self.coefficients)), u)
        }
    }

    /// `∫_{-1/2}^{u} K`, clamped to `[0, 1]` outside the support.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= -HALF {
            0.0
        } else if u >= HALF {
            poly_eval(&self.primitive, HALF)
        } else {
            poly_eval(&self.primitive, u)
        }
    }

    /// Polynomial degree on the support.
    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }
}
