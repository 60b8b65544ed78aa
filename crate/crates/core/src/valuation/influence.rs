use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::tinylm::{dot, hessian_unsymmetrized, smallest_eigenvalue, Objective};
use crate::{Error, Result};

/// `grad L(x) . grad L(z)` at the objective's current parameters.
pub fn infl_ip<O: Objective>(obj: &O, z: &O::Example, x: &O::Example) -> Result<f64> {
    let gz = obj.grad(z)?;
    let gx = obj.grad(x)?;
    Ok(dot(&gx, &gz))
}

/// `|infl_ip(z, x) - (L(x, theta) - L(x, theta - eta grad L(z))) / eta|`,
/// the remainder of the first-order loss-change approximation.
pub fn first_order_residual<O: Objective>(obj: &O, z: &O::Example, x: &O::Example, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Invalid(format!("eta must be positive, got {eta}")));
    }
    let theta = obj.current_params();
    let gz = obj.grad(z)?;
    let gx = obj.grad(x)?;
    let stepped: Vec<f64> = theta.iter().zip(&gz).map(|(t, g)| t - eta * g).collect();
    let change = obj.loss_at(theta, x)? - obj.loss_at(&stepped, x)?;
    Ok((dot(&gx, &gz) - change / eta).abs())
}

/// `lambda = rel * |mean diag(H)|`.
pub fn relative_damping(h: &DMatrix<f64>, rel: f64) -> f64 {
    let n = h.nrows().max(1) as f64;
    rel * (h.diagonal().sum() / n).abs()
}

/// Cholesky-factored `H + lambda I`.
#[derive(Debug, Clone)]
pub struct DampedHessian {
    matrix: DMatrix<f64>,
    lambda: f64,
    factor: Cholesky<f64, Dyn>,
}

/// `(H + lambda I)^{-1} grad L(x)` for one test-side task.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseHessianProduct {
    pub values: Vec<f64>,
    pub lambda: f64,
    pub source: String,
    /// `|(H + lambda I) v - g| / |g|` measured after the solve.
    pub relative_residual: f64,
}

impl DampedHessian {
    /// Factors `hessian + lambda I`. `hessian` must already be symmetric.
    pub fn new(hessian: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!("damping must be finite and >= 0, got {lambda}")));
        }
        let mut matrix = hessian;
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += lambda;
        }
        match Cholesky::new(matrix.clone()) {
            Some(factor) => Ok(DampedHessian { matrix, lambda, factor }),
            None => {
                let min_eigenvalue = smallest_eigenvalue(&matrix);
                Err(Error::NotPositiveDefinite {
                    lambda,
                    min_eigenvalue,
                    suggested: lambda - min_eigenvalue,
                })
            }
        }
    }

    /// Finite-difference Hessian of the mean loss over `examples`,
    /// symmetrized and damped.
    pub fn build<O: Objective>(obj: &O, examples: &[O::Example], lambda: f64) -> Result<Self> {
        let raw = hessian_unsymmetrized(obj, examples)?;
        Self::new((&raw + raw.transpose()) * 0.5, lambda)
    }

    /// Like [`DampedHessian::build`] with `lambda = rel * |mean diag(H)|`.
    pub fn build_relative<O: Objective>(obj: &O, examples: &[O::Example], rel: f64) -> Result<Self> {
        let raw = hessian_unsymmetrized(obj, examples)?;
        let h = (&raw + raw.transpose()) * 0.5;
        let lambda = relative_damping(&h, rel);
        Self::new(h, lambda)
    }

    /// Diagnostic curvature `H = I`, no damping.
    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim), 0.0).expect("identity is positive definite")
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The damped matrix `H + lambda I`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn inverse_product(&self, grad: &[f64], source: &str) -> Result<InverseHessianProduct> {
        if grad.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: grad.len(),
            });
        }
        let g = DVector::from_column_slice(grad);
        let v = self.factor.solve(&g);
        let back = &self.matrix * &v;
        let gnorm = g.norm();
        let relative_residual = if gnorm > 0.0 { (back - &g).norm() / gnorm } else { 0.0 };
        Ok(InverseHessianProduct {
            values: v.as_slice().to_vec(),
            lambda: self.lambda,
            source: source.to_string(),
            relative_residual,
        })
    }
}

/// `(H + lambda I)^{-1} grad L(x) . grad L(z)` with the test-side product
/// precomputed.
pub fn infl_hessian<O: Objective>(obj: &O, z: &O::Example, product: &InverseHessianProduct) -> Result<f64> {
    let gz = obj.grad(z)?;
    if gz.len() != product.values.len() {
        return Err(Error::LengthMismatch {
            expected: product.values.len(),
            actual: gz.len(),
        });
    }
    Ok(dot(&product.values, &gz))
}
