//! Chebyshev polynomial machinery: nodes, interpolation coefficients, the
//! plateau target, and matrix-free filter application.
//!
//! A filter is a degree-K polynomial h(λ̃) = Σ c_k T_k(λ̃) acting on the
//! rescaled Laplacian spectrum λ̃ = 2λ − 1 ∈ [−1, 1]. Applying it to an item
//! signal never forms a matrix: the three-term recurrence on vectors
//! t₀ = x, t₁ = L̃x, t_k = 2L̃t_{k−1} − t_{k−2} costs exactly K Laplacian
//! applications, i.e. O(K · nnz(R)).

use crate::error::{Error, Result};
use crate::graph::NormalizedGraph;
use crate::sparse::SignalBlock;

/// First-kind Chebyshev polynomial T_k(x) by the forward recurrence
/// T₀ = 1, T₁ = x, T_k = 2xT_{k−1} − T_{k−2}.
pub fn chebyshev_t(k: usize, x: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for _ in 1..k {
        (prev, cur) = (cur, 2.0 * x * cur - prev);
    }
    cur
}

/// The k roots of T_k: x_i = cos((2k+1−2i)/(2k) · π) for i = 1..k,
/// strictly increasing and all inside (−1, 1).
pub fn chebyshev_nodes(k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "chebyshev_nodes requires k >= 1".into(),
        ));
    }
    Ok((1..=k)
        .map(|i| ((2 * k + 1 - 2 * i) as f64 / (2 * k) as f64 * std::f64::consts::PI).cos())
        .collect())
}

/// Plateau transfer target on the rescaled spectrum:
/// g(λ̃) = ½(−λ̃)^φ + ½ for λ̃ < 0 and ½ − ½λ̃^φ for λ̃ ≥ 0 (so g(1) = 0,
/// the continuity extension at the top of the spectrum). Larger φ widens the
/// flat shoulder around λ̃ = 0; the power always acts on a non-negative base
/// so non-integer φ stays real.
pub fn plateau(lambda_rescaled: f64, phi: f64) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "plateau exponent must be positive, got {phi}"
        )));
    }
    Ok(if lambda_rescaled < 0.0 {
        0.5 * (-lambda_rescaled).powf(phi) + 0.5
    } else {
        0.5 - 0.5 * lambda_rescaled.powf(phi)
    })
}

/// Chebyshev interpolation coefficients of `target` at the K+1 nodes of
/// T_{K+1}: c_k = (a_k/(K+1)) Σ_i g(x_i) T_k(x_i) with a₀ = 1, a_{k>0} = 2.
/// The induced polynomial matches `target` exactly at the nodes.
pub fn interpolation_coefficients<F: Fn(f64) -> f64>(target: F, order: usize) -> Vec<f64> {
    let nodes = chebyshev_nodes(order + 1).expect("order + 1 >= 1");
    let samples: Vec<f64> = nodes.iter().map(|&x| target(x)).collect();
    (0..=order)
        .map(|k| {
            let a_k = if k == 0 { 1.0 } else { 2.0 };
            let sum: f64 = nodes
                .iter()
                .zip(&samples)
                .map(|(&x, &g)| g * chebyshev_t(k, x))
                .sum();
            a_k * sum / (order + 1) as f64
        })
        .collect()
}

/// What a filter was interpolated from; kept for reporting and persistence.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetDescriptor {
    /// Plateau target with the given exponent φ.
    Plateau(f64),
    /// Anything else, identified by a label.
    Custom(String),
}

/// A fixed polynomial graph filter: order, Chebyshev coefficients and the
/// target it approximates. Immutable; `apply` is read-only and safe to call
/// concurrently on distinct buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyFilterSpec {
    order: usize,
    coefficients: Vec<f64>,
    target: TargetDescriptor,
}

impl ChebyFilterSpec {
    /// Interpolate the plateau target with exponent `phi` at order K.
    pub fn plateau(phi: f64, order: usize) -> Result<Self> {
        plateau(0.0, phi)?; // validate phi once
        let coefficients =
            interpolation_coefficients(|x| plateau(x, phi).expect("phi validated"), order);
        Ok(ChebyFilterSpec {
            order,
            coefficients,
            target: TargetDescriptor::Plateau(phi),
        })
    }

    /// Interpolate an arbitrary target transfer function.
    pub fn from_target<F: Fn(f64) -> f64>(name: &str, target: F, order: usize) -> Self {
        ChebyFilterSpec {
            order,
            coefficients: interpolation_coefficients(target, order),
            target: TargetDescriptor::Custom(name.to_string()),
        }
    }

    /// Wrap raw coefficients c₀..c_K.
    pub fn from_coefficients(coefficients: Vec<f64>, target: TargetDescriptor) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidParameter(
                "a filter needs at least the constant coefficient".into(),
            ));
        }
        Ok(ChebyFilterSpec {
            order: coefficients.len() - 1,
            coefficients,
            target,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficients c₀..c_K; always exactly order + 1 of them.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn target(&self) -> &TargetDescriptor {
        &self.target
    }

    /// Scalar transfer h(λ̃) = Σ c_k T_k(λ̃), evaluated with the same forward
    /// recurrence the operator path uses.
    pub fn transfer(&self, lambda_rescaled: f64) -> f64 {
        let x = lambda_rescaled;
        let mut acc = self.coefficients[0];
        if self.order == 0 {
            return acc;
        }
        let (mut prev, mut cur) = (1.0, x);
        acc += self.coefficients[1] * cur;
        for c in &self.coefficients[2..] {
            (prev, cur) = (cur, 2.0 * x * cur - prev);
            acc += c * cur;
        }
        acc
    }

    /// Sample the transfer function on a uniform grid over [−1, 1].
    pub fn sample_transfer(&self, points: usize) -> Vec<(f64, f64)> {
        assert!(points >= 2, "need at least the two endpoints");
        (0..points)
            .map(|i| {
                let lambda = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
                (lambda, self.transfer(lambda))
            })
            .collect()
    }

    /// Apply the filter to one item signal: Σ c_k t_k with the vector
    /// recurrence. Exactly `order` Laplacian applications.
    pub fn apply(&self, graph: &NormalizedGraph, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != graph.num_items() {
            return Err(Error::DimensionMismatch {
                expected: graph.num_items(),
                got: x.len(),
            });
        }
        let mut acc: Vec<f64> = x.iter().map(|&v| self.coefficients[0] * v).collect();
        if self.order == 0 {
            return Ok(acc);
        }
        let mut prev = x.to_vec();
        let mut cur = graph.apply_rescaled_laplacian(x)?;
        axpy(&mut acc, self.coefficients[1], &cur);
        for c in &self.coefficients[2..] {
            let lt = graph.apply_rescaled_laplacian(&cur)?;
            for (p, &l) in prev.iter_mut().zip(&lt) {
                *p = 2.0 * l - *p;
            }
            std::mem::swap(&mut prev, &mut cur);
            axpy(&mut acc, *c, &cur);
        }
        Ok(acc)
    }

    /// Block form of [`ChebyFilterSpec::apply`]; column c of the result is
    /// bit-identical to the single-vector path on column c.
    pub fn apply_block(&self, graph: &NormalizedGraph, x: &SignalBlock) -> Result<SignalBlock> {
        if x.num_rows() != graph.num_items() {
            return Err(Error::DimensionMismatch {
                expected: graph.num_items(),
                got: x.num_rows(),
            });
        }
        let mut acc = x.clone();
        acc.scale_add(0.0, self.coefficients[0], x);
        if self.order == 0 {
            return Ok(acc);
        }
        let mut prev = x.clone();
        let mut cur = graph.apply_rescaled_laplacian_block(x)?;
        acc.scale_add(1.0, self.coefficients[1], &cur);
        for c in &self.coefficients[2..] {
            let lt = graph.apply_rescaled_laplacian_block(&cur)?;
            for (p, &l) in prev.data_mut().iter_mut().zip(lt.data()) {
                *p = 2.0 * l - *p;
            }
            std::mem::swap(&mut prev, &mut cur);
            acc.scale_add(1.0, *c, &cur);
        }
        Ok(acc)
    }
}

fn axpy(acc: &mut [f64], c: f64, t: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(t) {
        *a += c * v;
    }
}
