//! Serial consensus synthesis: coefficient expansion, gain bounds and
//! state-space realizations of serial and conventional closed loops.
//!
//! The serial closed loop is `Π_{k=1}^{n} (sI + L_k) X = U_ref`. Multiplying it
//! out gives `sⁿI + Σ_{k<n} sᵏ A_k`, so the static relative-state feedback
//! `u = u_ref − Σ A_k x^{(k)}` applied to n parallel integrators produces it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::graph::Laplacian;
use crate::linalg::{binomial, from_rows, inf_norm, set_block, to_rows};
use crate::lti::{ConsensusModes, LtiSystem, StateBlock};
use crate::{Error, Result};

pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SerialDesign {
    laplacians: Vec<Laplacian>,
    coefficients: Vec<DMatrix<f64>>,
}

impl SerialDesign {
    pub fn order(&self) -> usize {
        self.laplacians.len()
    }

    pub fn agents(&self) -> usize {
        self.laplacians[0].dim()
    }

    pub fn laplacians(&self) -> &[Laplacian] {
        &self.laplacians
    }

    /// `[A_0, …, A_{n−1}]`, where `A_k` multiplies `sᵏ`.
    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefficients
    }

    /// Largest relative mismatch between `Π(sI + L_k)` and
    /// `sⁿI + Σ sᵏ A_k` over the given real evaluation points.
    pub fn polynomial_identity_residual(&self, points: &[f64]) -> f64 {
        let n = self.agents();
        let eye = DMatrix::<f64>::identity(n, n);
        points
            .iter()
            .map(|&s| {
                let product = self
                    .laplacians
                    .iter()
                    .fold(eye.clone(), |acc, l| acc * (&eye * s + l.matrix()));
                let mut expanded = &eye * s.powi(self.order() as i32);
                for (k, a) in self.coefficients.iter().enumerate() {
                    expanded += a * s.powi(k as i32);
                }
                inf_norm(&(&product - &expanded)) / inf_norm(&product).max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// Largest `‖A_k‖_∞` over all coefficients.
    pub fn max_coefficient_norm(&self) -> f64 {
        self.coefficients.iter().map(inf_norm).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> DesignJson {
        DesignJson {
            n: self.order(),
            laplacians: self.laplacians.iter().map(|l| to_rows(l.matrix())).collect(),
            coefficients: self.coefficients.iter().map(to_rows).collect(),
        }
    }
}

/// Design export format. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignJson {
    pub n: usize,
    pub laplacians: Vec<Vec<Vec<f64>>>,
    pub coefficients: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<DesignJson> for SerialDesign {
    type Error = Error;

    /// Recomputes the coefficients and checks them against the stored ones.
    fn try_from(value: DesignJson) -> Result<Self> {
        let laplacians = value
            .laplacians
            .iter()
            .map(|rows| from_rows(rows).and_then(Laplacian::from_matrix))
            .collect::<Result<Vec<_>>>()?;
        if laplacians.len() != value.n {
            return Err(Error::DimensionMismatch {
                expected: value.n,
                found: laplacians.len(),
                context: "number of Laplacians",
            });
        }
        let design = expand_serial(laplacians)?;
        if value.coefficients.len() != value.n {
            return Err(Error::DimensionMismatch {
                expected: value.n,
                found: value.coefficients.len(),
                context: "number of coefficients",
            });
        }
        for (k, rows) in value.coefficients.iter().enumerate() {
            let stored = from_rows(rows)?;
            let own = &design.coefficients[k];
            if stored.shape() != own.shape()
                || inf_norm(&(&stored - own)) > 1e-9 * inf_norm(own).max(1.0)
            {
                return Err(Error::InvalidParameter(format!(
                    "stored coefficient A_{k} disagrees with the expansion"
                )));
            }
        }
        Ok(design)
    }
}

fn check_same_dims(mats: impl Iterator<Item = (usize, usize)>) -> Result<usize> {
    let mut dim = None;
    for (r, c) in mats {
        if r != c {
            return Err(Error::NotSquare { rows: r, cols: c });
        }
        match dim {
            None => dim = Some(r),
            Some(d) if d != r => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r,
                    context: "matrix list",
                })
            }
            _ => {}
        }
    }
    dim.ok_or(Error::OrderOutOfRange(0))
}

/// Multiplies out `(sI + L_1)…(sI + L_n)` one factor at a time, appending each
/// factor on the right so that every product term keeps increasing index
/// order.
pub fn expand_serial(laplacians: Vec<Laplacian>) -> Result<SerialDesign> {
    let order = laplacians.len();
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::OrderOutOfRange(order));
    }
    let n = check_same_dims(laplacians.iter().map(|l| l.matrix().shape()))?;
    let coefficients = product_coefficients(n, laplacians.iter());
    Ok(SerialDesign {
        laplacians,
        coefficients,
    })
}

/// Coefficients `A_0..A_{n−1}` of `(sI + F_1)(sI + F_2)…` with the factors
/// taken in iteration order.
fn product_coefficients<'a>(n: usize, factors: impl ExactSizeIterator<Item = &'a Laplacian>) -> Vec<DMatrix<f64>> {
    let order = factors.len();
    // poly[p] is the coefficient of s^p
    let mut poly = vec![DMatrix::<f64>::identity(n, n)];
    for l in factors {
        let mut next = vec![DMatrix::zeros(n, n); poly.len() + 1];
        for (p, coef) in poly.iter().enumerate() {
            next[p] += coef * l.matrix();
            next[p + 1] += coef;
        }
        poly = next;
    }
    poly.truncate(order);
    poly
}

/// Serial design with `L_k = scales[k-1] · L`.
pub fn scaled_serial(laplacian: &Laplacian, scales: &[f64]) -> Result<SerialDesign> {
    let ls = scales
        .iter()
        .map(|&s| laplacian.scaled(s))
        .collect::<Result<Vec<_>>>()?;
    expand_serial(ls)
}

/// `C(n, ⌈n/2⌉) · max(c, cⁿ)`: bounds every `‖A_k‖_∞` when each
/// `‖L_k‖_∞ ≤ c`.
pub fn gain_bound(n: usize, c: f64) -> f64 {
    binomial(n, n.div_ceil(2)) * c.max(c.powi(n as i32))
}

/// Block-bidiagonal realization over `ξ_1..ξ_n`: `−L_k` on the diagonal,
/// identities above it; `u_ref` enters `ξ_n` when `with_input`; output
/// `x = ξ_1`.
pub fn realize_serial(design: &SerialDesign, with_input: bool) -> LtiSystem {
    let n = design.agents();
    let order = design.order();
    let dim = n * order;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut a = DMatrix::zeros(dim, dim);
    for (k, l) in design.laplacians.iter().enumerate() {
        set_block(&mut a, k * n, k * n, &(-l.matrix()));
        if k + 1 < order {
            set_block(&mut a, k * n, (k + 1) * n, &eye);
        }
    }
    let inputs = if with_input { n } else { 0 };
    let mut b = DMatrix::zeros(dim, inputs);
    if with_input {
        set_block(&mut b, (order - 1) * n, 0, &eye);
    }
    let mut c = DMatrix::zeros(n, dim);
    set_block(&mut c, 0, 0, &eye);
    let d = DMatrix::zeros(n, inputs);
    let blocks = (1..=order).map(|k| StateBlock::new(format!("xi{k}"), n)).collect();
    LtiSystem::new(a, b, c, d)
        .and_then(|s| s.with_blocks(blocks))
        .and_then(|s| s.with_consensus(ConsensusModes::leading_blocks(order, n, dim)))
        .expect("serial realization is dimensionally consistent")
}

/// Conventional closed loop `x^{(n)} = u_ref − Σ_k A_k x^{(k)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConventionalDesign {
    gains: Vec<DMatrix<f64>>,
}

impl ConventionalDesign {
    /// `gains[k]` multiplies `x^{(k)}`.
    pub fn new(gains: Vec<DMatrix<f64>>) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&gains.len()) {
            return Err(Error::OrderOutOfRange(gains.len()));
        }
        check_same_dims(gains.iter().map(|g| g.shape()))?;
        if gains.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("conventional gains must be finite".into()));
        }
        Ok(Self { gains })
    }

    /// `A_k = p_k · L`.
    pub fn uniform(laplacian: &Laplacian, p: &[f64]) -> Result<Self> {
        Self::new(p.iter().map(|&pk| laplacian.matrix() * pk).collect())
    }

    pub fn order(&self) -> usize {
        self.gains.len()
    }

    pub fn agents(&self) -> usize {
        self.gains[0].nrows()
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }
}

/// Block companion realization over `(x, ẋ, …, x^{(n−1)})`.
pub fn realize_conventional(design: &ConventionalDesign) -> LtiSystem {
    let n = design.agents();
    let order = design.order();
    let dim = n * order;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut a = DMatrix::zeros(dim, dim);
    for k in 0..order {
        if k + 1 < order {
            set_block(&mut a, k * n, (k + 1) * n, &eye);
        }
        set_block(&mut a, (order - 1) * n, k * n, &(-&design.gains[k]));
    }
    let mut b = DMatrix::zeros(dim, n);
    set_block(&mut b, (order - 1) * n, 0, &eye);
    let mut c = DMatrix::zeros(n, dim);
    set_block(&mut c, 0, 0, &eye);
    let blocks = (0..order).map(|k| StateBlock::new(format!("x^({k})"), n)).collect();
    let sys = LtiSystem::new(a, b, c, DMatrix::zeros(n, n))
        .and_then(|s| s.with_blocks(blocks))
        .expect("companion realization is dimensionally consistent");
    let modes = ConsensusModes::leading_blocks(order, n, dim);
    let relative = design
        .gains
        .iter()
        .all(|g| crate::linalg::row_sum_residual(g) <= 1e-10 * inf_norm(g).max(1.0));
    if relative {
        sys.with_consensus(modes).expect("basis matches state dimension")
    } else {
        sys
    }
}

/// The relative-state feedback gains that turn n parallel integrators into
/// the serial closed loop of [`realize_serial`].
///
/// The chain `ξ̇_k = −L_k ξ_k + ξ_{k+1}` with `x = ξ_1` applies `L_1` to `x`
/// first, so it realizes `(sI+L_n)…(sI+L_1)`. That equals the increasing
/// order product in `coefficients()` only when the `L_k` commute.
pub fn controller_of_serial(design: &SerialDesign) -> ConventionalDesign {
    ConventionalDesign {
        gains: product_coefficients(design.agents(), design.laplacians.iter().rev()),
    }
}

/// Algebraic derivative maps for a serial realization: `x^{(k)} = M_k ξ` for
/// `k < n` and `x^{(n)} = M_n ξ + u`. Returns `[M_0, …, M_n]`, each `N × nN`.
///
/// Differentiating `Σ_j M[j] ξ_j` with `ξ̇_j = −L_j ξ_j + ξ_{j+1}` shifts and
/// multiplies blocks: `M'[j] = −M[j] L_j + M[j−1]`. The input only reaches
/// `x^{(n)}`, with identity coefficient.
pub fn serial_derivative_maps(design: &SerialDesign) -> Vec<DMatrix<f64>> {
    let n = design.agents();
    let order = design.order();
    let mut maps = Vec::with_capacity(order + 1);
    let mut blocks: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); order];
    blocks[0] = DMatrix::identity(n, n);
    let assemble = |blocks: &[DMatrix<f64>]| {
        let mut m = DMatrix::zeros(n, n * order);
        for (j, b) in blocks.iter().enumerate() {
            set_block(&mut m, 0, j * n, b);
        }
        m
    };
    maps.push(assemble(&blocks));
    for _ in 0..order {
        let mut next = vec![DMatrix::zeros(n, n); order];
        for j in 0..order {
            next[j] = -(&blocks[j] * design.laplacians[j].matrix());
            if j > 0 {
                next[j] += &blocks[j - 1];
            }
        }
        blocks = next;
        maps.push(assemble(&blocks));
    }
    maps
}
