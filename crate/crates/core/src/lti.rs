//! Continuous-time LTI systems `ẋ = Ax + Bu`, `y = Cx + Du`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::{ensure_finite, ensure_square, set_block, to_complex};
use crate::{Error, Result};

/// A named contiguous slice of the state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateBlock {
    pub label: String,
    pub len: usize,
}

impl StateBlock {
    pub fn new(label: impl Into<String>, len: usize) -> Self {
        Self {
            label: label.into(),
            len,
        }
    }
}

/// The structural consensus subspace of a closed loop: columns `e_1..e_n`
/// of `basis` are block-ones vectors with `A e_1 = 0` and `A e_k = e_{k-1}`,
/// i.e. a Jordan chain for the eigenvalue zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusModes {
    pub order: usize,
    pub agents: usize,
    pub basis: DMatrix<f64>,
}

impl ConsensusModes {
    /// Chain whose k-th vector is all-ones on the k-th block of `agents`
    /// states, zero elsewhere (including any trailing auxiliary states).
    pub fn leading_blocks(order: usize, agents: usize, state_dim: usize) -> Self {
        let mut basis = DMatrix::zeros(state_dim, order);
        for k in 0..order {
            basis
                .view_mut((k * agents, k), (agents, 1))
                .fill(1.0);
        }
        Self {
            order,
            agents,
            basis,
        }
    }

    /// `max_k ‖A e_k − e_{k−1}‖_∞` with `e_0 = 0`.
    pub fn chain_residual(&self, a: &DMatrix<f64>) -> f64 {
        let image = a * &self.basis;
        let mut worst: f64 = 0.0;
        for k in 0..self.order {
            let mut r = image.column(k).into_owned();
            if k > 0 {
                r -= self.basis.column(k - 1);
            }
            worst = worst.max(r.amax());
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    blocks: Vec<StateBlock>,
    consensus: Option<ConsensusModes>,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = ensure_square(&a)?;
        let check = |expected: usize, found: usize, context| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected,
                    found,
                    context,
                })
            }
        };
        check(n, b.nrows(), "B rows vs state dimension")?;
        check(n, c.ncols(), "C columns vs state dimension")?;
        check(c.nrows(), d.nrows(), "D rows vs outputs")?;
        check(b.ncols(), d.ncols(), "D columns vs inputs")?;
        for m in [&a, &b, &c, &d] {
            ensure_finite(m)?;
        }
        Ok(Self {
            blocks: vec![StateBlock::new("x", n)],
            a,
            b,
            c,
            d,
            consensus: None,
        })
    }

    /// Memoryless gain `y = D u`.
    pub fn static_gain(d: DMatrix<f64>) -> Result<Self> {
        let (p, m) = d.shape();
        let mut sys = Self::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, m),
            DMatrix::zeros(p, 0),
            d,
        )?;
        sys.blocks.clear();
        Ok(sys)
    }

    pub fn with_blocks(mut self, blocks: Vec<StateBlock>) -> Result<Self> {
        let total: usize = blocks.iter().map(|b| b.len).sum();
        if total != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                found: total,
                context: "state block lengths",
            });
        }
        self.blocks = blocks;
        Ok(self)
    }

    pub fn with_consensus(mut self, modes: ConsensusModes) -> Result<Self> {
        if modes.basis.nrows() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                found: modes.basis.nrows(),
                context: "consensus basis rows",
            });
        }
        self.consensus = Some(modes);
        Ok(self)
    }

    /// Drops the structural-subspace annotation (spectra then fall back to
    /// plain eigenvalue clustering).
    pub fn without_consensus(mut self) -> Self {
        self.consensus = None;
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn blocks(&self) -> &[StateBlock] {
        &self.blocks
    }

    pub fn consensus(&self) -> Option<&ConsensusModes> {
        self.consensus.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_static(&self) -> bool {
        self.state_dim() == 0
    }

    /// Offset of the block with the given label.
    pub fn block_offset(&self, label: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for b in &self.blocks {
            if b.label == label {
                return Some((offset, b.len));
            }
            offset += b.len;
        }
        None
    }

    /// `G(s) = C (sI − A)^{-1} B + D`.
    pub fn frequency_response(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.state_dim();
        let d = to_complex(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let mut resolvent = to_complex(&self.a).map(|v| -v);
        for i in 0..n {
            resolvent[(i, i)] += s;
        }
        let x = resolvent
            .lu()
            .solve(&to_complex(&self.b))
            .ok_or(Error::IllPosedLoop("sI - A is singular at the evaluation point"))?;
        Ok(to_complex(&self.c) * x + d)
    }

    /// Stacked `[C; CA; …; CA^{order−1}]`, the map from state to the output and
    /// its first `order − 1` derivatives, valid when the input enters no
    /// earlier than the `order`-th derivative.
    pub fn output_derivative_map(&self, order: usize) -> DMatrix<f64> {
        let p = self.n_outputs();
        let mut out = DMatrix::zeros(p * order, self.state_dim());
        let mut row = self.c.clone();
        for k in 0..order {
            set_block(&mut out, k * p, 0, &row);
            row = &row * &self.a;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_dimensions() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(3, 1);
        let c = DMatrix::zeros(1, 2);
        let d = DMatrix::zeros(1, 1);
        assert!(LtiSystem::new(a, b, c, d).is_err());
    }

    #[test]
    fn first_order_lag_response() {
        // 1/(s+2)
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let g = sys.frequency_response(Complex64::new(0.0, 2.0)).unwrap();
        let expected = Complex64::new(1.0, 0.0) / Complex64::new(2.0, 2.0);
        assert!((g[(0, 0)] - expected).norm() < 1e-15);
    }

    #[test]
    fn static_gain_has_no_states() {
        let sys = LtiSystem::static_gain(DMatrix::identity(2, 2) * 0.3).unwrap();
        assert!(sys.is_static());
        let g = sys.frequency_response(Complex64::new(0.0, 1.0)).unwrap();
        assert_eq!(g[(1, 1)], Complex64::new(0.3, 0.0));
    }

    #[test]
    fn leading_block_chain() {
        let modes = ConsensusModes::leading_blocks(2, 3, 8);
        assert_eq!(modes.basis.column(0).sum(), 3.0);
        assert_eq!(modes.basis[(3, 1)], 1.0);
        assert_eq!(modes.basis[(6, 1)], 0.0);
    }
}
