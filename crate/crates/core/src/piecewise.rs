//! Grid-indexed, piecewise-constant matrix functions (Riccati solutions and gains).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridLayout;

/// One matrix per grid box; `lookup(φ)` returns the value of the containing box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseMatrixFunction {
    pub layout: GridLayout,
    #[serde(with = "crate::io::matrices")]
    pub values: Vec<DMatrix<f64>>,
}

impl PiecewiseMatrixFunction {
    /// Checks one value per box and a common shape.
    pub fn new(layout: GridLayout, values: Vec<DMatrix<f64>>) -> Result<Self> {
        let f = Self { layout, values };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.values.len() != self.layout.len() {
            return Err(Error::Dimension(format!(
                "{} values for a grid of {} boxes",
                self.values.len(),
                self.layout.len()
            )));
        }
        if let Some(first) = self.values.first() {
            if self.values.iter().any(|v| v.shape() != first.shape()) {
                return Err(Error::Dimension("piecewise values have differing shapes".into()));
            }
        }
        Ok(())
    }

    /// Same value on every box.
    pub fn constant(layout: GridLayout, value: DMatrix<f64>) -> Self {
        let n = layout.len();
        Self {
            layout,
            values: vec![value; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &DMatrix<f64> {
        &self.values[i]
    }

    pub fn lookup(&self, phi: &[f64]) -> Result<&DMatrix<f64>> {
        Ok(&self.values[self.layout.lookup(phi)?])
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.first().map(|v| v.shape()).unwrap_or((0, 0))
    }

    /// `max_i ‖self_i − other_i‖_max`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| crate::linalg::max_abs_diff(a, b))
            .fold(0.0, f64::max)
    }
}
