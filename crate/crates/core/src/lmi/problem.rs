//! Solver-agnostic container for block LMIs whose blocks are affine in a set
//! of matrix variables, and the dense evaluation used to recheck solutions.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, min_eigenvalue, symmetrize};

/// Structure of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarKind {
    /// Symmetric and positive definite (`X ⪰ t I` is enforced alongside the LMIs).
    SymmetricPd,
    GeneralSquare,
    GeneralRect,
    /// Scalar `x > 0` (`x ≥ t` is enforced alongside the LMIs).
    PositiveScalar,
}

#[derive(Debug, Clone, Serialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub rows: usize,
    pub cols: usize,
}

impl Variable {
    /// Number of scalar unknowns.
    pub fn dof(&self) -> usize {
        match self.kind {
            VarKind::SymmetricPd => self.rows * (self.rows + 1) / 2,
            VarKind::PositiveScalar => 1,
            _ => self.rows * self.cols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VarId(pub usize);

/// One affine piece of a block.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Term {
    /// `scale · left · X · right`, or with `Xᵀ` when `transpose`.
    Product {
        var: VarId,
        #[serde(with = "crate::io::matrix")]
        left: DMatrix<f64>,
        #[serde(with = "crate::io::matrix")]
        right: DMatrix<f64>,
        transpose: bool,
        scale: f64,
    },
    /// `x · matrix` for a scalar variable `x`.
    ScalarTimes {
        var: VarId,
        #[serde(with = "crate::io::matrix")]
        matrix: DMatrix<f64>,
    },
    Constant(#[serde(with = "crate::io::matrix")] DMatrix<f64>),
}

impl Term {
    /// `X`, scaled.
    pub fn var(var: VarId, rows: usize, cols: usize, scale: f64) -> Self {
        Term::Product {
            var,
            left: DMatrix::identity(rows, rows),
            right: DMatrix::identity(cols, cols),
            transpose: false,
            scale,
        }
    }

    /// `Xᵀ · right`.
    pub fn transposed_times(var: VarId, rows_of_xt: usize, right: DMatrix<f64>) -> Self {
        Term::Product {
            var,
            left: DMatrix::identity(rows_of_xt, rows_of_xt),
            right,
            transpose: true,
            scale: 1.0,
        }
    }

    /// `X · right`.
    pub fn times(var: VarId, rows_of_x: usize, right: DMatrix<f64>) -> Self {
        Term::Product {
            var,
            left: DMatrix::identity(rows_of_x, rows_of_x),
            right,
            transpose: false,
            scale: 1.0,
        }
    }

    /// `x · I_k`.
    pub fn scalar_identity(var: VarId, k: usize) -> Self {
        Term::ScalarTimes {
            var,
            matrix: DMatrix::identity(k, k),
        }
    }

    /// Whether the term is identically zero.
    pub fn is_zero(&self) -> bool {
        match self {
            Term::Product { left, right, scale, .. } => {
                *scale == 0.0 || max_abs(left) == 0.0 || max_abs(right) == 0.0
            }
            Term::ScalarTimes { matrix, .. } => max_abs(matrix) == 0.0,
            Term::Constant(m) => max_abs(m) == 0.0,
        }
    }
}

/// Upper block `(row, col)` with `row ≤ col`; the lower triangle mirrors it
/// and diagonal blocks are symmetrized as `(E + Eᵀ)/2`.
#[derive(Debug, Clone, Serialize)]
pub struct Block {
    pub row: usize,
    pub col: usize,
    pub terms: Vec<Term>,
}

/// A symmetric block matrix required to be positive definite.
#[derive(Debug, Clone, Serialize)]
pub struct Constraint {
    pub name: String,
    pub block_sizes: Vec<usize>,
    pub block_labels: Vec<String>,
    pub blocks: Vec<Block>,
}

impl Constraint {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            block_sizes: Vec::new(),
            block_labels: Vec::new(),
            blocks: Vec::new(),
        }
    }

    /// Declares the next block row/column; returns its index.
    pub fn add_block(&mut self, label: impl Into<String>, size: usize) -> usize {
        self.block_sizes.push(size);
        self.block_labels.push(label.into());
        self.block_sizes.len() - 1
    }

    /// Appends a term to block `(row, col)`; `row > col` is stored transposed.
    pub fn push(&mut self, row: usize, col: usize, term: Term) {
        assert!(row <= col, "terms go in the upper triangle");
        if term.is_zero() {
            return;
        }
        if let Some(b) = self.blocks.iter_mut().find(|b| b.row == row && b.col == col) {
            b.terms.push(term);
        } else {
            self.blocks.push(Block {
                row,
                col,
                terms: vec![term],
            });
        }
    }

    pub fn dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.block_sizes.len());
        let mut acc = 0;
        for s in &self.block_sizes {
            off.push(acc);
            acc += s;
        }
        off
    }
}

/// Values of all variables, indexed like [`AffineLmiProblem::variables`].
#[derive(Debug, Clone, Serialize)]
pub struct Assignment {
    #[serde(with = "crate::io::matrices")]
    pub values: Vec<DMatrix<f64>>,
}

impl Assignment {
    pub fn get(&self, id: VarId) -> &DMatrix<f64> {
        &self.values[id.0]
    }

    /// Scalar value of a `1×1` variable.
    pub fn scalar(&self, id: VarId) -> f64 {
        self.values[id.0][(0, 0)]
    }
}

/// Variables plus constraints `F_c(x) ≻ 0`, solved as `F_c(x) ⪰ ε I`.
#[derive(Debug, Clone, Serialize)]
pub struct AffineLmiProblem {
    pub name: String,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub epsilon: f64,
}

/// Default strictness margin.
pub const DEFAULT_EPSILON: f64 = 1e-6;

impl AffineLmiProblem {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            variables: Vec::new(),
            constraints: Vec::new(),
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn add_variable(&mut self, name: impl Into<String>, kind: VarKind, rows: usize, cols: usize) -> VarId {
        let (rows, cols) = match kind {
            VarKind::PositiveScalar => (1, 1),
            VarKind::SymmetricPd | VarKind::GeneralSquare => (rows, rows),
            VarKind::GeneralRect => (rows, cols),
        };
        self.variables.push(Variable {
            name: name.into(),
            kind,
            rows,
            cols,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name).map(VarId)
    }

    /// Checks shapes and references of every term.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain {
                what: "epsilon",
                value: self.epsilon,
                range: "(0, ∞)".into(),
            });
        }
        for c in &self.constraints {
            let nb = c.block_sizes.len();
            for b in &c.blocks {
                if b.row > b.col || b.col >= nb {
                    return Err(Error::Precondition(format!(
                        "{}: block ({}, {}) outside the upper triangle of {nb} blocks",
                        c.name, b.row, b.col
                    )));
                }
                let shape = (c.block_sizes[b.row], c.block_sizes[b.col]);
                for t in &b.terms {
                    let got = self.term_shape(t)?;
                    if got != shape {
                        return Err(Error::Dimension(format!(
                            "{}: term of shape {got:?} in block ({}, {}) of shape {shape:?}",
                            c.name, b.row, b.col
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn term_shape(&self, t: &Term) -> Result<(usize, usize)> {
        let var = |id: VarId| {
            self.variables
                .get(id.0)
                .ok_or_else(|| Error::Precondition(format!("undeclared variable #{}", id.0)))
        };
        match t {
            Term::Product {
                var: id,
                left,
                right,
                transpose,
                ..
            } => {
                let v = var(*id)?;
                let (r, c) = if *transpose { (v.cols, v.rows) } else { (v.rows, v.cols) };
                if left.ncols() != r || right.nrows() != c {
                    return Err(Error::Dimension(format!(
                        "product with {} of shape ({r}, {c}) has factors {:?} and {:?}",
                        v.name,
                        left.shape(),
                        right.shape()
                    )));
                }
                Ok((left.nrows(), right.ncols()))
            }
            Term::ScalarTimes { var: id, matrix } => {
                let v = var(*id)?;
                if v.kind != VarKind::PositiveScalar {
                    return Err(Error::Precondition(format!("{} is not a scalar variable", v.name)));
                }
                Ok(matrix.shape())
            }
            Term::Constant(m) => Ok(m.shape()),
        }
    }

    /// Dense value of a block term at an assignment.
    fn term_value(&self, t: &Term, a: &Assignment) -> DMatrix<f64> {
        match t {
            Term::Product {
                var,
                left,
                right,
                transpose,
                scale,
            } => {
                let x = a.get(*var);
                if *transpose {
                    left * x.transpose() * right * *scale
                } else {
                    left * x * right * *scale
                }
            }
            Term::ScalarTimes { var, matrix } => matrix * a.scalar(*var),
            Term::Constant(m) => m.clone(),
        }
    }

    /// Assembles constraint `c` at an assignment as a dense symmetric matrix.
    pub fn evaluate_constraint(&self, c: &Constraint, a: &Assignment) -> DMatrix<f64> {
        let off = c.offsets();
        let n = c.dim();
        let mut f = DMatrix::zeros(n, n);
        for b in &c.blocks {
            let (rs, cs) = (c.block_sizes[b.row], c.block_sizes[b.col]);
            let mut e = DMatrix::zeros(rs, cs);
            for t in &b.terms {
                e += self.term_value(t, a);
            }
            if b.row == b.col {
                let s = symmetrize(&e);
                let mut view = f.view_mut((off[b.row], off[b.col]), (rs, cs));
                view += &s;
            } else {
                {
                    let mut view = f.view_mut((off[b.row], off[b.col]), (rs, cs));
                    view += &e;
                }
                let mut view = f.view_mut((off[b.col], off[b.row]), (cs, rs));
                view += e.transpose();
            }
        }
        f
    }

    /// Independent recheck: minimum eigenvalue of every constraint and of every
    /// structural requirement (`X ≻ 0`, `x > 0`) at the assignment.
    ///
    /// Each dense constraint is split along the block-level sparsity of its
    /// assembled value, so the eigenvalues are those of the full matrix.
    pub fn recheck(&self, a: &Assignment) -> Recheck {
        let constraint_margins = self
            .constraints
            .iter()
            .map(|c| dense_min_eigenvalue(&self.evaluate_constraint(c, a), &c.block_sizes))
            .collect();
        let structural_margins = self
            .variables
            .iter()
            .enumerate()
            .filter_map(|(k, v)| match v.kind {
                VarKind::SymmetricPd => Some(min_eigenvalue(&a.values[k])),
                VarKind::PositiveScalar => Some(a.values[k][(0, 0)]),
                _ => None,
            })
            .collect();
        Recheck {
            constraint_margins,
            structural_margins,
        }
    }
}

/// Minimum eigenvalues found by [`AffineLmiProblem::recheck`].
#[derive(Debug, Clone, Serialize)]
pub struct Recheck {
    pub constraint_margins: Vec<f64>,
    pub structural_margins: Vec<f64>,
}

impl Recheck {
    pub fn margin(&self) -> f64 {
        self.constraint_margins
            .iter()
            .chain(&self.structural_margins)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Minimum eigenvalue of a symmetric matrix, computed per connected group of
/// blocks that have nonzero coupling.
pub fn dense_min_eigenvalue(f: &DMatrix<f64>, block_sizes: &[usize]) -> f64 {
    let nb = block_sizes.len();
    let mut off = vec![0usize; nb + 1];
    for (k, s) in block_sizes.iter().enumerate() {
        off[k + 1] = off[k] + s;
    }
    let mut uf = UnionFind::new(nb);
    for p in 0..nb {
        for q in (p + 1)..nb {
            let coupled = f
                .view((off[p], off[q]), (block_sizes[p], block_sizes[q]))
                .iter()
                .any(|v| *v != 0.0);
            if coupled {
                uf.union(p, q);
            }
        }
    }
    let mut min = f64::INFINITY;
    for group in uf.groups() {
        let idx: Vec<usize> = group.iter().flat_map(|&b| off[b]..off[b + 1]).collect();
        if idx.is_empty() {
            continue;
        }
        let sub = f.select_rows(&idx).select_columns(&idx);
        min = min.min(min_eigenvalue(&sub));
    }
    min
}

/// Disjoint-set forest over `0..n`.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    /// Groups in order of their smallest member, members ascending.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for x in 0..n {
            let r = self.find(x);
            by_root[r].push(x);
        }
        by_root.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_mirrors_and_symmetrizes() {
        let mut p = AffineLmiProblem::new("t");
        let u = p.add_variable("U", VarKind::GeneralSquare, 2, 2);
        let mut c = Constraint::new("c");
        let b0 = c.add_block("a", 2);
        let b1 = c.add_block("b", 2);
        c.push(b0, b0, Term::var(u, 2, 2, 1.0));
        c.push(b0, b1, Term::var(u, 2, 2, 1.0));
        p.constraints.push(c);
        p.validate().unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let a = Assignment { values: vec![x.clone()] };
        let f = p.evaluate_constraint(&p.constraints[0], &a);
        assert_eq!(f[(0, 1)], 1.0);
        assert_eq!(f[(1, 0)], 1.0);
        assert_eq!(f[(0, 3)], 2.0);
        assert_eq!(f[(3, 0)], 2.0);
        assert_eq!(f, f.transpose());
    }

    #[test]
    fn shape_errors_are_caught() {
        let mut p = AffineLmiProblem::new("t");
        let u = p.add_variable("U", VarKind::GeneralSquare, 2, 2);
        let mut c = Constraint::new("c");
        let b0 = c.add_block("a", 3);
        c.push(b0, b0, Term::var(u, 2, 2, 1.0));
        p.constraints.push(c);
        assert!(matches!(p.validate(), Err(Error::Dimension(_))));
    }

    #[test]
    fn split_eigenvalue_matches_dense() {
        let f = DMatrix::from_row_slice(
            4,
            4,
            &[2.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.5],
        );
        let split = dense_min_eigenvalue(&f, &[1, 1, 1, 1]);
        assert!((split - min_eigenvalue(&f)).abs() < 1e-14);
    }

    #[test]
    fn union_find_groups() {
        let mut uf = UnionFind::new(5);
        uf.union(3, 1);
        uf.union(4, 0);
        assert_eq!(uf.groups(), vec![vec![0, 4], vec![1, 3], vec![2]]);
    }
}
