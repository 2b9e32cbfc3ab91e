//! Linear image operators: the forward map G and the regularizer L.
//!
//! Every operator is a small stencil applied with a boundary rule. Convolution
//! kernels are applied as true convolutions (the kernel is flipped).

use super::grid::ImageGrid;
use crate::error::{Result, SepError};

/// Odd-sized convolution kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Kernel {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows.is_multiple_of(2) || cols.is_multiple_of(2) {
            return Err(SepError::Shape(format!(
                "kernel dimensions must be odd, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(SepError::Shape(format!(
                "kernel expects {} entries, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SepError::Domain("kernel entries must be finite".into()));
        }
        Ok(Self { rows, cols, values })
    }

    /// Normalized box kernel of side `size`.
    pub fn boxcar(size: usize) -> Result<Self> {
        let n = size * size;
        Self::new(size, size, vec![1.0 / n as f64; n])
    }

    /// Normalized isotropic Gaussian blur truncated at `ceil(3 sigma)`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(SepError::Domain(format!("blur width must be positive, got {sigma}")));
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let side = (2 * radius + 1) as usize;
        let mut values = Vec::with_capacity(side * side);
        for a in -radius..=radius {
            for b in -radius..=radius {
                let r2 = (a * a + b * b) as f64;
                values.push((-r2 / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= total);
        Self::new(side, side, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn at(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.cols + b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Identity,
    Scalar(f64),
    Convolution(Kernel),
    /// 4-neighbour stencil `4 x_ij - (up + down + left + right)`.
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Half-sample symmetric extension (`d c b a | a b c d`).
    #[default]
    Reflect,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperatorSpec {
    pub kind: OperatorKind,
    pub boundary: Boundary,
}

impl LinearOperatorSpec {
    pub fn identity() -> Self {
        Self {
            kind: OperatorKind::Identity,
            boundary: Boundary::Reflect,
        }
    }

    pub fn scalar(g: f64) -> Self {
        Self {
            kind: OperatorKind::Scalar(g),
            boundary: Boundary::Reflect,
        }
    }

    pub fn convolution(kernel: Kernel, boundary: Boundary) -> Self {
        Self {
            kind: OperatorKind::Convolution(kernel),
            boundary,
        }
    }

    pub fn gaussian_blur(sigma: f64) -> Result<Self> {
        Ok(Self::convolution(Kernel::gaussian(sigma)?, Boundary::Reflect))
    }

    pub fn laplacian() -> Self {
        Self {
            kind: OperatorKind::Laplacian,
            boundary: Boundary::Reflect,
        }
    }

    /// Checks the invariants required of a forward operator.
    pub fn validate_forward(&self) -> Result<()> {
        match &self.kind {
            OperatorKind::Scalar(g) if *g == 0.0 || !g.is_finite() => Err(SepError::Domain(format!(
                "forward gain must be finite and non-zero, got {g}"
            ))),
            _ => Ok(()),
        }
    }

    fn stencil(&self) -> Kernel {
        match &self.kind {
            OperatorKind::Identity => Kernel {
                rows: 1,
                cols: 1,
                values: vec![1.0],
            },
            OperatorKind::Scalar(g) => Kernel {
                rows: 1,
                cols: 1,
                values: vec![*g],
            },
            OperatorKind::Convolution(k) => k.clone(),
            OperatorKind::Laplacian => Kernel {
                rows: 3,
                cols: 3,
                values: vec![0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0],
            },
        }
    }
}

fn boundary_index(idx: isize, n: usize, boundary: Boundary) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&idx) {
        return Some(idx as usize);
    }
    match boundary {
        Boundary::Zero => None,
        Boundary::Reflect => {
            let period = 2 * n;
            let mut m = idx.rem_euclid(period);
            if m >= n {
                m = period - 1 - m;
            }
            Some(m as usize)
        }
    }
}

fn check_fits(kernel: &Kernel, rows: usize, cols: usize) -> Result<()> {
    if kernel.rows > rows || kernel.cols > cols {
        return Err(SepError::Shape(format!(
            "kernel {}x{} is larger than image {rows}x{cols}",
            kernel.rows, kernel.cols
        )));
    }
    Ok(())
}

/// Applies `op` to `x`, returning a grid of the same shape.
pub fn apply_operator(op: &LinearOperatorSpec, x: &ImageGrid) -> Result<ImageGrid> {
    match &op.kind {
        OperatorKind::Identity => return Ok(x.clone()),
        OperatorKind::Scalar(g) => return x.map(|v| g * v),
        _ => {}
    }
    let kernel = op.stencil();
    let (rows, cols) = x.shape();
    check_fits(&kernel, rows, cols)?;
    let rr = (kernel.rows / 2) as isize;
    let rc = (kernel.cols / 2) as isize;
    let xs = x.values();
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for a in 0..kernel.rows {
                let si = i as isize + rr - a as isize;
                let Some(ii) = boundary_index(si, rows, op.boundary) else {
                    continue;
                };
                for b in 0..kernel.cols {
                    let w = kernel.at(a, b);
                    if w == 0.0 {
                        continue;
                    }
                    let sj = j as isize + rc - b as isize;
                    if let Some(jj) = boundary_index(sj, cols, op.boundary) {
                        acc += w * xs[ii * cols + jj];
                    }
                }
            }
            out[i * cols + j] = acc;
        }
    }
    ImageGrid::new(rows, cols, out)
}

/// Per-pixel diagonal surrogate: the operator applied to an all-ones grid.
pub fn diagonal_surrogate(op: &LinearOperatorSpec, rows: usize, cols: usize) -> Result<ImageGrid> {
    apply_operator(op, &ImageGrid::filled(rows, cols, 1.0)?)
}

/// Explicit sparse matrix form of an operator on a fixed grid shape, with
/// duplicate taps (from boundary reflection) merged.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    by_output: Vec<Vec<(usize, f64)>>,
    by_input: Vec<Vec<(usize, f64)>>,
}

impl SparseOperator {
    pub fn assemble(op: &LinearOperatorSpec, rows: usize, cols: usize) -> Result<Self> {
        let kernel = op.stencil();
        check_fits(&kernel, rows, cols)?;
        let n = rows * cols;
        let rr = (kernel.rows / 2) as isize;
        let rc = (kernel.cols / 2) as isize;
        let mut by_output: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..rows {
            for j in 0..cols {
                let mut taps: Vec<(usize, f64)> = Vec::new();
                for a in 0..kernel.rows {
                    let Some(ii) = boundary_index(i as isize + rr - a as isize, rows, op.boundary) else {
                        continue;
                    };
                    for b in 0..kernel.cols {
                        let w = kernel.at(a, b);
                        if w == 0.0 {
                            continue;
                        }
                        let Some(jj) = boundary_index(j as isize + rc - b as isize, cols, op.boundary) else {
                            continue;
                        };
                        let idx = ii * cols + jj;
                        match taps.iter_mut().find(|(k, _)| *k == idx) {
                            Some(t) => t.1 += w,
                            None => taps.push((idx, w)),
                        }
                    }
                }
                taps.retain(|(_, w)| *w != 0.0);
                taps.sort_by_key(|(k, _)| *k);
                by_output.push(taps);
            }
        }
        let mut by_input: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (out, taps) in by_output.iter().enumerate() {
            for &(inp, w) in taps {
                by_input[inp].push((out, w));
            }
        }
        Ok(Self {
            rows,
            cols,
            by_output,
            by_input,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Non-zero coefficients of output `k` as `(input, weight)`.
    pub fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.by_output[k]
    }

    /// Outputs touched by input `j` as `(output, weight)`.
    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.by_input[j]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.by_output
            .iter()
            .map(|taps| taps.iter().map(|&(j, w)| w * x[j]).sum())
            .collect()
    }

    /// `y_k = sum_j A_kj^2 v_j`, the output variance under independent inputs.
    pub fn apply_squared(&self, v: &[f64]) -> Vec<f64> {
        self.by_output
            .iter()
            .map(|taps| taps.iter().map(|&(j, w)| w * w * v[j]).sum())
            .collect()
    }

    /// Output at row `k` with input `skip` removed from the sum.
    pub fn row_without(&self, k: usize, x: &[f64], skip: usize) -> f64 {
        self.by_output[k]
            .iter()
            .filter(|(j, _)| *j != skip)
            .map(|&(j, w)| w * x[j])
            .sum()
    }
}
