//! Structured square matrices and the orthogonal-triangularization kernel.
//!
//! Every covariance in the solver is carried as a square root `S` with
//! `C = S Sᵀ`, stored in one of three layouts:
//!
//! * [`StructuredMatrix::Kronecker`]: `left ⊗ right`, `left` of size `d`, `right` of size `r`.
//! * [`StructuredMatrix::BlockDiagonal`]: `d` independent `r × r` blocks.
//! * [`StructuredMatrix::Dense`]: a plain `n × n` matrix.
//!
//! Vectors of length `n = d·r` are indexed `i·r + q` (dimension-major), matching
//! `I_d ⊗ B` acting blockwise.
//!
//! The square roots are not kept triangular. Only `S Sᵀ = C` is promised.

use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};

/// Left Kronecker factor. Identity and diagonal factors avoid storing `d × d` entries.
#[derive(Debug, Clone, PartialEq)]
pub enum KronLeft {
    Identity(usize),
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl KronLeft {
    pub fn dim(&self) -> usize {
        match self {
            KronLeft::Identity(d) => *d,
            KronLeft::Diagonal(v) => v.len(),
            KronLeft::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            KronLeft::Identity(d) => DMatrix::identity(*d, *d),
            KronLeft::Diagonal(v) => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
            }
            KronLeft::Dense(m) => m.clone(),
        }
    }

    /// Entry `(i, i)`.
    pub fn diag(&self, i: usize) -> f64 {
        match self {
            KronLeft::Identity(_) => 1.0,
            KronLeft::Diagonal(v) => v[i],
            KronLeft::Dense(m) => m[(i, i)],
        }
    }

    /// `L Lᵀ`.
    pub fn gram(&self) -> KronLeft {
        match self {
            KronLeft::Identity(d) => KronLeft::Identity(*d),
            KronLeft::Diagonal(v) => KronLeft::Diagonal(v.iter().map(|x| x * x).collect()),
            KronLeft::Dense(m) => KronLeft::Dense(m * m.transpose()),
        }
    }

    /// `‖row i‖²`, the `(i, i)` entry of `L Lᵀ`.
    pub fn row_norm_sq(&self, i: usize) -> f64 {
        match self {
            KronLeft::Identity(_) => 1.0,
            KronLeft::Diagonal(v) => v[i] * v[i],
            KronLeft::Dense(m) => m.row(i).norm_squared(),
        }
    }

    /// `L · X` for a row-major `d × cols` grid `x`.
    pub fn mul_grid(&self, x: &[f64], cols: usize) -> Vec<f64> {
        match self {
            KronLeft::Identity(_) => x.to_vec(),
            KronLeft::Diagonal(v) => x
                .chunks_exact(cols)
                .zip(v)
                .flat_map(|(row, s)| row.iter().map(move |a| a * s))
                .collect(),
            KronLeft::Dense(m) => {
                let d = m.nrows();
                let mut out = vec![0.0; d * cols];
                for i in 0..d {
                    let dst = &mut out[i * cols..(i + 1) * cols];
                    for j in 0..m.ncols() {
                        let a = m[(i, j)];
                        if a != 0.0 {
                            for (o, s) in dst.iter_mut().zip(&x[j * cols..(j + 1) * cols]) {
                                *o += a * s;
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

/// `count` square blocks of equal `size`, each stored column-major and contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    size: usize,
    count: usize,
    data: Vec<f64>,
}

impl BlockDiagonal {
    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let size = blocks.first().map(|b| b.nrows()).unwrap_or(0);
        let mut data = Vec::with_capacity(blocks.len() * size * size);
        for (index, b) in blocks.iter().enumerate() {
            if b.nrows() != size || b.ncols() != size {
                return Err(Error::RaggedBlock {
                    index,
                    detail: format!("expected {size}x{size}, found {}x{}", b.nrows(), b.ncols()),
                });
            }
            data.extend_from_slice(b.as_slice());
        }
        Ok(Self {
            size,
            count: blocks.len(),
            data,
        })
    }

    /// `count` copies of `block`.
    pub fn repeat(block: &DMatrix<f64>, count: usize) -> Self {
        assert_eq!(block.nrows(), block.ncols(), "blocks must be square");
        let mut data = Vec::with_capacity(count * block.len());
        for _ in 0..count {
            data.extend_from_slice(block.as_slice());
        }
        Self {
            size: block.nrows(),
            count,
            data,
        }
    }

    pub(crate) fn zeros(size: usize, count: usize) -> Self {
        Self {
            size,
            count,
            data: vec![0.0; size * size * count],
        }
    }

    pub fn block_size(&self) -> usize {
        self.size
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn block(&self, i: usize) -> DMatrixView<'_, f64> {
        let s = self.size * self.size;
        DMatrixView::from_slice(&self.data[i * s..(i + 1) * s], self.size, self.size)
    }

    pub fn block_mut(&mut self, i: usize) -> DMatrixViewMut<'_, f64> {
        let s = self.size * self.size;
        DMatrixViewMut::from_slice(&mut self.data[i * s..(i + 1) * s], self.size, self.size)
    }

    pub(crate) fn block_slice(&self, i: usize) -> &[f64] {
        let s = self.size * self.size;
        &self.data[i * s..(i + 1) * s]
    }

    pub(crate) fn block_slice_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.size * self.size;
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn blocks(&self) -> impl Iterator<Item = DMatrixView<'_, f64>> + '_ {
        (0..self.count).map(move |i| self.block(i))
    }
}

/// A square matrix in one of three storage layouts.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuredMatrix {
    Kronecker {
        left: Arc<KronLeft>,
        right: DMatrix<f64>,
    },
    BlockDiagonal(BlockDiagonal),
    Dense(DMatrix<f64>),
}

impl StructuredMatrix {
    pub fn kronecker(left: Arc<KronLeft>, right: DMatrix<f64>) -> Self {
        StructuredMatrix::Kronecker { left, right }
    }

    /// Total size `n`.
    pub fn dim(&self) -> usize {
        match self {
            StructuredMatrix::Kronecker { left, right } => left.dim() * right.nrows(),
            StructuredMatrix::BlockDiagonal(b) => b.size * b.count,
            StructuredMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            StructuredMatrix::Kronecker { .. } => "kronecker",
            StructuredMatrix::BlockDiagonal(_) => "block-diagonal",
            StructuredMatrix::Dense(_) => "dense",
        }
    }

    /// Matrix-vector product without materializing structured variants.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                context: "StructuredMatrix::apply",
                expected: n,
                found: v.len(),
            });
        }
        Ok(match self {
            StructuredMatrix::Kronecker { left, right } => {
                // (L ⊗ R) vec(V) = vec(L V Rᵀ), V row-major d × r.
                let r = right.nrows();
                let mut w = vec![0.0; n];
                for (src, dst) in v.chunks_exact(r).zip(w.chunks_exact_mut(r)) {
                    for p in 0..r {
                        let mut acc = 0.0;
                        for q in 0..r {
                            acc += right[(p, q)] * src[q];
                        }
                        dst[p] = acc;
                    }
                }
                left.mul_grid(&w, r)
            }
            StructuredMatrix::BlockDiagonal(b) => {
                let r = b.size;
                let mut out = vec![0.0; n];
                for i in 0..b.count {
                    let blk = b.block(i);
                    let src = &v[i * r..(i + 1) * r];
                    for p in 0..r {
                        let mut acc = 0.0;
                        for q in 0..r {
                            acc += blk[(p, q)] * src[q];
                        }
                        out[i * r + p] = acc;
                    }
                }
                out
            }
            StructuredMatrix::Dense(m) => {
                let x = nalgebra::DVector::from_column_slice(v);
                (m * x).as_slice().to_vec()
            }
        })
    }

    /// Materializes the full `n × n` matrix. Intended for tests and small problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            StructuredMatrix::Kronecker { left, right } => left.to_dense().kronecker(right),
            StructuredMatrix::BlockDiagonal(b) => {
                let r = b.size;
                let mut out = DMatrix::zeros(r * b.count, r * b.count);
                for i in 0..b.count {
                    out.view_mut((i * r, i * r), (r, r)).copy_from(&b.block(i));
                }
                out
            }
            StructuredMatrix::Dense(m) => m.clone(),
        }
    }

    /// `M Mᵀ` in the same layout, i.e. the covariance of a square root.
    pub fn gram(&self) -> StructuredMatrix {
        match self {
            StructuredMatrix::Kronecker { left, right } => StructuredMatrix::Kronecker {
                left: Arc::new(left.gram()),
                right: right * right.transpose(),
            },
            StructuredMatrix::BlockDiagonal(b) => {
                let mut out = BlockDiagonal::zeros(b.size, b.count);
                for i in 0..b.count {
                    let blk = b.block(i);
                    out.block_mut(i).copy_from(&(blk * blk.transpose()));
                }
                StructuredMatrix::BlockDiagonal(out)
            }
            StructuredMatrix::Dense(m) => StructuredMatrix::Dense(m * m.transpose()),
        }
    }

    /// Converts to dense storage, keeping everything else equal.
    pub fn densified(&self) -> StructuredMatrix {
        StructuredMatrix::Dense(self.to_dense())
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

/// Householder triangularization of a column-major `rows × cols` buffer, in place.
///
/// On return the upper triangle of the leading `min(rows, cols) × cols` part holds `R`.
/// The orthogonal factor is discarded. `scratch` must hold at least `rows` entries.
pub(crate) fn triangularize(buf: &mut [f64], rows: usize, cols: usize, scratch: &mut [f64]) {
    debug_assert_eq!(buf.len(), rows * cols);
    let steps = cols.min(rows.saturating_sub(1));
    for k in 0..steps {
        let len = rows - k;
        let col = &buf[k * rows + k..(k + 1) * rows];
        let norm_sq: f64 = col.iter().map(|x| x * x).sum();
        if norm_sq == 0.0 {
            continue;
        }
        let norm = norm_sq.sqrt();
        let head = col[0];
        let alpha = if head >= 0.0 { -norm } else { norm };
        let v = &mut scratch[..len];
        v.copy_from_slice(col);
        v[0] -= alpha;
        let v_norm_sq = norm_sq - head * head + v[0] * v[0];
        if v_norm_sq == 0.0 {
            continue;
        }
        let tau = 2.0 / v_norm_sq;
        {
            let col = &mut buf[k * rows + k..(k + 1) * rows];
            col[0] = alpha;
            col[1..].iter_mut().for_each(|x| *x = 0.0);
        }
        for j in k + 1..cols {
            let c = &mut buf[j * rows + k..(j + 1) * rows];
            let dot: f64 = c.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let f = tau * dot;
            if f != 0.0 {
                for (a, b) in c.iter_mut().zip(v.iter()) {
                    *a -= f * b;
                }
            }
        }
    }
}

/// Extracts the upper-triangular `cols × cols` factor after [`triangularize`].
pub(crate) fn upper_factor(buf: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(cols, cols);
    for j in 0..cols {
        for i in 0..=j.min(rows.saturating_sub(1)) {
            r[(i, j)] = buf[j * rows + i];
        }
    }
    r
}

/// Upper-triangular `R` with `RᵀR = topᵀtop + bottomᵀbottom`.
///
/// `R` is the triangular factor of the QR decomposition of `[top; bottom]`; rows
/// are only determined up to sign.
pub fn gram_sqrt_of_stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = top.ncols();
    if bottom.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "gram_sqrt_of_stack columns",
            expected: n,
            found: bottom.ncols(),
        });
    }
    let (m1, m2) = (top.nrows(), bottom.nrows());
    if m1 + m2 < n {
        return Err(Error::InvalidArgument(format!(
            "stack has {} rows, needs at least {n}",
            m1 + m2
        )));
    }
    check_finite(top, "gram_sqrt_of_stack top")?;
    check_finite(bottom, "gram_sqrt_of_stack bottom")?;
    let rows = m1 + m2;
    let mut buf = vec![0.0; rows * n];
    for j in 0..n {
        buf[j * rows..j * rows + m1].copy_from_slice(top.column(j).as_slice());
        buf[j * rows + m1..(j + 1) * rows].copy_from_slice(bottom.column(j).as_slice());
    }
    let mut scratch = vec![0.0; rows];
    triangularize(&mut buf, rows, n, &mut scratch);
    Ok(upper_factor(&buf, rows, n))
}

/// [`gram_sqrt_of_stack`] applied to each pair of blocks independently.
pub fn blockwise_gram_sqrt(
    tops: &[DMatrix<f64>],
    bottoms: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>> {
    if tops.len() != bottoms.len() {
        return Err(Error::DimensionMismatch {
            context: "blockwise_gram_sqrt block count",
            expected: tops.len(),
            found: bottoms.len(),
        });
    }
    let Some(first) = tops.first() else {
        return Ok(Vec::new());
    };
    let (m1, n) = first.shape();
    let m2 = bottoms[0].nrows();
    for (index, (t, b)) in tops.iter().zip(bottoms).enumerate() {
        if t.shape() != (m1, n) || b.shape() != (m2, n) {
            return Err(Error::RaggedBlock {
                index,
                detail: format!(
                    "expected top {m1}x{n} and bottom {m2}x{n}, found {}x{} and {}x{}",
                    t.nrows(),
                    t.ncols(),
                    b.nrows(),
                    b.ncols()
                ),
            });
        }
    }
    tops.iter()
        .zip(bottoms)
        .map(|(t, b)| gram_sqrt_of_stack(t, b))
        .collect()
}

/// Reusable buffers for triangularizing many small `2r × r` stacks.
#[derive(Debug, Default)]
pub(crate) struct StackWorkspace {
    buf: Vec<f64>,
    scratch: Vec<f64>,
}

impl StackWorkspace {
    /// Given `top` (`r × r`, column-major) and `bottom` (`r × r`, column-major),
    /// writes `Rᵀ` (lower triangular) into `out` column-major, where `RᵀR = topᵀtop + bottomᵀbottom`.
    pub(crate) fn stacked_sqrt_t(
        &mut self,
        top: &[f64],
        bottom: &[f64],
        r: usize,
        out: &mut [f64],
    ) {
        let rows = 2 * r;
        self.buf.resize(rows * r, 0.0);
        self.scratch.resize(rows, 0.0);
        for j in 0..r {
            self.buf[j * rows..j * rows + r].copy_from_slice(&top[j * r..(j + 1) * r]);
            self.buf[j * rows + r..(j + 1) * rows].copy_from_slice(&bottom[j * r..(j + 1) * r]);
        }
        triangularize(&mut self.buf, rows, r, &mut self.scratch);
        // out = Rᵀ: out[(j, i)] = R[(i, j)] for i <= j.
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..r {
            for i in 0..=j {
                out[i * r + j] = self.buf[j * rows + i];
            }
        }
    }
}
