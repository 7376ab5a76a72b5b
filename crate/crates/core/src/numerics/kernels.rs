use super::{ExactAccumulator, Matrix, Real, Reduction, ShapeError};

/// DistMult message: elementwise product of a neighbour state and a relation embedding.
pub fn distmult_message<T: Real>(h_src: &Matrix<T>, h_rel: &Matrix<T>) -> Result<Matrix<T>, ShapeError> {
    if h_src.shape() != h_rel.shape() {
        return Err(ShapeError::mismatch(
            "distmult_message",
            format!("{:?}", h_src.shape()),
            format!("{:?}", h_rel.shape()),
        ));
    }
    let data = h_src
        .as_slice()
        .iter()
        .zip(h_rel.as_slice())
        .map(|(&a, &b)| a * b)
        .collect();
    Matrix::from_vec(h_src.rows(), h_src.cols(), data)
}

/// Running per-segment sums of row vectors.
///
/// In [`Reduction::Exact`] mode each cell is an [`ExactAccumulator`], so the
/// final value depends only on the multiset of rows added to a segment.
#[derive(Debug, Clone)]
pub enum SegmentSums<T> {
    Fast(Matrix<T>),
    Exact { cols: usize, cells: Vec<ExactAccumulator> },
}

impl<T: Real> SegmentSums<T> {
    pub fn new(n_segments: usize, cols: usize, reduction: Reduction) -> Self {
        match reduction {
            Reduction::Fast => SegmentSums::Fast(Matrix::zeros(n_segments, cols)),
            Reduction::Exact => SegmentSums::Exact {
                cols,
                cells: vec![ExactAccumulator::new(); n_segments * cols],
            },
        }
    }

    pub fn n_segments(&self) -> usize {
        match self {
            SegmentSums::Fast(m) => m.rows(),
            SegmentSums::Exact { cols, cells } => {
                if *cols == 0 {
                    0
                } else {
                    cells.len() / cols
                }
            }
        }
    }

    #[inline]
    pub fn add_row(&mut self, segment: usize, row: &[T]) {
        match self {
            SegmentSums::Fast(m) => {
                for (a, &b) in m.row_mut(segment).iter_mut().zip(row) {
                    *a += b;
                }
            }
            SegmentSums::Exact { cols, cells } => {
                for (c, &b) in cells[segment * *cols..(segment + 1) * *cols].iter_mut().zip(row) {
                    c.add(b.as_f64());
                }
            }
        }
    }

    /// Adds `a ⊙ b` to a segment without materialising the product row.
    #[inline]
    pub fn add_product(&mut self, segment: usize, a: &[T], b: &[T]) {
        match self {
            SegmentSums::Fast(m) => {
                for ((o, &x), &y) in m.row_mut(segment).iter_mut().zip(a).zip(b) {
                    *o += x * y;
                }
            }
            SegmentSums::Exact { cols, cells } => {
                for ((c, &x), &y) in cells[segment * *cols..(segment + 1) * *cols].iter_mut().zip(a).zip(b) {
                    c.add((x * y).as_f64());
                }
            }
        }
    }

    /// Adds segment `src` of `other` into segment `dst` of `self`.
    pub fn merge_segment(&mut self, dst: usize, other: &SegmentSums<T>, src: usize) {
        match (self, other) {
            (SegmentSums::Fast(m), SegmentSums::Fast(o)) => {
                for (a, &b) in m.row_mut(dst).iter_mut().zip(o.row(src)) {
                    *a += b;
                }
            }
            (SegmentSums::Exact { cols, cells }, SegmentSums::Exact { cells: oc, .. }) => {
                let c = *cols;
                for k in 0..c {
                    let other_cell = oc[src * c + k].clone();
                    cells[dst * c + k].merge(&other_cell);
                }
            }
            _ => panic!("merging segment sums of different reduction modes"),
        }
    }

    pub fn finish(self) -> Matrix<T> {
        match self {
            SegmentSums::Fast(m) => m,
            SegmentSums::Exact { cols, cells } => {
                let rows = if cols == 0 { 0 } else { cells.len() / cols };
                let data = cells.iter().map(|c| T::from_f64(c.value())).collect();
                Matrix::from_vec(rows, cols, data).expect("cells are rows × cols")
            }
        }
    }
}

/// `A[v] = Σ_{e : dst[e] = v} M[e]`; segments without rows are zero.
pub fn segment_sum<T: Real>(
    m: &Matrix<T>,
    dst: &[u32],
    n_nodes: usize,
    reduction: Reduction,
) -> Result<Matrix<T>, ShapeError> {
    let mut acc = SegmentSums::new(n_nodes, m.cols(), reduction);
    segment_sum_into(&mut acc, m, dst)?;
    Ok(acc.finish())
}

pub fn segment_sum_into<T: Real>(acc: &mut SegmentSums<T>, m: &Matrix<T>, dst: &[u32]) -> Result<(), ShapeError> {
    if dst.len() != m.rows() {
        return Err(ShapeError::mismatch("segment_sum ids", m.rows(), dst.len()));
    }
    let n = acc.n_segments();
    if let Some(&bad) = dst.iter().find(|&&v| v as usize >= n) {
        return Err(ShapeError::IndexOutOfRange { index: bad, len: n });
    }
    for (e, &v) in dst.iter().enumerate() {
        acc.add_row(v as usize, m.row(e));
    }
    Ok(())
}
