use nalgebra::{DMatrix, DVector};

/// One coefficient of a residual row: `coeff * X[(row, col)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
}

/// Row-compressed representation of a linear map `R^{m x n} -> R^p`.
///
/// Every concrete operator in this crate is assembled into one of these at
/// construction. The solvers read the terms directly to build Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    terms: Vec<Term>,
}

impl SparseMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, offsets: vec![0], terms: Vec::new() }
    }

    /// Appends a residual row. Zero coefficients are dropped.
    pub fn push_row<I: IntoIterator<Item = Term>>(&mut self, terms: I) {
        for t in terms {
            debug_assert!(t.row < self.rows && t.col < self.cols);
            if t.coeff != 0.0 {
                self.terms.push(t);
            }
        }
        self.offsets.push(self.terms.len());
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Output dimension `p`.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, r: usize) -> &[Term] {
        &self.terms[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    pub(crate) fn apply_unchecked(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|r| self.row(r).iter().map(|t| t.coeff * x[(t.row, t.col)]).sum()),
        )
    }

    pub(crate) fn adjoint_unchecked(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.len() {
            let yr = y[r];
            for t in self.row(r) {
                out[(t.row, t.col)] += t.coeff * yr;
            }
        }
        out
    }

    /// Partition of the columns of `X` into groups such that no residual row
    /// touches two groups. Groups are ordered by their smallest column and
    /// each group lists the residual rows that touch it.
    pub fn column_groups(&self) -> Vec<ColumnGroup> {
        let mut uf = UnionFind::new(self.cols);
        for r in 0..self.len() {
            let row = self.row(r);
            if let Some(first) = row.first() {
                for t in &row[1..] {
                    uf.union(first.col, t.col);
                }
            }
        }
        let mut group_of = vec![usize::MAX; self.cols];
        let mut groups: Vec<ColumnGroup> = Vec::new();
        for c in 0..self.cols {
            let root = uf.find(c);
            if group_of[root] == usize::MAX {
                group_of[root] = groups.len();
                groups.push(ColumnGroup { cols: Vec::new(), rows: Vec::new() });
            }
            groups[group_of[root]].cols.push(c);
        }
        for r in 0..self.len() {
            if let Some(first) = self.row(r).first() {
                groups[group_of[uf.find(first.col)]].rows.push(r);
            }
        }
        groups
    }

    /// Partition of the entries of `X` (row-major index `i * n + j`) into
    /// groups coupled through shared residual rows.
    pub fn entry_groups(&self) -> Vec<EntryGroup> {
        let n = self.cols;
        let mut uf = UnionFind::new(self.rows * self.cols);
        for r in 0..self.len() {
            let row = self.row(r);
            if let Some(first) = row.first() {
                for t in &row[1..] {
                    uf.union(first.row * n + first.col, t.row * n + t.col);
                }
            }
        }
        let mut group_of = vec![usize::MAX; self.rows * n];
        let mut groups: Vec<EntryGroup> = Vec::new();
        let mut touched = vec![false; self.rows * n];
        for t in &self.terms {
            touched[t.row * n + t.col] = true;
        }
        for e in 0..self.rows * n {
            if !touched[e] {
                continue;
            }
            let root = uf.find(e);
            if group_of[root] == usize::MAX {
                group_of[root] = groups.len();
                groups.push(EntryGroup { entries: Vec::new(), rows: Vec::new() });
            }
            groups[group_of[root]].entries.push((e / n, e % n));
        }
        for r in 0..self.len() {
            if let Some(first) = self.row(r).first() {
                groups[group_of[uf.find(first.row * n + first.col)]].rows.push(r);
            }
        }
        groups
    }

    /// Dense `p x (m n)` materialization, with columns in row-major entry order.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.len(), self.rows * self.cols);
        for r in 0..self.len() {
            for t in self.row(r) {
                a[(r, t.row * self.cols + t.col)] += t.coeff;
            }
        }
        a
    }
}

/// Columns of `X` coupled through residual rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnGroup {
    pub cols: Vec<usize>,
    pub rows: Vec<usize>,
}

/// Entries `(i, j)` of `X` coupled through residual rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryGroup {
    pub entries: Vec<(usize, usize)>,
    pub rows: Vec<usize>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so group order is deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_coupling() {
        let mut s = SparseMap::new(2, 4);
        s.push_row([Term { row: 0, col: 0, coeff: 1.0 }, Term { row: 1, col: 2, coeff: 2.0 }]);
        s.push_row([Term { row: 0, col: 1, coeff: 1.0 }]);
        s.push_row([Term { row: 0, col: 1, coeff: 0.0 }]);
        let g = s.column_groups();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].cols, vec![0, 2]);
        assert_eq!(g[0].rows, vec![0]);
        assert_eq!(g[1].cols, vec![1]);
        assert_eq!(g[1].rows, vec![1]);
        assert_eq!(g[2].cols, vec![3]);
        assert!(g[2].rows.is_empty());
        let e = s.entry_groups();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].entries, vec![(0, 0), (1, 2)]);
        assert_eq!(s.len(), 3);
        assert!(s.row(2).is_empty());
    }
}
