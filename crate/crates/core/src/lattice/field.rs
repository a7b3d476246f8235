use super::TorusGrid;

/// One real value per site.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

/// `d` real components per site, stored site-major (`values[x * d + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    values: Vec<f64>,
}

/// `d x d` real entries per site, stored site-major (`values[(x * d + i) * d + j]`).
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Panics if `values.len() != L^d`.
    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "scalar field length");
        Self { grid, values }
    }

    pub fn from_fn(grid: TorusGrid, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            grid,
            values: grid.sites().map(f).collect(),
        }
    }

    /// Unit mass at `site`.
    pub fn delta(grid: TorusGrid, site: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[site] = 1.0;
        f
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, site: usize) -> f64 {
        self.values[site]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn spatial_mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Copy with the spatial mean subtracted.
    pub fn mean_zero(&self) -> Self {
        let mut out = self.clone();
        out.project_mean_zero();
        out
    }

    pub fn project_mean_zero(&mut self) {
        let m = self.spatial_mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// The field `x -> v(x + y)`.
    pub fn shifted(&self, y: usize) -> Self {
        let g = self.grid;
        Self::from_fn(g, |x| self.values[g.translate(x, y)])
    }
}

impl VectorField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len() * grid.dim()],
        }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len() * grid.dim(), "vector field length");
        Self { grid, values }
    }

    /// Constant field equal to the unit vector `e_j`.
    pub fn unit(grid: TorusGrid, j: usize) -> Self {
        let d = grid.dim();
        let mut v = Self::zeros(grid);
        for x in grid.sites() {
            v.values[x * d + j] = 1.0;
        }
        v
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, site: usize, i: usize) -> f64 {
        self.values[site * self.grid.dim() + i]
    }

    #[inline]
    pub fn set(&mut self, site: usize, i: usize, v: f64) {
        let d = self.grid.dim();
        self.values[site * d + i] = v;
    }

    /// Components at one site.
    pub fn at(&self, site: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[site * d..(site + 1) * d]
    }

    /// Euclidean length at one site.
    pub fn magnitude(&self, site: usize) -> f64 {
        self.at(site).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The `i`-th component as a scalar field.
    pub fn component(&self, i: usize) -> ScalarField {
        ScalarField::from_fn(self.grid, |x| self.get(x, i))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

impl MatrixField {
    pub fn zeros(grid: TorusGrid) -> Self {
        let d = grid.dim();
        Self {
            grid,
            values: vec![0.0; grid.len() * d * d],
        }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Self {
        let d = grid.dim();
        assert_eq!(values.len(), grid.len() * d * d, "matrix field length");
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, site: usize, i: usize, j: usize) -> f64 {
        let d = self.grid.dim();
        self.values[(site * d + i) * d + j]
    }

    #[inline]
    pub fn set(&mut self, site: usize, i: usize, j: usize, v: f64) {
        let d = self.grid.dim();
        self.values[(site * d + i) * d + j] = v;
    }

    /// Entry `(i, j)` as a scalar field.
    pub fn entry(&self, i: usize, j: usize) -> ScalarField {
        ScalarField::from_fn(self.grid, |x| self.get(x, i, j))
    }

    /// Sum over sites of the squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Spatial average as a row-major `d x d` matrix.
    pub fn spatial_mean(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let n = self.grid.len() as f64;
        let mut m = vec![0.0; d * d];
        for chunk in self.values.chunks_exact(d * d) {
            m.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Pointwise `M(x) : H(x)` for a constant row-major matrix `m`.
    pub fn contract_constant(&self, m: &[f64]) -> ScalarField {
        let d = self.grid.dim();
        assert_eq!(m.len(), d * d);
        ScalarField::from_fn(self.grid, |x| {
            self.values[x * d * d..(x + 1) * d * d]
                .iter()
                .zip(m)
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// Pointwise `M(x) : H(x)`.
    pub fn contract(&self, other: &Self) -> ScalarField {
        assert_eq!(self.grid, other.grid);
        let dd = self.grid.dim() * self.grid.dim();
        ScalarField::from_fn(self.grid, |x| {
            self.values[x * dd..(x + 1) * dd]
                .iter()
                .zip(&other.values[x * dd..(x + 1) * dd])
                .map(|(a, b)| a * b)
                .sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_zero_examples() {
        let g = TorusGrid::new(1, 4).unwrap();
        let c = ScalarField::constant(g, 3.5);
        assert_eq!(c.spatial_mean(), 3.5);
        assert!(c.mean_zero().max_abs() == 0.0);
        let alt = ScalarField::from_values(g, vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(alt.spatial_mean(), 0.0);
        assert_eq!(alt.mean_zero(), alt);
    }

    #[test]
    fn shifted_field_reads_translated_site() {
        let g = TorusGrid::new(2, 3).unwrap();
        let v = ScalarField::from_fn(g, |x| x as f64);
        let y = g.index(&[1, 2]);
        let s = v.shifted(y);
        for x in g.sites() {
            assert_eq!(s.get(x), v.get(g.translate(x, y)));
        }
    }

    #[test]
    fn matrix_contractions() {
        let g = TorusGrid::new(2, 2).unwrap();
        let mut m = MatrixField::zeros(g);
        m.set(1, 0, 1, 2.0);
        m.set(1, 1, 1, 3.0);
        let c = m.contract_constant(&[1.0, 10.0, 100.0, 1000.0]);
        assert_eq!(c.values(), &[0.0, 3020.0, 0.0, 0.0]);
        assert_eq!(m.contract(&m).get(1), 13.0);
        assert_eq!(m.spatial_mean(), vec![0.0, 0.5, 0.0, 0.75]);
    }
}
