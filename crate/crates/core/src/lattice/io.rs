//! Flat field layout shared by the binary and CSV encodings.
//!
//! Both encodings start with the header `(d, L, components per site)` and then list
//! the values in linear-index order, components innermost. Binary headers are three
//! little-endian `u32`, values little-endian `f64`. CSV values use the shortest
//! round-trip decimal form, so both encodings reproduce the field bit for bit.

use std::io::{BufRead, Read, Write};

use thiserror::Error;

use super::{MatrixField, ScalarField, TorusGrid, VectorField};
use crate::ensemble::CoefficientField;

#[derive(Debug, Error)]
pub enum FieldIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed field data: {0}")]
    Format(String),
}

/// Grid, per-site component count and the flat values.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldRecord {
    pub grid: TorusGrid,
    pub components: usize,
    pub values: Vec<f64>,
}

impl FieldRecord {
    pub fn new(grid: TorusGrid, components: usize, values: Vec<f64>) -> Result<Self, FieldIoError> {
        if components == 0 || values.len() != grid.len() * components {
            return Err(FieldIoError::Format(format!(
                "{} values do not fill {} sites with {} components",
                values.len(),
                grid.len(),
                components
            )));
        }
        Ok(Self {
            grid,
            components,
            values,
        })
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<(), FieldIoError> {
        for h in [self.grid.dim(), self.grid.side(), self.components] {
            w.write_all(&(h as u32).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self, FieldIoError> {
        let mut word = [0u8; 4];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word) as usize;
        }
        let grid = grid_from_header(header[0], header[1])?;
        let count = grid.len() * header[2];
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        if r.read(&mut buf)? != 0 {
            return Err(FieldIoError::Format("trailing bytes after field values".into()));
        }
        Self::new(grid, header[2], values)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<(), FieldIoError> {
        writeln!(w, "d,L,components")?;
        writeln!(w, "{},{},{}", self.grid.dim(), self.grid.side(), self.components)?;
        for row in self.values.chunks_exact(self.components) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self, FieldIoError> {
        let mut lines = r.lines();
        let mut next = || -> Result<String, FieldIoError> {
            lines
                .next()
                .ok_or_else(|| FieldIoError::Format("unexpected end of CSV".into()))?
                .map_err(FieldIoError::from)
        };
        if next()?.trim() != "d,L,components" {
            return Err(FieldIoError::Format("missing CSV header".into()));
        }
        let header: Vec<usize> = next()?
            .trim()
            .split(',')
            .map(|t| t.parse().map_err(|_| FieldIoError::Format(format!("bad header entry {t:?}"))))
            .collect::<Result<_, _>>()?;
        if header.len() != 3 {
            return Err(FieldIoError::Format("header needs d, L and components".into()));
        }
        let grid = grid_from_header(header[0], header[1])?;
        let mut values = Vec::with_capacity(grid.len() * header[2]);
        for _ in 0..grid.len() {
            let line = next()?;
            let row: Vec<f64> = line
                .trim()
                .split(',')
                .map(|t| t.parse().map_err(|_| FieldIoError::Format(format!("bad value {t:?}"))))
                .collect::<Result<_, _>>()?;
            if row.len() != header[2] {
                return Err(FieldIoError::Format(format!(
                    "row has {} values, expected {}",
                    row.len(),
                    header[2]
                )));
            }
            values.extend(row);
        }
        Self::new(grid, header[2], values)
    }
}

fn grid_from_header(dim: usize, side: usize) -> Result<TorusGrid, FieldIoError> {
    TorusGrid::new(dim, side).map_err(|e| FieldIoError::Format(e.to_string()))
}

impl From<&ScalarField> for FieldRecord {
    fn from(f: &ScalarField) -> Self {
        Self {
            grid: f.grid(),
            components: 1,
            values: f.values().to_vec(),
        }
    }
}

impl From<&VectorField> for FieldRecord {
    fn from(f: &VectorField) -> Self {
        Self {
            grid: f.grid(),
            components: f.grid().dim(),
            values: f.values().to_vec(),
        }
    }
}

impl From<&MatrixField> for FieldRecord {
    fn from(f: &MatrixField) -> Self {
        let d = f.grid().dim();
        Self {
            grid: f.grid(),
            components: d * d,
            values: f.values().to_vec(),
        }
    }
}

impl From<&CoefficientField> for FieldRecord {
    fn from(a: &CoefficientField) -> Self {
        Self {
            grid: a.grid(),
            components: a.grid().dim(),
            values: a.diag().to_vec(),
        }
    }
}

impl FieldRecord {
    pub fn into_scalar(self) -> Result<ScalarField, FieldIoError> {
        self.expect_components(1)?;
        Ok(ScalarField::from_values(self.grid, self.values))
    }

    pub fn into_vector(self) -> Result<VectorField, FieldIoError> {
        self.expect_components(self.grid.dim())?;
        Ok(VectorField::from_values(self.grid, self.values))
    }

    pub fn into_matrix(self) -> Result<MatrixField, FieldIoError> {
        let d = self.grid.dim();
        self.expect_components(d * d)?;
        Ok(MatrixField::from_values(self.grid, self.values))
    }

    pub fn into_coefficients(self) -> Result<CoefficientField, FieldIoError> {
        self.expect_components(self.grid.dim())?;
        CoefficientField::new(self.grid, self.values).map_err(|e| FieldIoError::Format(e.to_string()))
    }

    fn expect_components(&self, n: usize) -> Result<(), FieldIoError> {
        if self.components == n {
            Ok(())
        } else {
            Err(FieldIoError::Format(format!(
                "expected {n} components per site, found {}",
                self.components
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_strategy() -> impl Strategy<Value = FieldRecord> {
        (1usize..=3, 2usize..=4, 1usize..=4).prop_flat_map(|(d, l, c)| {
            let g = TorusGrid::new(d, l).unwrap();
            prop::collection::vec(any::<f64>().prop_filter("not NaN", |v| !v.is_nan()), g.len() * c)
                .prop_map(move |values| FieldRecord::new(g, c, values).unwrap())
        })
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(rec in record_strategy()) {
            let mut buf = Vec::new();
            rec.write_binary(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), 12 + 8 * rec.values.len());
            let back = FieldRecord::read_binary(buf.as_slice()).unwrap();
            prop_assert_eq!(back.grid, rec.grid);
            prop_assert_eq!(back.components, rec.components);
            prop_assert_eq!(bits(&back.values), bits(&rec.values));
        }

        #[test]
        fn csv_round_trip_is_bit_exact(rec in record_strategy()) {
            let mut buf = Vec::new();
            rec.write_csv(&mut buf).unwrap();
            let back = FieldRecord::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.grid, rec.grid);
            prop_assert_eq!(bits(&back.values), bits(&rec.values));
        }
    }

    #[test]
    fn rejects_truncated_and_mislabelled_input() {
        let g = TorusGrid::new(2, 2).unwrap();
        let rec = FieldRecord::from(&ScalarField::from_fn(g, |x| x as f64 * 0.1));
        let mut buf = Vec::new();
        rec.write_binary(&mut buf).unwrap();
        assert!(FieldRecord::read_binary(&buf[..buf.len() - 3]).is_err());
        buf.push(0);
        assert!(FieldRecord::read_binary(buf.as_slice()).is_err());
        assert!(FieldRecord::read_csv("d,L,components\n2,2,1\n0.0\n".as_bytes()).is_err());
        assert!(rec.clone().into_vector().is_err());
        assert_eq!(rec.into_scalar().unwrap().get(3), 0.30000000000000004);
    }
}
