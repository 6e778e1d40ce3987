use crate::error::{Error, Result};

/// Space-time grid function stored row-major: one row per time level
/// `t0 + k * dt`, one column per interior node (or reduced coordinate).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    width: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, width: usize) -> Self {
        assert!(width > 0, "trajectory width must be positive");
        Self {
            t0,
            dt,
            width,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(t0: f64, dt: f64, width: usize, rows: usize) -> Self {
        let mut t = Self::new(t0, dt, width);
        t.data.reserve(rows * width);
        t
    }

    pub fn zeros(t0: f64, dt: f64, rows: usize, width: usize) -> Self {
        assert!(width > 0, "trajectory width must be positive");
        Self {
            t0,
            dt,
            width,
            data: vec![0.0; rows * width],
        }
    }

    pub fn from_rows(t0: f64, dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("empty row list".into()))?;
        if width == 0 {
            return Err(Error::InvalidArgument("zero-width rows".into()));
        }
        let mut t = Self::with_capacity(t0, dt, width, rows.len());
        for r in rows {
            t.push_row(r)?;
        }
        Ok(t)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        crate::error::check_dim("trajectory row", self.width, row.len())?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value in row {}",
                self.len()
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of stored time levels.
    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.width)
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        let n = self.len();
        (n > 0).then(|| self.row(n - 1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Keeps only the first `rows` time levels.
    pub fn truncated(&self, rows: usize) -> Self {
        let rows = rows.min(self.len());
        Self {
            t0: self.t0,
            dt: self.dt,
            width: self.width,
            data: self.data[..rows * self.width].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Entrywise `self - other`; windows must agree.
    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        crate::error::check_dim("trajectory width", self.width, other.width)?;
        crate::error::check_dim("trajectory rows", self.len(), other.len())?;
        Ok(Self {
            t0: self.t0,
            dt: self.dt,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
