use crate::error::{Error, Result};
use crate::lap::SourceId;
use crate::matrix::Matrix;

/// Features, labels and the single source they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub source: SourceId,
}

impl Batch {
    pub fn new(x: Matrix, labels: Vec<usize>, source: SourceId) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                x.rows(),
                labels.len()
            )));
        }
        Ok(Self { x, labels, source })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
