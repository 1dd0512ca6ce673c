use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Effective value of a nonnegativity-constrained coefficient stored as an
/// unconstrained real.
#[inline]
pub fn positive(raw: f64) -> f64 {
    raw * raw
}

/// Derivative of [`positive`] with respect to the stored value.
#[inline]
pub fn positive_deriv(raw: f64) -> f64 {
    2.0 * raw
}

/// Stored value producing the given nonnegative effective coefficient.
#[inline]
pub fn positive_raw(effective: f64) -> f64 {
    effective.max(0.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl ParamSlice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flat parameter vector with named contiguous slices, one per owner.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    slices: Vec<ParamSlice>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a vector from raw parts, checking that the slices tile it.
    pub fn from_parts(values: Vec<f64>, mut slices: Vec<ParamSlice>) -> Result<Self> {
        slices.sort_by_key(|s| s.start);
        let mut cursor = 0;
        for s in &slices {
            if s.start != cursor {
                return Err(Error::Structure(format!(
                    "parameter slice `{}` starts at {} but previous slice ends at {}",
                    s.name, s.start, cursor
                )));
            }
            cursor += s.len;
        }
        if cursor != values.len() {
            return Err(Error::dim("parameter slices", values.len(), cursor));
        }
        Ok(Self { values, slices })
    }

    /// Appends a named slice and returns its range.
    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) -> Range<usize> {
        let start = self.values.len();
        self.values.extend_from_slice(values);
        self.slices.push(ParamSlice {
            name: name.into(),
            start,
            len: values.len(),
        });
        start..start + values.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::dim("parameter vector", self.values.len(), values.len()));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.slices.iter().find(|s| s.name == name).map(ParamSlice::range)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.range(name).map(|r| &self.values[r])
    }

    pub fn write_slice(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let r = self
            .range(name)
            .ok_or_else(|| Error::Structure(format!("no parameter slice named `{name}`")))?;
        if r.len() != values.len() {
            return Err(Error::dim(format!("parameter slice `{name}`"), r.len(), values.len()));
        }
        self.values[r].copy_from_slice(values);
        Ok(())
    }
}
