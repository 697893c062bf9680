use std::fmt;

use thiserror::Error;

/// Maximum rank of a [`RealVector`].
pub const MAX_RANK: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("vector rank {0} outside 1..={MAX_RANK}")]
    BadRank(usize),
    #[error("shape {shape:?} describes {expected} elements but {found} were given")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
}

/// Row-major real array of rank 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVector {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealVector {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ValueError> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(ValueError::BadRank(shape.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ValueError::ShapeMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Rank-1 vector over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// A value exchanged over the protocol: a sample, an observation or a run result.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Integer(i64),
    RealVector(RealVector),
    Boolean(bool),
}

impl Value {
    pub fn vector(data: Vec<f64>) -> Self {
        Value::RealVector(RealVector::from_vec(data))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Real(x) => Some(x),
            Value::Integer(k) => Some(k as f64),
            Value::Boolean(b) => Some(if b { 1.0 } else { 0.0 }),
            Value::RealVector(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::Integer(k) => Some(k),
            _ => None,
        }
    }

    /// Number of scalar elements the value carries.
    pub fn element_count(&self) -> usize {
        match self {
            Value::RealVector(v) => v.data.len(),
            _ => 1,
        }
    }

    /// Appends the value's elements, row-major, as reals.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        match self {
            Value::RealVector(v) => out.extend_from_slice(&v.data),
            other => out.push(other.as_f64().unwrap_or(f64::NAN)),
        }
    }

    /// Builds a value of the same variant and shape as `self` from `elements`.
    ///
    /// Returns `None` when the element count differs or an integer/boolean
    /// target receives a non-integral element.
    pub fn with_elements_like(&self, elements: &[f64]) -> Option<Value> {
        if elements.len() != self.element_count() {
            return None;
        }
        match self {
            Value::Real(_) => Some(Value::Real(elements[0])),
            Value::Integer(_) => {
                let x = elements[0];
                (x.fract() == 0.0 && x.abs() < 9.0e15).then_some(Value::Integer(x as i64))
            }
            Value::Boolean(_) => match elements[0] {
                0.0 => Some(Value::Boolean(false)),
                1.0 => Some(Value::Boolean(true)),
                _ => None,
            },
            Value::RealVector(v) => Some(Value::RealVector(RealVector {
                shape: v.shape.clone(),
                data: elements.to_vec(),
            })),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(x) => write!(f, "{x}"),
            Value::Integer(k) => write!(f, "{k}"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::RealVector(v) => write!(f, "RealVector{:?}", v.shape),
        }
    }
}
