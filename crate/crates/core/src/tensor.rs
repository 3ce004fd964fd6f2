//! Shaped numeric arrays, simulated precisions, and tolerance-aware comparison.
//!
//! All arithmetic is carried out in `f64`. A tensor tagged with a lower
//! [`Precision`] has every element rounded to that precision when it is
//! written, so reduced-precision behavior is reproduced exactly and
//! deterministically on one numeric kernel.
//!
//! Flattening is row-major within a tensor and concatenates tensors in
//! argument order. Jacobian column indices depend on this convention.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulated floating-point precision, ordered by significand width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// IEEE binary16: 11 significand bits.
    F16,
    F32,
    F64,
}

impl Precision {
    pub const ALL: [Precision; 3] = [Precision::F16, Precision::F32, Precision::F64];

    /// Round `x` to the nearest value representable at this precision.
    pub fn quantize(self, x: f64) -> f64 {
        match self {
            Precision::F64 => x,
            Precision::F32 => x as f32 as f64,
            Precision::F16 => half::f16::from_f64(x).to_f64(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F16 => "f16",
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Precision> {
        match s {
            "f16" => Some(Precision::F16),
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Shape and precision of a value, without its data.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ValueInfo {
    pub shape: Vec<usize>,
    pub precision: Precision,
}

impl ValueInfo {
    pub fn new(shape: Vec<usize>, precision: Precision) -> Self {
        ValueInfo { shape, precision }
    }

    pub fn scalar(precision: Precision) -> Self {
        ValueInfo { shape: Vec::new(), precision }
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    precision: Precision,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, quantizing every element to `precision`.
    pub fn new(shape: Vec<usize>, precision: Precision, mut data: Vec<f64>) -> Result<Self> {
        let expected = numel(&shape);
        if data.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: data.len() });
        }
        if precision != Precision::F64 {
            for v in &mut data {
                *v = precision.quantize(*v);
            }
        }
        Ok(Tensor { shape, precision, data })
    }

    pub fn scalar(value: f64, precision: Precision) -> Self {
        Tensor { shape: Vec::new(), precision, data: vec![precision.quantize(value)] }
    }

    pub fn full(shape: Vec<usize>, precision: Precision, value: f64) -> Self {
        let n = numel(&shape);
        Tensor { shape, precision, data: vec![precision.quantize(value); n] }
    }

    pub fn zeros(info: &ValueInfo) -> Self {
        Tensor::full(info.shape.clone(), info.precision, 0.0)
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Tensor::new(shape, Precision::F64, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn info(&self) -> ValueInfo {
        ValueInfo { shape: self.shape.clone(), precision: self.precision }
    }

    /// Same data re-quantized at another precision.
    pub fn with_precision(&self, precision: Precision) -> Self {
        Tensor {
            shape: self.shape.clone(),
            precision,
            data: self.data.iter().map(|&v| precision.quantize(v)).collect(),
        }
    }

    /// Same data under a new shape with the same element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.numel() {
            return Err(Error::LengthMismatch { expected: numel(&shape), actual: self.numel() });
        }
        Ok(Tensor { shape, precision: self.precision, data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let p = self.precision;
        Tensor {
            shape: self.shape.clone(),
            precision: p,
            data: self.data.iter().map(|&v| p.quantize(f(v))).collect(),
        }
    }
}

/// Concatenate the row-major element streams of `tensors`, in order.
pub fn flatten(tensors: &[Tensor]) -> Vec<f64> {
    let total = tensors.iter().map(Tensor::numel).sum();
    let mut out = Vec::with_capacity(total);
    for t in tensors {
        out.extend_from_slice(t.data());
    }
    out
}

/// Inverse of [`flatten`] for F64 tensors.
pub fn unflatten(v: &[f64], shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
    let infos: Vec<ValueInfo> =
        shapes.iter().map(|s| ValueInfo::new(s.clone(), Precision::F64)).collect();
    unflatten_infos(v, &infos)
}

/// Split `v` into tensors with the given shapes and precisions.
pub fn unflatten_infos(v: &[f64], infos: &[ValueInfo]) -> Result<Vec<Tensor>> {
    let expected: usize = infos.iter().map(ValueInfo::numel).sum();
    if v.len() != expected {
        return Err(Error::LengthMismatch { expected, actual: v.len() });
    }
    let mut offset = 0;
    infos
        .iter()
        .map(|info| {
            let n = info.numel();
            let t = Tensor::new(info.shape.clone(), info.precision, v[offset..offset + n].to_vec());
            offset += n;
            t
        })
        .collect()
}

/// Elementwise closeness: `|a - b| <= atol + rtol * |b|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub atol: f64,
    pub rtol: f64,
    #[serde(default = "default_true")]
    pub nan_equal: bool,
}

fn default_true() -> bool {
    true
}

impl Comparison {
    pub const fn new(atol: f64, rtol: f64) -> Self {
        Comparison { atol, rtol, nan_equal: true }
    }

    /// Default for comparing outputs across execution scenarios.
    pub const fn output() -> Self {
        Comparison::new(1e-8, 1e-6)
    }

    /// Default for comparing F64 gradients.
    pub const fn gradient() -> Self {
        Comparison::new(1e-6, 1e-3)
    }

    /// Exact equality; NaN still equals NaN.
    pub const fn bitwise() -> Self {
        Comparison::new(0.0, 0.0)
    }

    pub fn equal(&self, a: f64, b: f64) -> bool {
        if a.is_nan() || b.is_nan() {
            return a.is_nan() && b.is_nan() && self.nan_equal;
        }
        if a.is_infinite() || b.is_infinite() {
            return a == b;
        }
        (a - b).abs() <= self.atol + self.rtol * b.abs()
    }

    pub fn all_equal(&self, a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| self.equal(x, y))
    }

    /// Per-precision looseness used for gradients computed below F64.
    pub fn widened_for(&self, precision: Precision) -> Self {
        match precision {
            Precision::F64 => *self,
            Precision::F32 => Comparison {
                atol: self.atol.max(1e-4),
                rtol: self.rtol.max(1e-2),
                nan_equal: self.nan_equal,
            },
            Precision::F16 => Comparison {
                atol: self.atol.max(1e-2),
                rtol: self.rtol.max(5e-2),
                nan_equal: self.nan_equal,
            },
        }
    }
}

impl Default for Comparison {
    fn default() -> Self {
        Comparison::output()
    }
}

pub fn tensors_equal(a: &Tensor, b: &Tensor, c: &Comparison) -> bool {
    a.shape == b.shape && a.precision == b.precision && c.all_equal(&a.data, &b.data)
}

/// Largest elementwise `|a - b|`; mismatched NaN or infinities count as infinite.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |acc: f64, (&x, &y)| {
        let d = if x.is_nan() && y.is_nan() {
            0.0
        } else if x == y {
            0.0
        } else if x.is_finite() && y.is_finite() {
            (x - y).abs()
        } else {
            f64::INFINITY
        };
        acc.max(d)
    })
}
