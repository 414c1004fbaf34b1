//! Invertible maps between table attributes and the continuous space the
//! diffusion operates in.
//!
//! Categoricals are label encoded by first appearance and then standardized.
//! Numerical columns with at least [`QUANTILE_MIN_DISTINCT`] distinct values use a
//! quantile transform to a standard normal; the rest are z-scored.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::schema::{ColumnKind, Database, Value};

pub const QUANTILE_MIN_DISTINCT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum NumericTransform {
    ZScore { mean: f64, std: f64 },
    /// Piecewise-linear map through `(knots[i], scores[i])`, both strictly increasing.
    Quantile { knots: Vec<f64>, scores: Vec<f64> },
    Constant { value: f64 },
}

impl NumericTransform {
    fn forward(&self, x: f64) -> f64 {
        match self {
            NumericTransform::ZScore { mean, std } => (x - mean) / std,
            NumericTransform::Quantile { knots, scores } => interpolate(knots, scores, x),
            NumericTransform::Constant { .. } => 0.0,
        }
    }

    fn inverse(&self, z: f64) -> f64 {
        match self {
            NumericTransform::ZScore { mean, std } => z * std + mean,
            NumericTransform::Quantile { knots, scores } => interpolate(scores, knots, z),
            NumericTransform::Constant { value } => *value,
        }
    }
}

/// Linear interpolation of `x` through increasing `xs` onto `ys`, clamped at the ends.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&k| k <= x) - 1;
    if x == xs[i] {
        return ys[i];
    }
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + w * (ys[i + 1] - ys[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnCodec {
    Categorical {
        name: String,
        categories: Vec<String>,
        mean: f64,
        std: f64,
    },
    Numerical {
        name: String,
        transform: NumericTransform,
        /// Every training value was an integer; decoded values are rounded.
        integral: bool,
        min: f64,
        max: f64,
    },
}

impl ColumnCodec {
    pub fn name(&self) -> &str {
        match self {
            ColumnCodec::Categorical { name, .. } | ColumnCodec::Numerical { name, .. } => name,
        }
    }

    pub fn fit(name: &str, kind: ColumnKind, values: &[&Value]) -> Result<Self> {
        match kind {
            ColumnKind::Categorical => {
                let mut categories: Vec<String> = Vec::new();
                let mut index: HashMap<&str, usize> = HashMap::new();
                let mut codes = Vec::with_capacity(values.len());
                for v in values {
                    let s = v.as_category().ok_or_else(|| Error::Codec {
                        column: name.into(),
                        message: format!("expected a category, got `{v}`"),
                    })?;
                    let next = index.len();
                    let code = *index.entry(s).or_insert_with(|| {
                        categories.push(s.to_string());
                        next
                    });
                    codes.push(code as f64);
                }
                let (mean, std) = mean_std(&codes);
                Ok(ColumnCodec::Categorical {
                    name: name.into(),
                    categories,
                    mean,
                    std: if std > 0.0 { std } else { 1.0 },
                })
            }
            ColumnKind::Numerical | ColumnKind::Datetime => {
                let xs = values
                    .iter()
                    .map(|v| {
                        v.as_number().ok_or_else(|| Error::Codec {
                            column: name.into(),
                            message: format!("expected a number, got `{v}`"),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Self::fit_numerical(name, &xs))
            }
        }
    }

    fn fit_numerical(name: &str, xs: &[f64]) -> Self {
        if xs.is_empty() {
            return ColumnCodec::Numerical {
                name: name.into(),
                transform: NumericTransform::ZScore { mean: 0.0, std: 1.0 },
                integral: false,
                min: f64::NEG_INFINITY,
                max: f64::INFINITY,
            };
        }
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        let integral = xs.iter().all(|x| x.fract() == 0.0);

        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for &x in &sorted {
            match distinct.last_mut() {
                Some((v, c)) if *v == x => *c += 1,
                _ => distinct.push((x, 1)),
            }
        }

        let transform = if distinct.len() == 1 {
            NumericTransform::Constant { value: min }
        } else if distinct.len() >= QUANTILE_MIN_DISTINCT {
            // Each distinct value maps to the normal score of the midpoint of its ECDF jump.
            let normal = Normal::standard();
            let n = xs.len() as f64;
            let mut below = 0usize;
            let mut knots = Vec::with_capacity(distinct.len());
            let mut scores = Vec::with_capacity(distinct.len());
            for (v, c) in distinct {
                let mid = (below as f64 + c as f64 / 2.0) / n;
                below += c;
                knots.push(v);
                scores.push(normal.inverse_cdf(mid));
            }
            NumericTransform::Quantile { knots, scores }
        } else {
            let (mean, std) = mean_std(xs);
            NumericTransform::ZScore { mean, std }
        };
        ColumnCodec::Numerical {
            name: name.into(),
            transform,
            integral,
            min,
            max,
        }
    }

    pub fn encode(&self, value: &Value) -> Result<f64> {
        match (self, value) {
            (
                ColumnCodec::Categorical {
                    name,
                    categories,
                    mean,
                    std,
                },
                Value::Category(s),
            ) => {
                let code = categories.iter().position(|c| c == s).ok_or_else(|| Error::Codec {
                    column: name.clone(),
                    message: format!("unknown category `{s}`"),
                })?;
                Ok((code as f64 - mean) / std)
            }
            (ColumnCodec::Numerical { transform, .. }, Value::Number(x)) => Ok(transform.forward(*x)),
            (codec, v) => Err(Error::Codec {
                column: codec.name().to_string(),
                message: format!("value `{v}` has the wrong kind"),
            }),
        }
    }

    /// Maps any finite encoded value back to a valid attribute value.
    pub fn decode(&self, z: f64) -> Result<Value> {
        if !z.is_finite() {
            return Err(Error::Codec {
                column: self.name().to_string(),
                message: format!("cannot decode non-finite value {z}"),
            });
        }
        match self {
            ColumnCodec::Categorical {
                name,
                categories,
                mean,
                std,
            } => {
                if categories.is_empty() {
                    return Err(Error::Codec {
                        column: name.clone(),
                        message: "no categories were seen during fitting".into(),
                    });
                }
                let code = (z * std + mean).round().clamp(0.0, (categories.len() - 1) as f64);
                Ok(Value::Category(categories[code as usize].clone()))
            }
            ColumnCodec::Numerical {
                transform,
                integral,
                min,
                max,
                ..
            } => {
                let mut x = transform.inverse(z).clamp(*min, *max);
                if *integral {
                    x = x.round();
                }
                Ok(Value::Number(x))
            }
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCodec {
    pub table: String,
    pub columns: Vec<ColumnCodec>,
}

impl TableCodec {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }
}

pub fn fit_codecs(db: &Database) -> Result<Vec<TableCodec>> {
    db.schema()
        .tables()
        .iter()
        .zip(db.tables())
        .map(|(ts, table)| {
            let columns = ts
                .attributes()
                .enumerate()
                .map(|(j, col)| {
                    let values: Vec<&Value> = table.column(j).collect();
                    ColumnCodec::fit(&col.name, col.kind, &values)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TableCodec {
                table: ts.name.clone(),
                columns,
            })
        })
        .collect()
}

/// One `rows × dim` matrix per table.
pub fn encode_features(db: &Database, codecs: &[TableCodec]) -> Result<Vec<Matrix>> {
    db.tables()
        .iter()
        .zip(codecs)
        .map(|(table, codec)| {
            let d = codec.dim();
            let mut m = Matrix::zeros(table.len(), d);
            for (i, row) in table.rows.iter().enumerate() {
                for (j, (c, v)) in codec.columns.iter().zip(&row.attributes).enumerate() {
                    m.data[i * d + j] = c.encode(v)?;
                }
            }
            Ok(m)
        })
        .collect()
}

pub fn decode_features(features: &[Matrix], codecs: &[TableCodec]) -> Result<Vec<Vec<Vec<Value>>>> {
    features
        .iter()
        .zip(codecs)
        .map(|(m, codec)| {
            (0..m.rows)
                .map(|i| {
                    codec
                        .columns
                        .iter()
                        .zip(m.row(i))
                        .map(|(c, &z)| c.decode(z))
                        .collect::<Result<Vec<_>>>()
                })
                .collect()
        })
        .collect()
}
