//! In-memory dataset representation.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Sample labels: categorical class indices or continuous targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Categorical {
        values: Vec<usize>,
        num_classes: usize,
    },
    Continuous {
        values: Vec<f64>,
        /// Unit string carried opaquely (e.g. "kcal/mol").
        unit: String,
    },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Categorical { values, .. } => values.len(),
            Labels::Continuous { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Labels::Categorical { .. })
    }
}

/// A feature matrix with labels and optional per-sample split keys.
///
/// Invariants are checked at construction: the feature row count, label count
/// and id count agree; categorical labels lie in `0..K`; optional group keys
/// and timestamps, when present, cover every sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Labels,
    ids: Vec<String>,
    group_keys: Option<Vec<String>>,
    timestamps: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Labels,
        ids: Vec<String>,
        group_keys: Option<Vec<String>>,
        timestamps: Option<Vec<i64>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: labels.len(),
            });
        }
        if ids.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: ids.len(),
            });
        }
        if let Labels::Categorical {
            values,
            num_classes,
        } = &labels
        {
            for (index, &label) in values.iter().enumerate() {
                if label >= *num_classes {
                    return Err(Error::LabelOutOfRange {
                        index,
                        label,
                        num_classes: *num_classes,
                    });
                }
            }
        }
        if let Some(keys) = &group_keys {
            if keys.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: keys.len(),
                });
            }
        }
        if let Some(ts) = &timestamps {
            if ts.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: ts.len(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            ids,
            group_keys,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn group_keys(&self) -> Option<&[String]> {
        self.group_keys.as_deref()
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }

    /// Categorical label slice, or an error for continuous labels.
    pub fn categorical_labels(&self) -> Result<(&[usize], usize)> {
        match &self.labels {
            Labels::Categorical {
                values,
                num_classes,
            } => Ok((values, *num_classes)),
            Labels::Continuous { .. } => Err(Error::SettingLabelMismatch {
                setting: "categorical",
                label_kind: "continuous",
            }),
        }
    }

    /// Continuous label slice, or an error for categorical labels.
    pub fn continuous_labels(&self) -> Result<&[f64]> {
        match &self.labels {
            Labels::Continuous { values, .. } => Ok(values),
            Labels::Categorical { .. } => Err(Error::SettingLabelMismatch {
                setting: "continuous",
                label_kind: "categorical",
            }),
        }
    }

    /// Copy of the rows selected by `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.dim();
        let mut features = Array2::zeros((indices.len(), d));
        let mut ids = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::LabelOutOfRange {
                    index: row,
                    label: i,
                    num_classes: self.len(),
                });
            }
            features.row_mut(row).assign(&self.features.row(i));
            ids.push(self.ids[i].clone());
        }
        let labels = match &self.labels {
            Labels::Categorical {
                values,
                num_classes,
            } => Labels::Categorical {
                values: indices.iter().map(|&i| values[i]).collect(),
                num_classes: *num_classes,
            },
            Labels::Continuous { values, unit } => Labels::Continuous {
                values: indices.iter().map(|&i| values[i]).collect(),
                unit: unit.clone(),
            },
        };
        let group_keys = self
            .group_keys
            .as_ref()
            .map(|keys| indices.iter().map(|&i| keys[i].clone()).collect());
        let timestamps = self
            .timestamps
            .as_ref()
            .map(|ts| indices.iter().map(|&i| ts[i]).collect());
        Dataset::new(features, labels, ids, group_keys, timestamps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_length_mismatch() {
        let features = array![[1.0, 2.0], [3.0, 4.0]];
        let labels = Labels::Categorical {
            values: vec![0],
            num_classes: 2,
        };
        let err = Dataset::new(features, labels, vec!["a".into(), "b".into()], None, None);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_out_of_range_label() {
        let features = array![[1.0], [2.0]];
        let labels = Labels::Categorical {
            values: vec![0, 2],
            num_classes: 2,
        };
        let err = Dataset::new(features, labels, vec!["a".into(), "b".into()], None, None);
        assert!(matches!(err, Err(Error::LabelOutOfRange { index: 1, .. })));
    }

    #[test]
    fn subset_picks_rows_in_order() {
        let features = array![[1.0], [2.0], [3.0]];
        let labels = Labels::Categorical {
            values: vec![0, 1, 0],
            num_classes: 2,
        };
        let ds = Dataset::new(
            features,
            labels,
            vec!["a".into(), "b".into(), "c".into()],
            None,
            Some(vec![10, 20, 30]),
        )
        .unwrap();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.feature_row(0)[0], 3.0);
        assert_eq!(sub.ids(), &["c".to_string(), "a".to_string()]);
        assert_eq!(sub.timestamps().unwrap(), &[30, 10]);
    }
}
