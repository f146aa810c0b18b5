//! Named metric values with optional per-subset sub-reports.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Run description attached to a report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportMeta {
    pub split: Option<String>,
    pub seed: Option<u64>,
    pub num_classes: Option<usize>,
}

impl ReportMeta {
    fn is_empty(&self) -> bool {
        self.split.is_none() && self.seed.is_none() && self.num_classes.is_none()
    }
}

/// Mapping from metric name to value, with optional sub-reports for the
/// head/middle/tail/open/overall subsets.
///
/// Serializes to a flat JSON object `{"metric": value, ..., "subsets": {...},
/// "meta": {...}}`. Values are emitted with 17 significant digits so reports
/// round-trip bit-exactly; non-finite values are emitted as `null`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    values: BTreeMap<String, f64>,
    subsets: BTreeMap<String, MetricReport>,
    pub meta: ReportMeta,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn values(&self) -> &BTreeMap<String, f64> {
        &self.values
    }

    pub fn set_subset(&mut self, name: impl Into<String>, report: MetricReport) {
        self.subsets.insert(name.into(), report);
    }

    pub fn subset(&self, name: &str) -> Option<&MetricReport> {
        self.subsets.get(name)
    }

    pub fn subsets(&self) -> &BTreeMap<String, MetricReport> {
        &self.subsets
    }

    /// Copy all top-level values of `other` into `self`.
    pub fn absorb(&mut self, other: &MetricReport) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), *v);
        }
        for (k, v) in &other.subsets {
            self.subsets.insert(k.clone(), v.clone());
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut out = String::new();
        self.write_json(&mut out);
        out
    }

    fn write_json(&self, out: &mut String) {
        out.push('{');
        let mut first = true;
        for (k, v) in &self.values {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("{}:{}", json_string(k), format_json_f64(*v)));
        }
        if !self.subsets.is_empty() {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str("\"subsets\":{");
            let mut sub_first = true;
            for (k, v) in &self.subsets {
                if !sub_first {
                    out.push(',');
                }
                sub_first = false;
                out.push_str(&json_string(k));
                out.push(':');
                v.write_json(out);
            }
            out.push('}');
        }
        if !self.meta.is_empty() {
            if !first {
                out.push(',');
            }
            out.push_str("\"meta\":{");
            let mut meta_first = true;
            if let Some(split) = &self.meta.split {
                out.push_str(&format!("\"split\":{}", json_string(split)));
                meta_first = false;
            }
            if let Some(seed) = self.meta.seed {
                if !meta_first {
                    out.push(',');
                }
                out.push_str(&format!("\"seed\":{seed}"));
                meta_first = false;
            }
            if let Some(k) = self.meta.num_classes {
                if !meta_first {
                    out.push(',');
                }
                out.push_str(&format!("\"num_classes\":{k}"));
            }
            out.push('}');
        }
        out.push('}');
    }

    pub fn from_json_str(text: &str) -> Result<MetricReport> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_value(&value)
    }

    fn from_value(value: &serde_json::Value) -> Result<MetricReport> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::MalformedReport("top level is not an object".into()))?;
        let mut report = MetricReport::new();
        for (k, v) in obj {
            match k.as_str() {
                "subsets" => {
                    let subs = v.as_object().ok_or_else(|| {
                        Error::MalformedReport("\"subsets\" is not an object".into())
                    })?;
                    for (name, sub) in subs {
                        report.set_subset(name.clone(), Self::from_value(sub)?);
                    }
                }
                "meta" => {
                    let meta = v
                        .as_object()
                        .ok_or_else(|| Error::MalformedReport("\"meta\" is not an object".into()))?;
                    report.meta.split = meta
                        .get("split")
                        .and_then(|s| s.as_str())
                        .map(str::to_string);
                    report.meta.seed = meta.get("seed").and_then(|s| s.as_u64());
                    report.meta.num_classes = meta
                        .get("num_classes")
                        .and_then(|s| s.as_u64())
                        .map(|k| k as usize);
                }
                _ => {
                    let num = if v.is_null() {
                        f64::NAN
                    } else {
                        v.as_f64().ok_or_else(|| {
                            Error::MalformedReport(format!("metric {k:?} is not a number"))
                        })?
                    };
                    report.insert(k.clone(), num);
                }
            }
        }
        Ok(report)
    }
}

/// Format a float with 17 significant digits; non-finite values become `null`.
pub fn format_json_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}
