//! Report records shared by the experiment drivers.

use serde::{Deserialize, Serialize};

/// Where a number came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ExactEnum,
    Quadrature,
    MonteCarlo,
    ClosedForm,
    /// Leading-order asymptotic term only; not an exact finite-size value.
    LeadingOrder,
}

/// A scalar with its provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub value: f64,
    pub provenance: Provenance,
}

/// One row of a [`MomentReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub m: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub k: u32,
    pub l: u32,
    pub value: f64,
    pub std_error: Option<f64>,
    pub provenance: Provenance,
    pub prediction: Option<f64>,
    pub prediction_provenance: Option<Provenance>,
    /// `(value − prediction)/std_error`, only when both exist.
    pub z_score: Option<f64>,
    /// Relative gap `|value − prediction|/|prediction|`.
    pub rel_gap: Option<f64>,
}

impl ReportRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: impl Into<String>,
        m: usize,
        (gamma1, gamma2): (f64, f64),
        (k, l): (u32, u32),
        value: f64,
        std_error: Option<f64>,
        provenance: Provenance,
        prediction: Option<(f64, Provenance)>,
    ) -> Self {
        let z_score = match (std_error, prediction) {
            (Some(se), Some((p, _))) if se > 0.0 => Some((value - p) / se),
            _ => None,
        };
        let rel_gap = prediction.and_then(|(p, _)| (p != 0.0).then(|| ((value - p) / p).abs()));
        Self {
            label: label.into(),
            m,
            gamma1,
            gamma2,
            k,
            l,
            value,
            std_error,
            provenance,
            prediction: prediction.map(|p| p.0),
            prediction_provenance: prediction.map(|p| p.1),
            z_score,
            rel_gap,
        }
    }
}

/// Table of estimates against predictions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    /// Free-form named diagnostics (Gaussianity checks, spreads, …).
    pub diagnostics: Vec<(String, f64)>,
}

impl MomentReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self { experiment: experiment.into(), ..Default::default() }
    }

    pub fn diagnostic(&self, name: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Frozen CSV column schema (version 1).
    pub const CSV_HEADER: [&'static str; 13] = [
        "label", "M", "gamma1", "gamma2", "k", "l", "value", "std_error", "provenance",
        "prediction", "prediction_provenance", "z_score", "rel_gap",
    ];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        let prov = |p: Provenance| serde_json::to_value(p).unwrap().as_str().unwrap().to_string();
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.m.to_string(),
                r.gamma1.to_string(),
                r.gamma2.to_string(),
                r.k.to_string(),
                r.l.to_string(),
                format!("{:.12e}", r.value),
                opt(r.std_error),
                prov(r.provenance),
                opt(r.prediction),
                r.prediction_provenance.map(prov).unwrap_or_default(),
                opt(r.z_score),
                opt(r.rel_gap),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
