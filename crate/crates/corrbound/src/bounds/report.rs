//! The serialized result of a full bound run: `C(A)` by both estimators,
//! the per-degree bound profile, saturation residuals and the optional
//! partition-refined bounds. JSON is the canonical machine format; the CSV
//! projection is a convenience.

use super::{BoundValue, PartitionedBound, SaturationReport, SaturationVerdict};
use crate::correlation::CEstimate;
use crate::Warning;
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Serialize non-finite floats as JSON null and read null back as NaN, so
/// reports with unbounded condition numbers still round-trip.
mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegreeBoundOut {
    pub d: u32,
    pub value: f64,
    #[serde(with = "nullable_f64")]
    pub stderr: f64,
    #[serde(with = "nullable_f64")]
    pub cond: f64,
    pub jitter: f64,
}

impl DegreeBoundOut {
    pub fn from_bound(b: &BoundValue) -> DegreeBoundOut {
        DegreeBoundOut {
            d: b.d,
            value: b.value,
            stderr: b.stderr.unwrap_or(f64::NAN),
            cond: b.cond,
            jitter: b.jitter,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaturationOut {
    pub report: SaturationReport,
    pub verdict: SaturationVerdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionedOut {
    pub labeler: Vec<String>,
    pub per_degree: Vec<PartitionedBound>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema_version: u32,
    /// Unix timestamp; the one field excluded from byte-determinism.
    pub generated_at: u64,
    pub system: String,
    pub beta: f64,
    pub observable: String,
    pub seed: u64,
    pub n_samples: usize,
    pub c_norm: CEstimate,
    pub c_direct: CEstimate,
    pub bounds: Vec<DegreeBoundOut>,
    /// Linear bound without the constant monomial (the strict published
    /// form); the canonical d = 1 entry in `bounds` includes it.
    pub mazur_strict: Option<DegreeBoundOut>,
    pub saturation: Option<SaturationOut>,
    pub partitioned: Option<PartitionedOut>,
    pub warnings: Vec<Warning>,
}

impl BoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<BoundReport, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Flat CSV projection: one row per scalar result.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,degree,value,stderr,detail\n");
        let mut push = |kind: &str, d: Option<u32>, value: f64, stderr: f64, detail: &str| {
            out.push_str(&format!(
                "{kind},{},{value},{stderr},{detail}\n",
                d.map(|d| d.to_string()).unwrap_or_default()
            ));
        };
        push(
            "c_norm",
            None,
            self.c_norm.value,
            self.c_norm.stderr,
            &format!("T={}", self.c_norm.t_horizon),
        );
        push(
            "c_direct",
            None,
            self.c_direct.value,
            self.c_direct.stderr,
            &format!("T={}", self.c_direct.t_horizon),
        );
        for b in &self.bounds {
            push(
                "bound",
                Some(b.d),
                b.value,
                b.stderr,
                &format!("cond={:.3e};jitter={:.1e}", b.cond, b.jitter),
            );
        }
        if let Some(m) = &self.mazur_strict {
            push("mazur_strict", Some(1), m.value, m.stderr, "");
        }
        if let Some(s) = &self.saturation {
            for r in &s.report.residuals {
                push(
                    "saturation_residual",
                    Some(r.index.degree()),
                    r.residual,
                    r.residual_stderr,
                    &r.index.to_string(),
                );
            }
        }
        if let Some(p) = &self.partitioned {
            for pb in &p.per_degree {
                push(
                    "partitioned",
                    Some(pb.d),
                    pb.value,
                    pb.stderr.unwrap_or(f64::NAN),
                    "global_gram",
                );
                push(
                    "partitioned_cellwise",
                    Some(pb.d),
                    pb.cellwise_value,
                    pb.cellwise_stderr.unwrap_or(f64::NAN),
                    "cell_gram",
                );
            }
        }
        out
    }
}
