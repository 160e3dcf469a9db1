//! Outcome record shared by every inequality and identity check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::angular::CollisionKernel;
use crate::grid::VelocityGrid;

/// Default relative slack for inequalities that hold exactly.
pub const EXACT_SLACK: f64 = 1e-8;
/// Default relative slack for inequalities with fitted constants.
pub const FITTED_SLACK: f64 = 0.05;

/// JSON writes non-finite numbers as `null`; these read them back as NaN.
mod lossy {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer};

    pub fn number<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub fn map<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        let raw = BTreeMap::<String, Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NAN))).collect())
    }
}

/// Where a verdict came from: corpus item, kernel and grid resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<CollisionKernel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<VelocityGrid>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default, deserialize_with = "lossy::map")]
    pub notes: BTreeMap<String, f64>,
}

/// `lhs ≤ rhs` up to a relative slack, with any constants that were fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityVerdict {
    pub name: String,
    #[serde(deserialize_with = "lossy::number")]
    pub lhs: f64,
    #[serde(deserialize_with = "lossy::number")]
    pub rhs: f64,
    #[serde(deserialize_with = "lossy::number")]
    pub margin: f64,
    pub slack: f64,
    #[serde(deserialize_with = "lossy::map")]
    pub fitted_constants: BTreeMap<String, f64>,
    pub pass: bool,
    pub provenance: Provenance,
}

impl InequalityVerdict {
    /// Builds the verdict; `pass ⇔ rhs - lhs ≥ -slack·|rhs|` (and both finite).
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, slack: f64) -> Self {
        let margin = rhs - lhs;
        let pass = lhs.is_finite() && rhs.is_finite() && margin >= -slack * rhs.abs();
        Self {
            name: name.into(),
            lhs,
            rhs,
            margin,
            slack,
            fitted_constants: BTreeMap::new(),
            pass,
            provenance: Provenance::default(),
        }
    }

    /// Verdict for a two-sided identity: `lhs` is the relative mismatch and
    /// `rhs` the tolerance.
    pub fn identity(name: impl Into<String>, mismatch: f64, tol: f64) -> Self {
        Self::new(name, mismatch, tol, 0.0)
    }

    pub fn with_constant(mut self, key: &str, value: f64) -> Self {
        self.fitted_constants.insert(key.to_string(), value);
        self
    }
    pub fn with_item(mut self, item: impl Into<String>) -> Self {
        self.provenance.item = Some(item.into());
        self
    }
    pub fn with_kernel(mut self, k: &CollisionKernel) -> Self {
        self.provenance.kernel = Some(*k);
        self
    }
    pub fn with_grid(mut self, g: &VelocityGrid) -> Self {
        self.provenance.grid = Some(*g);
        self
    }
    pub fn with_note(mut self, key: &str, value: f64) -> Self {
        self.provenance.notes.insert(key.to_string(), value);
        self
    }

    /// Combines several verdicts into one that passes iff all of them pass; the
    /// worst relative margin is reported.
    pub fn all(name: impl Into<String>, parts: &[InequalityVerdict]) -> Self {
        let worst = parts
            .iter()
            .min_by(|a, b| a.relative_margin().total_cmp(&b.relative_margin()));
        let mut v = match worst {
            Some(w) => {
                let mut v = w.clone();
                v.name = name.into();
                v
            }
            None => Self::new(name, 0.0, 0.0, 0.0),
        };
        v.pass = parts.iter().all(|p| p.pass);
        v.provenance.notes.insert("count".into(), parts.len() as f64);
        v
    }

    /// `margin / |rhs|` (or the raw margin when `rhs = 0`).
    pub fn relative_margin(&self) -> f64 {
        if self.rhs != 0.0 {
            self.margin / self.rhs.abs()
        } else {
            self.margin
        }
    }
}
