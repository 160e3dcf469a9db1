//! Experiment configuration: TOML with nested blocks, unknown keys rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::angular::CollisionKernel;
use crate::error::{Error, Result};
use crate::grid::{ClassYBounds, VelocityGrid};
use crate::inequalities::CorpusSpec;
use crate::solver::{SolverConfig, Stepper};
use crate::verdict::{EXACT_SLACK, FITTED_SLACK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Verify,
    Evolve,
    Stability,
    Scan,
    Oracle,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Verify => "verify",
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Scan => "scan",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelBlock {
    pub dim: usize,
    pub gamma: f64,
    pub s: f64,
    pub b0: f64,
    pub theta_min: f64,
    pub n_theta: usize,
    pub n_omega: usize,
}

impl Default for KernelBlock {
    fn default() -> Self {
        Self { dim: 3, gamma: -2.0, s: 0.4, b0: 1.0, theta_min: 1e-2, n_theta: 4, n_omega: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub radius: f64,
    pub n: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self { radius: 6.0, n: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionalBlock {
    pub p: f64,
    pub k: f64,
    pub q: f64,
    pub eps: Vec<f64>,
    /// Weight exponent `β` of the weighted ε-Poincaré and convolution bounds.
    pub beta: f64,
    /// Moment exponent of the weighted ε-Poincaré bound; `β + |γ| + 1` if unset.
    pub moment_exponent: Option<f64>,
    /// Weight exponent `ℓ` of the trilinear and convolution bounds.
    pub ell: f64,
}

impl Default for FunctionalBlock {
    fn default() -> Self {
        Self { p: 2.0, k: 13.0, q: 2.0, eps: vec![1e-2, 1e-1, 1.0], beta: 1.0, moment_exponent: None, ell: 6.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub dt: f64,
    pub horizon: f64,
    pub stepper: Stepper,
    pub snapshot_stride: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self { dt: 0.05, horizon: 0.5, stepper: Stepper::Midpoint, snapshot_stride: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusBlock {
    pub seed: u64,
    pub size: usize,
    pub rho: f64,
    pub energy: f64,
    pub entropy: f64,
}

impl Default for CorpusBlock {
    fn default() -> Self {
        let b = ClassYBounds::default();
        Self { seed: 1, size: 8, rho: b.rho, energy: b.energy, entropy: b.entropy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceBlock {
    /// Relative slack for inequalities that hold with their own constant.
    pub exact_slack: f64,
    /// Relative slack on held-out items for fitted constants.
    pub fitted_slack: f64,
    /// Relative mismatch allowed in quadrature identities. The default suits
    /// the default 16-point grid; these identities converge like `h²`.
    pub identity: f64,
}

impl Default for ToleranceBlock {
    fn default() -> Self {
        Self { exact_slack: EXACT_SLACK, fitted_slack: FITTED_SLACK, identity: 0.1 }
    }
}

/// Initial data of `evolve` and `stability`: two Maxwellians of equal mass
/// and temperature centred at `±separation/2` on the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialBlock {
    pub separation: f64,
    pub temperature: f64,
    /// Relative amplitude of the perturbation of the second stability run.
    pub perturbation: f64,
}

impl Default for InitialBlock {
    fn default() -> Self {
        Self { separation: 2.0, temperature: 0.5, perturbation: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanBlock {
    /// Experiment run at each axis value (`verify` or `evolve`).
    pub base: ExperimentKind,
    /// Dotted key such as `functional.eps` or `grid.n`.
    pub axis: String,
    pub values: Vec<f64>,
}

impl Default for ScanBlock {
    fn default() -> Self {
        Self { base: ExperimentKind::Verify, axis: String::new(), values: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Must match the subcommand when present.
    pub kind: Option<ExperimentKind>,
    /// Suites run by `verify`; `"all"` expands to every suite.
    pub verify: Vec<String>,
    /// Named cross-checks run by `oracle`; empty means all.
    pub oracle: Vec<String>,
    pub kernel: KernelBlock,
    pub grid: GridBlock,
    pub functional: FunctionalBlock,
    pub solver: SolverBlock,
    pub corpus: CorpusBlock,
    pub tolerance: ToleranceBlock,
    pub initial: InitialBlock,
    pub scan: ScanBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            verify: vec!["all".into()],
            oracle: Vec::new(),
            kernel: KernelBlock::default(),
            grid: GridBlock::default(),
            functional: FunctionalBlock::default(),
            solver: SolverBlock::default(),
            corpus: CorpusBlock::default(),
            tolerance: ToleranceBlock::default(),
            initial: InitialBlock::default(),
            scan: ScanBlock::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; errors carry the line and key reported by the parser.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn kernel(&self) -> Result<CollisionKernel> {
        let k = &self.kernel;
        CollisionKernel::new(k.dim, k.gamma, k.s, k.b0, k.theta_min, k.n_theta, k.n_omega)
    }

    pub fn grid(&self) -> Result<VelocityGrid> {
        VelocityGrid::new(self.kernel.dim, self.grid.radius, self.grid.n)
    }

    pub fn bounds(&self) -> Result<ClassYBounds> {
        let c = &self.corpus;
        ClassYBounds::new(c.rho, c.energy, c.entropy)
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec> {
        let mut spec = CorpusSpec::new(self.corpus.seed, self.corpus.size);
        spec.bounds = self.bounds()?;
        Ok(spec)
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let (f, s) = (&self.functional, &self.solver);
        let mut c = SolverConfig::new(self.kernel()?, self.grid()?, s.dt, s.horizon, f.p, f.k, f.q)?.with_stepper(s.stepper);
        if s.snapshot_stride > 0 {
            c = c.with_snapshots(s.snapshot_stride);
        }
        c.bounds = self.bounds()?;
        Ok(c)
    }

    pub fn moment_exponent(&self) -> f64 {
        self.functional.moment_exponent.unwrap_or(self.functional.beta + self.kernel.gamma.abs() + 1.0)
    }

    /// Cross-field validation shared by every experiment kind.
    pub fn validate(&self) -> Result<()> {
        self.kernel()?;
        self.grid()?;
        self.bounds()?;
        let t = &self.tolerance;
        for (name, x) in [("exact_slack", t.exact_slack), ("fitted_slack", t.fitted_slack), ("identity", t.identity)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::Parameter(format!("tolerance.{name} must be finite and >= 0, got {x}")));
            }
        }
        if self.functional.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Parameter("functional.eps entries must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Returns a copy with the dotted numeric key set to `value`. List-valued
    /// keys become a one-element list.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<Self> {
        let mut json = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut json;
        for part in axis.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Parameter(format!("unknown scan axis '{axis}'")))?;
        }
        let number = serde_json::Number::from_f64(value).ok_or_else(|| Error::Parameter(format!("axis value {value} is not finite")))?;
        *slot = match slot {
            serde_json::Value::Array(_) => serde_json::Value::Array(vec![number.into()]),
            serde_json::Value::Number(n) if n.is_f64() => number.into(),
            serde_json::Value::Number(_) if value.fract() == 0.0 && value >= 0.0 => serde_json::Value::from(value as u64),
            serde_json::Value::Null => number.into(),
            _ => return Err(Error::Parameter(format!("scan axis '{axis}' is not a numeric key (or got a non-integer for an integer key)"))),
        };
        serde_json::from_value(json).map_err(|e| Error::Parameter(format!("axis '{axis}' = {value}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults_and_round_trips() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let e = ExperimentConfig::from_toml("[kernel]\ngamma = -2.0\ngama = 1.0\n").unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Config(_)));
        assert!(msg.contains("gama") && msg.contains("line 3"), "{msg}");
        assert!(ExperimentConfig::from_toml("[grid]\nn = \"x\"\n").is_err());
    }

    #[test]
    fn axis_substitution() {
        let c = ExperimentConfig::default();
        assert_eq!(c.with_axis("functional.eps", 0.1).unwrap().functional.eps, vec![0.1]);
        assert_eq!(c.with_axis("grid.n", 16.0).unwrap().grid.n, 16);
        assert_eq!(c.with_axis("kernel.gamma", -2.5).unwrap().kernel.gamma, -2.5);
        assert_eq!(c.with_axis("functional.moment_exponent", 5.0).unwrap().moment_exponent(), 5.0);
        assert!(matches!(c.with_axis("grid.nn", 1.0), Err(Error::Parameter(_))));
        assert!(c.with_axis("grid.n", 1.5).is_err());
        assert!(c.with_axis("verify", 1.0).is_err());
    }
}
