//! JSON experiment specifications.

use anyhow::{bail, Context, Result};
use dms_core::almostdiag::{AdEnvelope, EnsembleSpec};
use dms_core::growth::{GrowthFunction, GrowthSpec};
use dms_core::lattice::LatticeWindow;
use dms_core::matweight::WeightSpec;
use dms_core::operators::{KernelSpec, SymbolSpec};
use dms_core::quad::QuadratureSpec;
use dms_core::seqspace::{CoeffEntry, Family, SpaceParams};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowSpec {
    pub j_min: i32,
    pub j_max: i32,
    pub extent_log2: i32,
}

impl WindowSpec {
    pub fn build(&self) -> Result<LatticeWindow> {
        Ok(LatticeWindow::new(self.j_min, self.j_max, self.extent_log2)?)
    }
}

/// `q` accepts a number or the string `"inf"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QValue {
    Num(f64),
    Word(String),
}

impl QValue {
    pub fn value(&self) -> Result<f64> {
        match self {
            QValue::Num(v) => Ok(*v),
            QValue::Word(w) if w == "inf" => Ok(f64::INFINITY),
            QValue::Word(w) => bail!("unrecognized q value {w:?} (use a number or \"inf\")"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub family: String,
    pub s: f64,
    pub p: f64,
    pub q: QValue,
    pub n: usize,
    pub m: usize,
}

impl SpaceSpec {
    pub fn build(&self, upsilon: GrowthFunction) -> Result<SpaceParams> {
        let family = match self.family.as_str() {
            "B" | "b" => Family::B,
            "F" | "f" => Family::F,
            other => bail!("family must be B or F, got {other:?}"),
        };
        let params = SpaceParams {
            family,
            s: self.s,
            p: self.p,
            q: self.q.value()?,
            n: self.n,
            m: self.m,
            upsilon,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveletSpecCli {
    pub k: usize,
    pub levels: u32,
    /// accept k below the admissible bound computed from the thresholds
    #[serde(default)]
    pub force: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleSpecCli {
    pub size: usize,
    pub support: usize,
}

/// One experiment: the `kind` selects the pipeline, the optional blocks
/// feed it. The seed is mandatory for ensemble kinds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub space: Option<SpaceSpec>,
    #[serde(default)]
    pub growth: Option<GrowthSpec>,
    #[serde(default)]
    pub weight: Option<WeightSpec>,
    /// target-side weight `V` for trace/ext experiments
    #[serde(default)]
    pub weight_target: Option<WeightSpec>,
    #[serde(default)]
    pub sequence: Option<Vec<CoeffEntry>>,
    #[serde(default)]
    pub ensemble: Option<EnsembleSpecCli>,
    #[serde(default)]
    pub envelope: Option<AdEnvelope>,
    /// envelope margin above the thresholds when `envelope` is absent
    #[serde(default)]
    pub margin: Option<f64>,
    /// adtest operator: "udef" (default) or "identity"
    #[serde(default)]
    pub operator: Option<String>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub wavelet: Option<WaveletSpecCli>,
    #[serde(default)]
    pub symbol: Option<SymbolSpec>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub quad: Option<QuadratureSpec>,
    /// exponent p of the weight machinery for `dims`
    #[serde(default)]
    pub p: Option<f64>,
}

pub const KINDS: &[&str] = &[
    "norm",
    "adtest",
    "dims",
    "trace",
    "ext",
    "psido",
    "czo",
    "wavelet-check",
];

impl ExperimentSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading spec {}", path.display()))?;
        let spec: ExperimentSpec = serde_json::from_str(&text).context("parsing spec JSON")?;
        if !KINDS.contains(&spec.kind.as_str()) {
            bail!("unknown experiment kind {:?} (expected one of {KINDS:?})", spec.kind);
        }
        Ok(spec)
    }

    pub fn window(&self) -> Result<LatticeWindow> {
        match &self.window {
            Some(w) => w.build(),
            None => Ok(LatticeWindow::default()),
        }
    }

    pub fn quad(&self) -> QuadratureSpec {
        self.quad.unwrap_or_default()
    }

    pub fn need_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| anyhow::anyhow!("`seed` is mandatory for ensemble experiments"))
    }

    pub fn ensemble(&self) -> EnsembleSpec {
        let cli = self.ensemble.clone().unwrap_or(EnsembleSpecCli {
            size: 50,
            support: 6,
        });
        EnsembleSpec {
            size: cli.size,
            support: cli.support,
            seed: self.seed.unwrap_or_default(),
        }
    }
}
