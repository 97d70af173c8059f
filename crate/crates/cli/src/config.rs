//! Run configuration: built-in defaults, partial TOML overrides, validation and hashing.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dcmg_core::model::ModeDef;
use dcmg_core::studies::table2_cases;
use dcmg_core::switched::StrategyKind;
use dcmg_core::{
    CaseSpec, CircuitParams, ControlParams, ModeTable, Plant, SimConfig, StudyEnv, SwitchingStrategy, Thresholds,
    TraceConfig,
};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "DCMG_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub out_dir: PathBuf,
    /// Kept for reproducibility records. Grid labelling is exhaustive, so results do not depend on it.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySection {
    pub thresholds: Thresholds,
    pub modes: [ModeDef<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub circuit: CircuitParams,
    pub control: ControlParams,
    pub strategy: StrategySection,
    pub simulation: SimConfig,
    pub trace: TraceConfig,
    pub cases: Vec<CaseSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection { out_dir: PathBuf::from("out"), seed: 0 },
            circuit: CircuitParams::default(),
            control: ControlParams::default(),
            strategy: StrategySection { thresholds: Thresholds::default(), modes: ModeTable::default().modes },
            simulation: SimConfig::default(),
            trace: TraceConfig::default(),
            cases: table2_cases(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the tables of `text`. Every key must exist in the defaults;
    /// arrays (`cases`, `strategy.modes`) replace the default array as a whole.
    pub fn from_toml(text: &str) -> Result<Self> {
        let over: toml::Table = text.parse().context("config is not valid TOML")?;
        let mut base = toml::Table::try_from(RunConfig::default())?;
        merge(&mut base, over, "")?;
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| anyhow!("config: {}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.plant().validate().map_err(|e| anyhow!("circuit/control: {e}"))?;
        self.strategy(StrategyKind::Baseline).validate().map_err(|e| anyhow!("strategy: {e}"))?;
        self.simulation.validate().map_err(|e| anyhow!("simulation: {e}"))?;
        let t = &self.trace;
        if !(t.eps_rel > 0.0 && t.time_cap > 0.0 && t.max_steps > 0 && t.v_collapse >= 0.0) {
            bail!("trace: eps_rel, time_cap and max_steps must be > 0 and v_collapse >= 0");
        }
        t.integrator.validate().map_err(|e| anyhow!("trace.integrator: {e}"))?;
        let mut ids = HashSet::new();
        for c in &self.cases {
            c.validate().map_err(|e| anyhow!("cases[{}]: {e}", c.id))?;
            if !ids.insert(c.id.as_str()) {
                bail!("cases: duplicate id `{}`", c.id);
            }
        }
        Ok(())
    }

    pub fn plant(&self) -> Plant {
        Plant::new(self.circuit, self.control)
    }

    pub fn strategy(&self, kind: StrategyKind) -> SwitchingStrategy {
        SwitchingStrategy::new(kind, self.strategy.thresholds, ModeTable { modes: self.strategy.modes })
    }

    pub fn env(&self, kind: StrategyKind) -> StudyEnv {
        StudyEnv { plant: self.plant(), strategy: self.strategy(kind), sim: self.simulation }
    }

    /// Output directory: explicit flag, then the environment, then the config.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => self.run.out_dir.clone(),
        }
    }

    /// Parses a power given in watts, or in per-unit with a `pu` suffix.
    pub fn power(&self, s: &str) -> Result<f64> {
        parse_power(s, self.circuit.p_base)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table, path: &str) -> Result<()> {
    for (k, v) in over {
        let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get_mut(&k), v) {
            (None, _) => bail!("unknown config field `{key}`"),
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &key)?,
            (Some(toml::Value::Table(_)), _) => bail!("config field `{key}` must be a table"),
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

pub fn parse_power(s: &str, p_base: f64) -> Result<f64> {
    let t = s.trim();
    let (num, scale) = match t.strip_suffix("pu") {
        Some(n) => (n, p_base),
        None => (t.strip_suffix('W').unwrap_or(t), 1.0),
    };
    let x: f64 = num.trim().parse().map_err(|_| anyhow!("invalid power `{s}` (expected watts or a `pu` value)"))?;
    if !x.is_finite() {
        bail!("invalid power `{s}`");
    }
    Ok(x * scale)
}
