//! Run configuration: a TOML file with one table per concern, overlaid by
//! dotted `section.key = value` overrides from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use mrrc_core::data::GrammarSpec;
use mrrc_core::models::{ModelConfig, Variant};
use mrrc_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "MRRC_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub gradcheck: GradcheckConfig,
    pub tprlab: TprLabConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub vocab: PathBuf,
    pub checkpoint: PathBuf,
    /// Where `scst` writes the fine-tuned model; the input checkpoint when unset.
    pub scst_checkpoint: Option<PathBuf>,
    pub captions: PathBuf,
    pub history: PathBuf,
    pub scst_history: PathBuf,
    /// Evaluation metrics are also written here when set.
    pub metrics: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "data.jsonl".into(),
            vocab: "vocab.txt".into(),
            checkpoint: "model.ckpt".into(),
            scst_checkpoint: None,
            captions: "captions.tsv".into(),
            history: "history.csv".into(),
            scst_history: "scst_history.csv".into(),
            metrics: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n: usize,
    pub seed: u64,
    pub grammar: GrammarSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n: 100,
            seed: 0,
            grammar: GrammarSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Greedy decoding regardless of `beam`.
    pub greedy: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 3,
            max_len: 20,
            greedy: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// A variant name or `all`.
    pub variant: String,
    pub d: usize,
    pub e: usize,
    pub k_max: usize,
    pub vocab_size: usize,
    pub region_dim: usize,
    pub tag_dim: usize,
    pub m_intermediate: usize,
    pub mrrc_gate: usize,
    pub batch: usize,
    pub step: f64,
    pub tol: f64,
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            variant: "all".into(),
            d: 8,
            e: 8,
            k_max: 4,
            vocab_size: 20,
            region_dim: 6,
            tag_dim: 5,
            m_intermediate: 6,
            mrrc_gate: 6,
            batch: 2,
            step: 1e-5,
            tol: 1e-4,
            max_coords: 200,
            seed: 0,
        }
    }
}

impl GradcheckConfig {
    pub fn variants(&self) -> Result<Vec<Variant>, CliError> {
        if self.variant.eq_ignore_ascii_case("all") {
            Ok(Variant::ALL.to_vec())
        } else {
            Ok(vec![self.variant.parse()?])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TprLabConfig {
    pub t: usize,
    pub dims: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for TprLabConfig {
    fn default() -> Self {
        TprLabConfig {
            t: 8,
            dims: vec![8, 16, 32, 64],
            trials: 100,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Loads `path` (or the file named by `MRRC_CONFIG`, or nothing) and
    /// applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let mut table = match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(|e| mrrc_core::Error::io(&p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut table, key, parse_value(value))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.data.n == 0 {
            return Err(CliError::Usage("data.n must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.decode.beam == 0 || self.decode.max_len == 0 {
            return Err(CliError::Usage("decode.beam and decode.max_len must be at least 1".into()));
        }
        let g = &self.gradcheck;
        if g.batch == 0 || !(g.step > 0.0) || !(g.tol > 0.0) || g.max_coords == 0 {
            return Err(CliError::Usage(
                "gradcheck.batch, step, tol and max_coords must be positive".into(),
            ));
        }
        g.variants()?;
        if self.tprlab.t == 0 || self.tprlab.trials == 0 || self.tprlab.dims.contains(&0) {
            return Err(CliError::Usage("tprlab.t, trials and dims must be positive".into()));
        }
        Ok(())
    }
}

/// Numbers, booleans and arrays parse as TOML; anything else is a string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("{key}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let cfg = RunConfig::load(
            None,
            &ov(&[
                ("model.d", "8"),
                ("train.scst.lr", "1e-3"),
                ("model.variant", "SEMI_FACT_FDC_MRRC"),
                ("paths.dataset", "x/y.jsonl"),
                ("tprlab.dims", "[4, 8]"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.model.d, 8);
        assert_eq!(cfg.train.scst.lr, 1e-3);
        assert_eq!(cfg.model.variant, Variant::SemiFact);
        assert_eq!(cfg.paths.dataset, PathBuf::from("x/y.jsonl"));
        assert_eq!(cfg.tprlab.dims, [4, 8]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::load(None, &ov(&[("model.width", "3")])),
            Err(CliError::Usage(_))
        ));
        assert!(RunConfig::load(None, &ov(&[("nosuch.key", "3")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("model.d", "\"eight\"")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("data.n", "0")])).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[model]\nd = 16\ne = 4\n\n[train]\nlr = 0.01\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &ov(&[("model.e", "6")])).unwrap();
        assert_eq!((cfg.model.d, cfg.model.e, cfg.train.lr), (16, 6, 0.01));
        fs::write(&path, "[model]\nbogus = 1\n").unwrap();
        assert!(RunConfig::load(Some(&path), &[]).is_err());
    }

    #[test]
    fn defaults_serialize_and_reload() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
