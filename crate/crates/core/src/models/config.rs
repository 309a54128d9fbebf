use std::fmt;
use std::str::FromStr;

use mrrc_tensor::Initializer;
use serde::{Deserialize, Serialize};

use crate::attention::FactorizationMode;
use crate::error::{Error, Result};

/// The five architecture assemblies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "FDC_MRRC")]
    FdcMrrc,
    #[serde(rename = "SEMI_FACT_FDC_MRRC")]
    SemiFact,
    #[serde(rename = "FULL_FACT_FDC_MRRC")]
    FullFact,
    #[serde(rename = "SEMI_FDC_FACT_SEM_MRRC")]
    SemiFdcSem,
    #[serde(rename = "SEMI_FDC_FACT_FDC_MRRC")]
    SemiFdcFdc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::FdcMrrc,
        Variant::SemiFact,
        Variant::FullFact,
        Variant::SemiFdcSem,
        Variant::SemiFdcFdc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FdcMrrc => "FDC_MRRC",
            Variant::SemiFact => "SEMI_FACT_FDC_MRRC",
            Variant::FullFact => "FULL_FACT_FDC_MRRC",
            Variant::SemiFdcSem => "SEMI_FDC_FACT_SEM_MRRC",
            Variant::SemiFdcFdc => "SEMI_FDC_FACT_FDC_MRRC",
        }
    }

    pub fn prospect(self) -> MrrcProspect {
        match self {
            Variant::SemiFdcSem => MrrcProspect::SemanticS,
            _ => MrrcProspect::FdcQ,
        }
    }

    pub fn factorization(self) -> FactorizationMode {
        match self {
            Variant::FdcMrrc => FactorizationMode::None,
            Variant::SemiFact => FactorizationMode::Static,
            Variant::FullFact => FactorizationMode::PerGate,
            Variant::SemiFdcSem | Variant::SemiFdcFdc => FactorizationMode::Dynamic,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the full names and the short forms `SEMI_FACT`, `FULL_FACT`,
    /// `SEMI_FDC_SEM` and `SEMI_FDC_FDC`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        let v = match up.as_str() {
            "FDC_MRRC" => Variant::FdcMrrc,
            "SEMI_FACT_FDC_MRRC" | "SEMI_FACT" => Variant::SemiFact,
            "FULL_FACT_FDC_MRRC" | "FULL_FACT" => Variant::FullFact,
            "SEMI_FDC_FACT_SEM_MRRC" | "SEMI_FDC_SEM" => Variant::SemiFdcSem,
            "SEMI_FDC_FACT_FDC_MRRC" | "SEMI_FDC_FDC" => Variant::SemiFdcFdc,
            _ => return Err(Error::Config(format!("unknown variant {s:?}"))),
        };
        Ok(v)
    }
}

/// Which vectors feed the crossover attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrrcProspect {
    /// Gates driven by `h_{t-1}`, attended regions `q_t` as multiplier.
    FdcQ,
    /// Gates driven by `h_{t-1}`, which is also the multiplier.
    HiddenH,
    /// Left gate and multiplier are the tags `S`, right gate `h_{t-1}`.
    #[serde(rename = "semantic_s")]
    SemanticS,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    XavierUniform,
    /// Gaussian with standard deviation 0.05.
    Normal,
    Zeros,
    Ones,
}

impl InitKind {
    pub fn initializer(self) -> Initializer {
        match self {
            InitKind::XavierUniform => Initializer::XavierUniform,
            InitKind::Normal => Initializer::NORMAL_005,
            InitKind::Zeros => Initializer::Zeros,
            InitKind::Ones => Initializer::Ones,
        }
    }
}

/// Dimensions and architecture of a captioning model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Hidden width.
    pub d: usize,
    /// Token embedding width.
    pub e: usize,
    pub vocab_size: usize,
    pub region_dim: usize,
    pub tag_dim: usize,
    pub k_max: usize,
    /// Width of the FDC scoring layer.
    pub m_intermediate: usize,
    /// Width of the left crossover gate.
    pub mrrc_gate: usize,
    pub initializer: InitKind,
    pub seed: u64,
    /// Must match the variant when given.
    pub mrrc_prospect: Option<MrrcProspect>,
    /// Must match the variant when given.
    pub factorization: Option<FactorizationMode>,
    /// Divide the context sum by the number of tokens it holds.
    pub ctx_mean_pool: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::FdcMrrc,
            d: 32,
            e: 128,
            vocab_size: 20,
            region_dim: 32,
            tag_dim: 16,
            k_max: 6,
            m_intermediate: 32,
            mrrc_gate: 64,
            initializer: InitKind::XavierUniform,
            seed: 0,
            mrrc_prospect: None,
            factorization: None,
            ctx_mean_pool: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("e", self.e),
            ("vocab_size", self.vocab_size),
            ("region_dim", self.region_dim),
            ("tag_dim", self.tag_dim),
            ("k_max", self.k_max),
            ("m_intermediate", self.m_intermediate),
            ("mrrc_gate", self.mrrc_gate),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config("vocab_size must cover the four reserved tokens".into()));
        }
        let mut violations = Vec::new();
        if let Some(p) = self.mrrc_prospect {
            if p != self.variant.prospect() {
                violations.push(format!(
                    "{} requires mrrc_prospect {:?}, got {p:?}",
                    self.variant,
                    self.variant.prospect()
                ));
            }
        }
        if let Some(f) = self.factorization {
            if f != self.variant.factorization() {
                violations.push(format!(
                    "{} requires factorization {:?}, got {f:?}",
                    self.variant,
                    self.variant.factorization()
                ));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    pub fn prospect(&self) -> MrrcProspect {
        self.variant.prospect()
    }

    pub fn factorization_mode(&self) -> FactorizationMode {
        self.variant.factorization()
    }
}
