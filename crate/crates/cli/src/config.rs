//! Scenario files: one JSON document with a schema version. Unknown fields are rejected.

use std::str::FromStr;

use lgindex_core::algebroid::{AlgebroidPresentation, BaseModel};
use lgindex_core::groupoid_finite::FiniteGroupoid;
use lgindex_core::scalars::{Scalar, Q};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    CheckAlgebroid,
    Cohomology,
    GroupoidPairing,
    StarVerify,
    VanestVerify,
    IndexVerify,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CheckAlgebroid => "check-algebroid",
            ScenarioKind::Cohomology => "cohomology",
            ScenarioKind::GroupoidPairing => "groupoid-pairing",
            ScenarioKind::StarVerify => "star-verify",
            ScenarioKind::VanestVerify => "vanest-verify",
            ScenarioKind::IndexVerify => "index-verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    Float,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Float => "float",
        }
    }
}

/// Top-level document. `input` is decoded per scenario kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: Option<ScenarioKind>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Float-mode comparison tolerance.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default = "empty_object")]
    pub input: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", cfg.schema_version)));
        }
        if let Some(t) = cfg.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(bad("tolerance must be positive"));
            }
        }
        Ok(cfg)
    }

    pub fn input<T: DeserializeOwned>(&self) -> Result<T, ConfigError> {
        serde_json::from_value(self.input.clone()).map_err(|e| bad(format!("input: {e}")))
    }
}

/// Rational given as `"n/d"`, `"n"` or a JSON integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rational {
    Int(i64),
    Text(String),
}

impl Rational {
    pub fn to_q(&self) -> Result<Q, ConfigError> {
        match self {
            Rational::Int(n) => Ok(Q::from_integer((*n).into())),
            Rational::Text(s) => Q::from_str(s.trim()).map_err(|_| bad(format!("not a rational: {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bracket {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub c: Rational,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
// Unit variants are written as `{}` so that unknown fields are rejected for them too.
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgebroidSpec {
    Abelian { rank: usize },
    Su2 {},
    Heisenberg {},
    Affine {},
    /// `[e_i, e_j] = Σ c e_k` over a point; list each pair once with `i < j`.
    LieAlgebra { rank: usize, brackets: Vec<Bracket> },
    TangentTorus { n: usize, cutoff: i64 },
    TangentChart { n: usize, cap: u32 },
}

impl AlgebroidSpec {
    pub fn build<S: Scalar>(&self) -> Result<AlgebroidPresentation<S>, ConfigError> {
        Ok(match self {
            AlgebroidSpec::Abelian { rank } => {
                nonzero(*rank, "rank")?;
                AlgebroidPresentation::abelian(*rank)
            }
            AlgebroidSpec::Su2 {} => AlgebroidPresentation::su2(),
            AlgebroidSpec::Heisenberg {} => AlgebroidPresentation::heisenberg(),
            AlgebroidSpec::Affine {} => AlgebroidPresentation::affine(),
            AlgebroidSpec::LieAlgebra { rank, brackets } => {
                nonzero(*rank, "rank")?;
                let mut consts = vec![];
                for b in brackets {
                    if b.i >= *rank || b.j >= *rank || b.k >= *rank {
                        return Err(bad(format!("bracket index out of range for rank {rank}")));
                    }
                    if b.i >= b.j {
                        return Err(bad("brackets must be listed with i < j"));
                    }
                    consts.push((b.i, b.j, b.k, S::from_q(&b.c.to_q()?)));
                }
                AlgebroidPresentation::lie_algebra(*rank, &consts)
            }
            AlgebroidSpec::TangentTorus { n, cutoff } => {
                nonzero(*n, "n")?;
                if *cutoff < 0 {
                    return Err(bad("cutoff must be nonnegative"));
                }
                AlgebroidPresentation::tangent_torus(*n, *cutoff)
            }
            AlgebroidSpec::TangentChart { n, cap } => {
                nonzero(*n, "n")?;
                AlgebroidPresentation::tangent_chart(*n, *cap)
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseSpec {
    Point {},
    Torus { n: usize, cutoff: i64 },
    Chart { n: usize, cap: u32 },
}

impl BaseSpec {
    pub fn build(&self) -> Result<BaseModel, ConfigError> {
        Ok(match self {
            BaseSpec::Point {} => BaseModel::Point,
            BaseSpec::Torus { n, cutoff } => {
                nonzero(*n, "n")?;
                BaseModel::Torus { n: *n, cutoff: *cutoff }
            }
            BaseSpec::Chart { n, cap } => {
                nonzero(*n, "n")?;
                BaseModel::Chart { n: *n, cap: *cap }
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupoidSpec {
    Pair { n: usize },
    Cyclic { m: usize },
    Symmetric3 {},
    /// Group from its multiplication table.
    Group { table: Vec<Vec<usize>> },
    /// Action groupoid of a right action; `act[x][g]` is `x·g`.
    Action { table: Vec<Vec<usize>>, act: Vec<Vec<usize>> },
}

impl GroupoidSpec {
    pub fn build(&self) -> Result<FiniteGroupoid, ConfigError> {
        let err = |e: lgindex_core::groupoid_finite::GroupoidError| bad(format!("groupoid: {e}"));
        Ok(match self {
            GroupoidSpec::Pair { n } => FiniteGroupoid::pair(nonzero(*n, "n")?),
            GroupoidSpec::Cyclic { m } => FiniteGroupoid::cyclic(nonzero(*m, "m")?),
            GroupoidSpec::Symmetric3 {} => FiniteGroupoid::symmetric3(),
            GroupoidSpec::Group { table } => FiniteGroupoid::group(table).map_err(err)?,
            GroupoidSpec::Action { table, act } => FiniteGroupoid::action(table, act).map_err(err)?,
        })
    }

    pub fn pair_size(&self) -> Option<usize> {
        match self {
            GroupoidSpec::Pair { n } => Some(*n),
            _ => None,
        }
    }
}

pub fn nonzero(n: usize, what: &str) -> Result<usize, ConfigError> {
    if n == 0 {
        Err(bad(format!("{what} must be positive")))
    } else {
        Ok(n)
    }
}
