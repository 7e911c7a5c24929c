//! Run reports and their JSON / CSV renderings.

use std::fmt;
use std::io;

use lgindex_core::scalars::{cq_to_string, Cq, Scalar, C64};
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;

pub const FORMAT: &str = "lgindex-report/1";

/// A reported value. Floats are written with 17 significant digits, exact
/// rationals as `"n/d"` strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Flag(bool),
    Int(i64),
    Real(f64),
    Exact(String),
    Complex { re: f64, im: f64 },
    List(Vec<Quantity>),
}

impl Quantity {
    pub fn scalar<S: Scalar>(s: &S) -> Self {
        if S::is_exact() {
            Quantity::Exact(exact_string(s))
        } else {
            Quantity::complex(s.to_c64())
        }
    }

    pub fn complex(z: C64) -> Self {
        if z.im == 0.0 {
            Quantity::Real(z.re)
        } else {
            Quantity::Complex { re: z.re, im: z.im }
        }
    }

    pub fn ints(v: &[usize]) -> Self {
        Quantity::List(v.iter().map(|&x| Quantity::Int(x as i64)).collect())
    }
}

fn exact_string<S: Scalar>(s: &S) -> String {
    // Cq is the only exact scalar; go through Any to reach its rendering.
    let any: &dyn std::any::Any = s;
    match any.downcast_ref::<Cq>() {
        Some(z) => cq_to_string(z),
        None => fmt_f64(s.to_c64().re),
    }
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Flag(b) => write!(f, "{b}"),
            Quantity::Int(n) => write!(f, "{n}"),
            Quantity::Real(x) => f.write_str(&fmt_f64(*x)),
            Quantity::Exact(s) => f.write_str(s),
            Quantity::Complex { re, im } => write!(f, "{}{}{}i", fmt_f64(*re), if *im < 0.0 { "" } else { "+" }, fmt_f64(*im)),
            Quantity::List(v) => {
                f.write_str("[")?;
                for (i, q) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{q}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Where the expected value of a check comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// An independent computation.
    Oracle,
    /// An identity that must hold (e.g. `d∘d = 0`).
    Invariant,
    /// A value supplied in the scenario file.
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckRecord {
    pub name: String,
    pub expected: Option<Quantity>,
    pub computed: Quantity,
    pub residual: Option<f64>,
    pub pass: bool,
    pub basis: Basis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub format: String,
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub config: Value,
    pub records: Vec<CheckRecord>,
    pub truncation_flags: Vec<String>,
    /// Only filled when timing is requested, so default reports are reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
    pub pass: bool,
}

impl RunReport {
    pub fn new(scenario: &str, mode: &str, seed: u64, config: Value) -> Self {
        Self {
            format: FORMAT.to_string(),
            scenario: scenario.to_string(),
            mode: mode.to_string(),
            seed,
            config,
            records: vec![],
            truncation_flags: vec![],
            timing_ms: None,
            pass: true,
        }
    }

    pub fn push(&mut self, rec: CheckRecord) {
        self.pass &= rec.pass;
        self.records.push(rec);
    }

    pub fn check(&mut self, name: impl Into<String>, expected: Option<Quantity>, computed: Quantity, residual: Option<f64>, pass: bool, basis: Basis) {
        self.push(CheckRecord { name: name.into(), expected, computed, residual, pass, basis });
    }

    /// Structured failure for an error raised while computing a check.
    pub fn error(&mut self, name: impl Into<String>, err: impl fmt::Display) {
        self.check(name, None, Quantity::Exact(format!("error: {err}")), None, false, Basis::Invariant);
    }

    pub fn flag(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        if !self.truncation_flags.contains(&msg) {
            self.truncation_flags.push(msg);
        }
    }

    pub fn recompute_pass(&mut self) {
        self.pass = self.records.iter().all(|r| r.pass);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    CsvSummary,
}

/// Compact JSON with every float written as `{:.16e}`.
struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

pub fn to_json(r: &RunReport) -> Vec<u8> {
    let mut out = vec![];
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SeventeenDigits);
    r.serialize(&mut ser).expect("report serialization cannot fail");
    out.push(b'\n');
    out
}

pub fn to_csv(r: &RunReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["name", "pass", "expected", "computed", "residual", "basis"]).expect("in-memory write");
    for rec in &r.records {
        let basis = match rec.basis {
            Basis::Oracle => "oracle",
            Basis::Invariant => "invariant",
            Basis::Config => "config",
        };
        w.write_record([
            rec.name.clone(),
            rec.pass.to_string(),
            rec.expected.as_ref().map(|q| q.to_string()).unwrap_or_default(),
            rec.computed.to_string(),
            rec.residual.map(fmt_f64).unwrap_or_default(),
            basis.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn emit_report(r: &RunReport, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Json => to_json(r),
        OutputFormat::CsvSummary => to_csv(r),
    }
}
