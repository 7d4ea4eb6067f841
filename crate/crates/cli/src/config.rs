//! Experiment configuration: a flat TOML table merged with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pcsft::detection::{minimal_epsilon, singlet_state, PostSelection};
use serde::Serialize;
use toml::Value;

/// The only environment variable consulted: default output directory.
pub const OUT_DIR_ENV: &str = "PCSFT_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "pcsft-output";

const KEYS: [&str; 15] = [
    "kind",
    "seed",
    "out",
    "dim",
    "epsilon",
    "threshold",
    "angles",
    "trials",
    "dt",
    "time",
    "flat_sum",
    "source",
    "policy",
    "table",
    "trials_csv",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Born,
    Dynamics,
    Hessian,
    Epr,
    Chsh,
    Kolmogorov,
    Triangle,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Born => "born",
            Kind::Dynamics => "dynamics",
            Kind::Hessian => "hessian",
            Kind::Epr => "epr",
            Kind::Chsh => "chsh",
            Kind::Kolmogorov => "kolmogorov",
            Kind::Triangle => "triangle",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "born" => Kind::Born,
            "dynamics" => Kind::Dynamics,
            "hessian" => Kind::Hessian,
            "epr" => Kind::Epr,
            "chsh" => Kind::Chsh,
            "kolmogorov" => Kind::Kolmogorov,
            "triangle" => Kind::Triangle,
            other => return Err(format!("unknown experiment kind `{other}`")),
        })
    }
}

/// Where the Bell-scenario table comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Lhv,
    Singlet,
    Clicks,
    Random,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "lhv" => Source::Lhv,
            "singlet" => Source::Singlet,
            "clicks" => Source::Clicks,
            "random" => Source::Random,
            other => return Err(format!("unknown source `{other}`")),
        })
    }
}

/// Validated configuration. Unset optional fields take per-experiment defaults.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PostSelection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials_csv: Option<PathBuf>,
}

/// Unvalidated key-value configuration.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, Value>,
    diagnostics: Vec<String>,
}

impl RawConfig {
    pub fn from_file(path: &Path) -> Self {
        let mut raw = RawConfig::default();
        match std::fs::read_to_string(path) {
            Ok(text) => raw.merge_toml(&text),
            Err(e) => raw.diagnostics.push(format!("cannot read config {}: {e}", path.display())),
        }
        raw
    }

    #[cfg(test)]
    pub fn from_toml(text: &str) -> Self {
        let mut raw = RawConfig::default();
        raw.merge_toml(text);
        raw
    }

    fn merge_toml(&mut self, text: &str) {
        match text.parse::<toml::Table>() {
            Ok(table) => {
                for (key, value) in table {
                    self.values.insert(key, value);
                }
            }
            Err(e) => self.diagnostics.push(format!("config is not valid TOML: {}", e.message())),
        }
    }

    /// Command-line values replace file values.
    pub fn set(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    /// Schema and range checks; returns the resolved config or every violation found.
    pub fn validate(&self) -> Result<ExperimentConfig, Vec<String>> {
        let mut d = Diagnostics { messages: self.diagnostics.clone() };
        for key in self.values.keys() {
            if !KEYS.contains(&key.as_str()) {
                d.push(format!("unknown key `{key}`"));
            }
        }
        let kind = match self.values.get("kind") {
            None => {
                d.push("kind is required");
                None
            }
            Some(Value::String(s)) => s.parse::<Kind>().map_err(|e| d.push(e)).ok(),
            Some(_) => {
                d.push("kind must be a string");
                None
            }
        };
        let seed = match self.values.get("seed") {
            None => {
                d.push("seed is required");
                None
            }
            Some(Value::Integer(s)) if *s >= 0 => Some(*s as u64),
            Some(Value::Integer(_)) => {
                d.push("seed must be non-negative");
                None
            }
            Some(_) => {
                d.push("seed must be an integer");
                None
            }
        };
        let dim = self.count(&mut d, "dim").map(|v| v as usize);
        let trials = self.count(&mut d, "trials");
        let epsilon = self.float(&mut d, "epsilon");
        if let Some(e) = epsilon {
            if e < 0.0 {
                d.push("epsilon must be non-negative");
            }
        }
        let threshold = self.float(&mut d, "threshold");
        if threshold.is_some_and(|t| t < 0.0) {
            d.push("threshold must be non-negative");
        }
        let dt = self.float(&mut d, "dt");
        if dt.is_some_and(|t| t <= 0.0) {
            d.push("dt must be positive");
        }
        let time = self.float(&mut d, "time");
        if time.is_some_and(|t| t < 0.0) {
            d.push("time must be non-negative");
        }
        let angles = self.angles(&mut d);
        let flat_sum = match self.values.get("flat_sum") {
            None => None,
            Some(v) => match angle_value(v) {
                Ok(x) if x > 0.0 => Some(x),
                Ok(_) => {
                    d.push("flat_sum must be positive");
                    None
                }
                Err(e) => {
                    d.push(format!("flat_sum: {e}"));
                    None
                }
            },
        };
        let source = self.string(&mut d, "source").and_then(|s| s.parse::<Source>().map_err(|e| d.push(e)).ok());
        let policy = self
            .string(&mut d, "policy")
            .and_then(|s| s.parse::<PostSelection>().map_err(|e| d.push(e.to_string())).ok());
        let out = match self.values.get("out") {
            None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            Some(Value::String(s)) => PathBuf::from(s),
            Some(_) => {
                d.push("out must be a string");
                PathBuf::from(DEFAULT_OUT_DIR)
            }
        };
        let table = self.string(&mut d, "table").map(PathBuf::from);
        let trials_csv = self.string(&mut d, "trials_csv").map(PathBuf::from);

        if let Some(kind) = kind {
            match kind {
                Kind::Triangle => match &angles {
                    None => d.push("triangle needs three angles"),
                    Some(a) if a.len() != 3 => d.push(format!("triangle needs three angles, got {}", a.len())),
                    _ => {}
                },
                Kind::Chsh | Kind::Kolmogorov if angles.as_ref().is_some_and(|a| a.len() != 4) => {
                    d.push(format!("{kind} needs four angles: a1, a2, b1, b2"));
                }
                Kind::Epr if angles.as_ref().is_some_and(|a| a.is_empty()) => {
                    d.push("epr needs at least one angle difference");
                }
                _ => {}
            }
            if matches!(kind, Kind::Epr | Kind::Chsh) {
                if dim.is_some_and(|n| n != 2) {
                    d.push(format!("dim must be 2 for {kind}"));
                }
                let minimum = minimal_epsilon(&singlet_state()).expect("singlet is square");
                if epsilon.is_some_and(|e| e >= 0.0 && e < minimum) {
                    d.push(format!("epsilon must be at least {minimum:.6} for the singlet block covariance"));
                }
            }
            let allowed: &[Source] = match kind {
                Kind::Chsh => &[Source::Lhv, Source::Singlet, Source::Clicks],
                Kind::Kolmogorov => &[Source::Lhv, Source::Singlet, Source::Random],
                _ => &[],
            };
            if let Some(s) = source {
                if !allowed.contains(&s) {
                    d.push(format!("source {s:?} is not available for {kind}").to_lowercase());
                }
            }
            if (table.is_some() || trials_csv.is_some()) && kind != Kind::Kolmogorov {
                d.push("table and trials_csv apply to kolmogorov only");
            }
            if table.is_some() && trials_csv.is_some() {
                d.push("give either table or trials_csv, not both");
            }
        }

        match (kind, seed) {
            (Some(kind), Some(seed)) if d.messages.is_empty() => Ok(ExperimentConfig {
                kind,
                seed,
                out,
                dim,
                epsilon,
                threshold,
                angles,
                trials,
                dt,
                time,
                flat_sum,
                source,
                policy,
                table,
                trials_csv,
            }),
            _ => Err(d.messages),
        }
    }

    fn count(&self, d: &mut Diagnostics, key: &str) -> Option<u64> {
        match self.values.get(key)? {
            Value::Integer(v) if *v >= 1 => Some(*v as u64),
            Value::Integer(_) => {
                d.push(format!("{key} must be at least 1"));
                None
            }
            _ => {
                d.push(format!("{key} must be an integer"));
                None
            }
        }
    }

    fn float(&self, d: &mut Diagnostics, key: &str) -> Option<f64> {
        let v = match self.values.get(key)? {
            Value::Integer(v) => *v as f64,
            Value::Float(v) => *v,
            _ => {
                d.push(format!("{key} must be a number"));
                return None;
            }
        };
        if !v.is_finite() {
            d.push(format!("{key} must be finite"));
            return None;
        }
        Some(v)
    }

    fn string(&self, d: &mut Diagnostics, key: &str) -> Option<String> {
        match self.values.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                d.push(format!("{key} must be a string"));
                None
            }
        }
    }

    fn angles(&self, d: &mut Diagnostics) -> Option<Vec<f64>> {
        let parsed = match self.values.get("angles")? {
            Value::String(s) => parse_angle_list(s),
            Value::Array(items) => items.iter().map(angle_value).collect(),
            _ => Err("angles must be a string or an array".to_string()),
        };
        parsed.map_err(|e| d.push(format!("angles: {e}"))).ok()
    }
}

struct Diagnostics {
    messages: Vec<String>,
}

impl Diagnostics {
    fn push(&mut self, message: impl Into<String>) {
        self.messages.push(message.into());
    }
}

fn angle_value(v: &Value) -> Result<f64, String> {
    match v {
        Value::Integer(i) => Ok(*i as f64),
        Value::Float(x) if x.is_finite() => Ok(*x),
        Value::String(s) => parse_angle(s),
        _ => Err(format!("expected a number or an expression, got {v}")),
    }
}

/// Comma-separated angle expressions.
pub fn parse_angle_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(parse_angle).collect()
}

/// Arithmetic over numbers and `pi`: `pi/4`, `-3pi/8`, `0.25*pi`, `(1+2)*pi/6`.
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens: &tokens, pos: 0 };
    let value = parser.expr()?;
    if parser.pos != tokens.len() {
        return Err(format!("unexpected trailing input in `{text}`"));
    }
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Op(char),
}

fn tokenize(text: &str) -> Result<Vec<Token>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && chars[i] == 'e' {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Token::Number(s.parse().map_err(|_| format!("bad number `{s}`"))?));
        } else if c == 'π' {
            out.push(Token::Number(std::f64::consts::PI));
            i += 1;
        } else if c.eq_ignore_ascii_case(&'p') && chars.get(i + 1).is_some_and(|n| n.eq_ignore_ascii_case(&'i')) {
            out.push(Token::Number(std::f64::consts::PI));
            i += 2;
        } else if "+-*/()".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(format!("unexpected character `{c}` in `{text}`"));
        }
    }
    if out.is_empty() {
        return Err("empty angle".into());
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Result<f64, String> {
        let mut value = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            value = if op == '+' { value + rhs } else { value - rhs };
        }
        Ok(value)
    }

    fn term(&mut self) -> Result<f64, String> {
        let mut value = self.factor()?;
        loop {
            match self.peek().cloned() {
                Some(Token::Op('*')) => {
                    self.pos += 1;
                    value *= self.factor()?;
                }
                Some(Token::Op('/')) => {
                    self.pos += 1;
                    value /= self.factor()?;
                }
                // implicit product, as in `3pi`
                Some(Token::Number(_)) | Some(Token::Op('(')) => value *= self.factor()?,
                _ => return Ok(value),
            }
        }
    }

    fn factor(&mut self) -> Result<f64, String> {
        match self.peek().cloned() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.factor()
            }
            Some(Token::Number(x)) => {
                self.pos += 1;
                Ok(x)
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(&Token::Op(')')) {
                    return Err("missing `)`".into());
                }
                self.pos += 1;
                Ok(v)
            }
            other => Err(format!("unexpected {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn angle_expressions() {
        let cases = [
            ("pi/4", PI / 4.0),
            ("-pi/8", -PI / 8.0),
            ("3pi/8", 3.0 * PI / 8.0),
            ("3*pi/8", 3.0 * PI / 8.0),
            ("0.5", 0.5),
            ("π/3", PI / 3.0),
            ("2*(pi-1)", 2.0 * (PI - 1.0)),
            ("1e-3", 1e-3),
            ("PI", PI),
        ];
        for (text, expected) in cases {
            assert!((parse_angle(text).unwrap() - expected).abs() < 1e-15, "{text}");
        }
        assert!(parse_angle("pi/").is_err());
        assert!(parse_angle("abc").is_err());
        assert!(parse_angle("1/0").is_err());
        assert_eq!(parse_angle_list("0, pi/4,pi/8 ,-pi/8").unwrap().len(), 4);
    }

    #[test]
    fn valid_config_has_no_diagnostics() {
        let raw = RawConfig::from_toml("kind = \"born\"\nseed = 7\ndim = 2\nepsilon = 0.1\ntrials = 1000\n");
        let cfg = raw.validate().unwrap();
        assert_eq!(cfg.kind, Kind::Born);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn diagnostics_are_aggregated() {
        let raw = RawConfig::from_toml("kind = \"born\"\nepsilon = -0.1\ntrials = 0\ncolour = 1\n");
        let errors = raw.validate().unwrap_err();
        assert!(errors.contains(&"epsilon must be non-negative".to_string()));
        assert!(errors.contains(&"seed is required".to_string()));
        assert!(errors.contains(&"trials must be at least 1".to_string()));
        assert!(errors.contains(&"unknown key `colour`".to_string()));
        assert_eq!(errors.len(), 4);
    }

    #[test]
    fn kind_specific_checks() {
        let errors =
            RawConfig::from_toml("kind = \"triangle\"\nseed = 1\nangles = \"pi/3, pi/3\"").validate().unwrap_err();
        assert_eq!(errors, vec!["triangle needs three angles, got 2".to_string()]);
        let errors = RawConfig::from_toml("kind = \"epr\"\nseed = 1\nepsilon = 0.1").validate().unwrap_err();
        assert!(errors[0].starts_with("epsilon must be at least 0.2071"));
        let ok = RawConfig::from_toml(
            "kind = \"chsh\"\nseed = 1\nangles = [0, \"pi/4\", \"pi/8\", -0.39]\nsource = \"lhv\"",
        );
        assert_eq!(ok.validate().unwrap().angles.unwrap().len(), 4);
        assert!(RawConfig::from_toml("kind = \"born\"\nseed = 1\nsource = \"lhv\"").validate().is_err());
        assert!(RawConfig::from_toml("kind = [").validate().is_err());
    }
}
