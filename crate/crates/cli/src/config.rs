//! Flat `key = value` configuration with one `[section]` per command.
//!
//! Resolution order, later wins: built-in defaults, top-level keys of the
//! file, the command's section, command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    HamSweep,
    HjbCompare,
    VdpControl,
    LqOnpolicy,
    LqOffpolicy,
    LqExact,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::HamSweep,
        Command::HjbCompare,
        Command::VdpControl,
        Command::LqOnpolicy,
        Command::LqOffpolicy,
        Command::LqExact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::HamSweep => "ham-sweep",
            Command::HjbCompare => "hjb-compare",
            Command::VdpControl => "vdp-control",
            Command::LqOnpolicy => "lq-onpolicy",
            Command::LqOffpolicy => "lq-offpolicy",
            Command::LqExact => "lq-exact",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Every key the command accepts, globals first.
    pub fn keys(self) -> Vec<&'static KeySpec> {
        let own: &[KeySpec] = match self {
            Command::HamSweep => HAM_SWEEP,
            Command::HjbCompare => HJB_COMPARE,
            Command::VdpControl => VDP_CONTROL,
            Command::LqOnpolicy | Command::LqOffpolicy => LQ_LEARN,
            Command::LqExact => LQ_EXACT,
        };
        GLOBAL.iter().chain(own).collect()
    }

    fn spec(self, key: &str) -> Option<&'static KeySpec> {
        self.keys().into_iter().find(|k| k.name == key)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Positive,
    NonNegative,
    /// Integer `>= 1`.
    Count,
    Seed,
    Path,
    /// Comma-separated reals; may be empty.
    List,
    /// Comma-separated reals, all `> 0`, at least one.
    PositiveList,
    Choice(&'static [&'static str]),
}

pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        kind,
        default,
        help,
    }
}

const GLOBAL: &[KeySpec] = &[
    key("seed", Kind::Seed, "0", "seed for every random stream"),
    key("out", Kind::Path, "", "output directory (default: runs/<command>)"),
];

const HAM_SWEEP: &[KeySpec] = &[
    key("model", Kind::Choice(&["integrator", "van-der-pol"]), "integrator", "f(x,u) = u on [-1,1], or the 2-D oscillator"),
    key("alphas", Kind::PositiveList, "0.01,0.05,0.1,0.5,1,2,5", "temperatures"),
    key("p", Kind::List, "-3,-1,-0.1,0.1,1,3", "costate values (last costate component for the oscillator)"),
    key("x", Kind::List, "", "state; empty means the origin"),
    key("nodes", Kind::Count, "64", "Gauss-Legendre nodes per panel (two panels)"),
];

const HJB_COMPARE: &[KeySpec] = &[
    key("alpha", Kind::Positive, "1", "temperature"),
    key("t", Kind::Positive, "0.1", "time-to-go"),
    key("grid_n", Kind::Count, "161", "nodes per axis"),
    key("half_width", Kind::Positive, "2", "grid covers [-w, w]^2"),
    key("cfl", Kind::Positive, "0.5", "Godunov CFL number"),
    key("nodes", Kind::Count, "4", "quadrature nodes per panel"),
    key("formula", Kind::Choice(&["min", "max"]), "min", "Hopf-Lax form"),
    key("n_starts", Kind::Count, "1", "optimizer starts per point"),
    key("start_radius", Kind::Positive, "2", "radius of random starts"),
    key("ode_step", Kind::Positive, "0.025", "largest RK4 step along characteristics"),
    key("simplex_iters", Kind::Count, "120", "Nelder-Mead iteration cap"),
    key("simplex_scale", Kind::Positive, "0.25", "initial simplex edge"),
    key("simplex_tol", Kind::Positive, "1e-6", "Nelder-Mead spread tolerance"),
];

const VDP_CONTROL: &[KeySpec] = &[
    key("alpha", Kind::Positive, "1", "temperature"),
    key("x0", Kind::List, "0.05,0.25,0,0.02", "initial state"),
    key("total_t", Kind::Positive, "20", "simulated time"),
    key("window_t", Kind::Positive, "2.5", "receding-horizon window"),
    key("nodes", Kind::Count, "4", "quadrature nodes per panel"),
    key("control_dt", Kind::Positive, "0.1", "control sampling interval"),
    key("resynth_interval", Kind::Positive, "0.25", "time between value re-solves"),
    key("n_starts", Kind::Count, "4", "optimizer starts per solve"),
    key("start_radius", Kind::Positive, "1", "radius of random starts"),
    key("ode_step", Kind::Positive, "0.1", "largest RK4 step along characteristics"),
    key("simplex_iters", Kind::Count, "80", "Nelder-Mead iteration cap"),
    key("simplex_tol", Kind::Positive, "1e-6", "Nelder-Mead spread tolerance"),
    key("settle_band", Kind::Positive, "0.05", "band for the settling time"),
];

const LQ_LEARN: &[KeySpec] = &[
    key("fixture", Kind::Path, "fixtures/lq_n3m2", "directory with A, B, Q, R, x0"),
    key("alpha", Kind::Positive, "1", "temperature"),
    key("lambda", Kind::NonNegative, "1e-10", "discount rate"),
    key("window", Kind::Positive, "0.01", "data window length"),
    key("n_sub", Kind::Count, "10", "plant substeps per window"),
    key("eps_stop", Kind::Positive, "5e-3", "stop when ||P_k - P_{k-1}|| falls below this"),
    key("max_iters", Kind::Count, "50", "policy-iteration cap"),
    key("rank_tol", Kind::Positive, "1e-8", "relative singular-value cutoff"),
    key("horizon", Kind::Positive, "50", "total simulated time"),
    key("window_budget", Kind::Count, "100000", "windows allowed per rank test"),
    key("settle_band", Kind::Positive, "1", "band for the settling time"),
    key("record_every", Kind::Count, "10", "trajectory decimation in substeps"),
    key("exploration", Kind::Choice(&["max-entropy", "sinusoidal"]), "max-entropy", "exploration signal"),
    key("sin_amplitude", Kind::Positive, "0.5", "sinusoidal amplitude"),
    key("sin_omega", Kind::Positive, "100", "largest sinusoidal frequency"),
    key("sin_terms", Kind::Count, "100", "sinusoids per channel"),
];

const LQ_EXACT: &[KeySpec] = &[
    key("fixture", Kind::Path, "fixtures/lq_n3m2", "directory with A, B, Q, R, x0"),
    key("alpha", Kind::Positive, "1", "temperature"),
    key("lambda", Kind::NonNegative, "1e-10", "discount rate"),
    key("tol", Kind::Positive, "1e-12", "Kleinman stopping tolerance"),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Float(f64),
    Int(u64),
    Text(String),
    List(Vec<f64>),
}

fn parse_value(spec: &KeySpec, raw: &str) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    let name = spec.name;
    let float = |s: &str| -> std::result::Result<f64, String> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| format!("`{name}` expects a number, got `{s}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{name}` must be finite, got `{s}`"))
        }
    };
    let list = |s: &str| -> std::result::Result<Vec<f64>, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(float).collect()
    };
    Ok(match spec.kind {
        Kind::Positive => {
            let v = float(raw)?;
            if v <= 0.0 {
                return Err(format!("`{name}` = {v} violates {name} > 0"));
            }
            Value::Float(v)
        }
        Kind::NonNegative => {
            let v = float(raw)?;
            if v < 0.0 {
                return Err(format!("`{name}` = {v} violates {name} >= 0"));
            }
            Value::Float(v)
        }
        Kind::Count => {
            let v: u64 = raw
                .parse()
                .map_err(|_| format!("`{name}` expects a positive integer, got `{raw}`"))?;
            if v == 0 {
                return Err(format!("`{name}` = 0 violates {name} >= 1"));
            }
            Value::Int(v)
        }
        Kind::Seed => Value::Int(
            raw.parse()
                .map_err(|_| format!("`{name}` expects a non-negative integer, got `{raw}`"))?,
        ),
        Kind::Path => Value::Text(raw.to_string()),
        Kind::List => Value::List(list(raw)?),
        Kind::PositiveList => {
            let v = list(raw)?;
            if v.is_empty() {
                return Err(format!("`{name}` needs at least one value"));
            }
            if let Some(bad) = v.iter().find(|a| **a <= 0.0) {
                return Err(format!("`{name}` contains {bad}, violating every {name} > 0"));
            }
            Value::List(v)
        }
        Kind::Choice(options) => {
            if !options.contains(&raw) {
                return Err(format!("`{name}` must be one of {}, got `{raw}`", options.join(", ")));
            }
            Value::Text(raw.to_string())
        }
    })
}

fn unknown_key(command: Command, key: &str) -> String {
    let valid: Vec<&str> = command.keys().iter().map(|k| k.name).collect();
    format!("unknown key `{key}` for {command}; valid keys: {}", valid.join(", "))
}

/// A fully resolved, validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
    /// Command-specific parameters, every key present.
    pub params: BTreeMap<&'static str, Value>,
}

impl ExperimentConfig {
    pub fn float(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(Value::Float(v)) => *v,
            other => panic!("`{key}` is not a real parameter of {}: {other:?}", self.command),
        }
    }

    pub fn count(&self, key: &str) -> usize {
        match self.params.get(key) {
            Some(Value::Int(v)) => *v as usize,
            other => panic!("`{key}` is not a count parameter of {}: {other:?}", self.command),
        }
    }

    pub fn list(&self, key: &str) -> &[f64] {
        match self.params.get(key) {
            Some(Value::List(v)) => v,
            other => panic!("`{key}` is not a list parameter of {}: {other:?}", self.command),
        }
    }

    pub fn text(&self, key: &str) -> &str {
        match self.params.get(key) {
            Some(Value::Text(v)) => v,
            other => panic!("`{key}` is not a text parameter of {}: {other:?}", self.command),
        }
    }

    /// Echo of every resolved setting, for the manifest.
    pub fn echo(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("command".into(), self.command.name().into());
        map.insert("seed".into(), self.seed.into());
        map.insert("out".into(), self.out.display().to_string().into());
        for (k, v) in &self.params {
            map.insert((*k).into(), serde_json::to_value(v).expect("plain values serialize"));
        }
        serde_json::Value::Object(map)
    }
}

/// Raw assignments for one command, tagged with where they came from.
#[derive(Default)]
struct Assignments(BTreeMap<&'static str, Value>);

impl Assignments {
    fn set(&mut self, command: Command, key: &str, raw: &str, origin: impl Fn() -> String) -> Result<()> {
        let spec = command
            .spec(key)
            .ok_or_else(|| anyhow!("{}: {}", origin(), unknown_key(command, key)))?;
        let value = parse_value(spec, raw).map_err(|e| anyhow!("{}: {e}", origin()))?;
        self.0.insert(spec.name, value);
        Ok(())
    }
}

/// Parses configuration text. Sections for other commands are checked too,
/// so a typo anywhere in the file is caught.
fn apply_file(command: Command, text: &str, source: &Path, into: &mut Assignments) -> Result<()> {
    let mut section: Option<Command> = None;
    let mut in_section = Assignments::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let origin = || format!("{}:{lineno}: `{}`", source.display(), raw_line.trim());
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            section = Some(Command::from_name(name).ok_or_else(|| {
                let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
                anyhow!("{}: unknown section `{name}`; valid sections: {}", origin(), names.join(", "))
            })?);
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}: expected `key = value`", origin()))?;
        let k = k.trim().replace('-', "_");
        match section {
            None => {
                // top-level keys must be valid for the command being run
                into.set(command, &k, v, origin)?;
            }
            Some(s) if s == command => in_section.set(s, &k, v, origin)?,
            Some(s) => {
                let mut scratch = Assignments::default();
                scratch.set(s, &k, v, origin)?;
            }
        }
    }
    into.0.extend(in_section.0);
    Ok(())
}

/// Splits `--key value` / `--key=value` pairs.
fn parse_flags(flags: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = flags.iter();
    while let Some(flag) = it.next() {
        let body = flag
            .strip_prefix("--")
            .ok_or_else(|| anyhow!("expected a `--key value` override, got `{flag}`"))?;
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| anyhow!("flag `--{body}` is missing its value"))?;
                (body.to_string(), v.clone())
            }
        };
        out.push((k.replace('-', "_"), v));
    }
    Ok(out)
}

/// Resolves defaults, an optional file and flag overrides into a config.
pub fn parse_config(command: Command, file: Option<&Path>, flags: &[String]) -> Result<ExperimentConfig> {
    let mut file = file.map(Path::to_path_buf);
    let mut pairs = Vec::new();
    for (k, v) in parse_flags(flags)? {
        if k == "config" {
            file = Some(PathBuf::from(v));
        } else {
            pairs.push((k, v));
        }
    }
    let mut assigned = Assignments::default();
    for spec in command.keys() {
        let v = parse_value(spec, spec.default).unwrap_or_else(|e| panic!("bad built-in default: {e}"));
        assigned.0.insert(spec.name, v);
    }
    if let Some(path) = &file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        apply_file(command, &text, path, &mut assigned)?;
    }
    for (k, v) in &pairs {
        assigned.set(command, k, v, || format!("flag `--{k} {v}`"))?;
    }
    let mut params = assigned.0;
    let seed = match params.remove("seed") {
        Some(Value::Int(s)) => s,
        other => bail!("internal: seed resolved to {other:?}"),
    };
    let out = match params.remove("out") {
        Some(Value::Text(s)) if !s.is_empty() => PathBuf::from(s),
        _ => PathBuf::from("runs").join(command.name()),
    };
    Ok(ExperimentConfig {
        command,
        seed,
        out,
        params,
    })
}

/// Per-command key reference for `--help`.
pub fn key_reference() -> String {
    let mut s = String::from("Configuration keys (file `key = value`, `[command]` sections, or `--key value`):\n");
    for c in Command::ALL {
        s.push_str(&format!("\n  {c}\n"));
        for k in c.keys() {
            let default = if k.default.is_empty() { "-" } else { k.default };
            s.push_str(&format!("    {:<17} {:<22} {}\n", k.name, default, k.help));
        }
    }
    s
}
