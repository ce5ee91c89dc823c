//! Flat INI-style experiment files: `[section]` headers, `key = value`
//! lines, `#` comments. Every violation is reported with its line number
//! and field; nothing is silently fixed or defaulted away.
//!
//! Value grammar: scalars are decimal numbers, vectors are whitespace
//! separated, per-leader matrices separate leaders with `|`, and piecewise
//! control values separate pieces with `;`.

use leadfield::kernels::KernelSpec;
use leadfield::meanfield::InitialCloud;
use leadfield::measures::{MeasureKind, WeightedMeasure};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} {}: {}", self.line, self.field, self.message)
    }
}

fn diag(line: usize, field: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        line,
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "problem",
        &[
            "experiment",
            "d",
            "m",
            "n",
            "m_samples",
            "t_end",
            "dt",
            "u_max",
            "p",
            "kernel_h",
            "kernel_g",
            "cloud_seed",
            "cloud_center",
            "cloud_radius",
            "cloud_atoms",
            "y0",
            "u",
            "breakpoints",
            "u_alpha",
            "u_star_alpha",
        ],
    ),
    (
        "cost",
        &[
            "target",
            "control_weight",
            "state_weight",
            "pieces",
            "gamma",
            "beta",
            "lambda",
        ],
    ),
    (
        "study",
        &[
            "n_list",
            "reference_n",
            "eps_list",
            "gamma_list",
            "seeds",
            "deltas",
            "tol",
            "step",
            "max_iter",
        ],
    ),
    ("output", &["directory", "plots"]),
];

pub const EXPERIMENTS: &[&str] = &[
    "simulate",
    "meanfield-converge",
    "stability",
    "optimize",
    "gamma-sweep",
    "kinetic-sweep",
    "feedback-control",
    "certify-kernels",
];

#[derive(Debug, Clone)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    /// Directory of the config file; table kernel paths resolve against it.
    pub dir: PathBuf,
    pub text: String,
}

impl Config {
    pub fn parse(text: &str, dir: PathBuf) -> Result<Config, Vec<Diagnostic>> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut diags = Vec::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => raw[..pos].trim(),
                None => raw.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                match name.strip_suffix(']') {
                    Some(name) if SECTIONS.iter().any(|(s, _)| *s == name) => {
                        current = Some(name.to_string());
                        sections.entry(name.to_string()).or_default();
                    }
                    Some(name) => {
                        diags.push(diag(line_no, format!("[{name}]"), "unknown section"));
                        current = None;
                    }
                    None => diags.push(diag(line_no, line, "unterminated section header")),
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                diags.push(diag(line_no, line, "expected `key = value`"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(section) = current.clone() else {
                diags.push(diag(line_no, key, "key appears before any [section]"));
                continue;
            };
            let known = SECTIONS
                .iter()
                .find(|(s, _)| *s == section)
                .map(|(_, keys)| keys.contains(&key))
                .unwrap_or(false);
            if !known {
                diags.push(diag(
                    line_no,
                    format!("[{section}].{key}"),
                    "unknown key for this section",
                ));
                continue;
            }
            let slot = sections.entry(section.clone()).or_default();
            if slot.contains_key(key) {
                diags.push(diag(
                    line_no,
                    format!("[{section}].{key}"),
                    "duplicate key",
                ));
                continue;
            }
            slot.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line: line_no,
                },
            );
        }
        if diags.is_empty() {
            Ok(Config {
                sections,
                dir,
                text: text.to_string(),
            })
        } else {
            Err(diags)
        }
    }

    pub fn load(path: &Path) -> Result<Config, Vec<Diagnostic>> {
        let text = fs::read_to_string(path).map_err(|e| {
            vec![diag(0, path.display().to_string(), format!("unreadable: {e}"))]
        })?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, dir)
    }

    /// Apply one `--set section.key=value` override.
    pub fn apply_set(&mut self, spec: &str) -> Result<(), Diagnostic> {
        let Some((path, value)) = spec.split_once('=') else {
            return Err(diag(0, spec, "override must look like section.key=value"));
        };
        let Some((section, key)) = path.trim().split_once('.') else {
            return Err(diag(0, spec, "override key must look like section.key"));
        };
        let known = SECTIONS
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, keys)| keys.contains(&key));
        match known {
            Some(true) => {
                self.sections.entry(section.to_string()).or_default().insert(
                    key.to_string(),
                    Entry {
                        value: value.trim().to_string(),
                        line: 0,
                    },
                );
                Ok(())
            }
            Some(false) => Err(diag(0, spec, "unknown key for this section")),
            None => Err(diag(0, spec, "unknown section")),
        }
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section)?.get(key)
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.entry(section, key).is_some()
    }
}

/// Typed accessors that collect diagnostics instead of failing fast, so a
/// single pass lists every problem in the file.
pub struct Reader<'a> {
    pub cfg: &'a Config,
    pub diags: Vec<Diagnostic>,
}

impl<'a> Reader<'a> {
    pub fn new(cfg: &'a Config) -> Self {
        Self {
            cfg,
            diags: Vec::new(),
        }
    }

    fn field(section: &str, key: &str) -> String {
        format!("[{section}].{key}")
    }

    fn missing(&mut self, section: &str, key: &str) {
        self.diags
            .push(diag(0, Self::field(section, key), "required key is missing"));
    }

    pub fn push(&mut self, section: &str, key: &str, message: impl Into<String>) {
        let line = self.cfg.entry(section, key).map_or(0, |e| e.line);
        self.diags
            .push(diag(line, Self::field(section, key), message));
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&'a str> {
        self.cfg.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn word(&mut self, section: &str, key: &str) -> Option<String> {
        match self.raw(section, key) {
            Some(v) => Some(v.to_string()),
            None => {
                self.missing(section, key);
                None
            }
        }
    }

    pub fn f64(&mut self, section: &str, key: &str) -> Option<f64> {
        match self.raw(section, key) {
            None => {
                self.missing(section, key);
                None
            }
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Some(x),
                _ => {
                    self.push(section, key, format!("`{v}` is not a finite number"));
                    None
                }
            },
        }
    }

    pub fn f64_or(&mut self, section: &str, key: &str, default: f64) -> Option<f64> {
        if self.cfg.has(section, key) {
            self.f64(section, key)
        } else {
            Some(default)
        }
    }

    pub fn positive(&mut self, section: &str, key: &str) -> Option<f64> {
        let v = self.f64(section, key)?;
        if v > 0.0 {
            Some(v)
        } else {
            self.push(section, key, "must be positive");
            None
        }
    }

    pub fn unit_interval(&mut self, section: &str, key: &str) -> Option<f64> {
        let v = self.f64(section, key)?;
        if (0.0..=1.0).contains(&v) {
            Some(v)
        } else {
            self.push(section, key, "must lie in [0, 1]");
            None
        }
    }

    pub fn usize(&mut self, section: &str, key: &str) -> Option<usize> {
        match self.raw(section, key) {
            None => {
                self.missing(section, key);
                None
            }
            Some(v) => match v.parse::<usize>() {
                Ok(x) => Some(x),
                Err(_) => {
                    self.push(section, key, format!("`{v}` is not a nonnegative integer"));
                    None
                }
            },
        }
    }

    pub fn usize_or(&mut self, section: &str, key: &str, default: usize) -> Option<usize> {
        if self.cfg.has(section, key) {
            self.usize(section, key)
        } else {
            Some(default)
        }
    }

    pub fn u64_list(&mut self, section: &str, key: &str) -> Option<Vec<u64>> {
        let v = self.word(section, key)?;
        let mut out = Vec::new();
        for tok in v.split_whitespace() {
            match tok.parse::<u64>() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.push(section, key, format!("`{tok}` is not a seed"));
                    return None;
                }
            }
        }
        if out.is_empty() {
            self.push(section, key, "list is empty");
            return None;
        }
        Some(out)
    }

    pub fn vec_f64(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        let v = self.word(section, key)?;
        let mut out = Vec::new();
        for tok in v.split_whitespace() {
            match tok.parse::<f64>() {
                Ok(x) if x.is_finite() => out.push(x),
                _ => {
                    self.push(section, key, format!("`{tok}` is not a finite number"));
                    return None;
                }
            }
        }
        if out.is_empty() {
            self.push(section, key, "list is empty");
            return None;
        }
        Some(out)
    }

    pub fn usize_list(&mut self, section: &str, key: &str) -> Option<Vec<usize>> {
        let v = self.word(section, key)?;
        let mut out = Vec::new();
        for tok in v.split_whitespace() {
            match tok.parse::<usize>() {
                Ok(x) => out.push(x),
                Err(_) => {
                    self.push(section, key, format!("`{tok}` is not a count"));
                    return None;
                }
            }
        }
        if out.is_empty() {
            self.push(section, key, "list is empty");
            return None;
        }
        Some(out)
    }

    /// `|`-separated list of equally sized float vectors.
    pub fn mat(&mut self, section: &str, key: &str) -> Option<Vec<Vec<f64>>> {
        let v = self.word(section, key)?;
        let mut rows = Vec::new();
        for part in v.split('|') {
            let mut row = Vec::new();
            for tok in part.split_whitespace() {
                match tok.parse::<f64>() {
                    Ok(x) if x.is_finite() => row.push(x),
                    _ => {
                        self.push(section, key, format!("`{tok}` is not a finite number"));
                        return None;
                    }
                }
            }
            if row.is_empty() {
                self.push(section, key, "empty row between `|` separators");
                return None;
            }
            rows.push(row);
        }
        if rows.windows(2).any(|w| w[0].len() != w[1].len()) {
            self.push(section, key, "rows disagree on dimension");
            return None;
        }
        Some(rows)
    }

    /// `;`-separated list of `|`-matrices (piecewise control values).
    pub fn pieces(&mut self, section: &str, key: &str) -> Option<Vec<Vec<Vec<f64>>>> {
        let v = self.word(section, key)?.clone();
        let mut out = Vec::new();
        for (i, piece) in v.split(';').enumerate() {
            let mut rows = Vec::new();
            for part in piece.split('|') {
                let mut row = Vec::new();
                for tok in part.split_whitespace() {
                    match tok.parse::<f64>() {
                        Ok(x) if x.is_finite() => row.push(x),
                        _ => {
                            self.push(
                                section,
                                key,
                                format!("piece {}: `{tok}` is not a finite number", i + 1),
                            );
                            return None;
                        }
                    }
                }
                if row.is_empty() {
                    self.push(section, key, format!("piece {} has an empty row", i + 1));
                    return None;
                }
                rows.push(row);
            }
            out.push(rows);
        }
        Some(out)
    }

    /// Kernel catalog entry: `zero`, `constant[:c]`, `attraction_repulsion[:a]`,
    /// `stokes_like[:c]`, or `table:PATH` (path relative to the config file).
    pub fn kernel(&mut self, section: &str, key: &str, token: &str, d: usize) -> Option<KernelSpec> {
        let (name, arg) = match token.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (token.trim(), None),
        };
        let amplitude = |r: &mut Self, default: f64| -> Option<f64> {
            match arg {
                None => Some(default),
                Some(a) => match a.parse::<f64>() {
                    Ok(x) if x.is_finite() => Some(x),
                    _ => {
                        r.push(section, key, format!("`{a}` is not a kernel amplitude"));
                        None
                    }
                },
            }
        };
        match name {
            "zero" => Some(KernelSpec::zero(d)),
            "constant" => Some(KernelSpec::constant(d, amplitude(self, 1.0)?)),
            "attraction_repulsion" => {
                Some(KernelSpec::attraction_repulsion(d, amplitude(self, 1.0)?))
            }
            "stokes_like" => Some(KernelSpec::stokes_like(d, amplitude(self, 1.0)?)),
            "table" => {
                let Some(path) = arg else {
                    self.push(section, key, "table kernel needs a path: table:FILE");
                    return None;
                };
                let full = self.cfg.dir.join(path);
                match KernelSpec::custom_table_from_path(d, &full) {
                    Ok(k) => Some(k),
                    Err(e) => {
                        self.push(section, key, format!("table `{path}`: {e}"));
                        None
                    }
                }
            }
            other => {
                self.push(
                    section,
                    key,
                    format!("`{other}` is not in the kernel catalog"),
                );
                None
            }
        }
    }

    pub fn kernel_h(&mut self, d: usize) -> Option<KernelSpec> {
        let token = self.word("problem", "kernel_h")?;
        self.kernel("problem", "kernel_h", &token, d)
    }

    /// One entry per dimension; a single entry is replicated across all `d`.
    pub fn kernel_g(&mut self, d: usize) -> Option<Vec<KernelSpec>> {
        let raw = self.word("problem", "kernel_g")?;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            self.push("problem", "kernel_g", "list is empty");
            return None;
        }
        if tokens.len() != 1 && tokens.len() != d {
            self.push(
                "problem",
                "kernel_g",
                format!("expected 1 or {d} kernels, found {}", tokens.len()),
            );
            return None;
        }
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let token = tokens[i.min(tokens.len() - 1)];
            out.push(self.kernel("problem", "kernel_g", token, d)?);
        }
        Some(out)
    }

    /// Initial follower density: explicit `cloud_atoms` win over the seeded
    /// ball sampler.
    pub fn cloud(&mut self, d: usize) -> Option<InitialCloud> {
        if self.cfg.has("problem", "cloud_atoms") {
            let atoms = self.mat("problem", "cloud_atoms")?;
            if atoms[0].len() != d {
                self.push("problem", "cloud_atoms", format!("atoms must live in R^{d}"));
                return None;
            }
            let n = atoms.len();
            match WeightedMeasure::new(atoms, vec![1.0 / n as f64; n], MeasureKind::Probability) {
                Ok(mu) => Some(InitialCloud::Atoms(mu)),
                Err(e) => {
                    self.push("problem", "cloud_atoms", e.to_string());
                    None
                }
            }
        } else {
            let seed = if self.cfg.has("problem", "cloud_seed") {
                let raw = self.word("problem", "cloud_seed")?;
                match raw.parse::<u64>() {
                    Ok(s) => Some(s),
                    Err(_) => {
                        self.push("problem", "cloud_seed", format!("`{raw}` is not a seed"));
                        None
                    }
                }?
            } else {
                self.missing("problem", "cloud_seed");
                return None;
            };
            let center = self.vec_f64("problem", "cloud_center")?;
            let radius = self.positive("problem", "cloud_radius")?;
            if center.len() != d {
                self.push(
                    "problem",
                    "cloud_center",
                    format!("center must live in R^{d}"),
                );
                return None;
            }
            Some(InitialCloud::Sampled {
                seed,
                center,
                radius,
            })
        }
    }

    /// Check that `t` sits on the `dt` grid; named diagnostics otherwise.
    pub fn check_on_grid(&mut self, section: &str, key: &str, label: &str, t: f64, dt: f64) {
        let k = (t / dt).round();
        if k < 0.0 || (k * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
            self.push(
                section,
                key,
                format!("{label} {t} does not sit on the dt = {dt} grid"),
            );
        }
    }
}
