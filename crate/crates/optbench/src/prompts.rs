//! Prompt templates and reply parsing.
//!
//! Template bodies follow the task prompt wording verbatim, with named
//! `{placeholder}` slots. Replies are parsed defensively: models wrap their
//! answers in reasoning prose, so extraction always takes the *last*
//! matching tuple or list in the text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::domain::Solution;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template {template}: no binding for placeholder '{name}'")]
    MissingBinding { template: String, name: String },
    #[error("no {arity}-value tuple found in reply")]
    NoTuple { arity: usize },
    #[error("no solution list found in reply")]
    NoList,
    #[error("list entry {position}: {detail}")]
    BadListEntry { position: usize, detail: String },
    #[error("template file {file}: {detail}")]
    TemplateFile { file: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    DefineLoss,
    GdStep,
    GridCreate,
    GridSelect,
    HcGenerate,
    HcSelect,
    BlackBoxGuess,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::DefineLoss,
        TemplateId::GdStep,
        TemplateId::GridCreate,
        TemplateId::GridSelect,
        TemplateId::HcGenerate,
        TemplateId::HcSelect,
        TemplateId::BlackBoxGuess,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateId::DefineLoss => "define_loss.txt",
            TemplateId::GdStep => "gd_step.txt",
            TemplateId::GridCreate => "grid_create.txt",
            TemplateId::GridSelect => "grid_select.txt",
            TemplateId::HcGenerate => "hc_generate.txt",
            TemplateId::HcSelect => "hc_select.txt",
            TemplateId::BlackBoxGuess => "black_box_guess.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateId::DefineLoss => include_str!("../templates/define_loss.txt"),
            TemplateId::GdStep => include_str!("../templates/gd_step.txt"),
            TemplateId::GridCreate => include_str!("../templates/grid_create.txt"),
            TemplateId::GridSelect => include_str!("../templates/grid_select.txt"),
            TemplateId::HcGenerate => include_str!("../templates/hc_generate.txt"),
            TemplateId::HcSelect => include_str!("../templates/hc_select.txt"),
            TemplateId::BlackBoxGuess => include_str!("../templates/black_box_guess.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name().trim_end_matches(".txt"))
    }
}

/// Placeholder values for one render call.
#[derive(Debug, Clone, Default)]
pub struct Bindings(BTreeMap<&'static str, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: &'static str, value: impl Into<String>) -> Self {
        self.0.insert(name, value.into());
        self
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

static PLACEHOLDER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"));

/// The loaded template registry, immutable after startup. Files in an
/// override directory shadow the built-in bodies one by one.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    bodies: BTreeMap<&'static str, String>,
    system: String,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let mut bodies = BTreeMap::new();
        for id in TemplateId::ALL {
            bodies.insert(id.file_name(), id.builtin().trim_end().to_string());
        }
        Self {
            bodies,
            system: include_str!("../templates/system.txt").trim_end().to_string(),
        }
    }

    pub fn load(dir: Option<&Path>) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        let Some(dir) = dir else { return Ok(set) };
        let read = |file: &str| -> Result<Option<String>, PromptError> {
            let path = dir.join(file);
            if !path.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&path)
                .map(|s| Some(s.trim_end().to_string()))
                .map_err(|e| PromptError::TemplateFile {
                    file: path.display().to_string(),
                    detail: e.to_string(),
                })
        };
        for id in TemplateId::ALL {
            if let Some(body) = read(id.file_name())? {
                set.bodies.insert(id.file_name(), body);
            }
        }
        if let Some(system) = read("system.txt")? {
            set.system = system;
        }
        Ok(set)
    }

    pub fn system_prompt(&self) -> &str {
        &self.system
    }

    pub fn body(&self, id: TemplateId) -> &str {
        &self.bodies[id.file_name()]
    }

    /// Substitutes every placeholder; an uncovered placeholder is an error
    /// naming it.
    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, PromptError> {
        let body = self.body(id);
        let mut missing = None;
        let rendered = PLACEHOLDER_RE.replace_all(body, |caps: &regex::Captures<'_>| {
            let name = &caps[1];
            match bindings.get(name) {
                Some(value) => value.to_string(),
                None => {
                    missing.get_or_insert_with(|| name.to_string());
                    String::new()
                }
            }
        });
        match missing {
            Some(name) => Err(PromptError::MissingBinding {
                template: id.to_string(),
                name,
            }),
            None => Ok(rendered.into_owned()),
        }
    }
}

/// Formats a value the way prompts show numbers: integers bare, everything
/// else as the shortest decimal that parses back to the same value.
pub fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// `(v1, v2, ...)` tuple form used for data points and solutions.
pub fn format_tuple(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| format_number(v)).collect();
    format!("({})", parts.join(", "))
}

/// Black-box history: `f(x1,x2,...) = loss` entries, comma-separated in
/// chronological order.
pub fn format_history(entries: &[(Solution, f64)]) -> String {
    let parts: Vec<String> = entries
        .iter()
        .map(|(s, loss)| {
            let vals: Vec<String> = s.values().iter().map(|&v| format_number(v)).collect();
            format!("f({}) = {}", vals.join(","), format_number(*loss))
        })
        .collect();
    parts.join(", ")
}

const NUMBER_PATTERN: &str = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?";

static TUPLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    let n = NUMBER_PATTERN;
    Regex::new(&format!(
        r"\(\s*{n}(?:\s*,\s*{n})*\s*\)|\[\s*{n}(?:\s*,\s*{n})*\s*\]"
    ))
    .expect("valid regex")
});

static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(NUMBER_PATTERN).expect("valid regex"));

static LIST_SPAN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[[^\[\]]*\]").expect("valid regex"));

static PAREN_TUPLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    let n = NUMBER_PATTERN;
    Regex::new(&format!(r"\(\s*{n}(?:\s*,\s*{n})*\s*\)")).expect("valid regex")
});

fn numbers_in(text: &str) -> Option<Vec<f64>> {
    let values: Vec<f64> = NUMBER_RE
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .collect();
    values.iter().all(|v| v.is_finite()).then_some(values)
}

/// Last numeric tuple in the text, whatever its arity. Used where the
/// expected dimension is not yet known (e.g. reading the data points back
/// out of a rendered prompt).
pub fn parse_last_tuple(text: &str) -> Option<Vec<f64>> {
    let mut last = None;
    for m in TUPLE_RE.find_iter(text) {
        if let Some(values) = numbers_in(m.as_str()) {
            last = Some(values);
        }
    }
    last
}

/// Extracts the last parenthesized or bracketed comma-separated numeric
/// tuple of arity `d`. Later tuples override earlier reasoning text.
pub fn parse_point(text: &str, d: usize) -> Result<Solution, PromptError> {
    assert!(d >= 1, "dimension must be at least 1");
    let mut last = None;
    for m in TUPLE_RE.find_iter(text) {
        if let Some(values) = numbers_in(m.as_str()) {
            if values.len() == d {
                last = Some(values);
            }
        }
    }
    match last {
        Some(values) => Ok(Solution::new(values).expect("finiteness checked")),
        None => Err(PromptError::NoTuple { arity: d }),
    }
}

fn parse_list_content(content: &str, d: usize) -> Result<Vec<Solution>, PromptError> {
    let mut solutions = Vec::new();
    let mut rest = content.trim();
    let mut position = 0usize;
    while !rest.is_empty() {
        position += 1;
        if !rest.starts_with('(') {
            return Err(PromptError::BadListEntry {
                position,
                detail: format!("expected a '(' but found '{}'", rest.chars().next().unwrap()),
            });
        }
        let close = rest.find(')').ok_or_else(|| PromptError::BadListEntry {
            position,
            detail: "unterminated tuple".into(),
        })?;
        let inner = &rest[1..close];
        let mut values = Vec::new();
        for field in inner.split(',') {
            let field = field.trim();
            let value: f64 = field.parse().map_err(|_| PromptError::BadListEntry {
                position,
                detail: format!("'{field}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(PromptError::BadListEntry {
                    position,
                    detail: format!("'{field}' is not finite"),
                });
            }
            values.push(value);
        }
        if values.len() != d {
            return Err(PromptError::BadListEntry {
                position,
                detail: format!("tuple has {} values, expected {d}", values.len()),
            });
        }
        solutions.push(Solution::new(values).expect("finiteness checked"));
        rest = rest[close + 1..].trim_start();
        if let Some(stripped) = rest.strip_prefix(',') {
            rest = stripped.trim_start();
        } else if !rest.is_empty() {
            return Err(PromptError::BadListEntry {
                position: position + 1,
                detail: format!("unexpected '{}'", rest.chars().next().unwrap()),
            });
        }
    }
    Ok(solutions)
}

/// Extracts the last bracketed list of arity-`d` tuples, preserving order
/// and duplicates. A bracketed span only counts as the answer list if it is
/// empty or contains at least one numeric tuple, so echoed `(ŷ1, ŷ2, ...)`
/// placeholders in the reply are skipped.
pub fn parse_point_list(text: &str, d: usize) -> Result<Vec<Solution>, PromptError> {
    assert!(d >= 1, "dimension must be at least 1");
    let mut last_span = None;
    for m in LIST_SPAN_RE.find_iter(text) {
        let content = &m.as_str()[1..m.as_str().len() - 1];
        if content.trim().is_empty() || PAREN_TUPLE_RE.is_match(content) {
            last_span = Some(content);
        }
    }
    match last_span {
        Some(content) => parse_list_content(content, d),
        None => Err(PromptError::NoList),
    }
}

/// Default elementwise tolerance for clustering self-consistency samples.
pub const SELF_CONSISTENCY_TOL: f64 = 1e-6;

fn close(a: &Solution, b: &Solution, tol: f64) -> bool {
    a.len() == b.len()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| (x - y).abs() <= tol)
}

/// Majority vote over sampled solutions: clusters candidates by elementwise
/// distance ≤ `tol` and returns the index of the largest cluster's first
/// member. Ties break by lower recomputed loss, then by earliest occurrence.
pub fn self_consistent_choice_index(
    candidates: &[Solution],
    tol: f64,
    mut loss_of: impl FnMut(&Solution) -> f64,
) -> usize {
    assert!(!candidates.is_empty(), "candidates must be non-empty");
    // (representative index, member count)
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|(rep, _)| close(c, &candidates[*rep], tol))
        {
            Some((_, count)) => *count += 1,
            None => clusters.push((i, 1)),
        }
    }
    let mut best = clusters[0];
    let mut best_loss = loss_of(&candidates[best.0]);
    for &(rep, count) in &clusters[1..] {
        if count < best.1 {
            continue;
        }
        let loss = loss_of(&candidates[rep]);
        if count > best.1 || loss < best_loss {
            best = (rep, count);
            best_loss = loss;
        }
    }
    best.0
}

/// As [`self_consistent_choice_index`], returning the winning solution.
pub fn self_consistent_choice(
    candidates: &[Solution],
    tol: f64,
    loss_of: impl FnMut(&Solution) -> f64,
) -> Solution {
    candidates[self_consistent_choice_index(candidates, tol, loss_of)].clone()
}
