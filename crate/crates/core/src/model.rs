//! Population models: states, parameters and per-agent transition rates
//! written as functions of the occupancy measure and the population size.

use std::collections::BTreeMap;
use std::fmt;

use crate::drift;
use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr, Var};

pub type StateId = usize;

/// Text of the built-in saturated-channel model. Also shipped as
/// `models/saturated_channel.pop`.
pub const SATURATED_CHANNEL: &str = "\
# Saturated shared channel: nodes wait (idle) or retransmit (backoff).
# A transmission by n nodes succeeds with probability 2^-n; the rates below
# are the binomial expectations of the per-slot outcomes.
states = idle, backoff
param p1 = 0.008
param p2 = 0.05
rate idle -> backoff : p1*(1 - pow(1 - p1/2, N*m[idle])*pow(1 - p2/2, N*m[backoff]))
rate backoff -> idle : p2*pow(1 - p1/2, N*m[idle])*pow(1 - p2/2, N*m[backoff])
limit idle -> backoff : p1
limit backoff -> idle : 0
";

const SUM_TOLERANCE: f64 = 1e-12;

/// A point of the probability simplex over the model states.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure(Vec<f64>);

impl OccupancyMeasure {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "occupancy entries must be finite and non-negative: {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("occupancy must sum to 1, got {sum}")));
        }
        Ok(OccupancyMeasure(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Integer agent counts per state; the lattice point `counts / N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CountVector {
    counts: Vec<u32>,
    size: u64,
}

impl CountVector {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        let size: u64 = counts.iter().map(|&c| c as u64).sum();
        if size == 0 {
            return Err(Error::InvalidArgument("population size must be positive".into()));
        }
        Ok(CountVector { counts, size })
    }

    /// Largest-remainder rounding of `n * m` to integer counts summing to `n`.
    pub fn from_occupancy(m: &OccupancyMeasure, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("population size must be positive".into()));
        }
        let scaled: Vec<f64> = m.as_slice().iter().map(|v| v * n as f64).collect();
        let mut counts: Vec<u32> = scaled.iter().map(|v| v.floor() as u32).collect();
        let assigned: u64 = counts.iter().map(|&c| c as u64).sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        // stable: ties go to the lower index
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
        });
        for &i in order.iter().take(n.saturating_sub(assigned) as usize) {
            counts[i] += 1;
        }
        CountVector::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn occupancy(&self) -> OccupancyMeasure {
        let n = self.size as f64;
        OccupancyMeasure(self.counts.iter().map(|&c| c as f64 / n).collect())
    }
}

/// One directed transition with its compiled rate.
#[derive(Debug, Clone)]
pub struct Transition {
    pub from: StateId,
    pub to: StateId,
    rate: CompiledExpr,
}

/// A validated population model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    states: Vec<String>,
    params: Vec<(String, f64)>,
    rates: BTreeMap<(StateId, StateId), Expr>,
    limit_rates: Option<BTreeMap<(StateId, StateId), Expr>>,
    transitions: Vec<Transition>,
    limit_transitions: Option<Vec<Transition>>,
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.params == other.params
            && self.rates == other.rates
            && self.limit_rates == other.limit_rates
    }
}

impl ModelSpec {
    /// Build a model from named parts. Rates absent from `rates` are zero.
    pub fn new(
        states: Vec<String>,
        params: Vec<(String, f64)>,
        rates: BTreeMap<(StateId, StateId), Expr>,
        limit_rates: Option<BTreeMap<(StateId, StateId), Expr>>,
    ) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InvalidModel("at least two states are required".into()));
        }
        for (i, s) in states.iter().enumerate() {
            if !is_identifier(s) {
                return Err(Error::InvalidModel(format!("`{s}` is not a valid state name")));
            }
            if states[..i].contains(s) {
                return Err(Error::InvalidModel(format!("duplicate state `{s}`")));
            }
        }
        for (i, (name, value)) in params.iter().enumerate() {
            if !is_identifier(name) || name == "N" {
                return Err(Error::InvalidModel(format!("`{name}` is not a valid parameter name")));
            }
            if params[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidModel(format!("duplicate parameter `{name}`")));
            }
            if !value.is_finite() {
                return Err(Error::InvalidModel(format!("parameter `{name}` is not finite")));
            }
        }

        let mut model = ModelSpec {
            states,
            params,
            rates,
            limit_rates,
            transitions: Vec::new(),
            limit_transitions: None,
        };
        model.transitions = model.compile_table(&model.rates, true)?;
        if let Some(limits) = &model.limit_rates {
            model.limit_transitions = Some(model.compile_table(limits, false)?);
        }
        Ok(model)
    }

    fn compile_table(&self, table: &BTreeMap<(StateId, StateId), Expr>, allow_size: bool) -> Result<Vec<Transition>> {
        let mut out = Vec::new();
        for (&(from, to), expr) in table {
            if from >= self.dim() || to >= self.dim() {
                return Err(Error::InvalidModel(format!("transition {from} -> {to} out of range")));
            }
            if from == to {
                return Err(Error::InvalidModel(format!(
                    "diagonal rate for state `{}`",
                    self.states[from]
                )));
            }
            self.check_free_vars(expr, allow_size)
                .map_err(|msg| Error::InvalidModel(format!("{} -> {}: {msg}", self.states[from], self.states[to])))?;
            if expr.is_zero_constant() {
                continue;
            }
            let rate = expr.compile(&|name| self.param(name), &self.states)?;
            out.push(Transition { from, to, rate });
        }
        Ok(out)
    }

    fn check_free_vars(&self, expr: &Expr, allow_size: bool) -> std::result::Result<(), String> {
        for var in expr.free_vars() {
            match &var {
                Var::Size if !allow_size => {
                    return Err("limit rates may not depend on N".into());
                }
                Var::Size => {}
                Var::Param(name) if self.param(name).is_none() => {
                    return Err(format!("undeclared parameter `{name}`"));
                }
                Var::Occupancy(state) if self.state_id(state).is_none() => {
                    return Err(format!("unknown state in `{var}`"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.states
    }

    pub fn state_id(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name)
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Rate expression for `from -> to`, if one was given.
    pub fn rate_expr(&self, from: StateId, to: StateId) -> Option<&Expr> {
        self.rates.get(&(from, to))
    }

    pub fn limit_rate_expr(&self, from: StateId, to: StateId) -> Option<&Expr> {
        self.limit_rates.as_ref()?.get(&(from, to))
    }

    pub fn has_limit_rates(&self) -> bool {
        self.limit_rates.is_some()
    }

    /// Transitions with a rate expression that is not identically zero.
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn limit_transitions(&self) -> Option<&[Transition]> {
        self.limit_transitions.as_deref()
    }

    fn bindings(&self, size: Option<f64>, m: &[f64]) -> crate::expr::Bindings {
        let mut b: crate::expr::Bindings = self.params.iter().map(|(n, v)| (Var::Param(n.clone()), *v)).collect();
        if let Some(size) = size {
            b.insert(Var::Size, size);
        }
        for (s, v) in self.states.iter().zip(m) {
            b.insert(Var::Occupancy(s.clone()), *v);
        }
        b
    }

    /// Evaluate a transition's rate at a (possibly off-simplex) point,
    /// checking it is finite and non-negative.
    pub fn eval_transition(&self, t: &Transition, size: f64, m: &[f64]) -> Result<f64> {
        let value = match t.rate.eval(size, m) {
            Ok(v) => v,
            Err(fault) => {
                // slow path for a message naming the offending sub-expression
                let expr = &self.rates[&(t.from, t.to)];
                expr.eval(&self.bindings(Some(size), m))?;
                return Err(Error::Domain {
                    expr: expr.to_string(),
                    reason: fault.to_string(),
                });
            }
        };
        self.check_rate(t, value, m)
    }

    pub fn eval_limit_transition(&self, t: &Transition, m: &[f64]) -> Result<f64> {
        let value = match t.rate.eval(f64::NAN, m) {
            Ok(v) => v,
            Err(fault) => {
                let expr = &self.limit_rates.as_ref().expect("limit table")[&(t.from, t.to)];
                expr.eval(&self.bindings(None, m))?;
                return Err(Error::Domain {
                    expr: expr.to_string(),
                    reason: fault.to_string(),
                });
            }
        };
        self.check_rate(t, value, m)
    }

    fn check_rate(&self, t: &Transition, value: f64, m: &[f64]) -> Result<f64> {
        if value.is_finite() && value >= 0.0 {
            Ok(value)
        } else {
            Err(Error::InvalidRate {
                from: self.states[t.from].clone(),
                to: self.states[t.to].clone(),
                m: m.to_vec(),
                value,
            })
        }
    }

    /// Q^(N)_{from,to}(m).
    pub fn rate(&self, n: u64, m: &[f64], from: StateId, to: StateId) -> Result<f64> {
        if from == to {
            return Err(Error::InvalidArgument("rate needs two distinct states".into()));
        }
        match self.transitions.iter().find(|t| t.from == from && t.to == to) {
            Some(t) => self.eval_transition(t, n as f64, m),
            None => Ok(0.0),
        }
    }

    /// Per-slot move probability `Q / D` at time resolution `d`.
    pub fn slot_probability(&self, n: u64, m: &[f64], from: StateId, to: StateId, d: f64) -> Result<f64> {
        if d.is_nan() || d < 1.0 {
            return Err(Error::InvalidArgument(format!("time resolution must be >= 1, got {d}")));
        }
        let eps = 1.0 / d;
        let mut total = 0.0;
        for t in self.transitions.iter().filter(|t| t.from == from) {
            total += eps * self.eval_transition(t, n as f64, m)?;
        }
        if total > 1.0 {
            return Err(Error::SlotOverflow {
                state: self.states[from].clone(),
                total,
            });
        }
        Ok((eps * self.rate(n, m, from, to)?).clamp(0.0, 1.0))
    }

    pub fn parse_occupancy(&self, text: &str) -> Result<OccupancyMeasure> {
        let values = parse_f64_list(text)?;
        if values.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} occupancy values, got {}",
                self.dim(),
                values.len()
            )));
        }
        OccupancyMeasure::new(values)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "states = {}", self.states.join(", "))?;
        for (name, value) in &self.params {
            writeln!(f, "param {name} = {value}")?;
        }
        for (&(a, b), e) in &self.rates {
            writeln!(f, "rate {} -> {} : {e}", self.states[a], self.states[b])?;
        }
        if let Some(limits) = &self.limit_rates {
            for (&(a, b), e) in limits {
                writeln!(f, "limit {} -> {} : {e}", self.states[a], self.states[b])?;
            }
        }
        Ok(())
    }
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("`{}` is not a number", s.trim())))
        })
        .collect()
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse and validate a model document.
pub fn load_model(document: &str) -> Result<ModelSpec> {
    let file_err = |line: usize, message: String| Error::ModelFile { line, message };

    let mut states: Option<(usize, Vec<String>)> = None;
    let mut params = Vec::new();
    // (line, is_limit, from, to, expr)
    let mut rate_lines = Vec::new();

    for (idx, raw) in document.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(after) = line.strip_prefix("states") {
            if after.starts_with(|c: char| c == '=' || c.is_whitespace()) {
                let list = after
                    .trim_start()
                    .strip_prefix('=')
                    .ok_or_else(|| file_err(line_no, "expected `states = a, b, ...`".into()))?;
                if states.is_some() {
                    return Err(file_err(line_no, "states declared twice".into()));
                }
                let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
                states = Some((line_no, names));
                continue;
            }
        }
        let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match keyword {
            "param" => {
                let (name, value) = rest
                    .split_once('=')
                    .ok_or_else(|| file_err(line_no, "expected `param name = value`".into()))?;
                let value: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| file_err(line_no, format!("`{}` is not a number", value.trim())))?;
                params.push((line_no, name.trim().to_string(), value));
            }
            "rate" | "limit" => {
                let (header, body) = rest
                    .split_once(':')
                    .ok_or_else(|| file_err(line_no, format!("expected `{keyword} a -> b : <expr>`")))?;
                let (from, to) = header
                    .split_once("->")
                    .ok_or_else(|| file_err(line_no, "expected `a -> b` before `:`".into()))?;
                let expr = Expr::parse(body).map_err(|e| file_err(line_no, e.to_string()))?;
                rate_lines.push((
                    line_no,
                    keyword == "limit",
                    from.trim().to_string(),
                    to.trim().to_string(),
                    expr,
                ));
            }
            other => return Err(file_err(line_no, format!("unknown directive `{other}`"))),
        }
    }

    let (states_line, states) = states.ok_or_else(|| Error::InvalidModel("missing `states = ...` line".into()))?;
    let state_lookup = |name: &str| states.iter().position(|s| s == name);

    let mut seen_params: Vec<(String, f64)> = Vec::new();
    for (line_no, name, value) in params {
        if seen_params.iter().any(|(n, _)| *n == name) {
            return Err(file_err(line_no, format!("duplicate parameter `{name}`")));
        }
        if !is_identifier(&name) || name == "N" {
            return Err(file_err(line_no, format!("`{name}` is not a valid parameter name")));
        }
        seen_params.push((name, value));
    }

    let mut rates = BTreeMap::new();
    let mut limits: Option<BTreeMap<_, _>> = None;
    for (line_no, is_limit, from, to, expr) in rate_lines {
        let a = state_lookup(&from).ok_or_else(|| file_err(line_no, format!("unknown state `{from}`")))?;
        let b = state_lookup(&to).ok_or_else(|| file_err(line_no, format!("unknown state `{to}`")))?;
        if a == b {
            return Err(file_err(
                line_no,
                format!("diagonal rate `{from} -> {to}` is not allowed"),
            ));
        }
        for var in expr.free_vars() {
            let problem = match &var {
                Var::Size if is_limit => Some("limit rates may not depend on N".to_string()),
                Var::Param(p) if !seen_params.iter().any(|(n, _)| n == p) => {
                    Some(format!("undeclared parameter `{p}`"))
                }
                Var::Occupancy(s) if state_lookup(s).is_none() => Some(format!("unknown state in `{var}`")),
                _ => None,
            };
            if let Some(message) = problem {
                return Err(file_err(line_no, message));
            }
        }
        let table = if is_limit {
            limits.get_or_insert_with(BTreeMap::new)
        } else {
            &mut rates
        };
        if table.insert((a, b), expr).is_some() {
            return Err(file_err(
                line_no,
                format!(
                    "duplicate {} for `{from} -> {to}`",
                    if is_limit { "limit" } else { "rate" }
                ),
            ));
        }
    }

    ModelSpec::new(states, seen_params, rates, limits).map_err(|e| match e {
        Error::InvalidModel(message) => file_err(states_line, message),
        other => other,
    })
}

/// The two-state saturated-channel model with `p1 = 0.008`, `p2 = 0.05`.
pub fn builtin_example() -> ModelSpec {
    load_model(SATURATED_CHANNEL).expect("built-in model is valid")
}

/// Deterministic low-discrepancy points on the simplex.
///
/// Uses the additive recurrence `u_k = frac(offset + k * alpha)` in `dim`
/// dimensions (alpha from the generalised golden ratio) and maps each
/// point to the simplex through normalised exponential spacings.
#[derive(Debug, Clone)]
pub struct SimplexSequence {
    alpha: Vec<f64>,
    offset: Vec<f64>,
    index: u64,
}

impl SimplexSequence {
    pub fn new(dim: usize, seed: u64) -> Self {
        // root of x^(d+1) = x + 1
        let mut phi = 2.0f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha = (1..=dim).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
        let mut state = seed;
        let offset = (0..dim)
            .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64)
            .collect();
        SimplexSequence {
            alpha,
            offset,
            index: 1,
        }
    }
}

impl Iterator for SimplexSequence {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let k = self.index as f64;
        self.index += 1;
        let spacings: Vec<f64> = self
            .alpha
            .iter()
            .zip(&self.offset)
            .map(|(a, o)| {
                let u = (o + k * a).fract();
                -(u.max(1e-300)).ln()
            })
            .collect();
        let total: f64 = spacings.iter().sum();
        Some(spacings.iter().map(|s| s / total).collect())
    }
}

pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n: u64,
    pub pairs: usize,
    /// Every sampled rate was finite and non-negative.
    pub non_negative: bool,
    /// Largest sampled |F(m) - F(m')| / |m - m'|; a lower bound on the
    /// Lipschitz constant of the drift.
    pub lipschitz_estimate: f64,
    /// Largest sampled |F(m)|.
    pub bound_estimate: f64,
    pub max_rate: f64,
    pub warnings: Vec<String>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sample `pairs` pairs of simplex points and estimate the drift's
/// Lipschitz constant and bound at population size `n`.
///
/// Each pair contributes a distant comparison and a nearby one (the second
/// point pulled 0.1% of the way from the first), so steep local slopes are
/// not missed.
pub fn validate(model: &ModelSpec, n: u64, pairs: usize, seed: u64) -> Result<ValidationReport> {
    if pairs < 2 {
        return Err(Error::InvalidArgument("validation needs at least two samples".into()));
    }
    let mut seq = SimplexSequence::new(model.dim(), seed);
    let mut lipschitz: f64 = 0.0;
    let mut bound: f64 = 0.0;
    let mut max_rate: f64 = 0.0;
    let mut check_point = |m: &[f64]| -> Result<Vec<f64>> {
        for t in model.transitions() {
            max_rate = max_rate.max(model.eval_transition(t, n as f64, m)?);
        }
        drift::drift(model, n, m)
    };
    let zero = vec![0.0; model.dim()];
    for _ in 0..pairs {
        let a = seq.next().expect("infinite sequence");
        let b = seq.next().expect("infinite sequence");
        let near: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + 1e-3 * (y - x)).collect();
        let fa = check_point(&a)?;
        let fb = check_point(&b)?;
        let fnear = check_point(&near)?;
        bound = bound.max(euclid(&fa, &zero)).max(euclid(&fb, &zero));
        for (m2, f2) in [(&b, &fb), (&near, &fnear)] {
            let d = euclid(&a, m2);
            if d > 0.0 {
                lipschitz = lipschitz.max(euclid(&fa, f2) / d);
            }
        }
    }
    let mut warnings = Vec::new();
    if max_rate > 1.0 {
        warnings.push(format!(
            "sampled rate {max_rate} exceeds 1; rates above one are unusual for slot-derived models"
        ));
    }
    Ok(ValidationReport {
        n,
        pairs,
        non_negative: true,
        lipschitz_estimate: lipschitz,
        bound_estimate: bound,
        max_rate,
        warnings,
    })
}
