//! Decision server: a table of discrete candidate conditions, random or
//! Bayesian-optimization proposals, result ingestion and a best-so-far history.
//!
//! Objectives are maximized. Callers negate minimization targets.

use std::fmt::Write as _;
use std::sync::Arc;

use labmcp_protocol::{
    ContentBlock, InputSchema, PropertySchema, ServerError, ServerIdentity, ToolCallResult,
    ToolDescriptor, ToolServer,
};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::gp::{argmax, GaussianProcess, GpError};
use crate::{number_arg, svg};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub params: Vec<f64>,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidatesTable {
    pub parameter_names: Vec<String>,
    pub objective_name: String,
    pub rows: Vec<Candidate>,
    proposal: Option<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecisionError {
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("no candidates loaded")]
    NotLoaded,
    #[error("search space exhausted")]
    Exhausted,
    #[error("no observations: Bayesian optimization needs at least one measured row")]
    NoObservations,
    #[error("unknown selection method {0:?}; expected RE or BO")]
    UnknownMethod(String),
    #[error("no pending proposal")]
    NoProposal,
    #[error("objective value {0} is not finite")]
    NonFinite(f64),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("no history yet")]
    EmptyHistory,
    #[error("model fit failed: {0}")]
    Model(#[from] GpError),
}

fn csv_error(line: u64, message: impl Into<String>) -> DecisionError {
    DecisionError::Csv {
        line,
        message: message.into(),
    }
}

impl CandidatesTable {
    /// Parses a CSV whose header lists the parameter names followed by one
    /// objective column. Empty objective cells mark unmeasured rows.
    pub fn parse(csv_text: &str) -> Result<Self, DecisionError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(csv_text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            None => return Err(csv_error(1, "empty table")),
            Some(Err(e)) => return Err(csv_error(1, e.to_string())),
            Some(Ok(h)) => h,
        };
        if header.len() < 2 {
            return Err(csv_error(
                1,
                "header needs at least one parameter column and an objective column",
            ));
        }
        let names: Vec<String> = header.iter().map(str::to_owned).collect();
        if let Some(i) = names.iter().position(String::is_empty) {
            return Err(csv_error(1, format!("column {} has an empty name", i + 1)));
        }
        let (objective_name, parameter_names) = names.split_last().expect("len checked");
        let width = names.len();

        let mut rows = Vec::new();
        for record in records {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, csv::Position::line);
                csv_error(line, e.to_string())
            })?;
            let line = record.position().map_or(0, csv::Position::line);
            if record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() != width {
                return Err(csv_error(
                    line,
                    format!("expected {width} cells, found {}", record.len()),
                ));
            }
            let mut params = Vec::with_capacity(width - 1);
            for (cell, name) in record.iter().zip(parameter_names) {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| csv_error(line, format!("{name}: {cell:?} is not a number")))?;
                params.push(v);
            }
            let cell = &record[width - 1];
            let objective = if cell.is_empty() {
                None
            } else {
                Some(
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| {
                            csv_error(line, format!("objective {cell:?} is not a number"))
                        })?,
                )
            };
            rows.push(Candidate { params, objective });
        }
        if rows.len() < 2 {
            return Err(csv_error(1, "table needs at least two data rows"));
        }
        Ok(Self {
            parameter_names: parameter_names.to_vec(),
            objective_name: objective_name.clone(),
            rows,
            proposal: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn measured_count(&self) -> usize {
        self.rows.iter().filter(|r| r.objective.is_some()).count()
    }

    pub fn unmeasured(&self) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|i| self.rows[*i].objective.is_none())
            .collect()
    }

    pub fn proposal(&self) -> Option<usize> {
        self.proposal
    }

    pub fn summary(&self) -> String {
        format!(
            "{} candidates, {} parameters, {} measured",
            self.rows.len(),
            self.parameter_names.len(),
            self.measured_count()
        )
    }

    /// `name=value` lines for one row.
    pub fn describe_row(&self, row: usize) -> String {
        self.parameter_names
            .iter()
            .zip(&self.rows[row].params)
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{},{}",
            self.parameter_names.join(","),
            self.objective_name
        );
        for row in &self.rows {
            let cells: Vec<String> = row.params.iter().map(f64::to_string).collect();
            let obj = row.objective.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{obj}", cells.join(","));
        }
        out
    }
}

/// Every (red, yellow, blue) percentage triple on a 5% grid that sums to 100.
pub fn grid_rows() -> Vec<[u32; 3]> {
    let mut rows = Vec::new();
    for red in (0..=100).step_by(5) {
        for yellow in (0..=100 - red).step_by(5) {
            rows.push([red, yellow, 100 - red - yellow]);
        }
    }
    rows
}

/// Candidate CSV for the three-dye mixing grid (231 rows).
pub fn gen_grid() -> String {
    let mut out = String::from("red,yellow,blue,objective\n");
    for [r, y, b] in grid_rows() {
        let _ = writeln!(out, "{r},{y},{b},");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SelectionMethod {
    /// Uniform over unmeasured rows.
    Random,
    /// Thompson sampling from a GP posterior.
    Bayesian,
}

impl std::str::FromStr for SelectionMethod {
    type Err = DecisionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RE" | "RANDOM" => Ok(SelectionMethod::Random),
            "BO" | "PHYSBO" | "BAYES" => Ok(SelectionMethod::Bayesian),
            _ => Err(DecisionError::UnknownMethod(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub cycle: usize,
    pub row: usize,
    pub objective: f64,
    pub best: f64,
}

#[derive(Debug, Default)]
pub struct DecisionState {
    table: Option<CandidatesTable>,
    history: Vec<HistoryEntry>,
}

impl DecisionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn table(&self) -> Option<&CandidatesTable> {
        self.table.as_ref()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Replaces the table; history restarts.
    pub fn load(&mut self, csv_text: &str) -> Result<String, DecisionError> {
        let table = CandidatesTable::parse(csv_text)?;
        let summary = table.summary();
        self.table = Some(table);
        self.history.clear();
        Ok(summary)
    }

    fn table_mut(&mut self) -> Result<&mut CandidatesTable, DecisionError> {
        self.table.as_mut().ok_or(DecisionError::NotLoaded)
    }

    pub fn select(&mut self, method: SelectionMethod, seed: u64) -> Result<usize, DecisionError> {
        let table = self.table_mut()?;
        let open = table.unmeasured();
        if open.is_empty() {
            return Err(DecisionError::Exhausted);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row = match method {
            SelectionMethod::Random => open[rng.random_range(0..open.len())],
            SelectionMethod::Bayesian => {
                let (points, obs): (Vec<Vec<f64>>, Vec<f64>) = table
                    .rows
                    .iter()
                    .filter_map(|r| r.objective.map(|o| (r.params.clone(), o)))
                    .unzip();
                if points.is_empty() {
                    return Err(DecisionError::NoObservations);
                }
                let all: Vec<Vec<f64>> = table.rows.iter().map(|r| r.params.clone()).collect();
                let gp = GaussianProcess::fit(&all, &points, &obs)?;
                let query: Vec<Vec<f64>> = open.iter().map(|i| all[*i].clone()).collect();
                let draw = gp.sample(&query, &mut rng);
                open[argmax(&draw).expect("open rows exist")]
            }
        };
        table.proposal = Some(row);
        Ok(row)
    }

    pub fn selected_values(&self) -> Result<String, DecisionError> {
        let table = self.table.as_ref().ok_or(DecisionError::NotLoaded)?;
        let row = table.proposal.ok_or(DecisionError::NoProposal)?;
        Ok(table.describe_row(row))
    }

    pub fn selected_value(&self, name: &str) -> Result<f64, DecisionError> {
        let table = self.table.as_ref().ok_or(DecisionError::NotLoaded)?;
        let row = table.proposal.ok_or(DecisionError::NoProposal)?;
        let col = table
            .parameter_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DecisionError::UnknownParameter(name.to_owned()))?;
        Ok(table.rows[row].params[col])
    }

    pub fn update(&mut self, objective: f64) -> Result<&HistoryEntry, DecisionError> {
        if !objective.is_finite() {
            return Err(DecisionError::NonFinite(objective));
        }
        let table = self.table_mut()?;
        let row = table.proposal.take().ok_or(DecisionError::NoProposal)?;
        table.rows[row].objective = Some(objective);
        let best = self
            .history
            .last()
            .map_or(objective, |h| h.best.max(objective));
        self.history.push(HistoryEntry {
            cycle: self.history.len() + 1,
            row,
            objective,
            best,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from("cycle,row,objective,best\n");
        for h in &self.history {
            let _ = writeln!(out, "{},{},{},{}", h.cycle, h.row, h.objective, h.best);
        }
        out
    }

    pub fn history_svg(&self) -> Result<String, DecisionError> {
        if self.history.is_empty() {
            return Err(DecisionError::EmptyHistory);
        }
        let best: Vec<f64> = self.history.iter().map(|h| h.best).collect();
        Ok(svg::line_plot("Best objective per cycle", "best objective", &best))
    }
}

fn reply(result: Result<String, DecisionError>) -> ToolCallResult {
    match result {
        Ok(text) => ToolCallResult::text(text),
        Err(e) => ToolCallResult::error(e.to_string()),
    }
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    vec![
        ToolDescriptor::new(
            "load_candidates",
            "Replace the candidates table with CSV text (parameter columns, then an objective column)",
            InputSchema::new().property("csv_text", PropertySchema::string(), true),
        ),
        ToolDescriptor::new(
            "gen_grid",
            "CSV of all red/yellow/blue percentages in 5% steps summing to 100",
            InputSchema::new(),
        ),
        ToolDescriptor::new(
            "selection",
            "Propose the next candidate (method RE: random exploration, BO: Bayesian optimization)",
            InputSchema::new()
                .property("method", PropertySchema::string().describe("RE or BO"), true)
                .property(
                    "seed",
                    PropertySchema::number().describe("Random seed").with_default(0.into()),
                    false,
                ),
        ),
        ToolDescriptor::new(
            "get_selected_values",
            "Parameter names and values of the pending proposal",
            InputSchema::new(),
        ),
        ToolDescriptor::new(
            "get_selected_value",
            "One parameter of the pending proposal",
            InputSchema::new().property("name", PropertySchema::string(), true),
        ),
        ToolDescriptor::new(
            "update",
            "Record the objective value measured for the pending proposal",
            InputSchema::new().property("objective_value", PropertySchema::number(), true),
        ),
        ToolDescriptor::new(
            "history_plot",
            "Plot of the best objective found at each cycle",
            InputSchema::new(),
        ),
        ToolDescriptor::new(
            "history_csv",
            "Cycle history as CSV",
            InputSchema::new(),
        ),
    ]
}

fn seed_arg(args: &serde_json::Map<String, serde_json::Value>) -> u64 {
    args.get("seed")
        .and_then(serde_json::Value::as_f64)
        .map_or(0, |s| s.abs().trunc() as u64)
}

pub fn server(initial: DecisionState) -> Result<(ToolServer, Arc<Mutex<DecisionState>>), ServerError> {
    let state = Arc::new(Mutex::new(initial));
    let mut server = ToolServer::new(ServerIdentity::new("nimo", env!("CARGO_PKG_VERSION")))?;
    let mut descs = descriptors().into_iter();
    let mut next = || descs.next().expect("descriptor list matches handlers");

    let s = state.clone();
    server = server.with_tool(next(), move |args| {
        reply(s.lock().load(crate::string_arg(args, "csv_text")))
    })?;

    server = server.with_tool(next(), |_| ToolCallResult::text(gen_grid()))?;

    let s = state.clone();
    server = server.with_tool(next(), move |args| {
        let result = crate::string_arg(args, "method")
            .parse::<SelectionMethod>()
            .and_then(|m| {
                let mut st = s.lock();
                st.select(m, seed_arg(args))?;
                st.selected_values()
            });
        reply(result)
    })?;

    let s = state.clone();
    server = server.with_tool(next(), move |_| reply(s.lock().selected_values()))?;

    let s = state.clone();
    server = server.with_tool(next(), move |args| {
        let name = crate::string_arg(args, "name");
        reply(s.lock().selected_value(name).map(|v| format!("{name} = {v}")))
    })?;

    let s = state.clone();
    server = server.with_tool(next(), move |args| {
        let mut st = s.lock();
        let result = st.update(number_arg(args, "objective_value")).map(|h| {
            format!(
                "cycle {}: row {} objective {} (best {})",
                h.cycle, h.row, h.objective, h.best
            )
        });
        let result = result.map(|text| {
            let measured = st.table().map_or(0, CandidatesTable::measured_count);
            format!("{text}; {measured} measured")
        });
        reply(result)
    })?;

    let s = state.clone();
    server = server.with_tool(next(), move |_| match s.lock().history_svg() {
        Ok(svg) => ToolCallResult::text("best objective per cycle").with(ContentBlock::svg(&svg)),
        Err(e) => ToolCallResult::error(e.to_string()),
    })?;

    let s = state.clone();
    server = server.with_tool(next(), move |_| {
        let st = s.lock();
        if st.history().is_empty() {
            ToolCallResult::error(DecisionError::EmptyHistory.to_string())
        } else {
            ToolCallResult::text(st.history_csv())
        }
    })?;

    Ok((server, state))
}
