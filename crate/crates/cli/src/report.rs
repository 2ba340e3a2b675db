//! Pass/fail checks and the `summary.json` written after each command.

use std::collections::BTreeMap;
use std::path::Path;

use kinetic_core::Result;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub limit: f64,
}

impl Check {
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        format!("{verdict} {}: {:.6e} {} {:.6e}", self.name, self.value, self.relation, self.limit)
    }
}

/// Everything a command reports. Holds no timings or absolute paths, so a
/// rerun with the same inputs and seed serializes to the same bytes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub command: String,
    pub scenario: String,
    pub metadata: BTreeMap<String, Value>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    /// Set when the command stopped on an invariant failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pass: bool,
}

impl Report {
    pub fn new(command: &str, scenario: &str) -> Self {
        Report { command: command.into(), scenario: scenario.into(), pass: true, ..Default::default() }
    }

    pub fn meta(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.metadata.insert(key.into(), v);
    }

    pub fn at_most(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.push(Check { name: name.into(), pass: value <= limit, value, relation: "<=", limit });
    }

    pub fn at_least(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.push(Check { name: name.into(), pass: value >= limit, value, relation: ">=", limit });
    }

    fn push(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn artifact(&mut self, name: &str) {
        self.artifacts.push(name.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable") + "\n"
    }

    pub fn write(&mut self, dir: &Path) -> Result<()> {
        self.artifact("summary.json");
        std::fs::write(dir.join("summary.json"), self.to_json())?;
        Ok(())
    }

    pub fn print(&self) {
        for w in &self.warnings {
            println!("WARN {w}");
        }
        for n in &self.notes {
            println!("NOTE {n}");
        }
        for c in &self.checks {
            println!("{}", c.line());
        }
        println!("{} {} {}", if self.pass { "PASS" } else { "FAIL" }, self.command, self.scenario);
    }
}
