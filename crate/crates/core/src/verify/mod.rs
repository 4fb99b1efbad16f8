//! Seeded property checks covering every module invariant, the
//! finite-difference battery and the acceptance experiments.

pub mod acceptance;
mod fixture;
pub mod gradients;
pub mod oracles;
mod properties;

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{HclError, Result};

pub use acceptance::{run_acceptance, run_acceptance_with, AcceptanceConfig, AcceptanceReport, CriterionResult};
pub use fixture::{Fixture, Profile};
pub use gradients::{gradient_battery, GradientCase};

/// Outcome of one named, seeded check.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Error text when the check could not run.
    pub error: Option<String>,
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{tag} {:<36} measured {:<12.4e} tolerance {:<10.1e} seed {}",
            self.name, self.measured, self.tolerance, self.seed
        )?;
        if let Some(e) = &self.error {
            write!(f, " error: {e}")?;
        }
        if !self.passed {
            write!(f, "\n     reproduce: hcl verify --filter {}", self.name)?;
        }
        Ok(())
    }
}

/// Measured value against a tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Check {
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(measured: f64, tolerance: f64) -> Check {
        Check {
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }

    /// Passes when `measured < bound`.
    pub fn below(measured: f64, bound: f64) -> Check {
        Check {
            measured,
            tolerance: bound,
            passed: measured < bound,
        }
    }

    /// Boolean outcome with a count of violations as the measurement.
    pub fn violations(count: usize) -> Check {
        Check {
            measured: count as f64,
            tolerance: 0.0,
            passed: count == 0,
        }
    }
}

pub type CheckFn = fn(&mut Fixture, u64) -> Result<Check>;

pub struct Property {
    pub name: &'static str,
    pub module: &'static str,
    pub statement: &'static str,
    pub seed: u64,
    /// Needs the trained fixture model.
    pub needs_training: bool,
    pub check: CheckFn,
}

pub fn registry() -> Vec<Property> {
    properties::all()
}

/// Runs every registered property whose name contains `filter`, training
/// the fixture model on demand.
pub fn run_property_suite(filter: Option<&str>) -> Vec<PropertyResult> {
    run_property_suite_with(filter, &mut Fixture::new(Profile::compact()))
}

pub fn run_property_suite_with(filter: Option<&str>, fixture: &mut Fixture) -> Vec<PropertyResult> {
    registry()
        .into_iter()
        .filter(|p| filter.is_none_or(|f| p.name.contains(f)))
        .map(|p| run_property(&p, fixture))
        .collect()
}

pub fn run_property(p: &Property, fixture: &mut Fixture) -> PropertyResult {
    match (p.check)(fixture, p.seed) {
        Ok(c) => PropertyResult {
            name: p.name,
            passed: c.passed,
            measured: c.measured,
            tolerance: c.tolerance,
            seed: p.seed,
            error: None,
        },
        Err(e) => PropertyResult {
            name: p.name,
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            seed: p.seed,
            error: Some(e.to_string()),
        },
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| HclError::io(path, e))
}

/// Writes `properties.{txt,csv}` and, when given, `acceptance.{txt,csv}`
/// under `dir`.
pub fn write_reports(dir: &Path, properties: &[PropertyResult], acceptance: Option<&AcceptanceReport>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HclError::io(dir, e))?;
    let txt = dir.join("properties.txt");
    let mut f = create(&txt)?;
    for r in properties {
        writeln!(f, "{r}").map_err(|e| HclError::io(&txt, e))?;
    }
    let mut w = csv::Writer::from_writer(create(&dir.join("properties.csv"))?);
    w.write_record(["property", "passed", "measured", "tolerance", "seed", "error"])?;
    for r in properties {
        w.write_record([
            r.name,
            &r.passed.to_string(),
            &format!("{:e}", r.measured),
            &format!("{:e}", r.tolerance),
            &r.seed.to_string(),
            r.error.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush().map_err(|e| HclError::io(dir, e))?;

    if let Some(report) = acceptance {
        let txt = dir.join("acceptance.txt");
        write!(create(&txt)?, "{report}").map_err(|e| HclError::io(&txt, e))?;
        let mut w = csv::Writer::from_writer(create(&dir.join("acceptance.csv"))?);
        w.write_record(["id", "criterion", "passed", "measured", "threshold", "seconds"])?;
        for c in &report.criteria {
            w.write_record([
                &c.id.to_string(),
                c.name,
                &c.passed.to_string(),
                &c.measured,
                &c.threshold,
                &format!("{:.1}", c.elapsed.as_secs_f64()),
            ])?;
        }
        w.flush().map_err(|e| HclError::io(dir, e))?;
    }
    Ok(())
}
