//! Structural hypotheses checked before any experiment runs.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::maps::IntervalSet;
use crate::open::HoleSpec;
use crate::transfer::Grid;

/// Upper bound on the number of connected components of any hole.
pub const MAX_HOLE_COMPONENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub hypothesis: String,
    /// The offending (or checked) object.
    pub object: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// The first failure as an error.
    pub fn into_result(self) -> Result<Self> {
        if let Some(c) = self.failures().next() {
            return Err(Error::Validation(format!("{} ({}): {}", c.hypothesis, c.object, c.detail)));
        }
        Ok(self)
    }

    fn push(&mut self, hypothesis: &str, object: String, passed: bool, detail: String) {
        self.checks.push(HypothesisCheck {
            hypothesis: hypothesis.into(),
            object,
            passed,
            detail,
        });
    }
}

/// Every ε at which the holes are evaluated.
fn eps_values(config: &ExperimentConfig) -> Vec<f64> {
    let mut v: Vec<f64> = config.eps.into_iter().collect();
    if let Some(s) = &config.schedule {
        v.extend(s.values());
    }
    if v.is_empty() {
        v.push(0.0);
    }
    v
}

/// Check the standing assumptions of a configuration: a full branch outside
/// every hole, expansion, finitely many hole components, nesting of the
/// ε-family, and (as warnings) alignment of maps and holes with the grid.
pub fn validate(config: &ExperimentConfig) -> Result<ValidationReport> {
    let maps = config.fiber_maps()?;
    let driving = config.driving_system()?;
    let grid = Grid::new(config.grid)?;
    let family = config.hole_family();
    if family.per_symbol.len() != maps.len() {
        return Err(Error::InvalidConfig(format!(
            "{} hole families for {} fiber maps",
            family.per_symbol.len(),
            maps.len()
        )));
    }
    let mut report = ValidationReport::default();
    let eps = eps_values(config);

    for (s, map) in maps.iter().enumerate() {
        let obj = format!("map {s} ({:?})", map.preset());
        let e = map.min_expansion();
        report.push("expanding", obj.clone(), e > 1.0, format!("min |slope| = {e}"));
        if !(grid.aligned_with_map(map) && map.is_markov_on_grid(grid.cells())) {
            report
                .warnings
                .push(format!("approximate-grid: {obj} is not Markov on the {}-cell grid", grid.cells()));
        }
    }

    for (s, (map, spec)) in maps.iter().zip(&family.per_symbol).enumerate() {
        if matches!(spec, HoleSpec::Ball { .. }) && config.eps.is_none() && config.schedule.is_none() {
            report.push(
                "hole evaluable",
                format!("hole family {s}"),
                false,
                "ball family without `eps` or `schedule`".into(),
            );
            continue;
        }
        let mut worst_full: Option<(f64, IntervalSet)> = None;
        let mut components = 0;
        let mut unaligned = false;
        for &x in &eps {
            let h = spec.at(x);
            components = components.max(h.len());
            unaligned |= !grid.aligned_with_set(&h);
            if map.full_branches_outside(&h).is_empty() && worst_full.is_none() {
                worst_full = Some((x, h));
            }
        }
        match worst_full {
            Some((x, h)) => report.push(
                "full branch outside hole",
                format!("map {s}, hole {h} at eps {x}"),
                false,
                "every full branch meets the hole".into(),
            ),
            None => report.push("full branch outside hole", format!("map {s}"), true, String::new()),
        }
        report.push(
            "finite hole unions",
            format!("hole family {s}"),
            components <= MAX_HOLE_COMPONENTS,
            format!("at most {components} components"),
        );
        if unaligned {
            report
                .warnings
                .push(format!("approximate-grid: hole family {s} is not aligned with the grid (fractional masks)"));
        }
    }

    if let Some(s) = &config.schedule {
        let values = s.values();
        let ok = values.windows(2).all(|w| w[1] < w[0]);
        report.push(
            "decreasing schedule",
            "schedule".into(),
            ok,
            format!("{} values", values.len()),
        );
        let nested = family.check_nesting(&values);
        report.push(
            "nested holes",
            "hole family".into(),
            nested.is_ok(),
            nested.err().map(|e| e.to_string()).unwrap_or_default(),
        );
    }

    if driving.symbol_count() < maps.len() {
        report
            .warnings
            .push(format!("{} maps given, driving uses {}", maps.len(), driving.symbol_count()));
    }

    if let Some(evt) = &config.evt {
        let ok = evt.observation.len() == maps.len() && evt.t.len() == maps.len();
        report.push(
            "one observation and scaling per symbol",
            "evt".into(),
            ok,
            format!("{} observations, {} scalings", evt.observation.len(), evt.t.len()),
        );
        for (s, o) in evt.observation.iter().enumerate() {
            let v = o.validate();
            report.push(
                "observation well formed",
                format!("observation {s}"),
                v.is_ok(),
                v.err().map(|e| e.to_string()).unwrap_or_default(),
            );
        }
    }
    Ok(report)
}
