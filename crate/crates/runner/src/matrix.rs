//! Case × controller matrix and its summary table.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Level;
use crate::experiment::{run_experiment, ExperimentResult};
use crate::presets::{case_config, case_spec, CaseSpec, ControllerKind, CASES};
use crate::{ExperimentConfig, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub case: u8,
    pub controller: ControllerKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

/// Matrix file: a list of `[[row]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    #[serde(default)]
    pub row: Vec<MatrixRow>,
}

impl MatrixFile {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let m: MatrixFile = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        if let Some(r) = m.row.iter().find(|r| case_spec(r.case).is_none()) {
            return Err(RunError::Config(format!("no preset for case {}", r.case)));
        }
        Ok(m)
    }

    /// Every case with every controller.
    pub fn full(seed: u64) -> Self {
        let row = CASES
            .iter()
            .flat_map(|c| ControllerKind::ALL.into_iter().map(move |k| MatrixRow { case: c.case, controller: k, seed }))
            .collect();
        Self { row }
    }
}

#[derive(Debug)]
pub struct RowOutcome {
    pub row: MatrixRow,
    pub result: Result<ExperimentResult, RunError>,
}

/// Run every row in parallel. A failing row is reported and the rest go on.
/// `adjust` may tweak each configuration before it runs.
pub fn run_matrix(rows: &[MatrixRow], adjust: &(dyn Fn(&mut ExperimentConfig) + Sync)) -> Vec<RowOutcome> {
    rows.par_iter()
        .map(|&row| {
            let spec = case_spec(row.case).expect("rows are validated against the presets");
            let mut cfg = case_config(&spec, row.controller, row.seed);
            adjust(&mut cfg);
            let result = run_experiment(&cfg);
            if let Err(e) = &result {
                log::error!("case {} {:?} failed: {e}", row.case, row.controller);
            }
            RowOutcome { row, result }
        })
        .collect()
}

fn level(l: Level) -> &'static str {
    match l {
        Level::Nominal => "Nom",
        Level::Extreme => "Ext",
    }
}

/// Header of the summary table.
pub fn table_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["case", "signal", "amplitude_pct", "voltage", "comm", "outdoor"].iter().map(|s| s.to_string()).collect();
    for metric in ["nrmse_pct", "score", "overload_s"] {
        for k in ControllerKind::ALL {
            h.push(format!("{metric}_{}", k.label().to_ascii_lowercase()));
        }
    }
    h
}

/// One line per case, one column per metric and controller. Failed or
/// missing cells are empty, as is the score for square-wave cases.
pub fn write_table<W: Write>(outcomes: &[RowOutcome], w: W) -> Result<(), RunError> {
    let mut by_case: BTreeMap<u8, BTreeMap<ControllerKind, &ExperimentResult>> = BTreeMap::new();
    for o in outcomes {
        let cell = by_case.entry(o.row.case).or_default();
        if let Ok(r) = &o.result {
            cell.insert(o.row.controller, r);
        }
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(table_header())?;
    for (case, cells) in by_case {
        let spec: CaseSpec = case_spec(case).expect("validated");
        let mut rec = vec![
            case.to_string(),
            if spec.signal == Level::Nominal { "RegD".into() } else { "Square".into() },
            format!("{:.0}", 100.0 * spec.amplitude_fraction),
            level(spec.voltage).into(),
            level(spec.comm).into(),
            level(spec.outdoor).into(),
        ];
        let cell = |k: ControllerKind, f: &dyn Fn(&ExperimentResult) -> Option<String>| {
            cells.get(&k).and_then(|r| f(r)).unwrap_or_default()
        };
        for k in ControllerKind::ALL {
            rec.push(cell(k, &|r| Some(format!("{:.2}", 100.0 * r.nrmse))));
        }
        for k in ControllerKind::ALL {
            rec.push(cell(k, &|r| (spec.signal == Level::Nominal).then(|| format!("{:.3}", r.composite_score))));
        }
        for k in ControllerKind::ALL {
            rec.push(cell(k, &|r| Some(format!("{:.0}", r.overload.max_consecutive_overload_s))));
        }
        csv.write_record(rec)?;
    }
    csv.flush()?;
    Ok(())
}
