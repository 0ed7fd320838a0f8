//! Result files. Every file is written to a temporary sibling and renamed
//! into place, and carries the tool version, config hash and master seed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::kinetics::{defect_identity, Component, DefectTestFn, LevelMeasure, KINETIC_TERMS};
use crate::model::{audit_assumptions, AuditInputs, AuditReport, SampleGrid};
use crate::solver::{EnsembleStats, Scenario, TrajectoryRecord, ENERGY_FACTORS, ENERGY_TERMS, SERIES_COLUMNS};
use crate::verify::{CheckResult, EpsilonStudyReport, KineticLevel};

pub const TOOL: &str = "sim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
}

impl Provenance {
    pub fn new(config_hash: &str, master_seed: u64) -> Self {
        Self { tool: TOOL.into(), version: VERSION.into(), config_hash: config_hash.into(), master_seed }
    }

    pub fn of(sc: &Scenario) -> Self {
        Self::new(&sc.config_hash, sc.master_seed)
    }

    pub fn comment(&self) -> String {
        format!(
            "# tool={} version={} config_hash={} master_seed={}\n",
            self.tool, self.version, self.config_hash, self.master_seed
        )
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so that readers never see a partial file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// CSV body with a provenance comment line ahead of the header row.
fn csv_text<R, I>(prov: &Provenance, header: &[&str], rows: R) -> String
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    format!("{}{}", prov.comment(), body)
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn trajectory_csv(prov: &Provenance, rec: &TrajectoryRecord) -> String {
    csv_text(
        prov,
        &SERIES_COLUMNS[..6],
        rec.series.iter().map(|p| p.as_array()[..6].iter().map(|v| num(*v)).collect::<Vec<_>>()),
    )
}

pub fn snapshots_csv(prov: &Provenance, sc: &Scenario, rec: &TrajectoryRecord) -> String {
    let rows = rec.snapshots.iter().flat_map(|s| {
        (0..sc.mesh.n()).map(move |i| vec![num(s.t), num(sc.mesh.center(i)), num(s.u[i]), num(s.psi[i])])
    });
    csv_text(prov, &["t", "x", "u", "psi"], rows)
}

/// `m`, `λ` and `q = m + λ` per (t-bin, ξ-bin), summed over cells. The
/// overflow bin is written with `xi_hi = inf`.
pub fn measures_csv(prov: &Provenance, measure: &LevelMeasure) -> String {
    let levels = measure.levels();
    let nb = levels.nbins();
    let m = measure.time_level_table(Component::M);
    let l = measure.time_level_table(Component::Lambda);
    let mut rows = Vec::new();
    for (name, table) in [("m", &m), ("lambda", &l)] {
        for (tb, row) in table.iter().enumerate() {
            for (xb, mass) in row.iter().enumerate() {
                let (lo, hi) = if xb == nb { (levels.xi_max(), f64::INFINITY) } else { (levels.edge(xb), levels.edge(xb + 1)) };
                rows.push(vec![name.to_string(), tb.to_string(), num(lo), num(hi), num(*mass)]);
            }
        }
    }
    csv_text(prov, &["component", "t_bin", "xi_lo", "xi_hi", "mass"], rows)
}

pub fn nu_csv(prov: &Provenance, measure: &LevelMeasure) -> String {
    let rows = measure.nu_table().into_iter().enumerate().flat_map(|(tb, row)| {
        row.into_iter().enumerate().map(move |(c, mass)| vec![tb.to_string(), c.to_string(), num(mass)])
    });
    csv_text(prov, &["t_bin", "cell", "mass"], rows)
}

/// One row per (level, test function, term); `slope` is empty where no
/// refinement slope applies.
pub fn kinetic_residuals_csv(prov: &Provenance, levels: &[KineticLevel]) -> String {
    let mut rows = Vec::new();
    for l in levels {
        for e in &l.report.entries {
            let slope = e.slope.map(num).unwrap_or_default();
            for (term, value) in KINETIC_TERMS.iter().zip(e.terms.as_array()) {
                rows.push(vec![
                    l.n.to_string(),
                    e.phi_id.clone(),
                    term.to_string(),
                    num(value),
                    num(e.residual),
                    slope.clone(),
                ]);
            }
        }
    }
    csv_text(prov, &["n", "phi_id", "term", "value", "residual", "slope"], rows)
}

pub fn checks_csv(prov: &Provenance, checks: &[CheckResult]) -> String {
    let rows = checks.iter().map(|c| {
        vec![
            c.check_id.clone(),
            c.status().to_string(),
            num(c.observed),
            num(c.tolerance),
            c.context.config_hash.clone(),
        ]
    });
    csv_text(prov, &["check_id", "status", "observed", "tolerance", "context_hash"], rows)
}

pub fn report_md(prov: &Provenance, title: &str, checks: &[CheckResult]) -> String {
    let passed = checks.iter().filter(|c| c.passed).count();
    let mut s = format!(
        "# {title}\n\n{} {} | config `{}` | master seed {}\n\n{passed}/{} checks passed.\n\n",
        prov.tool,
        prov.version,
        prov.config_hash,
        prov.master_seed,
        checks.len()
    );
    s.push_str("| check | status | observed | tolerance | rule |\n|---|---|---|---|---|\n");
    for c in checks {
        s.push_str(&format!(
            "| {} | {} | {:.4e} | {:.4e} | {} |\n",
            c.check_id,
            c.status(),
            c.observed,
            c.tolerance,
            c.tolerance_formula.replace('|', "\\|")
        ));
    }
    s.push('\n');
    for c in checks {
        s.push_str(&format!("## {}\n\n- level: {}\n- detail: {}\n\n", c.check_id, c.context.level, c.context.detail));
    }
    s
}

pub fn epsilon_study_csv(prov: &Provenance, report: &EpsilonStudyReport) -> String {
    let mut header: Vec<String> =
        ["epsilon", "penalty_l1", "lambda_total", "nu_total", "monotone_violation"].iter().map(|s| s.to_string()).collect();
    header.extend(report.pairing_ids.iter().map(|id| format!("pairing_{id}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = report.rows.iter().map(|r| {
        let mut row = vec![num(r.epsilon), num(r.penalty_l1), num(r.lambda_total), num(r.nu_total), num(r.monotone_violation)];
        row.extend(r.pairings.iter().map(|p| num(*p)));
        row
    });
    csv_text(prov, &header, rows)
}

/// Per recorded time: mean and standard error of each series column.
pub fn ensemble_csv(prov: &Provenance, stats: &EnsembleStats) -> String {
    let mut header = vec!["t".to_string()];
    for c in &SERIES_COLUMNS[1..] {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_se"));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = stats.times.iter().zip(&stats.series).map(|(t, cols)| {
        let mut row = vec![num(*t)];
        for c in cols {
            row.push(num(c.mean()));
            row.push(num(c.se()));
        }
        row
    });
    csv_text(prov, &header, rows)
}

/// Structural-assumption audit over `[δ, max(10, 2 ξ_max)]`.
pub fn scenario_audit(sc: &Scenario) -> AuditReport {
    let hi = (2.0 * sc.levels.xi_max()).max(10.0);
    audit_assumptions(&AuditInputs {
        coefficients: &sc.coefficients,
        ffields: &sc.ffields,
        obstacle: &sc.obstacle,
        mesh: &sc.mesh,
        horizon: sc.horizon,
        initial: Some(&sc.u_init),
        sample: SampleGrid::new(sc.coefficients.delta(), hi, 2000),
    })
}

fn config_echo(config: &ScenarioConfig) -> serde_json::Value {
    json!({ "canonical": config.to_canonical(), "hash": config.hash() })
}

/// Final diagnostics of one trajectory.
pub fn trajectory_summary(sc: &Scenario, rec: &TrajectoryRecord) -> serde_json::Value {
    let last = rec.series.last();
    let defect: serde_json::Map<String, serde_json::Value> = DefectTestFn::ALL
        .iter()
        .map(|f| {
            let (l, r) = defect_identity(&rec.defect, &rec.measures, &sc.mesh, *f);
            (f.id().to_string(), json!({ "lhs": l, "rhs": r }))
        })
        .collect();
    let energy: serde_json::Map<String, serde_json::Value> = ENERGY_FACTORS
        .iter()
        .zip(&rec.energy.terms)
        .map(|(f, t)| {
            let terms: serde_json::Map<String, serde_json::Value> =
                ENERGY_TERMS.iter().zip(t.as_array()).map(|(k, v)| (k.to_string(), json!(v))).collect();
            (format!("{f:?}").to_lowercase(), serde_json::Value::Object(terms))
        })
        .collect();
    json!({
        "path_id": rec.path_id,
        "steps": rec.steps,
        "min_dt": rec.min_dt,
        "max_dt": rec.max_dt,
        "final_t": last.map(|p| p.t),
        "final_mass": last.map(|p| p.mass_l1),
        "initial_mass": rec.initial_mass(),
        "mass_defect": rec.mass_defect(),
        "worst_negativity": rec.worst_negativity,
        "max_u": rec.max_u,
        "penalty_l1_qt": rec.penalty_qt,
        "nu_total": rec.measures.nu_total(),
        "m_total": rec.measures.total(Component::M),
        "lambda_total": rec.measures.total(Component::Lambda),
        "level_overflow": rec.measures.overflowed(),
        "defect_identity": defect,
        "energy": energy,
    })
}

fn summary_doc(prov: &Provenance, config: &ScenarioConfig, body: serde_json::Value, audit: Option<&AuditReport>) -> String {
    let mut doc = json!({
        "provenance": prov,
        "config": config_echo(config),
        "seeds": { "master_seed": prov.master_seed },
    });
    if let (Some(obj), serde_json::Value::Object(extra)) = (doc.as_object_mut(), body) {
        obj.extend(extra);
        if let Some(a) = audit {
            obj.insert("audit".into(), serde_json::to_value(a).expect("serializable"));
        }
    }
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

fn emit(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let path = dir.join(name);
    write_atomic(&path, text.as_bytes())?;
    written.push(path);
    Ok(())
}

/// Files of a single-path run.
pub fn write_run(dir: &Path, config: &ScenarioConfig, sc: &Scenario, rec: &TrajectoryRecord) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let prov = Provenance::of(sc);
    let mut out = Vec::new();
    emit(dir, "trajectory.csv", &trajectory_csv(&prov, rec), &mut out)?;
    emit(dir, "snapshots.csv", &snapshots_csv(&prov, sc, rec), &mut out)?;
    emit(dir, "measures.csv", &measures_csv(&prov, &rec.measures), &mut out)?;
    emit(dir, "nu.csv", &nu_csv(&prov, &rec.measures), &mut out)?;
    if rec.kinetic.is_some() {
        let report = crate::kinetics::weak_kinetic_residual(rec.kinetic.as_ref()).expect("probe present");
        let level = KineticLevel { n: sc.mesh.n(), h: sc.mesh.h(), dt: sc.horizon / rec.steps.max(1) as f64, report };
        emit(dir, "kinetic_residuals.csv", &kinetic_residuals_csv(&prov, &[level]), &mut out)?;
    }
    let audit = scenario_audit(sc);
    let body = json!({ "trajectory": trajectory_summary(sc, rec) });
    emit(dir, "summary.json", &summary_doc(&prov, config, body, Some(&audit)), &mut out)?;
    Ok(out)
}

pub fn write_ensemble(dir: &Path, config: &ScenarioConfig, sc: &Scenario, stats: &EnsembleStats) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let prov = Provenance::of(sc);
    let mut out = Vec::new();
    emit(dir, "ensemble.csv", &ensemble_csv(&prov, stats), &mut out)?;
    emit(dir, "measures.csv", &measures_csv(&prov, &stats.measures), &mut out)?;
    emit(dir, "nu.csv", &nu_csv(&prov, &stats.measures), &mut out)?;
    let energy: serde_json::Map<String, serde_json::Value> = ENERGY_FACTORS
        .iter()
        .zip(&stats.energy)
        .map(|(f, t)| {
            let terms: serde_json::Map<String, serde_json::Value> = ENERGY_TERMS
                .iter()
                .zip(t)
                .map(|(k, v)| (k.to_string(), json!({ "mean": v.mean(), "se": v.se() })))
                .collect();
            (format!("{f:?}").to_lowercase(), serde_json::Value::Object(terms))
        })
        .collect();
    let body = json!({
        "ensemble": {
            "paths": stats.paths,
            "worst_negativity": stats.worst_negativity,
            "max_mass_defect": stats.max_mass_defect,
            "level_overflow": stats.measures.overflowed(),
            "energy": energy,
        }
    });
    emit(dir, "summary.json", &summary_doc(&prov, config, body, Some(&scenario_audit(sc))), &mut out)?;
    Ok(out)
}

pub fn write_checks(dir: &Path, config: &ScenarioConfig, title: &str, checks: &[CheckResult]) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let prov = Provenance::new(&config.hash(), config.seeds.master_seed);
    let mut out = Vec::new();
    emit(dir, "checks.csv", &checks_csv(&prov, checks), &mut out)?;
    emit(dir, "report.md", &report_md(&prov, title, checks), &mut out)?;
    let body = json!({ "checks": checks, "all_pass": checks.iter().all(|c| c.passed) });
    emit(dir, "summary.json", &summary_doc(&prov, config, body, None), &mut out)?;
    Ok(out)
}

pub fn write_epsilon_study(
    dir: &Path,
    config: &ScenarioConfig,
    report: &EpsilonStudyReport,
    checks: &[CheckResult],
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let prov = Provenance::new(&report.config_hash, report.master_seed);
    let mut out = Vec::new();
    emit(dir, "epsilon_study.csv", &epsilon_study_csv(&prov, report), &mut out)?;
    emit(dir, "checks.csv", &checks_csv(&prov, checks), &mut out)?;
    emit(dir, "report.md", &report_md(&prov, "Penalty study", checks), &mut out)?;
    let body = json!({ "epsilon_study": report, "checks": checks });
    emit(dir, "summary.json", &summary_doc(&prov, config, body, None), &mut out)?;
    Ok(out)
}

pub fn write_audit(dir: &Path, config: &ScenarioConfig, report: &AuditReport) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let prov = Provenance::new(&config.hash(), config.seeds.master_seed);
    let doc = json!({ "provenance": prov, "config": config_echo(config), "audit": report });
    let mut out = Vec::new();
    emit(dir, "audit.json", &(serde_json::to_string_pretty(&doc).expect("serializable") + "\n"), &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, b"first\n").unwrap();
        write_atomic(&p, b"second\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "second\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn csv_has_provenance_then_header() {
        let prov = Provenance::new("abc", 7);
        let text = csv_text(&prov, &["a", "b"], vec![vec!["1".to_string(), "x,y".to_string()]]);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# tool=sim version={VERSION} config_hash=abc master_seed=7"));
        assert_eq!(lines.next().unwrap(), "a,b");
        assert_eq!(lines.next().unwrap(), "1,\"x,y\"");
    }

    #[test]
    fn run_files_carry_provenance() {
        let mut cfg = ScenarioConfig::preset("heat-contact").unwrap();
        cfg.mesh.n = 16;
        cfg.time.horizon = 0.01;
        cfg.output.record_full = true;
        let sc = cfg.build().unwrap();
        let rec = crate::solver::run_trajectory(&sc, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_run(dir.path(), &cfg, &sc, &rec).unwrap();
        assert_eq!(files.len(), 6);
        for f in files {
            let text = std::fs::read_to_string(&f).unwrap();
            assert!(text.contains(&sc.config_hash), "{}", f.display());
        }
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["seeds"]["master_seed"], json!(cfg.seeds.master_seed));
        assert!(summary["audit"]["entries"].as_array().unwrap().len() >= 8);
    }
}
