//! One function per subcommand. Each reads an [`ExperimentConfig`], writes
//! its outputs under the output directory, and returns a short summary.

use std::path::Path;

use serde::Serialize;
use ugnn_core::data::save_domain;
use ugnn_core::models::{gradcheck::pipeline_suite, Checkpoint, Variant};
use ugnn_core::tensor::gradcheck::{primitive_suite, GradCheckReport};
use ugnn_core::trainer::{run_once, PreparedDomain, RunReport};

use crate::config::ExperimentConfig;
use crate::experiments::{ablation, objective_table, prepare_pair, sensitivity, ArmResult};
use crate::output::{num, write_csv, write_json};
use crate::theorem::sweep;
use crate::{CliError, Result};

/// Column layout of every per-run table.
pub const RUN_HEADER: [&str; 11] = [
    "source",
    "target",
    "variant",
    "cp_rounds",
    "xi",
    "seed",
    "macro_f1",
    "micro_f1",
    "f_low_transfer",
    "f_low_cp",
    "config_hash",
];

pub fn run_row(variant: Variant, cp_rounds: usize, xi: f64, r: &RunReport, hash: &str) -> Vec<String> {
    vec![
        r.source.clone(),
        r.target.clone(),
        variant.to_string(),
        cp_rounds.to_string(),
        num(xi),
        r.seed.to_string(),
        num(r.target_macro_f1),
        num(r.target_micro_f1),
        num(r.f_low_transfer),
        num(r.f_low_cp),
        hash.to_string(),
    ]
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    result: T,
}

fn write_echo<T: Serialize>(path: &Path, cfg: &ExperimentConfig, hash: &str, result: T) -> Result<()> {
    write_json(
        path,
        &Echo {
            config_hash: hash,
            config: cfg,
            result,
        },
    )
}

fn load_pair(cfg: &ExperimentConfig, index: usize) -> Result<(PreparedDomain, PreparedDomain)> {
    prepare_pair(&cfg.pairs[index], cfg.model.add_self_loops, None)
}

pub fn generate(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.output_dir();
    let hash = cfg.hash()?;
    let mut lines = Vec::new();
    let mut manifest = Vec::new();
    for (i, pair) in cfg.pairs.iter().enumerate() {
        if pair.synthetic.is_none() {
            return Err(CliError::Config(format!("pair {i} is not synthetic")));
        }
        let (s, t) = pair.load()?;
        for ds in [&s, &t] {
            save_domain(ds, &out.join(&ds.name))?;
            lines.push(format!(
                "{}: {} nodes, {} edges, {} feature entries, {} classes",
                ds.name,
                ds.n_nodes(),
                ds.graph.n_edges(),
                ds.features.len(),
                ds.class_count
            ));
            manifest.push(serde_json::json!({
                "name": ds.name,
                "nodes": ds.n_nodes(),
                "edges": ds.graph.n_edges(),
                "feature_entries": ds.features.len(),
                "classes": ds.class_count,
            }));
        }
    }
    if cfg.pairs.is_empty() {
        return Err(CliError::Config("generate needs at least one synthetic pair".into()));
    }
    write_echo(&out.join("generate.json"), cfg, &hash, manifest)?;
    Ok(lines.join("\n"))
}

pub fn train(cfg: &ExperimentConfig) -> Result<String> {
    cfg.first_pair()?;
    let out = cfg.output_dir();
    let hash = cfg.hash()?;
    let (source, target) = load_pair(cfg, 0)?;
    let seed = cfg.seeds[0];
    let (model, report) = run_once(&cfg.model, &cfg.train, &source, &target, seed)?;
    std::fs::create_dir_all(&out)?;
    Checkpoint::save(&model, &out.join("checkpoint.json"))?;
    write_echo(&out.join("report.json"), cfg, &hash, &report)?;
    write_csv(
        &out.join("train.csv"),
        &RUN_HEADER,
        &[run_row(cfg.model.variant, cfg.model.cp_rounds, cfg.train.xi, &report, &hash)],
    )?;
    Ok(format!(
        "{} -> {} {} seed {}: epochs {} (best {}), target macro-F1 {:.4}, micro-F1 {:.4}, \
         f_low transfer {:.6e}, cascade {:.6e}, inequality {}",
        report.source,
        report.target,
        cfg.model.variant,
        seed,
        report.epochs_run,
        report.best_epoch,
        report.target_macro_f1,
        report.target_micro_f1,
        report.f_low_transfer,
        report.f_low_cp,
        if report.theorem_holds { "holds" } else { "VIOLATED" }
    ))
}

#[derive(Serialize)]
struct Failure {
    pair: usize,
    variant: Variant,
    error: String,
}

/// Pairs × variants × ablation arms. A failing pair/variant is recorded and
/// the rest still run; the first failure decides the exit status.
pub fn gda_run(cfg: &ExperimentConfig) -> Result<String> {
    cfg.first_pair()?;
    let out = cfg.output_dir();
    let hash = cfg.hash()?;
    let mut results: Vec<(usize, ArmResult)> = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for i in 0..cfg.pairs.len() {
        let prepared = load_pair(cfg, i);
        for variant in cfg.variants() {
            let outcome = prepared
                .as_ref()
                .map_err(|e| CliError::Config(e.to_string()))
                .and_then(|(s, t)| ablation(s, t, variant, cfg));
            match outcome {
                Ok(arms) => results.extend(arms.into_iter().map(|a| (i, a))),
                Err(e) => {
                    failures.push(Failure {
                        pair: i,
                        variant,
                        error: e.to_string(),
                    });
                    first_error.get_or_insert(e);
                }
            }
        }
    }

    let mut runs = Vec::new();
    let mut summary = Vec::new();
    let mut lines = Vec::new();
    for (pair, r) in &results {
        for rep in &r.summary.reports {
            runs.push(run_row(r.variant, r.spec.cp_rounds, r.train.xi, rep, &hash));
        }
        let first = &r.summary.reports[0];
        summary.push(vec![
            pair.to_string(),
            first.source.clone(),
            first.target.clone(),
            r.variant.to_string(),
            r.arm.to_string(),
            r.spec.cp_rounds.to_string(),
            num(r.train.xi),
            r.summary.seeds.len().to_string(),
            num(r.summary.macro_f1.mean),
            r.summary.macro_f1.std.map(num).unwrap_or_default(),
            num(r.summary.micro_f1.mean),
            r.summary.micro_f1.std.map(num).unwrap_or_default(),
            num(r.summary.val_micro_f1.mean),
            hash.clone(),
        ]);
        lines.push(format!(
            "{} -> {} {} {:<8} micro-F1 {:.4} macro-F1 {:.4}",
            first.source, first.target, r.variant, r.arm, r.summary.micro_f1.mean, r.summary.macro_f1.mean
        ));
    }
    write_csv(&out.join("gda_runs.csv"), &RUN_HEADER, &runs)?;
    write_csv(
        &out.join("gda_summary.csv"),
        &[
            "pair",
            "source",
            "target",
            "variant",
            "arm",
            "cp_rounds",
            "xi",
            "seeds",
            "macro_f1_mean",
            "macro_f1_std",
            "micro_f1_mean",
            "micro_f1_std",
            "val_micro_f1_mean",
            "config_hash",
        ],
        &summary,
    )?;
    let failure_rows: Vec<Vec<String>> = failures
        .iter()
        .map(|f| vec![f.pair.to_string(), f.variant.to_string(), f.error.clone(), hash.clone()])
        .collect();
    write_csv(
        &out.join("gda_failures.csv"),
        &["pair", "variant", "error", "config_hash"],
        &failure_rows,
    )?;
    let arms: Vec<&ArmResult> = results.iter().map(|(_, a)| a).collect();
    write_echo(&out.join("gda_results.json"), cfg, &hash, (&arms, &failures))?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(lines.join("\n")),
    }
}

pub fn objective_table_cmd(cfg: &ExperimentConfig) -> Result<String> {
    cfg.first_pair()?;
    let out = cfg.output_dir();
    let hash = cfg.hash()?;
    for path in cfg.objective_table.checkpoints.values() {
        if !path.exists() {
            return Err(CliError::Config(format!("missing checkpoint {}", path.display())));
        }
    }
    let rows = objective_table(cfg)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.pair.to_string(),
                r.train_domain.clone(),
                r.eval_domain.clone(),
                cfg.model.variant.to_string(),
                r.cells.len().to_string(),
                num(r.f_low_mean),
                num(r.f_low_normalized),
                hash.clone(),
            ]
        })
        .collect();
    write_csv(
        &out.join("objective_table.csv"),
        &[
            "pair",
            "train_domain",
            "eval_domain",
            "variant",
            "seeds",
            "f_low_mean",
            "f_low_normalized",
            "config_hash",
        ],
        &table,
    )?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|r| {
            r.cells.iter().map(move |c| {
                vec![
                    r.pair.to_string(),
                    c.train_domain.clone(),
                    c.eval_domain.clone(),
                    c.seed.to_string(),
                    num(c.f_low),
                ]
            })
        })
        .map(|mut v| {
            v.push(hash.clone());
            v
        })
        .collect();
    write_csv(
        &out.join("objective_cells.csv"),
        &["pair", "train_domain", "eval_domain", "seed", "f_low", "config_hash"],
        &cells,
    )?;
    write_echo(&out.join("objective_table.json"), cfg, &hash, &rows)?;
    Ok(rows
        .iter()
        .map(|r| {
            format!(
                "{} -> {}: {:.4}",
                r.train_domain, r.eval_domain, r.f_low_normalized
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

pub fn theorem_check_cmd(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.output_dir();
    let hash = cfg.hash()?;
    let rows = sweep(&cfg.theorem)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.to_string(),
                r.trial.to_string(),
                r.instance_seed.to_string(),
                r.n_nodes.to_string(),
                r.n_edges.to_string(),
                num(r.f_transfer),
                num(r.f_cp),
                r.holds.to_string(),
                r.rounds_hold.to_string(),
                r.convention_only.to_string(),
                r.injected.to_string(),
                hash.clone(),
            ]
        })
        .collect();
    write_csv(
        &out.join("theorem_check.csv"),
        &[
            "variant",
            "trial",
            "instance_seed",
            "n_nodes",
            "n_edges",
            "f_transfer",
            "f_cp",
            "holds",
            "rounds_hold",
            "convention_only",
            "injected",
            "config_hash",
        ],
        &table,
    )?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passes())
        .map(|r| {
            format!(
                "{} trial {} instance seed {}: f_cp {:e} vs f_transfer {:e}, rounds {:?}",
                r.variant, r.trial, r.instance_seed, r.f_cp, r.f_transfer, r.rounds
            )
        })
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Verification(format!(
            "{} of {} trials violated (replay with theorem.replay):\n{}",
            failed.len(),
            rows.len(),
            failed.join("\n")
        )));
    }
    let mut lines = Vec::new();
    for v in &cfg.theorem.variants {
        let n = rows.iter().filter(|r| r.variant == *v).count();
        lines.push(format!("{v}: {n} trials, 0 violations"));
    }
    Ok(lines.join("\n"))
}

pub fn sensitivity_cmd(cfg: &ExperimentConfig) -> Result<String> {
    cfg.first_pair()?;
    let out = cfg.output_dir();
    let hash = cfg.hash()?;
    let mut table = Vec::new();
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    for i in 0..cfg.pairs.len() {
        let (s, t) = load_pair(cfg, i)?;
        for variant in cfg.variants() {
            for row in sensitivity(&s, &t, variant, cfg)? {
                let m = &row.summary;
                table.push(vec![
                    s.name().to_string(),
                    t.name().to_string(),
                    variant.to_string(),
                    cfg.model.cp_rounds.to_string(),
                    num(row.xi),
                    num(m.macro_f1.mean),
                    num(m.micro_f1.mean),
                    m.macro_f1.std.map(num).unwrap_or_default(),
                    m.micro_f1.std.map(num).unwrap_or_default(),
                    m.seeds.len().to_string(),
                    hash.clone(),
                ]);
                for r in &m.reports {
                    runs.push(run_row(variant, cfg.model.cp_rounds, row.xi, r, &hash));
                }
                lines.push(format!(
                    "{} -> {} {variant} xi {}: micro-F1 {:.4} macro-F1 {:.4}",
                    s.name(),
                    t.name(),
                    row.xi,
                    m.micro_f1.mean,
                    m.macro_f1.mean
                ));
            }
        }
    }
    write_csv(
        &out.join("sensitivity.csv"),
        &[
            "source",
            "target",
            "variant",
            "cp_rounds",
            "xi",
            "macro_f1",
            "micro_f1",
            "macro_f1_std",
            "micro_f1_std",
            "seeds",
            "config_hash",
        ],
        &table,
    )?;
    write_csv(&out.join("sensitivity_runs.csv"), &RUN_HEADER, &runs)?;
    Ok(lines.join("\n"))
}

/// Every primitive and every pipeline over the configured seeds.
pub fn gradcheck_reports(cfg: &ExperimentConfig) -> Result<Vec<(u64, GradCheckReport)>> {
    let g = &cfg.gradcheck;
    let mut reports = Vec::new();
    for &seed in &g.seeds {
        for r in primitive_suite(seed, g.step, g.inject_fault)? {
            reports.push((seed, r));
        }
        for r in pipeline_suite(seed, g.step)? {
            reports.push((seed, r));
        }
    }
    Ok(reports)
}

pub fn gradcheck_cmd(cfg: &ExperimentConfig) -> Result<String> {
    let out = cfg.output_dir();
    let hash = cfg.hash()?;
    let tol = cfg.gradcheck.tolerance;
    let reports = gradcheck_reports(cfg)?;
    let table: Vec<Vec<String>> = reports
        .iter()
        .map(|(seed, r)| {
            vec![
                r.name.clone(),
                seed.to_string(),
                num(r.rel_error),
                num(r.max_abs_error),
                r.checked_entries.to_string(),
                num(tol),
                r.passes(tol).to_string(),
                hash.clone(),
            ]
        })
        .collect();
    write_csv(
        &out.join("gradcheck.csv"),
        &[
            "check",
            "seed",
            "rel_error",
            "max_abs_error",
            "checked_entries",
            "tolerance",
            "passed",
            "config_hash",
        ],
        &table,
    )?;
    let worst = reports
        .iter()
        .max_by(|a, b| a.1.rel_error.total_cmp(&b.1.rel_error))
        .ok_or_else(|| CliError::Config("gradcheck needs at least one seed".into()))?;
    let failed = reports.iter().filter(|(_, r)| !r.passes(tol)).count();
    let worst_line = format!(
        "worst: {} (seed {}) relative error {:e}",
        worst.1.name, worst.0, worst.1.rel_error
    );
    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} of {} checks exceed tolerance {tol:e}; {worst_line}",
            reports.len()
        )));
    }
    Ok(format!("{} checks within {tol:e}; {worst_line}", reports.len()))
}
