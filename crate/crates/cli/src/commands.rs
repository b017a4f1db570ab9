use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use diffcore::suite::{faulty_probe, primitive_probes, NamedCheck, GRAD_TOL};
use hsda::checkpoint;
use hsda::error::io_err;
use hsda::features::{kinematic_features, render_image, synth_records};
use hsda::gradcheck::{block_checks, model_checks, stem_checks};
use hsda::ingest::{clean_all, drop_incomplete, parse_raw, write_raw_str, Cleaned, Dropped, RawRecord};
use hsda::kv;
use hsda::pipeline::{initial_state, prepare, sample_id};
use hsda::train::{evaluate, history_csv, run_protocol, Metrics, Sample};
use hsda::{HsdaError, Result};

use crate::config::RunConfig;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Creates the output directory and records the configuration in it.
pub fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    cfg.write_to(dir)
}

/// Reads raw records from a file, or from every `.csv` file of a directory
/// in name order, keeping only `cfg.task` when it is non-zero.
pub fn load_records(path: &Path, cfg: &RunConfig) -> Result<Vec<RawRecord>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(HsdaError::EmptyInput(format!("no .csv files in {}", path.display())));
    }
    let mut out = Vec::new();
    for f in &files {
        let recs = parse_raw(f, cfg.raw_format).map_err(|e| match e {
            HsdaError::Parse { line, msg } => HsdaError::Parse {
                line,
                msg: format!("{}: {msg}", f.display()),
            },
            other => other,
        })?;
        out.extend(recs);
    }
    if cfg.task != 0 {
        out.retain(|r| r.task_id == cfg.task);
        if out.is_empty() {
            return Err(HsdaError::EmptyInput(format!("no records for task {}", cfg.task)));
        }
    }
    Ok(out)
}

fn clean(records: Vec<RawRecord>, cfg: &RunConfig) -> (Vec<Cleaned>, Vec<Dropped>) {
    let (kept, mut dropped) = drop_incomplete(records);
    let (cleaned, more) = clean_all(kept, &cfg.clean);
    dropped.extend(more);
    (cleaned, dropped)
}

fn manifest_row(out: &mut String, c: &Cleaned, status: &str, note: &str) {
    let s = &c.sequence;
    let o = &c.outliers.per_channel;
    let _ = writeln!(
        out,
        "{},{},{},{status},{},{},{},{},{note}",
        s.subject_id,
        s.task_id,
        s.label,
        s.len(),
        o[0],
        o[1],
        o[2]
    );
}

/// One signal CSV per (subject, task) plus `manifest.csv`.
pub fn preprocess(input: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let (cleaned, dropped) = clean(load_records(input, cfg)?, cfg);
    prepare_out(out, cfg)?;
    let mut manifest = String::from("subject_id,task_id,label,status,samples,outliers_x,outliers_y,outliers_p,note\n");
    for c in &cleaned {
        match kinematic_features(&c.sequence) {
            Ok(m) => {
                write(&out.join(format!("{}.csv", sample_id(&c.sequence))), m.to_csv())?;
                let note = if c.outliers.warning { "many outliers" } else { "" };
                manifest_row(&mut manifest, c, "ok", note);
            }
            Err(e) => {
                log::warn!("{}: {e}", sample_id(&c.sequence));
                manifest_row(&mut manifest, c, "dropped", &e.to_string().replace(',', ";"));
            }
        }
    }
    for d in &dropped {
        let _ = writeln!(
            manifest,
            "{},{},,dropped,,,,,{}",
            d.subject_id,
            d.task_id,
            d.reason.replace(',', ";")
        );
    }
    write(&out.join("manifest.csv"), manifest)?;
    log::info!("{} sequences written, {} dropped", cleaned.len(), dropped.len());
    Ok(())
}

/// One binary PPM per (subject, task).
pub fn render(input: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let (cleaned, dropped) = clean(load_records(input, cfg)?, cfg);
    prepare_out(out, cfg)?;
    for c in &cleaned {
        match render_image(&c.sequence, cfg.render_size) {
            Ok(img) => write(&out.join(format!("{}.ppm", sample_id(&c.sequence))), img.to_ppm())?,
            Err(e) => log::warn!("{}: {e}", sample_id(&c.sequence)),
        }
    }
    for d in &dropped {
        log::warn!("dropped {}_{}: {}", d.subject_id, d.task_id, d.reason);
    }
    Ok(())
}

/// `synthetic.csv` with `synth_n` subjects per class.
pub fn synth(out: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let records = synth_records(cfg.synth_n, cfg.train.seed, &cfg.synth)?;
    prepare_out(out, cfg)?;
    let path = out.join("synthetic.csv");
    write(&path, write_raw_str(&records))?;
    Ok(path)
}

fn samples_for(input: &Path, cfg: &RunConfig, canvas: usize) -> Result<Vec<Sample>> {
    let (kept, dropped) = drop_incomplete(load_records(input, cfg)?);
    for d in &dropped {
        log::warn!("dropped {}_{}: {}", d.subject_id, d.task_id, d.reason);
    }
    let (samples, _, dropped) = prepare(kept, &cfg.clean, canvas)?;
    for d in &dropped {
        log::warn!("dropped {}_{}: {}", d.subject_id, d.task_id, d.reason);
    }
    if samples.is_empty() {
        return Err(HsdaError::EmptyInput("no usable sequences".into()));
    }
    Ok(samples)
}

fn write_metrics(out: &Path, m: &Metrics) -> Result<()> {
    write(&out.join("metrics.txt"), kv::render(&m.to_pairs()))?;
    write(&out.join("metrics_table.txt"), format!("{m}\n"))
}

/// Full protocol: checkpoint of the selected fold, histories, test metrics.
pub fn train(input: &Path, out: &Path, cfg: &RunConfig) -> Result<Metrics> {
    let samples = samples_for(input, cfg, cfg.model.canvas)?;
    let (net, init) = initial_state(&cfg.model, &cfg.train)?;
    let result = run_protocol(&net, &init, &samples, &cfg.train)?;
    prepare_out(out, cfg)?;
    let sel = result.selected_fold();
    checkpoint::save(&out.join("model.ckpt"), &cfg.model, &sel.best)?;
    write(&out.join("history.csv"), history_csv(&sel.history))?;
    let mut folds = String::from("fold,best_epoch,best_val_acc,epochs,stopped_early,selected\n");
    for f in &result.folds {
        write(&out.join(format!("history_fold{}.csv", f.fold)), history_csv(&f.history))?;
        let _ = writeln!(
            folds,
            "{},{},{:.6},{},{},{}",
            f.fold,
            f.best_epoch,
            f.best_val_acc,
            f.history.len(),
            f.stopped_early,
            f.fold == sel.fold
        );
    }
    write(&out.join("folds.csv"), folds)?;
    let ids: String = result.split.test.iter().map(|&i| format!("{}\n", samples[i].id)).collect();
    write(&out.join("test_ids.txt"), ids)?;
    write_metrics(out, &result.test_metrics)?;
    Ok(result.test_metrics)
}

/// Metrics of a saved model on `input`, optionally restricted to the sample
/// ids listed one per line in `subset`.
pub fn evaluate_cmd(input: &Path, ckpt: &Path, subset: Option<&Path>, out: Option<&Path>, cfg: &RunConfig) -> Result<Metrics> {
    let (net, state) = checkpoint::load(ckpt)?;
    let mut samples = samples_for(input, cfg, net.cfg.canvas)?;
    if let Some(p) = subset {
        let text = std::fs::read_to_string(p).map_err(io_err(p))?;
        let keep: BTreeSet<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        samples.retain(|s| keep.contains(s.id.as_str()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let m = evaluate(&net, &state.params, &refs)?;
    if let Some(out) = out {
        let cfg = RunConfig {
            model: net.cfg.clone(),
            ..cfg.clone()
        };
        prepare_out(out, &cfg)?;
        write_metrics(out, &m)?;
    }
    Ok(m)
}

/// Gradient checks of every primitive and of the toy model.
pub fn gradcheck(seed: u64, inject_faulty: bool) -> Result<Vec<NamedCheck>> {
    let mut probes = primitive_probes(seed);
    if inject_faulty {
        probes.push(faulty_probe());
    }
    let mut checks = probes.iter().map(|p| p.run()).collect::<diffcore::Result<Vec<_>>>()?;
    for (prefix, v) in [
        ("stem", stem_checks(seed, 16)?),
        ("block", block_checks(seed, 4, 8, 16)?),
        ("model", model_checks(seed, 6)?),
    ] {
        checks.extend(v.into_iter().map(|mut c| {
            c.name = format!("{prefix}/{}", c.name);
            c
        }));
    }
    Ok(checks)
}

pub fn gradcheck_report(checks: &[NamedCheck]) -> String {
    let mut out = String::new();
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in checks {
        let status = if c.report.passes(GRAD_TOL) { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{:<width$}  {:.3e}  {status}", c.name, c.report.max_rel_err);
    }
    let worst = checks.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    let failed = checks.iter().filter(|c| !c.report.passes(GRAD_TOL)).count();
    let _ = writeln!(out, "checks: {}  failed: {failed}  max rel err: {worst:.3e}", checks.len());
    out
}
