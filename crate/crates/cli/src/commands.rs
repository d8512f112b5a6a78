use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hompinn::config::ResolvedConfig;
use hompinn::io::{self, Checkpoint};
use hompinn::oracle::{ObservationSet, SolutionTable};
use hompinn::trainer::{
    discover_solutions, m_selection_sweep, robustness_study, run_inverse_pipeline_observed, TrainingRecord,
};

use crate::output::{self, write_with, OracleMatch};

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn write_table(table: &SolutionTable, path: &Path) -> Result<()> {
    write_with(path, |w| Ok(io::write_solution_table(table, w)?))?;
    announce(path);
    Ok(())
}

fn write_obs(obs: &ObservationSet, path: &Path) -> Result<()> {
    write_with(path, |w| Ok(io::write_observations(obs, w)?))?;
    announce(path);
    Ok(())
}

fn read_obs(path: &Path) -> Result<ObservationSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    io::read_observations(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn counts(obs: &ObservationSet, table: &SolutionTable) -> String {
    let Some(meta) = &obs.meta else {
        return String::new();
    };
    let mut n = vec![0usize; table.solutions.len()];
    for &s in &meta.source_labels {
        n[s] += 1;
    }
    meta.subset
        .iter()
        .map(|&s| format!("solution {s}: {}", n[s]))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn generate_obs(cfg: &ResolvedConfig) -> Result<()> {
    let table = cfg.oracle_table()?;
    let (obs, test) = cfg.sample(&table)?;
    let dir = &cfg.output_dir;
    write_table(&table, &dir.join("solutions.txt"))?;
    write_obs(&obs, &dir.join("observations.csv"))?;
    if let Some(test) = &test {
        write_obs(test, &dir.join("test_observations.csv"))?;
    }
    println!("{} solutions; {} observations ({})", table.len(), obs.len(), counts(&obs, &table));
    Ok(())
}

/// Observations from the configured files, or freshly sampled from the
/// oracle (and then also written out).
fn training_data(cfg: &ResolvedConfig) -> Result<(ObservationSet, Option<ObservationSet>)> {
    if let Some(path) = &cfg.data.observations {
        let obs = read_obs(path)?;
        let test = cfg.data.test_observations.as_deref().map(read_obs).transpose()?;
        return Ok((obs, test));
    }
    let table = cfg.oracle_table()?;
    let (obs, test) = cfg.sample(&table)?;
    write_obs(&obs, &cfg.output_dir.join("observations.csv"))?;
    if let Some(test) = &test {
        write_obs(test, &cfg.output_dir.join("test_observations.csv"))?;
    }
    let test = match &cfg.data.test_observations {
        Some(path) => Some(read_obs(path)?),
        None => test,
    };
    Ok((obs, test))
}

fn write_record(record: &TrainingRecord, path: &Path) -> Result<()> {
    write_with(path, |w| Ok(io::write_record(record, w)?))?;
    announce(path);
    Ok(())
}

pub fn train(cfg: &ResolvedConfig) -> Result<()> {
    let (obs, test) = training_data(cfg)?;
    let ckpt_dir = cfg.output_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    let mut write_error: Option<anyhow::Error> = None;
    let mut save = |cp: &Checkpoint| {
        if write_error.is_some() {
            return;
        }
        // process 0 marks the λ-frozen refinement
        let path = ckpt_dir.join(format!("p{}_k{:02}.hpck", cp.process, cp.k));
        if let Err(e) = std::fs::write(&path, io::encode_checkpoint(cp)) {
            write_error = Some(anyhow::Error::new(e).context(format!("writing {}", path.display())));
        }
    };
    let result = run_inverse_pipeline_observed(&cfg.train, &obs, test.as_ref(), &mut save);
    if let Some(e) = write_error {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(hompinn::trainer::TrainError::Diverged(report)) => {
            write_record(&report.record, &cfg.output_dir.join("record.csv"))?;
            bail!(
                "training diverged in process {} step {} iteration {}: {}",
                report.process,
                report.k,
                report.iteration,
                report.reason
            );
        }
        Err(e) => return Err(e.into()),
    };
    println!("checkpoints in {}", ckpt_dir.display());
    write_record(&outcome.record, &cfg.output_dir.join("record.csv"))?;
    if let Some(fwd) = &outcome.forward {
        write_record(&fwd.record, &cfg.output_dir.join("forward_record.csv"))?;
    }
    let problem = cfg.train.problem();
    let path = cfg.output_dir.join("predictions.csv");
    write_with(&path, |w| output::predictions(&outcome.params, &problem, w))?;
    announce(&path);
    let labels = problem.lambda_labels();
    let shown: Vec<String> = labels.iter().zip(&outcome.lambda).map(|(l, v)| format!("{l} = {v:.6}")).collect();
    println!("final {}", shown.join(", "));
    if let Some(last) = outcome.record.rows.last() {
        println!("train loss {:e}", last.train_loss);
    }
    Ok(())
}

pub fn sweep_m(cfg: &ResolvedConfig, m_range: &[usize]) -> Result<()> {
    let (obs, test) = training_data(cfg)?;
    let outcome = m_selection_sweep(&cfg.train, &obs, test.as_ref(), m_range, cfg.workers)?;
    let path = cfg.output_dir.join("sweep.csv");
    let problem = cfg.train.problem();
    write_with(&path, |w| output::sweep(&outcome, problem.lambda_labels(), w))?;
    announce(&path);
    match outcome.recommended {
        Some(m) => println!("recommended M: {m}"),
        None => println!("recommended M: none"),
    }
    let failed: Vec<usize> = outcome.rows.iter().filter(|r| r.failure.is_some()).map(|r| r.m).collect();
    if !failed.is_empty() {
        bail!("runs for M = {failed:?} failed; see the failure column");
    }
    Ok(())
}

/// Non-converged and diverged trials are outcomes of the study, so they
/// are reported in the CSV rather than through the exit code.
pub fn robustness(cfg: &ResolvedConfig, trials: usize) -> Result<()> {
    let (obs, _) = training_data(cfg)?;
    let outcome = robustness_study(
        &cfg.train,
        &obs,
        trials,
        &cfg.studies.lambda_distribution,
        cfg.studies.tolerance,
        cfg.workers,
    )?;
    let path = cfg.output_dir.join("trajectories.csv");
    let problem = cfg.train.problem();
    write_with(&path, |w| output::trajectories(&outcome, problem.lambda_labels(), w))?;
    announce(&path);
    let diverged = outcome.trials.iter().filter(|t| t.failure.is_some()).count();
    println!(
        "converged: {:.1}% ({} of {}, {} diverged)",
        100.0 * outcome.converged_fraction(),
        outcome.trials.iter().filter(|t| t.converged).count(),
        outcome.trials.len(),
        diverged
    );
    Ok(())
}

pub fn discover(cfg: &ResolvedConfig, lambda: &[f64]) -> Result<()> {
    let options = &cfg.studies.discovery;
    let outcome = discover_solutions(&cfg.train, lambda, options)?;
    let dir = &cfg.output_dir;
    write_table(&outcome.table, &dir.join("discovered.txt"))?;
    let path = dir.join("discovered.csv");
    write_with(&path, |w| output::discovered(&outcome, w))?;
    announce(&path);

    let oracle = hompinn::oracle::oracle_table(cfg.train.problem, lambda, &cfg.oracle)?;
    let found = output::match_against(&outcome.table, &oracle, options.match_threshold);
    let rows: Vec<OracleMatch> = outcome
        .table
        .solutions
        .iter()
        .zip(&found)
        .enumerate()
        .map(|(i, (s, &(oracle_index, distance)))| OracleMatch {
            index: i,
            u0: s.values[0],
            residual_rms: s.residual_rms,
            network_residual: outcome.network_residual[i],
            oracle_index,
            distance,
        })
        .collect();
    let path = dir.join("discovered_vs_oracle.csv");
    write_with(&path, |w| output::matches(&rows, w))?;
    announce(&path);
    let matched = rows.iter().filter(|r| r.oracle_index.is_some()).count();
    println!(
        "discovered {} distinct solutions from {} candidates ({} rejected); {} of them match the {} oracle solutions",
        outcome.table.len(),
        outcome.candidates,
        outcome.rejected,
        matched,
        oracle.len()
    );
    Ok(())
}

pub fn report(records: &[PathBuf], out: &Path) -> Result<()> {
    let mut loaded = Vec::new();
    for path in records {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let record = io::read_record(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        loaded.push((path.display().to_string(), record));
    }
    if loaded.windows(2).any(|w| w[0].1.lambda_labels != w[1].1.lambda_labels) {
        bail!("records come from problems with different parameters");
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("summary.csv");
    let mut table = Vec::new();
    write_with(&path, |w| {
        table = output::summary(&loaded, w)?;
        Ok(())
    })?;
    println!("{}", output::aligned(&table));
    announce(&path);
    Ok(())
}
