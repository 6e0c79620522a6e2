use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::engine::Simulation;
use super::metrics::{write_metrics, RoundRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const OUT_ENV: &str = "SYBIL_LAB_OUT";

/// First round whose backdoor accuracy reaches this level.
pub const BACKDOOR_SUCCESS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub mode: String,
    pub aggregator: String,
    pub strategy: Option<String>,
    pub rounds_planned: u64,
    pub rounds_run: u64,
    pub stopped_on_abort: bool,
    pub aborted_rounds: Vec<u64>,
    pub final_checksum: String,
    pub final_main_acc: f64,
    pub final_backdoor_acc: f64,
    pub final_tail_error: f64,
    pub time_to_backdoor: Option<u64>,
    pub total_rejected: usize,
    pub wall_ms_total: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

impl RunOutput {
    pub fn time_to_backdoor(&self) -> Option<u64> {
        self.summary.time_to_backdoor
    }
}

/// Relative paths land under `$SYBIL_LAB_OUT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn summarize(cfg: &ScenarioConfig, records: &[RoundRecord]) -> Summary {
    let last = records.last();
    let stopped = records.len() < cfg.rounds as usize && last.is_some_and(|r| r.aborted.is_some());
    Summary {
        seed: cfg.seed,
        mode: cfg.mode.name().into(),
        aggregator: cfg.aggregator.kind.name().into(),
        strategy: (cfg.population.adversaries > 0).then(|| cfg.attack.strategy.name().into()),
        rounds_planned: cfg.rounds,
        rounds_run: records.len() as u64,
        stopped_on_abort: stopped,
        aborted_rounds: records
            .iter()
            .filter(|r| r.aborted.is_some())
            .map(|r| r.round)
            .collect(),
        final_checksum: last.map(|r| r.checksum.clone()).unwrap_or_default(),
        final_main_acc: last.map_or(0.0, |r| r.main_acc),
        final_backdoor_acc: last.map_or(0.0, |r| r.backdoor_acc),
        final_tail_error: last.map_or(0.0, |r| r.tail_error),
        time_to_backdoor: records
            .iter()
            .find(|r| r.backdoor_acc >= BACKDOOR_SUCCESS)
            .map(|r| r.round),
        total_rejected: records.iter().map(|r| r.rejected.len()).sum(),
        wall_ms_total: records.iter().map(|r| r.wall_ms).sum(),
    }
}

/// Runs `cfg` to completion. With `out` set, writes `metrics.csv`,
/// `rounds.jsonl`, `summary.json`, `effective_config.toml` and, when enabled,
/// `transcripts/round_XXXX.bin`.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>, exec: Execution) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg, exec)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("effective_config.toml");
        fs::write(&cfg_path, cfg.dump()).map_err(|e| Error::io(&cfg_path, e))?;
        if cfg.transcripts {
            let tdir = dir.join("transcripts");
            fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
            sim.set_transcript_dir(Some(tdir));
        }
    }
    let records = sim.run()?;
    let summary = summarize(cfg, &records);
    if let Some(dir) = out {
        write_metrics(&records, &dir.join("metrics.csv"))?;
        let jsonl = dir.join("rounds.jsonl");
        let mut f = fs::File::create(&jsonl).map_err(|e| Error::io(&jsonl, e))?;
        for r in &records {
            writeln!(f, "{}", serde_json::to_string(r).expect("record serialises"))
                .map_err(|e| Error::io(&jsonl, e))?;
        }
        let sp = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
        fs::write(&sp, text + "\n").map_err(|e| Error::io(&sp, e))?;
    }
    Ok(RunOutput { records, summary })
}

/// One run per value of `key`, each in `out/<key>=<value>`.
pub fn sweep(
    cfg: &ScenarioConfig,
    key: &str,
    values: &[String],
    out: Option<&Path>,
    exec: Execution,
) -> Result<Vec<(String, RunOutput)>> {
    let cfgs: Vec<(String, ScenarioConfig)> = values
        .iter()
        .map(|v| cfg.with_override(key, v).map(|c| (v.clone(), c)))
        .collect::<Result<_>>()?;
    cfgs.into_iter()
        .map(|(v, c)| {
            let dir = out.map(|o| o.join(format!("{key}={v}")));
            run_scenario(&c, dir.as_deref(), exec).map(|r| (v, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::metrics::read_metrics;

    #[test]
    fn writes_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig {
            rounds: 2,
            ..Default::default()
        };
        cfg.data.samples = 400;
        cfg.data.test_samples = 200;
        let out = run_scenario(&cfg, Some(dir.path()), Execution::Parallel).unwrap();
        assert_eq!(out.summary.rounds_run, 2);
        for f in ["metrics.csv", "rounds.jsonl", "summary.json", "effective_config.toml"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap().len(), 2);
        let back = ScenarioConfig::load(&dir.path().join("effective_config.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sweep_names_directories() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig {
            rounds: 1,
            ..Default::default()
        };
        cfg.data.samples = 400;
        cfg.data.test_samples = 200;
        let vals = vec!["3".to_string(), "4".to_string()];
        let runs = sweep(
            &cfg,
            "population.sample",
            &vals,
            Some(dir.path()),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].1.records[0].sampled.len(), 4);
        assert!(dir.path().join("population.sample=3/metrics.csv").exists());
    }
}
