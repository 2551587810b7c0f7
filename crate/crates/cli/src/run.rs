use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::config::{short_digest, Config};
use crate::error::CliError;
use crate::report::{write_metadata, write_reports, DeficitReport, Metadata};
use crate::suites::{check_seed, plan, resolve, Context};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub suite: String,
    pub config: Config,
    pub out: PathBuf,
    pub seed: u64,
    pub samples_multiplier: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<DeficitReport>,
}

impl RunSummary {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn get(&self, suite: &str, check: &str) -> Option<&DeficitReport> {
        self.reports.iter().find(|r| r.suite == suite && r.check == check)
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs the requested suites, writing reports.json, summary.csv and
/// metadata.json (plus per-suite CSV artifacts) into `opts.out`.
pub fn run(opts: &RunOptions) -> Result<RunSummary, CliError> {
    if !(opts.samples_multiplier >= 0.0 && opts.samples_multiplier.is_finite()) {
        return Err(CliError::BadArgument(format!("sample multiplier {}", opts.samples_multiplier)));
    }
    let suites = resolve(&opts.suite)?;
    std::fs::create_dir_all(&opts.out)?;
    let hash = opts.config.hash();
    let ctx = Context::new(opts.config.clone(), opts.seed, opts.samples_multiplier, opts.out.clone());
    let started = unix_now();
    let mut reports = Vec::new();
    let mut wall = BTreeMap::new();
    for suite in suites {
        let suite_start = Instant::now();
        for c in plan(suite, &opts.config, opts.samples_multiplier) {
            let seed = check_seed(opts.seed, suite, &c.id);
            let digest = short_digest(
                format!("{hash}:{suite}:{}:{}:{}", c.id, opts.seed, opts.samples_multiplier).as_bytes(),
            );
            let t0 = Instant::now();
            let result = catch_unwind(AssertUnwindSafe(|| (c.run)(&ctx, seed)))
                .unwrap_or_else(|p| Err(CliError::BadArgument(format!("check panicked: {}", panic_message(p)))));
            let dt = t0.elapsed().as_secs_f64();
            reports.push(match result {
                Ok(o) => DeficitReport::new(suite, &c.id, &hash, digest, o, dt),
                Err(e) => DeficitReport::failed(suite, &c.id, &hash, digest, &e, dt),
            });
        }
        if suite == "lp" {
            ctx.flush_witnesses()?;
        }
        wall.insert(suite.to_string(), suite_start.elapsed().as_secs_f64());
        write_reports(&opts.out, &reports)?;
    }
    write_metadata(
        &opts.out,
        &Metadata {
            version: env!("CARGO_PKG_VERSION").into(),
            suite: opts.suite.clone(),
            seed: opts.seed,
            samples_multiplier: opts.samples_multiplier,
            config_hash: hash,
            threads: rayon::current_num_threads(),
            started_unix_s: started,
            finished_unix_s: unix_now(),
            wall_time_s: wall,
        },
    )?;
    Ok(RunSummary { reports })
}

/// Human-readable plan: one block per check with statement, inputs and
/// tolerance.
pub fn describe(suite: &str, cfg: &Config) -> Result<String, CliError> {
    let mut out = String::new();
    for s in resolve(suite)? {
        writeln!(out, "suite {s}").expect("string write");
        for c in plan(s, cfg, 1.0) {
            writeln!(out, "  {}", c.id).expect("string write");
            writeln!(out, "    checks:    {}", c.statement).expect("string write");
            writeln!(out, "    inputs:    {}", c.inputs).expect("string write");
            if let Some(n) = c.samples {
                writeln!(out, "    samples:   {n}").expect("string write");
            }
            writeln!(out, "    tolerance: {}", c.tolerance).expect("string write");
        }
    }
    Ok(out)
}
