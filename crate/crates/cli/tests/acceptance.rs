//! Acceptance criteria 1-8 on the shipped configuration. Each criterion
//! prints one PASS/FAIL line; the test fails if any criterion fails.
//! The command-line behaviour tests share this binary so that they still
//! run when a criterion fails.


use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ineqlab::report::DeficitReport;
use ineqlab::suites::Context;
use ineqlab::{run, Config, RunOptions, RunSummary};

const SEED: u64 = 0;
const BUBBLE_TOL: f64 = 1e-3;

fn shipped() -> (Config, PathBuf) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
    (Config::load(&path).expect("shipped config parses"), path)
}

fn run_suite(cfg: &Config, suite: &str, out: &Path) -> (RunSummary, f64) {
    let t = Instant::now();
    let s = run(&RunOptions {
        suite: suite.into(),
        config: cfg.clone(),
        out: out.join(suite),
        seed: SEED,
        samples_multiplier: 1.0,
    })
    .expect("suite runs");
    (s, t.elapsed().as_secs_f64())
}

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new() -> Self {
        Self {
            pass: true,
            detail: String::new(),
        }
    }

    fn require(&mut self, ok: bool, what: impl AsRef<str>) {
        if !ok {
            self.pass = false;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(what.as_ref());
        }
    }

    /// The named report exists, passes, and sampled at least `min_samples`.
    fn report(&mut self, s: &RunSummary, suite: &str, check: &str, min_samples: usize) {
        match s.get(suite, check) {
            Some(r) => {
                self.require(r.pass, format!("{check} failed (margin {:?}, budget {:e}, {})", r.margin, r.budget, r.note));
                self.require(r.samples >= min_samples, format!("{check} used {} samples", r.samples));
            }
            None => self.require(false, format!("{check} missing")),
        }
    }

    fn prefixed(&mut self, s: &RunSummary, suite: &str, prefix: &str) -> Vec<DeficitReport> {
        let rows: Vec<DeficitReport> = s
            .reports
            .iter()
            .filter(|r| r.suite == suite && r.check.starts_with(prefix))
            .cloned()
            .collect();
        for r in &rows {
            self.require(r.pass, format!("{} failed (margin {:?}, budget {:e})", r.check, r.margin, r.budget));
        }
        rows
    }
}

fn print(n: usize, v: &Verdict, summary: &str) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    let detail = if v.detail.is_empty() { String::new() } else { format!(" [{}]", v.detail) };
    // Written directly so the lines appear whether or not the test passes.
    let lead = if n == 1 { "\n" } else { "" };
    let _ = writeln!(std::io::stderr(), "{lead}criterion {n}: {status} {summary}{detail}");
}

fn violations(r: &DeficitReport) -> f64 {
    r.measured.get("violations").copied().flatten().unwrap_or(f64::NAN)
}

fn csv_bodies(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map(|d| d.filter_map(|e| e.ok()).map(|e| e.path()).collect())
        .unwrap_or_else(|_| Vec::new());
    files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap_or_default()))
        .collect()
}

#[test]
fn acceptance() {
    let (cfg, cfg_path) = shipped();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let mut all = Vec::new();

    // 1 and 2: strong convexity.
    let (lp, lp_time) = run_suite(&cfg, "lp", out);
    let mut c1 = Verdict::new();
    for p in [1.1, 1.25, 1.5, 1.75, 2.0] {
        let id = format!("convexity_p{p}");
        c1.report(&lp, "lp", &id, 10_000);
        if let Some(r) = lp.get("lp", &id) {
            c1.require(r.budget == 1e-9, format!("{id} budget {}", r.budget));
            c1.require(violations(r) == 0.0, format!("{id} violations"));
        }
    }
    c1.require(lp_time <= 60.0, format!("lp suite took {lp_time:.1} s"));
    print(1, &c1, &format!("p <= 2 convexity, 1e4 pairs per p, lp suite {lp_time:.1} s"));
    all.push(c1.pass);

    let mut c2 = Verdict::new();
    for p in [2.5, 3.0, 4.0, 6.0] {
        let id = format!("convexity_p{p}");
        c2.report(&lp, "lp", &id, 10_000);
        if let Some(r) = lp.get("lp", &id) {
            c2.require(violations(r) == 0.0, format!("{id} violations"));
        }
        let w = format!("lambda_convexity_fails_p{p}");
        c2.report(&lp, "lp", &w, 1);
        if let Some(r) = lp.get("lp", &w) {
            c2.require(r.bound == Some(1e-3), format!("{w} bound {:?}", r.bound));
        }
    }
    print(2, &c2, "p > 2 convexity and lambda-convexity failure witnesses");
    all.push(c2.pass);

    // 3: gradient continuity.
    let mut c3 = Verdict::new();
    for p in [1.25, 1.5, 3.0, 4.0] {
        let id = format!("continuity_p{p}");
        c3.report(&lp, "lp", &id, 900);
        if let Some(r) = lp.get("lp", &id) {
            c3.require(r.bound == Some(1.0) && r.budget == 1e-9, format!("{id} tolerance"));
        }
    }
    c3.require(cfg.lp.holder_radius == 2.0, "radius differs from 2");
    print(3, &c3, "gradient continuity ratios <= 1 + 1e-9");
    all.push(c3.pass);

    // 4: duality core.
    let (du, _) = run_suite(&cfg, "duality", out);
    let mut c4 = Verdict::new();
    c4.report(&du, "duality", "biconjugate_parabola", 1);
    c4.report(&du, "duality", "sqex_containment", 1);
    c4.report(&du, "duality", "young_gaps", 10_000);
    c4.report(&du, "duality", "deficit_duality", 1_000);
    c4.report(&du, "duality", "inf_convolution", 3);
    for (id, budget) in [("young_gaps", 1e-12), ("deficit_duality", 1e-12)] {
        c4.require(du.get("duality", id).is_some_and(|r| r.budget == budget), format!("{id} budget"));
    }
    c4.require(
        du.get("duality", "inf_convolution").is_some_and(|r| r.bound == Some(1e-10)),
        "inf_convolution bound",
    );
    print(4, &c4, "biconjugate, subgradient containment, Young gaps, deficit duality, inf-convolution");
    all.push(c4.pass);

    // 5: bubble optimality and nonnegativity with the bubble-floor budget.
    let t5 = Instant::now();
    let (sob, _) = run_suite(&cfg, "sobolev", out);
    let (hls, _) = run_suite(&cfg, "hls", out);
    let ctx = Context::new(cfg.clone(), SEED, 1.0, out.join("c5"));
    let state = ctx.sobolev().expect("grid set-up");
    let primal_max = state.primal_rel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dual_max = state.dual_rel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let t5 = t5.elapsed().as_secs_f64();
    let mut c5 = Verdict::new();
    c5.require(state.primal_rel.len() == 20, "expected 20 bubbles");
    c5.require(
        primal_max <= BUBBLE_TOL,
        format!("max relative bubble deficit {primal_max:.3e} > {BUBBLE_TOL:e}"),
    );
    c5.require(
        dual_max <= BUBBLE_TOL,
        format!("max relative HLS deficit of grad E(bubble) {dual_max:.3e} > {BUBBLE_TOL:e}"),
    );
    c5.report(&sob, "sobolev", "sobolev_nonnegativity", 10_000);
    c5.report(&hls, "hls", "hls_nonnegativity", 10_000);
    for (s, suite, id) in [(&sob, "sobolev", "sobolev_nonnegativity"), (&hls, "hls", "hls_nonnegativity")] {
        let floor = if suite == "sobolev" { state.primal_floor() } else { state.dual_floor() };
        c5.require(
            s.get(suite, id).is_some_and(|r| (r.budget - 3.0 * floor).abs() <= 1e-15 * floor),
            format!("{id} budget is not 3x the floor"),
        );
    }
    c5.require(t5 <= 300.0, format!("took {t5:.1} s"));
    print(
        5,
        &c5,
        &format!(
            "bubble deficits {primal_max:.2e} / {dual_max:.2e} at N = {}, L = {}; nonnegativity within 3x floor; {t5:.1} s",
            cfg.sobolev.points, cfg.sobolev.half_width
        ),
    );
    all.push(c5.pass);

    // 6: transfer inequality and the kappa* formula.
    let (tr, _) = run_suite(&cfg, "transfer", out);
    let mut c6 = Verdict::new();
    c6.report(&tr, "transfer", "transfer_inequality", 1_000);
    c6.report(&tr, "transfer", "kappa_star_formula", 1);
    c6.require(
        tr.get("transfer", "kappa_star_formula")
            .and_then(|r| r.measured.get("clamp_jump").copied().flatten())
            .is_some_and(|j| j <= 1e-14),
        "clamp-point jump above 1e-14",
    );
    print(6, &c6, "transfer slack within budget on 1e3 samples; kappa* exact");
    all.push(c6.pass);

    // 7: fast diffusion.
    let (fl, fl_time) = run_suite(&cfg, "flow", out);
    let mut c7 = Verdict::new();
    let f = &cfg.flow;
    c7.require(
        f.n == 3 && f.m == 2.0 / 3.0 && f.m_points == 2048 && f.t_end == 5.0,
        "flow configuration differs from the criterion",
    );
    c7.report(&fl, "flow", "steady_step", 1);
    c7.require(fl.get("flow", "steady_step").is_some_and(|r| r.bound == Some(1e-6)), "steady tolerance");
    let mass = c7.prefixed(&fl, "flow", "mass_");
    c7.require(mass.len() == 5 && mass.iter().all(|r| r.bound == Some(1e-4)), "mass rows");
    let mono = c7.prefixed(&fl, "flow", "monotone_");
    c7.require(mono.len() == 5, "five monotonicity rows");
    let l1 = c7.prefixed(&fl, "flow", "l1_decrease_").len();
    c7.require(l1 == 4, "four L1 rows");
    let halving = c7.prefixed(&fl, "flow", "dt_halving_").len();
    c7.require(halving == 4, "four halving rows");
    c7.require(fl_time <= 600.0, format!("took {fl_time:.1} s"));
    print(7, &c7, &format!("fast diffusion corpus, {fl_time:.1} s"));
    all.push(c7.pass);

    // 8: determinism and exit status of the binary.
    let mut c8 = Verdict::new();
    let mut bodies = Vec::new();
    for k in 0..2 {
        let d = out.join(format!("all{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_ineqlab"))
            .args(["run", "--suite", "all", "--seed", &SEED.to_string(), "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&d)
            .output()
            .expect("binary runs");
        c8.require(status.status.code() == Some(0), format!("run {k} exited with {:?}", status.status.code()));
        bodies.push(csv_bodies(&d));
    }
    c8.require(bodies[0].len() >= 7, "expected summary, witness and flow CSVs");
    c8.require(bodies[0] == bodies[1], "CSV bodies differ between runs");
    print(8, &c8, &format!("two `run --suite all` invocations, {} CSV files compared", bodies[0].len()));
    all.push(c8.pass);

    let failed: Vec<usize> = all.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
