//! Scenario files, batch execution and JSON reports for the simulator.
//!
//! A scenario file is TOML. It names a session configuration, an optional
//! adversary, a seed and a repetition count, plus optional expectations
//! about the outcome. Running it yields a [`Report`] with one entry per
//! repetition.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fairdeliver::arbiter::{Mode, PartyId, Phase, Prices};
use fairdeliver::crypto::{GROUP_ID, HASH_ID, SIGNATURE_ID};
use fairdeliver::keytree::EncryptedKey;
use fairdeliver::protocols::{Role, Rule, SessionConfig, TimerConfig};
use fairdeliver::simnet::{self, check_invariants, AdversarySpec, Scenario, Transcript, ROUND_ORDER};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag of the report format.
pub const REPORT_SCHEMA: &str = "fairdeliver-report/1";

#[derive(Debug, Error)]
pub enum UsageError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: invalid configuration: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("no scenario files (*.toml) in {0}")]
    EmptySuite(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSpec {
    pub b_p: u64,
    pub b_c: u64,
    /// Defaults to a quarter of a full consumer payment.
    pub b_pf: Option<u64>,
}

/// Partial timer override; unset fields keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimerSpec {
    pub deliver: Option<u64>,
    pub dispute: Option<u64>,
    pub receive: Option<u64>,
    pub finish: Option<u64>,
    pub party: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryFile {
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub delay_all: bool,
}

/// Outcome assertions, checked against every session of every repetition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub phase: Option<Phase>,
    pub ctr: Option<u64>,
    pub plt: Option<bool>,
    pub pom_accepted: Option<bool>,
    pub wrong_rk_accepted: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub mode: Mode,
    pub n: u64,
    pub eta: usize,
    pub prices: Option<PriceSpec>,
    #[serde(default = "one")]
    pub theta: u64,
    #[serde(default = "one")]
    pub delta: u64,
    pub timers: Option<TimerSpec>,
    pub consumers: Option<u32>,
    #[serde(default)]
    pub adversary: AdversaryFile,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: u64,
    pub content_len: Option<usize>,
    #[serde(default)]
    pub expect: Expectations,
}

fn one() -> u64 {
    1
}

/// Command-line replacements for scenario fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub n: Option<u64>,
    pub eta: Option<usize>,
}

impl ScenarioFile {
    pub fn parse(path: &Path, text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = fs::read_to_string(path).map_err(|source| UsageError::Io { path: path.to_path_buf(), source })?;
        Self::parse(path, &text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(n) = o.n {
            self.n = n;
        }
        if let Some(eta) = o.eta {
            self.eta = eta;
        }
    }

    pub fn session_config(&self) -> SessionConfig {
        let mut cfg = SessionConfig::new(self.mode, self.n, self.eta);
        if let Some(p) = &self.prices {
            cfg.prices = match p.b_pf {
                Some(b_pf) => Prices { b_p: p.b_p, b_c: p.b_c, b_pf },
                None => Prices::with_default_penalty(self.n, p.b_p, p.b_c),
            };
        }
        cfg.theta = self.theta;
        cfg.delta = self.delta;
        if let Some(t) = &self.timers {
            let d = TimerConfig::defaults(self.n);
            cfg.timers = TimerConfig {
                deliver: t.deliver.unwrap_or(d.deliver),
                dispute: t.dispute.unwrap_or(d.dispute),
                receive: t.receive.unwrap_or(d.receive),
                finish: t.finish.unwrap_or(d.finish),
                party: t.party.unwrap_or(d.party),
            };
        }
        cfg
    }

    /// One simulator scenario per repetition, seeds counting up from `seed`.
    pub fn scenarios(&self, path: &Path) -> Result<Vec<Scenario>, UsageError> {
        let invalid = |message: String| UsageError::Invalid { path: path.to_path_buf(), message };
        let cfg = self.session_config();
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1".into()));
        }
        let spec = AdversarySpec { rules: self.adversary.rules.clone(), delay_all: self.adversary.delay_all };
        if spec.corrupted().len() > 2 {
            return Err(invalid(format!("{} corrupted roles; at most two are allowed", spec.corrupted().len())));
        }
        Ok((0..self.repetitions)
            .map(|k| Scenario {
                name: self.name.clone(),
                config: cfg,
                consumers: self.consumers,
                adversary: spec.clone(),
                seed: self.seed.wrapping_add(k),
                content_len: self.content_len,
                fault: Default::default(),
            })
            .collect())
    }
}

/// A property or expectation check on one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub property: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub rounds: u64,
    pub messages: u64,
    pub dropped_messages: u64,
    pub accepted_calls: u64,
    pub rejected_calls: u64,
    pub offchain_bytes: u64,
    pub onchain_setup_bytes: u64,
    pub onchain_session_bytes: BTreeMap<u64, u64>,
    /// Encrypted reveal set sizes, one per accepted reveal.
    pub reveal_set_sizes: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    pub round: u64,
    pub event: &'static str,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionSummary {
    pub nonce: u64,
    pub consumer: PartyId,
    pub outcome: Phase,
    pub ctr: u64,
    pub ctr_d: u64,
    pub ctr_p: u64,
    pub plt: bool,
    pub start_round: u64,
    pub end_round: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub file: PathBuf,
    pub repetition: u64,
    pub seed: u64,
    pub mode: Mode,
    pub n: u64,
    pub eta: usize,
    pub theta: u64,
    pub delta: u64,
    pub corrupted: Vec<Role>,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub sessions: Vec<SessionSummary>,
    pub final_phase: Phase,
    pub end_round: u64,
    pub initial_balances: BTreeMap<PartyId, u64>,
    pub final_balances: BTreeMap<PartyId, u64>,
    pub balance_deltas: BTreeMap<PartyId, i128>,
    pub residual_escrow: u64,
    pub counters: Counters,
    /// Round in which each consumer decrypted each chunk.
    pub decrypted_at: BTreeMap<PartyId, BTreeMap<u64, u64>>,
    pub events: Vec<EventRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BuildInfo {
    pub hash: &'static str,
    pub signature: &'static str,
    pub group: &'static str,
    pub round_order: [&'static str; 4],
    pub parallel: bool,
}

impl BuildInfo {
    pub fn current() -> Self {
        BuildInfo {
            hash: HASH_ID,
            signature: SIGNATURE_ID,
            group: GROUP_ID,
            round_order: ROUND_ORDER,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub scenarios: usize,
    pub runs: usize,
    pub passed: usize,
    pub failed: usize,
    /// Names of scenarios with at least one failing run.
    pub failing: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub build: BuildInfo,
    pub runs: Vec<RunReport>,
    pub summary: Summary,
}

impl Report {
    fn assemble(runs: Vec<RunReport>, scenarios: usize) -> Self {
        let passed = runs.iter().filter(|r| r.pass).count();
        let mut failing: Vec<String> = runs.iter().filter(|r| !r.pass).map(|r| r.scenario.clone()).collect();
        failing.dedup();
        Report {
            schema: REPORT_SCHEMA,
            build: BuildInfo::current(),
            summary: Summary { scenarios, runs: runs.len(), passed, failed: runs.len() - passed, failing },
            runs,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.summary.failed == 0
    }

    /// Process exit status: 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            1
        }
    }

    /// Human-readable lines: one per run, failing checks spelled out.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            let status = if r.pass { "PASS" } else { "FAIL" };
            let outcomes: Vec<String> = r.sessions.iter().map(|s| format!("{:?}/ctr={}", s.outcome, s.ctr)).collect();
            out.push_str(&format!(
                "{status} {} (seed {}, {:?}, n={}) rounds={} sessions=[{}]\n",
                r.scenario,
                r.seed,
                r.mode,
                r.n,
                r.end_round,
                outcomes.join(", ")
            ));
            for c in &r.checks {
                if !c.pass || c.name.starts_with("expect") {
                    let s = if c.pass { "ok" } else { "FAILED" };
                    out.push_str(&format!("    {s} {}: {}\n", c.name, c.detail));
                }
            }
        }
        let s = &self.summary;
        out.push_str(&format!("{} scenarios, {} runs, {} passed, {} failed\n", s.scenarios, s.runs, s.passed, s.failed));
        if !s.failing.is_empty() {
            out.push_str(&format!("failing: {}\n", s.failing.join(", ")));
        }
        out
    }
}

fn accepted(t: &Transcript, call: &str) -> bool {
    t.accepted_calls.iter().any(|c| c.call == call)
}

fn expectation_checks(t: &Transcript, e: &Expectations) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, property: &str, pass: bool, detail: String| {
        out.push(Check { name: name.into(), property: property.into(), pass, detail });
    };
    if let Some(phase) = e.phase {
        let got: Vec<Phase> = t.sessions.iter().map(|s| s.outcome).collect();
        let pass = !got.is_empty() && got.iter().all(|p| *p == phase);
        push("expect_phase", "every session ends in the expected phase", pass, format!("expected {phase:?}, got {got:?}"));
    }
    if let Some(ctr) = e.ctr {
        let got: Vec<u64> = t.sessions.iter().map(|s| s.ctr).collect();
        let pass = !got.is_empty() && got.iter().all(|c| *c == ctr);
        push("expect_ctr", "every session settles the expected counter", pass, format!("expected {ctr}, got {got:?}"));
    }
    if let Some(plt) = e.plt {
        let got: Vec<bool> = t.sessions.iter().map(|s| s.plt).collect();
        let pass = !got.is_empty() && got.iter().all(|p| *p == plt);
        push("expect_plt", "provider penalty flag", pass, format!("expected {plt}, got {got:?}"));
    }
    if let Some(want) = e.pom_accepted {
        let got = accepted(t, "pom_download") || accepted(t, "pom_stream");
        let name = if want { "PoM accepted" } else { "PoM not accepted" };
        push("expect_pom", name, got == want, format!("{name}: expected {want}, got {got}"));
    }
    if let Some(want) = e.wrong_rk_accepted {
        let got = accepted(t, "wrong_rk");
        let name = if want { "wrong reveal set complaint accepted" } else { "wrong reveal set complaint not accepted" };
        push("expect_wrong_rk", name, got == want, format!("{name}: expected {want}, got {got}"));
    }
    out
}

fn counters(t: &Transcript) -> Counters {
    let calls = t.rounds.iter().flat_map(|r| r.calls.iter());
    let rejected = calls.filter(|c| !c.accepted).count() as u64;
    let mut onchain = t.onchain_bytes();
    let setup = onchain.remove(&None).unwrap_or(0);
    Counters {
        rounds: t.end_round,
        messages: t.messages().count() as u64,
        dropped_messages: t.messages().filter(|m| m.dropped).count() as u64,
        accepted_calls: t.accepted_calls.len() as u64,
        rejected_calls: rejected,
        offchain_bytes: t.messages().filter(|m| !m.dropped).map(|m| m.bytes as u64).sum(),
        onchain_setup_bytes: setup,
        onchain_session_bytes: onchain.into_iter().filter_map(|(k, v)| k.map(|k| (k, v))).collect(),
        reveal_set_sizes: t
            .accepted_calls
            .iter()
            .filter(|c| c.call == "reveal_keys")
            .map(|c| (c.bytes.saturating_sub(2) / EncryptedKey::LEN) as u64)
            .collect(),
    }
}

/// Runs one scenario and checks every property plus the file's expectations.
pub fn run_one(sc: &Scenario, file: &Path, repetition: u64, expect: &Expectations) -> Result<RunReport, UsageError> {
    let t = simnet::run(sc).map_err(|e| UsageError::Invalid { path: file.to_path_buf(), message: e.to_string() })?;
    let mut checks: Vec<Check> = check_invariants(&t)
        .into_iter()
        .map(|v| Check { name: v.name.into(), property: v.property.into(), pass: v.pass, detail: v.detail })
        .collect();
    checks.extend(expectation_checks(&t, expect));
    let pass = checks.iter().all(|c| c.pass);
    let balance_deltas = t.final_balances.keys().map(|p| (*p, t.balance_delta(*p))).collect();
    let events = t
        .rounds
        .iter()
        .flat_map(|r| r.events.iter().map(move |e| EventRecord { round: r.round, event: e }))
        .collect();
    let c = &sc.config;
    Ok(RunReport {
        scenario: sc.name.clone(),
        file: file.to_path_buf(),
        repetition,
        seed: sc.seed,
        mode: c.mode,
        n: c.n,
        eta: c.eta,
        theta: c.theta,
        delta: c.delta,
        corrupted: sc.adversary.corrupted().into_iter().collect(),
        pass,
        checks,
        sessions: t
            .sessions
            .iter()
            .map(|s| SessionSummary {
                nonce: s.nonce,
                consumer: s.consumer,
                outcome: s.outcome,
                ctr: s.ctr,
                ctr_d: s.ctr_d,
                ctr_p: s.ctr_p,
                plt: s.plt,
                start_round: s.start_round,
                end_round: s.end_round,
            })
            .collect(),
        final_phase: t.final_phase,
        end_round: t.end_round,
        counters: counters(&t),
        decrypted_at: t.consumers.iter().map(|c| (c.id, c.decrypted_at.clone())).collect(),
        initial_balances: t.initial_balances.clone(),
        final_balances: t.final_balances.clone(),
        balance_deltas,
        residual_escrow: t.residual_escrow,
        events,
    })
}

struct Job {
    file: PathBuf,
    repetition: u64,
    scenario: Scenario,
    expect: Expectations,
}

fn jobs_for(path: &Path, overrides: &Overrides) -> Result<Vec<Job>, UsageError> {
    let mut sf = ScenarioFile::load(path)?;
    sf.apply(overrides);
    Ok(sf
        .scenarios(path)?
        .into_iter()
        .enumerate()
        .map(|(k, scenario)| Job { file: path.to_path_buf(), repetition: k as u64, scenario, expect: sf.expect.clone() })
        .collect())
}

fn execute(jobs: Vec<Job>) -> Result<Vec<RunReport>, UsageError> {
    let run = |j: &Job| run_one(&j.scenario, &j.file, j.repetition, &j.expect);
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = jobs.iter().map(run).collect();
    results.into_iter().collect()
}

/// Runs every repetition of one scenario file.
pub fn run_scenario(path: &Path, overrides: &Overrides) -> Result<Report, UsageError> {
    let runs = execute(jobs_for(path, overrides)?)?;
    Ok(Report::assemble(runs, 1))
}

/// Scenario files in `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, UsageError> {
    let entries = fs::read_dir(dir).map_err(|source| UsageError::Io { path: dir.to_path_buf(), source })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(UsageError::EmptySuite(dir.to_path_buf()));
    }
    Ok(files)
}

/// Runs every scenario file in `dir`. Runs execute in parallel; the report
/// lists them in file order.
pub fn suite(dir: &Path, overrides: &Overrides) -> Result<Report, UsageError> {
    let files = scenario_files(dir)?;
    let mut jobs = Vec::new();
    for f in &files {
        jobs.extend(jobs_for(f, overrides)?);
    }
    let runs = execute(jobs)?;
    Ok(Report::assemble(runs, files.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
mode = "stream"
n = 4
eta = 64
"#;

    #[test]
    fn defaults_fill_in() {
        let sf = ScenarioFile::parse(Path::new("t.toml"), MINIMAL).unwrap();
        assert_eq!((sf.theta, sf.delta, sf.repetitions, sf.seed), (1, 1, 1, 0));
        assert_eq!(sf.session_config(), SessionConfig::new(Mode::Stream, 4, 64));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = format!("{MINIMAL}\ncolour = 3\n");
        assert!(matches!(ScenarioFile::parse(Path::new("t.toml"), &text), Err(UsageError::Parse { .. })));
    }

    #[test]
    fn overrides_replace_fields() {
        let mut sf = ScenarioFile::parse(Path::new("t.toml"), MINIMAL).unwrap();
        sf.apply(&Overrides { seed: Some(9), mode: Some(Mode::Download), n: Some(16), eta: Some(32) });
        assert_eq!((sf.seed, sf.mode, sf.n, sf.eta), (9, Mode::Download, 16, 32));
    }

    #[test]
    fn invalid_config_is_a_usage_error() {
        let text = MINIMAL.replace("n = 4", "n = 6");
        let sf = ScenarioFile::parse(Path::new("t.toml"), &text).unwrap();
        assert!(matches!(sf.scenarios(Path::new("t.toml")), Err(UsageError::Invalid { .. })));
    }

    #[test]
    fn repetitions_use_consecutive_seeds() {
        let text = format!("{MINIMAL}\nseed = 5\nrepetitions = 3\n");
        let sf = ScenarioFile::parse(Path::new("t.toml"), &text).unwrap();
        let seeds: Vec<u64> = sf.scenarios(Path::new("t.toml")).unwrap().iter().map(|s| s.seed).collect();
        assert_eq!(seeds, vec![5, 6, 7]);
    }

    #[test]
    fn partial_timers_keep_defaults() {
        let text = format!("{MINIMAL}\n[timers]\ndispute = 12\n");
        let sf = ScenarioFile::parse(Path::new("t.toml"), &text).unwrap();
        let t = sf.session_config().timers;
        assert_eq!(t, TimerConfig { dispute: 12, ..TimerConfig::defaults(4) });
    }

    #[test]
    fn rules_parse_from_toml() {
        let text = format!(
            "{MINIMAL}\n[[adversary.rules]]\nparty = \"P\"\naction = {{ wrong_reveal_key = {{ index = 2 }} }}\n\
             [[adversary.rules]]\nparty = \"C\"\ntrigger = {{ at_round = 4 }}\naction = \"abort\"\n"
        );
        let sf = ScenarioFile::parse(Path::new("t.toml"), &text).unwrap();
        assert_eq!(sf.adversary.rules.len(), 2);
        let sc = sf.scenarios(Path::new("t.toml")).unwrap();
        assert_eq!(sc[0].adversary.corrupted().len(), 2);
    }
}
