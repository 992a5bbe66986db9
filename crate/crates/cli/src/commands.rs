//! Subcommand bodies.

use std::collections::BTreeMap;
use std::error::Error;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use focusloom_core::sim::{audit_cadence, calibrate_detector, evaluate_classifier, generate, run_engine, Persona};
use focusloom_core::store::{iso_week_of, KeySource, KEY_FILE};
use focusloom_core::inference::DetectorConfig;
use focusloom_core::{
    Engine, EngineConfig, Millis, Outbound, Preference, RuleThresholds, Store, TraceRecord, WeeklySummary,
};
use focusloom_service::{port_from_env, Clock, NetAudit, Service, ServiceConfig};
use serde_json::json;

use crate::table::Table;

type CmdResult = Result<(), Box<dyn Error>>;

/// Body-doubling affirmation cadence bounds checked by `simulate`.
const AFFIRM_BOUNDS_S: (u64, u64) = (420, 720);

pub fn default_data_dir() -> PathBuf {
    let base = std::env::var_os("XDG_DATA_HOME")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".local/share")))
        .unwrap_or_else(|| PathBuf::from("."));
    base.join("focusloom")
}

fn now_ms() -> Millis {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as Millis)
        .unwrap_or(0)
}

fn has_store(dir: &Path) -> bool {
    dir.join(KEY_FILE).exists()
}

fn open_existing(dir: &Path) -> Result<Store, Box<dyn Error>> {
    if !has_store(dir) {
        return Err(format!("no data in {}", dir.display()).into());
    }
    Ok(Store::open(dir, KeySource::Existing)?)
}

pub struct RunOpts {
    pub dir: PathBuf,
    pub port: Option<u16>,
    pub dev: bool,
    pub ephemeral: bool,
    pub read_stdin: bool,
    pub audit_log: Option<PathBuf>,
}

pub fn run(opts: RunOpts) -> CmdResult {
    let port = match opts.port {
        Some(p) => p,
        None => port_from_env()?,
    };
    let store = if opts.ephemeral {
        None
    } else {
        Some(Store::open(&opts.dir, KeySource::LoadOrGenerate)?)
    };
    let engine = Engine::new(EngineConfig::default(), Preference::default(), store)?;
    let audit = match &opts.audit_log {
        Some(p) => NetAudit::with_log_file(p)?,
        None => NetAudit::new(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let cfg = ServiceConfig {
        port,
        debug: opts.dev,
        clock: Clock::System,
        ..ServiceConfig::default()
    };
    let svc = rt.block_on(Service::start(cfg, engine, audit))?;
    eprintln!("focusloom listening on http://{}", svc.addr());
    if opts.read_stdin {
        let handle = svc.engine().clone();
        std::thread::spawn(move || {
            let stdin = io::stdin();
            for (n, line) in stdin.lock().lines().enumerate() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                let rec: TraceRecord = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    Err(e) => {
                        eprintln!("stdin line {}: {e}", n + 1);
                        continue;
                    }
                };
                let r = handle.call_blocking(move |c| c.engine.ingest(&rec).map(|out| c.emit(out)));
                match r {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => eprintln!("stdin line {}: {e}", n + 1),
                    Err(_) => break,
                }
            }
        });
    }
    rt.block_on(tokio::signal::ctrl_c())?;
    rt.block_on(svc.shutdown())?;
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<(usize, TraceRecord)>, Box<dyn Error>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn replay(path: &Path, store_dir: Option<&Path>, print_events: bool, seed: u64, json_out: bool) -> CmdResult {
    let records = read_trace(path)?;
    let store = store_dir
        .map(|d| Store::open(d, KeySource::LoadOrGenerate))
        .transpose()?;
    let cfg = EngineConfig {
        seed,
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(cfg, Preference::default(), store)?;
    let mut counts: BTreeMap<&'static str, u64> = BTreeMap::new();
    let mut rejected = 0u64;
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    let mut emit = |out: Vec<Outbound>, w: &mut BufWriter<io::StdoutLock>, t: Millis| -> io::Result<()> {
        for o in out {
            *counts.entry(o.event_name()).or_default() += 1;
            if print_events {
                writeln!(w, "{}", json!({ "t": t, "event": o }))?;
            }
        }
        Ok(())
    };
    let mut last = None;
    for (line, rec) in &records {
        match engine.ingest(rec) {
            Ok(out) => emit(out, &mut w, rec.t)?,
            Err(e) => {
                rejected += 1;
                eprintln!("{}:{line}: {e}", path.display());
            }
        }
        last = Some(rec.t);
    }
    if let Some(t) = last {
        let out = engine.advance_to(t)?;
        emit(out, &mut w, t)?;
    }
    if json_out {
        let report = json!({
            "records": records.len(),
            "rejected": rejected,
            "emitted": counts,
            "final_state": engine.state(),
        });
        writeln!(w, "{report}")?;
    } else if !print_events {
        let mut t = Table::new(["event", "count"]);
        t.row(["records".to_string(), records.len().to_string()]);
        t.row(["rejected".to_string(), rejected.to_string()]);
        for (k, v) in &counts {
            t.row([k.to_string(), v.to_string()]);
        }
        write!(w, "{}", t.render())?;
        writeln!(w, "final state: {}", engine.state().label.as_str())?;
    }
    w.flush()?;
    Ok(())
}

fn load_persona(file: Option<&Path>, preset: Option<&str>) -> Result<Persona, Box<dyn Error>> {
    match (file, preset) {
        (Some(f), _) => Ok(serde_json::from_reader(BufReader::new(File::open(f)?))?),
        (None, Some(name)) => Persona::preset(name).ok_or_else(|| format!("unknown preset {name:?}").into()),
        (None, None) => Ok(Persona::default()),
    }
}

pub fn simulate(
    persona_file: Option<&Path>,
    preset: Option<&str>,
    hours: f64,
    seed: u64,
    out: Option<&Path>,
    json_out: bool,
) -> CmdResult {
    let persona = load_persona(persona_file, preset)?;
    let trace = generate(&persona, hours, seed)?;
    if let Some(p) = out {
        let mut w = BufWriter::new(File::create(p)?);
        trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    // Without a calibrated model the engine falls back to its online detector.
    let model = calibrate_detector(&persona, hours.max(8.0), seed ^ 1, &DetectorConfig::default()).ok();
    let classifier = evaluate_classifier(&trace, &RuleThresholds::default(), model.clone())?;
    let cfg = EngineConfig {
        seed,
        ..EngineConfig::default()
    };
    let prefs = Preference::default();
    let (_, log) = run_engine(&trace, &persona, prefs.clone(), cfg, model, None, true)?;
    let audit = audit_cadence(&log, &prefs, AFFIRM_BOUNDS_S.0, AFFIRM_BOUNDS_S.1);
    let acceptance = if log.responses == 0 {
        0.0
    } else {
        log.accepted as f64 / log.responses as f64
    };

    if json_out {
        let report = json!({
            "persona": persona.name,
            "hours": hours,
            "seed": seed,
            "records": trace.records.len(),
            "generator": trace.stats,
            "classifier": classifier,
            "policy": {
                "nudges": audit.nudges,
                "responses": log.responses,
                "accepted": log.accepted,
                "acceptance_rate": acceptance,
            },
            "cadence": audit,
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let s = &trace.stats;
    let mut t = Table::new(["generator", "value"]);
    t.row(["persona".to_string(), persona.name.clone()])
        .row(["hours".to_string(), format!("{hours}")])
        .row(["seed".to_string(), seed.to_string()])
        .row(["records".to_string(), trace.records.len().to_string()])
        .row(["drift episodes".to_string(), s.drift_episodes.to_string()])
        .row(["drift exposure h".to_string(), format!("{:.2}", s.drift_exposure_h)])
        .row(["hyperfocus blocks".to_string(), s.hyperfocus_blocks.to_string()])
        .row(["stalls".to_string(), s.stalls.to_string()])
        .row(["overruns".to_string(), s.overruns.to_string()])
        .row(["breaks".to_string(), s.breaks.to_string()]);
    println!("{}", t.render());
    println!("{}", classifier.table());
    let mut t = Table::new(["policy", "value"]);
    t.row(["nudges".to_string(), audit.nudges.to_string()])
        .row(["responses".to_string(), log.responses.to_string()])
        .row(["accepted".to_string(), log.accepted.to_string()])
        .row(["acceptance rate".to_string(), format!("{acceptance:.3}")])
        .row(["affirmations".to_string(), audit.affirmations.to_string()])
        .row(["quiet-hour nudges".to_string(), audit.quiet_hour_nudges.to_string()])
        .row(["short gaps".to_string(), audit.short_gaps.to_string()])
        .row(["affirmation gap violations".to_string(), audit.affirmation_gap_violations.to_string()]);
    print!("{}", t.render());
    Ok(())
}

fn summary_table(s: &WeeklySummary) -> String {
    let mut t = Table::new(["date", "focused min", "drift", "hyperfocus", "nudges", "accepted", "top context"]);
    for d in &s.days {
        let top = d
            .top_contexts
            .first()
            .map(|c| c.label.clone().unwrap_or_else(|| c.kind.generic_noun().to_string()))
            .unwrap_or_default();
        t.row([
            d.date.clone(),
            format!("{:.1}", d.focused_min),
            d.drift_episodes.to_string(),
            d.hyperfocus_episodes.to_string(),
            d.nudges_shown.to_string(),
            d.nudges_accepted.to_string(),
            top,
        ]);
    }
    format!("week {} (from {})\n{}", s.week, s.week_start, t.render())
}

pub fn summarize(dir: &Path, week: Option<&str>, json_out: bool) -> CmdResult {
    let store = open_existing(dir)?;
    let engine = Engine::new(EngineConfig::default(), Preference::default(), Some(store))?;
    let week = match week {
        Some(w) => w.to_string(),
        None => iso_week_of(now_ms(), engine.preferences().utc_offset_minutes),
    };
    let s = engine.weekly_summary(&week)?;
    if json_out {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", summary_table(&s));
    }
    Ok(())
}

pub fn purge(dir: &Path, yes: bool) -> CmdResult {
    if !yes {
        return Err(format!("this erases everything in {}; rerun with --yes", dir.display()).into());
    }
    let mut store = open_existing(dir)?;
    let token = store.purge_request();
    let report = store.purge(&token)?;
    println!(
        "erased {} records, removed {} files",
        report.records_erased,
        report.removed.len()
    );
    Ok(())
}

pub fn config_show(dir: &Path) -> CmdResult {
    let store = if has_store(dir) { Some(open_existing(dir)?) } else { None };
    let engine = Engine::new(EngineConfig::default(), Preference::default(), store)?;
    println!("{}", serde_json::to_string_pretty(engine.preferences())?);
    Ok(())
}

pub fn config_set(dir: &Path, file: &Path) -> CmdResult {
    let prefs: Preference = serde_json::from_reader(BufReader::new(File::open(file)?))?;
    let store = Store::open(dir, KeySource::LoadOrGenerate)?;
    let mut engine = Engine::new(EngineConfig::default(), Preference::default(), Some(store))?;
    engine.set_preferences(prefs, now_ms())?;
    println!("{}", serde_json::to_string_pretty(engine.preferences())?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persona_sources() {
        assert_eq!(load_persona(None, None).unwrap(), Persona::default());
        assert_eq!(load_persona(None, Some("steady")).unwrap().name, "steady");
        assert!(load_persona(None, Some("nope")).is_err());
    }

    #[test]
    fn summary_table_has_a_row_per_day() {
        let s = focusloom_core::store::summarize_records(&[], "2024-W01", 0, None).unwrap();
        let text = summary_table(&s);
        assert_eq!(text.lines().count(), 2 + s.days.len());
        assert!(text.starts_with("week 2024-W01"));
    }
}
