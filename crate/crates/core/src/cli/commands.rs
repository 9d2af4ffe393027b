use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{ConfigError, RunConfig, Source};
use super::CliError;
use crate::calendar::{CalendarConfig, DayTable};
use crate::chain_ladder::{fit_cl_em, fit_yearly_cl, ChainLadderFit, YearlyChainLadder};
use crate::direct::{fit_direct, nowcast_direct, DirectFit};
use crate::em::{fit_em_with_table, EmFit};
use crate::evaluation::{
    eval_days, moving_window, rebuild_triangle, summarize, write_backtest_csv, BacktestPlan, EvalSettings, SpecName,
};
use crate::inference::{aiccd, cooks_distances, group_forecast, CellForecast, NowcastResult};
use crate::io::{daily_exposure, read_events, read_exposure, read_holidays, write_events, write_exposure, write_holidays};
use crate::simulate::{default_scenario, simulate_portfolio, SimulationConfig};
use crate::triangle::{EventRecord, RunoffTriangle};

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

pub struct Context {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub config_hash: String,
}

impl Context {
    pub fn new(command: &'static str, cfg: RunConfig) -> Result<Self, CliError> {
        let out = cfg.out.clone().ok_or_else(|| ConfigError::new("out", "missing output directory"))?;
        let hashed = RunConfig { out: None, ..cfg.clone() };
        let bytes = serde_json::to_vec(&hashed).map_err(other)?;
        let config_hash = hex::encode(Sha256::digest(&bytes));
        fs::create_dir_all(&out).map_err(|e| other(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self {
            command,
            cfg,
            out,
            config_hash,
        })
    }

    /// Write through a temporary file in the output directory, then rename.
    fn write<F>(&self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> crate::Result<()>,
    {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.out).map_err(other)?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            body(&mut w).map_err(other)?;
            w.flush().map_err(other)?;
        }
        tmp.persist(self.out.join(name)).map_err(other)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn manifest(&self, outputs: &[&str]) -> Result<(), CliError> {
        let m = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": self.config_hash,
            "seed": self.cfg.seed(),
            "created_utc": chrono::Utc::now().to_rfc3339(),
            "outputs": outputs,
        });
        self.write_json("manifest.json", &m)
    }
}

/// Events within the observation window with the calendar and daily exposure.
struct Dataset {
    cal: CalendarConfig,
    events: Vec<EventRecord>,
    exposure: Vec<f64>,
    /// Last observed day.
    end: usize,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| other(format!("cannot open {}: {e}", path.display())))
}

fn simulation_config(cfg: &RunConfig) -> Result<SimulationConfig, CliError> {
    let block = match cfg.source()? {
        Source::Simulation(s) => s,
        Source::Files(_) => return Err(ConfigError::new("simulation", "this command needs a [simulation] block").into()),
    };
    let mut sc = match &block.scenario {
        Some(p) => serde_json::from_reader(open(p)?)
            .map_err(|e| ConfigError::new("simulation.scenario", format!("{}: {e}", p.display())))?,
        None => default_scenario(block.days, block.seed),
    };
    sc.days = block.days;
    sc.seed = cfg.seed().unwrap_or(block.seed);
    if let Some(epoch) = block.epoch {
        sc.epoch = epoch;
    }
    Ok(sc)
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match cfg.source()? {
        Source::Simulation(_) => {
            let sim = simulate_portfolio(&simulation_config(cfg)?).map_err(CliError::Fit)?;
            Ok(Dataset {
                cal: sim.calendar.clone(),
                events: sim.observed_events(),
                exposure: sim.exposure.clone(),
                end: sim.config.days,
            })
        }
        Source::Files(d) => {
            let cal = match &d.holidays {
                Some(p) => read_holidays(open(p)?, d.epoch).map_err(other)?,
                None => CalendarConfig::new(d.epoch),
            };
            let events = read_events(open(&d.events)?, &cal).map_err(other)?;
            let end = match d.end_date {
                Some(date) => cal
                    .day_index(date)
                    .map_err(|e| ConfigError::new("data.end_date", e.to_string()))?,
                None => events.iter().map(|e| e.report_day()).max().unwrap_or(0),
            };
            if end == 0 {
                return Err(other("no events in the input"));
            }
            let events: Vec<EventRecord> = events.into_iter().filter(|e| e.report_day() <= end).collect();
            let monthly = read_exposure(open(&d.exposure)?).map_err(other)?;
            let exposure = daily_exposure(&monthly, &cal, end).map_err(other)?;
            Ok(Dataset {
                cal,
                events,
                exposure,
                end,
            })
        }
    }
}

fn day_of(cal: &CalendarConfig, date: Option<chrono::NaiveDate>, default: usize, key: &str, end: usize) -> Result<usize, CliError> {
    let Some(date) = date else {
        return Ok(default);
    };
    let t = cal.day_index(date).map_err(|e| ConfigError::new(key, e.to_string()))?;
    if t > end {
        return Err(ConfigError::new(key, format!("{date} is after the end of the data")).into());
    }
    Ok(t)
}

enum Fitted {
    Em { fit: Box<EmFit>, table: DayTable },
    ChainLadder(ChainLadderFit),
    Yearly(YearlyChainLadder),
    Direct { fit: Box<DirectFit>, table: DayTable },
}

fn fit_spec(tri: &RunoffTriangle, name: SpecName, settings: &EvalSettings) -> crate::Result<Fitted> {
    Ok(match name {
        SpecName::EmMatrix | SpecName::EmReverseTime => {
            let spec = settings.model_spec(name).expect("EM spec");
            let table = spec.day_table(tri)?;
            let fit = fit_em_with_table(tri, &spec, &settings.em_options(), &table)?;
            Fitted::Em {
                fit: Box::new(fit),
                table,
            }
        }
        SpecName::ChainLadder => Fitted::ChainLadder(fit_cl_em(tri)?),
        SpecName::YearlyCl => Fitted::Yearly(fit_yearly_cl(tri, settings.period_len)?),
        SpecName::DirectStructured | SpecName::DirectPerDay => {
            let spec = settings.direct_spec(name).expect("direct spec");
            let table = spec.day_table(tri)?;
            let fit = fit_direct(tri, &spec, &table)?;
            Fitted::Direct {
                fit: Box::new(fit),
                table,
            }
        }
    })
}

impl Fitted {
    fn forecast(&self, tri: &RunoffTriangle) -> crate::Result<CellForecast> {
        let tau = tri.tau();
        Ok(match self {
            Fitted::Em { fit, table } => CellForecast::from_model(&fit.model, tri, table),
            Fitted::ChainLadder(cl) => {
                let mut cells = Vec::new();
                let mut by_occurrence = vec![0.0; tau];
                for t in 1..=tau {
                    for d in tau - t + 1..tau {
                        let m = cl.lambda[t - 1] * cl.p[d];
                        by_occurrence[t - 1] += m;
                        cells.push((t, d, m));
                    }
                }
                CellForecast {
                    tau,
                    cells,
                    by_occurrence,
                }
            }
            Fitted::Yearly(y) => CellForecast {
                tau,
                cells: Vec::new(),
                by_occurrence: y.daily_ibnr.clone(),
            },
            Fitted::Direct { fit, table } => {
                let now = nowcast_direct(fit, tri, table)?;
                CellForecast {
                    tau,
                    cells: now.cells,
                    by_occurrence: now.by_occurrence,
                }
            }
        })
    }

    fn model_json(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            Fitted::Em { fit, .. } => Ok(json!({
                "model": serde_json::to_value(&fit.model)?,
                "loglik": fit.loglik,
                "iterations": fit.iterations,
                "converged": fit.converged,
            })),
            Fitted::ChainLadder(f) => serde_json::to_value(f),
            Fitted::Yearly(f) => serde_json::to_value(f),
            Fitted::Direct { fit, .. } => serde_json::to_value(fit),
        }
    }
}

struct Evaluated {
    data: Dataset,
    tri: RunoffTriangle,
    name: SpecName,
    fitted: Fitted,
}

fn fit_at_eval_date(ctx: &Context) -> Result<Evaluated, CliError> {
    let name = ctx.cfg.single_spec()?;
    let data = load(&ctx.cfg)?;
    let tau = day_of(&data.cal, ctx.cfg.eval_date, data.end, "eval_date", data.end)?;
    let tri = rebuild_triangle(&data.events, tau, &data.exposure, &data.cal).map_err(CliError::Fit)?;
    let fitted = fit_spec(&tri, name, &ctx.cfg.settings()).map_err(CliError::Fit)?;
    Ok(Evaluated {
        data,
        tri,
        name,
        fitted,
    })
}

pub fn simulate(ctx: &Context) -> Result<String, CliError> {
    let sc = simulation_config(&ctx.cfg)?;
    let sim = simulate_portfolio(&sc).map_err(CliError::Fit)?;
    let observed = sim.observed_events();
    ctx.write("events.csv", |w| write_events(w, &observed, &sim.calendar))?;
    ctx.write("exposure.csv", |w| write_exposure(w, &sim.monthly_exposure))?;
    ctx.write("holidays.csv", |w| write_holidays(w, &sim.calendar))?;
    ctx.write_json("truth.json", &json!({ "config": sc, "truth": sim.truth }))?;
    ctx.manifest(&["events.csv", "exposure.csv", "holidays.csv", "truth.json"])?;
    Ok(format!(
        "simulated {} events over {} days ({} reported after the window) -> {}",
        sim.truth.events,
        sc.days,
        sim.truth.reported_after_window,
        ctx.out.display()
    ))
}

pub fn fit(ctx: &Context) -> Result<String, CliError> {
    let ev = fit_at_eval_date(ctx)?;
    let date = ev.data.cal.date(ev.tri.tau()).map_err(other)?;
    let mut body = ev.fitted.model_json().map_err(other)?;
    body["spec"] = json!(ev.name.as_str());
    body["eval_date"] = json!(date.to_string());
    ctx.write_json("model.json", &body)?;
    let mut outputs = vec!["model.json"];
    let detail = match &ev.fitted {
        Fitted::Em { fit, .. } => {
            ctx.write("trace.csv", |w| fit.write_trace(w))?;
            outputs.push("trace.csv");
            format!(
                "log-likelihood {:.4} after {} iterations{}",
                fit.loglik,
                fit.iterations,
                if fit.converged { "" } else { " (not converged)" }
            )
        }
        Fitted::ChainLadder(cl) => format!("{} iterations", cl.iterations),
        Fitted::Yearly(y) => format!("{} periods", y.period_start.len()),
        Fitted::Direct { fit, .. } => format!("{} coefficients", fit.fit.coefficients.len()),
    };
    ctx.manifest(&outputs)?;
    Ok(format!("fit {} at {date}: {detail} -> {}", ev.name, ctx.out.display()))
}

fn write_nowcast(ctx: &Context, name: SpecName, date: &str, r: &NowcastResult) -> Result<(), CliError> {
    ctx.write("nowcast.csv", |w| r.write_csv(w))?;
    ctx.write_json(
        "nowcast.json",
        &json!({
            "spec": name.as_str(),
            "eval_date": date,
            "config_sha256": ctx.config_hash,
            "tau": r.tau,
            "grouping": r.grouping,
            "level": r.level,
            "simultaneous": r.simultaneous,
            "total": r.total,
            "total_lower": r.total_lower,
            "total_upper": r.total_upper,
            "beyond_horizon": r.beyond_horizon,
            "groups": r.groups.len(),
        }),
    )
}

pub fn nowcast(ctx: &Context) -> Result<String, CliError> {
    let grouping = ctx.cfg.grouping()?;
    let ev = fit_at_eval_date(ctx)?;
    let fc = ev.fitted.forecast(&ev.tri).map_err(CliError::Fit)?;
    let o = &ctx.cfg.options;
    let r = group_forecast(&ev.data.cal, &fc, grouping, o.level, o.simultaneous).map_err(other)?;
    let date = ev.data.cal.date(ev.tri.tau()).map_err(other)?.to_string();
    write_nowcast(ctx, ev.name, &date, &r)?;
    ctx.manifest(&["nowcast.csv", "nowcast.json"])?;
    Ok(format!(
        "nowcast {} at {date}: IBNR {:.1} [{}, {}] over {} {} groups -> {}",
        ev.name,
        r.total,
        r.total_lower,
        r.total_upper,
        r.groups.len(),
        grouping,
        ctx.out.display()
    ))
}

#[derive(Serialize)]
struct ParameterRow<'a> {
    name: &'a str,
    estimate: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct CookRow {
    occurrence_date: String,
    delay: usize,
    count: u64,
    fitted: f64,
    distance: f64,
}

pub fn diagnose(ctx: &Context) -> Result<String, CliError> {
    let name = ctx.cfg.single_spec()?;
    if !matches!(name, SpecName::EmMatrix | SpecName::EmReverseTime) {
        return Err(ConfigError::new("spec", format!("diagnose needs an EM spec, not {name}")).into());
    }
    let ev = fit_at_eval_date(ctx)?;
    let Fitted::Em { fit, table } = &ev.fitted else {
        unreachable!("EM spec checked above")
    };
    let (a, info) = aiccd(&fit.model, &ev.tri, table).map_err(CliError::Fit)?;
    let se = info.standard_errors().map_err(CliError::Fit)?;
    let (layout, x) = crate::inference::ParamLayout::from_model(&fit.model);
    let mut cooks = cooks_distances(&fit.model, &ev.tri, table, &info).map_err(CliError::Fit)?;
    cooks.sort_by(|p, q| q.distance.total_cmp(&p.distance).then((p.t, p.d).cmp(&(q.t, q.d))));
    cooks.truncate(ctx.cfg.options.top);
    let cal = &ev.data.cal;
    ctx.write("aiccd.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["spec_name", "q", "penalty", "aiccd", "parameters"])?;
        wtr.write_record([
            name.as_str().to_string(),
            a.q.to_string(),
            a.penalty.to_string(),
            a.value.to_string(),
            a.parameters.to_string(),
        ])?;
        wtr.flush()?;
        Ok(())
    })?;
    ctx.write("parameters.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for (i, n) in layout.names.iter().enumerate() {
            wtr.serialize(ParameterRow {
                name: n,
                estimate: x[i],
                std_error: se[i],
            })?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    ctx.write("cooks.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for c in &cooks {
            wtr.serialize(CookRow {
                occurrence_date: cal.date(c.t)?.to_string(),
                delay: c.d,
                count: c.count,
                fitted: c.fitted,
                distance: c.distance,
            })?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    ctx.manifest(&["aiccd.csv", "parameters.csv", "cooks.csv"])?;
    Ok(format!(
        "diagnose {name}: AICcd {:.2} (penalty {:.2}, {} parameters) -> {}",
        a.value,
        a.penalty,
        a.parameters,
        ctx.out.display()
    ))
}

pub fn backtest(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let data = load(cfg)?;
    let b = &cfg.backtest;
    let from_date = b.from.ok_or_else(|| ConfigError::new("backtest.from", "missing"))?;
    let from = day_of(&data.cal, Some(from_date), 0, "backtest.from", data.end)?;
    let to = day_of(&data.cal, b.to, data.end, "backtest.to", data.end)?;
    let horizon = day_of(&data.cal, b.horizon, data.end, "backtest.horizon", data.end)?;
    let days = eval_days(from, to, b.step.unwrap_or(1)).map_err(|e| ConfigError::new("backtest.from", e.to_string()))?;
    let specs = match (&b.specs, &cfg.spec) {
        (Some(s), _) => cfg.spec_names(s, "backtest.specs")?,
        (None, Some(s)) => cfg.spec_names(s, "spec")?,
        (None, None) => return Err(ConfigError::new("backtest.specs", "missing").into()),
    };
    let plan = BacktestPlan {
        specs,
        days,
        horizon,
        settings: cfg.settings(),
        workers: cfg.options.workers,
    };
    let rows = moving_window(&data.events, &data.exposure, &data.cal, &plan).map_err(CliError::Fit)?;
    let summary = summarize(&rows);
    ctx.write("backtest.csv", |w| write_backtest_csv(&rows, w))?;
    ctx.write_json("backtest_summary.json", &summary)?;
    ctx.manifest(&["backtest.csv", "backtest_summary.json"])?;
    let parts: Vec<String> = summary
        .iter()
        .map(|s| format!("{} MAPE {:.1}% coverage {:.2}", s.spec_name, s.mape_percent, s.coverage))
        .collect();
    Ok(format!(
        "backtest over {} dates: {} -> {}",
        plan.days.len(),
        parts.join("; "),
        ctx.out.display()
    ))
}
