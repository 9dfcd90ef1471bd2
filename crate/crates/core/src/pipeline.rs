//! The commands behind the `odcast` binary. Each reads only the inputs it is
//! given and writes only under its output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{assemble_windows, index_csv, split, split_day, NormStats, SupervisedWindow};
use crate::error::{Error, Result};
use crate::evaluation::{compare, stratified_eval, time_series_csv, EvaluationReport, ImprovementTable, Method};
use crate::gradcheck::{suite, SuiteEntry};
use crate::kalman::{
    estimate_assignment, estimate_measurement_noise, estimate_transition, KalmanConfig, KalmanFilter, MeasurementModel,
};
use crate::model::{Checkpoint, FlGcnParams, HeadVariant, ModelTopology};
use crate::simulator::{
    closure_from_csv, closure_to_csv, link_from_csv, link_to_csv, make_historical, od_extent, od_from_csv, od_to_csv,
    read_to_string, simulate_panel, FlowPanel,
};
use crate::topology::DirectedNetwork;
use crate::training::{history_csv, train, EpochLoss};

pub const NETWORK_FILE: &str = "network.txt";
pub const OD_FILE: &str = "od.csv";
pub const LINK_FILE: &str = "link.csv";
pub const CLOSURE_FILE: &str = "closure.csv";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const KALMAN_FILE: &str = "kalman.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TABLES: &str = "report.txt";
pub const IMPROVEMENT_FILE: &str = "improvement.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";
pub const SERIES_DIR: &str = "series";

pub const KALMAN_HEADER: &str = "day,interval,step,origin,destination,flow";

pub const VARIANTS: [HeadVariant; 2] = [HeadVariant::Cnn, HeadVariant::Fcn];

pub fn checkpoint_file(variant: HeadVariant, horizon: usize) -> String {
    format!("flgcn-{}-h{horizon}.ckpt", variant.label())
}

pub fn loss_file(variant: HeadVariant, horizon: usize) -> String {
    format!("loss-{}-h{horizon}.csv", variant.label())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn banner_text(banner: &str) -> String {
    banner.lines().map(|l| format!("# {l}\n")).collect()
}

/// Simulated panel for the configured corridor.
pub fn simulate(config: &RunConfig) -> Result<(DirectedNetwork, FlowPanel)> {
    let net = config.network()?;
    let n = &config.network;
    let panel = simulate_panel(&config.demand_model(&net), config.demand.days, &net, n.speed_mph, n.interval_minutes, config.demand.count_mode)?;
    Ok((net, panel))
}

/// Writes the network and the O-D, link and closure panels.
pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (net, panel) = simulate(config)?;
    ensure_dir(out)?;
    let banner = config.banner();
    Ok(vec![
        write(&out.join(NETWORK_FILE), banner_text(&banner) + &net.to_text())?,
        write(&out.join(OD_FILE), od_to_csv(&panel.od, net.od_pairs(), &banner))?,
        write(&out.join(LINK_FILE), link_to_csv(&panel.link, &net, &banner))?,
        write(&out.join(CLOSURE_FILE), closure_to_csv(&panel.closure, &net, &banner))?,
    ])
}

/// A panel read back from disk with its historical counterpart.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub net: DirectedNetwork,
    pub panel: FlowPanel,
    pub hist: FlowPanel,
}

pub fn load_data(config: &RunConfig, data_dir: &Path) -> Result<LoadedData> {
    let path = data_dir.join(NETWORK_FILE);
    let net = DirectedNetwork::from_text(&read_to_string(&path)?, &path.display().to_string())?;
    let path = data_dir.join(OD_FILE);
    let source = path.display().to_string();
    let text = read_to_string(&path)?;
    let (days, intervals) = od_extent(&text, &source)?;
    let od = od_from_csv(&text, net.od_pairs(), days, intervals, &source)?;
    let path = data_dir.join(LINK_FILE);
    let link = link_from_csv(&read_to_string(&path)?, &net, days, intervals, &path.display().to_string())?;
    let path = data_dir.join(CLOSURE_FILE);
    let closure = closure_from_csv(&read_to_string(&path)?, &net, days, &path.display().to_string())?;
    let panel = FlowPanel { od, link, closure, first_valid_day: 0 };
    let hist = make_historical(&panel, config.dataset.lookback_days)?;
    Ok(LoadedData { net, panel, hist })
}

/// Windows for every configured horizon, split by day, with train maxima.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub windows: Vec<SupervisedWindow>,
    pub cut_day: usize,
    pub norm: NormStats,
}

pub fn prepare(config: &RunConfig, data: &LoadedData) -> Result<Prepared> {
    let set = assemble_windows(&data.panel, &data.hist, data.net.node_count(), config.model.k_link_lags, &config.dataset.horizons)?;
    if let Some(why) = set.diagnostic {
        return Err(Error::InsufficientData(why));
    }
    let cut_day = split_day(data.panel.days(), config.dataset.lookback_days, config.dataset.train_fraction)?;
    let parts = split(set.windows.clone(), cut_day)?;
    let norm = NormStats::from_windows(&parts.train);
    Ok(Prepared { windows: set.windows, cut_day, norm })
}

/// Result of one (variant, horizon) training job.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub variant: HeadVariant,
    pub horizon: usize,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Trains both variants at every horizon. Jobs are independent and run in
/// parallel; each one is deterministic on its own.
pub fn train_models(config: &RunConfig, data: &LoadedData, prepared: &Prepared) -> Result<Vec<TrainedModel>> {
    let topology = ModelTopology::new(&data.net);
    let train_windows: Vec<SupervisedWindow> =
        prepared.windows.iter().filter(|w| w.meta.day < prepared.cut_day).map(|w| prepared.norm.normalize(w)).collect();
    let jobs: Vec<(HeadVariant, usize)> =
        VARIANTS.iter().flat_map(|&v| config.dataset.horizons.iter().map(move |&h| (v, h))).collect();
    jobs.par_iter()
        .map(|&(variant, horizon)| {
            let model_config = config.model_config(variant);
            let init = FlGcnParams::init(&model_config, data.net.node_count(), config.seed)?;
            let outcome = train(&train_windows, &topology, init, &config.train_config(variant, horizon))?;
            let provenance = format!("{}\nvariant {} horizon {horizon} best_epoch {}", config.banner(), variant.label(), outcome.best_epoch);
            Ok(TrainedModel {
                variant,
                horizon,
                checkpoint: Checkpoint { params: outcome.params, norm: prepared.norm, provenance },
                history: outcome.history,
                best_epoch: outcome.best_epoch,
            })
        })
        .collect()
}

/// Writes checkpoints, loss logs and the window index.
pub fn cmd_train(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<Vec<TrainedModel>> {
    let data = load_data(config, data_dir)?;
    let prepared = prepare(config, &data)?;
    let models = train_models(config, &data, &prepared)?;
    ensure_dir(out)?;
    let banner = config.banner();
    write(&out.join(WINDOWS_FILE), index_csv(&prepared.windows, prepared.cut_day, &banner))?;
    for m in &models {
        m.checkpoint.save(&out.join(checkpoint_file(m.variant, m.horizon)))?;
        let log_banner = format!("{banner}\nvariant {} horizon {} best_epoch {}", m.variant.label(), m.horizon, m.best_epoch);
        write(&out.join(loss_file(m.variant, m.horizon)), history_csv(&m.history, &log_banner))?;
    }
    Ok(models)
}

/// Kalman forecasts keyed by `(day, target interval, step)`.
pub type KalmanForecasts = BTreeMap<(usize, usize, usize), Vec<f64>>;

/// Estimates the filter on training days and forecasts every day after the
/// historical warm-up.
pub fn run_kalman(config: &RunConfig, data: &LoadedData) -> Result<KalmanForecasts> {
    let n = &config.network;
    let lookback = config.dataset.lookback_days;
    let cut_day = split_day(data.panel.days(), lookback, config.dataset.train_fraction)?;
    let train_days: Vec<usize> = (lookback..cut_day).collect();
    let p_prime = config.p_prime(&data.net)?;
    let kconfig = KalmanConfig::new(config.kalman.q_prime, p_prime)?;
    let transition = estimate_transition(&data.panel.od, &data.hist.od, &train_days, kconfig.q_prime)?;
    let assignment =
        estimate_assignment(&data.net, &data.panel.od, &data.panel.link, &train_days, p_prime, n.speed_mph, n.interval_minutes)?;
    let measurement = MeasurementModel {
        a_blocks: assignment.blocks,
        r_diag: estimate_measurement_noise(&data.panel.link, &data.hist.link, &train_days),
    };
    let filter = KalmanFilter::new(&transition, &measurement, kconfig)?;
    let steps = &config.dataset.horizons;
    let t = data.panel.intervals_per_day();
    let days: Vec<usize> = (lookback..data.panel.days()).collect();
    let per_day: Vec<Result<Vec<_>>> = days
        .par_iter()
        .map(|&day| {
            let hist_od: Vec<&[f64]> = (0..t).map(|h| data.hist.od.at(day, h)).collect();
            let y_obs: Vec<&[f64]> = (0..t).map(|h| data.panel.link.at(day, h)).collect();
            let y_hist: Vec<&[f64]> = (0..t).map(|h| data.hist.link.at(day, h)).collect();
            let out = filter.run_day(&hist_od, &y_obs, &y_hist, steps)?;
            Ok(steps
                .iter()
                .zip(out)
                .flat_map(|(&step, row)| row.into_iter().enumerate().filter_map(move |(h, p)| p.map(|p| ((day, h, step), p))))
                .collect())
        })
        .collect();
    let mut forecasts = KalmanForecasts::new();
    for day in per_day {
        forecasts.extend(day?);
    }
    Ok(forecasts)
}

pub fn kalman_to_csv(forecasts: &KalmanForecasts, net: &DirectedNetwork, banner: &str) -> String {
    let mut out = banner_text(banner);
    out.push_str(KALMAN_HEADER);
    out.push('\n');
    let pairs = net.od_pairs();
    for (&(day, h, step), flows) in forecasts {
        for (r, v) in flows.iter().enumerate() {
            let (o, d) = pairs.endpoints(r);
            let _ = writeln!(out, "{day},{h},{step},{o},{d},{v}");
        }
    }
    out
}

pub fn kalman_from_csv(text: &str, net: &DirectedNetwork, source: &str) -> Result<KalmanForecasts> {
    let pairs = net.od_pairs();
    let mut forecasts = KalmanForecasts::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header {
            if line.trim() != KALMAN_HEADER {
                return Err(Error::parse(source, lineno, format!("expected header `{KALMAN_HEADER}`")));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(Error::parse(source, lineno, format!("expected 6 fields, found {}", f.len())));
        }
        let int = |i: usize| f[i].parse::<usize>().map_err(|e| Error::parse(source, lineno, format!("field {}: {e}", i + 1)));
        let (day, h, step, o, d) = (int(0)?, int(1)?, int(2)?, int(3)?, int(4)?);
        let flow: f64 = f[5].parse().map_err(|e| Error::parse(source, lineno, format!("field 6: {e}")))?;
        if o >= pairs.n_d || d >= pairs.n_d || o == d {
            return Err(Error::parse(source, lineno, format!("({o}, {d}) is not an O-D pair")));
        }
        forecasts.entry((day, h, step)).or_insert_with(|| vec![f64::NAN; pairs.len()])[pairs.index(o, d)] = flow;
    }
    if let Some((key, _)) = forecasts.iter().find(|(_, v)| v.iter().any(|x| x.is_nan())) {
        return Err(Error::parse(source, 0, format!("forecast {key:?} is missing O-D pairs")));
    }
    Ok(forecasts)
}

pub fn cmd_kalman(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<PathBuf> {
    let data = load_data(config, data_dir)?;
    let forecasts = run_kalman(config, &data)?;
    ensure_dir(out)?;
    write(&out.join(KALMAN_FILE), kalman_to_csv(&forecasts, &data.net, &config.banner()))
}

/// Test-day predictions of one method at one horizon, aligned with the
/// test windows: `(day, target interval, truth, prediction)` per window.
pub struct MethodPredictions {
    pub method: Method,
    pub horizon: usize,
    pub cells: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
}

/// Predictions of all four methods on the test windows.
pub fn predict_all(
    config: &RunConfig,
    data: &LoadedData,
    prepared: &Prepared,
    checkpoints: &BTreeMap<(HeadVariant, usize), Checkpoint>,
    kalman: &KalmanForecasts,
) -> Result<Vec<MethodPredictions>> {
    let topology = ModelTopology::new(&data.net);
    let test: Vec<&SupervisedWindow> = prepared.windows.iter().filter(|w| w.meta.day >= prepared.cut_day).collect();
    let mut out = Vec::new();
    for &horizon in &config.dataset.horizons {
        let windows: Vec<&&SupervisedWindow> = test.iter().filter(|w| w.meta.step == horizon).collect();
        let cell = |w: &SupervisedWindow, pred: Vec<f64>| (w.meta.day, w.meta.target_interval(), w.target.data().to_vec(), pred);
        for method in Method::ALL {
            let cells: Result<Vec<_>> = windows
                .par_iter()
                .map(|w| {
                    let pred = match method {
                        Method::Historical => w.x_hist.data().to_vec(),
                        Method::Kalman => kalman
                            .get(&(w.meta.day, w.meta.target_interval(), horizon))
                            .cloned()
                            .ok_or_else(|| Error::InsufficientData(format!("no Kalman forecast for {:?}", w.meta)))?,
                        Method::FlGcnCnn | Method::FlGcnFcn => {
                            let variant = if method == Method::FlGcnCnn { HeadVariant::Cnn } else { HeadVariant::Fcn };
                            let ck = checkpoints.get(&(variant, horizon)).ok_or_else(|| {
                                Error::InsufficientData(format!("no {} checkpoint for horizon {horizon}", variant.label()))
                            })?;
                            ck.predict(&topology, &w.z, &w.x_hist)?.into_data()
                        }
                    };
                    Ok(cell(w, pred))
                })
                .collect();
            out.push(MethodPredictions { method, horizon, cells: cells? });
        }
    }
    Ok(out)
}

/// Metric rows for every method, horizon and stratum.
pub fn evaluate(config: &RunConfig, predictions: &[MethodPredictions], provenance: String) -> Result<EvaluationReport> {
    let mut rows = Vec::new();
    for p in predictions {
        let truth: Vec<f64> = p.cells.iter().flat_map(|c| c.2.iter().copied()).collect();
        let pred: Vec<f64> = p.cells.iter().flat_map(|c| c.3.iter().copied()).collect();
        if truth.is_empty() {
            return Err(Error::InsufficientData(format!("no test cells for {} at horizon {}", p.method.label(), p.horizon)));
        }
        rows.extend(stratified_eval(p.method, p.horizon, &truth, &pred, config.evaluation.threshold)?);
    }
    Ok(EvaluationReport { rows, provenance })
}

pub fn load_checkpoints(config: &RunConfig, models_dir: &Path) -> Result<BTreeMap<(HeadVariant, usize), Checkpoint>> {
    let mut out = BTreeMap::new();
    for variant in VARIANTS {
        for &h in &config.dataset.horizons {
            out.insert((variant, h), Checkpoint::load(&models_dir.join(checkpoint_file(variant, h)))?);
        }
    }
    Ok(out)
}

fn series_slug(method: Method) -> &'static str {
    match method {
        Method::FlGcnCnn => "flgcn-cnn",
        Method::FlGcnFcn => "flgcn-fcn",
        Method::Kalman => "kalman",
        Method::Historical => "historical",
    }
}

/// Writes the report (delimited and tabular) and per-pair time series.
pub fn write_report(
    config: &RunConfig,
    net: &DirectedNetwork,
    report: &EvaluationReport,
    predictions: &[MethodPredictions],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut files = vec![write(&out.join(REPORT_CSV), report.to_csv())?, write(&out.join(REPORT_TABLES), report.to_tables())?];
    let series_dir = out.join(SERIES_DIR);
    ensure_dir(&series_dir)?;
    let pairs = net.od_pairs();
    for [o, d] in &config.evaluation.series_pairs {
        let r = pairs.index(*o, *d);
        for p in predictions {
            let points: Vec<(usize, usize, f64, f64)> = p.cells.iter().map(|c| (c.0, c.1, c.2[r], c.3[r])).collect();
            let banner = format!("{}\n{} horizon {} pair {o}->{d}", config.banner(), p.method.label(), p.horizon);
            let name = format!("{}-h{}-{o}-{d}.csv", series_slug(p.method), p.horizon);
            files.push(write(&series_dir.join(name), time_series_csv(&points, &banner))?);
        }
    }
    Ok(files)
}

pub fn cmd_evaluate(config: &RunConfig, data_dir: &Path, models_dir: &Path, kalman_dir: &Path, out: &Path) -> Result<EvaluationReport> {
    let data = load_data(config, data_dir)?;
    let prepared = prepare(config, &data)?;
    let checkpoints = load_checkpoints(config, models_dir)?;
    let path = kalman_dir.join(KALMAN_FILE);
    let kalman = kalman_from_csv(&read_to_string(&path)?, &data.net, &path.display().to_string())?;
    let predictions = predict_all(config, &data, &prepared, &checkpoints, &kalman)?;
    let report = evaluate(config, &predictions, config.banner())?;
    write_report(config, &data.net, &report, &predictions, out)?;
    Ok(report)
}

/// Improvement of both FL-GCN variants over the Kalman filter, merged from
/// one or more report files.
pub fn cmd_compare(reports: &[PathBuf], out: &Path) -> Result<Vec<ImprovementTable>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one report".into()));
    }
    let mut merged = EvaluationReport::default();
    for path in reports {
        let r = EvaluationReport::from_csv(&read_to_string(path)?, &path.display().to_string())?;
        for row in r.rows {
            if merged.get(row.method, row.horizon, row.stratum).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "{}: duplicate row for {} horizon {} {}",
                    path.display(),
                    row.method.label(),
                    row.horizon,
                    row.stratum.label()
                )));
            }
            merged.rows.push(row);
        }
        if !merged.provenance.is_empty() {
            merged.provenance.push('\n');
        }
        merged.provenance.push_str(&r.provenance);
    }
    let tables = vec![compare(&merged, Method::Kalman, Method::FlGcnCnn)?, compare(&merged, Method::Kalman, Method::FlGcnFcn)?];
    ensure_dir(out)?;
    let mut text = String::new();
    for t in &tables {
        text.push_str(&t.to_text(&merged.provenance));
    }
    write(&out.join(IMPROVEMENT_FILE), text)?;
    Ok(tables)
}

pub fn gradcheck_listing(entries: &[SuiteEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(
            out,
            "{:<12} {} max_rel_err={:.3e} seeds={}",
            e.name,
            if e.passed { "pass" } else { "FAIL" },
            e.max_relative_error,
            e.seeds
        );
    }
    out
}

pub fn cmd_gradcheck(seeds: u64, out: Option<&Path>, banner: &str) -> Result<Vec<SuiteEntry>> {
    let entries = suite(seeds)?;
    if let Some(out) = out {
        ensure_dir(out)?;
        write(&out.join(GRADCHECK_FILE), banner_text(banner) + &gradcheck_listing(&entries))?;
    }
    Ok(entries)
}
