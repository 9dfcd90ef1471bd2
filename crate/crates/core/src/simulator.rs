//! Synthetic corridor demand and link counts.
//!
//! O-D flows are indexed by departure interval; link counts by the interval
//! in which a vehicle passes the link entrance. Vehicles travel at constant
//! speed and depart uniformly within their interval.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::assignment::ground_truth_assignment;
use crate::rng::substream;
use crate::topology::{DirectedNetwork, OdPairs};

/// Day x interval x width array of flows.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    days: usize,
    intervals: usize,
    width: usize,
    values: Vec<f64>,
}

impl Series {
    pub fn zeros(days: usize, intervals: usize, width: usize) -> Self {
        Self { days, intervals, width, values: vec![0.0; days * intervals * width] }
    }

    pub fn from_values(days: usize, intervals: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != days * intervals * width {
            return Err(Error::InvalidArgument(format!(
                "series of {days}x{intervals}x{width} needs {} values, got {}",
                days * intervals * width,
                values.len()
            )));
        }
        Ok(Self { days, intervals, width, values })
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, day: usize, interval: usize) -> &[f64] {
        let start = (day * self.intervals + interval) * self.width;
        &self.values[start..start + self.width]
    }

    pub fn at_mut(&mut self, day: usize, interval: usize) -> &mut [f64] {
        let start = (day * self.intervals + interval) * self.width;
        &mut self.values[start..start + self.width]
    }

    /// Same shape, every cell from `lookback` days earlier. The first
    /// `lookback` days are left at zero.
    fn lagged(&self, lookback: usize) -> Self {
        let mut out = Self::zeros(self.days, self.intervals, self.width);
        let span = self.intervals * self.width;
        for day in lookback..self.days {
            let src = (day - lookback) * span;
            out.values[day * span..(day + 1) * span].copy_from_slice(&self.values[src..src + span]);
        }
        out
    }
}

/// Consistent O-D and link panels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPanel {
    /// `[day][interval][O-D pair]`, by departure interval.
    pub od: Series,
    /// `[day][interval][sensor]`, by link-entrance interval.
    pub link: Series,
    /// `[day][sensor]` counts whose entrance time fell after the last interval.
    pub closure: Vec<f64>,
    /// Days before this one carry no data (historical warm-up).
    pub first_valid_day: usize,
}

impl FlowPanel {
    pub fn days(&self) -> usize {
        self.od.days()
    }

    pub fn intervals_per_day(&self) -> usize {
        self.od.intervals()
    }

    pub fn closure_at(&self, day: usize) -> &[f64] {
        let n_l = self.link.width();
        &self.closure[day * n_l..(day + 1) * n_l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    None,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    Vehicle,
    Analytic,
}

/// Day-to-day demand fluctuation: a mean-one log-normal multiplier whose log
/// follows an AR(1) across the intervals of a day. A `correlation` share of
/// the log-variance is common to all O-D pairs on that day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fluctuation {
    pub persistence: f64,
    pub volatility: f64,
    pub correlation: f64,
}

impl Fluctuation {
    pub const NONE: Self = Self { persistence: 0.0, volatility: 0.0, correlation: 0.0 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    /// Row-major `n_d x (n_d-1)` base rates, vehicles per interval.
    pub base_od: Vec<f64>,
    /// Multiplier per interval of the analysis period.
    pub profile: Vec<f64>,
    /// Multiplier per day of week, indexed by `day % 7`.
    pub weekday_factor: [f64; 7],
    pub noise: Noise,
    pub fluctuation: Fluctuation,
    pub seed: u64,
}

impl DemandModel {
    pub fn validate(&self, pairs: OdPairs) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("demand: {m}")));
        if self.base_od.len() != pairs.len() {
            return bad(format!("base_od has {} entries, network has {} O-D pairs", self.base_od.len(), pairs.len()));
        }
        if self.base_od.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("base rates must be finite and non-negative".into());
        }
        if self.profile.is_empty() {
            return bad("profile must cover at least one interval".into());
        }
        if self.profile.iter().chain(&self.weekday_factor).any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("profile and weekday multipliers must be positive".into());
        }
        let f = self.fluctuation;
        if !(0.0..1.0).contains(&f.persistence) || !(f.volatility >= 0.0) || !(0.0..=1.0).contains(&f.correlation) {
            return bad(format!("fluctuation out of range: {f:?}"));
        }
        Ok(())
    }

    pub fn intervals_per_day(&self) -> usize {
        self.profile.len()
    }

    /// Expected flow of pair `r` at `(day, interval)` before fluctuation.
    pub fn mean(&self, day: usize, interval: usize, r: usize) -> f64 {
        self.base_od[r] * self.profile[interval] * self.weekday_factor[day % 7]
    }

    /// Gravity-style default: `scale * exp(-decay * (|i-j| - 1))`.
    pub fn gravity_base(n_d: usize, scale: f64, decay: f64) -> Vec<f64> {
        let pairs = OdPairs { n_d };
        (0..pairs.len())
            .map(|r| {
                let (o, d) = pairs.endpoints(r);
                scale * (-decay * (o.abs_diff(d) as f64 - 1.0)).exp()
            })
            .collect()
    }
}

/// Log-multiplier paths for one day, `[interval][pair]`.
fn fluctuation_paths(demand: &DemandModel, day: usize, n_od: usize) -> Vec<f64> {
    let t = demand.intervals_per_day();
    let f = demand.fluctuation;
    let mut out = vec![0.0; t * n_od];
    if f.volatility == 0.0 {
        return out;
    }
    let innovation = (1.0 - f.persistence * f.persistence).sqrt();
    let ar_path = |rng: &mut crate::rng::StreamRng| {
        let mut path = Vec::with_capacity(t);
        let mut u: f64 = rng.sample(StandardNormal);
        path.push(u);
        for _ in 1..t {
            let e: f64 = rng.sample(StandardNormal);
            u = f.persistence * u + innovation * e;
            path.push(u);
        }
        path
    };
    let common = ar_path(&mut substream(demand.seed, "demand-common", &[day as u64]));
    let (wc, wi) = (f.correlation.sqrt(), (1.0 - f.correlation).sqrt());
    for r in 0..n_od {
        let own = ar_path(&mut substream(demand.seed, "demand-pair", &[day as u64, r as u64]));
        for h in 0..t {
            let z = wc * common[h] + wi * own[h];
            out[h * n_od + r] = f.volatility * z - 0.5 * f.volatility * f.volatility;
        }
    }
    out
}

/// O-D flows for `days` days. With [`Noise::None`] every cell is exactly
/// `base * profile * weekday`; with Poisson noise each cell is drawn from
/// its own substream after applying the fluctuation multiplier.
pub fn generate_od_panel(demand: &DemandModel, days: usize, net: &DirectedNetwork) -> Result<Series> {
    let pairs = net.od_pairs();
    demand.validate(pairs)?;
    let n_od = pairs.len();
    let t = demand.intervals_per_day();
    let mut series = Series::zeros(days, t, n_od);
    for day in 0..days {
        let logs = match demand.noise {
            Noise::None => None,
            Noise::Poisson => Some(fluctuation_paths(demand, day, n_od)),
        };
        for h in 0..t {
            let cell = series.at_mut(day, h);
            for (r, out) in cell.iter_mut().enumerate() {
                let mean = demand.mean(day, h, r);
                *out = match &logs {
                    None => mean,
                    Some(logs) => {
                        let rate = mean * logs[h * n_od + r].exp();
                        let mut rng = substream(demand.seed, "demand-count", &[day as u64, h as u64, r as u64]);
                        poisson(rate, &mut rng)
                    }
                };
            }
        }
    }
    Ok(series)
}

pub(crate) fn poisson(rate: f64, rng: &mut impl Rng) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng)
}

/// Link counts and closure buffer for an O-D series.
pub fn simulate_link_counts(
    od: &Series,
    net: &DirectedNetwork,
    speed_mph: f64,
    interval_minutes: f64,
    mode: CountMode,
    seed: u64,
) -> Result<(Series, Vec<f64>)> {
    if !(speed_mph > 0.0 && interval_minutes > 0.0) {
        return Err(Error::InvalidArgument("speed and interval length must be positive".into()));
    }
    let routes = net.routes()?;
    let (days, t, n_l) = (od.days(), od.intervals(), net.sensor_count());
    if od.width() != routes.len() {
        return Err(Error::InvalidArgument(format!(
            "O-D series has {} pairs, network has {}",
            od.width(),
            routes.len()
        )));
    }
    let mut link = Series::zeros(days, t, n_l);
    let mut closure = vec![0.0; days * n_l];

    match mode {
        CountMode::Analytic => {
            let blocks = ground_truth_assignment(net, speed_mph, interval_minutes)?;
            for day in 0..days {
                for p in 0..t {
                    let x = od.at(day, p);
                    for (lag, a) in blocks.iter().enumerate() {
                        for l in 0..n_l {
                            let mut add = 0.0;
                            for (r, xv) in x.iter().enumerate() {
                                add += a[(l, r)] * xv;
                            }
                            if p + lag < t {
                                link.at_mut(day, p + lag)[l] += add;
                            } else {
                                closure[day * n_l + l] += add;
                            }
                        }
                    }
                }
            }
        }
        CountMode::Vehicle => {
            // Sensor position and entrance delay (in intervals) per route link.
            let stops: Vec<Vec<(usize, f64)>> = routes
                .iter()
                .map(|route| {
                    route
                        .links
                        .iter()
                        .zip(&route.entrance_miles)
                        .filter_map(|(&l, &d)| net.sensor_position(l).map(|s| (s, d / speed_mph * 60.0 / interval_minutes)))
                        .collect()
                })
                .collect();
            for day in 0..days {
                for p in 0..t {
                    for (r, &x) in od.at(day, p).iter().enumerate() {
                        if x.fract() != 0.0 || x < 0.0 {
                            return Err(Error::InvalidArgument(format!(
                                "vehicle mode needs integral flows; day {day} interval {p} pair {r} has {x}"
                            )));
                        }
                        if x == 0.0 || stops[r].is_empty() {
                            continue;
                        }
                        let mut rng = substream(seed, "vehicles", &[day as u64, p as u64, r as u64]);
                        for _ in 0..x as u64 {
                            let depart = p as f64 + rng.random::<f64>();
                            for &(s, delay) in &stops[r] {
                                let slot = (depart + delay).floor() as usize;
                                if slot < t {
                                    link.at_mut(day, slot)[s] += 1.0;
                                } else {
                                    closure[day * n_l + s] += 1.0;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((link, closure))
}

/// Full panel: O-D generation followed by link counting.
pub fn simulate_panel(
    demand: &DemandModel,
    days: usize,
    net: &DirectedNetwork,
    speed_mph: f64,
    interval_minutes: f64,
    mode: CountMode,
) -> Result<FlowPanel> {
    let od = generate_od_panel(demand, days, net)?;
    let (link, closure) = simulate_link_counts(&od, net, speed_mph, interval_minutes, mode, demand.seed)?;
    Ok(FlowPanel { od, link, closure, first_valid_day: 0 })
}

/// Historical counterpart: every cell holds the value from `lookback` days
/// earlier. Days before `lookback` are unusable.
pub fn make_historical(panel: &FlowPanel, lookback: usize) -> Result<FlowPanel> {
    if panel.days() <= lookback {
        return Err(Error::InsufficientData(format!(
            "panel has {} days; historical lookup needs more than {lookback}",
            panel.days()
        )));
    }
    let n_l = panel.link.width();
    let mut closure = vec![0.0; panel.closure.len()];
    for day in lookback..panel.days() {
        let src = (day - lookback) * n_l;
        closure[day * n_l..(day + 1) * n_l].copy_from_slice(&panel.closure[src..src + n_l]);
    }
    Ok(FlowPanel {
        od: panel.od.lagged(lookback),
        link: panel.link.lagged(lookback),
        closure,
        first_valid_day: panel.first_valid_day + lookback,
    })
}

pub const OD_HEADER: &str = "day,interval,origin,destination,flow";
pub const LINK_HEADER: &str = "day,interval,link_id,count";
pub const CLOSURE_HEADER: &str = "day,link_id,count";

/// O-D series as delimited text, one record per cell.
pub fn od_to_csv(series: &Series, pairs: OdPairs, banner: &str) -> String {
    let mut out = String::new();
    push_banner(&mut out, banner);
    out.push_str(OD_HEADER);
    out.push('\n');
    for day in 0..series.days() {
        for h in 0..series.intervals() {
            for (r, v) in series.at(day, h).iter().enumerate() {
                let (o, d) = pairs.endpoints(r);
                let _ = writeln!(out, "{day},{h},{o},{d},{v}");
            }
        }
    }
    out
}

pub fn link_to_csv(series: &Series, net: &DirectedNetwork, banner: &str) -> String {
    let mut out = String::new();
    push_banner(&mut out, banner);
    out.push_str(LINK_HEADER);
    out.push('\n');
    for day in 0..series.days() {
        for h in 0..series.intervals() {
            for (s, v) in series.at(day, h).iter().enumerate() {
                let _ = writeln!(out, "{day},{h},{},{v}", net.sensor_links()[s]);
            }
        }
    }
    out
}

pub fn closure_to_csv(closure: &[f64], net: &DirectedNetwork, banner: &str) -> String {
    let mut out = String::new();
    push_banner(&mut out, banner);
    out.push_str(CLOSURE_HEADER);
    out.push('\n');
    let n_l = net.sensor_count();
    for (i, v) in closure.iter().enumerate() {
        let _ = writeln!(out, "{},{},{v}", i / n_l, net.sensor_links()[i % n_l]);
    }
    out
}

fn push_banner(out: &mut String, banner: &str) {
    for line in banner.lines() {
        let _ = writeln!(out, "# {line}");
    }
}

/// Records of a delimited file after its header, with 1-based line numbers.
fn records<'a>(text: &'a str, header: &str, source: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((i, h)) => return Err(Error::parse(source, i + 1, format!("expected header `{header}`, found `{h}`"))),
        None => return Err(Error::parse(source, 0, "empty file")),
    }
    Ok(lines.map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())).collect())
}

fn field<T: std::str::FromStr>(fields: &[&str], idx: usize, line: usize, source: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = fields.get(idx).ok_or_else(|| Error::parse(source, line, format!("missing field {}", idx + 1)))?;
    raw.parse().map_err(|e| Error::parse(source, line, format!("field {}: {e}", idx + 1)))
}

pub fn od_from_csv(text: &str, pairs: OdPairs, days: usize, intervals: usize, source: &str) -> Result<Series> {
    let mut series = Series::zeros(days, intervals, pairs.len());
    let mut seen = vec![false; days * intervals * pairs.len()];
    for (line, f) in records(text, OD_HEADER, source)? {
        let (day, h): (usize, usize) = (field(&f, 0, line, source)?, field(&f, 1, line, source)?);
        let (o, d): (usize, usize) = (field(&f, 2, line, source)?, field(&f, 3, line, source)?);
        let flow: f64 = field(&f, 4, line, source)?;
        if day >= days || h >= intervals || o >= pairs.n_d || d >= pairs.n_d || o == d {
            return Err(Error::parse(source, line, "cell outside the panel"));
        }
        if !(flow.is_finite() && flow >= 0.0) {
            return Err(Error::parse(source, line, format!("flow must be finite and non-negative, got {flow}")));
        }
        let r = pairs.index(o, d);
        series.at_mut(day, h)[r] = flow;
        seen[(day * intervals + h) * pairs.len() + r] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::parse(source, 0, format!("missing cell {missing} (row-major day, interval, pair)")));
    }
    Ok(series)
}

pub fn link_from_csv(text: &str, net: &DirectedNetwork, days: usize, intervals: usize, source: &str) -> Result<Series> {
    let n_l = net.sensor_count();
    let mut series = Series::zeros(days, intervals, n_l);
    let mut seen = vec![false; days * intervals * n_l];
    for (line, f) in records(text, LINK_HEADER, source)? {
        let (day, h, id): (usize, usize, usize) = (field(&f, 0, line, source)?, field(&f, 1, line, source)?, field(&f, 2, line, source)?);
        let count: f64 = field(&f, 3, line, source)?;
        let s = net
            .sensor_position(id)
            .ok_or_else(|| Error::parse(source, line, format!("link {id} has no sensor")))?;
        if day >= days || h >= intervals {
            return Err(Error::parse(source, line, "cell outside the panel"));
        }
        if !(count.is_finite() && count >= 0.0) {
            return Err(Error::parse(source, line, format!("count must be finite and non-negative, got {count}")));
        }
        series.at_mut(day, h)[s] = count;
        seen[(day * intervals + h) * n_l + s] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::parse(source, 0, "link panel is incomplete"));
    }
    Ok(series)
}

pub fn closure_from_csv(text: &str, net: &DirectedNetwork, days: usize, source: &str) -> Result<Vec<f64>> {
    let n_l = net.sensor_count();
    let mut closure = vec![0.0; days * n_l];
    for (line, f) in records(text, CLOSURE_HEADER, source)? {
        let (day, id): (usize, usize) = (field(&f, 0, line, source)?, field(&f, 1, line, source)?);
        let count: f64 = field(&f, 2, line, source)?;
        let s = net
            .sensor_position(id)
            .ok_or_else(|| Error::parse(source, line, format!("link {id} has no sensor")))?;
        if day >= days {
            return Err(Error::parse(source, line, "day outside the panel"));
        }
        closure[day * n_l + s] = count;
    }
    Ok(closure)
}

/// Infers `(days, intervals)` from the largest indices in an O-D file.
pub fn od_extent(text: &str, source: &str) -> Result<(usize, usize)> {
    let mut days = 0;
    let mut intervals = 0;
    for (line, f) in records(text, OD_HEADER, source)? {
        days = days.max(field::<usize>(&f, 0, line, source)? + 1);
        intervals = intervals.max(field::<usize>(&f, 1, line, source)? + 1);
    }
    Ok((days, intervals))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
