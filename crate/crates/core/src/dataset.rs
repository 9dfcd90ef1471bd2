//! Supervised windows: lagged real-time and historical link counts plus the
//! historical O-D matrix of the target interval, paired with the true O-D
//! matrix `step - 1` intervals after the first unobserved one.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::simulator::FlowPanel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowMeta {
    pub day: usize,
    /// First interval without link observations.
    pub interval: usize,
    pub step: usize,
}

impl WindowMeta {
    pub fn target_interval(&self) -> usize {
        self.interval + self.step - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedWindow {
    /// `[n_l, 2k]`: columns `y[h-1] .. y[h-k]` then `yH[h-1] .. yH[h-k]`.
    pub z: Tensor,
    /// `[n_d, n_d-1]` historical O-D of the target interval.
    pub x_hist: Tensor,
    /// `[n_d, n_d-1]` true O-D of the target interval.
    pub target: Tensor,
    pub meta: WindowMeta,
}

#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<SupervisedWindow>,
    /// Why the set is empty, when it is.
    pub diagnostic: Option<String>,
}

/// Windows per day for one step: `T - k - (step - 1)`, floored at zero.
pub fn windows_per_day(intervals_per_day: usize, k: usize, step: usize) -> usize {
    intervals_per_day.saturating_sub(k + step - 1)
}

/// Every window for every usable day, ordered by step, day, interval.
pub fn assemble_windows(panel: &FlowPanel, hist: &FlowPanel, n_d: usize, k: usize, steps: &[usize]) -> Result<WindowSet> {
    if k == 0 || steps.contains(&0) {
        return Err(Error::InvalidArgument("k and every step must be at least 1".into()));
    }
    if panel.od.width() != n_d * (n_d - 1) || hist.od.width() != panel.od.width() || hist.link.width() != panel.link.width() {
        return Err(Error::InvalidArgument("panel widths do not match the network".into()));
    }
    if hist.days() != panel.days() || hist.intervals_per_day() != panel.intervals_per_day() {
        return Err(Error::InvalidArgument("historical panel is not aligned with the real-time panel".into()));
    }
    let t = panel.intervals_per_day();
    let max_step = steps.iter().copied().max().unwrap_or(1);
    if t < k + max_step {
        return Ok(WindowSet {
            windows: Vec::new(),
            diagnostic: Some(format!("{t} intervals per day cannot hold {k} lags plus a {max_step}-step target")),
        });
    }
    let first_day = panel.first_valid_day.max(hist.first_valid_day);
    if first_day >= panel.days() {
        return Ok(WindowSet {
            windows: Vec::new(),
            diagnostic: Some(format!("no day after the {first_day}-day warm-up")),
        });
    }
    let n_l = panel.link.width();
    let mut windows = Vec::new();
    for &step in steps {
        for day in first_day..panel.days() {
            for h in k..=t - step {
                let mut z = vec![0.0; n_l * 2 * k];
                for lag in 1..=k {
                    let real = panel.link.at(day, h - lag);
                    let past = hist.link.at(day, h - lag);
                    for s in 0..n_l {
                        z[s * 2 * k + lag - 1] = real[s];
                        z[s * 2 * k + k + lag - 1] = past[s];
                    }
                }
                let target_h = h + step - 1;
                windows.push(SupervisedWindow {
                    z: Tensor::matrix(n_l, 2 * k, z)?,
                    x_hist: Tensor::matrix(n_d, n_d - 1, hist.od.at(day, target_h).to_vec())?,
                    target: Tensor::matrix(n_d, n_d - 1, panel.od.at(day, target_h).to_vec())?,
                    meta: WindowMeta { day, interval: h, step },
                });
            }
        }
    }
    Ok(WindowSet { windows, diagnostic: None })
}

/// First test day: `lookback + floor(train_fraction * total_days)`.
pub fn split_day(total_days: usize, lookback: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let cut = lookback + (train_fraction * total_days as f64).floor() as usize;
    if cut <= lookback || cut >= total_days {
        return Err(Error::InvalidArgument(format!(
            "split at day {cut} leaves no training or no test days (days {lookback}..{total_days})"
        )));
    }
    Ok(cut)
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<SupervisedWindow>,
    pub test: Vec<SupervisedWindow>,
}

/// Whole-day split: days before `cut_day` train, the rest test.
pub fn split(windows: Vec<SupervisedWindow>, cut_day: usize) -> Result<Split> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to split".into()));
    }
    let (train, test): (Vec<_>, Vec<_>) = windows.into_iter().partition(|w| w.meta.day < cut_day);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!("split at day {cut_day} is degenerate")));
    }
    Ok(Split { train, test })
}

/// Training-set maxima per flow family.
///
/// Values are divided by the smallest power of two not below the maximum,
/// which keeps normalization and its inverse exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub link_max: f64,
    pub od_max: f64,
}

impl NormStats {
    pub fn from_windows(train: &[SupervisedWindow]) -> Self {
        let max_of = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0_f64, f64::max);
        let link_max = max_of(&mut train.iter().flat_map(|w| w.z.data().iter().copied()));
        let od_max = max_of(&mut train.iter().flat_map(|w| w.x_hist.data().iter().chain(w.target.data()).copied()));
        Self { link_max, od_max }
    }

    pub fn link_scale(&self) -> f64 {
        pow2_scale(self.link_max)
    }

    pub fn od_scale(&self) -> f64 {
        pow2_scale(self.od_max)
    }

    pub fn normalize_links(&self, t: &Tensor) -> Tensor {
        scaled(t, 1.0 / self.link_scale())
    }

    pub fn normalize_od(&self, t: &Tensor) -> Tensor {
        scaled(t, 1.0 / self.od_scale())
    }

    pub fn denormalize_od(&self, t: &Tensor) -> Tensor {
        scaled(t, self.od_scale())
    }

    pub fn denormalize_links(&self, t: &Tensor) -> Tensor {
        scaled(t, self.link_scale())
    }

    pub fn normalize(&self, w: &SupervisedWindow) -> SupervisedWindow {
        SupervisedWindow {
            z: self.normalize_links(&w.z),
            x_hist: self.normalize_od(&w.x_hist),
            target: self.normalize_od(&w.target),
            meta: w.meta,
        }
    }

    pub fn denormalize(&self, w: &SupervisedWindow) -> SupervisedWindow {
        SupervisedWindow {
            z: self.denormalize_links(&w.z),
            x_hist: self.denormalize_od(&w.x_hist),
            target: self.denormalize_od(&w.target),
            meta: w.meta,
        }
    }
}

fn pow2_scale(max: f64) -> f64 {
    if max > 0.0 && max.is_finite() {
        2f64.powi(max.log2().ceil() as i32)
    } else {
        1.0
    }
}

fn scaled(t: &Tensor, factor: f64) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= factor);
    out
}

/// Iteration-order index: `index,day,interval,step,split`.
pub fn index_csv(windows: &[SupervisedWindow], cut_day: usize, banner: &str) -> String {
    let mut out = String::new();
    for line in banner.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("index,day,interval,step,split\n");
    for (i, w) in windows.iter().enumerate() {
        let split = if w.meta.day < cut_day { "train" } else { "test" };
        let _ = writeln!(out, "{i},{},{},{},{split}", w.meta.day, w.meta.interval, w.meta.step);
    }
    out
}
