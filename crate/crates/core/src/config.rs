//! Run configuration. Every key has a default; the defaults describe the
//! six-interchange, 120-day desk instance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kalman::assignment::max_lag;
use crate::model::{FlGcnConfig, HeadVariant};
use crate::simulator::{CountMode, DemandModel, Fluctuation, Noise};
use crate::topology::DirectedNetwork;
use crate::training::{AdamConfig, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkSection,
    pub demand: DemandSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub kalman: KalmanSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// Interchanges on the corridor.
    pub interchanges: usize,
    pub spacing_miles: f64,
    pub speed_mph: f64,
    pub interval_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandSection {
    pub days: usize,
    /// Base rate of adjacent-interchange pairs, vehicles per interval.
    pub scale: f64,
    /// Log decay of the base rate per extra interchange travelled.
    pub decay: f64,
    /// Explicit row-major base rates; overrides `scale` and `decay`.
    pub base_od: Option<Vec<f64>>,
    /// One multiplier per interval; its length sets intervals per day.
    pub profile: Vec<f64>,
    pub weekday_factor: [f64; 7],
    pub noise: Noise,
    pub count_mode: CountMode,
    pub fluctuation: Fluctuation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub lookback_days: usize,
    pub train_fraction: f64,
    pub horizons: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub k_link_lags: usize,
    pub n_gcn_layers: usize,
    pub gcn_hidden: usize,
    pub n_hist_layers: usize,
    pub cnn_channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanSection {
    pub q_prime: usize,
    /// Largest assignment lag; derived from the geometry when absent.
    pub p_prime: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub threshold: f64,
    /// `[origin, destination]` pairs dumped as time series.
    pub series_pairs: Vec<[usize; 2]>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { interchanges: 6, spacing_miles: 5.0, speed_mph: 60.0, interval_minutes: 15.0 }
    }
}

impl Default for DemandSection {
    fn default() -> Self {
        Self {
            days: 120,
            scale: 150.0,
            decay: 0.35,
            base_od: None,
            profile: vec![0.55, 0.7, 0.85, 0.95, 1.05, 1.1, 1.1, 1.05, 1.0, 0.9, 0.85, 0.75, 0.7, 0.65],
            weekday_factor: [1.0, 1.02, 1.0, 0.98, 0.95, 0.6, 0.5],
            noise: Noise::Poisson,
            count_mode: CountMode::Vehicle,
            fluctuation: Fluctuation { persistence: 0.8, volatility: 0.2, correlation: 0.5 },
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { lookback_days: 7, train_fraction: 0.75, horizons: vec![1, 2, 3] }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = FlGcnConfig::default();
        Self {
            k_link_lags: m.k_link_lags,
            n_gcn_layers: m.n_gcn_layers,
            gcn_hidden: m.gcn_hidden,
            n_hist_layers: m.n_hist_layers,
            cnn_channels: m.cnn_channels,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam: t.adam,
            validation_fraction: t.validation_fraction,
        }
    }
}

impl Default for KalmanSection {
    fn default() -> Self {
        Self { q_prime: 1, p_prime: None }
    }
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { threshold: 100.0, series_pairs: vec![[0, 1], [0, 5], [5, 2]] }
    }
}

impl RunConfig {
    /// Parses TOML, rejecting unknown keys, and validates the result.
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::parse(source, line, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Provenance lines stamped into every artifact.
    pub fn banner(&self) -> String {
        format!("odcast config sha256 {}\nseed {}", self.digest(), self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = &self.network;
        if n.interchanges < 2 {
            return bad(format!("network.interchanges must be at least 2, got {}", n.interchanges));
        }
        for (name, v) in [("spacing_miles", n.spacing_miles), ("speed_mph", n.speed_mph), ("interval_minutes", n.interval_minutes)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("network.{name} must be positive, got {v}"));
            }
        }
        let d = &self.dataset;
        if self.demand.days <= d.lookback_days {
            return bad(format!(
                "demand.days = {} leaves no day after the {}-day historical lookback",
                self.demand.days, d.lookback_days
            ));
        }
        if d.lookback_days == 0 {
            return bad("dataset.lookback_days must be at least 1".into());
        }
        if d.horizons.is_empty() || d.horizons.iter().any(|h| !(1..=3).contains(h)) {
            return bad(format!("dataset.horizons must be a non-empty subset of 1, 2, 3, got {:?}", d.horizons));
        }
        let t = self.demand.profile.len();
        let max_h = d.horizons.iter().max().copied().unwrap_or(1);
        if t < self.model.k_link_lags + max_h {
            return bad(format!(
                "{t} intervals per day cannot hold {} lags and a {max_h}-step target",
                self.model.k_link_lags
            ));
        }
        if !(self.evaluation.threshold.is_finite()) {
            return bad("evaluation.threshold must be finite".into());
        }
        for [o, dd] in &self.evaluation.series_pairs {
            if o == dd || *o >= n.interchanges || *dd >= n.interchanges {
                return bad(format!("evaluation.series_pairs entry [{o}, {dd}] is not an O-D pair"));
            }
        }
        if self.kalman.q_prime == 0 {
            return bad("kalman.q_prime must be at least 1".into());
        }
        self.model_config(HeadVariant::Cnn).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_config(HeadVariant::Cnn, 1).validate().map_err(|e| Error::Config(e.to_string()))?;
        crate::dataset::split_day(self.demand.days, d.lookback_days, d.train_fraction).map_err(|e| Error::Config(e.to_string()))?;
        self.demand_model(&self.network()?).validate(crate::topology::OdPairs { n_d: n.interchanges }).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn network(&self) -> Result<DirectedNetwork> {
        DirectedNetwork::turnpike(self.network.interchanges, self.network.spacing_miles)
    }

    pub fn demand_model(&self, net: &DirectedNetwork) -> DemandModel {
        let d = &self.demand;
        DemandModel {
            base_od: d.base_od.clone().unwrap_or_else(|| DemandModel::gravity_base(net.node_count(), d.scale, d.decay)),
            profile: d.profile.clone(),
            weekday_factor: d.weekday_factor,
            noise: d.noise,
            fluctuation: d.fluctuation,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, variant: HeadVariant) -> FlGcnConfig {
        let m = &self.model;
        FlGcnConfig {
            n_gcn_layers: m.n_gcn_layers,
            gcn_hidden: m.gcn_hidden,
            head_variant: variant,
            n_hist_layers: m.n_hist_layers,
            cnn_channels: m.cnn_channels.clone(),
            k_link_lags: m.k_link_lags,
        }
    }

    pub fn train_config(&self, variant: HeadVariant, horizon: usize) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam: t.adam,
            validation_fraction: t.validation_fraction,
            seed: self.seed,
            horizon,
            variant,
        }
    }

    pub fn p_prime(&self, net: &DirectedNetwork) -> Result<usize> {
        match self.kalman.p_prime {
            Some(p) => Ok(p),
            None => max_lag(net, self.network.speed_mph, self.network.interval_minutes),
        }
    }
}
