use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aqm::RedParams;
use crate::engine::{
    FlowConfig, LinkConfig, LinkId, QueueConfig, SimTime, Simulation, SimulationStats, ACK_BYTES,
};
use crate::policing::TraceRecord;
use crate::tcp::{SenderConfig, Variant, Weight, DEFAULT_INITIAL_SSTHRESH};

use super::HarnessError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueKind {
    #[default]
    DropTail,
    Red,
}

fn default_droptail_limit() -> usize {
    1000
}

/// A bidirectional link. The forward direction carries data and uses the
/// configured queue; the reverse direction carries acknowledgements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub bandwidth_bps: f64,
    #[serde(default)]
    pub delay_ms: f64,
    #[serde(default)]
    pub queue: QueueKind,
    /// Drop-tail limit in packets (RED uses the scenario's `[red]` table).
    #[serde(default = "default_droptail_limit")]
    pub limit: usize,
}

fn default_weight() -> f64 {
    1.0
}

fn default_ssthresh() -> f64 {
    DEFAULT_INITIAL_SSTHRESH
}

fn default_variant() -> Variant {
    Variant::Reno
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_weight")]
    pub n: f64,
    /// Link names from sender to receiver.
    pub route: Vec<String>,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub stop_s: Option<f64>,
    /// Segments to send; unbounded when absent.
    #[serde(default)]
    pub segments: Option<u64>,
    #[serde(default = "default_ssthresh")]
    pub ssthresh: f64,
    #[serde(default)]
    pub advertised_window: Option<u64>,
    #[serde(default)]
    pub trace: bool,
}

impl FlowSpec {
    pub fn bulk(variant: Variant, n: f64, route: Vec<String>) -> Self {
        FlowSpec {
            variant,
            n,
            route,
            start_s: 0.0,
            stop_s: None,
            segments: None,
            ssthresh: DEFAULT_INITIAL_SSTHRESH,
            advertised_window: None,
            trace: false,
        }
    }
}

/// Parameters of the standard dumbbell: per-flow access links feeding one
/// RED bottleneck.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumbbellParams {
    pub flows: usize,
    pub variant: Variant,
    pub n: f64,
    pub bottleneck_bps: f64,
    pub bottleneck_delay_ms: f64,
    pub access_bps: f64,
    pub access_delay_min_ms: f64,
    pub access_delay_max_ms: f64,
}

impl Default for DumbbellParams {
    fn default() -> Self {
        DumbbellParams {
            flows: 22,
            variant: Variant::Reno,
            n: 1.0,
            bottleneck_bps: 10e6,
            bottleneck_delay_ms: 20.0,
            access_bps: 100e6,
            access_delay_min_ms: 2.0,
            access_delay_max_ms: 40.0,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_packet_bytes() -> u32 {
    1000
}

fn default_jitter() -> f64 {
    1.0
}

/// Everything needed to run one simulation.
///
/// The TOML form has top-level `duration_s`, optional `seed`, `warmup_s`,
/// `packet_bytes`, `start_jitter_s`, an optional `[red]` table, and a
/// topology given either as `[[links]]` plus `[[flows]]` or as a
/// `[dumbbell]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub duration_s: f64,
    /// Defaults to 10 s, or zero when the run is not longer than that.
    #[serde(default)]
    pub warmup_s: Option<f64>,
    #[serde(default = "default_packet_bytes")]
    pub packet_bytes: u32,
    #[serde(default = "default_jitter")]
    pub start_jitter_s: f64,
    #[serde(default)]
    pub red: RedParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dumbbell: Option<DumbbellParams>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
}

/// Outcome of [`Scenario::run`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRun {
    pub stats: SimulationStats,
    /// Base round-trip time of each flow's route, seconds.
    pub rtts: Vec<f64>,
    pub traces: Vec<Vec<TraceRecord>>,
}

impl ScenarioRun {
    /// Goodput per flow over the measurement window, bytes/s.
    pub fn throughputs(&self) -> Vec<f64> {
        (0..self.stats.flows.len())
            .map(|f| self.stats.measured_throughput(f))
            .collect()
    }
}

/// Builds the standard dumbbell with `n_flows` bulk flows. Flow `i` reaches
/// the bottleneck over its own access link whose one-way delay is spread
/// evenly across `[access_delay_min_ms, access_delay_max_ms]` by index.
pub fn build_dumbbell(n_flows: usize, params: &DumbbellParams) -> Result<Scenario, HarnessError> {
    if n_flows < 2 {
        return Err(HarnessError::Scenario(format!(
            "a dumbbell needs at least 2 flows, got {n_flows}"
        )));
    }
    let mut links = vec![LinkSpec {
        name: "bottleneck".into(),
        bandwidth_bps: params.bottleneck_bps,
        delay_ms: params.bottleneck_delay_ms,
        queue: QueueKind::Red,
        limit: default_droptail_limit(),
    }];
    let mut flows = Vec::with_capacity(n_flows);
    let spread = params.access_delay_max_ms - params.access_delay_min_ms;
    for i in 0..n_flows {
        let name = format!("access{i}");
        let delay_ms = params.access_delay_min_ms + spread * i as f64 / (n_flows - 1) as f64;
        links.push(LinkSpec {
            name: name.clone(),
            bandwidth_bps: params.access_bps,
            delay_ms,
            queue: QueueKind::DropTail,
            limit: default_droptail_limit(),
        });
        flows.push(FlowSpec::bulk(params.variant, params.n, vec![name, "bottleneck".into()]));
    }
    Ok(Scenario {
        seed: default_seed(),
        duration_s: 70.0,
        warmup_s: Some(10.0),
        packet_bytes: default_packet_bytes(),
        start_jitter_s: default_jitter(),
        red: RedParams::default(),
        dumbbell: None,
        links,
        flows,
    })
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let mut scenario: Scenario = toml::from_str(text)?;
        scenario.expand()?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Replaces a `[dumbbell]` table by the explicit links and flows.
    fn expand(&mut self) -> Result<(), HarnessError> {
        if let Some(params) = self.dumbbell.take() {
            if !self.links.is_empty() || !self.flows.is_empty() {
                return Err(HarnessError::Scenario(
                    "give either [dumbbell] or explicit links and flows, not both".into(),
                ));
            }
            let built = build_dumbbell(params.flows, &params)?;
            self.links = built.links;
            self.flows = built.flows;
        }
        Ok(())
    }

    pub fn warmup(&self) -> f64 {
        self.warmup_s
            .unwrap_or(if self.duration_s > 10.0 { 10.0 } else { 0.0 })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Scenario(msg));
        if !(self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.warmup() >= 0.0 && self.warmup() < self.duration_s) {
            return bad(format!("warmup {} must lie in [0, duration)", self.warmup()));
        }
        if self.links.is_empty() || self.flows.is_empty() {
            return bad("scenario needs a topology: links and flows, or [dumbbell]".into());
        }
        if self.packet_bytes == 0 {
            return bad("packet_bytes must be positive".into());
        }
        self.red
            .validate()
            .map_err(|e| HarnessError::Scenario(format!("red: {e}")))?;
        let mut names = HashMap::new();
        for (i, l) in self.links.iter().enumerate() {
            if names.insert(l.name.as_str(), i).is_some() {
                return bad(format!("duplicate link name {:?}", l.name));
            }
            if !(l.bandwidth_bps >= 1.0) || !(l.delay_ms >= 0.0) {
                return bad(format!("link {:?}: bandwidth must be >= 1 bit/s and delay >= 0", l.name));
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            Weight::new(f.n)?;
            if f.route.is_empty() {
                return bad(format!("flow {i}: empty route"));
            }
            if let Some(name) = f.route.iter().find(|n| !names.contains_key(n.as_str())) {
                return bad(format!("flow {i}: route references unknown link {name:?}"));
            }
            if f.start_s < 0.0 || f.stop_s.is_some_and(|s| s < f.start_s) {
                return bad(format!("flow {i}: invalid start/stop times"));
            }
        }
        Ok(())
    }

    fn forward_id(link: usize) -> LinkId {
        2 * link
    }

    fn reverse_id(link: usize) -> LinkId {
        2 * link + 1
    }

    /// Base round-trip time of a flow: propagation both ways plus one data
    /// and one ack serialization per hop.
    pub fn base_rtt(&self, flow: usize) -> f64 {
        let index: HashMap<&str, &LinkSpec> = self.links.iter().map(|l| (l.name.as_str(), l)).collect();
        self.flows[flow]
            .route
            .iter()
            .map(|name| {
                let l = index[name.as_str()];
                2.0 * l.delay_ms / 1e3 + (self.packet_bytes + ACK_BYTES) as f64 * 8.0 / l.bandwidth_bps
            })
            .sum()
    }

    pub fn build(&self) -> Result<Simulation, HarnessError> {
        self.validate()?;
        let mut links = Vec::with_capacity(2 * self.links.len());
        for l in &self.links {
            let bps = l.bandwidth_bps.round() as u64;
            let delay = SimTime::from_secs_f64(l.delay_ms / 1e3);
            let queue = match l.queue {
                QueueKind::DropTail => QueueConfig::DropTail { limit: l.limit },
                QueueKind::Red => QueueConfig::Red(self.red),
            };
            let mut fwd = LinkConfig::new(l.name.clone(), bps, delay, queue);
            fwd.typical_packet_bytes = self.packet_bytes;
            links.push(fwd);
            links.push(LinkConfig::new(
                format!("{}-reverse", l.name),
                bps,
                delay,
                QueueConfig::DropTail { limit: usize::MAX },
            ));
        }
        let index: HashMap<&str, usize> = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();

        let mut flows = Vec::with_capacity(self.flows.len());
        for f in &self.flows {
            let hops: Vec<usize> = f.route.iter().map(|n| index[n.as_str()]).collect();
            let mut sender = SenderConfig::new(f.variant, Weight::new(f.n)?);
            sender.initial_ssthresh = f.ssthresh;
            sender.segments = f.segments;
            sender.advertised_window = f.advertised_window;
            let mut cfg = FlowConfig::new(
                sender,
                hops.iter().map(|&l| Self::forward_id(l)).collect(),
                hops.iter().rev().map(|&l| Self::reverse_id(l)).collect(),
            );
            cfg.packet_bytes = self.packet_bytes;
            cfg.start = SimTime::from_secs_f64(f.start_s);
            cfg.start_jitter = SimTime::from_secs_f64(self.start_jitter_s);
            cfg.stop = f.stop_s.map(SimTime::from_secs_f64);
            cfg.trace = f.trace;
            flows.push(cfg);
        }
        let mut sim = Simulation::new(links, flows, self.seed)?;
        sim.set_measurement_start(SimTime::from_secs_f64(self.warmup()));
        Ok(sim)
    }

    pub fn run(&self) -> Result<ScenarioRun, HarnessError> {
        let mut sim = self.build()?;
        let stats = sim.run_until(SimTime::from_secs_f64(self.duration_s));
        let traces = (0..self.flows.len())
            .map(|f| if self.flows[f].trace { sim.take_trace(f) } else { Vec::new() })
            .collect();
        Ok(ScenarioRun {
            stats,
            rtts: (0..self.flows.len()).map(|f| self.base_rtt(f)).collect(),
            traces,
        })
    }
}
