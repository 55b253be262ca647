use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aqm::{AqmError, DropTailQueue, Enqueue, QueueDiscipline, RedParams, RedQueue};
use crate::policing::TraceRecord;
use crate::tcp::{Receiver, Sender, SenderConfig, Transmission, Variant};

use super::{EventQueue, FlowId, Packet, SimTime};

pub type LinkId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("link {0}: bandwidth must be positive")]
    ZeroBandwidth(String),
    #[error("link {link}: {source}")]
    Queue {
        link: String,
        #[source]
        source: AqmError,
    },
    #[error("flow {flow}: route references unknown link {link}")]
    UnknownLink { flow: FlowId, link: LinkId },
    #[error("flow {0}: forward and return routes must be non-empty")]
    EmptyRoute(FlowId),
    #[error("flow {0}: packet size must be positive")]
    ZeroPacketSize(FlowId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QueueConfig {
    DropTail { limit: usize },
    Red(RedParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkConfig {
    pub name: String,
    pub bandwidth_bps: u64,
    pub delay: SimTime,
    pub queue: QueueConfig,
    /// Packet size used to age the RED average across idle periods.
    pub typical_packet_bytes: u32,
}

impl LinkConfig {
    pub fn new(name: impl Into<String>, bandwidth_bps: u64, delay: SimTime, queue: QueueConfig) -> Self {
        LinkConfig {
            name: name.into(),
            bandwidth_bps,
            delay,
            queue,
            typical_packet_bytes: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub sender: SenderConfig,
    pub route: Vec<LinkId>,
    pub reverse_route: Vec<LinkId>,
    pub packet_bytes: u32,
    pub start: SimTime,
    /// Start is delayed by a uniform draw from `[0, start_jitter)`.
    pub start_jitter: SimTime,
    pub stop: Option<SimTime>,
    pub trace: bool,
}

impl FlowConfig {
    pub fn new(sender: SenderConfig, route: Vec<LinkId>, reverse_route: Vec<LinkId>) -> Self {
        FlowConfig {
            sender,
            route,
            reverse_route,
            packet_bytes: 1000,
            start: SimTime::ZERO,
            start_jitter: SimTime::ZERO,
            stop: None,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlowStats {
    pub start_time: SimTime,
    pub sent_packets: u64,
    pub sent_bytes: u64,
    /// Data packets that reached the receiver, duplicates included.
    pub delivered_packets: u64,
    pub delivered_bytes: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
    /// In-order bytes handed to the application.
    pub goodput_bytes: u64,
    /// Goodput within the measurement window.
    pub measured_bytes: u64,
    pub retransmissions: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
    pub completion_time: Option<SimTime>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub drops: u64,
    pub busy_time: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimulationStats {
    pub end_time: SimTime,
    pub measure_from: SimTime,
    pub events_processed: u64,
    pub flows: Vec<FlowStats>,
    pub links: Vec<LinkStats>,
}

impl SimulationStats {
    /// Goodput of `flow` over the measurement window, bytes per second.
    pub fn measured_throughput(&self, flow: FlowId) -> f64 {
        let window = self.end_time.saturating_sub(self.measure_from).as_secs_f64();
        if window <= 0.0 {
            0.0
        } else {
            self.flows[flow].measured_bytes as f64 / window
        }
    }
}

#[derive(Debug)]
enum Event {
    TxComplete(LinkId),
    Arrival(LinkId, Packet),
    Timer(FlowId),
    FlowStart(FlowId),
    FlowStop(FlowId),
    Window(FlowId, Option<u64>),
}

struct Link {
    config: LinkConfig,
    queue: QueueDiscipline,
    in_service: Option<Packet>,
    stats: LinkStats,
}

struct Flow {
    config: FlowConfig,
    sender: Sender,
    receiver: Receiver,
    pending_timer: Option<SimTime>,
    stats: FlowStats,
}

/// One simulation instance. Single-threaded; owns all of its state.
pub struct Simulation {
    events: EventQueue<Event>,
    links: Vec<Link>,
    flows: Vec<Flow>,
    rng: ChaCha8Rng,
    measure_from: SimTime,
    events_processed: u64,
    scratch: Vec<Transmission>,
}

impl Simulation {
    pub fn new(links: Vec<LinkConfig>, flows: Vec<FlowConfig>, seed: u64) -> Result<Self, EngineError> {
        let mut built = Vec::with_capacity(links.len());
        for config in links {
            if config.bandwidth_bps == 0 {
                return Err(EngineError::ZeroBandwidth(config.name));
            }
            let queue = match &config.queue {
                QueueConfig::DropTail { limit } => QueueDiscipline::DropTail(DropTailQueue::new(*limit)),
                QueueConfig::Red(params) => {
                    let typical = SimTime::serialization(config.typical_packet_bytes, config.bandwidth_bps);
                    let red = RedQueue::new(*params, typical).map_err(|source| EngineError::Queue {
                        link: config.name.clone(),
                        source,
                    })?;
                    QueueDiscipline::Red(red)
                }
            };
            built.push(Link {
                config,
                queue,
                in_service: None,
                stats: LinkStats::default(),
            });
        }

        let mut sim = Simulation {
            events: EventQueue::new(),
            links: built,
            flows: Vec::with_capacity(flows.len()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            measure_from: SimTime::ZERO,
            events_processed: 0,
            scratch: Vec::new(),
        };

        for (id, config) in flows.into_iter().enumerate() {
            if config.route.is_empty() || config.reverse_route.is_empty() {
                return Err(EngineError::EmptyRoute(id));
            }
            if let Some(&link) = config
                .route
                .iter()
                .chain(&config.reverse_route)
                .find(|&&l| l >= sim.links.len())
            {
                return Err(EngineError::UnknownLink { flow: id, link });
            }
            if config.packet_bytes == 0 {
                return Err(EngineError::ZeroPacketSize(id));
            }
            let jitter = if config.start_jitter > SimTime::ZERO {
                SimTime::from_nanos(sim.rng.gen_range(0..config.start_jitter.as_nanos()))
            } else {
                SimTime::ZERO
            };
            let start = config.start + jitter;
            sim.events.schedule(start, Event::FlowStart(id));
            if let Some(stop) = config.stop {
                sim.events.schedule(stop.max(start), Event::FlowStop(id));
            }
            let mut sender = Sender::new(id, config.sender.clone());
            if config.trace {
                sender.enable_trace();
            }
            let receiver = Receiver::new(config.sender.variant == Variant::Sack);
            sim.flows.push(Flow {
                config,
                sender,
                receiver,
                pending_timer: None,
                stats: FlowStats {
                    start_time: start,
                    ..FlowStats::default()
                },
            });
        }
        Ok(sim)
    }

    /// Goodput before `t` is excluded from `measured_bytes`.
    pub fn set_measurement_start(&mut self, t: SimTime) {
        self.measure_from = t;
    }

    pub fn now(&self) -> SimTime {
        self.events.now()
    }

    pub fn flow_count(&self) -> usize {
        self.flows.len()
    }

    pub fn sender(&self, flow: FlowId) -> &Sender {
        &self.flows[flow].sender
    }

    /// Changes a flow's advertised receive window at time `at`.
    pub fn schedule_window_update(&mut self, at: SimTime, flow: FlowId, window: Option<u64>) {
        self.events.schedule(at, Event::Window(flow, window));
    }

    pub fn take_trace(&mut self, flow: FlowId) -> Vec<TraceRecord> {
        self.flows[flow].sender.take_trace()
    }

    /// Data packets of `flow` currently queued, in service or propagating.
    pub fn in_network_packets(&self, flow: FlowId) -> u64 {
        let queued: usize = self
            .links
            .iter()
            .map(|l| {
                l.queue.packets().filter(|p| p.flow == flow && !p.is_ack()).count()
                    + l.in_service.iter().filter(|p| p.flow == flow && !p.is_ack()).count()
            })
            .sum();
        let propagating = self
            .events
            .pending()
            .filter(|e| matches!(e, Event::Arrival(_, p) if p.flow == flow && !p.is_ack()))
            .count();
        (queued + propagating) as u64
    }

    /// Processes every event with time `<= end` and returns the counters.
    pub fn run_until(&mut self, end: SimTime) -> SimulationStats {
        while let Some(t) = self.events.peek_time() {
            if t > end {
                break;
            }
            let (now, event) = self.events.pop().expect("peeked event");
            self.events_processed += 1;
            self.dispatch(now, event);
        }
        self.stats(end.max(self.events.now()))
    }

    pub fn stats(&self, end_time: SimTime) -> SimulationStats {
        SimulationStats {
            end_time,
            measure_from: self.measure_from,
            events_processed: self.events_processed,
            flows: self
                .flows
                .iter()
                .map(|f| {
                    let s = f.sender.stats();
                    FlowStats {
                        retransmissions: s.retransmissions,
                        fast_retransmits: s.fast_retransmits,
                        timeouts: s.timeouts,
                        completion_time: f.sender.completed_at(),
                        ..f.stats.clone()
                    }
                })
                .collect(),
            links: self.links.iter().map(|l| l.stats.clone()).collect(),
        }
    }

    fn dispatch(&mut self, now: SimTime, event: Event) {
        match event {
            Event::TxComplete(link) => self.complete_transmission(link, now),
            Event::Arrival(link, packet) => self.arrive(link, packet, now),
            Event::Timer(flow) => {
                let f = &mut self.flows[flow];
                if f.pending_timer != Some(now) {
                    return;
                }
                f.pending_timer = None;
                let mut out = std::mem::take(&mut self.scratch);
                f.sender.on_timer(now, &mut out);
                self.emit(flow, &mut out, now);
                self.scratch = out;
            }
            Event::FlowStart(flow) => {
                let mut out = std::mem::take(&mut self.scratch);
                self.flows[flow].sender.start(now, &mut out);
                self.emit(flow, &mut out, now);
                self.scratch = out;
            }
            Event::FlowStop(flow) => self.flows[flow].sender.stop(),
            Event::Window(flow, window) => {
                let mut out = std::mem::take(&mut self.scratch);
                self.flows[flow].sender.set_advertised_window(window, now, &mut out);
                self.emit(flow, &mut out, now);
                self.scratch = out;
            }
        }
    }

    /// Puts the sender's queued transmissions on the wire and re-arms its timer.
    fn emit(&mut self, flow: FlowId, out: &mut Vec<Transmission>, now: SimTime) {
        let size = self.flows[flow].config.packet_bytes;
        let first = self.flows[flow].config.route[0];
        for t in out.drain(..) {
            let stats = &mut self.flows[flow].stats;
            stats.sent_packets += 1;
            stats.sent_bytes += size as u64;
            self.offer(first, Packet::data(flow, t.seq, size, now), now);
        }
        let f = &mut self.flows[flow];
        if let Some(deadline) = f.sender.deadline() {
            if f.pending_timer.is_none_or(|p| p > deadline) {
                f.pending_timer = Some(deadline);
                self.events.schedule(deadline.max(now), Event::Timer(flow));
            }
        }
    }

    fn offer(&mut self, link_id: LinkId, packet: Packet, now: SimTime) {
        let link = &mut self.links[link_id];
        match link.queue.enqueue(packet, now, &mut self.rng) {
            Enqueue::Admitted => {
                if link.in_service.is_none() {
                    self.start_service(link_id, now);
                }
            }
            Enqueue::Dropped(packet, _) => {
                link.stats.drops += 1;
                let stats = &mut self.flows[packet.flow].stats;
                stats.dropped_packets += 1;
                stats.dropped_bytes += packet.size as u64;
            }
        }
    }

    fn start_service(&mut self, link_id: LinkId, now: SimTime) {
        let link = &mut self.links[link_id];
        if let Some(packet) = link.queue.dequeue(now) {
            let tx = SimTime::serialization(packet.size, link.config.bandwidth_bps);
            link.stats.busy_time += tx;
            link.in_service = Some(packet);
            self.events.schedule(now + tx, Event::TxComplete(link_id));
        }
    }

    fn complete_transmission(&mut self, link_id: LinkId, now: SimTime) {
        let link = &mut self.links[link_id];
        let packet = link.in_service.take().expect("transmission completed on idle link");
        link.stats.packets_sent += 1;
        link.stats.bytes_sent += packet.size as u64;
        let arrival = now + link.config.delay;
        self.events.schedule(arrival, Event::Arrival(link_id, packet));
        self.start_service(link_id, now);
    }

    fn arrive(&mut self, _link: LinkId, mut packet: Packet, now: SimTime) {
        let flow = packet.flow;
        let route = if packet.is_ack() {
            &self.flows[flow].config.reverse_route
        } else {
            &self.flows[flow].config.route
        };
        packet.hop += 1;
        if let Some(&next) = route.get(packet.hop) {
            self.offer(next, packet, now);
            return;
        }

        match packet.ack.take() {
            None => {
                let f = &mut self.flows[flow];
                f.stats.delivered_packets += 1;
                f.stats.delivered_bytes += packet.size as u64;
                let (ack, in_order) = f.receiver.on_data(packet.seq);
                let bytes = in_order * f.config.packet_bytes as u64;
                f.stats.goodput_bytes += bytes;
                if now >= self.measure_from {
                    f.stats.measured_bytes += bytes;
                }
                let back = f.config.reverse_route[0];
                self.offer(back, Packet::ack(flow, ack, now), now);
            }
            Some(ack) => {
                let mut out = std::mem::take(&mut self.scratch);
                self.flows[flow].sender.on_ack(&ack, now, &mut out);
                self.emit(flow, &mut out, now);
                self.scratch = out;
            }
        }
    }
}
