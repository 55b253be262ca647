use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use multcp::allocator::{self, BufferBudget, PricedConnection};
use multcp::fairness::{self, CapacitatedNetwork, RateVector, WeightVector};
use multcp::harness::{self, Scenario, SweepSettings};
use multcp::model::{self, ModelParams};
use multcp::policing::{self, Declaration, Verdict};
use multcp::{SimTime, Variant};

#[derive(Parser)]
#[command(name = "multcp", version, about = "Weighted TCP simulation and analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and print per-flow statistics as CSV.
    Simulate(SimulateArgs),
    /// Run a parameter sweep over the standard dumbbell.
    #[command(subcommand)]
    Sweep(Sweep),
    /// Evaluate the analytic throughput model.
    Model(ModelArgs),
    /// Check a rate vector for max-min or weighted proportional fairness.
    FairnessCheck(FairnessCheckArgs),
    /// Compute allocations: max-min or weighted proportional rates, or buffers.
    #[command(subcommand)]
    Alloc(Alloc),
    /// Estimate weights from traces, verify declarations and bill.
    Police(PoliceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Directory for traces of flows with `trace = true`.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SweepCommon {
    /// Comma-separated weights.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 4.0, 8.0])]
    n_grid: Vec<f64>,
    /// Number of seeds, 1..=k.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 22)]
    flows: usize,
    #[arg(long, default_value_t = 70.0)]
    duration: f64,
    #[arg(long, default_value_t = 10.0)]
    warmup: f64,
    /// Output directory.
    #[arg(long, short, default_value = "results")]
    out: PathBuf,
}

impl SweepCommon {
    fn settings(&self) -> SweepSettings {
        let mut s = SweepSettings::default();
        s.dumbbell.flows = self.flows;
        s.duration_s = self.duration;
        s.warmup_s = self.warmup;
        s
    }

    fn seed_list(&self) -> Vec<u64> {
        (1..=self.seeds).collect()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Tahoe,
    Reno,
    Newreno,
    Sack,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Tahoe => Variant::Tahoe,
            VariantArg::Reno => Variant::Reno,
            VariantArg::Newreno => Variant::NewReno,
            VariantArg::Sack => Variant::Sack,
        }
    }
}

#[derive(Subcommand)]
enum Sweep {
    /// Throughput of one weight-N flow relative to a standard flow.
    Gain {
        #[arg(long, value_enum, value_delimiter = ',', default_values = ["tahoe", "reno", "newreno", "sack"])]
        variant: Vec<VariantArg>,
        #[command(flatten)]
        common: SweepCommon,
    },
    /// RTT-normalized throughput dispersion with every flow at weight N.
    Fairness {
        #[arg(long, value_enum, default_value = "reno")]
        variant: VariantArg,
        #[command(flatten)]
        common: SweepCommon,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 4.0, 8.0])]
    n: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-3])]
    p: Vec<f64>,
    #[arg(long, default_value_t = 1000.0)]
    packet_bytes: f64,
    /// Round-trip time in seconds.
    #[arg(long, default_value_t = 0.1)]
    rtt: f64,
    /// Saw-tooth cycles for the oracle comparison; 0 skips it.
    #[arg(long, default_value_t = 10_000)]
    cycles: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Network description: link capacities, each connection's route as link
/// indices, optional weights and an optional rate vector to check.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    capacities: Vec<f64>,
    routes: Vec<Vec<usize>>,
    weights: Option<Vec<f64>>,
    rates: Option<Vec<f64>>,
}

impl NetworkFile {
    fn load(path: &Path) -> Result<(Self, CapacitatedNetwork, WeightVector)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: NetworkFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let net = CapacitatedNetwork::new(file.capacities.clone(), file.routes.clone())?;
        let weights = match &file.weights {
            Some(w) => WeightVector::new(w.clone())?,
            None => WeightVector::uniform(net.connections()),
        };
        Ok((file, net, weights))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Criterion {
    Maxmin,
    Pf,
}

#[derive(Args)]
struct FairnessCheckArgs {
    network: PathBuf,
    #[arg(long, value_enum, default_value = "pf")]
    criterion: Criterion,
    /// Rate vector, overriding `rates` in the file.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Alloc {
    Maxmin { network: PathBuf },
    Wpf { network: PathBuf },
    /// Split a receive-buffer budget in proportion to price.
    Buffers(BuffersArgs),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PriceFile {
    /// Total bytes; computed from `bottleneck_bps` when absent.
    budget: Option<u64>,
    bottleneck_bps: Option<f64>,
    #[serde(default = "default_segment")]
    segment: u64,
    connections: Vec<PriceEntry>,
}

fn default_segment() -> u64 {
    1000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PriceEntry {
    id: u64,
    price: f64,
    rtt: f64,
}

#[derive(Args)]
struct BuffersArgs {
    prices: PathBuf,
}

#[derive(Args)]
struct PoliceArgs {
    /// Trace CSV (time_ns, flow_id, event, cwnd_before, cwnd_after, seq, ack).
    trace: PathBuf,
    /// Declarations CSV (flow_id, declared_n, start_ns, end_ns).
    #[arg(long)]
    declarations: Option<PathBuf>,
    #[arg(long, default_value_t = policing::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Billing period in seconds, `start,end`; defaults to the trace span.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    period: Option<Vec<f64>>,
}

fn out_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let run = scenario.run()?;
    harness::write_flow_stats(&run.stats, &run.rtts, out_writer(args.out.as_deref())?)?;
    if let Some(dir) = args.trace_dir {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (flow, trace) in run.traces.iter().enumerate().filter(|(_, t)| !t.is_empty()) {
            let path = dir.join(format!("trace_{flow}.csv"));
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            policing::write_trace(file, trace).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn sweep(cmd: Sweep) -> Result<()> {
    match cmd {
        Sweep::Gain { variant, common } => {
            let mut table = harness::GainTable::default();
            for v in variant {
                let t = harness::run_gain_experiment(v.into(), &common.n_grid, &common.seed_list(), &common.settings())?;
                table.rows.extend(t.rows);
                table.summary.extend(t.summary);
            }
            for p in harness::write_gain_table(&table, &common.out)? {
                println!("{}", p.display());
            }
        }
        Sweep::Fairness { variant, common } => {
            let t = harness::run_fairness_experiment(variant.into(), &common.n_grid, &common.seed_list(), &common.settings())?;
            for p in harness::write_dispersion_table(&t, &common.out)? {
                println!("{}", p.display());
            }
            eprintln!("rank correlation of dispersion with N: {:.3}", t.trend());
        }
    }
    Ok(())
}

fn model_cmd(args: ModelArgs) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["N", "p", "T", "T1", "gain_ratio", "oracle_T", "oracle_rel_err"])?;
    for &p in &args.p {
        for &n in &args.n {
            let t = model::multcp_throughput(n, p, args.packet_bytes, args.rtt)?;
            let t1 = model::standard_throughput(p, args.packet_bytes, args.rtt)?;
            let g = model::gain_ratio(n)?;
            let (oracle, err) = if args.cycles > 0 {
                let params = ModelParams { n, p, packet_bytes: args.packet_bytes, rtt: args.rtt };
                let o = model::sawtooth_oracle(params, args.cycles, args.seed)?;
                (o.to_string(), ((o - t) / t).to_string())
            } else {
                (String::new(), String::new())
            };
            w.write_record([n.to_string(), p.to_string(), t.to_string(), t1.to_string(), g.to_string(), oracle, err])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fairness_check(args: FairnessCheckArgs) -> Result<()> {
    let (file, net, weights) = NetworkFile::load(&args.network)?;
    let Some(rates) = args.rates.or(file.rates) else {
        bail!("no rate vector: give --rates or `rates` in the network file");
    };
    let x = RateVector(rates);
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    match args.criterion {
        Criterion::Pf => {
            let v = fairness::check_weighted_pf(&x, &weights, &net, args.trials, args.seed)?;
            w.write_record(["criterion", "pass", "trials", "worst_change", "unweighted_pass"])?;
            w.write_record([
                "weighted-pf".to_string(),
                v.pass.to_string(),
                v.trials.to_string(),
                v.worst_value.to_string(),
                v.unweighted_pass.map(|b| b.to_string()).unwrap_or_default(),
            ])?;
        }
        Criterion::Maxmin => {
            let v = fairness::check_maxmin(&x, &net)?;
            w.write_record(["criterion", "pass", "method", "bottleneck_pass", "strict_form_pass", "counterexample"])?;
            let method = match v.method {
                fairness::MaxMinMethod::BruteForce => "brute-force",
                fairness::MaxMinMethod::BottleneckCriterion => "bottleneck-criterion",
            };
            w.write_record([
                "maxmin".to_string(),
                v.pass.to_string(),
                method.to_string(),
                v.bottleneck_pass.to_string(),
                v.strict_form_pass.map(|b| b.to_string()).unwrap_or_default(),
                v.counterexample.map(|c| join(&c)).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn write_rates(x: &RateVector) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["connection", "rate"])?;
    for (i, r) in x.0.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn alloc(cmd: Alloc) -> Result<()> {
    match cmd {
        Alloc::Maxmin { network } => {
            let (_, net, _) = NetworkFile::load(&network)?;
            write_rates(&fairness::maxmin_allocate(&net))
        }
        Alloc::Wpf { network } => {
            let (_, net, weights) = NetworkFile::load(&network)?;
            write_rates(&fairness::wpf_allocate(&net, &weights)?)
        }
        Alloc::Buffers(args) => {
            let path = &args.prices;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: PriceFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let conns = file
                .connections
                .iter()
                .map(|c| PricedConnection::new(c.id, c.price, c.rtt))
                .collect::<Result<Vec<_>, _>>()?;
            let budget = match (file.budget, file.bottleneck_bps) {
                (Some(total), None) => BufferBudget { total },
                (None, Some(bps)) => allocator::compute_budget(bps, allocator::weighted_mean_rtt(&conns)?)?,
                _ => bail!("{}: give exactly one of `budget` or `bottleneck_bps`", path.display()),
            };
            let shares = allocator::allocate_buffers(&conns, budget, file.segment)?;
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record(["id", "price", "rtt_s", "buffer_bytes", "throughput_bound_bps"])?;
            for (c, b) in conns.iter().zip(&shares) {
                let bound = allocator::throughput_bound(*b as f64, c.rtt)? * 8.0;
                w.write_record([c.id.to_string(), c.price.to_string(), c.rtt.to_string(), b.to_string(), bound.to_string()])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn police(args: PoliceArgs) -> Result<()> {
    let file = File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let trace = policing::read_trace(file).with_context(|| format!("reading {}", args.trace.display()))?;
    let mut flows: Vec<usize> = trace.iter().map(|r| r.flow).collect();
    flows.sort_unstable();
    flows.dedup();

    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["flow_id", "estimate_n", "source", "loss_events"])?;
    for &flow in &flows {
        let records: Vec<_> = trace.iter().filter(|r| r.flow == flow).cloned().collect();
        match policing::analyze_trace(&records) {
            Ok(e) => {
                let source = match e.source {
                    policing::EstimateSource::SteadyState => "steady-state",
                    policing::EstimateSource::SlowStart => "slow-start",
                };
                let samples = e.steady_state.map(|d| d.samples).unwrap_or(0);
                w.write_record([flow.to_string(), e.n.to_string(), source.to_string(), samples.to_string()])?;
            }
            Err(err) => w.write_record([flow.to_string(), String::new(), format!("indeterminate: {err}"), String::new()])?,
        }
    }
    w.flush()?;

    let Some(decl_path) = args.declarations else {
        return Ok(());
    };
    let mut reader = csv::Reader::from_path(&decl_path).with_context(|| format!("opening {}", decl_path.display()))?;
    let declarations = reader
        .deserialize::<Declaration>()
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("reading {}", decl_path.display()))?;

    drop(w);
    println!();
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["flow_id", "declared_n", "start_ns", "end_ns", "verdict", "observed_n"])?;
    for d in &declarations {
        d.validate()?;
        let (verdict, observed) = match policing::verify_declaration(&trace, d, args.tolerance) {
            Verdict::Compliant { observed } => ("compliant", observed.to_string()),
            Verdict::Violation { observed } => ("violation", observed.to_string()),
            Verdict::Unverifiable => ("unverifiable", String::new()),
        };
        w.write_record([
            d.flow.to_string(),
            d.declared_n.to_string(),
            d.start.as_nanos().to_string(),
            d.end.as_nanos().to_string(),
            verdict.to_string(),
            observed,
        ])?;
    }
    w.flush()?;

    let period = match args.period {
        Some(p) => (SimTime::from_secs_f64(p[0]), SimTime::from_secs_f64(p[1])),
        None => {
            let start = trace.iter().map(|r| r.time).min().unwrap_or(SimTime::ZERO);
            let end = trace.iter().map(|r| r.time).max().unwrap_or(SimTime::ZERO);
            (start, end)
        }
    };
    let mut decl_flows: Vec<usize> = declarations.iter().map(|d| d.flow).collect();
    decl_flows.sort_unstable();
    decl_flows.dedup();
    drop(w);
    println!();
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["flow_id", "period_start_ns", "period_end_ns", "bill_n_seconds"])?;
    for flow in decl_flows {
        let own: Vec<Declaration> = declarations.iter().filter(|d| d.flow == flow).copied().collect();
        let amount = policing::bill(&own, period)?;
        w.write_record([
            flow.to_string(),
            period.0.as_nanos().to_string(),
            period.1.as_nanos().to_string(),
            amount.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(s) => sweep(s),
        Command::Model(a) => model_cmd(a),
        Command::FairnessCheck(a) => fairness_check(a),
        Command::Alloc(a) => alloc(a),
        Command::Police(a) => police(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
