use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use infergate::detector::{
    load_model, save_model, Architecture, HeadSpec, QuantizeMask, Shape, MICRO_BOXES, MICRO_INPUT,
};
use infergate::eval::{
    evaluate, load_fixture, read_records, render_comparison, ComparisonRow, EvalConfig,
};
use infergate::gateway::{build_detector, DetectorKind, Gateway, GatewayConfig, GatewayError};
use infergate::sim::{run_fleet, write_report, FleetOptions, StreamProfile};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BIND: u8 = 3;

#[derive(Parser)]
#[command(
    name = "infergate",
    version,
    about = "Object-detection gateway for low-compute robots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Conv,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    MicroCnn,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway until SIGINT/SIGTERM.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's `detector`.
        #[arg(long, value_enum)]
        detector: Option<DetectorArg>,
        /// Overrides the config's `model`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Print a stats line every this many seconds (0 = only at exit).
        #[arg(long, default_value_t = 0)]
        stats_interval: u64,
    },
    /// Stream synthetic scenes from simulated robots to a gateway.
    Sim {
        #[arg(long)]
        gateway: String,
        #[arg(long, default_value_t = 1)]
        robots: usize,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Seconds of streaming per robot.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Objects per frame.
        #[arg(long, default_value_t = 3)]
        crowding: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: u16,
        #[arg(long, default_value_t = 480)]
        height: u16,
        #[arg(long, default_value_t = 3)]
        classes: u16,
        /// Inter-frame gaps are stretched by a factor drawn from [1, 1 + jitter].
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Per-frame probability of a multi-frame stall.
        #[arg(long, default_value_t = 0.0)]
        stall_prob: f64,
    },
    /// Score a records file and compare against baseline figures.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = infergate::eval::DEFAULT_CROWDED_THRESHOLD)]
        crowded_threshold: usize,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a model's weights to int8.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        mask: MaskArg,
    },
    /// Write a randomly initialised model.
    InitModel {
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Layer tokens: cN (3x3 conv), p (2x2 max pool), r (ReLU), fN (dense), head.
        #[arg(long, default_value = Architecture::MICRO)]
        arch: String,
        /// Square input size in pixels.
        #[arg(long, default_value_t = MICRO_INPUT)]
        input: usize,
        #[arg(long, default_value_t = MICRO_BOXES)]
        boxes: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve {
            listen,
            config,
            detector,
            model,
            stats_interval,
        } => return serve(&listen, config.as_deref(), detector, model, stats_interval),
        Command::Sim {
            gateway,
            robots,
            fps,
            duration,
            crowding,
            seed,
            report,
            width,
            height,
            classes,
            jitter,
            stall_prob,
        } => {
            let profile = StreamProfile {
                nominal_fps: fps,
                jitter,
                stall_probability: stall_prob,
                stall_frames: (2, 5),
            };
            let opts = FleetOptions {
                robots,
                profile,
                duration: Duration::try_from_secs_f64(duration).unwrap_or_default(),
                width,
                height,
                classes,
                crowding,
                seed,
                ..FleetOptions::default()
            };
            sim(&gateway, &opts, &report)
        }
        Command::Eval {
            records,
            crowded_threshold,
            baseline,
            out,
        } => eval(&records, crowded_threshold, baseline.as_deref(), &out),
        Command::Quantize {
            input,
            output,
            mask,
        } => quantize(&input, &output, mask),
        Command::InitModel {
            output,
            classes,
            seed,
            arch,
            input,
            boxes,
        } => init_model(&output, classes, seed, &arch, input, boxes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn serve(
    listen: &str,
    config: Option<&Path>,
    detector: Option<DetectorArg>,
    model: Option<PathBuf>,
    stats_interval: u64,
) -> ExitCode {
    let mut cfg = match config.map(GatewayConfig::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(d) = detector {
        cfg.detector = match d {
            DetectorArg::MicroCnn => DetectorKind::MicroCnn,
            DetectorArg::Oracle => DetectorKind::Oracle,
        };
    }
    if model.is_some() {
        cfg.model = model;
    }
    let backend = match build_detector(&cfg) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        if let Err(e) = signal_hook::flag::register(sig, stop.clone()) {
            eprintln!("error: cannot install signal handler: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    let gw = match Gateway::start(listen, cfg, backend) {
        Ok(g) => g,
        Err(e @ GatewayError::Bind(_)) => {
            eprintln!("error: {listen}: {e}");
            return ExitCode::from(EXIT_BIND);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    println!("listening on {}", gw.local_addr());
    let _ = std::io::stdout().flush();
    let interval = Duration::from_secs(stats_interval);
    let mut next_dump = Instant::now() + interval;
    while !stop.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(50));
        if stats_interval > 0 && Instant::now() >= next_dump {
            println!("stats {}", gw.stats().line());
            let _ = std::io::stdout().flush();
            next_dump += interval;
        }
    }
    let stats = gw.shutdown();
    println!("stats {}", stats.line());
    ExitCode::SUCCESS
}

fn sim(gateway: &str, opts: &FleetOptions, report: &Path) -> anyhow::Result<()> {
    let addr = gateway
        .to_socket_addrs()
        .with_context(|| format!("resolving {gateway}"))?
        .next()
        .with_context(|| format!("{gateway} resolves to no address"))?;
    let reports = run_fleet(addr, opts)?;
    let f = File::create(report).with_context(|| format!("creating {}", report.display()))?;
    let mut w = BufWriter::new(f);
    write_report(&mut w, &reports)?;
    w.flush()?;
    for r in &reports {
        let lat = r
            .latency()
            .map_or("-".to_string(), |l| format!("{:.1}", l.mean_us / 1000.0));
        println!(
            "{} sent={} results={} misrouted={} mean_latency_ms={} actions={}{}",
            r.robot_id,
            r.sent(),
            r.results(),
            r.misrouted,
            lat,
            r.actions.len(),
            r.failure
                .as_ref()
                .map_or(String::new(), |f| format!(" failure={f:?}"))
        );
    }
    if let Some(r) = reports.iter().find(|r| r.failure.is_some()) {
        bail!(
            "{} failed: {}",
            r.robot_id,
            r.failure.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

fn eval(
    records: &Path,
    crowded_threshold: usize,
    baseline: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let f = File::open(records).with_context(|| format!("opening {}", records.display()))?;
    let recs = read_records(BufReader::new(f)).with_context(|| records.display().to_string())?;
    let report = evaluate(
        &recs,
        EvalConfig {
            crowded_threshold,
            ..EvalConfig::default()
        },
    );
    let mut text = report.render();
    if let Some(path) = baseline {
        let rows = load_fixture(path)?;
        let measured = ComparisonRow {
            method: format!("measured ({})", records.display()),
            map50: report.map50,
            inference_ms: report.latency.map(|l| l.mean_us / 1000.0),
        };
        text.push('\n');
        text.push_str(&render_comparison(&rows, &[measured]));
    }
    std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    print!("{text}");
    Ok(())
}

fn quantize(input: &Path, output: &Path, mask: MaskArg) -> anyhow::Result<()> {
    let stack = load_model(input).with_context(|| format!("loading {}", input.display()))?;
    let mask = stack.mask_for(match mask {
        MaskArg::Conv => QuantizeMask::Conv,
        MaskArg::All => QuantizeMask::All,
    });
    let report = stack.size_report(&mask)?;
    let q = stack.quantized(&mask)?;
    save_model(&q, output).with_context(|| format!("writing {}", output.display()))?;
    println!(
        "fp32_bytes={} quantized_bytes={} ratio={:.4}",
        report.fp32_bytes, report.quantized_bytes, report.ratio
    );
    Ok(())
}

fn init_model(
    output: &Path,
    classes: usize,
    seed: u64,
    arch: &str,
    input: usize,
    boxes: usize,
) -> anyhow::Result<()> {
    let stack = Architecture::parse(arch)?.build(
        Shape::new(3, input, input),
        Some(HeadSpec { boxes, classes }),
        seed,
    )?;
    save_model(&stack, output).with_context(|| format!("writing {}", output.display()))?;
    println!(
        "{} parameters written to {}",
        stack.param_count(),
        output.display()
    );
    Ok(())
}
