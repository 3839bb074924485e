//! A simulated robot connected to the gateway.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use log::debug;

use super::scene::{render_frame, SceneSpec};
use super::stream::StreamProfile;
use crate::eval::EvalRecord;
use crate::geometry::{Detection, LabeledBox};
use crate::protocol::{
    read_message, write_message, ActionPayload, ByeReason, Message, MsgType, ResultPayload, RobotId,
};
use crate::stats::{summarize, LatencySummary};

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub robot_id: RobotId,
    /// Seeds the stream schedule.
    pub seed: u64,
    /// Delay before the first frame.
    pub phase: Duration,
    /// After the last frame, stop waiting once no message has arrived for
    /// this long...
    pub linger_idle: Duration,
    /// ...or once this much time has passed.
    pub linger_max: Duration,
    pub connect_timeout: Duration,
}

impl ClientOptions {
    pub fn new(robot_id: RobotId) -> Self {
        Self {
            robot_id,
            seed: 0,
            phase: Duration::ZERO,
            linger_idle: Duration::from_millis(500),
            linger_max: Duration::from_secs(10),
            connect_timeout: Duration::from_secs(5),
        }
    }
}

/// One sent frame and what came back for it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub seq: u64,
    pub scene_index: u64,
    pub t_sent_us: u64,
    pub t_result_us: Option<u64>,
    pub truth: Vec<LabeledBox>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientReport {
    pub robot_id: String,
    pub frames: Vec<FrameRecord>,
    /// `(frame seq, action)` in arrival order.
    pub actions: Vec<(u64, ActionPayload)>,
    /// RESULT or ACTION messages carrying another robot's id, or a seq this
    /// robot never sent, or a second result for the same frame.
    pub misrouted: u64,
    /// Results whose seq went backwards relative to the previous result.
    pub out_of_order: u64,
    pub bye: Option<ByeReason>,
    /// Set when the connection failed or was cut short.
    pub failure: Option<String>,
}

impl ClientReport {
    pub fn sent(&self) -> usize {
        self.frames.len()
    }

    pub fn results(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| f.t_result_us.is_some())
            .count()
    }

    /// Sent frames that never got a result.
    pub fn unanswered(&self) -> usize {
        self.sent() - self.results()
    }

    pub fn latencies_us(&self) -> Vec<u64> {
        self.frames
            .iter()
            .filter_map(|f| f.t_result_us.map(|r| r.saturating_sub(f.t_sent_us)))
            .collect()
    }

    pub fn latency(&self) -> Option<LatencySummary> {
        summarize(&self.latencies_us())
    }

    pub fn to_eval_records(&self) -> Vec<EvalRecord> {
        self.frames
            .iter()
            .map(|f| EvalRecord {
                robot: self.robot_id.clone(),
                seq: f.seq,
                t_sent_us: f.t_sent_us,
                t_result_us: f.t_result_us,
                truth: f.truth.clone(),
                predictions: f.detections.clone(),
            })
            .collect()
    }
}

enum Inbound {
    Result {
        t_us: u64,
        robot: RobotId,
        payload: ResultPayload,
    },
    Action {
        robot: RobotId,
        seq: u64,
        payload: ActionPayload,
    },
    Bye(ByeReason),
    Closed(Option<String>),
}

struct Tracker {
    id: RobotId,
    /// seq -> index into `ClientReport::frames`
    by_seq: HashMap<u64, usize>,
    last_result_seq: Option<u64>,
    closed: bool,
}

impl Tracker {
    fn absorb(&mut self, item: Inbound, report: &mut ClientReport) {
        match item {
            Inbound::Result {
                t_us,
                robot,
                payload,
            } => match self.by_seq.get(&payload.frame_seq).copied() {
                Some(i) if robot == self.id && report.frames[i].t_result_us.is_none() => {
                    report.frames[i].t_result_us = Some(t_us);
                    report.frames[i].detections = payload.detections;
                    if self.last_result_seq.is_some_and(|l| payload.frame_seq < l) {
                        report.out_of_order += 1;
                    }
                    self.last_result_seq = Some(payload.frame_seq);
                }
                _ => report.misrouted += 1,
            },
            Inbound::Action {
                robot,
                seq,
                payload,
            } => {
                if robot != self.id || !self.by_seq.contains_key(&seq) {
                    report.misrouted += 1;
                }
                report.actions.push((seq, payload));
            }
            Inbound::Bye(r) => report.bye = Some(r),
            Inbound::Closed(err) => {
                self.closed = true;
                if err.is_some() && report.failure.is_none() {
                    report.failure = err;
                }
            }
        }
    }
}

/// Streams `scene` to the gateway at `addr` for `duration` following
/// `profile`, then lingers for outstanding results and says BYE.
pub fn run_client(
    addr: SocketAddr,
    profile: &StreamProfile,
    scene: &SceneSpec,
    duration: Duration,
    opts: &ClientOptions,
) -> ClientReport {
    let mut report = ClientReport {
        robot_id: opts.robot_id.as_str(),
        ..Default::default()
    };
    let schedule = match profile.schedule(duration, opts.seed) {
        Ok(s) => s,
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };
    let mut stream = match TcpStream::connect_timeout(&addr, opts.connect_timeout) {
        Ok(s) => s,
        Err(e) => {
            report.failure = Some(format!("connect: {e}"));
            return report;
        }
    };
    let _ = stream.set_nodelay(true);
    let id = opts.robot_id;
    let start = Instant::now();
    let now_us = move || start.elapsed().as_micros() as u64;

    if let Err(e) = write_message(
        &mut stream,
        &Message::new(MsgType::Hello, id, 0, 0, Vec::new()),
    ) {
        report.failure = Some(format!("hello: {e}"));
        return report;
    }
    let Ok(read_half) = stream.try_clone() else {
        report.failure = Some("cannot clone socket".into());
        return report;
    };
    let mut reader = BufReader::with_capacity(1 << 16, read_half);
    let _ = reader
        .get_ref()
        .set_read_timeout(Some(opts.connect_timeout));
    match read_message(&mut reader) {
        Ok(Some(m)) if m.header.msg_type == MsgType::Hello => {}
        Ok(Some(m)) if m.header.msg_type == MsgType::Bye => {
            report.bye = ByeReason::decode(&m.payload).ok();
            report.failure = Some(format!("rejected: {:?}", report.bye));
            return report;
        }
        other => {
            report.failure = Some(format!("no hello acknowledgement: {other:?}"));
            return report;
        }
    }
    let _ = reader.get_ref().set_read_timeout(None);

    let (tx, rx) = mpsc::channel();
    let receiver = thread::spawn(move || loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => {
                let _ = tx.send(Inbound::Closed(None));
                return;
            }
            Err(e) => {
                let _ = tx.send(Inbound::Closed(Some(e.to_string())));
                return;
            }
        };
        let t_us = now_us();
        let h = msg.header;
        let item = match h.msg_type {
            MsgType::Result => match ResultPayload::decode(&msg.payload) {
                Ok(payload) => Inbound::Result {
                    t_us,
                    robot: h.robot_id,
                    payload,
                },
                Err(e) => Inbound::Closed(Some(format!("bad result: {e}"))),
            },
            MsgType::Action => match ActionPayload::decode(&msg.payload) {
                Ok(payload) => Inbound::Action {
                    robot: h.robot_id,
                    seq: h.seq,
                    payload,
                },
                Err(e) => Inbound::Closed(Some(format!("bad action: {e}"))),
            },
            MsgType::Bye => {
                Inbound::Bye(ByeReason::decode(&msg.payload).unwrap_or(ByeReason::Malformed))
            }
            _ => continue,
        };
        if tx.send(item).is_err() {
            return;
        }
    });

    let mut track = Tracker {
        id,
        by_seq: HashMap::new(),
        last_result_seq: None,
        closed: false,
    };
    let mut last_inbound = Instant::now();

    let t0 = Instant::now() + opts.phase;
    for (seq, tick) in schedule.iter().enumerate() {
        let due = t0 + tick.at;
        loop {
            let now = Instant::now();
            if now >= due {
                break;
            }
            match rx.recv_timeout(due - now) {
                Ok(item) => {
                    last_inbound = Instant::now();
                    track.absorb(item, &mut report);
                }
                Err(mpsc::RecvTimeoutError::Timeout) => break,
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    track.closed = true;
                    break;
                }
            }
        }
        if track.closed {
            break;
        }
        let (frame, truth) = render_frame(scene, tick.scene_index);
        let payload = match frame.encode() {
            Ok(p) => p,
            Err(e) => {
                report.failure = Some(format!("frame encode: {e}"));
                break;
            }
        };
        let seq = seq as u64;
        let t_sent_us = now_us();
        let msg = Message::new(MsgType::Frame, id, seq, t_sent_us, payload);
        track.by_seq.insert(seq, report.frames.len());
        report.frames.push(FrameRecord {
            seq,
            scene_index: tick.scene_index,
            t_sent_us,
            t_result_us: None,
            truth,
            detections: Vec::new(),
        });
        if let Err(e) = write_message(&mut stream, &msg) {
            report.failure = Some(format!("send: {e}"));
            break;
        }
    }

    // Linger for results still in the pipeline.
    let linger_end = Instant::now() + opts.linger_max;
    last_inbound = last_inbound.max(Instant::now());
    while !track.closed && report.unanswered() > 0 {
        let now = Instant::now();
        let idle_end = last_inbound + opts.linger_idle;
        let until = idle_end.min(linger_end);
        if now >= until {
            break;
        }
        match rx.recv_timeout(until - now) {
            Ok(item) => {
                last_inbound = Instant::now();
                track.absorb(item, &mut report);
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => track.closed = true,
        }
    }

    if !track.closed {
        let bye = Message::new(MsgType::Bye, id, 0, now_us(), ByeReason::Normal.encode());
        let _ = write_message(&mut stream, &bye);
        let _ = stream.flush();
        let _ = stream.shutdown(Shutdown::Write);
    }
    // Drain until the gateway closes its side.
    let drain_end = Instant::now() + opts.connect_timeout;
    while !track.closed {
        let now = Instant::now();
        if now >= drain_end {
            break;
        }
        match rx.recv_timeout(drain_end - now) {
            Ok(item) => track.absorb(item, &mut report),
            Err(_) => break,
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    let _ = receiver.join();
    debug!(
        "{}: sent {} results {} misrouted {}",
        report.robot_id,
        report.sent(),
        report.results(),
        report.misrouted
    );
    report
}

/// Fleet-level settings for [`run_fleet`].
#[derive(Debug, Clone)]
pub struct FleetOptions {
    pub robots: usize,
    pub profile: StreamProfile,
    pub duration: Duration,
    pub width: u16,
    pub height: u16,
    pub classes: u16,
    pub crowding: usize,
    pub seed: u64,
    /// Spread robots' first frames uniformly over one nominal interval.
    pub random_phase: bool,
    pub linger_idle: Duration,
    pub linger_max: Duration,
}

impl Default for FleetOptions {
    fn default() -> Self {
        Self {
            robots: 1,
            profile: StreamProfile::default(),
            duration: Duration::from_secs(10),
            width: crate::protocol::DEFAULT_WIDTH,
            height: crate::protocol::DEFAULT_HEIGHT,
            classes: 3,
            crowding: 3,
            seed: 0,
            random_phase: true,
            linger_idle: Duration::from_millis(500),
            linger_max: Duration::from_secs(10),
        }
    }
}

/// Robot ids used by [`run_fleet`]: `nao-0`, `nao-1`, ...
pub fn fleet_robot_id(i: usize) -> RobotId {
    RobotId::new(&format!("nao-{i}")).expect("short ascii id")
}

/// Runs `opts.robots` clients concurrently, each on its own scene.
pub fn run_fleet(
    addr: SocketAddr,
    opts: &FleetOptions,
) -> Result<Vec<ClientReport>, super::scene::SceneError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let interval = opts.profile.interval();
    let mut jobs = Vec::with_capacity(opts.robots);
    for i in 0..opts.robots {
        let robot_seed = opts.seed.wrapping_mul(1000).wrapping_add(i as u64);
        let scene = SceneSpec::random(
            opts.width,
            opts.height,
            opts.classes,
            opts.crowding,
            robot_seed,
        )?;
        let phase = if opts.random_phase {
            interval.mul_f64(rng.random_range(0.0..1.0))
        } else {
            Duration::ZERO
        };
        let client = ClientOptions {
            seed: robot_seed,
            phase,
            linger_idle: opts.linger_idle,
            linger_max: opts.linger_max,
            ..ClientOptions::new(fleet_robot_id(i))
        };
        jobs.push((scene, client));
    }
    let reports = thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(scene, client)| {
                s.spawn(move || run_client(addr, &opts.profile, scene, opts.duration, client))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("client thread panicked"))
            .collect()
    });
    Ok(reports)
}
