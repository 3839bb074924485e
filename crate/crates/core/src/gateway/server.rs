//! The inference hub.
//!
//! Threads: one acceptor, one receiver plus one writer per connection, one
//! inference worker and one monitor fan-out. Sessions, the process queue,
//! the engine-busy flag and all counters sit behind a single mutex. Writers
//! drain bounded per-session channels so a stalled client never blocks the
//! worker.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::actions::ActionDispatcher;
use super::config::{ConfigError, DetectorKind, GatewayConfig};
use super::overlay::overlay;
use crate::detector::{
    load_model, Detector, DetectorError, FixedServiceTime, MicroCnnDetector, OracleDetector,
};
use crate::geometry::Detection;
use crate::pipeline::{FrameCounters, FrameRateEstimator, LatencyRecorder, ProcessQueue};
use crate::protocol::{
    read_message, ByeReason, FramePayload, Message, MsgType, ReadError, ResultPayload, RobotId,
};
use crate::stats::LatencySummary;

/// Outbound messages buffered per session before new ones are discarded.
const SESSION_QUEUE: usize = 1024;
/// Drop events kept for inspection.
const DROP_LOG_CAP: usize = 4096;
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
const ACCEPT_POLL: Duration = Duration::from_millis(5);
/// A peer that accepts no bytes for this long is disconnected.
const WRITE_TIMEOUT: Duration = Duration::from_secs(10);
/// How long shutdown waits for BYEs to flush before closing sockets.
const SHUTDOWN_GRACE: Duration = Duration::from_millis(500);

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot listen: {0}")]
    Bind(std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// Builds the backend named in the config.
pub fn build_detector(cfg: &GatewayConfig) -> Result<Box<dyn Detector>, GatewayError> {
    let base: Box<dyn Detector> = match cfg.detector {
        DetectorKind::Oracle => {
            let mut noise = cfg.oracle_noise;
            noise.classes = cfg.classes.len() as u16;
            Box::new(OracleDetector::new(noise, cfg.seed))
        }
        DetectorKind::MicroCnn => {
            let stack = match &cfg.model {
                Some(path) => load_model(path)?,
                None => MicroCnnDetector::random(cfg.classes.len(), cfg.seed)?,
            };
            if stack.head().is_some_and(|h| h.classes != cfg.classes.len()) {
                return Err(ConfigError::Invalid(format!(
                    "model predicts {} classes but the config lists {}",
                    stack.head().map_or(0, |h| h.classes),
                    cfg.classes.len()
                ))
                .into());
            }
            Box::new(MicroCnnDetector::new(
                stack,
                cfg.confidence_threshold,
                cfg.nms_threshold,
            )?)
        }
    };
    if cfg.service_time.is_zero() {
        Ok(base)
    } else {
        Ok(Box::new(FixedServiceTime::new(base, cfg.service_time)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    /// The process queue reached its threshold.
    Overload,
    /// The frames' robot disconnected or said BYE.
    Teardown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropEvent {
    pub at_us: u64,
    pub cause: DropCause,
    /// `(robot, seq)` of every purged frame, oldest first.
    pub frames: Vec<(RobotId, u64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RobotStats {
    /// Frames admitted to the pipeline.
    pub frames_in: u64,
    /// Frames ignored because their seq did not increase.
    pub stale: u64,
    pub malformed: u64,
    pub dropped: u64,
    pub results_sent: u64,
    pub results_discarded: u64,
    pub actions_sent: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayStats {
    pub counters: FrameCounters,
    pub queued: usize,
    pub busy: bool,
    pub sessions: usize,
    pub rejected_sessions: u64,
    pub results_sent: u64,
    pub results_discarded: u64,
    pub detector_errors: u64,
    pub monitor_frames: u64,
    pub latency: Option<LatencySummary>,
    pub per_robot: BTreeMap<String, RobotStats>,
}

impl GatewayStats {
    /// `frames_in inferred dropped mean_latency_us p99_latency_us`.
    pub fn line(&self) -> String {
        let (mean, p99) = self
            .latency
            .map_or(("-".to_string(), "-".to_string()), |l| {
                (format!("{:.0}", l.mean_us), l.p99_us.to_string())
            });
        format!(
            "frames_in={} inferred={} dropped={} mean_latency_us={} p99_latency_us={}",
            self.counters.frames_in,
            self.counters.frames_inferred,
            self.counters.frames_dropped,
            mean,
            p99
        )
    }
}

struct Job {
    robot: RobotId,
    generation: u64,
    seq: u64,
    arrival_us: u64,
    frame: FramePayload,
}

enum Outgoing {
    Bytes(Vec<u8>),
    Close,
}

struct Session {
    generation: u64,
    tx: SyncSender<Outgoing>,
    monitor: bool,
}

#[derive(Default)]
struct Counters {
    rejected_sessions: u64,
    results_sent: u64,
    results_discarded: u64,
    detector_errors: u64,
    monitor_frames: u64,
}

struct State {
    queue: ProcessQueue<Job>,
    busy: bool,
    current: Option<Job>,
    shutdown: bool,
    sessions: HashMap<RobotId, Session>,
    /// Every open connection, for waking blocked readers at shutdown.
    conns: HashMap<u64, TcpStream>,
    next_id: u64,
    robots: BTreeMap<String, RobotStats>,
    drop_log: VecDeque<DropEvent>,
    latency: LatencyRecorder,
    counters: Counters,
}

impl State {
    fn robot(&mut self, id: &RobotId) -> &mut RobotStats {
        self.robots.entry(id.as_str()).or_default()
    }

    fn record_drop(&mut self, at_us: u64, cause: DropCause, jobs: Vec<Job>) {
        if jobs.is_empty() {
            return;
        }
        for j in &jobs {
            self.robot(&j.robot).dropped += 1;
        }
        debug!("dropped {} frames ({cause:?})", jobs.len());
        if self.drop_log.len() == DROP_LOG_CAP {
            self.drop_log.pop_front();
        }
        self.drop_log.push_back(DropEvent {
            at_us,
            cause,
            frames: jobs.into_iter().map(|j| (j.robot, j.seq)).collect(),
        });
    }
}

struct Shared {
    state: Mutex<State>,
    work: Condvar,
    epoch: Instant,
    config: GatewayConfig,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }
}

type Threads = Arc<Mutex<Vec<JoinHandle<()>>>>;

/// A running gateway. Dropping it without [`Gateway::shutdown`] leaves the
/// threads running until the process exits.
pub struct Gateway {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
    worker: Option<JoinHandle<()>>,
    monitor: Option<JoinHandle<()>>,
    conn_threads: Threads,
}

impl Gateway {
    /// Binds the listener and starts serving.
    pub fn start(
        addr: impl ToSocketAddrs,
        config: GatewayConfig,
        detector: Box<dyn Detector>,
    ) -> Result<Self, GatewayError> {
        let listener = TcpListener::bind(addr).map_err(GatewayError::Bind)?;
        let local = listener.local_addr().map_err(GatewayError::Bind)?;
        listener.set_nonblocking(true).map_err(GatewayError::Bind)?;
        let shared = Arc::new(Shared {
            state: Mutex::new(State {
                queue: ProcessQueue::new(),
                busy: false,
                current: None,
                shutdown: false,
                sessions: HashMap::new(),
                conns: HashMap::new(),
                next_id: 1,
                robots: BTreeMap::new(),
                drop_log: VecDeque::new(),
                latency: LatencyRecorder::new(),
                counters: Counters::default(),
            }),
            work: Condvar::new(),
            epoch: Instant::now(),
            config,
        });
        let (mon_tx, mon_rx) = mpsc::channel();
        let worker = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("inference".into())
                .spawn(move || worker_loop(&shared, detector, mon_tx))
                .expect("spawn inference worker")
        };
        let monitor = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("monitor".into())
                .spawn(move || monitor_loop(&shared, mon_rx))
                .expect("spawn monitor")
        };
        let conn_threads: Threads = Arc::default();
        let acceptor = {
            let shared = shared.clone();
            let threads = conn_threads.clone();
            thread::Builder::new()
                .name("accept".into())
                .spawn(move || accept_loop(&shared, listener, &threads))
                .expect("spawn acceptor")
        };
        info!("gateway listening on {local}");
        Ok(Self {
            shared,
            addr: local,
            acceptor: Some(acceptor),
            worker: Some(worker),
            monitor: Some(monitor),
            conn_threads,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> GatewayStats {
        let st = self.shared.lock();
        GatewayStats {
            counters: st.queue.counters(),
            queued: st.queue.len(),
            busy: st.busy,
            sessions: st.sessions.len(),
            rejected_sessions: st.counters.rejected_sessions,
            results_sent: st.counters.results_sent,
            results_discarded: st.counters.results_discarded,
            detector_errors: st.counters.detector_errors,
            monitor_frames: st.counters.monitor_frames,
            latency: st.latency.summary(),
            per_robot: st.robots.clone(),
        }
    }

    /// Gateway-side arrival-to-result latencies, in delivery order.
    pub fn latency_samples(&self) -> Vec<u64> {
        self.shared.lock().latency.samples().to_vec()
    }

    pub fn drop_log(&self) -> Vec<DropEvent> {
        self.shared.lock().drop_log.iter().cloned().collect()
    }

    /// Blocks until the queue is empty and the engine idle, or `timeout`.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            {
                let st = self.shared.lock();
                if !st.busy && st.queue.is_empty() {
                    return true;
                }
            }
            thread::sleep(Duration::from_millis(2));
        }
        false
    }

    /// Sends BYE to every session, stops all threads and returns the final
    /// statistics.
    pub fn shutdown(mut self) -> GatewayStats {
        {
            let mut st = self.shared.lock();
            st.shutdown = true;
            let bye = encode(&Message::new(
                MsgType::Bye,
                RobotId::from_bytes([0; 16]),
                0,
                self.shared.now_us(),
                ByeReason::Shutdown.encode(),
            ));
            for s in st.sessions.values() {
                let _ = s.tx.try_send(Outgoing::Bytes(bye.clone()));
                let _ = s.tx.try_send(Outgoing::Close);
            }
            for c in st.conns.values() {
                let _ = c.shutdown(Shutdown::Read);
            }
            self.shared.work.notify_all();
        }
        for h in [
            self.acceptor.take(),
            self.worker.take(),
            self.monitor.take(),
        ]
        .into_iter()
        .flatten()
        {
            let _ = h.join();
        }
        let handles: Vec<_> =
            std::mem::take(&mut *self.conn_threads.lock().unwrap_or_else(|e| e.into_inner()));
        let deadline = Instant::now() + SHUTDOWN_GRACE;
        while Instant::now() < deadline && handles.iter().any(|h| !h.is_finished()) {
            thread::sleep(Duration::from_millis(2));
        }
        // Writers stuck on peers that stopped reading.
        for c in self.shared.lock().conns.values() {
            let _ = c.shutdown(Shutdown::Both);
        }
        for h in handles {
            let _ = h.join();
        }
        let stats = self.stats();
        info!("gateway stopped: {}", stats.line());
        stats
    }
}

fn encode(msg: &Message) -> Vec<u8> {
    msg.encode()
        .expect("gateway messages are within protocol limits")
}

fn accept_loop(shared: &Arc<Shared>, listener: TcpListener, threads: &Threads) {
    loop {
        if shared.lock().shutdown {
            return;
        }
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("connection from {peer}");
                let shared = shared.clone();
                let h = thread::Builder::new()
                    .name(format!("conn-{peer}"))
                    .spawn(move || serve_connection(&shared, stream));
                let mut list = threads.lock().unwrap_or_else(|e| e.into_inner());
                list.retain(|h| !h.is_finished());
                match h {
                    Ok(h) => list.push(h),
                    Err(e) => warn!("cannot spawn connection thread: {e}"),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn send_now(stream: &mut TcpStream, msg: &Message) {
    let _ = stream.write_all(&encode(msg));
    let _ = stream.shutdown(Shutdown::Both);
}

fn serve_connection(shared: &Arc<Shared>, stream: TcpStream) {
    let conn_id = {
        let mut st = shared.lock();
        let id = st.next_id;
        st.next_id += 1;
        match stream.try_clone() {
            Ok(c) => {
                st.conns.insert(id, c);
            }
            Err(_) => return,
        }
        if st.shutdown {
            st.conns.remove(&id);
            return;
        }
        id
    };
    run_session(shared, stream);
    shared.lock().conns.remove(&conn_id);
}

fn run_session(shared: &Arc<Shared>, stream: TcpStream) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT));
    let _ = stream.set_write_timeout(Some(WRITE_TIMEOUT));
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::with_capacity(1 << 16, read_half);
    let mut write_half = stream;
    let hello = match read_message(&mut reader) {
        Ok(Some(m)) if m.header.msg_type == MsgType::Hello => m,
        Ok(None) => return,
        other => {
            debug!(
                "bad handshake: {:?}",
                other.map(|m| m.map(|m| m.header.msg_type))
            );
            let bye = Message::new(
                MsgType::Bye,
                RobotId::from_bytes([0; 16]),
                0,
                shared.now_us(),
                ByeReason::Malformed.encode(),
            );
            send_now(&mut write_half, &bye);
            return;
        }
    };
    let _ = reader.get_ref().set_read_timeout(None);
    let id = hello.header.robot_id;
    let monitor = id.is_monitor();
    let (tx, rx) = mpsc::sync_channel::<Outgoing>(SESSION_QUEUE);
    let generation = {
        let mut st = shared.lock();
        let reject = if st.shutdown {
            Some(ByeReason::Shutdown)
        } else if st.sessions.contains_key(&id) {
            Some(ByeReason::DuplicateRobotId)
        } else {
            None
        };
        if let Some(reason) = reject {
            st.counters.rejected_sessions += 1;
            drop(st);
            info!("rejected session {id}: {reason:?}");
            send_now(
                &mut write_half,
                &Message::new(MsgType::Bye, id, 0, shared.now_us(), reason.encode()),
            );
            return;
        }
        let generation = st.next_id;
        st.next_id += 1;
        st.sessions.insert(
            id,
            Session {
                generation,
                tx: tx.clone(),
                monitor,
            },
        );
        st.robot(&id);
        // The acknowledgement goes first on the writer's queue.
        let ack = Message::new(MsgType::Hello, id, 0, shared.now_us(), Vec::new());
        let _ = tx.try_send(Outgoing::Bytes(encode(&ack)));
        generation
    };
    info!(
        "session {id} open{}",
        if monitor { " (monitor)" } else { "" }
    );
    let writer = thread::Builder::new()
        .name(format!("write-{id}"))
        .spawn(move || writer_loop(write_half, rx));
    drop(tx);

    let mut last_seq: Option<u64> = None;
    let mut rate = FrameRateEstimator::default();
    loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(ReadError::Protocol(e)) => {
                warn!("session {id}: {e}");
                let mut st = shared.lock();
                st.robot(&id).malformed += 1;
                if let Some(s) = st.sessions.get(&id).filter(|s| s.generation == generation) {
                    let bye = Message::new(
                        MsgType::Bye,
                        id,
                        0,
                        shared.now_us(),
                        ByeReason::Malformed.encode(),
                    );
                    let _ = s.tx.try_send(Outgoing::Bytes(encode(&bye)));
                    let _ = s.tx.try_send(Outgoing::Close);
                }
                break;
            }
            Err(ReadError::Io(e)) => {
                debug!("session {id}: {e}");
                break;
            }
        };
        let h = msg.header;
        match h.msg_type {
            MsgType::Bye => break,
            MsgType::Frame if !monitor && h.robot_id == id => {
                let arrival_us = shared.now_us();
                if last_seq.is_some_and(|last| h.seq <= last) {
                    shared.lock().robot(&id).stale += 1;
                    continue;
                }
                last_seq = Some(h.seq);
                let frame = match FramePayload::decode_owned(msg.payload) {
                    Ok(f) => f,
                    Err(e) => {
                        debug!("session {id}: bad frame {}: {e}", h.seq);
                        shared.lock().robot(&id).malformed += 1;
                        continue;
                    }
                };
                let r = rate.observe(arrival_us).unwrap_or_else(|_| rate.rate());
                let job = Job {
                    robot: id,
                    generation,
                    seq: h.seq,
                    arrival_us,
                    frame,
                };
                let mut st = shared.lock();
                if st.shutdown {
                    break;
                }
                st.robot(&id).frames_in += 1;
                let busy = st.busy;
                let sub = st.queue.submit(job, busy, r);
                if let Some(job) = sub.infer_now {
                    st.busy = true;
                    st.current = Some(job);
                    shared.work.notify_one();
                }
                st.record_drop(arrival_us, DropCause::Overload, sub.dropped);
            }
            _ => {
                shared.lock().robot(&id).malformed += 1;
            }
        }
    }

    {
        let mut st = shared.lock();
        if st
            .sessions
            .get(&id)
            .is_some_and(|s| s.generation == generation)
        {
            st.sessions.remove(&id);
        }
        let purged = st
            .queue
            .purge_where(|j| j.robot == id && j.generation == generation);
        let now = shared.now_us();
        st.record_drop(now, DropCause::Teardown, purged);
    }
    info!("session {id} closed");
    if let Ok(w) = writer {
        let _ = w.join();
    }
}

fn writer_loop(mut stream: TcpStream, rx: Receiver<Outgoing>) {
    for out in rx {
        match out {
            Outgoing::Bytes(b) => {
                if stream.write_all(&b).is_err() {
                    break;
                }
            }
            Outgoing::Close => break,
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

struct MonitorItem {
    robot: RobotId,
    seq: u64,
    frame: FramePayload,
    dets: Vec<Detection>,
}

fn worker_loop(
    shared: &Arc<Shared>,
    mut detector: Box<dyn Detector>,
    monitor: mpsc::Sender<MonitorItem>,
) {
    let cfg = &shared.config;
    let class_name = |l: u16| cfg.class_name(l);
    let mut dispatchers: HashMap<RobotId, ActionDispatcher> = HashMap::new();
    let mut st = shared.lock();
    loop {
        let job = loop {
            if st.shutdown {
                return;
            }
            if let Some(j) = st.current.take() {
                break j;
            }
            st = shared.work.wait(st).unwrap_or_else(|e| e.into_inner());
        };
        drop(st);

        let (dets, failed) = match detector.detect(&job.frame) {
            Ok(d) => (d, false),
            Err(e) => {
                warn!(
                    "{} failed on {} seq {}: {e}",
                    detector.name(),
                    job.robot,
                    job.seq
                );
                (Vec::new(), true)
            }
        };
        let payload = ResultPayload {
            frame_seq: job.seq,
            detections: dets,
        };
        let bytes = payload.encode().unwrap_or_else(|e| {
            warn!(
                "result for {} seq {} not encodable: {e}",
                job.robot, job.seq
            );
            ResultPayload {
                frame_seq: job.seq,
                detections: Vec::new(),
            }
            .encode()
            .expect("empty result encodes")
        });
        let now = Instant::now();
        let action = dispatchers
            .entry(job.robot)
            .or_insert_with(|| ActionDispatcher::new(cfg.cooldown))
            .dispatch(
                &cfg.actions,
                &job.robot.as_str(),
                &payload.detections,
                class_name,
                now,
            );

        st = shared.lock();
        let t = shared.now_us();
        let result = encode(&Message::new(MsgType::Result, job.robot, job.seq, t, bytes));
        st.counters.detector_errors += u64::from(failed);
        let tx = st
            .sessions
            .get(&job.robot)
            .filter(|s| s.generation == job.generation)
            .map(|s| s.tx.clone());
        let delivered = tx
            .as_ref()
            .is_some_and(|tx| tx.try_send(Outgoing::Bytes(result)).is_ok());
        if delivered {
            st.counters.results_sent += 1;
            st.robot(&job.robot).results_sent += 1;
            let _ = st.latency.record(job.arrival_us, t);
            if let (Some(tx), Some(a)) = (&tx, action) {
                let p = a.encode().unwrap_or_default();
                let msg = encode(&Message::new(MsgType::Action, job.robot, job.seq, t, p));
                if tx.try_send(Outgoing::Bytes(msg)).is_ok() {
                    st.robot(&job.robot).actions_sent += 1;
                }
            }
        } else {
            st.counters.results_discarded += 1;
            st.robot(&job.robot).results_discarded += 1;
        }
        let has_monitors = st.sessions.values().any(|s| s.monitor);
        match st.queue.next_frame() {
            Some(next) => st.current = Some(next),
            None => st.busy = false,
        }
        if has_monitors {
            let _ = monitor.send(MonitorItem {
                robot: job.robot,
                seq: job.seq,
                frame: job.frame,
                dets: payload.detections,
            });
        }
    }
}

fn monitor_loop(shared: &Arc<Shared>, rx: Receiver<MonitorItem>) {
    let cfg = &shared.config;
    for item in rx {
        let drawn = overlay(&item.frame, &item.dets, |l| cfg.class_name(l));
        let Ok(payload) = drawn.encode() else {
            continue;
        };
        let msg = encode(&Message::new(
            MsgType::Monitor,
            item.robot,
            item.seq,
            shared.now_us(),
            payload,
        ));
        let mut st = shared.lock();
        let mut sent = 0;
        for s in st.sessions.values().filter(|s| s.monitor) {
            if s.tx.try_send(Outgoing::Bytes(msg.clone())).is_ok() {
                sent += 1;
            }
        }
        st.counters.monitor_frames += sent;
    }
}
