use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use infergate::detector::{Detector, FixedServiceTime, OracleDetector};
use infergate::eval::{evaluate, EvalConfig};
use infergate::gateway::{class_color, DropCause, Gateway, GatewayConfig};
use infergate::protocol::{
    read_message, write_message, ActionPayload, ByeReason, FramePayload, Message, MsgType,
    ResultPayload, RobotId,
};
use infergate::sim::{
    render_frame, run_client, run_fleet, ClientOptions, FleetOptions, SceneObject, SceneSpec,
    StreamProfile, Trajectory,
};
use infergate::{BBox, LabeledBox};

fn start(cfg: GatewayConfig, detector: Box<dyn Detector>) -> Gateway {
    Gateway::start("127.0.0.1:0", cfg, detector).expect("gateway starts")
}

fn oracle() -> Box<dyn Detector> {
    Box::new(OracleDetector::exact())
}

fn rid(s: &str) -> RobotId {
    RobotId::new(s).unwrap()
}

/// Connects and completes the HELLO exchange.
fn connect(addr: SocketAddr, id: &str) -> (TcpStream, BufReader<TcpStream>, Message) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_nodelay(true).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write_message(&mut s, &Message::new(MsgType::Hello, rid(id), 0, 0, vec![])).unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    let reply = read_message(&mut r).unwrap().unwrap();
    (s, r, reply)
}

fn small_fleet(robots: usize, fps: f64, secs: u64, seed: u64) -> FleetOptions {
    FleetOptions {
        robots,
        profile: StreamProfile::steady(fps),
        duration: Duration::from_secs(secs),
        width: 160,
        height: 120,
        crowding: 4,
        seed,
        ..FleetOptions::default()
    }
}

#[test]
fn hello_frame_result_round_trip() {
    let gw = start(GatewayConfig::default(), oracle());
    let (mut s, mut r, ack) = connect(gw.local_addr(), "nao-1");
    assert_eq!(ack.header.msg_type, MsgType::Hello);
    let truth = vec![LabeledBox {
        label_id: 0,
        bbox: BBox::new(160, 120, 480, 360),
    }];
    let frame = FramePayload::solid(640, 480, [0, 0, 0]).with_annotation(truth.clone());
    write_message(
        &mut s,
        &Message::new(MsgType::Frame, rid("nao-1"), 7, 0, frame.encode().unwrap()),
    )
    .unwrap();
    let m = read_message(&mut r).unwrap().unwrap();
    assert_eq!(m.header.msg_type, MsgType::Result);
    assert_eq!(m.header.robot_id, rid("nao-1"));
    let res = ResultPayload::decode(&m.payload).unwrap();
    assert_eq!(res.frame_seq, 7);
    assert_eq!(res.detections.len(), 1);
    assert_eq!(res.detections[0].bbox, truth[0].bbox);
    let stats = gw.shutdown();
    assert_eq!(stats.counters.frames_in, 1);
    assert_eq!(stats.counters.frames_inferred, 1);
    assert_eq!(stats.results_sent, 1);
    assert!(stats
        .line()
        .starts_with("frames_in=1 inferred=1 dropped=0 "));
}

#[test]
fn duplicate_robot_id_is_rejected() {
    let gw = start(GatewayConfig::default(), oracle());
    let (_s1, _r1, ack) = connect(gw.local_addr(), "nao-1");
    assert_eq!(ack.header.msg_type, MsgType::Hello);
    let (_s2, _r2, reply) = connect(gw.local_addr(), "nao-1");
    assert_eq!(reply.header.msg_type, MsgType::Bye);
    assert_eq!(
        ByeReason::decode(&reply.payload).unwrap(),
        ByeReason::DuplicateRobotId
    );
    assert_eq!(gw.stats().sessions, 1);
    assert_eq!(gw.shutdown().rejected_sessions, 1);
}

#[test]
fn non_hello_first_message_closes_connection() {
    let gw = start(GatewayConfig::default(), oracle());
    let mut s = TcpStream::connect(gw.local_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(b"GET / HTTP/1.1\r\n\r\n0123456789012345678901234567890123456789")
        .unwrap();
    let mut r = BufReader::new(s);
    let m = read_message(&mut r).unwrap().unwrap();
    assert_eq!(m.header.msg_type, MsgType::Bye);
    assert_eq!(ByeReason::decode(&m.payload).unwrap(), ByeReason::Malformed);
    assert!(read_message(&mut r).map(|m| m.is_none()).unwrap_or(true));
    gw.shutdown();
}

#[test]
fn second_gateway_on_same_port_fails() {
    let gw = start(GatewayConfig::default(), oracle());
    assert!(Gateway::start(gw.local_addr(), GatewayConfig::default(), oracle()).is_err());
    gw.shutdown();
}

#[test]
fn three_robots_get_only_their_own_results() {
    let gw = start(GatewayConfig::default(), oracle());
    let reports = run_fleet(gw.local_addr(), &small_fleet(3, 10.0, 3, 11)).unwrap();
    let stats = gw.shutdown();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert_eq!(r.failure, None, "{}", r.robot_id);
        assert_eq!(r.misrouted, 0);
        assert_eq!(r.out_of_order, 0);
        assert!(r.sent() >= 29, "{} sent {}", r.robot_id, r.sent());
        assert_eq!(r.results(), r.sent());
        for f in &r.frames {
            let boxes: Vec<_> = f.detections.iter().map(|d| (d.label_id, d.bbox)).collect();
            let truth: Vec<_> = f.truth.iter().map(|t| (t.label_id, t.bbox)).collect();
            assert_eq!(boxes, truth);
        }
        let report = evaluate(&r.to_eval_records(), EvalConfig::default());
        assert_eq!(report.map50, Some(1.0));
    }
    assert_eq!(stats.results_discarded, 0);
    assert_eq!(stats.per_robot.len(), 3);
}

#[test]
fn zero_duration_client_sends_hello_and_bye_only() {
    let gw = start(GatewayConfig::default(), oracle());
    let scene = SceneSpec::random(64, 48, 1, 1, 0).unwrap();
    let r = run_client(
        gw.local_addr(),
        &StreamProfile::steady(10.0),
        &scene,
        Duration::ZERO,
        &ClientOptions::new(rid("quick")),
    );
    assert_eq!(r.failure, None);
    assert_eq!(r.sent(), 0);
    // The session is gone once the BYE is processed.
    let deadline = Instant::now() + Duration::from_secs(2);
    while gw.stats().sessions > 0 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(gw.shutdown().sessions, 0);
}

#[test]
fn overload_drops_are_accounted_per_robot() {
    let det = Box::new(FixedServiceTime::new(
        OracleDetector::exact(),
        Duration::from_millis(50),
    ));
    let gw = start(GatewayConfig::default(), det);
    let reports = run_fleet(gw.local_addr(), &small_fleet(1, 30.0, 4, 3)).unwrap();
    assert!(gw.wait_idle(Duration::from_secs(5)));
    let stats = gw.stats();
    let log = gw.drop_log();
    gw.shutdown();
    let r = &reports[0];
    assert_eq!(r.failure, None);
    let robot = &stats.per_robot[&r.robot_id];
    assert!(robot.dropped > 0, "expected overload drops");
    assert_eq!(robot.dropped as usize, r.sent() - r.results());
    let dropped: std::collections::HashSet<u64> = log
        .iter()
        .filter(|e| e.cause == DropCause::Overload)
        .flat_map(|e| e.frames.iter().map(|(_, s)| *s))
        .collect();
    for f in r.frames.iter().filter(|f| f.t_result_us.is_some()) {
        assert!(!dropped.contains(&f.seq));
    }
    assert_eq!(
        stats.counters.frames_in,
        stats.counters.frames_inferred + stats.counters.frames_dropped + stats.queued as u64
    );
}

#[test]
fn disconnect_purges_queued_frames() {
    let det = Box::new(FixedServiceTime::new(
        OracleDetector::exact(),
        Duration::from_millis(200),
    ));
    let gw = start(GatewayConfig::default(), det);
    let (mut s, _r, _) = connect(gw.local_addr(), "leaver");
    let frame = FramePayload::solid(8, 8, [0; 3])
        .with_annotation(vec![])
        .encode()
        .unwrap();
    for seq in 0..4 {
        write_message(
            &mut s,
            &Message::new(MsgType::Frame, rid("leaver"), seq, 0, frame.clone()),
        )
        .unwrap();
    }
    // Let the frames arrive, then leave while the first is being inferred.
    std::thread::sleep(Duration::from_millis(50));
    write_message(
        &mut s,
        &Message::new(MsgType::Bye, rid("leaver"), 0, 0, vec![]),
    )
    .unwrap();
    assert!(gw.wait_idle(Duration::from_secs(5)));
    let stats = gw.stats();
    let log = gw.drop_log();
    gw.shutdown();
    let robot = stats.per_robot["leaver"];
    assert_eq!(robot.frames_in, 4);
    assert_eq!(robot.dropped, 3);
    assert_eq!(robot.results_discarded, 1);
    assert!(log
        .iter()
        .any(|e| e.cause == DropCause::Teardown && e.frames.len() == 3));
}

#[test]
fn stale_and_malformed_frames_are_ignored() {
    let gw = start(GatewayConfig::default(), oracle());
    let (mut s, mut r, _) = connect(gw.local_addr(), "nao-1");
    let frame = FramePayload::solid(8, 8, [0; 3])
        .with_annotation(vec![])
        .encode()
        .unwrap();
    write_message(
        &mut s,
        &Message::new(MsgType::Frame, rid("nao-1"), 5, 0, frame.clone()),
    )
    .unwrap();
    write_message(
        &mut s,
        &Message::new(MsgType::Frame, rid("nao-1"), 5, 0, frame.clone()),
    )
    .unwrap();
    write_message(
        &mut s,
        &Message::new(MsgType::Frame, rid("nao-1"), 3, 0, frame.clone()),
    )
    .unwrap();
    write_message(
        &mut s,
        &Message::new(MsgType::Frame, rid("nao-1"), 6, 0, vec![1, 2, 3]),
    )
    .unwrap();
    write_message(
        &mut s,
        &Message::new(MsgType::Frame, rid("nao-1"), 7, 0, frame),
    )
    .unwrap();
    let a = ResultPayload::decode(&read_message(&mut r).unwrap().unwrap().payload).unwrap();
    let b = ResultPayload::decode(&read_message(&mut r).unwrap().unwrap().payload).unwrap();
    assert_eq!((a.frame_seq, b.frame_seq), (5, 7));
    let robot = gw.shutdown().per_robot["nao-1"];
    assert_eq!(robot.stale, 2);
    assert_eq!(robot.malformed, 1);
    assert_eq!(robot.frames_in, 2);
}

#[test]
fn monitor_receives_overlaid_frames() {
    let gw = start(GatewayConfig::default(), oracle());
    let (_ms, mut mr, ack) = connect(gw.local_addr(), "mon-1");
    assert_eq!(ack.header.msg_type, MsgType::Hello);
    let (mut s, mut r, _) = connect(gw.local_addr(), "nao-1");
    let obj = SceneObject {
        label_id: 2,
        width: 40,
        height: 30,
        trajectory: Trajectory::Static { x: 20, y: 25 },
        color: [200, 200, 200],
    };
    let scene = SceneSpec::new(96, 64, [0, 0, 0], 3, vec![obj], 10).unwrap();
    let (frame, truth) = render_frame(&scene, 0);
    write_message(
        &mut s,
        &Message::new(MsgType::Frame, rid("nao-1"), 0, 0, frame.encode().unwrap()),
    )
    .unwrap();
    let result = ResultPayload::decode(&read_message(&mut r).unwrap().unwrap().payload).unwrap();
    let m = read_message(&mut mr).unwrap().unwrap();
    assert_eq!(m.header.msg_type, MsgType::Monitor);
    assert_eq!(m.header.robot_id, rid("nao-1"));
    assert_eq!(m.header.seq, 0);
    let shown = FramePayload::decode(&m.payload).unwrap();
    // Recover the rectangle from the class-colored pixels.
    let c = class_color(2);
    let (mut x1, mut y1, mut x2, mut y2) = (u16::MAX, u16::MAX, 0, 0);
    for y in 0..shown.height {
        for x in 0..shown.width {
            if shown.pixel(x, y) == c {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    assert_eq!(BBox::new(x1, y1, x2, y2), result.detections[0].bbox);
    assert_eq!(result.detections[0].bbox, truth[0].bbox);
    assert!(gw.shutdown().monitor_frames >= 1);
}

#[test]
fn bound_label_triggers_action_with_cooldown() {
    let cfg = GatewayConfig::parse(
        "classes = person, ball\ncooldown_secs = 60\n[actions]\n4 = kick at={label}\n[bindings.nao-1]\nball = kick\n",
    )
    .unwrap();
    let gw = start(cfg, oracle());
    let (mut s, mut r, _) = connect(gw.local_addr(), "nao-1");
    let truth = vec![
        LabeledBox {
            label_id: 0,
            bbox: BBox::new(0, 0, 4, 4),
        },
        LabeledBox {
            label_id: 1,
            bbox: BBox::new(4, 4, 8, 8),
        },
    ];
    let frame = FramePayload::solid(8, 8, [0; 3])
        .with_annotation(truth)
        .encode()
        .unwrap();
    for seq in 0..2 {
        write_message(
            &mut s,
            &Message::new(MsgType::Frame, rid("nao-1"), seq, 0, frame.clone()),
        )
        .unwrap();
    }
    let mut actions = Vec::new();
    let mut results = 0;
    while results < 2 {
        let m = read_message(&mut r).unwrap().unwrap();
        match m.header.msg_type {
            MsgType::Result => results += 1,
            MsgType::Action => actions.push(ActionPayload::decode(&m.payload).unwrap()),
            other => panic!("unexpected {other:?}"),
        }
    }
    // The action for frame 0 follows its result; nothing for frame 1.
    s.set_read_timeout(Some(Duration::from_millis(200)))
        .unwrap();
    r.get_ref()
        .set_read_timeout(Some(Duration::from_millis(200)))
        .unwrap();
    while let Ok(Some(m)) = read_message(&mut r) {
        if m.header.msg_type == MsgType::Action {
            actions.push(ActionPayload::decode(&m.payload).unwrap());
        }
    }
    assert_eq!(
        actions,
        vec![ActionPayload {
            action_id: 4,
            args: "at=ball".into()
        }]
    );
    gw.shutdown();
}

#[test]
fn stalled_monitor_does_not_block_robots() {
    let gw = start(GatewayConfig::default(), oracle());
    // A monitor that never reads: overlay frames fill its socket, then its
    // outbound queue.
    let (_stalled, _r, _) = connect(gw.local_addr(), "mon-stalled");
    let mut opts = small_fleet(2, 30.0, 3, 5);
    opts.width = 320;
    opts.height = 240;
    let reports = run_fleet(gw.local_addr(), &opts).unwrap();
    for r in &reports {
        assert_eq!(r.failure, None);
        assert_eq!(r.misrouted, 0);
        assert_eq!(r.results(), r.sent());
        assert!(r.latency().unwrap().mean_us < 100_000.0);
    }
    gw.shutdown();
}

#[test]
fn shutdown_says_bye_to_sessions() {
    let gw = start(GatewayConfig::default(), oracle());
    let (_s, mut r, _) = connect(gw.local_addr(), "nao-1");
    let stats = gw.shutdown();
    assert_eq!(stats.sessions, 0);
    let m = read_message(&mut r).unwrap().unwrap();
    assert_eq!(m.header.msg_type, MsgType::Bye);
    assert_eq!(ByeReason::decode(&m.payload).unwrap(), ByeReason::Shutdown);
}
