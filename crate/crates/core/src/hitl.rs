//! Virtual hardware-in-the-loop harness.
//!
//! The plant, the controller (virtual PLC and relay) and an optional spoofing
//! proxy are separate endpoints joined by byte streams carrying a line
//! protocol:
//!
//! ```text
//! HELLO seq version dt digest
//! STEP  seq t delta omega
//! CMD   seq d OPEN|CLOSED
//! BYE   seq reason...
//! ```
//!
//! The plant sends `HELLO 0`, the controller answers with its own `HELLO 0`,
//! then each `STEP k` is answered by exactly one `CMD k` before the plant
//! integrates one step. Floats use the shortest representation that parses
//! back to the same bits, so both ends see identical values.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::Serialize;

use crate::attack::AttackPolicy;
use crate::error::{Error, Result};
use crate::hjsolver::DisturbanceBound;
use crate::plant::{rk4_step, step_count, RelayStatus, Sample, SmibParams, State, Trajectory};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello { seq: u64, version: u32, dt: f64, digest: u64 },
    Step { seq: u64, t: f64, delta: f64, omega: f64 },
    Cmd { seq: u64, d: f64, relay: RelayStatus },
    Bye { seq: u64, reason: String },
}

impl Frame {
    pub fn seq(&self) -> u64 {
        match self {
            Frame::Hello { seq, .. } | Frame::Step { seq, .. } | Frame::Cmd { seq, .. } | Frame::Bye { seq, .. } => {
                *seq
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "HELLO",
            Frame::Step { .. } => "STEP",
            Frame::Cmd { .. } => "CMD",
            Frame::Bye { .. } => "BYE",
        }
    }

    /// One protocol line including the trailing newline. Line breaks inside
    /// a `Bye` reason are replaced by spaces.
    pub fn encode(&self) -> String {
        match self {
            Frame::Hello { seq, version, dt, digest } => format!("HELLO {seq} {version} {dt} {digest}\n"),
            Frame::Step { seq, t, delta, omega } => format!("STEP {seq} {t} {delta} {omega}\n"),
            Frame::Cmd { seq, d, relay } => format!("CMD {seq} {d} {}\n", relay_token(*relay)),
            Frame::Bye { seq, reason } if reason.is_empty() => format!("BYE {seq}\n"),
            Frame::Bye { seq, reason } => format!("BYE {seq} {}\n", reason.replace(['\n', '\r'], " ")),
        }
    }

    pub fn decode(line: &str) -> Result<Frame> {
        let body = line.strip_suffix('\n').unwrap_or(line);
        let bad = |why: &str| Error::Protocol(format!("{why}: {body:?}"));
        let (kind, rest) = body.split_once(' ').ok_or_else(|| bad("missing sequence number"))?;
        if kind == "BYE" {
            let (seq, reason) = rest.split_once(' ').unwrap_or((rest, ""));
            let seq = seq.parse().map_err(|_| bad("bad sequence number"))?;
            return Ok(Frame::Bye { seq, reason: reason.to_string() });
        }
        let fields: Vec<&str> = rest.split(' ').collect();
        let arity = match kind {
            "HELLO" | "STEP" => 4,
            "CMD" => 3,
            _ => return Err(bad("unknown frame kind")),
        };
        if fields.len() != arity {
            return Err(bad(&format!("{kind} takes {arity} fields, got {}", fields.len())));
        }
        let seq: u64 = fields[0].parse().map_err(|_| bad("bad sequence number"))?;
        let num = |s: &str| f64::from_str(s).map_err(|_| bad("bad number"));
        Ok(match kind {
            "HELLO" => Frame::Hello {
                seq,
                version: fields[1].parse().map_err(|_| bad("bad version"))?,
                dt: num(fields[2])?,
                digest: fields[3].parse().map_err(|_| bad("bad digest"))?,
            },
            "STEP" => Frame::Step { seq, t: num(fields[1])?, delta: num(fields[2])?, omega: num(fields[3])? },
            _ => Frame::Cmd {
                seq,
                d: num(fields[1])?,
                relay: match fields[2] {
                    "OPEN" => RelayStatus::Open,
                    "CLOSED" => RelayStatus::Closed,
                    _ => return Err(bad("bad relay status")),
                },
            },
        })
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.encode().trim_end())
    }
}

fn relay_token(relay: RelayStatus) -> &'static str {
    match relay {
        RelayStatus::Open => "OPEN",
        RelayStatus::Closed => "CLOSED",
    }
}

/// FNV-1a over the bit patterns of the plant parameters.
pub fn param_digest(params: &SmibParams) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in [params.m, params.d, params.p_m, params.p_e, params.p_l] {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// A framed, line-oriented connection.
pub struct Link {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

impl Link {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self { reader: Box::new(BufReader::new(reader)), writer: Box::new(writer) }
    }

    /// Wraps a TCP stream; reads give up after `timeout`.
    pub fn tcp(stream: TcpStream, timeout: Duration) -> Result<Self> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self::new(stream, writer))
    }

    pub fn send_line(&mut self, line: &str) -> Result<()> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| if is_disconnect(&e) { Error::Disconnected(e.to_string()) } else { e.into() })
    }

    pub fn send(&mut self, frame: &Frame) -> Result<()> {
        self.send_line(&frame.encode())
    }

    /// Next raw line including its newline, or `None` once the peer is gone.
    pub fn recv_line(&mut self) -> Result<Option<String>> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Ok(None),
            Ok(_) if !line.ends_with('\n') => Err(Error::Protocol(format!("truncated frame {line:?}"))),
            Ok(_) => Ok(Some(line)),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Err(Error::Timeout("a frame from the peer".into()))
            }
            Err(e) if is_disconnect(&e) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn recv(&mut self) -> Result<Option<Frame>> {
        self.recv_line()?.map(|l| Frame::decode(&l)).transpose()
    }
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConfig {
    pub params: SmibParams,
    pub x0: State,
    pub dt: f64,
    pub horizon: f64,
    /// Sleep `dt` of wall-clock time per step.
    pub realtime: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantRun {
    pub trajectory: Trajectory,
    /// Reason from the controller's `Bye`, or why the run stopped early.
    pub stop_reason: Option<String>,
    /// The run stopped before the horizon (disconnect, `Bye`, timeout).
    pub aborted: bool,
}

fn handshake_check(frame: &Frame, dt: f64, digest: u64) -> Result<()> {
    match frame {
        Frame::Hello { seq: 0, version, dt: peer_dt, digest: peer_digest } => {
            if *version != PROTOCOL_VERSION {
                return Err(Error::Protocol(format!("protocol version {version}, expected {PROTOCOL_VERSION}")));
            }
            if peer_dt.to_bits() != dt.to_bits() {
                return Err(Error::Protocol(format!("peer dt {peer_dt}, expected {dt}")));
            }
            if *peer_digest != digest {
                return Err(Error::Protocol(format!("parameter digest {peer_digest:x}, expected {digest:x}")));
            }
            Ok(())
        }
        other => Err(Error::Protocol(format!("expected HELLO 0, got {other}"))),
    }
}

/// Plant side: send the state, block for the command, integrate one step.
pub fn run_plant_endpoint(cfg: &PlantConfig, link: &mut Link) -> Result<PlantRun> {
    cfg.params.validate()?;
    if !(cfg.dt > 0.0 && cfg.dt.is_finite() && cfg.horizon >= cfg.dt) {
        return Err(Error::InvalidParams(format!("dt {} / horizon {} invalid", cfg.dt, cfg.horizon)));
    }
    let digest = param_digest(&cfg.params);
    link.send(&Frame::Hello { seq: 0, version: PROTOCOL_VERSION, dt: cfg.dt, digest })?;
    match link.recv()? {
        Some(reply) => handshake_check(&reply, cfg.dt, digest)?,
        None => return Err(Error::Protocol("controller closed before HELLO".into())),
    }

    let steps = step_count(cfg.horizon, cfg.dt);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut state = cfg.x0;
    let finish = |samples, reason: Option<String>, aborted, divergent| PlantRun {
        trajectory: Trajectory { samples, divergent },
        stop_reason: reason,
        aborted,
    };
    for k in 0..=steps {
        let seq = k as u64 + 1;
        let t = k as f64 * cfg.dt;
        let sent = link.send(&Frame::Step { seq, t, delta: state.delta, omega: state.omega });
        let reply = match sent {
            Ok(()) => link.recv(),
            Err(e) => Err(e),
        };
        let (d, relay) = match reply {
            Ok(Some(Frame::Cmd { seq: s, d, relay })) if s == seq => (d, relay),
            Ok(Some(Frame::Cmd { seq: s, .. })) => {
                return Err(Error::Protocol(format!("CMD seq {s} answers STEP seq {seq}")));
            }
            Ok(Some(Frame::Bye { reason, .. })) => return Ok(finish(samples, Some(reason), true, false)),
            Ok(Some(other)) => {
                return Err(Error::Protocol(format!("expected CMD {seq}, got {} {}", other.kind(), other.seq())));
            }
            Ok(None) | Err(Error::Disconnected(_)) => {
                return Ok(finish(samples, Some("controller disconnected".into()), true, false));
            }
            Err(Error::Timeout(why)) => {
                log::warn!("plant aborted at step {seq}: {why}");
                return Ok(finish(samples, Some(format!("timeout: {why}")), true, false));
            }
            Err(e) => return Err(e),
        };
        samples.push(Sample { t, state, d, relay });
        if k == steps {
            break;
        }
        let next = rk4_step(state, &cfg.params, relay, d, cfg.dt);
        if !next.is_finite() {
            let _ = link.send(&Frame::Bye { seq: seq + 1, reason: "diverged".into() });
            return Ok(finish(samples, Some("diverged".into()), false, true));
        }
        state = next;
        if cfg.realtime {
            thread::sleep(Duration::from_secs_f64(cfg.dt));
        }
    }
    if let Err(e) = link.send(&Frame::Bye { seq: steps as u64 + 2, reason: "done".into() }) {
        log::warn!("final BYE not delivered: {e}");
    }
    Ok(finish(samples, None, false, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommandRecord {
    pub seq: u64,
    pub t: f64,
    pub d: f64,
    pub relay: RelayStatus,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControllerLog {
    pub commands: Vec<CommandRecord>,
    pub bye: Option<String>,
}

/// Controller side: answer each `STEP` with `CMD(policy(t, x), schedule(t))`.
pub fn run_controller_endpoint(
    params: &SmibParams,
    dt: f64,
    mut policy: impl FnMut(f64, State) -> f64,
    mut relay_schedule: impl FnMut(f64) -> RelayStatus,
    link: &mut Link,
) -> Result<ControllerLog> {
    let digest = param_digest(params);
    match link.recv()? {
        Some(hello) => {
            if let Err(e) = handshake_check(&hello, dt, digest) {
                let _ = link.send(&Frame::Bye { seq: 0, reason: e.to_string() });
                return Err(e);
            }
        }
        None => return Err(Error::Protocol("plant closed before HELLO".into())),
    }
    link.send(&Frame::Hello { seq: 0, version: PROTOCOL_VERSION, dt, digest })?;

    let mut log = ControllerLog::default();
    let mut last_seq = 0;
    loop {
        match link.recv()? {
            Some(Frame::Step { seq, t, delta, omega }) => {
                if seq <= last_seq {
                    return Err(Error::Protocol(format!("STEP seq {seq} after {last_seq}")));
                }
                last_seq = seq;
                let d = policy(t, State::new(delta, omega));
                let relay = relay_schedule(t);
                link.send(&Frame::Cmd { seq, d, relay })?;
                log.commands.push(CommandRecord { seq, t, d, relay });
            }
            Some(Frame::Bye { reason, .. }) => {
                log.bye = Some(reason);
                return Ok(log);
            }
            Some(other) => {
                return Err(Error::Protocol(format!("expected STEP, got {} {}", other.kind(), other.seq())));
            }
            None => {
                log.bye = Some("plant disconnected".into());
                return Ok(log);
            }
        }
    }
}

/// Replacement for the commanded disturbance inside a rule window.
#[derive(Debug, Clone)]
pub enum DOverride {
    Keep,
    Constant(f64),
    Policy(AttackPolicy),
}

#[derive(Debug, Clone)]
pub struct SpoofRule {
    pub t0: f64,
    pub t1: f64,
    pub d_override: DOverride,
    pub relay_override: Option<RelayStatus>,
}

impl SpoofRule {
    pub fn new(t0: f64, t1: f64, d_override: DOverride, relay_override: Option<RelayStatus>) -> Result<Self> {
        if t0.is_nan() || t1.is_nan() || t0 > t1 {
            return Err(Error::InvalidParams(format!("spoof window [{t0}, {t1}] is empty")));
        }
        Ok(Self { t0, t1, d_override, relay_override })
    }

    pub fn active(&self, t: f64) -> bool {
        self.t0 <= t && t <= self.t1
    }

    fn overlaps(&self, other: &SpoofRule) -> bool {
        self.t0 <= other.t1 && other.t0 <= self.t1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TamperRecord {
    pub seq: u64,
    pub t: f64,
    pub field: &'static str,
    pub before: serde_json::Value,
    pub after: serde_json::Value,
    pub clamped: bool,
}

/// Tamper log as JSON lines.
pub fn tamper_log_jsonl(records: &[TamperRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("tamper records serialize") + "\n")
        .collect()
}

/// Sits between plant and controller. Plant frames pass through unchanged;
/// `CMD` frames inside an active rule window are rewritten. Untouched frames
/// are forwarded byte for byte.
pub fn run_spoof_proxy(
    rules: &[SpoofRule],
    bound: DisturbanceBound,
    plant: &mut Link,
    controller: &mut Link,
) -> Result<Vec<TamperRecord>> {
    for (i, a) in rules.iter().enumerate() {
        for (j, b) in rules.iter().enumerate().skip(i + 1) {
            if a.overlaps(b) {
                log::warn!("spoof rules {i} and {j} overlap; rule {i} takes precedence");
            }
        }
    }
    let mut log = Vec::new();
    let mut last_step: Option<(u64, f64, State)> = None;
    loop {
        let Some(line) = plant.recv_line()? else { return Ok(log) };
        let frame = Frame::decode(&line)?;
        controller.send_line(&line)?;
        match frame {
            Frame::Bye { .. } => return Ok(log),
            Frame::Step { seq, t, delta, omega } => last_step = Some((seq, t, State::new(delta, omega))),
            _ => {}
        }

        let Some(line) = controller.recv_line()? else { return Ok(log) };
        let frame = Frame::decode(&line)?;
        match frame {
            Frame::Cmd { seq, d, relay } => {
                let (t, state) = match last_step {
                    Some((s, t, x)) if s == seq => (t, x),
                    _ => return Err(Error::Protocol(format!("CMD seq {seq} without matching STEP"))),
                };
                match rules.iter().find(|r| r.active(t)) {
                    Some(rule) => {
                        let (cmd, records) = rewrite(rule, &bound, seq, t, state, d, relay);
                        log.extend(records);
                        plant.send(&cmd)?;
                    }
                    None => plant.send_line(&line)?,
                }
            }
            Frame::Bye { .. } => {
                plant.send_line(&line)?;
                return Ok(log);
            }
            _ => plant.send_line(&line)?,
        }
    }
}

fn rewrite(
    rule: &SpoofRule,
    bound: &DisturbanceBound,
    seq: u64,
    t: f64,
    state: State,
    d: f64,
    relay: RelayStatus,
) -> (Frame, Vec<TamperRecord>) {
    let mut records = Vec::new();
    let wanted = match &rule.d_override {
        DOverride::Keep => None,
        DOverride::Constant(v) => Some(*v),
        DOverride::Policy(p) => Some(p.disturbance(state)),
    };
    let mut new_d = d;
    if let Some(w) = wanted {
        new_d = bound.clamp(w);
        let clamped = new_d != w;
        if new_d.to_bits() != d.to_bits() || clamped {
            records.push(TamperRecord { seq, t, field: "d", before: d.into(), after: new_d.into(), clamped });
        }
    }
    let new_relay = rule.relay_override.unwrap_or(relay);
    if new_relay != relay {
        records.push(TamperRecord {
            seq,
            t,
            field: "relay",
            before: relay.label().into(),
            after: new_relay.label().into(),
            clamped: false,
        });
    }
    (Frame::Cmd { seq, d: new_d, relay: new_relay }, records)
}

type PolicyFn = Box<dyn FnMut(f64, State) -> f64 + Send>;
type ScheduleFn = Box<dyn FnMut(f64) -> RelayStatus + Send>;

/// Plant, controller and (optionally) proxy wired together over loopback TCP,
/// each on its own thread.
pub struct LoopbackScenario {
    pub plant: PlantConfig,
    pub policy: PolicyFn,
    pub relay_schedule: ScheduleFn,
    /// `None` connects plant and controller directly.
    pub proxy: Option<(Vec<SpoofRule>, DisturbanceBound)>,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct LoopbackRun {
    pub plant: PlantRun,
    pub controller: ControllerLog,
    pub tamper: Vec<TamperRecord>,
}

fn loopback_pair(timeout: Duration) -> Result<(Link, Link)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let client = TcpStream::connect(listener.local_addr()?)?;
    let (server, _) = listener.accept()?;
    Ok((Link::tcp(client, timeout)?, Link::tcp(server, timeout)?))
}

fn join<T>(handle: thread::JoinHandle<Result<T>>, who: &str) -> Result<T> {
    handle.join().map_err(|_| Error::Protocol(format!("{who} thread panicked")))?
}

pub fn run_loopback(scenario: LoopbackScenario) -> Result<LoopbackRun> {
    let LoopbackScenario { plant: cfg, mut policy, mut relay_schedule, proxy, timeout } = scenario;
    let (mut plant_link, mut ctrl_link, proxy_links) = match proxy {
        None => {
            let (p, c) = loopback_pair(timeout)?;
            (p, c, None)
        }
        Some(rules) => {
            let (p, proxy_down) = loopback_pair(timeout)?;
            let (proxy_up, c) = loopback_pair(timeout)?;
            (p, c, Some((rules, proxy_down, proxy_up)))
        }
    };
    let proxy_handle = proxy_links.map(|((rules, bound), mut down, mut up)| {
        thread::spawn(move || run_spoof_proxy(&rules, bound, &mut down, &mut up))
    });
    let params = cfg.params;
    let dt = cfg.dt;
    let ctrl_handle = thread::spawn(move || {
        run_controller_endpoint(&params, dt, &mut policy, &mut relay_schedule, &mut ctrl_link)
    });
    let plant = run_plant_endpoint(&cfg, &mut plant_link);
    drop(plant_link);
    let controller = join(ctrl_handle, "controller")?;
    let tamper = match proxy_handle {
        Some(h) => join(h, "proxy")?,
        None => Vec::new(),
    };
    Ok(LoopbackRun { plant: plant?, controller, tamper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{equilibria, simulate};

    #[test]
    fn cmd_wire_format() {
        let f = Frame::Cmd { seq: 7, d: 0.2, relay: RelayStatus::Open };
        assert_eq!(f.encode(), "CMD 7 0.2 OPEN\n");
        assert_eq!(Frame::decode("CMD 7 0.2 OPEN\n").unwrap(), f);
    }

    #[test]
    fn step_round_trip() {
        let f = Frame::Step { seq: 3, t: 1.0, delta: 0.125, omega: -4.5 };
        assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
        let g = Frame::Step { seq: 9, t: 0.1 + 0.2, delta: 1.0 / 3.0, omega: -1e-300 };
        assert_eq!(Frame::decode(&g.encode()).unwrap(), g);
    }

    #[test]
    fn malformed_lines_are_protocol_errors() {
        for line in ["CMD 7 0.2\n", "CMD 7 0.2 AJAR\n", "STEP x 1 2 3\n", "PING 1\n", "HELLO\n", "STEP 1 1 2 3 4\n"] {
            match Frame::decode(line) {
                Err(Error::Protocol(msg)) => assert!(msg.contains(line.trim_end()), "{msg}"),
                other => panic!("{line:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn bye_reason_keeps_spaces() {
        let f = Frame::Bye { seq: 4, reason: "controller  shut down".into() };
        assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
        let empty = Frame::Bye { seq: 5, reason: String::new() };
        assert_eq!(empty.encode(), "BYE 5\n");
        assert_eq!(Frame::decode("BYE 5\n").unwrap(), empty);
    }

    #[test]
    fn digest_tracks_parameters() {
        let p = SmibParams::default();
        assert_eq!(param_digest(&p), param_digest(&p.clone()));
        assert_ne!(param_digest(&p), param_digest(&SmibParams { p_l: 0.41, ..p }));
    }

    fn scenario(x0: State, horizon: f64) -> LoopbackScenario {
        LoopbackScenario {
            plant: PlantConfig { params: SmibParams::default(), x0, dt: 0.01, horizon, realtime: false },
            policy: Box::new(|_, _| 0.0),
            relay_schedule: Box::new(|_| RelayStatus::Closed),
            proxy: None,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    #[test]
    fn equilibrium_stays_put_over_the_wire() {
        let eq = equilibria(&SmibParams::default(), RelayStatus::Closed).unwrap().stable;
        let run = run_loopback(scenario(eq, 0.5)).unwrap();
        assert!(!run.plant.aborted);
        assert_eq!(run.plant.trajectory.samples.len(), 51);
        for s in &run.plant.trajectory.samples {
            assert!((s.state.delta - eq.delta).abs() < 1e-12 && s.state.omega.abs() < 1e-12);
        }
        assert_eq!(run.controller.bye.as_deref(), Some("done"));
    }

    #[test]
    fn wire_run_is_bitwise_in_process_run() {
        let p = SmibParams::default();
        let x0 = State::new(-0.5, 13.0);
        let mut sc = scenario(x0, 1.0);
        sc.policy = Box::new(|t, x| if x.omega > 0.0 { 0.2 } else { -0.1 * t });
        sc.relay_schedule = Box::new(|t| if t < 0.5 { RelayStatus::Closed } else { RelayStatus::Open });
        sc.proxy = Some((Vec::new(), DisturbanceBound::default()));
        let run = run_loopback(sc).unwrap();
        let local = simulate(
            x0,
            &p,
            |t, x| if x.omega > 0.0 { 0.2 } else { -0.1 * t },
            |t| if t < 0.5 { RelayStatus::Closed } else { RelayStatus::Open },
            1.0,
            0.01,
        )
        .unwrap();
        assert_eq!(run.plant.trajectory, local);
        assert!(run.tamper.is_empty());
    }

    #[test]
    fn relay_flips_once_at_schedule_step() {
        let eq = equilibria(&SmibParams::default(), RelayStatus::Closed).unwrap().stable;
        let mut sc = scenario(eq, 0.2);
        sc.relay_schedule = Box::new(|t| if t >= 0.1 - 1e-12 { RelayStatus::Open } else { RelayStatus::Closed });
        let run = run_loopback(sc).unwrap();
        let flips: Vec<u64> = run
            .controller
            .commands
            .windows(2)
            .filter(|w| w[0].relay != w[1].relay)
            .map(|w| w[1].seq)
            .collect();
        assert_eq!(flips, vec![11]);
    }

    #[test]
    fn proxy_clamps_and_logs_override() {
        let eq = equilibria(&SmibParams::default(), RelayStatus::Closed).unwrap().stable;
        let mut sc = scenario(eq, 0.1);
        let rule = SpoofRule::new(0.05, f64::INFINITY, DOverride::Constant(0.5), Some(RelayStatus::Open)).unwrap();
        sc.proxy = Some((vec![rule], DisturbanceBound::symmetric(0.2).unwrap()));
        let run = run_loopback(sc).unwrap();
        let samples = &run.plant.trajectory.samples;
        for s in samples {
            if s.t >= 0.05 - 1e-12 {
                assert_eq!((s.d, s.relay), (0.2, RelayStatus::Open));
            } else {
                assert_eq!((s.d, s.relay), (0.0, RelayStatus::Closed));
            }
        }
        let d_records: Vec<_> = run.tamper.iter().filter(|r| r.field == "d").collect();
        assert_eq!(d_records.len(), 6);
        assert!(d_records.iter().all(|r| r.clamped && r.after == serde_json::json!(0.2)));
        let line = tamper_log_jsonl(&run.tamper[..1]);
        assert!(line.starts_with("{\"seq\":6,") && line.ends_with("}\n"), "{line}");
    }

    #[test]
    fn controller_bye_truncates_plant_run() {
        let (mut plant_link, mut ctrl_link) = loopback_pair(DEFAULT_TIMEOUT).unwrap();
        let p = SmibParams::default();
        let handle = thread::spawn(move || {
            let hello = ctrl_link.recv().unwrap().unwrap();
            ctrl_link.send(&hello).unwrap();
            for _ in 0..3 {
                let Some(Frame::Step { seq, .. }) = ctrl_link.recv().unwrap() else { panic!() };
                ctrl_link.send(&Frame::Cmd { seq, d: 0.0, relay: RelayStatus::Closed }).unwrap();
            }
            ctrl_link.recv().unwrap();
            ctrl_link.send(&Frame::Bye { seq: 4, reason: "operator stop".into() }).unwrap();
        });
        let cfg = PlantConfig { params: p, x0: State::new(0.5, 0.0), dt: 0.01, horizon: 1.0, realtime: false };
        let run = run_plant_endpoint(&cfg, &mut plant_link).unwrap();
        handle.join().unwrap();
        assert!(run.aborted);
        assert_eq!(run.trajectory.samples.len(), 3);
        assert_eq!(run.stop_reason.as_deref(), Some("operator stop"));
    }

    #[test]
    fn disconnect_and_timeout_are_flagged() {
        let cfg = PlantConfig {
            params: SmibParams::default(),
            x0: State::new(0.5, 0.0),
            dt: 0.01,
            horizon: 1.0,
            realtime: false,
        };
        let (mut plant_link, mut ctrl_link) = loopback_pair(Duration::from_millis(200)).unwrap();
        let handle = thread::spawn(move || {
            let hello = ctrl_link.recv().unwrap().unwrap();
            ctrl_link.send(&hello).unwrap();
            ctrl_link.recv().unwrap();
            ctrl_link
        });
        let run = run_plant_endpoint(&cfg, &mut plant_link).unwrap();
        let ctrl_link = handle.join().unwrap();
        assert!(run.aborted && run.trajectory.samples.is_empty());
        assert!(run.stop_reason.unwrap().starts_with("timeout"));
        drop(ctrl_link);

        let (mut plant_link, mut ctrl_link) = loopback_pair(DEFAULT_TIMEOUT).unwrap();
        let handle = thread::spawn(move || {
            let hello = ctrl_link.recv().unwrap().unwrap();
            ctrl_link.send(&hello).unwrap();
        });
        let run = run_plant_endpoint(&cfg, &mut plant_link).unwrap();
        handle.join().unwrap();
        assert!(run.aborted);
        assert_eq!(run.stop_reason.as_deref(), Some("controller disconnected"));
    }

    #[test]
    fn mismatched_handshake_and_sequence_are_rejected() {
        let cfg = PlantConfig {
            params: SmibParams::default(),
            x0: State::new(0.5, 0.0),
            dt: 0.01,
            horizon: 1.0,
            realtime: false,
        };
        let (mut plant_link, mut ctrl_link) = loopback_pair(DEFAULT_TIMEOUT).unwrap();
        let handle = thread::spawn(move || {
            let other = SmibParams { m: 0.03, ..SmibParams::default() };
            run_controller_endpoint(&other, 0.01, |_, _| 0.0, |_| RelayStatus::Closed, &mut ctrl_link)
        });
        assert!(matches!(run_plant_endpoint(&cfg, &mut plant_link), Err(Error::Protocol(_))));
        assert!(matches!(handle.join().unwrap(), Err(Error::Protocol(_))));

        let (mut plant_link, mut ctrl_link) = loopback_pair(DEFAULT_TIMEOUT).unwrap();
        let handle = thread::spawn(move || {
            let hello = ctrl_link.recv().unwrap().unwrap();
            ctrl_link.send(&hello).unwrap();
            ctrl_link.recv().unwrap();
            ctrl_link.send(&Frame::Cmd { seq: 5, d: 0.0, relay: RelayStatus::Closed }).unwrap();
        });
        match run_plant_endpoint(&cfg, &mut plant_link) {
            Err(Error::Protocol(msg)) => assert!(msg.contains('5') && msg.contains('1'), "{msg}"),
            other => panic!("{other:?}"),
        }
        handle.join().unwrap();
    }
}
