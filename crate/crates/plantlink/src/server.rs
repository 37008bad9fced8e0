//! Plant side of the link.

use std::io::{self, BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use acfleet_core::fleet::FleetError;
use acfleet_core::plant::Plant;
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{decode, encode, ErrorMessage, Message};

/// Reads newline-terminated lines with a deadline, keeping partial lines
/// across timeouts.
pub(crate) struct LineReader {
    reader: BufReader<TcpStream>,
    buf: Vec<u8>,
}

impl LineReader {
    pub(crate) fn new(stream: TcpStream) -> Self {
        Self { reader: BufReader::new(stream), buf: Vec::new() }
    }

    /// `Ok(None)` when the deadline passes first; `UnexpectedEof` when the
    /// peer has closed.
    pub(crate) fn read_line(&mut self, deadline: Option<Instant>) -> io::Result<Option<String>> {
        loop {
            let timeout = match deadline {
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Ok(None);
                    }
                    Some(d - now)
                }
                None => None,
            };
            self.reader.get_ref().set_read_timeout(timeout)?;
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
                Ok(_) if self.buf.ends_with(b"\n") => {
                    let line = String::from_utf8_lossy(&self.buf).trim_end().to_string();
                    self.buf.clear();
                    return Ok(Some(line));
                }
                Ok(_) => {}
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
                Err(e) => return Err(e),
            }
        }
    }
}

pub(crate) fn write_message(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    let mut line = encode(msg);
    line.push('\n');
    w.write_all(line.as_bytes())?;
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    /// How long to wait for the aggregator after publishing a frame.
    pub step_timeout: Duration,
    /// Stop after this many fleet steps.
    pub max_steps: Option<u64>,
    /// Hold each step to this wall-clock period, as a physical plant would.
    pub pace: Option<Duration>,
}

impl ServerConfig {
    /// Timeout of twice the control period, no pacing.
    pub fn for_control_dt(control_dt: f64) -> Self {
        Self { step_timeout: Duration::from_secs_f64(2.0 * control_dt), max_steps: None, pace: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServeReport {
    pub frames_published: u64,
    pub steps: u64,
    pub command_messages: u64,
    pub missed_steps: u64,
    pub errors_sent: u64,
    /// Commands for a frame the plant had not published yet. Always zero
    /// with a well-behaved aggregator.
    pub clock_violations: u64,
    /// Longest wait for the aggregator's answer.
    pub max_response: Duration,
    /// The aggregator hung up before `max_steps`.
    pub disconnected: bool,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Fleet(#[from] FleetError),
}

/// Run the plant against one aggregator connection until `max_steps` or
/// until the aggregator disconnects.
pub fn serve_connection(stream: TcpStream, plant: &mut Plant, cfg: &ServerConfig) -> Result<ServeReport, ServeError> {
    stream.set_nodelay(true)?;
    let peer = stream.peer_addr().ok();
    info!("aggregator connected from {peer:?}");
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut reader = LineReader::new(stream);
    let mut report = ServeReport::default();
    let mut last_cmd_seq: Option<u64> = None;

    while cfg.max_steps.is_none_or(|m| report.steps < m) {
        let started = Instant::now();
        let meas = plant.measurement();
        let (seq, time) = (meas.seq, meas.time);
        report.frames_published += 1;
        if let Err(e) = write_message(&mut writer, &Message::Measurement(meas)) {
            warn!("aggregator write failed: {e}");
            report.disconnected = true;
            break;
        }
        let deadline = started + cfg.step_timeout;
        let err = |w: &mut BufWriter<TcpStream>, r: &mut ServeReport, message: String| {
            r.errors_sent += 1;
            debug!("protocol error at seq {seq}: {message}");
            write_message(w, &Message::Error(ErrorMessage { seq, time, message }))
        };
        let mut answered = false;
        while !answered {
            let line = match reader.read_line(Some(deadline)) {
                Ok(Some(line)) => line,
                Ok(None) => break,
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => {
                    report.disconnected = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            match decode(&line) {
                Ok(Message::Command(c)) => {
                    report.command_messages += 1;
                    if c.seq > seq {
                        report.clock_violations += 1;
                        err(&mut writer, &mut report, format!("command seq {} is ahead of frame {seq}", c.seq))?;
                        continue;
                    }
                    if last_cmd_seq.is_some_and(|s| c.seq <= s) {
                        err(&mut writer, &mut report, format!("command seq {} does not increase", c.seq))?;
                        continue;
                    }
                    last_cmd_seq = Some(c.seq);
                    let unknown = plant.deliver(c.seq, &c.commands);
                    if !unknown.is_empty() {
                        let ids: Vec<String> = unknown.iter().map(|h| h.to_string()).collect();
                        err(&mut writer, &mut report, format!("unknown houses: {}", ids.join(",")))?;
                    }
                    answered = c.seq == seq;
                }
                Ok(_) => err(&mut writer, &mut report, "expected a cmd message".into())?,
                Err(e) => err(&mut writer, &mut report, e.to_string())?,
            }
        }
        if report.disconnected {
            break;
        }
        report.max_response = report.max_response.max(started.elapsed());
        if !answered {
            report.missed_steps += 1;
        }
        plant.advance()?;
        report.steps += 1;
        if let Some(p) = cfg.pace {
            if let Some(rest) = p.checked_sub(started.elapsed()) {
                std::thread::sleep(rest);
            }
        }
    }
    info!("aggregator session over after {} steps ({} missed)", report.steps, report.missed_steps);
    Ok(report)
}

/// Accept aggregators one at a time until the plant has run `max_steps`
/// in total (forever if unset).
pub fn serve(listener: &TcpListener, plant: &mut Plant, cfg: &ServerConfig) -> Result<Vec<ServeReport>, ServeError> {
    let mut sessions = Vec::new();
    let mut total = 0;
    loop {
        if cfg.max_steps.is_some_and(|m| total >= m) {
            return Ok(sessions);
        }
        let (stream, _) = listener.accept()?;
        let remaining = ServerConfig { max_steps: cfg.max_steps.map(|m| m - total), ..*cfg };
        let r = serve_connection(stream, plant, &remaining)?;
        total += r.steps;
        sessions.push(r);
    }
}
