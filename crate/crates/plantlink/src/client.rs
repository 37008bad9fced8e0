//! Aggregator side of the link. The client only reacts: it waits for a
//! frame, then answers it.

use std::io::{self, BufWriter, ErrorKind};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use acfleet_core::plant::{DeviceCommand, Measurement};
use thiserror::Error;

use crate::server::{write_message, LineReader};
use crate::wire::{decode, CommandMessage, ErrorMessage, Message, WireError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad message from plant: {0}")]
    Wire(#[from] WireError),
    #[error("no frame within {0:?}")]
    Timeout(Duration),
    #[error("refusing to answer frame {seq}: newest frame seen is {newest:?}")]
    AheadOfPlant { seq: u64, newest: Option<u64> },
}

pub struct AggregatorClient {
    reader: LineReader,
    writer: BufWriter<TcpStream>,
    newest_frame: Option<u64>,
    /// Frames received so far.
    pub frames_seen: u64,
    /// Command messages sent so far.
    pub answers_sent: u64,
    /// Error responses from the plant, oldest first.
    pub errors: Vec<ErrorMessage>,
}

impl AggregatorClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    pub fn from_stream(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: BufWriter::new(stream.try_clone()?),
            reader: LineReader::new(stream),
            newest_frame: None,
            frames_seen: 0,
            answers_sent: 0,
            errors: Vec::new(),
        })
    }

    /// Wait for the next measurement frame. Error responses that arrive in
    /// the meantime are collected in [`errors`](Self::errors). `Ok(None)`
    /// means the plant closed the connection.
    pub fn next_frame(&mut self, timeout: Option<Duration>) -> Result<Option<Measurement>, ClientError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            let line = match self.reader.read_line(deadline) {
                Ok(Some(line)) => line,
                Ok(None) => return Err(ClientError::Timeout(timeout.unwrap_or_default())),
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            match decode(&line)? {
                Message::Measurement(m) => {
                    self.newest_frame = Some(m.seq);
                    self.frames_seen += 1;
                    return Ok(Some(m));
                }
                Message::Error(e) => self.errors.push(e),
                Message::Command(_) => {}
            }
        }
    }

    /// Answer frame `seq`. An empty command list still counts as an answer.
    pub fn answer(&mut self, seq: u64, time: f64, commands: Vec<DeviceCommand>) -> Result<(), ClientError> {
        if self.newest_frame.is_none_or(|n| seq > n) {
            return Err(ClientError::AheadOfPlant { seq, newest: self.newest_frame });
        }
        write_message(&mut self.writer, &Message::Command(CommandMessage { seq, time, commands }))?;
        self.answers_sent += 1;
        Ok(())
    }
}
