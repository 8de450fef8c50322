//! Message transports: an in-process channel mesh and a TCP mesh.
//!
//! Both deliver frames between any ordered pair of endpoints in send order.
//! A constant one-way latency can be added; it is applied at the receiver
//! by holding each frame until its delivery time.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use crate::net::frame::{Endpoint, Frame, FrameError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{0} is not reachable")]
    Unreachable(Endpoint),
    #[error("connecting to {endpoint} at {addr}: {source}")]
    Connect {
        endpoint: Endpoint,
        addr: SocketAddr,
        source: io::Error,
    },
    #[error("peers did not connect in time: {0}")]
    Accept(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    Frame(Frame),
    /// The transport lost the connection to this endpoint.
    Disconnected(Endpoint),
}

/// One observed send or receive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub from: Endpoint,
    pub to: Endpoint,
    pub sent: bool,
    pub at: Instant,
    pub frame: Frame,
}

pub type Trace = Arc<Mutex<Vec<TraceEvent>>>;

fn record(trace: &Option<Trace>, from: Endpoint, to: Endpoint, sent: bool, frame: &Frame) {
    if let Some(t) = trace {
        t.lock().expect("trace lock").push(TraceEvent {
            from,
            to,
            sent,
            at: Instant::now(),
            frame: frame.clone(),
        });
    }
}

/// An endpoint's view of the network.
pub trait Link: Send {
    fn endpoint(&self) -> Endpoint;
    fn send(&mut self, to: Endpoint, frame: &Frame) -> Result<(), TransportError>;
    /// `Ok(None)` when nothing arrived within `timeout`.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Delivery>, TransportError>;
    /// Leaves the network; peers observe a disconnect.
    fn close(&mut self);
}

struct Envelope {
    deliver_at: Instant,
    delivery: Delivery,
}

fn hold_until(at: Instant) {
    let now = Instant::now();
    if at > now {
        thread::sleep(at - now);
    }
}

fn next_envelope(
    rx: &Receiver<Envelope>,
    timeout: Duration,
) -> Result<Option<Delivery>, TransportError> {
    match rx.recv_timeout(timeout) {
        Ok(env) => {
            hold_until(env.deliver_at);
            Ok(Some(env.delivery))
        }
        Err(RecvTimeoutError::Timeout) => Ok(None),
        Err(RecvTimeoutError::Disconnected) => Ok(None),
    }
}

/// In-process link backed by unbounded channels.
pub struct InProcessLink {
    me: Endpoint,
    peers: BTreeMap<Endpoint, Sender<Envelope>>,
    rx: Receiver<Envelope>,
    latency: Duration,
    trace: Option<Trace>,
}

/// Creates one connected link per endpoint.
pub fn in_process_mesh(
    endpoints: &[Endpoint],
    latency: Duration,
    trace: Option<Trace>,
) -> Vec<InProcessLink> {
    let channels: Vec<(Sender<Envelope>, Receiver<Envelope>)> =
        endpoints.iter().map(|_| unbounded()).collect();
    let senders: BTreeMap<Endpoint, Sender<Envelope>> = endpoints
        .iter()
        .zip(&channels)
        .map(|(e, (tx, _))| (*e, tx.clone()))
        .collect();
    endpoints
        .iter()
        .zip(channels)
        .map(|(&me, (_, rx))| InProcessLink {
            me,
            peers: senders.clone(),
            rx,
            latency,
            trace: trace.clone(),
        })
        .collect()
}

impl Link for InProcessLink {
    fn endpoint(&self) -> Endpoint {
        self.me
    }

    fn send(&mut self, to: Endpoint, frame: &Frame) -> Result<(), TransportError> {
        let tx = self.peers.get(&to).ok_or(TransportError::Unreachable(to))?;
        record(&self.trace, self.me, to, true, frame);
        tx.send(Envelope {
            deliver_at: Instant::now() + self.latency,
            delivery: Delivery::Frame(frame.clone()),
        })
        .map_err(|_| TransportError::Unreachable(to))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Delivery>, TransportError> {
        let d = next_envelope(&self.rx, timeout)?;
        if let Some(Delivery::Frame(f)) = &d {
            record(&self.trace, f.sender, self.me, false, f);
        }
        Ok(d)
    }

    fn close(&mut self) {
        for (&peer, tx) in &self.peers {
            if peer != self.me {
                let _ = tx.send(Envelope {
                    deliver_at: Instant::now(),
                    delivery: Delivery::Disconnected(self.me),
                });
            }
        }
        self.peers.clear();
    }
}

/// TCP link: one outbound stream per peer for writing, inbound streams are
/// drained by reader threads into a single inbox.
pub struct TcpLink {
    me: Endpoint,
    writers: BTreeMap<Endpoint, TcpStream>,
    rx: Receiver<Envelope>,
    trace: Option<Trace>,
}

impl TcpLink {
    /// Joins the mesh: accepts one inbound connection from every peer on
    /// `listener` and opens one outbound connection to every peer address.
    pub fn connect(
        me: Endpoint,
        listener: TcpListener,
        peers: &BTreeMap<Endpoint, SocketAddr>,
        latency: Duration,
        trace: Option<Trace>,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let peers: BTreeMap<Endpoint, SocketAddr> = peers
            .iter()
            .filter(|(e, _)| **e != me)
            .map(|(e, a)| (*e, *a))
            .collect();
        let (tx, rx) = unbounded();
        let deadline = Instant::now() + timeout;
        let expected = peers.len();
        let acceptor =
            thread::spawn(move || accept_peers(listener, expected, deadline, tx, latency));

        let mut writers = BTreeMap::new();
        for (&peer, &addr) in &peers {
            let stream =
                connect_with_retry(addr, deadline).map_err(|source| TransportError::Connect {
                    endpoint: peer,
                    addr,
                    source,
                })?;
            stream.set_nodelay(true)?;
            (&stream).write_all(&me.wire_id().to_be_bytes())?;
            writers.insert(peer, stream);
        }
        acceptor
            .join()
            .map_err(|_| TransportError::Accept("acceptor panicked".into()))??;
        Ok(Self {
            me,
            writers,
            rx,
            trace,
        })
    }
}

fn connect_with_retry(addr: SocketAddr, deadline: Instant) -> io::Result<TcpStream> {
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn accept_peers(
    listener: TcpListener,
    expected: usize,
    deadline: Instant,
    inbox: Sender<Envelope>,
    latency: Duration,
) -> Result<(), TransportError> {
    listener.set_nonblocking(true)?;
    let mut accepted = 0;
    while accepted < expected {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                let mut hello = [0u8; 2];
                stream.read_exact(&mut hello)?;
                let peer = Endpoint::from_wire_id(u16::from_be_bytes(hello));
                let inbox = inbox.clone();
                thread::spawn(move || read_loop(stream, peer, inbox, latency));
                accepted += 1;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(TransportError::Accept(format!(
                        "{accepted} of {expected} peers connected"
                    )));
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn read_loop(mut stream: TcpStream, peer: Endpoint, inbox: Sender<Envelope>, latency: Duration) {
    loop {
        let delivery = match Frame::read_from(&mut stream) {
            Ok(Some(frame)) => Delivery::Frame(frame),
            Ok(None) => Delivery::Disconnected(peer),
            Err(e) => {
                tracing::debug!(%peer, %e, "read failed");
                Delivery::Disconnected(peer)
            }
        };
        let last = matches!(delivery, Delivery::Disconnected(_));
        let env = Envelope {
            deliver_at: Instant::now() + latency,
            delivery,
        };
        if inbox.send(env).is_err() || last {
            return;
        }
    }
}

impl Link for TcpLink {
    fn endpoint(&self) -> Endpoint {
        self.me
    }

    fn send(&mut self, to: Endpoint, frame: &Frame) -> Result<(), TransportError> {
        let stream = self
            .writers
            .get_mut(&to)
            .ok_or(TransportError::Unreachable(to))?;
        record(&self.trace, self.me, to, true, frame);
        stream.write_all(&frame.encode()?)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<Delivery>, TransportError> {
        let d = next_envelope(&self.rx, timeout)?;
        if let Some(Delivery::Frame(f)) = &d {
            record(&self.trace, f.sender, self.me, false, f);
        }
        Ok(d)
    }

    fn close(&mut self) {
        for (_, s) in std::mem::take(&mut self.writers) {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        self.close();
    }
}

/// Binds one listener per endpoint on an ephemeral localhost port.
pub fn bind_local(
    endpoints: &[Endpoint],
) -> Result<(Vec<TcpListener>, BTreeMap<Endpoint, SocketAddr>), TransportError> {
    let mut listeners = Vec::with_capacity(endpoints.len());
    let mut addrs = BTreeMap::new();
    for &e in endpoints {
        let l = TcpListener::bind(("127.0.0.1", 0))?;
        addrs.insert(e, l.local_addr()?);
        listeners.push(l);
    }
    Ok((listeners, addrs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::frame::Opcode;
    use crate::sharing::PartyId;

    fn member(i: u16) -> Endpoint {
        Endpoint::Member(PartyId::new(i).unwrap())
    }

    fn frames(from: Endpoint, count: u64) -> Vec<Frame> {
        (0..count)
            .map(|i| Frame::new(Opcode::ShareDist, i, 1, from).with_payload(vec![i as u128]))
            .collect()
    }

    fn exchange(mut links: Vec<Box<dyn Link>>) {
        let sent = frames(links[1].endpoint(), 50);
        let to = links[0].endpoint();
        let mut receiver = links.remove(0);
        let mut sender = links.remove(0);
        let handle = thread::spawn(move || {
            let mut got = Vec::new();
            while got.len() < 50 {
                match receiver.recv(Duration::from_secs(5)).unwrap() {
                    Some(Delivery::Frame(f)) => got.push(f),
                    other => panic!("unexpected {other:?}"),
                }
            }
            got
        });
        for f in &sent {
            sender.send(to, f).unwrap();
        }
        assert_eq!(handle.join().unwrap(), sent);
        sender.close();
    }

    #[test]
    fn in_process_fifo() {
        let links = in_process_mesh(&[member(1), member(2)], Duration::ZERO, None);
        exchange(
            links
                .into_iter()
                .map(|l| Box::new(l) as Box<dyn Link>)
                .collect(),
        );
    }

    #[test]
    fn tcp_fifo_and_disconnect() {
        let eps = [member(1), member(2)];
        let (listeners, addrs) = bind_local(&eps).unwrap();
        let handles: Vec<_> = eps
            .iter()
            .zip(listeners)
            .map(|(&e, l)| {
                let addrs = addrs.clone();
                thread::spawn(move || {
                    TcpLink::connect(e, l, &addrs, Duration::ZERO, None, Duration::from_secs(5))
                        .unwrap()
                })
            })
            .collect();
        let mut links: Vec<TcpLink> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let mut second = links.pop().unwrap();
        let mut first = links.pop().unwrap();
        let f = Frame::new(Opcode::Finished, 3, 1, member(2));
        second.send(member(1), &f).unwrap();
        assert_eq!(
            first.recv(Duration::from_secs(5)).unwrap(),
            Some(Delivery::Frame(f))
        );
        second.close();
        assert_eq!(
            first.recv(Duration::from_secs(5)).unwrap(),
            Some(Delivery::Disconnected(member(2)))
        );
    }

    #[test]
    fn latency_delays_delivery() {
        let mut links = in_process_mesh(&[member(1), member(2)], Duration::from_millis(30), None);
        let start = Instant::now();
        let f = Frame::new(Opcode::Finished, 1, 1, member(2));
        links[1].send(member(1), &f).unwrap();
        links[0].recv(Duration::from_secs(1)).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(30));
    }
}
