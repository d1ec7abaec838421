//! TCP backend.
//!
//! Every worker listens on its own address. During setup a worker connects
//! to each higher-ranked peer and accepts connections from lower-ranked
//! ones; the connecting side opens with a hello frame naming itself. Each
//! connection then carries frames in both directions. A reader thread per
//! connection drains the socket into a queue, so writers never deadlock on
//! full kernel buffers.

use std::collections::BTreeMap;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::codec::{self, FrameHeader, Message, HEADER_LEN, MSG_TERMINATE};
use super::{Endpoint, TransportError};
use crate::partition::WorkerId;

const POLL: Duration = Duration::from_millis(5);

type Inbound = Receiver<Result<Vec<u8>, io::Error>>;

pub struct TcpEndpoint {
    worker: WorkerId,
    writers: BTreeMap<WorkerId, TcpStream>,
    inbound: BTreeMap<WorkerId, Inbound>,
    readers: Vec<JoinHandle<()>>,
    timeout: Duration,
}

/// Binds `n` listeners on ephemeral localhost ports.
pub fn bind_local(n: usize) -> io::Result<Vec<TcpListener>> {
    (0..n).map(|_| TcpListener::bind("127.0.0.1:0")).collect()
}

fn setup_err(msg: impl Into<String>) -> TransportError {
    TransportError::Setup(msg.into())
}

fn read_frame(stream: &mut TcpStream) -> io::Result<Vec<u8>> {
    let mut frame = vec![0u8; HEADER_LEN];
    stream.read_exact(&mut frame)?;
    let header =
        FrameHeader::parse(&frame).map_err(|e| io::Error::new(ErrorKind::InvalidData, e))?;
    frame.resize(HEADER_LEN + header.payload_len as usize, 0);
    stream.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(frame)
}

fn connect_with_retry(addr: SocketAddr, deadline: Instant) -> Result<TcpStream, TransportError> {
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => {
                return Err(setup_err(format!("connect to {addr}: {e}")))
            }
            Err(_) => thread::sleep(POLL * 4),
        }
    }
}

/// Connects `worker` to each of `peers` using the listen addresses in
/// `addrs` (indexed by worker id). `listener` must be bound to
/// `addrs[worker]`.
pub fn establish(
    worker: WorkerId,
    listener: TcpListener,
    addrs: &[SocketAddr],
    peers: &[WorkerId],
    timeout: Duration,
) -> Result<TcpEndpoint, TransportError> {
    let deadline = Instant::now() + timeout;
    let mut streams: BTreeMap<WorkerId, TcpStream> = BTreeMap::new();

    for &peer in peers.iter().filter(|&&p| p > worker) {
        let addr = *addrs
            .get(usize::from(peer))
            .ok_or_else(|| setup_err(format!("no address for worker {peer}")))?;
        let mut stream = connect_with_retry(addr, deadline)?;
        stream
            .set_nodelay(true)
            .map_err(|source| TransportError::Io { peer, source })?;
        let hello = codec::encode_message(&Message::Hello {
            source_worker: worker,
        })
        .expect("hello frame");
        stream
            .write_all(&hello)
            .map_err(|source| TransportError::Io { peer, source })?;
        streams.insert(peer, stream);
    }

    let expected: Vec<WorkerId> = peers.iter().copied().filter(|&p| p < worker).collect();
    listener
        .set_nonblocking(true)
        .map_err(|e| setup_err(e.to_string()))?;
    while streams.len() < peers.len() {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream
                    .set_nonblocking(false)
                    .and_then(|_| stream.set_nodelay(true))
                    .and_then(|_| stream.set_read_timeout(Some(timeout)))
                    .map_err(|e| setup_err(e.to_string()))?;
                let frame =
                    read_frame(&mut stream).map_err(|e| setup_err(format!("hello: {e}")))?;
                let peer = match codec::decode_message(&frame)? {
                    Message::Hello { source_worker } => source_worker,
                    other => return Err(setup_err(format!("expected hello, got {other:?}"))),
                };
                if !expected.contains(&peer) || streams.contains_key(&peer) {
                    return Err(setup_err(format!(
                        "unexpected connection from worker {peer}"
                    )));
                }
                stream
                    .set_read_timeout(None)
                    .map_err(|e| setup_err(e.to_string()))?;
                streams.insert(peer, stream);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(setup_err(format!(
                        "worker {worker}: timed out waiting for peers to connect"
                    )));
                }
                thread::sleep(POLL);
            }
            Err(e) => return Err(setup_err(e.to_string())),
        }
    }

    let mut inbound = BTreeMap::new();
    let mut readers = Vec::new();
    for (&peer, stream) in &streams {
        let reader = stream
            .try_clone()
            .map_err(|source| TransportError::Io { peer, source })?;
        let (tx, rx) = mpsc::channel();
        readers.push(spawn_reader(reader, tx));
        inbound.insert(peer, rx);
    }

    Ok(TcpEndpoint {
        worker,
        writers: streams,
        inbound,
        readers,
        timeout,
    })
}

fn spawn_reader(mut stream: TcpStream, tx: Sender<Result<Vec<u8>, io::Error>>) -> JoinHandle<()> {
    thread::spawn(move || loop {
        match read_frame(&mut stream) {
            Ok(frame) => {
                let last = frame[5] == MSG_TERMINATE;
                if tx.send(Ok(frame)).is_err() || last {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    })
}

impl Endpoint for TcpEndpoint {
    fn worker(&self) -> WorkerId {
        self.worker
    }

    fn send(&mut self, peer: WorkerId, frame: Vec<u8>) -> Result<(), TransportError> {
        let stream = self.writers.get_mut(&peer).ok_or(TransportError::NoRoute {
            from: self.worker,
            to: peer,
        })?;
        stream
            .write_all(&frame)
            .map_err(|source| TransportError::Io { peer, source })
    }

    fn recv(&mut self, peer: WorkerId) -> Result<Vec<u8>, TransportError> {
        let rx = self.inbound.get(&peer).ok_or(TransportError::NoRoute {
            from: peer,
            to: self.worker,
        })?;
        match rx.recv_timeout(self.timeout) {
            Ok(Ok(frame)) => Ok(frame),
            Ok(Err(e)) if e.kind() == ErrorKind::UnexpectedEof => {
                Err(TransportError::Disconnected(peer))
            }
            Ok(Err(source)) => Err(TransportError::Io { peer, source }),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(self.timeout, peer)),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected(peer)),
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        for stream in self.writers.values() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        for handle in self.readers.drain(..) {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(timeout: Duration) -> (TcpEndpoint, TcpEndpoint) {
        let listeners = bind_local(2).unwrap();
        let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
        let mut it = listeners.into_iter();
        let (l0, l1) = (it.next().unwrap(), it.next().unwrap());
        let a2 = addrs.clone();
        let h = thread::spawn(move || establish(1, l1, &a2, &[0], timeout).unwrap());
        let a = establish(0, l0, &addrs, &[1], timeout).unwrap();
        (a, h.join().unwrap())
    }

    #[test]
    fn loopback_preserves_frames_and_order() {
        let (mut a, mut b) = pair(Duration::from_secs(5));
        let f1 = codec::encode(&codec::SpikeBatch {
            epoch: 0,
            source_worker: 0,
            records: vec![codec::SpikeRecord {
                gid: 5,
                step_offset: 1,
            }],
        })
        .unwrap();
        let f2 = codec::encode(&codec::SpikeBatch {
            epoch: 1,
            source_worker: 0,
            records: vec![],
        })
        .unwrap();
        a.send(1, f1.clone()).unwrap();
        a.send(1, f2.clone()).unwrap();
        assert_eq!(b.recv(0).unwrap(), f1);
        assert_eq!(b.recv(0).unwrap(), f2);
        b.send(0, f2.clone()).unwrap();
        assert_eq!(a.recv(1).unwrap(), f2);
    }

    #[test]
    fn recv_times_out_without_sender() {
        let (mut a, _b) = pair(Duration::from_millis(100));
        assert!(matches!(a.recv(1), Err(TransportError::Timeout(_, 1))));
    }

    #[test]
    fn peer_drop_is_reported() {
        let (mut a, b) = pair(Duration::from_secs(5));
        drop(b);
        assert!(matches!(
            a.recv(1),
            Err(TransportError::Disconnected(1)) | Err(TransportError::Io { .. })
        ));
    }
}
