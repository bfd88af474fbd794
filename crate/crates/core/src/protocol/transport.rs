//! Byte transports the protocol runs over: real TCP streams, and an
//! in-memory loopback pair for deterministic tests and simulations.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

/// A bidirectional byte stream with a configurable read timeout.
pub trait Transport: Read + Write + Send {
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()>;
}

impl Transport for TcpStream {
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        TcpStream::set_read_timeout(self, timeout)
    }
}

/// One side of an in-process connection. Dropping an end reads as EOF on the
/// peer; writing to a dropped peer is a broken pipe.
pub struct LoopbackEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pending_pos: usize,
    read_timeout: Option<Duration>,
}

/// Connected pair of in-memory transports.
pub fn loopback_pair() -> (LoopbackEnd, LoopbackEnd) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    let mk = |tx, rx| LoopbackEnd {
        tx,
        rx,
        pending: Vec::new(),
        pending_pos: 0,
        read_timeout: None,
    };
    (mk(a_tx, a_rx), mk(b_tx, b_rx))
}

impl Read for LoopbackEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        if self.pending_pos >= self.pending.len() {
            let chunk = match self.read_timeout {
                None => match self.rx.recv() {
                    Ok(c) => c,
                    Err(_) => return Ok(0), // peer gone: EOF
                },
                Some(t) => match self.rx.recv_timeout(t) {
                    Ok(c) => c,
                    Err(RecvTimeoutError::Disconnected) => return Ok(0),
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(io::Error::new(io::ErrorKind::TimedOut, "read timed out"))
                    }
                },
            };
            self.pending = chunk;
            self.pending_pos = 0;
            if self.pending.is_empty() {
                return Ok(0);
            }
        }
        let avail = &self.pending[self.pending_pos..];
        let n = avail.len().min(buf.len());
        buf[..n].copy_from_slice(&avail[..n]);
        self.pending_pos += n;
        Ok(n)
    }
}

impl Write for LoopbackEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Transport for LoopbackEnd {
    fn set_read_timeout(&mut self, timeout: Option<Duration>) -> io::Result<()> {
        self.read_timeout = timeout;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_cross_the_pair_in_order() {
        let (mut a, mut b) = loopback_pair();
        a.write_all(b"hello ").unwrap();
        a.write_all(b"world").unwrap();
        let mut buf = [0u8; 11];
        b.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hello world");
    }

    #[test]
    fn dropped_peer_reads_as_eof() {
        let (a, mut b) = loopback_pair();
        drop(a);
        let mut buf = [0u8; 4];
        assert_eq!(b.read(&mut buf).unwrap(), 0);
    }

    #[test]
    fn write_to_dropped_peer_is_broken_pipe() {
        let (mut a, b) = loopback_pair();
        drop(b);
        let err = a.write_all(b"x").unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::BrokenPipe);
    }

    #[test]
    fn read_timeout_fires_without_data() {
        let (mut a, _b) = loopback_pair();
        a.set_read_timeout(Some(Duration::from_millis(10))).unwrap();
        let mut buf = [0u8; 1];
        let err = a.read(&mut buf).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::TimedOut);
    }

    #[test]
    fn partial_reads_resume_over_chunk_boundaries() {
        let (mut a, mut b) = loopback_pair();
        a.write_all(&[1, 2, 3, 4, 5]).unwrap();
        let mut first = [0u8; 2];
        b.read_exact(&mut first).unwrap();
        a.write_all(&[6, 7]).unwrap();
        let mut rest = [0u8; 5];
        b.read_exact(&mut rest).unwrap();
        assert_eq!(first, [1, 2]);
        assert_eq!(rest, [3, 4, 5, 6, 7]);
    }
}
