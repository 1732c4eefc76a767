//! Connections from a node to the ingestion service.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// Opens a fresh byte stream to the server.
pub trait Connector {
    type Link: Read + Write;

    fn connect(&mut self) -> io::Result<Self::Link>;
}

#[derive(Debug, Clone)]
pub struct TcpConnector {
    address: String,
    connect_timeout: Duration,
    io_timeout: Duration,
}

impl TcpConnector {
    pub fn new(address: impl Into<String>) -> Self {
        TcpConnector {
            address: address.into(),
            connect_timeout: Duration::from_secs(1),
            io_timeout: Duration::from_secs(2),
        }
    }
}

impl Connector for TcpConnector {
    type Link = TcpStream;

    fn connect(&mut self) -> io::Result<TcpStream> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, "address did not resolve");
        for addr in self.address.to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, self.connect_timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(self.io_timeout))?;
                    stream.set_write_timeout(Some(self.io_timeout))?;
                    return Ok(stream);
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

/// Scripted link failure for exercising reconnect paths: after
/// `cut_after_writes` successful writes the live link breaks, and the next
/// `refuse_connects` connection attempts are refused.
#[derive(Debug)]
pub struct FaultyConnector<C> {
    inner: C,
    writes: Arc<AtomicU64>,
    cut_after_writes: u64,
    refuse_connects: u32,
    armed: bool,
    tripped: bool,
}

impl<C: Connector> FaultyConnector<C> {
    pub fn new(inner: C, cut_after_writes: u64, refuse_connects: u32) -> Self {
        FaultyConnector {
            inner,
            writes: Arc::new(AtomicU64::new(0)),
            cut_after_writes,
            refuse_connects,
            armed: true,
            tripped: false,
        }
    }

    /// Writes that made it through so far.
    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::SeqCst)
    }
}

pub struct FaultyLink<L> {
    inner: L,
    writes: Arc<AtomicU64>,
    cut_at: Option<u64>,
}

impl<C: Connector> Connector for FaultyConnector<C> {
    type Link = FaultyLink<C::Link>;

    fn connect(&mut self) -> io::Result<Self::Link> {
        if !self.armed && !self.tripped {
            self.tripped = true;
        }
        if self.tripped && self.refuse_connects > 0 {
            self.refuse_connects -= 1;
            return Err(io::Error::new(
                io::ErrorKind::ConnectionRefused,
                "scripted outage",
            ));
        }
        let cut_at = if self.armed {
            self.armed = false;
            Some(self.cut_after_writes)
        } else {
            None
        };
        Ok(FaultyLink {
            inner: self.inner.connect()?,
            writes: Arc::clone(&self.writes),
            cut_at,
        })
    }
}

impl<L: Read> Read for FaultyLink<L> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

impl<L: Write> Write for FaultyLink<L> {
    /// Each call forwards the whole buffer or nothing.
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some(limit) = self.cut_at {
            if self.writes.load(Ordering::SeqCst) >= limit {
                return Err(io::Error::new(
                    io::ErrorKind::BrokenPipe,
                    "scripted link cut",
                ));
            }
        }
        self.inner.write_all(buf)?;
        self.writes.fetch_add(1, Ordering::SeqCst);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sink;

    impl Connector for Sink {
        type Link = io::Cursor<Vec<u8>>;
        fn connect(&mut self) -> io::Result<Self::Link> {
            Ok(io::Cursor::new(Vec::new()))
        }
    }

    #[test]
    fn faulty_connector_script() {
        let mut c = FaultyConnector::new(Sink, 2, 3);
        let mut link = c.connect().unwrap();
        link.write_all(b"a").unwrap();
        link.write_all(b"b").unwrap();
        assert!(link.write_all(b"c").is_err());
        for _ in 0..3 {
            assert!(c.connect().is_err());
        }
        let mut link = c.connect().unwrap();
        for _ in 0..10 {
            link.write_all(b"x").unwrap();
        }
        assert_eq!(c.writes(), 12);
    }
}
