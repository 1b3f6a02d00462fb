use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tracing::{debug, info, warn};

use super::parse::salvage_seq;
use super::{filter_accepts, handle_envelope, parse_envelope, ConnectionId, OrphanPolicy, PartitionState, SubscriptionFilter};
use crate::storage::Backend;

#[derive(Debug, Clone)]
pub struct AcquisitionConfig {
    pub filter: SubscriptionFilter,
    pub orphan_policy: OrphanPolicy,
    /// Longer lines are answered with `err 0 MALFORMED_JSON` and skipped.
    pub max_line_bytes: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            filter: SubscriptionFilter::default(),
            orphan_policy: OrphanPolicy::Reject,
            max_line_bytes: 64 << 20,
        }
    }
}

/// Counters of a running server.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: AtomicU64,
    pub accepted: AtomicU64,
    pub rejected: AtomicU64,
}

struct Shared {
    store: Arc<dyn Backend>,
    config: AcquisitionConfig,
    partitions: Mutex<HashMap<String, Arc<Mutex<PartitionState>>>>,
    stats: ServerStats,
    next_conn: AtomicU64,
    shutdown: AtomicBool,
    live: Mutex<HashMap<ConnectionId, TcpStream>>,
}

/// Line-protocol acquisition server: one thread per publisher connection,
/// lifecycle transitions serialized per partition.
pub struct AcquisitionServer {
    listener: TcpListener,
    shared: Arc<Shared>,
}

/// Handle on a server running in a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl AcquisitionServer {
    pub fn bind(addr: impl ToSocketAddrs, store: Arc<dyn Backend>, config: AcquisitionConfig) -> io::Result<Self> {
        Ok(AcquisitionServer {
            listener: TcpListener::bind(addr)?,
            shared: Arc::new(Shared {
                store,
                config,
                partitions: Mutex::new(HashMap::new()),
                stats: ServerStats::default(),
                next_conn: AtomicU64::new(1),
                shutdown: AtomicBool::new(false),
                live: Mutex::new(HashMap::new()),
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until shut down through a [`ServerHandle`].
    pub fn serve(self) {
        info!(addr = ?self.listener.local_addr().ok(), "acquisition server listening");
        for stream in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(stream) => {
                    let shared = self.shared.clone();
                    std::thread::spawn(move || shared.connection(stream));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let shared = self.shared.clone();
        let thread = std::thread::Builder::new()
            .name("obk-acquire".into())
            .spawn(move || self.serve())?;
        Ok(ServerHandle {
            addr,
            shared,
            thread: Some(thread),
        })
    }
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.shared.stats
    }

    /// Stops accepting, closes open connections and waits for the accept
    /// loop to finish.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        for (_, s) in self.shared.live.lock().unwrap_or_else(|p| p.into_inner()).drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop();
        }
    }
}

/// Reads one `\n`-terminated line into `buf` (without the newline).
/// Returns `Ok(None)` at end of stream and `Ok(Some(false))` when the line
/// exceeded `max` bytes and was discarded.
fn read_line(reader: &mut impl BufRead, buf: &mut Vec<u8>, max: usize) -> io::Result<Option<bool>> {
    buf.clear();
    let n = reader.by_ref().take(max as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        return Ok(Some(true));
    }
    if buf.len() <= max {
        // Final line without a newline.
        return Ok(Some(true));
    }
    // Skip the rest of the oversized line.
    loop {
        let chunk = reader.fill_buf()?;
        if chunk.is_empty() {
            break;
        }
        match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => {
                reader.consume(i + 1);
                break;
            }
            None => {
                let len = chunk.len();
                reader.consume(len);
            }
        }
    }
    Ok(Some(false))
}

impl Shared {
    fn connection(&self, stream: TcpStream) {
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        self.stats.connections.fetch_add(1, Ordering::Relaxed);
        let peer = stream.peer_addr().ok();
        debug!(conn, ?peer, "publisher connected");
        if let Ok(clone) = stream.try_clone() {
            self.live.lock().unwrap_or_else(|p| p.into_inner()).insert(conn, clone);
        }
        if let Err(e) = self.serve_connection(conn, stream) {
            debug!(conn, "connection closed: {e}");
        }
        self.live.lock().unwrap_or_else(|p| p.into_inner()).remove(&conn);
    }

    fn serve_connection(&self, conn: ConnectionId, stream: TcpStream) -> io::Result<()> {
        let _ = stream.set_nodelay(true);
        let mut reader = BufReader::with_capacity(64 << 10, stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        let mut line = Vec::new();
        while let Some(fits) = read_line(&mut reader, &mut line, self.config.max_line_bytes)? {
            let reply = if fits {
                self.process(conn, &line)
            } else {
                self.stats.rejected.fetch_add(1, Ordering::Relaxed);
                "err 0 MALFORMED_JSON".to_owned()
            };
            writer.write_all(reply.as_bytes())?;
            writer.write_all(b"\n")?;
            // Batch replies while the publisher has more lines in flight.
            if reader.buffer().is_empty() {
                writer.flush()?;
            }
        }
        writer.flush()
    }

    fn partition_state(&self, partition: &str) -> Result<Arc<Mutex<PartitionState>>, crate::storage::StoreError> {
        let mut map = self.partitions.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = map.get(partition) {
            return Ok(s.clone());
        }
        let state = Arc::new(Mutex::new(PartitionState::load(partition, self.store.as_ref())?));
        map.insert(partition.to_owned(), state.clone());
        Ok(state)
    }

    fn process(&self, conn: ConnectionId, line: &[u8]) -> String {
        let result = (|| {
            let env = match parse_envelope(line) {
                Ok(env) => env,
                Err(e) => {
                    debug!(conn, "rejected line: {e}");
                    return Err((salvage_seq(line), e.code()));
                }
            };
            if !filter_accepts(&self.config.filter, &env) {
                return Err((env.seq, "FILTERED"));
            }
            let state = self.partition_state(&env.partition).map_err(|e| (env.seq, e.code()))?;
            let mut state = state.lock().unwrap_or_else(|p| p.into_inner());
            handle_envelope(&mut state, conn, &env, self.store.as_ref(), self.config.orphan_policy)
                .map(|_| env.seq)
                .map_err(|e| {
                    debug!(conn, seq = env.seq, "rejected envelope: {e}");
                    (env.seq, e.code())
                })
        })();
        match result {
            Ok(seq) => {
                self.stats.accepted.fetch_add(1, Ordering::Relaxed);
                format!("ok {seq}")
            }
            Err((seq, code)) => {
                self.stats.rejected.fetch_add(1, Ordering::Relaxed);
                format!("err {seq} {code}")
            }
        }
    }
}
