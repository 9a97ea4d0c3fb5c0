//! The connection manager: a machine's table of named channels.
//!
//! Each name is UNBOUND, LISTENING on an ephemeral port, or CONNECTED to a
//! peer. Reads and writes on a name block until it is connected; rewiring
//! is done by third parties through the machine channel while the bundle
//! stays blocked. Messages already received locally survive a disconnect;
//! frames still in flight on a torn-down link are lost.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{read_frame, write_frame};
use super::ChannelError;
use crate::xml::Element;

/// Observable state of a channel name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelState {
    Unbound,
    Listening(u16),
    Connected(String),
}

impl ChannelState {
    pub fn label(&self) -> &'static str {
        match self {
            ChannelState::Unbound => "UNBOUND",
            ChannelState::Listening(_) => "LISTENING",
            ChannelState::Connected(_) => "CONNECTED",
        }
    }

    pub fn is_connected(&self) -> bool {
        matches!(self, ChannelState::Connected(_))
    }

    pub fn to_element(&self, name: &str) -> Element {
        let el = Element::new("CHANNEL").attr("name", name).attr("state", self.label());
        match self {
            ChannelState::Unbound => el,
            ChannelState::Listening(port) => el.attr("port", port.to_string()),
            ChannelState::Connected(peer) => el.attr("peer", peer),
        }
    }

    pub fn from_element(el: &Element) -> Result<(String, ChannelState), String> {
        let name = el.required_attr("name")?.to_string();
        let state = match el.get_attr("state") {
            Some("UNBOUND") => ChannelState::Unbound,
            Some("LISTENING") => ChannelState::Listening(
                el.required_attr("port")?
                    .parse()
                    .map_err(|e| format!("port: {e}"))?,
            ),
            Some("CONNECTED") => ChannelState::Connected(el.get_attr("peer").unwrap_or_default().to_string()),
            other => return Err(format!("unknown channel state {other:?}")),
        };
        Ok((name, state))
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelState::Unbound => f.write_str("UNBOUND"),
            ChannelState::Listening(p) => write!(f, "LISTENING({p})"),
            ChannelState::Connected(peer) => write!(f, "CONNECTED({peer})"),
        }
    }
}

const ACK: &[u8] = b"<ATTACHED/>";

struct Link {
    writer: Mutex<TcpStream>,
}

impl Link {
    fn send(&self, msg: &[u8], max: usize) -> Result<(), ChannelError> {
        let mut w = self.writer.lock().unwrap();
        write_frame(&mut *w, msg, max)
    }

    fn close(&self) {
        let _ = self.writer.lock().unwrap().shutdown(Shutdown::Both);
    }
}

enum Slot {
    Unbound,
    Listening {
        port: u16,
        addr: SocketAddr,
        cancelled: Arc<AtomicBool>,
    },
    Connected {
        peer: String,
        link: Arc<Link>,
    },
}

struct Entry {
    slot: Slot,
    queue: VecDeque<Vec<u8>>,
    // bumped on every state change; stale listeners and readers compare it
    generation: u64,
}

impl Entry {
    fn new() -> Self {
        Entry {
            slot: Slot::Unbound,
            queue: VecDeque::new(),
            generation: 0,
        }
    }

    fn state(&self) -> ChannelState {
        match &self.slot {
            Slot::Unbound => ChannelState::Unbound,
            Slot::Listening { port, .. } => ChannelState::Listening(*port),
            Slot::Connected { peer, .. } => ChannelState::Connected(peer.clone()),
        }
    }
}

#[derive(Default)]
struct Inner {
    entries: HashMap<String, Entry>,
    terminated: bool,
}

pub struct NamedChannelTable {
    inner: Mutex<Inner>,
    changed: Condvar,
    bind_host: String,
    max_frame: usize,
    connect_timeout: Duration,
}

impl NamedChannelTable {
    pub fn new(bind_host: impl Into<String>, max_frame: usize, connect_timeout: Duration) -> Arc<Self> {
        Arc::new(NamedChannelTable {
            inner: Mutex::new(Inner::default()),
            changed: Condvar::new(),
            bind_host: bind_host.into(),
            max_frame,
            connect_timeout,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap()
    }

    pub fn max_frame(&self) -> usize {
        self.max_frame
    }

    /// Registers `name` as UNBOUND if it is not yet known.
    pub fn declare(&self, name: &str) {
        self.lock().entries.entry(name.to_string()).or_insert_with(Entry::new);
    }

    pub fn state(&self, name: &str) -> Option<ChannelState> {
        self.lock().entries.get(name).map(Entry::state)
    }

    pub fn states(&self) -> Vec<(String, ChannelState)> {
        let inner = self.lock();
        let mut out: Vec<_> = inner
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), e.state()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Starts listening for exactly one inbound connection on `name`.
    pub fn create(self: &Arc<Self>, name: &str) -> Result<u16, ChannelError> {
        let mut inner = self.lock();
        if inner.terminated {
            return Err(ChannelError::Terminated);
        }
        let entry = inner.entries.entry(name.to_string()).or_insert_with(Entry::new);
        if !matches!(entry.slot, Slot::Unbound) {
            return Err(ChannelError::NameAlreadyBound(name.to_string()));
        }
        let listener = TcpListener::bind((self.bind_host.as_str(), 0))?;
        let addr = listener.local_addr()?;
        let cancelled = Arc::new(AtomicBool::new(false));
        entry.generation += 1;
        let generation = entry.generation;
        entry.slot = Slot::Listening {
            port: addr.port(),
            addr,
            cancelled: Arc::clone(&cancelled),
        };
        drop(inner);
        self.changed.notify_all();

        let table = Arc::clone(self);
        let name = name.to_string();
        thread::Builder::new()
            .name(format!("listen-{name}"))
            .spawn(move || {
                if let Ok((stream, peer)) = listener.accept() {
                    if !cancelled.load(Ordering::SeqCst) {
                        let _ = table.accept_inbound(&name, generation, stream, peer);
                    }
                }
            })?;
        Ok(addr.port())
    }

    /// Hands an inbound connection that arrived on the resource port to the
    /// LISTENING `name`, retiring its dedicated listener.
    pub fn attach_inbound(self: &Arc<Self>, name: &str, stream: TcpStream) -> Result<(), ChannelError> {
        let peer = stream.peer_addr()?;
        let generation = {
            let inner = self.lock();
            match inner.entries.get(name) {
                Some(e @ Entry { slot: Slot::Listening { .. }, .. }) => e.generation,
                _ => return Err(ChannelError::NameNotBound(name.to_string())),
            }
        };
        self.accept_inbound(name, generation, stream, peer)
    }

    fn accept_inbound(
        self: &Arc<Self>,
        name: &str,
        generation: u64,
        stream: TcpStream,
        peer: SocketAddr,
    ) -> Result<(), ChannelError> {
        let mut inner = self.lock();
        let entry = match inner.entries.get_mut(name) {
            Some(e) if e.generation == generation && matches!(e.slot, Slot::Listening { .. }) => e,
            _ => return Err(ChannelError::NameNotBound(name.to_string())),
        };
        if let Slot::Listening { cancelled, addr, .. } = &entry.slot {
            cancelled.store(true, Ordering::SeqCst);
            wake_listener(*addr);
        }
        let mut writer = stream.try_clone()?;
        write_frame(&mut writer, ACK, self.max_frame)?;
        let link = Arc::new(Link {
            writer: Mutex::new(writer),
        });
        entry.generation += 1;
        let generation = entry.generation;
        entry.slot = Slot::Connected {
            peer: peer.to_string(),
            link,
        };
        drop(inner);
        self.changed.notify_all();
        self.spawn_reader(name, generation, stream);
        Ok(())
    }

    /// Connects UNBOUND `name` to a peer listening on `host:port`.
    pub fn connect(self: &Arc<Self>, name: &str, host: &str, port: u16) -> Result<(), ChannelError> {
        self.connect_with_preamble(name, host, port, None)
    }

    /// Connects through the peer machine's resource port, naming the peer's
    /// LISTENING channel in an ATTACH preamble.
    pub fn connect_via_resource(
        self: &Arc<Self>,
        name: &str,
        host: &str,
        resource_port: u16,
        remote_name: &str,
    ) -> Result<(), ChannelError> {
        let preamble = Element::new("ATTACH").attr("channel", remote_name).to_bytes();
        self.connect_with_preamble(name, host, resource_port, Some(preamble))
    }

    fn connect_with_preamble(
        self: &Arc<Self>,
        name: &str,
        host: &str,
        port: u16,
        preamble: Option<Vec<u8>>,
    ) -> Result<(), ChannelError> {
        let generation = {
            let mut inner = self.lock();
            if inner.terminated {
                return Err(ChannelError::Terminated);
            }
            let entry = inner.entries.entry(name.to_string()).or_insert_with(Entry::new);
            if !matches!(entry.slot, Slot::Unbound) {
                return Err(ChannelError::NameAlreadyBound(name.to_string()));
            }
            entry.generation
        };

        let stream = self.dial(host, port)?;
        let mut rw = stream.try_clone()?;
        if let Some(p) = preamble {
            write_frame(&mut rw, &p, self.max_frame)?;
        }
        stream.set_read_timeout(Some(self.connect_timeout))?;
        match read_frame(&mut rw, self.max_frame) {
            Ok(Some(ack)) if ack == ACK => {}
            Ok(_) => return Err(ChannelError::ConnectFailed(format!("{host}:{port} refused the attach"))),
            Err(e) => return Err(ChannelError::ConnectFailed(format!("{host}:{port}: {e}"))),
        }
        stream.set_read_timeout(None)?;

        let mut inner = self.lock();
        let entry = inner.entries.entry(name.to_string()).or_insert_with(Entry::new);
        if entry.generation != generation || !matches!(entry.slot, Slot::Unbound) {
            let _ = stream.shutdown(Shutdown::Both);
            return Err(ChannelError::NameAlreadyBound(name.to_string()));
        }
        entry.generation += 1;
        let generation = entry.generation;
        entry.slot = Slot::Connected {
            peer: format!("{host}:{port}"),
            link: Arc::new(Link {
                writer: Mutex::new(rw),
            }),
        };
        drop(inner);
        self.changed.notify_all();
        self.spawn_reader(name, generation, stream);
        Ok(())
    }

    fn dial(&self, host: &str, port: u16) -> Result<TcpStream, ChannelError> {
        let addrs: Vec<SocketAddr> = (host, port)
            .to_socket_addrs()
            .map_err(|e| ChannelError::ConnectFailed(format!("{host}:{port}: {e}")))?
            .collect();
        let mut last = format!("{host}:{port}: no address");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.connect_timeout) {
                Ok(s) => return Ok(s),
                Err(e) => last = format!("{addr}: {e}"),
            }
        }
        Err(ChannelError::ConnectFailed(last))
    }

    fn spawn_reader(self: &Arc<Self>, name: &str, generation: u64, mut stream: TcpStream) {
        let table = Arc::clone(self);
        let owned = name.to_string();
        let max = self.max_frame;
        let spawned = thread::Builder::new().name(format!("link-{name}")).spawn(move || {
            let name = owned;
            loop {
                match read_frame(&mut stream, max) {
                    Ok(Some(msg)) => {
                        let mut inner = table.lock();
                        match inner.entries.get_mut(&name) {
                            Some(e) if e.generation == generation => e.queue.push_back(msg),
                            _ => break,
                        }
                        drop(inner);
                        table.changed.notify_all();
                    }
                    Ok(None) | Err(_) => {
                        table.drop_link(&name, generation);
                        break;
                    }
                }
            }
        });
        if spawned.is_err() {
            self.drop_link(name, generation);
        }
    }

    /// Peer went away: the name falls back to UNBOUND awaiting rewiring.
    fn drop_link(&self, name: &str, generation: u64) {
        let mut inner = self.lock();
        if let Some(e) = inner.entries.get_mut(name) {
            if e.generation == generation {
                if let Slot::Connected { link, .. } = &e.slot {
                    link.close();
                }
                e.slot = Slot::Unbound;
                e.generation += 1;
            }
        }
        drop(inner);
        self.changed.notify_all();
    }

    pub fn disconnect(&self, name: &str) -> Result<(), ChannelError> {
        let mut inner = self.lock();
        let entry = inner
            .entries
            .get_mut(name)
            .ok_or_else(|| ChannelError::NameNotBound(name.to_string()))?;
        match std::mem::replace(&mut entry.slot, Slot::Unbound) {
            Slot::Unbound => return Err(ChannelError::NameNotBound(name.to_string())),
            Slot::Listening { cancelled, addr, .. } => {
                cancelled.store(true, Ordering::SeqCst);
                wake_listener(addr);
            }
            Slot::Connected { link, .. } => link.close(),
        }
        entry.generation += 1;
        drop(inner);
        self.changed.notify_all();
        Ok(())
    }

    pub fn read(&self, name: &str) -> Result<Vec<u8>, ChannelError> {
        self.read_until(name, None)
    }

    pub fn read_timeout(&self, name: &str, timeout: Duration) -> Result<Vec<u8>, ChannelError> {
        self.read_until(name, Some(Instant::now() + timeout))
    }

    fn read_until(&self, name: &str, deadline: Option<Instant>) -> Result<Vec<u8>, ChannelError> {
        let mut inner = self.lock();
        inner.entries.entry(name.to_string()).or_insert_with(Entry::new);
        loop {
            if inner.terminated {
                return Err(ChannelError::Terminated);
            }
            if let Some(msg) = inner.entries.get_mut(name).and_then(|e| e.queue.pop_front()) {
                return Ok(msg);
            }
            inner = self.wait(inner, deadline)?;
        }
    }

    /// Sends on `name`, blocking until it is connected.
    pub fn write(&self, name: &str, msg: &[u8]) -> Result<(), ChannelError> {
        self.write_until(name, msg, None)
    }

    pub fn write_timeout(&self, name: &str, msg: &[u8], timeout: Duration) -> Result<(), ChannelError> {
        self.write_until(name, msg, Some(Instant::now() + timeout))
    }

    fn write_until(&self, name: &str, msg: &[u8], deadline: Option<Instant>) -> Result<(), ChannelError> {
        if msg.len() > self.max_frame {
            return Err(ChannelError::FrameTooLarge {
                len: msg.len(),
                max: self.max_frame,
            });
        }
        loop {
            let (link, generation) = {
                let mut inner = self.lock();
                inner.entries.entry(name.to_string()).or_insert_with(Entry::new);
                loop {
                    if inner.terminated {
                        return Err(ChannelError::Terminated);
                    }
                    let e = &inner.entries[name];
                    if let Slot::Connected { link, .. } = &e.slot {
                        break (Arc::clone(link), e.generation);
                    }
                    inner = self.wait(inner, deadline)?;
                }
            };
            match link.send(msg, self.max_frame) {
                Ok(()) => return Ok(()),
                Err(ChannelError::FrameTooLarge { len, max }) => {
                    return Err(ChannelError::FrameTooLarge { len, max })
                }
                Err(_) => self.drop_link(name, generation),
            }
        }
    }

    fn wait<'a>(
        &self,
        guard: MutexGuard<'a, Inner>,
        deadline: Option<Instant>,
    ) -> Result<MutexGuard<'a, Inner>, ChannelError> {
        match deadline {
            None => Ok(self.changed.wait(guard).unwrap()),
            Some(d) => {
                let now = Instant::now();
                if now >= d {
                    return Err(ChannelError::Timeout);
                }
                Ok(self.changed.wait_timeout(guard, d - now).unwrap().0)
            }
        }
    }

    /// Tears down every link and listener and fails all blocked callers.
    pub fn shutdown(&self) {
        let mut inner = self.lock();
        inner.terminated = true;
        for e in inner.entries.values_mut() {
            match std::mem::replace(&mut e.slot, Slot::Unbound) {
                Slot::Unbound => {}
                Slot::Listening { cancelled, addr, .. } => {
                    cancelled.store(true, Ordering::SeqCst);
                    wake_listener(addr);
                }
                Slot::Connected { link, .. } => link.close(),
            }
            e.generation += 1;
        }
        drop(inner);
        self.changed.notify_all();
    }
}

fn wake_listener(addr: SocketAddr) {
    let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(500));
}

/// A bundle-side handle on one named channel.
#[derive(Clone)]
pub struct NamedChannel {
    table: Arc<NamedChannelTable>,
    name: String,
}

impl NamedChannel {
    pub fn new(table: Arc<NamedChannelTable>, name: impl Into<String>) -> Self {
        let name = name.into();
        table.declare(&name);
        NamedChannel { table, name }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn read(&self) -> Result<Vec<u8>, ChannelError> {
        self.table.read(&self.name)
    }

    pub fn read_timeout(&self, timeout: Duration) -> Result<Vec<u8>, ChannelError> {
        self.table.read_timeout(&self.name, timeout)
    }

    pub fn write(&self, msg: &[u8]) -> Result<(), ChannelError> {
        self.table.write(&self.name, msg)
    }

    pub fn write_timeout(&self, msg: &[u8], timeout: Duration) -> Result<(), ChannelError> {
        self.table.write_timeout(&self.name, msg, timeout)
    }

    pub fn state(&self) -> ChannelState {
        self.table.state(&self.name).unwrap_or(ChannelState::Unbound)
    }
}

pub fn cm_create_named(t: &Arc<NamedChannelTable>, name: &str) -> Result<u16, ChannelError> {
    t.create(name)
}

pub fn cm_connect_named(t: &Arc<NamedChannelTable>, name: &str, host: &str, port: u16) -> Result<(), ChannelError> {
    t.connect(name, host, port)
}

pub fn cm_disconnect_named(t: &NamedChannelTable, name: &str) -> Result<(), ChannelError> {
    t.disconnect(name)
}
