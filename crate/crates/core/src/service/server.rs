//! TCP front end for one session. Socket I/O runs on per-client threads;
//! the simulation loop owns the session and talks to them only through
//! channels.

use super::protocol::{decode_inbound, encode, read_frame, write_frame, Envelope, Inbound, Outbound};
use super::record::Driver;
use crate::command::{parse_instruction, LlmBackend};
use crate::world::DT;
use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub struct ServeOptions {
    pub bind: SocketAddr,
    /// Pace ticks at the simulated rate instead of running flat out.
    pub realtime: bool,
    /// Write the session event log here on shutdown.
    pub record: Option<PathBuf>,
    /// Interpret commands with this backend off the tick path.
    pub language: Option<Arc<LlmBackend>>,
}

enum Event {
    Connected(u64, Sender<Arc<Vec<u8>>>),
    Frame(u64, Vec<u8>),
    Disconnected(u64),
    Resolved(Envelope<Inbound>),
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    loop_thread: Option<JoinHandle<Driver>>,
}

impl ServerHandle {
    /// Stops the loop and returns the driver (with its log, if recording).
    pub fn stop(mut self) -> Driver {
        self.shutdown.store(true, Ordering::SeqCst);
        self.loop_thread.take().expect("joined once").join().expect("session loop panicked")
    }

    pub fn wait(mut self) -> Driver {
        self.loop_thread.take().expect("joined once").join().expect("session loop panicked")
    }
}

fn client_threads(id: u64, stream: TcpStream, events: Sender<Event>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = stream.try_clone()?;
    let mut writer = stream;
    let (out_tx, out_rx) = mpsc::channel::<Arc<Vec<u8>>>();
    events.send(Event::Connected(id, out_tx)).ok();
    thread::spawn(move || {
        for bytes in out_rx {
            if write_frame(&mut writer, &bytes).is_err() {
                break;
            }
        }
    });
    thread::spawn(move || {
        while let Ok(Some(bytes)) = read_frame(&mut reader) {
            if events.send(Event::Frame(id, bytes)).is_err() {
                break;
            }
        }
        events.send(Event::Disconnected(id)).ok();
    });
    Ok(())
}

struct Loop {
    driver: Driver,
    clients: BTreeMap<u64, Sender<Arc<Vec<u8>>>>,
    events: Sender<Event>,
    language: Option<Arc<LlmBackend>>,
}

impl Loop {
    fn send(&mut self, to: u64, msg: &Outbound) {
        if let Some(c) = self.clients.get(&to) {
            c.send(Arc::new(encode(Some(&self.driver.session.id), msg))).ok();
        }
    }

    fn broadcast(&mut self, msg: &Outbound) {
        let bytes = Arc::new(encode(Some(&self.driver.session.id), msg));
        self.clients.retain(|_, c| c.send(bytes.clone()).is_ok());
    }

    /// Replies go to the sender; everything else is broadcast.
    fn route(&mut self, from: Option<u64>, out: Vec<Outbound>) {
        for m in out {
            match (&m, from) {
                (Outbound::Ack { .. } | Outbound::Error { .. }, Some(id)) => self.send(id, &m),
                _ => self.broadcast(&m),
            }
        }
    }

    /// Returns whether the message reached the session.
    fn on_frame(&mut self, from: u64, bytes: &[u8]) -> bool {
        let env = match decode_inbound(bytes) {
            Ok(env) => env,
            Err(reply) => {
                self.send(from, &reply);
                return false;
            }
        };
        if let (Inbound::Command { text }, Some(backend)) = (&env.body, self.language.clone()) {
            if env.session.as_deref().is_none_or(|s| s == self.driver.session.id) {
                self.send(from, &Outbound::Ack { of: "Command".into(), seq: env.seq });
                self.resolve_async(backend, text.clone(), env.session.clone());
                return false;
            }
        }
        let out = self.driver.handle(&env);
        self.route(Some(from), out);
        true
    }

    /// Queries the language backend on its own thread; the result comes back
    /// as a `ResolvedCommand` so it is applied and logged like any message.
    fn resolve_async(&self, backend: Arc<LlmBackend>, text: String, session: Option<String>) {
        let map = self.driver.session.scenario().map(|s| s.map.clone()).unwrap_or_default();
        let peds: Vec<String> = self.driver.session.scenario().map(|s| s.pedestrians.iter().map(|p| p.id.clone()).collect()).unwrap_or_default();
        let events = self.events.clone();
        thread::spawn(move || {
            let result = backend.request(&text, &map, &peds).unwrap_or_else(|e| {
                log::warn!("language backend unavailable ({e}); using the grammar parser");
                parse_instruction(&text, &map, &peds)
            });
            let env = Envelope { v: super::protocol::PROTOCOL_VERSION, session, seq: None, body: Inbound::ResolvedCommand { text, result } };
            events.send(Event::Resolved(env)).ok();
        });
    }
}

/// Binds and starts the session loop on a background thread.
pub fn spawn(driver: Driver, opts: ServeOptions) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(opts.bind)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();

    let accept_stop = shutdown.clone();
    let accept_tx = tx.clone();
    thread::spawn(move || {
        let mut next_id = 0u64;
        while !accept_stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    next_id += 1;
                    if stream.set_nonblocking(false).is_ok() {
                        let _ = client_threads(next_id, stream, accept_tx.clone());
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) => {
                    log::error!("accept failed: {e}");
                    break;
                }
            }
        }
    });

    let stop = shutdown.clone();
    let record = opts.record.clone();
    let realtime = opts.realtime;
    let state = Loop { driver, clients: BTreeMap::new(), events: tx, language: opts.language };
    let loop_thread = thread::spawn(move || {
        let driver = run_loop(state, rx, &stop, realtime);
        if let (Some(path), Some(log)) = (record, &driver.log) {
            if let Err(e) = log.save(&path) {
                log::error!("could not write event log {}: {e}", path.display());
            }
        }
        driver
    });
    Ok(ServerHandle { addr, shutdown, loop_thread: Some(loop_thread) })
}

fn run_loop(mut st: Loop, rx: Receiver<Event>, stop: &AtomicBool, realtime: bool) -> Driver {
    let period = Duration::from_secs_f64(DT);
    let mut next_tick = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        let running = st.driver.session.is_running();
        let wait = match (running, realtime) {
            (true, false) => Duration::ZERO,
            (true, true) => next_tick.saturating_duration_since(Instant::now()),
            (false, _) => Duration::from_millis(50),
        };
        let mut batch = Vec::new();
        match rx.recv_timeout(wait) {
            Ok(e) => batch.push(e),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        batch.extend(rx.try_iter());
        let mut handled = false;
        for e in batch {
            match e {
                Event::Connected(id, c) => {
                    st.clients.insert(id, c);
                }
                Event::Disconnected(id) => {
                    st.clients.remove(&id);
                }
                Event::Frame(id, bytes) => {
                    handled |= st.on_frame(id, &bytes);
                }
                Event::Resolved(env) => {
                    let out = st.driver.handle(&env);
                    st.route(None, out);
                    handled = true;
                }
            }
        }
        if st.driver.session.is_running() {
            if !realtime || Instant::now() >= next_tick {
                let out = st.driver.tick();
                st.route(None, out);
                next_tick = Instant::now().max(next_tick) + period;
            }
        } else {
            if handled {
                let f = st.driver.snapshot();
                st.broadcast(&f);
            }
            next_tick = Instant::now();
        }
    }
    st.driver
}
