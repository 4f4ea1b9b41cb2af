//! One solver worker per session.
//!
//! The worker thread owns the solver. Client commands reach it through a
//! channel and are applied between iterations. Results leave through the
//! [`Outbox`]: acknowledgements and final updates in an ordered queue,
//! intermediate updates in a single latest-wins slot.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use flipfree::admm::{ConstraintUpdate, SolverConfig, Solver};
use flipfree::energies::EnergyKind;
use flipfree::mesh::{HandleConstraints, HandleSpec, Mesh};
use flipfree::smallmat::Vector;
use tokio::sync::Notify;

use crate::protocol::{ClientMessage, ServerMessage, SessionState};
use crate::ServiceError;

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub solver: SolverConfig,
    /// Minimum interval between streamed updates, except final ones.
    pub throttle: Duration,
    /// Vertex arrays with more vertices than this go out as binary frames.
    pub binary_threshold: usize,
    /// Queued messages kept while no client is attached.
    pub max_queue: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::deformation(EnergyKind::SymmetricDirichlet),
            throttle: Duration::from_millis(33),
            binary_threshold: 10_000,
            max_queue: 1024,
        }
    }
}

/// Immutable copy of one iterate, shared with the connection tasks.
#[derive(Clone, Debug)]
pub struct UpdateSnapshot {
    pub iter: u64,
    pub positions: Arc<Vec<[f64; 2]>>,
    pub energy: Option<f64>,
    pub flips: usize,
    pub e_prim: f64,
    pub e_dual: f64,
    pub is_final: bool,
}

#[derive(Clone, Debug)]
pub enum Outgoing {
    Message(ServerMessage),
    Update(UpdateSnapshot),
}

#[derive(Debug, Default)]
struct OutboxInner {
    queue: VecDeque<Outgoing>,
    latest: Option<UpdateSnapshot>,
    last_published: Option<UpdateSnapshot>,
    last_status: Option<ServerMessage>,
}

/// Hand-off point between the worker and whichever connection is attached.
#[derive(Debug)]
pub struct Outbox {
    inner: Mutex<OutboxInner>,
    notify: Notify,
    max_queue: usize,
}

impl Outbox {
    fn new(max_queue: usize) -> Self {
        Self {
            inner: Mutex::new(OutboxInner::default()),
            notify: Notify::new(),
            max_queue,
        }
    }

    fn lock(&self) -> MutexGuard<'_, OutboxInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn enqueue(&self, g: &mut OutboxInner, item: Outgoing) {
        if let Outgoing::Message(msg @ ServerMessage::Status { .. }) = &item {
            g.last_status = Some(msg.clone());
        }
        g.queue.push_back(item);
        while g.queue.len() > self.max_queue {
            g.queue.pop_front();
        }
    }

    pub fn push(&self, msg: ServerMessage) {
        self.enqueue(&mut self.lock(), Outgoing::Message(msg));
        self.notify.notify_one();
    }

    /// Publishes an iterate. A final iterate and the status that follows it
    /// become visible together.
    fn publish(&self, update: UpdateSnapshot, status: Option<ServerMessage>) {
        {
            let mut g = self.lock();
            g.last_published = Some(update.clone());
            if update.is_final {
                g.latest = None;
                self.enqueue(&mut g, Outgoing::Update(update));
            } else {
                g.latest = Some(update);
            }
            if let Some(s) = status {
                self.enqueue(&mut g, Outgoing::Message(s));
            }
        }
        self.notify.notify_one();
    }

    /// Drains the ordered queue, plus the latest update when `take_latest`.
    /// The second value tells whether an update is still waiting.
    pub fn drain(&self, take_latest: bool) -> (Vec<Outgoing>, bool) {
        let mut g = self.lock();
        let mut out: Vec<Outgoing> = g.queue.drain(..).collect();
        if take_latest {
            if let Some(u) = g.latest.take() {
                out.push(Outgoing::Update(u));
            }
        }
        (out, g.latest.is_some())
    }

    /// State for a newly attached client: pending messages are dropped and
    /// the latest status and iterate are returned instead.
    pub fn resync(&self) -> (Option<ServerMessage>, Option<UpdateSnapshot>) {
        let mut g = self.lock();
        g.queue.clear();
        g.latest = None;
        (g.last_status.clone(), g.last_published.clone())
    }

    pub async fn notified(&self) {
        self.notify.notified().await
    }
}

/// A live solver session. Dropping the last handle stops the worker.
#[derive(Debug)]
pub struct Session {
    id: String,
    mesh: Arc<Mesh>,
    start: Instant,
    commands: Mutex<Sender<ClientMessage>>,
    outbox: Arc<Outbox>,
    generation: AtomicU64,
    config: SessionConfig,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Session {
    pub fn start(id: String, mesh: Arc<Mesh>, config: SessionConfig) -> Result<Arc<Self>, ServiceError> {
        check_planar(&mesh)?;
        let solver = new_solver(&mesh, rest(&mesh), HandleConstraints::empty(), config.solver.clone())?;
        let outbox = Arc::new(Outbox::new(config.max_queue));
        let (tx, rx) = mpsc::channel();
        let start = Instant::now();
        let mut worker = Worker {
            id: id.clone(),
            mesh: mesh.clone(),
            config: config.solver.clone(),
            solver,
            state: SessionState::Running,
            base_iter: 0,
            last_iter: 0,
            outbox: outbox.clone(),
        };
        worker.push_status(None, None);
        worker.publish();
        let handle = std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || worker.run(rx))?;
        Ok(Arc::new(Self {
            id,
            mesh,
            start,
            commands: Mutex::new(tx),
            outbox,
            generation: AtomicU64::new(0),
            config,
            worker: Mutex::new(Some(handle)),
        }))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn outbox(&self) -> &Outbox {
        &self.outbox
    }

    pub fn elapsed_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }

    /// Queues a client command for the next iteration boundary.
    pub fn send(&self, msg: ClientMessage) {
        let tx = self.commands.lock().unwrap_or_else(|e| e.into_inner());
        if tx.send(msg).is_err() {
            self.outbox.push(ServerMessage::Error {
                message: "session worker has stopped".into(),
                ack: None,
            });
        }
    }

    /// Marks a new client as the attached one; returns its generation.
    pub fn attach(&self) -> u64 {
        self.generation.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn is_attached(&self, generation: u64) -> bool {
        self.generation.load(Ordering::SeqCst) == generation
    }

    /// Stops the worker and waits for it.
    pub fn shutdown(&self) {
        // replacing the sender drops the original; the worker sees a closed channel
        let (tx, _) = mpsc::channel();
        *self.commands.lock().unwrap_or_else(|e| e.into_inner()) = tx;
        if let Some(h) = self.worker.lock().unwrap_or_else(|e| e.into_inner()).take() {
            let _ = h.join();
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn check_planar(mesh: &Mesh) -> Result<(), ServiceError> {
    if mesh.element_dim() != 2 || !mesh.is_planar() {
        return Err(ServiceError::NotPlanar);
    }
    Ok(())
}

fn rest(mesh: &Mesh) -> Vec<Vector<2>> {
    mesh.vertices().iter().map(|p| Vector::<2>::new(p[0], p[1])).collect()
}

fn new_solver(
    mesh: &Mesh,
    w0: Vec<Vector<2>>,
    handles: HandleConstraints,
    config: SolverConfig,
) -> Result<Solver<2>, ServiceError> {
    Ok(Solver::<2>::new(mesh, w0, handles, config)?)
}

struct Worker {
    id: String,
    mesh: Arc<Mesh>,
    config: SolverConfig,
    solver: Solver<2>,
    state: SessionState,
    /// Wire iteration count at the last solver rebuild, so `iter` keeps
    /// increasing across resets.
    base_iter: u64,
    last_iter: u64,
    outbox: Arc<Outbox>,
}

impl Worker {
    fn run(mut self, rx: Receiver<ClientMessage>) {
        loop {
            let cmd = if self.state == SessionState::Running {
                match rx.try_recv() {
                    Ok(c) => Some(c),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => return,
                }
            } else {
                match rx.recv() {
                    Ok(c) => Some(c),
                    Err(_) => return,
                }
            };
            match cmd {
                Some(msg) => self.handle(msg),
                None => self.iterate(),
            }
        }
    }

    fn iter(&self) -> u64 {
        self.base_iter + self.solver.state().k as u64
    }

    fn status(&self, ack: Option<&str>, constraint_update: Option<ConstraintUpdate>) -> ServerMessage {
        ServerMessage::Status {
            session: self.id.clone(),
            state: self.state,
            iter: self.iter(),
            ack: ack.map(str::to_owned),
            constraint_update,
        }
    }

    fn push_status(&self, ack: Option<&str>, constraint_update: Option<ConstraintUpdate>) {
        self.outbox.push(self.status(ack, constraint_update));
    }

    fn push_error(&self, ack: &str, message: String) {
        self.outbox.push(ServerMessage::Error {
            message,
            ack: Some(ack.to_owned()),
        });
    }

    /// Publishes the current iterate; a terminated run also reports its status.
    fn publish(&mut self) {
        let r = self.solver.last_record();
        self.last_iter = self.iter();
        let is_final = !matches!(self.state, SessionState::Running | SessionState::Paused);
        let update = UpdateSnapshot {
            iter: self.last_iter,
            positions: Arc::new(self.solver.positions().iter().map(|p| [p[0], p[1]]).collect()),
            energy: r.energy.is_finite().then_some(r.energy),
            flips: r.flips,
            e_prim: r.e_prim,
            e_dual: r.e_dual,
            is_final,
        };
        let status = is_final.then(|| self.status(None, None));
        self.outbox.publish(update, status);
    }

    fn iterate(&mut self) {
        if self.solver.state().k >= self.solver.config().max_iter {
            self.state = SessionState::MaxIter;
            self.publish();
            return;
        }
        if let Err(e) = self.solver.step() {
            self.state = SessionState::Paused;
            self.outbox.push(ServerMessage::Error {
                message: format!("solver error: {e}"),
                ack: None,
            });
            self.push_status(None, None);
            return;
        }
        if let Some(s) = self.solver.status() {
            self.state = s.into();
        }
        self.publish();
    }

    fn rebuild(&mut self, w0: Vec<Vector<2>>, handles: HandleConstraints) -> Result<(), ServiceError> {
        let solver = new_solver(&self.mesh, w0, handles, self.config.clone())?;
        self.base_iter = self.last_iter;
        self.solver = solver;
        self.state = SessionState::Running;
        Ok(())
    }

    fn handle(&mut self, msg: ClientMessage) {
        let name = msg.name();
        match msg {
            ClientMessage::SetConstraints { handles } => self.set_constraints(&handles),
            ClientMessage::Pause => {
                if self.state == SessionState::Running {
                    self.state = SessionState::Paused;
                }
                self.push_status(Some(name), None);
            }
            ClientMessage::Resume => {
                if self.state == SessionState::Paused {
                    self.state = SessionState::Running;
                }
                self.push_status(Some(name), None);
            }
            ClientMessage::Reset => match self.rebuild(rest(&self.mesh), HandleConstraints::empty()) {
                Ok(()) => {
                    self.push_status(Some(name), None);
                    self.publish();
                }
                Err(e) => self.push_error(name, e.to_string()),
            },
            ClientMessage::SetEnergy { kind } => {
                if !kind.is_solvable() {
                    self.push_error(name, format!("energy {} cannot be minimized", kind.short_name()));
                    return;
                }
                let previous = self.config.energy;
                self.config.energy = kind;
                let w0 = self.solver.positions().to_vec();
                let handles = self.solver.handles().clone();
                match self.rebuild(w0, handles) {
                    Ok(()) => self.push_status(Some(name), None),
                    Err(e) => {
                        self.config.energy = previous;
                        self.push_error(name, e.to_string());
                    }
                }
            }
        }
    }

    fn set_constraints(&mut self, specs: &[HandleSpec]) {
        const NAME: &str = "set_constraints";
        let handles = match HandleConstraints::new(specs, self.mesh.num_vertices(), 2) {
            Ok(h) => h,
            Err(e) => return self.push_error(NAME, e.to_string()),
        };
        match self.solver.set_constraints(handles) {
            Ok(update) => {
                if self.state != SessionState::Paused {
                    self.state = SessionState::Running;
                }
                self.push_status(Some(NAME), Some(update));
            }
            Err(e) => self.push_error(NAME, e.to_string()),
        }
    }
}
