//! HTTP and WebSocket front end.
//!
//! `GET /health` and `GET /checkpoints` answer JSON; `/ws` upgrades to the session protocol.
//! Each connection owns at most one session and handles its messages in arrival order.

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::time::{interval_at, Instant, Interval, MissedTickBehavior};

use geonca::data::{ClassLegend, Dataset};
use geonca::trainer::Checkpoint;
use geonca::ModelParams;

use crate::frame::Frame;
use crate::outbox::{Outbox, Outgoing};
use crate::protocol::{
    parse_client, CheckpointInfo, ClassInfo, ClientMessage, Command, Envelope, ErrorCode, MapSource, Reply, Request,
    PROTOCOL_VERSION,
};
use crate::session::{CommandError, Playback, Session, DEFAULT_RATE_CAP};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub checkpoint_dir: PathBuf,
    /// Dataset for `sample` maps; blank maps work without one.
    pub dataset: Option<PathBuf>,
    pub rate_cap: f64,
    pub max_sessions: usize,
    /// Frames queued per connection before the oldest are dropped.
    pub frame_queue: usize,
    /// Pre-explored disc diameter for `sample` maps, as a fraction of the shorter side.
    pub diameter_ratio: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            checkpoint_dir: PathBuf::from("checkpoints"),
            dataset: None,
            rate_cap: DEFAULT_RATE_CAP,
            max_sessions: 64,
            frame_queue: 8,
            diameter_ratio: 0.5,
        }
    }
}

#[derive(Debug)]
pub struct AppState {
    cfg: ServerConfig,
    dataset: Option<Dataset>,
    next_id: AtomicU64,
    sessions: AtomicUsize,
    params: Mutex<HashMap<String, Arc<ModelParams<f32>>>>,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    /// Loads the dataset, if any. The returned sender ends every connection when set to `true`.
    pub fn new(cfg: ServerConfig) -> geonca::Result<(Arc<Self>, watch::Sender<bool>)> {
        let dataset = cfg.dataset.as_deref().map(Dataset::load).transpose()?;
        let (tx, rx) = watch::channel(false);
        let state = Self {
            cfg,
            dataset,
            next_id: AtomicU64::new(1),
            sessions: AtomicUsize::new(0),
            params: Mutex::new(HashMap::new()),
            shutdown: rx,
        };
        Ok((Arc::new(state), tx))
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.load(Ordering::SeqCst)
    }

    fn health(&self) -> Reply {
        Reply::Health {
            status: "ok".into(),
            version: VERSION.into(),
            protocol: PROTOCOL_VERSION,
            sessions: self.active_sessions(),
        }
    }

    /// Every readable checkpoint in the checkpoint directory, sorted by name.
    pub fn list_checkpoints(&self) -> Vec<CheckpointInfo> {
        let Ok(entries) = std::fs::read_dir(&self.cfg.checkpoint_dir) else {
            return Vec::new();
        };
        let mut out: Vec<CheckpointInfo> = entries
            .flatten()
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let ckpt = Checkpoint::read(&e.path()).ok()?;
                Some(CheckpointInfo {
                    name,
                    epoch: ckpt.epoch,
                    hidden: ckpt.hidden,
                    classes: ckpt.layout.k(),
                    channels: ckpt.layout.n(),
                })
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    fn load_params(&self, name: &str) -> Result<Arc<ModelParams<f32>>, CommandError> {
        let bad = |m: String| CommandError::new(ErrorCode::BadCheckpoint, m);
        if name.is_empty() || Path::new(name).components().count() != 1 || name.starts_with('.') {
            return Err(bad(format!("invalid checkpoint name {name:?}")));
        }
        if let Some(p) = self.params.lock().expect("params lock").get(name) {
            return Ok(p.clone());
        }
        let ckpt = Checkpoint::read(&self.cfg.checkpoint_dir.join(name)).map_err(|e| bad(e.to_string()))?;
        let params = Arc::new(ckpt.params::<f32>().map_err(|e| bad(e.to_string()))?);
        self.params.lock().expect("params lock").insert(name.to_string(), params.clone());
        Ok(params)
    }

    fn legend_for(&self, k: usize) -> Vec<ClassInfo> {
        let legends = self.dataset.iter().map(|d| d.manifest.legend.clone()).chain([ClassLegend::traffic()]);
        for legend in legends {
            if legend.k() == k {
                return legend.classes.iter().map(|c| ClassInfo { name: c.name.clone(), rgb: c.rgb }).collect();
            }
        }
        (0..k)
            .map(|j| {
                let v = (255 * j / k.max(1)) as u8;
                ClassInfo { name: format!("class {j}"), rgb: [v, v, v] }
            })
            .collect()
    }

    fn create(&self, checkpoint: &str, map: &MapSource, seed: u64) -> Result<(Session, Reply), CommandError> {
        let params = self.load_params(checkpoint)?;
        let k = params.layout().k();
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let mut session = match map {
            MapSource::Blank { height, width, seed: at } => Session::blank(id, params, *height, *width, *at, seed)?,
            MapSource::Sample { location, timestamp } => {
                let dataset = self
                    .dataset
                    .as_ref()
                    .ok_or_else(|| CommandError::new(ErrorCode::UnknownSample, "the server has no dataset"))?;
                let sample = dataset
                    .samples
                    .iter()
                    .find(|s| &s.location == location && &s.timestamp == timestamp)
                    .ok_or_else(|| {
                        CommandError::new(ErrorCode::UnknownSample, format!("no sample {location}/{timestamp}"))
                    })?;
                let target = sample
                    .target::<f32>(k)
                    .map_err(|e| CommandError::new(ErrorCode::BadCheckpoint, e.to_string()))?;
                Session::grown(id, params, &target, self.cfg.diameter_ratio, seed)?
            }
        };
        session.set_rate_cap(self.cfg.rate_cap);
        let legend = self
            .dataset
            .as_ref()
            .map(|d| d.manifest.legend.clone())
            .unwrap_or_else(ClassLegend::traffic);
        let reply = Reply::Created {
            session: id,
            height: session.height(),
            width: session.width(),
            classes: self.legend_for(k),
            background: legend.background,
            dead: legend.dead,
            step_rate_cap: session.rate_cap(),
        };
        Ok((session, reply))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/checkpoints", get(checkpoints))
        .route("/ws", get(upgrade))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes every live session and returns.
pub async fn serve(
    listener: TcpListener,
    cfg: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (state, stop) = AppState::new(cfg).map_err(std::io::Error::other)?;
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stop.send(true);
        })
        .await?;
    for _ in 0..200 {
        if state.active_sessions() == 0 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    Ok(())
}

async fn health(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.health())
}

async fn checkpoints(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(Reply::Checkpoints {
        checkpoints: state.list_checkpoints(),
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

fn reply_text(id: Option<u64>, body: Reply) -> String {
    serde_json::to_string(&Envelope { id, body }).expect("replies serialize")
}

fn error_text(id: Option<u64>, err: CommandError) -> String {
    reply_text(
        id,
        Reply::Error {
            code: err.code,
            message: err.message,
        },
    )
}

fn play_timer(rate: f64) -> Interval {
    let period = Duration::from_secs_f64(1.0 / rate);
    let mut t = interval_at(Instant::now() + period, period);
    t.set_missed_tick_behavior(MissedTickBehavior::Delay);
    t
}

async fn next_tick(timer: &mut Option<Interval>) {
    match timer {
        Some(t) => {
            t.tick().await;
        }
        None => std::future::pending().await,
    }
}

struct Connection {
    state: Arc<AppState>,
    outbox: Arc<Outbox>,
    session: Option<Session>,
    timer: Option<Interval>,
}

impl Connection {
    fn handle_text(&mut self, text: &str) {
        let (id, msg) = match parse_client(text) {
            Ok(m) => m,
            Err(e) => {
                self.outbox
                    .push_text(error_text(None, CommandError::new(ErrorCode::BadRequest, e)));
                return;
            }
        };
        let reply = match msg {
            ClientMessage::Request(Request::Health) => Ok(self.state.health()),
            ClientMessage::Request(Request::ListCheckpoints) => Ok(Reply::Checkpoints {
                checkpoints: self.state.list_checkpoints(),
            }),
            ClientMessage::Request(Request::Create { checkpoint, map, seed }) => {
                match self.create(&checkpoint, &map, seed) {
                    Ok(first) => {
                        self.outbox.push_text(reply_text(id, first.0));
                        self.outbox.push_frame(first.1);
                        return;
                    }
                    Err(e) => Err(e),
                }
            }
            ClientMessage::Command(cmd) => self.command(&cmd),
        };
        let text = match reply {
            Ok(r) => reply_text(id, r),
            Err(e) => error_text(id, e),
        };
        self.outbox.push_text(text);
    }

    /// The `created` reply and the session's first frame.
    fn create(&mut self, checkpoint: &str, map: &MapSource, seed: u64) -> Result<(Reply, Frame), CommandError> {
        if self.session.is_some() {
            return Err(CommandError::new(ErrorCode::SessionExists, "this connection already has a session"));
        }
        let counter = &self.state.sessions;
        let reserved = counter
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| {
                (n < self.state.cfg.max_sessions).then_some(n + 1)
            })
            .is_ok();
        if !reserved {
            return Err(CommandError::new(ErrorCode::Busy, "session limit reached"));
        }
        match self.state.create(checkpoint, map, seed) {
            Ok((mut session, reply)) => {
                let first = session.frame();
                self.session = Some(session);
                Ok((reply, first))
            }
            Err(e) => {
                counter.fetch_sub(1, Ordering::SeqCst);
                Err(e)
            }
        }
    }

    fn command(&mut self, cmd: &Command) -> Result<Reply, CommandError> {
        let session = self
            .session
            .as_mut()
            .ok_or_else(|| CommandError::new(ErrorCode::NoSession, "send create first"))?;
        let outcome = session.apply(cmd)?;
        for f in outcome.frames {
            self.outbox.push_frame(f);
        }
        match session.playback() {
            Playback::Running { rate } => {
                if self.timer.is_none() || matches!(cmd, Command::Play { .. }) {
                    self.timer = Some(play_timer(rate));
                }
            }
            Playback::Paused => self.timer = None,
        }
        Ok(Reply::Ack {
            command: cmd.name().into(),
            step: session.step_count(),
            rate: outcome.rate,
        })
    }

    fn on_tick(&mut self) {
        if let Some(s) = self.session.as_mut() {
            if let Some(f) = s.tick() {
                self.outbox.push_frame(f);
            }
        }
    }
}

async fn connection(socket: WebSocket, state: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let outbox = Arc::new(Outbox::new(state.cfg.frame_queue));
    let writer = {
        let outbox = outbox.clone();
        tokio::spawn(async move {
            while let Some(m) = outbox.next().await {
                let msg = match m {
                    Outgoing::Text(t) => Message::Text(t.into()),
                    Outgoing::Frame(f) => Message::Binary(f.encode().into()),
                };
                if sink.send(msg).await.is_err() {
                    return;
                }
            }
            let _ = sink.send(Message::Close(None)).await;
        })
    };
    let mut shutdown = state.shutdown.clone();
    let mut conn = Connection {
        state: state.clone(),
        outbox: outbox.clone(),
        session: None,
        timer: None,
    };
    loop {
        if *shutdown.borrow() {
            if conn.session.is_some() {
                outbox.push_text(reply_text(None, Reply::Closed { reason: "server shutting down".into() }));
            }
            break;
        }
        tokio::select! {
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(t))) => conn.handle_text(t.as_str()),
                Some(Ok(Message::Binary(_))) => outbox.push_text(error_text(
                    None,
                    CommandError::new(ErrorCode::BadRequest, "binary messages are not accepted"),
                )),
                Some(Ok(Message::Ping(_) | Message::Pong(_))) => {}
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
            },
            _ = next_tick(&mut conn.timer) => conn.on_tick(),
            _ = shutdown.changed() => {}
        }
    }
    outbox.close();
    if conn.session.take().is_some() {
        state.sessions.fetch_sub(1, Ordering::SeqCst);
    }
    let _ = writer.await;
}
