//! Shared server state, session lifecycle and background computation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use dictseg::dictionary::TreeParams;
use dictseg::features::{ExtractorKind, FeatureExtractor, PatchExtractor, Subsample};
use dictseg::grid::{GridShape, PixelGrid, ProbabilityStack};
use dictseg::postproc::CentreOptions;
use dictseg::propagation::{segment, UpdateOptions, UserMarking, DEFAULT_EPSILON};
use dictseg::segmenter::{DictionaryConfig, Segmenter};
use dictseg::transfer::{
    apply_to_stack, encode_stack_outputs, ModelMetadata, StackOptions, TrainedModel,
};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use crate::error::ApiError;
use crate::state::{Job, SessionState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_sessions: usize,
    pub max_body_bytes: usize,
    /// Upper bound for long-polling a result.
    pub max_wait: Duration,
    /// Worker threads per batch job; 0 uses the global pool.
    pub batch_workers: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_sessions: 16,
            max_body_bytes: 512 << 20,
            max_wait: Duration::from_secs(30),
            batch_workers: 0,
        }
    }
}

/// Dictionary settings for a new session, taken from the query string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub patch_size: usize,
    pub branching: usize,
    pub layers: usize,
    pub iterations: usize,
    pub seed: u64,
    pub extractor: ExtractorKind,
    pub classes: usize,
    /// Number of training patches; 0 uses every valid patch.
    pub subsample: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let d = DictionaryConfig::default();
        SessionConfig {
            patch_size: d.patch_size,
            branching: d.tree.branching,
            layers: d.tree.layers,
            iterations: d.tree.iterations,
            seed: d.tree.seed,
            extractor: d.extractor,
            classes: 2,
            subsample: 20_000,
        }
    }
}

impl SessionConfig {
    pub fn dictionary(&self) -> DictionaryConfig {
        DictionaryConfig {
            patch_size: self.patch_size,
            extractor: self.extractor,
            tree: TreeParams {
                branching: self.branching,
                layers: self.layers,
                iterations: self.iterations,
                seed: self.seed,
            },
            subsample: match self.subsample {
                0 => Subsample::All,
                n => Subsample::Count(n),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub build_ms: Option<f64>,
    pub update_ms: Option<f64>,
    pub nnz: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Building,
    Ready,
    Result,
    Failed,
}

/// Pushed on the session event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub kind: EventKind,
    pub revision: u64,
    pub ready: bool,
    pub timing: Timing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A finished propagation.
#[derive(Debug)]
pub struct Computed {
    pub probabilities: ProbabilityStack,
    pub segmentation: Vec<u16>,
    pub marks: Vec<u16>,
    pub update_ms: f64,
}

#[derive(Debug, Clone)]
enum Build {
    Running,
    Ready { segmenter: Arc<Segmenter>, build_ms: f64 },
    Failed(String),
}

pub struct Session {
    pub id: u64,
    pub image: PixelGrid,
    pub config: SessionConfig,
    build: RwLock<Build>,
    state: Mutex<SessionState<Computed>>,
    computed: watch::Sender<Option<u64>>,
    events: broadcast::Sender<SessionEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub config: SessionConfig,
    pub ready: bool,
    pub error: Option<String>,
    pub revision: u64,
    pub computed_revision: Option<u64>,
    pub undo_depth: usize,
    pub options: UpdateOptions,
    pub timing: Timing,
}

impl Session {
    pub fn shape(&self) -> GridShape {
        self.image.shape()
    }

    pub fn segmenter(&self) -> Result<Arc<Segmenter>, ApiError> {
        match &*self.build.read().expect("build lock") {
            Build::Ready { segmenter, .. } => Ok(Arc::clone(segmenter)),
            Build::Running => Err(ApiError::NotReady),
            Build::Failed(e) => Err(ApiError::Conflict(format!("dictionary build failed: {e}"))),
        }
    }

    fn timing(&self) -> Timing {
        let mut t = Timing::default();
        if let Build::Ready { segmenter, build_ms } = &*self.build.read().expect("build lock") {
            t.build_ms = Some(*build_ms);
            t.nnz = Some(segmenter.graph().nnz());
        }
        if let Some((_, c)) = self.state.lock().expect("state lock").latest() {
            t.update_ms = Some(c.update_ms);
        }
        t
    }

    pub fn snapshot_event(&self) -> SessionEvent {
        let build = self.build.read().expect("build lock").clone();
        let (kind, ready, error) = match build {
            Build::Running => (EventKind::Building, false, None),
            Build::Ready { .. } => (EventKind::Ready, true, None),
            Build::Failed(e) => (EventKind::Failed, false, Some(e)),
        };
        let revision = self.state.lock().expect("state lock").revision();
        SessionEvent {
            kind,
            revision,
            ready,
            timing: self.timing(),
            error,
        }
    }

    pub fn info(&self) -> SessionInfo {
        let (ready, error) = match &*self.build.read().expect("build lock") {
            Build::Running => (false, None),
            Build::Ready { .. } => (true, None),
            Build::Failed(e) => (false, Some(e.clone())),
        };
        let st = self.state.lock().expect("state lock");
        let info = SessionInfo {
            id: self.id,
            width: self.image.width(),
            height: self.image.height(),
            channels: self.image.channels(),
            config: self.config,
            ready,
            error,
            revision: st.revision(),
            computed_revision: st.latest().map(|(r, _)| r),
            undo_depth: st.undo_depth(),
            options: st.options(),
            timing: Timing::default(),
        };
        drop(st);
        SessionInfo {
            timing: self.timing(),
            ..info
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SessionEvent> {
        self.events.subscribe()
    }

    fn publish(&self, event: SessionEvent) {
        let _ = self.events.send(event);
    }

    /// Applies a mutation to the marking state and schedules work.
    pub fn mutate<F>(self: &Arc<Self>, f: F) -> Result<u64, ApiError>
    where
        F: FnOnce(&mut SessionState<Computed>) -> Result<(u64, Option<Job>), ApiError>,
    {
        self.segmenter()?;
        let (revision, job) = f(&mut self.state.lock().expect("state lock"))?;
        if let Some(job) = job {
            spawn_compute(Arc::clone(self), job);
        }
        Ok(revision)
    }

    /// Current marking and options.
    pub fn marking(&self) -> (UserMarking, UpdateOptions) {
        let st = self.state.lock().expect("state lock");
        (st.marks().clone(), st.options())
    }

    /// Waits until a result at or beyond `revision` exists.
    pub async fn result_at(&self, revision: u64, wait: Duration) -> Result<(u64, Arc<Computed>), ApiError> {
        self.segmenter()?;
        let mut rx = self.computed.subscribe();
        let reached = tokio::time::timeout(wait, rx.wait_for(|r| r.is_some_and(|r| r >= revision))).await;
        match reached {
            Ok(Ok(_)) => {}
            Ok(Err(_)) => return Err(ApiError::Internal("session closed".into())),
            Err(_) => return Err(ApiError::Timeout),
        }
        self.state
            .lock()
            .expect("state lock")
            .latest()
            .ok_or(ApiError::Timeout)
    }

    pub fn shutdown(&self) {
        let _ = self.computed.send_replace(None);
    }
}

fn spawn_compute(session: Arc<Session>, job: Job) {
    tokio::spawn(async move {
        let mut next = Some(job);
        while let Some(job) = next.take() {
            let segmenter = match session.segmenter() {
                Ok(s) => s,
                Err(_) => return,
            };
            let revision = job.revision;
            let outcome = tokio::task::spawn_blocking(move || {
                let start = Instant::now();
                let result = segmenter.update(&job.marks, &job.options)?;
                let segmentation = segment(&result.probabilities, job.options.epsilon);
                Ok::<_, dictseg::Error>(Computed {
                    probabilities: result.probabilities,
                    segmentation,
                    marks: job.marks.to_label_map(),
                    update_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            })
            .await;
            match outcome {
                Ok(Ok(computed)) => {
                    let update_ms = computed.update_ms;
                    next = session.state.lock().expect("state lock").finish(revision, computed);
                    session.computed.send_if_modified(|r| {
                        if r.is_none_or(|r| r < revision) {
                            *r = Some(revision);
                            true
                        } else {
                            false
                        }
                    });
                    let mut timing = session.timing();
                    timing.update_ms = Some(update_ms);
                    session.publish(SessionEvent {
                        kind: EventKind::Result,
                        revision,
                        ready: true,
                        timing,
                        error: None,
                    });
                }
                Ok(Err(e)) => {
                    log::error!("session {}: update failed: {e}", session.id);
                    session.state.lock().expect("state lock").abandon(revision);
                    session.publish(SessionEvent {
                        kind: EventKind::Failed,
                        revision,
                        ready: true,
                        timing: session.timing(),
                        error: Some(e.to_string()),
                    });
                }
                Err(e) => {
                    log::error!("session {}: update task panicked: {e}", session.id);
                    session.state.lock().expect("state lock").abandon(revision);
                }
            }
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchStatus {
    pub id: u64,
    pub model: u64,
    pub state: JobState,
    pub done: usize,
    pub total: usize,
    pub error: Option<String>,
    /// File names downloadable once the job is done.
    pub outputs: Vec<String>,
}

pub struct BatchJob {
    status: Mutex<BatchStatus>,
    files: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl BatchJob {
    pub fn status(&self) -> BatchStatus {
        self.status.lock().expect("job lock").clone()
    }

    pub fn file(&self, name: &str) -> Option<Arc<Vec<u8>>> {
        self.files.lock().expect("job lock").get(name).cloned()
    }
}

/// Post-processing requested for a batch job.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchOptions {
    pub min_component_class: Option<u16>,
    pub min_component_size: Option<usize>,
    pub centre_class: Option<u16>,
    pub window_radius: Option<usize>,
    pub min_distance: Option<f64>,
    pub threshold: Option<f64>,
    pub epsilon: Option<f64>,
}

impl BatchOptions {
    pub fn stack_options(&self, workers: usize) -> Result<StackOptions, ApiError> {
        let min_component = match (self.min_component_class, self.min_component_size) {
            (Some(c), Some(n)) => Some((c, n)),
            (None, None) => None,
            _ => {
                return Err(ApiError::BadRequest(
                    "min_component_class and min_component_size go together".into(),
                ))
            }
        };
        let d = CentreOptions::default();
        let centres = self.centre_class.map(|c| {
            (
                c,
                CentreOptions {
                    window_radius: self.window_radius.unwrap_or(d.window_radius),
                    min_distance: self.min_distance.unwrap_or(d.min_distance),
                    threshold: self.threshold.unwrap_or(d.threshold),
                },
            )
        });
        Ok(StackOptions {
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
            min_component,
            centres,
            max_workers: workers,
        })
    }
}

struct Inner {
    limits: Limits,
    next_id: AtomicU64,
    sessions: RwLock<HashMap<u64, Arc<Session>>>,
    models: RwLock<HashMap<u64, Arc<TrainedModel>>>,
    jobs: RwLock<HashMap<u64, Arc<BatchJob>>>,
}

/// Everything the HTTP handlers share.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(limits: Limits) -> Self {
        AppState {
            inner: Arc::new(Inner {
                limits,
                next_id: AtomicU64::new(1),
                sessions: RwLock::new(HashMap::new()),
                models: RwLock::new(HashMap::new()),
                jobs: RwLock::new(HashMap::new()),
            }),
        }
    }

    pub fn limits(&self) -> Limits {
        self.inner.limits
    }

    fn next_id(&self) -> u64 {
        self.inner.next_id.fetch_add(1, Ordering::Relaxed)
    }

    /// Validates the request, registers the session and starts the build in
    /// the background.
    pub fn create_session(&self, image: PixelGrid, config: SessionConfig) -> Result<Arc<Session>, ApiError> {
        let dict = config.dictionary();
        PatchExtractor::new(dict.extractor, dict.patch_size)?.validate(&image)?;
        dict.tree.validate()?;
        let options = UpdateOptions::default();
        let state = SessionState::new(image.shape().len(), config.classes, options)?;
        let id = self.next_id();
        let (events, _) = broadcast::channel(64);
        let session = Arc::new(Session {
            id,
            image,
            config,
            build: RwLock::new(Build::Running),
            state: Mutex::new(state),
            computed: watch::channel(None).0,
            events,
        });
        {
            let mut sessions = self.inner.sessions.write().expect("sessions lock");
            if sessions.len() >= self.inner.limits.max_sessions {
                return Err(ApiError::Capacity(self.inner.limits.max_sessions));
            }
            sessions.insert(id, Arc::clone(&session));
        }
        let s = Arc::clone(&session);
        tokio::spawn(async move {
            let image = s.image.clone();
            let start = Instant::now();
            let built = tokio::task::spawn_blocking(move || Segmenter::build(&image, &dict)).await;
            let build_ms = start.elapsed().as_secs_f64() * 1e3;
            let built = match built {
                Ok(r) => r.map_err(|e| e.to_string()),
                Err(e) => Err(format!("build task failed: {e}")),
            };
            match built {
                Ok(seg) => {
                    log::info!(
                        "session {}: dictionary of {} elements, nnz {}, {:.0} ms",
                        s.id,
                        seg.tree().len(),
                        seg.graph().nnz(),
                        build_ms
                    );
                    *s.build.write().expect("build lock") = Build::Ready {
                        segmenter: Arc::new(seg),
                        build_ms,
                    };
                    s.publish(s.snapshot_event());
                    let job = s.state.lock().expect("state lock").start();
                    if let Some(job) = job {
                        spawn_compute(Arc::clone(&s), job);
                    }
                }
                Err(e) => {
                    log::error!("session {}: build failed: {e}", s.id);
                    *s.build.write().expect("build lock") = Build::Failed(e);
                    s.publish(s.snapshot_event());
                    s.shutdown();
                }
            }
        });
        Ok(session)
    }

    pub fn session(&self, id: u64) -> Result<Arc<Session>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id}")))
    }

    pub fn remove_session(&self, id: u64) -> Result<(), ApiError> {
        let s = self
            .inner
            .sessions
            .write()
            .expect("sessions lock")
            .remove(&id)
            .ok_or_else(|| ApiError::NotFound(format!("session {id}")))?;
        s.shutdown();
        Ok(())
    }

    pub fn register_model(&self, model: TrainedModel) -> u64 {
        let id = self.next_id();
        self.inner
            .models
            .write()
            .expect("models lock")
            .insert(id, Arc::new(model));
        id
    }

    pub fn model(&self, id: u64) -> Result<Arc<TrainedModel>, ApiError> {
        self.inner
            .models
            .read()
            .expect("models lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("model {id}")))
    }

    /// Folds the session's current marking into a trained model.
    pub async fn export(&self, session: &Arc<Session>) -> Result<(u64, Vec<u8>), ApiError> {
        let segmenter = session.segmenter()?;
        let (marks, options) = session.marking();
        let extractor = session.config.extractor;
        let model = tokio::task::spawn_blocking(move || {
            let result = segmenter.update(&marks, &options)?;
            TrainedModel::train(
                Arc::clone(segmenter.tree()),
                segmenter.transforms(),
                &result.final_labels,
                ModelMetadata {
                    source: Some("session".into()),
                    extractor,
                    options: Some(options),
                    marked_pixels: marks.len(),
                },
            )
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
        let bytes = model.to_bytes();
        Ok((self.register_model(model), bytes))
    }

    pub fn start_batch(
        &self,
        model_id: u64,
        slices: Vec<PixelGrid>,
        options: BatchOptions,
    ) -> Result<Arc<BatchJob>, ApiError> {
        let model = self.model(model_id)?;
        let stack_opts = options.stack_options(self.inner.limits.batch_workers)?;
        if let Some((c, _)) = stack_opts.centres {
            if c == 0 || c as usize > model.classes() {
                return Err(ApiError::BadRequest(format!("centre class {c} not in model")));
            }
        }
        let id = self.next_id();
        let job = Arc::new(BatchJob {
            status: Mutex::new(BatchStatus {
                id,
                model: model_id,
                state: JobState::Queued,
                done: 0,
                total: slices.len(),
                error: None,
                outputs: Vec::new(),
            }),
            files: Mutex::new(HashMap::new()),
        });
        self.inner
            .jobs
            .write()
            .expect("jobs lock")
            .insert(id, Arc::clone(&job));
        let j = Arc::clone(&job);
        tokio::task::spawn_blocking(move || {
            j.status.lock().expect("job lock").state = JobState::Running;
            let progress = |done: usize, _total: usize| {
                let mut st = j.status.lock().expect("job lock");
                st.done = st.done.max(done);
            };
            let outcome = apply_to_stack(&slices, &model, &stack_opts, &progress)
                .and_then(|out| encode_stack_outputs(&out, stack_opts.centres.is_some()));
            let mut st = j.status.lock().expect("job lock");
            match outcome {
                Ok(files) => {
                    st.outputs = files.iter().map(|(n, _)| n.clone()).collect();
                    *j.files.lock().expect("job lock") =
                        files.into_iter().map(|(n, b)| (n, Arc::new(b))).collect();
                    st.state = JobState::Done;
                }
                Err(e) => {
                    st.error = Some(e.to_string());
                    st.state = JobState::Failed;
                }
            }
        });
        Ok(job)
    }

    pub fn job(&self, id: u64) -> Result<Arc<BatchJob>, ApiError> {
        self.inner
            .jobs
            .read()
            .expect("jobs lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("batch job {id}")))
    }
}
