use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use emcomm_core::training::{AnnotationProvider, AnnotationRequest};
use log::{info, warn};

#[derive(Debug, Clone, PartialEq)]
pub enum SlotState {
    Empty,
    Pending(AnnotationRequest),
    Answered { request_id: u64, tokens: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SlotError {
    #[error("no pending request with this id")]
    NotFound,
    #[error("request already answered")]
    AlreadyAnswered,
}

#[derive(Debug)]
struct Inner {
    state: SlotState,
    last_answered: Option<u64>,
}

/// The single hand-off point between the trainer and the annotator.
/// Transitions: empty -> pending -> answered -> empty.
#[derive(Debug)]
pub struct PendingSlot {
    inner: Mutex<Inner>,
    changed: Condvar,
}

impl Default for PendingSlot {
    fn default() -> Self {
        Self {
            inner: Mutex::new(Inner {
                state: SlotState::Empty,
                last_answered: None,
            }),
            changed: Condvar::new(),
        }
    }
}

impl PendingSlot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> SlotState {
        self.inner.lock().expect("slot lock").state.clone()
    }

    pub fn pending(&self) -> Option<AnnotationRequest> {
        match &self.inner.lock().expect("slot lock").state {
            SlotState::Pending(r) => Some(r.clone()),
            _ => None,
        }
    }

    /// Whether `request_id` could be answered right now.
    pub fn check(&self, request_id: u64) -> Result<(), SlotError> {
        let inner = self.inner.lock().expect("slot lock");
        Self::check_locked(&inner, request_id)
    }

    fn check_locked(inner: &Inner, request_id: u64) -> Result<(), SlotError> {
        match &inner.state {
            SlotState::Pending(r) if r.request_id == request_id => Ok(()),
            SlotState::Answered { request_id: id, .. } if *id == request_id => Err(SlotError::AlreadyAnswered),
            _ if inner.last_answered == Some(request_id) => Err(SlotError::AlreadyAnswered),
            _ => Err(SlotError::NotFound),
        }
    }

    /// Stores the annotator's tokens and wakes the trainer.
    pub fn answer(&self, request_id: u64, tokens: Vec<String>) -> Result<(), SlotError> {
        let mut inner = self.inner.lock().expect("slot lock");
        Self::check_locked(&inner, request_id)?;
        inner.state = SlotState::Answered { request_id, tokens };
        inner.last_answered = Some(request_id);
        self.changed.notify_all();
        Ok(())
    }

    /// Trainer side: publishes `request` and blocks until it is answered or
    /// `timeout` elapses. A timed-out request is withdrawn.
    pub fn post_and_wait(&self, request: AnnotationRequest, timeout: Duration) -> Option<Vec<String>> {
        let id = request.request_id;
        let deadline = Instant::now() + timeout;
        let mut inner = self.inner.lock().expect("slot lock");
        inner.state = SlotState::Pending(request);
        self.changed.notify_all();
        loop {
            if let SlotState::Answered { request_id, .. } = &inner.state {
                if *request_id == id {
                    let SlotState::Answered { tokens, .. } = std::mem::replace(&mut inner.state, SlotState::Empty)
                    else {
                        unreachable!()
                    };
                    return Some(tokens);
                }
            }
            let now = Instant::now();
            if now >= deadline {
                inner.state = SlotState::Empty;
                return None;
            }
            inner = self
                .changed
                .wait_timeout(inner, deadline - now)
                .expect("slot lock")
                .0;
        }
    }
}

/// Annotation provider backed by a live annotator polling the HTTP API.
#[derive(Debug, Clone)]
pub struct HumanProvider {
    pub slot: Arc<PendingSlot>,
    pub timeout: Duration,
}

impl AnnotationProvider for HumanProvider {
    fn annotate(&mut self, request: &AnnotationRequest) -> emcomm_core::Result<Option<Vec<String>>> {
        info!("annotation request {} pending", request.request_id);
        let reply = self.slot.post_and_wait(request.clone(), self.timeout);
        if reply.is_none() {
            warn!("annotation request {} timed out; skipped", request.request_id);
        }
        Ok(reply)
    }
}
