//! Per-session marking, undo history and recompute scheduling.
//!
//! Everything here is synchronous; the HTTP layer owns threads and timers.

use std::sync::Arc;

use dictseg::propagation::{UpdateOptions, UserMarking};

use crate::error::ApiError;
use crate::stroke::{rasterize, Stroke};

/// A recompute request: the state as of `revision`.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub revision: u64,
    pub marks: UserMarking,
    pub options: UpdateOptions,
}

/// One undo step: previous class (or `None`) of every pixel a batch touched,
/// plus the options in force before it.
#[derive(Debug, Clone, PartialEq)]
struct Diff {
    pixels: Vec<(usize, Option<usize>)>,
    options: UpdateOptions,
}

#[derive(Debug)]
pub struct SessionState<R> {
    marks: UserMarking,
    options: UpdateOptions,
    history: Vec<Diff>,
    revision: u64,
    in_flight: Option<u64>,
    latest: Option<(u64, Arc<R>)>,
}

impl<R> SessionState<R> {
    pub fn new(pixels: usize, classes: usize, options: UpdateOptions) -> Result<Self, ApiError> {
        options.validate()?;
        Ok(SessionState {
            marks: UserMarking::new(pixels, classes)?,
            options,
            history: Vec::new(),
            revision: 0,
            in_flight: None,
            latest: None,
        })
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn marks(&self) -> &UserMarking {
        &self.marks
    }

    pub fn options(&self) -> UpdateOptions {
        self.options
    }

    pub fn undo_depth(&self) -> usize {
        self.history.len()
    }

    pub fn in_flight(&self) -> Option<u64> {
        self.in_flight
    }

    /// Newest finished result and the revision it reflects.
    pub fn latest(&self) -> Option<(u64, Arc<R>)> {
        self.latest.as_ref().map(|(r, v)| (*r, Arc::clone(v)))
    }

    /// Starts the first computation of a freshly built session.
    pub fn start(&mut self) -> Option<Job> {
        self.schedule()
    }

    /// Rasterizes `strokes` onto the marking, optionally switching update
    /// options. Returns the new revision and a job if nothing is running.
    pub fn submit(
        &mut self,
        width: usize,
        height: usize,
        strokes: &[Stroke],
        options: Option<UpdateOptions>,
    ) -> Result<(u64, Option<Job>), ApiError> {
        if let Some(o) = options {
            o.validate()?;
        }
        for s in strokes {
            s.validate(self.marks.classes())?;
        }
        let mut touched = std::collections::BTreeMap::new();
        for s in strokes {
            for i in rasterize(s, width, height) {
                let before = match s.class {
                    Some(c) => self.marks.set(i, c as usize)?,
                    None => self.marks.clear(i),
                };
                touched.entry(i).or_insert(before);
            }
        }
        let pixels: Vec<_> = touched
            .into_iter()
            .filter(|&(i, before)| self.marks.get(i) != before)
            .collect();
        let new_options = options.unwrap_or(self.options);
        if pixels.is_empty() && new_options == self.options {
            return Ok((self.revision, None));
        }
        self.history.push(Diff {
            pixels,
            options: self.options,
        });
        self.options = new_options;
        self.revision += 1;
        Ok((self.revision, self.schedule()))
    }

    /// Reverts the last accepted batch.
    pub fn undo(&mut self) -> Result<(u64, Option<Job>), ApiError> {
        let diff = self
            .history
            .pop()
            .ok_or_else(|| ApiError::Conflict("nothing to undo".into()))?;
        for (i, before) in diff.pixels {
            match before {
                Some(c) => {
                    self.marks.set(i, c)?;
                }
                None => {
                    self.marks.clear(i);
                }
            }
        }
        self.options = diff.options;
        self.revision += 1;
        Ok((self.revision, self.schedule()))
    }

    /// Stores the result of the job for `revision` and returns the follow-up
    /// job when the state moved on while it ran.
    pub fn finish(&mut self, revision: u64, result: R) -> Option<Job> {
        if self.in_flight == Some(revision) {
            self.in_flight = None;
        }
        if self.latest.as_ref().is_none_or(|(r, _)| *r <= revision) {
            self.latest = Some((revision, Arc::new(result)));
        }
        if revision < self.revision {
            self.schedule()
        } else {
            None
        }
    }

    /// Clears the in-flight flag after a failed computation.
    pub fn abandon(&mut self, revision: u64) {
        if self.in_flight == Some(revision) {
            self.in_flight = None;
        }
    }

    fn schedule(&mut self) -> Option<Job> {
        if self.in_flight.is_some() {
            return None;
        }
        self.in_flight = Some(self.revision);
        Some(Job {
            revision: self.revision,
            marks: self.marks.clone(),
            options: self.options,
        })
    }
}
