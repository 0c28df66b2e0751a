//! Recording and replaying predictor calls.
//!
//! A trace is the ordered list of `(t, condition, ε)` triples produced during
//! one run. Replaying it answers the same queries in the same order with
//! bitwise-identical noise, and rejects anything else.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::schedule::ScheduleParams;

use super::{Condition, NoisePredictor};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub condition: Condition,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub schema_version: u32,
    /// Latent shape of every entry; empty when no call was recorded.
    pub shape: Vec<usize>,
    pub schedule_params: ScheduleParams,
    pub entries: Vec<TraceEntry>,
}

impl TraceFile {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TRACE_SCHEMA_VERSION {
            return Err(Error::MalformedTrace(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.entries.is_empty() {
            return Ok(());
        }
        let n = crate::latent::validate_shape(&self.shape).map_err(|e| Error::MalformedTrace(e.to_string()))?;
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.values.len() != n {
                return Err(Error::MalformedTrace(format!(
                    "entry {i} has {} values, shape needs {n}",
                    entry.values.len()
                )));
            }
            if entry.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::MalformedTrace(format!("entry {i} has a non-finite value")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::MalformedTrace(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TraceFile = serde_json::from_str(text).map_err(|e| Error::MalformedTrace(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::MalformedTrace(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::MalformedTrace(format!("{}: {e}", path.display())))
    }
}

/// Forwards to an inner predictor and logs every answer.
#[derive(Debug)]
pub struct TraceRecorder<P> {
    inner: P,
    log: Mutex<(Option<Vec<usize>>, Vec<TraceEntry>)>,
}

impl<P: NoisePredictor> TraceRecorder<P> {
    pub fn new(inner: P) -> Self {
        TraceRecorder {
            inner,
            log: Mutex::new((None, Vec::new())),
        }
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("trace log poisoned").1.len()
    }

    pub fn finish(self, schedule_params: ScheduleParams) -> TraceFile {
        let (shape, entries) = self.log.into_inner().expect("trace log poisoned");
        TraceFile {
            schema_version: TRACE_SCHEMA_VERSION,
            shape: shape
                .or_else(|| self.inner.input_shape().map(<[usize]>::to_vec))
                .unwrap_or_default(),
            schedule_params,
            entries,
        }
    }
}

impl<P: NoisePredictor> NoisePredictor for TraceRecorder<P> {
    fn input_shape(&self) -> Option<&[usize]> {
        self.inner.input_shape()
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        let eps = self.inner.predict(z, t, condition)?;
        let mut log = self.log.lock().expect("trace log poisoned");
        match &log.0 {
            Some(shape) => eps.ensure_shape(shape)?,
            None => log.0 = Some(eps.shape().to_vec()),
        }
        log.1.push(TraceEntry {
            t,
            condition,
            values: eps.values().to_vec(),
        });
        Ok(eps)
    }
}

/// Runs `run` against a recording wrapper of `predictor` and returns its
/// result together with the captured trace.
pub fn record_trace<P, R>(
    predictor: P,
    schedule_params: ScheduleParams,
    run: impl FnOnce(&TraceRecorder<P>) -> Result<R>,
) -> Result<(R, TraceFile)>
where
    P: NoisePredictor,
{
    let recorder = TraceRecorder::new(predictor);
    let out = run(&recorder)?;
    Ok((out, recorder.finish(schedule_params)))
}

pub fn replay_trace(file: TraceFile) -> Result<TraceReplayer> {
    TraceReplayer::new(file)
}

/// Answers predictor queries from a recorded trace, strictly in order.
#[derive(Debug)]
pub struct TraceReplayer {
    file: TraceFile,
    cursor: Mutex<usize>,
}

impl TraceReplayer {
    pub fn new(file: TraceFile) -> Result<Self> {
        file.validate()?;
        Ok(TraceReplayer {
            file,
            cursor: Mutex::new(0),
        })
    }

    pub fn schedule_params(&self) -> &ScheduleParams {
        &self.file.schedule_params
    }

    pub fn remaining(&self) -> usize {
        self.file.entries.len() - *self.cursor.lock().expect("trace cursor poisoned")
    }

    pub fn reset(&self) {
        *self.cursor.lock().expect("trace cursor poisoned") = 0;
    }
}

impl NoisePredictor for TraceReplayer {
    fn input_shape(&self) -> Option<&[usize]> {
        if self.file.entries.is_empty() {
            None
        } else {
            Some(&self.file.shape)
        }
    }

    fn predict(&self, z: &Latent, t: usize, condition: Condition) -> Result<Latent> {
        let mut cursor = self.cursor.lock().expect("trace cursor poisoned");
        let index = *cursor;
        let entry = self
            .file
            .entries
            .get(index)
            .ok_or(Error::TraceExhausted { calls: index })?;
        if entry.t != t || entry.condition != condition {
            return Err(Error::TraceMismatch {
                index,
                reason: format!(
                    "recorded (t = {}, condition = {}), queried (t = {t}, condition = {condition})",
                    entry.t, entry.condition
                ),
            });
        }
        z.ensure_shape(&self.file.shape)?;
        *cursor += 1;
        Latent::new(self.file.shape.clone(), entry.values.clone())
    }
}
