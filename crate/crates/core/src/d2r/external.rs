//! Client for an external vision-language evaluator.
//!
//! Wire contract: HTTP POST with a `multipart/form-data` body holding an
//! `image` part (PNG) and a `prompt` part (UTF-8 instruction). The reply
//! body is UTF-8 text whose first word must be "clustering" or
//! "scattering".

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{BehaviorClassifier, BehaviorLabel, EpochLabels, EvalConfig};
use crate::error::{Error, Result};
use crate::sim::{SimConfig, Trajectory, VectorField};

use super::render::{render_distance_plot, render_layout_plot};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_INFLIGHT: usize = 4;
pub const ENDPOINT_ENV: &str = "ZAPFIELD_EVALUATOR_URL";

pub const DISTANCE_INSTRUCTION: &str =
    "This plot shows the average distance between cells over time. Answer with one word, clustering or scattering.";
pub const LAYOUT_INSTRUCTION: &str =
    "This image shows the final cell positions. Answer with one word, clustering or scattering.";

const BOUNDARY: &str = "zapfield-form-boundary-7d1c3e0b9a";

/// Reduce a reply to its first word, lower-cased and stripped of
/// punctuation, and map it onto a label.
pub fn parse_reply(reply: &str) -> Result<BehaviorLabel> {
    let word = reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    word.parse()
}

pub fn multipart_body(image: &[u8], instruction: &str) -> Vec<u8> {
    let mut body = Vec::with_capacity(image.len() + instruction.len() + 256);
    body.extend_from_slice(
        format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"plot.png\"\r\nContent-Type: image/png\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(image);
    body.extend_from_slice(
        format!(
            "\r\n--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"prompt\"\r\nContent-Type: text/plain; charset=utf-8\r\n\r\n{instruction}\r\n--{BOUNDARY}--\r\n"
        )
        .as_bytes(),
    );
    body
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    inflight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.inflight.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.inflight.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct ExternalEvaluator {
    endpoint: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl ExternalEvaluator {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_limits(endpoint, DEFAULT_TIMEOUT, DEFAULT_MAX_INFLIGHT)
    }

    pub fn from_env() -> Result<Self> {
        std::env::var(ENDPOINT_ENV)
            .map(Self::new)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))
    }

    pub fn with_limits(endpoint: impl Into<String>, timeout: Duration, max_inflight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        ExternalEvaluator {
            endpoint: endpoint.into(),
            agent,
            gate: Gate {
                inflight: Mutex::new(0),
                freed: Condvar::new(),
                limit: max_inflight.max(1),
            },
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Send one plot and instruction; return the label the service names.
    pub fn query(&self, image: &[u8], instruction: &str) -> Result<BehaviorLabel> {
        let _slot = self.gate.acquire();
        let body = multipart_body(image, instruction);
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .send(&body[..])
            .map_err(|e| Error::Evaluator(format!("request to {} failed: {e}", self.endpoint)))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Evaluator(format!("unreadable reply from {}: {e}", self.endpoint)))?;
        parse_reply(&text)
    }
}

pub fn query_external_evaluator(image: &[u8], instruction: &str, endpoint: &str) -> Result<BehaviorLabel> {
    ExternalEvaluator::new(endpoint).query(image, instruction)
}

impl BehaviorClassifier for ExternalEvaluator {
    fn classify(&self, t: &Trajectory, field: &VectorField, sim: &SimConfig, _cfg: &EvalConfig) -> EpochLabels {
        let trend = render_distance_plot(&t.d_avg_series).and_then(|png| self.query(&png, DISTANCE_INSTRUCTION));
        let layout =
            render_layout_plot(&t.final_positions, field, sim).and_then(|png| self.query(&png, LAYOUT_INSTRUCTION));
        EpochLabels { trend, layout }
    }
}
