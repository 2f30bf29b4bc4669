//! Client for an external embedding service.
//!
//! Protocol: `POST <base>/embed` with one of
//!
//! ```json
//! {"text": "digit 9 is moving down then up"}
//! {"image": {"height": 16, "width": 16, "channels": 1, "pixels": [0.0, ...]}}
//! ```
//!
//! where `pixels` is row-major, channel-interleaved, in `[0, 1]`. The reply
//! is `{"embedding": [...]}`, a unit vector of the declared dimension.
//! Transport failures, non-2xx statuses and malformed replies become
//! [`Error::Oracle`] after the configured number of retries.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::oracle::SimilarityOracle;
use crate::error::{Error, Result};
use crate::video::Frame;

#[derive(Clone, Debug, PartialEq)]
pub struct HttpOracleConfig {
    pub base_url: String,
    pub dim: usize,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub max_in_flight: usize,
}

impl HttpOracleConfig {
    pub fn new(base_url: impl Into<String>, dim: usize) -> Self {
        Self {
            base_url: base_url.into(),
            dim,
            timeout: Duration::from_secs(10),
            retries: 2,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct ImagePayload<'a> {
    height: usize,
    width: usize,
    channels: usize,
    pixels: &'a [f64],
}

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum Request<'a> {
    Text(&'a str),
    Image(ImagePayload<'a>),
}

#[derive(Deserialize)]
struct Reply {
    embedding: Vec<f64>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpOracle {
    config: HttpOracleConfig,
    agent: ureq::Agent,
    slots: Slots,
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::config("oracle.dim", "must be positive"));
        }
        if config.max_in_flight == 0 {
            return Err(Error::config("oracle.max_in_flight", "must be positive"));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let slots = Slots {
            free: Mutex::new(config.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(Self { config, agent, slots })
    }

    fn endpoint(&self) -> String {
        format!("{}/embed", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, request: &Request<'_>) -> Result<Vec<f64>> {
        let _slot = self.slots.acquire();
        let url = self.endpoint();
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            let reply = self
                .agent
                .post(&url)
                .send_json(request)
                .and_then(|mut r| r.body_mut().read_json::<Reply>());
            match reply {
                Ok(r) => return Ok(r.embedding),
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Oracle(format!(
            "{url} failed after {} attempt(s): {last}",
            self.config.retries + 1
        )))
    }
}

impl SimilarityOracle for HttpOracle {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.post(&Request::Text(text))
    }

    fn embed_frame(&self, frame: Frame<'_>) -> Result<Vec<f64>> {
        self.post(&Request::Image(ImagePayload {
            height: frame.height,
            width: frame.width,
            channels: frame.channels,
            pixels: frame.pixels,
        }))
    }
}
