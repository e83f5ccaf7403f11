//! HTTP client for an external object-detection service.
//!
//! The service receives the image as a PNG body and answers with a JSON list
//! of `{label, confidence}` (or an object holding it under `labels`).

use std::io::Cursor;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use edgewipe::forensics::{DetectionScore, ObjectScorer};
use edgewipe::{Error, Result};
use image::RgbImage;
use serde::Deserialize;

pub struct RemoteScorer {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    min_interval: Duration,
    retries: u32,
    last_request: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Reply {
    List(Vec<DetectionScore>),
    Wrapped { labels: Vec<DetectionScore> },
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>, api_key: Option<String>, min_interval: Duration, retries: u32) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| Error::ScorerUnavailable(e.to_string()))?;
        Ok(RemoteScorer { url: url.into(), api_key, client, min_interval, retries, last_request: Mutex::new(None) })
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().expect("scorer clock poisoned");
        if let Some(t) = *last {
            let wait = self.min_interval.saturating_sub(t.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        *last = Some(Instant::now());
    }

    fn attempt(&self, body: &[u8]) -> std::result::Result<Vec<DetectionScore>, (bool, String)> {
        self.throttle();
        let mut req = self.client.post(&self.url).header("content-type", "image/png").body(body.to_vec());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("HTTP {status}")));
        }
        match resp.json::<Reply>().map_err(|e| (false, format!("malformed reply: {e}")))? {
            Reply::List(v) | Reply::Wrapped { labels: v } => Ok(v),
        }
    }
}

impl ObjectScorer for RemoteScorer {
    fn name(&self) -> &str {
        "remote"
    }

    fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionScore>> {
        let mut png = Vec::new();
        image.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)?;
        let mut backoff = self.min_interval.max(Duration::from_millis(50));
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            match self.attempt(&png) {
                Ok(v) => return Ok(v),
                Err((retry, msg)) => {
                    log::warn!("scorer request {} failed: {msg}", attempt + 1);
                    last_err = msg;
                    if !retry {
                        break;
                    }
                    if attempt < self.retries {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(Error::ScorerUnavailable(format!("{}: {last_err}", self.url)))
    }
}
