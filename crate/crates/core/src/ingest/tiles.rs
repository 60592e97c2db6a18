//! Cached, rate-limited image tile client with an offline fixture mode.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IngestError;
use crate::geo::ImageFootprint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per tile, including the first.
    pub max_attempts: u32,
    pub base_delay_s: f64,
    pub max_delay_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_s: 0.5,
            max_delay_s: 8.0,
        }
    }
}

impl RetryPolicy {
    /// Sleep before attempt `attempt + 1`, doubling from the base delay.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let d = self.base_delay_s * 2f64.powi(attempt.saturating_sub(1).min(60) as i32);
        Duration::from_secs_f64(d.min(self.max_delay_s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileFetchConfig {
    /// URL template with `{lat}`, `{lon}`, `{zoom}`, `{width}`, `{height}`
    /// and optionally `{key}` placeholders.
    pub endpoint: String,
    pub cache_dir: PathBuf,
    pub rate_per_sec: f64,
    /// Token bucket capacity.
    pub burst: u32,
    pub retry: RetryPolicy,
    pub offline: bool,
    pub fixture_dir: Option<PathBuf>,
    /// Substituted for `{key}`; never written to disk or to provenance.
    #[serde(skip)]
    pub credential: Option<String>,
}

impl TileFetchConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::Config(m.to_string()));
        if self.endpoint.trim().is_empty() {
            return bad("endpoint is empty");
        }
        if !(self.rate_per_sec > 0.0 && self.rate_per_sec.is_finite()) {
            return bad("rate_per_sec must be positive");
        }
        if self.burst == 0 {
            return bad("burst must be at least 1");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1");
        }
        if !(self.retry.base_delay_s >= 0.0 && self.retry.max_delay_s >= 0.0) {
            return bad("retry delays must be non-negative");
        }
        if self.endpoint.contains("{key}") && self.credential.is_none() && !self.offline {
            return bad("endpoint needs a credential");
        }
        Ok(())
    }

    fn url(&self, fp: &ImageFootprint) -> String {
        self.endpoint
            .replace("{lat}", &fp.center().lat.to_string())
            .replace("{lon}", &fp.center().lon.to_string())
            .replace("{zoom}", &fp.zoom().to_string())
            .replace("{width}", &fp.width_px().to_string())
            .replace("{height}", &fp.height_px().to_string())
            .replace("{key}", self.credential.as_deref().unwrap_or(""))
    }
}

/// Hex SHA-256 over the endpoint template, center, zoom and pixel size.
/// The credential is not part of the key.
pub fn cache_key(endpoint: &str, fp: &ImageFootprint) -> String {
    let c = fp.center();
    let text = format!(
        "{endpoint}\n{:.9}\n{:.9}\n{}\n{}x{}",
        c.lat,
        c.lon,
        fp.zoom(),
        fp.width_px(),
        fp.height_px()
    );
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// File name looked up in the fixture directory in offline mode.
pub fn fixture_name(fp: &ImageFootprint) -> String {
    let c = fp.center();
    format!(
        "z{}_{:.7}_{:.7}_{}x{}.tile",
        fp.zoom(),
        c.lat,
        c.lon,
        fp.width_px(),
        fp.height_px()
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub retryable: bool,
    pub msg: String,
}

pub trait TileTransport: Send + Sync {
    fn get(&self, url: &str) -> Result<Vec<u8>, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: config.into(),
        }
    }
}

impl TileTransport for HttpTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>, TransportError> {
        let fail = |e: ureq::Error| {
            let retryable = match &e {
                ureq::Error::StatusCode(c) => *c == 429 || *c >= 500,
                ureq::Error::Io(_)
                | ureq::Error::Timeout(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound => true,
                _ => false,
            };
            TransportError {
                retryable,
                msg: e.to_string(),
            }
        };
        let mut resp = self.agent.get(url).call().map_err(fail)?;
        resp.body_mut().read_to_vec().map_err(fail)
    }
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rate: f64, capacity: u32) -> Self {
        Self {
            rate,
            capacity: capacity as f64,
            tokens: capacity as f64,
            last: Instant::now(),
        }
    }

    /// Blocks until a token is available, then takes it.
    fn acquire(&mut self) {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.rate)
            .min(self.capacity);
        self.last = now;
        if self.tokens < 1.0 {
            let wait = Duration::from_secs_f64((1.0 - self.tokens) / self.rate);
            thread::sleep(wait);
            self.tokens = 1.0;
            self.last = now + wait;
        }
        self.tokens -= 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileSource {
    Cache,
    Fixture,
    Network,
}

/// Where a tile came from. Contains no credential and no wall-clock time,
/// so it is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cache_key: String,
    pub source: TileSource,
    pub endpoint: String,
    pub lat: f64,
    pub lon: f64,
    pub zoom: u32,
    pub width_px: u32,
    pub height_px: u32,
    pub gsd_m_per_px: f64,
    /// Network attempts made for this call (0 when served locally).
    pub attempts: u32,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedTile {
    pub bytes: Vec<u8>,
    pub provenance: Provenance,
}

pub struct TileFetcher<T: TileTransport> {
    cfg: TileFetchConfig,
    transport: T,
    bucket: Mutex<TokenBucket>,
    network_calls: AtomicU64,
}

impl<T: TileTransport> TileFetcher<T> {
    pub fn new(cfg: TileFetchConfig, transport: T) -> Result<Self, IngestError> {
        cfg.validate()?;
        let bucket = Mutex::new(TokenBucket::new(cfg.rate_per_sec, cfg.burst));
        Ok(Self {
            cfg,
            transport,
            bucket,
            network_calls: AtomicU64::new(0),
        })
    }

    /// Requests sent through the transport so far.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn cache_path(&self, key: &str) -> PathBuf {
        self.cfg.cache_dir.join(format!("{key}.tile"))
    }

    /// Cache first; then fixtures when offline, or the network otherwise.
    /// Network results are written to the cache atomically.
    pub fn fetch(&self, fp: &ImageFootprint) -> Result<FetchedTile, IngestError> {
        let key = cache_key(&self.cfg.endpoint, fp);
        let cached = self.cache_path(&key);
        if cached.is_file() {
            let bytes = std::fs::read(&cached)?;
            return Ok(self.finish(fp, key, TileSource::Cache, 0, bytes));
        }
        if self.cfg.offline {
            if let Some(dir) = &self.cfg.fixture_dir {
                let path = dir.join(fixture_name(fp));
                if path.is_file() {
                    let bytes = std::fs::read(path)?;
                    return Ok(self.finish(fp, key, TileSource::Fixture, 0, bytes));
                }
            }
            return Err(IngestError::OfflineMiss(fixture_name(fp)));
        }
        let url = self.cfg.url(fp);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.bucket.lock().expect("token bucket lock").acquire();
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.get(&url) {
                Ok(bytes) => {
                    write_atomic(&self.cfg.cache_dir, &cached, &bytes)?;
                    return Ok(self.finish(fp, key, TileSource::Network, attempt, bytes));
                }
                Err(e) if e.retryable && attempt < self.cfg.retry.max_attempts => {
                    thread::sleep(self.cfg.retry.backoff(attempt));
                }
                Err(e) => {
                    let msg = match &self.cfg.credential {
                        Some(k) if !k.is_empty() => e.msg.replace(k.as_str(), "***"),
                        _ => e.msg,
                    };
                    return Err(IngestError::Network {
                        attempts: attempt,
                        msg,
                    });
                }
            }
        }
    }

    fn finish(
        &self,
        fp: &ImageFootprint,
        key: String,
        source: TileSource,
        attempts: u32,
        bytes: Vec<u8>,
    ) -> FetchedTile {
        let c = fp.center();
        let provenance = Provenance {
            cache_key: key,
            source,
            endpoint: self.cfg.endpoint.clone(),
            lat: c.lat,
            lon: c.lon,
            zoom: fp.zoom(),
            width_px: fp.width_px(),
            height_px: fp.height_px(),
            gsd_m_per_px: fp.gsd_m_per_px(),
            attempts,
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        };
        FetchedTile { bytes, provenance }
    }
}

fn write_atomic(dir: &Path, dest: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dest).map_err(|e| IngestError::Io(e.error))?;
    Ok(())
}
