//! Uniform access to language and vision model backends.
//!
//! A [`ModelBackend`] only turns a [`ModelRequest`] into raw reply text. The
//! [`Gateway`] around it validates the reply against the request's response
//! schema and re-asks with a correction when the format is wrong, counting
//! every backend invocation on the way.

mod schema;
mod scripted;

pub use schema::{validate_response, FormatViolation, Schema, ViolationKind};
pub use scripted::{FnBackend, ScriptedBackend, TranscriptRecord};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{Clock, ManualClock};

/// Default re-query budget for malformed replies.
pub const DEFAULT_MAX_RETRIES: u32 = 2;

/// Suffix of every format-correction message.
pub const CORRECTION_SUFFIX: &str = "Reply with only the required format.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

/// Encoded image handed to a vision backend.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub media_type: String,
    pub data: Vec<u8>,
}

impl ImageAttachment {
    pub fn new(media_type: impl Into<String>, data: Vec<u8>) -> Self {
        Self {
            media_type: media_type.into(),
            data,
        }
    }

    /// Hex SHA-256 of the encoded bytes.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.data))
    }
}

impl fmt::Debug for ImageAttachment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageAttachment")
            .field("media_type", &self.media_type)
            .field("bytes", &self.data.len())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub messages: Vec<Message>,
    #[serde(default)]
    pub images: Vec<ImageAttachment>,
    pub schema: String,
    #[serde(default)]
    pub temperature: f64,
}

impl ModelRequest {
    pub fn new(schema: impl Into<String>) -> Self {
        Self {
            messages: Vec::new(),
            images: Vec::new(),
            schema: schema.into(),
            temperature: 0.0,
        }
    }

    pub fn system(mut self, text: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::System,
            text: text.into(),
        });
        self
    }

    pub fn user(mut self, text: impl Into<String>) -> Self {
        self.messages.push(Message {
            role: Role::User,
            text: text.into(),
        });
        self
    }

    pub fn image(mut self, image: ImageAttachment) -> Self {
        self.images.push(image);
        self
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Concatenated text of all user messages.
    pub fn user_text(&self) -> String {
        let mut out = String::new();
        for m in self.messages.iter().filter(|m| m.role == Role::User) {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&m.text);
        }
        out
    }
}

/// Canonical transcript key of a request.
///
/// Covers the ordered (role, text) pairs, the schema id and the digest of
/// every image. Temperature and timeouts are excluded.
pub fn scripted_key(request: &ModelRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"schema\0");
    hasher.update(request.schema.as_bytes());
    for m in &request.messages {
        hasher.update(b"\0msg\0");
        hasher.update(m.role.as_str().as_bytes());
        hasher.update(b"\0");
        hasher.update((m.text.len() as u64).to_le_bytes());
        hasher.update(m.text.as_bytes());
    }
    for image in &request.images {
        hasher.update(b"\0img\0");
        hasher.update(image.digest().as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    /// Schema-validated payload of `raw_text`.
    pub parsed_payload: Value,
    pub attempt_count: u32,
    /// Seconds, measured on the gateway's clock.
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("format error after {attempts} attempt(s): {violation}")]
    Format {
        attempts: u32,
        violation: FormatViolation,
    },
    #[error("scripted backend has no reply for request key {key}")]
    ScriptMiss { key: String },
    #[error("response schema `{0}` is not registered")]
    UnknownSchema(String),
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
    #[error("invalid backend profile: {0}")]
    Profile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
}

/// Transcript value that selects the built-in simulator oracle instead of a file.
pub const ORACLE_TRANSCRIPT: &str = "oracle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Transcript file, or [`ORACLE_TRANSCRIPT`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

impl BackendProfile {
    pub fn oracle() -> Self {
        Self::scripted(ORACLE_TRANSCRIPT)
    }

    pub fn scripted(transcript: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint_url: None,
            model_name: String::from("scripted"),
            timeout_s: default_timeout(),
            max_retries: DEFAULT_MAX_RETRIES,
            transcript: Some(transcript.into()),
            api_key_env: None,
            temperature: 0.0,
        }
    }

    pub fn live(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Live,
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            timeout_s: default_timeout(),
            max_retries: DEFAULT_MAX_RETRIES,
            transcript: None,
            api_key_env: None,
            temperature: 0.0,
        }
    }

    /// Parses the compact `scripted:<transcript>` / `live:<url>[#model]` form.
    pub fn parse_spec(spec: &str) -> Result<Self, GatewayError> {
        let (kind, rest) = spec.split_once(':').ok_or_else(|| {
            GatewayError::Profile(format!("backend spec `{spec}` lacks a kind prefix"))
        })?;
        let profile = match kind {
            "scripted" => Self::scripted(rest),
            "live" => match rest.rsplit_once('#') {
                Some((url, model)) => Self::live(url, model),
                None => Self::live(rest, ""),
            },
            other => {
                return Err(GatewayError::Profile(format!(
                    "unknown backend kind `{other}`"
                )))
            }
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn is_oracle(&self) -> bool {
        self.kind == BackendKind::Scripted && self.transcript.as_deref() == Some(ORACLE_TRANSCRIPT)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_s > 0.0) {
            return Err(GatewayError::Profile(
                "timeout must be positive".to_string(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Profile(
                "temperature must be >= 0".to_string(),
            ));
        }
        match self.kind {
            BackendKind::Scripted => match self.transcript.as_deref() {
                Some(p) if !p.is_empty() => Ok(()),
                _ => Err(GatewayError::Profile(
                    "scripted backend requires a transcript path".to_string(),
                )),
            },
            BackendKind::Live => match self.endpoint_url.as_deref() {
                Some(u) if !u.is_empty() => Ok(()),
                _ => Err(GatewayError::Profile(
                    "live backend requires endpoint_url".to_string(),
                )),
            },
        }
    }
}

/// Something that answers a model request with raw text.
pub trait ModelBackend: Send + Sync {
    fn invoke(&self, request: &ModelRequest) -> Result<String, GatewayError>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for Arc<B> {
    fn invoke(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        (**self).invoke(request)
    }
}

/// Message appended to the request after a malformed reply.
pub fn correction_message(violation: &FormatViolation) -> String {
    format!("Your previous reply was rejected: {violation}. {CORRECTION_SUFFIX}")
}

/// Sends `request` to `backend`, validating the reply and re-asking up to
/// `max_retries` times.
///
/// Every retry appends a correction message carrying the violation, so the
/// n-th attempt sees n-1 corrections. Transport errors and transcript misses
/// are returned immediately.
pub fn complete(
    request: &ModelRequest,
    backend: &dyn ModelBackend,
    max_retries: u32,
    clock: &dyn Clock,
) -> Result<ModelResponse, GatewayError> {
    complete_counted(request, backend, max_retries, clock, &AtomicU64::new(0))
}

fn complete_counted(
    request: &ModelRequest,
    backend: &dyn ModelBackend,
    max_retries: u32,
    clock: &dyn Clock,
    calls: &AtomicU64,
) -> Result<ModelResponse, GatewayError> {
    if request.messages.is_empty() {
        return Err(GatewayError::InvalidRequest("request has no messages"));
    }
    if Schema::parse(&request.schema).is_none() {
        return Err(GatewayError::UnknownSchema(request.schema.clone()));
    }
    let started = clock.now();
    let mut current = request.clone();
    let mut attempt = 0;
    loop {
        attempt += 1;
        calls.fetch_add(1, Ordering::SeqCst);
        let raw = backend.invoke(&current)?;
        match validate_response(&raw, &request.schema) {
            Ok(parsed_payload) => {
                return Ok(ModelResponse {
                    raw_text: raw,
                    parsed_payload,
                    attempt_count: attempt,
                    latency: clock.now() - started,
                })
            }
            Err(violation) => {
                if attempt > max_retries {
                    return Err(GatewayError::Format {
                        attempts: attempt,
                        violation,
                    });
                }
                current.messages.push(Message {
                    role: Role::User,
                    text: correction_message(&violation),
                });
            }
        }
    }
}

/// A backend bound to a retry budget and a call counter.
///
/// Shareable across threads; each [`Gateway::complete`] call is independent.
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    max_retries: u32,
    clock: Arc<dyn Clock>,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ModelBackend>, max_retries: u32) -> Self {
        Self {
            backend,
            max_retries,
            clock: Arc::new(ManualClock::new()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        complete_counted(
            request,
            self.backend.as_ref(),
            self.max_retries,
            self.clock.as_ref(),
            &self.calls,
        )
    }

    /// Backend invocations so far, retries included.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    pub fn backend(&self) -> &Arc<dyn ModelBackend> {
        &self.backend
    }
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("max_retries", &self.max_retries)
            .field("calls", &self.call_count())
            .finish()
    }
}
