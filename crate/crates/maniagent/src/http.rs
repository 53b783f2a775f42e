//! HTTP clients: a chat-completion model backend plus detector and grasp
//! services that speak the same JSON-over-POST style.

use std::fmt;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use maniagent_core::gateway::{
    BackendKind, BackendProfile, GatewayError, ImageAttachment, ModelBackend, ModelRequest, Role,
};
use maniagent_core::perception::{
    AdapterError, BBox, Detector, GraspCandidate, GraspSource, RawDetection,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Longest piece of an error body quoted in a transport error.
const BODY_SNIPPET: usize = 200;

fn agent(timeout_s: f64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(timeout_s)))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs `body` and returns the parsed JSON reply, mapping every failure to a message.
fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
) -> Result<Value, String> {
    let mut req = agent.post(url).header("Accept", "application/json");
    if let Some(key) = bearer {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| e.to_string())?;
    if !(200..300).contains(&status) {
        let snippet: String = text.chars().take(BODY_SNIPPET).collect();
        return Err(format!("HTTP {status}: {snippet}"));
    }
    serde_json::from_str(&text).map_err(|e| format!("reply is not JSON: {e}"))
}

fn data_url(image: &ImageAttachment) -> String {
    format!(
        "data:{};base64,{}",
        image.media_type,
        BASE64.encode(&image.data)
    )
}

fn image_json(image: &ImageAttachment) -> Value {
    json!({ "media_type": image.media_type, "data": BASE64.encode(&image.data) })
}

/// Reply text of a chat-completion response.
///
/// Accepted shapes, first match wins:
/// `choices[0].message.content` (a string or a list of `{text}` parts),
/// `choices[0].text`, `message.content`, `content[0].text`, `output_text`.
pub fn extract_reply_text(body: &Value) -> Option<String> {
    fn text_of(v: &Value) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Array(parts) => {
                let texts: Vec<&str> = parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect();
                (!texts.is_empty()).then(|| texts.concat())
            }
            _ => None,
        }
    }
    let choice = body.get("choices").and_then(|c| c.get(0));
    choice
        .and_then(|c| c.pointer("/message/content"))
        .and_then(text_of)
        .or_else(|| choice.and_then(|c| c.get("text")).and_then(text_of))
        .or_else(|| body.pointer("/message/content").and_then(text_of))
        .or_else(|| body.get("content").and_then(text_of))
        .or_else(|| body.get("output_text").and_then(text_of))
}

/// Request body for a chat-completion endpoint. Images ride on the last user message.
pub fn chat_body(request: &ModelRequest, model: &str, temperature: f64) -> Value {
    let last_user = request.messages.iter().rposition(|m| m.role == Role::User);
    let messages: Vec<Value> = request
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let content = if Some(i) == last_user && !request.images.is_empty() {
                let mut parts = vec![json!({ "type": "text", "text": m.text })];
                parts.extend(request.images.iter().map(
                    |img| json!({ "type": "image_url", "image_url": { "url": data_url(img) } }),
                ));
                Value::Array(parts)
            } else {
                Value::String(m.text.clone())
            };
            json!({ "role": m.role.as_str(), "content": content })
        })
        .collect();
    json!({ "model": model, "messages": messages, "temperature": temperature })
}

/// Chat-completion client.
pub struct LiveChatBackend {
    url: String,
    model: String,
    temperature: Option<f64>,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl LiveChatBackend {
    /// Reads the credential from the environment variable named in the profile.
    pub fn from_profile(profile: &BackendProfile) -> Result<Self> {
        if profile.kind != BackendKind::Live {
            return Err(Error::Config("live backend needs a live profile".into()));
        }
        profile.validate()?;
        let api_key = match &profile.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Self {
            url: profile.endpoint_url.clone().unwrap_or_default(),
            model: profile.model_name.clone(),
            temperature: (profile.temperature > 0.0).then_some(profile.temperature),
            api_key,
            agent: agent(profile.timeout_s),
        })
    }
}

impl fmt::Debug for LiveChatBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiveChatBackend")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ModelBackend for LiveChatBackend {
    fn invoke(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        let body = chat_body(
            request,
            &self.model,
            self.temperature.unwrap_or(request.temperature),
        );
        let reply = post_json(&self.agent, &self.url, self.api_key.as_deref(), &body)
            .map_err(GatewayError::Transport)?;
        extract_reply_text(&reply)
            .ok_or_else(|| GatewayError::Transport("response carries no reply text".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireDetection {
    bbox: [f64; 4],
    #[serde(default = "one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
struct DetectReply {
    detections: Vec<WireDetection>,
}

#[derive(Debug, Deserialize)]
struct GraspReply {
    grasps: Vec<GraspCandidate>,
}

/// Open-vocabulary detector service.
///
/// Sends `{phrase, image: {media_type, data}}` and expects
/// `{detections: [{bbox: [x_min, y_min, x_max, y_max], confidence}]}`.
pub struct HttpDetector {
    url: String,
    agent: ureq::Agent,
}

impl HttpDetector {
    pub fn new(url: impl Into<String>, timeout_s: f64) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout_s),
        }
    }
}

impl Detector for HttpDetector {
    fn detect(
        &mut self,
        image: &ImageAttachment,
        phrase: &str,
    ) -> Result<Vec<RawDetection>, AdapterError> {
        let body = json!({ "phrase": phrase, "image": image_json(image) });
        let reply = post_json(&self.agent, &self.url, None, &body).map_err(AdapterError)?;
        let parsed: DetectReply =
            serde_json::from_value(reply).map_err(|e| AdapterError(e.to_string()))?;
        Ok(parsed
            .detections
            .into_iter()
            .map(|d| RawDetection {
                bbox: BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
                confidence: d.confidence,
            })
            .collect())
    }
}

/// Grasp pose service.
///
/// Sends `{image: {media_type, data}}` and expects
/// `{grasps: [{position: [x, y, z], orientation: [w, x, y, z], width, score}]}`.
pub struct HttpGraspSource {
    url: String,
    agent: ureq::Agent,
}

impl HttpGraspSource {
    pub fn new(url: impl Into<String>, timeout_s: f64) -> Self {
        Self {
            url: url.into(),
            agent: agent(timeout_s),
        }
    }
}

impl GraspSource for HttpGraspSource {
    fn grasps(&mut self, image: &ImageAttachment) -> Result<Vec<GraspCandidate>, AdapterError> {
        let body = json!({ "image": image_json(image) });
        let reply = post_json(&self.agent, &self.url, None, &body).map_err(AdapterError)?;
        let parsed: GraspReply =
            serde_json::from_value(reply).map_err(|e| AdapterError(e.to_string()))?;
        Ok(parsed.grasps)
    }
}
