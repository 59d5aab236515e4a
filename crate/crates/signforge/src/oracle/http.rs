//! Blocking HTTP client for a remote vision-language endpoint.
//!
//! Protocol: POST a JSON body `{model, prompt, images: [base64 PNG, ...],
//! temperature?}` and read a JSON reply whose `text` field carries the
//! oracle's words. Credentials come from an environment variable named in
//! the config, never from config files. Transport failures and 429/5xx
//! statuses are retried with a fixed backoff; other statuses are final.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::oracle::{Oracle, OracleError, OracleRequest, OracleResponse};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOracleConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    /// Extra attempts after the first.
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub timeout_ms: u64,
    /// Concurrent in-flight query cap.
    pub max_in_flight: usize,
}

impl Default for HttpOracleConfig {
    fn default() -> Self {
        HttpOracleConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: None,
            max_retries: 2,
            retry_backoff_ms: 250,
            timeout_ms: 60_000,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding concurrent queries.
struct InFlightGate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct GatePass<'a>(&'a InFlightGate);

impl InFlightGate {
    fn new(slots: usize) -> Self {
        InFlightGate {
            free: Mutex::new(slots.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GatePass(self)
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().expect("gate poisoned");
        *free += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpOracle {
    id: String,
    config: HttpOracleConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self, OracleError> {
        if config.endpoint.trim().is_empty() {
            return Err(OracleError::Configuration(
                "remote oracle endpoint is empty".into(),
            ));
        }
        if config.model.trim().is_empty() {
            return Err(OracleError::Configuration(
                "remote oracle model id is empty".into(),
            ));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                OracleError::Configuration(format!(
                    "environment variable {var} with the API key is not set"
                ))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| OracleError::Configuration(format!("http client: {e}")))?;
        Ok(HttpOracle {
            id: format!("{}#{}", config.endpoint, config.model),
            gate: InFlightGate::new(config.max_in_flight),
            api_key,
            client,
            config,
        })
    }

    fn payload(&self, request: &OracleRequest) -> Result<serde_json::Value, OracleError> {
        let mut images = Vec::with_capacity(request.images.len());
        for image in &request.images {
            let png = image
                .to_png_bytes()
                .map_err(|e| OracleError::Configuration(format!("image encode: {e}")))?;
            images.push(BASE64.encode(png));
        }
        let mut body = serde_json::json!({
            "model": self.config.model,
            "prompt": request.prompt.text(),
            "images": images,
        });
        if let Some(t) = request.temperature_hint {
            body["temperature"] = serde_json::json!(t);
        }
        Ok(body)
    }

    fn parse_reply(&self, status: u16, body: &str) -> Result<String, OracleError> {
        let value: serde_json::Value =
            serde_json::from_str(body).map_err(|e| OracleError::Protocol {
                provider: self.id.clone(),
                detail: format!("status {status}, invalid JSON: {e}"),
            })?;
        let text = value
            .get("text")
            .and_then(|t| t.as_str())
            .ok_or_else(|| OracleError::Protocol {
                provider: self.id.clone(),
                detail: format!("status {status}, reply lacks a text field"),
            })?;
        if text.trim().is_empty() {
            return Err(OracleError::Refusal {
                provider: self.id.clone(),
                detail: "empty text field".into(),
            });
        }
        Ok(text.to_owned())
    }
}

impl Oracle for HttpOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let _pass = self.gate.acquire();
        let payload = self.payload(request)?;
        let started = Instant::now();
        let attempts = self.config.max_retries + 1;
        let mut last_transport = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.retry_backoff_ms));
            }
            let mut builder = self.client.post(&self.config.endpoint).json(&payload);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let response = match builder.send() {
                Ok(r) => r,
                Err(e) => {
                    last_transport = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            let body = match response.text() {
                Ok(b) => b,
                Err(e) => {
                    last_transport = e.to_string();
                    continue;
                }
            };
            if status.as_u16() == 429 || status.is_server_error() {
                last_transport = format!("status {status}");
                continue;
            }
            if !status.is_success() {
                return Err(OracleError::Protocol {
                    provider: self.id.clone(),
                    detail: format!("status {status}: {body}"),
                });
            }
            let text = self.parse_reply(status.as_u16(), &body)?;
            return Ok(OracleResponse {
                raw_text: text,
                extracted_label: None,
                latency_ms: started.elapsed().as_millis() as u64,
                provider_id: self.id.clone(),
            });
        }
        Err(OracleError::Transport {
            provider: self.id.clone(),
            attempts,
            message: last_transport,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Image, Rgb, TargetPrompt};
    use std::sync::Arc;

    fn local_config() -> HttpOracleConfig {
        HttpOracleConfig {
            endpoint: "http://127.0.0.1:9/v1/decide".into(),
            model: "test-model".into(),
            api_key_env: None,
            max_retries: 1,
            retry_backoff_ms: 1,
            timeout_ms: 1_000,
            max_in_flight: 2,
        }
    }

    #[test]
    fn unreachable_endpoint_yields_transport_error_after_retries() {
        let oracle = HttpOracle::new(local_config()).unwrap();
        let req = OracleRequest::new(
            TargetPrompt::new("decide").unwrap(),
            vec![Arc::new(Image::filled(2, 2, Rgb::WHITE).unwrap())],
        )
        .unwrap();
        match oracle.query(&req) {
            Err(OracleError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn missing_api_key_variable_is_a_configuration_error() {
        let mut config = local_config();
        config.api_key_env = Some("SIGNFORGE_TEST_KEY_THAT_DOES_NOT_EXIST".into());
        assert!(matches!(
            HttpOracle::new(config),
            Err(OracleError::Configuration(_))
        ));
    }

    #[test]
    fn empty_endpoint_or_model_is_rejected() {
        let mut c = local_config();
        c.endpoint = " ".into();
        assert!(HttpOracle::new(c).is_err());
        let mut c = local_config();
        c.model = String::new();
        assert!(HttpOracle::new(c).is_err());
    }

    #[test]
    fn reply_parsing_distinguishes_refusal_and_protocol() {
        let oracle = HttpOracle::new(local_config()).unwrap();
        assert!(matches!(
            oracle.parse_reply(200, r#"{"text": "  "}"#),
            Err(OracleError::Refusal { .. })
        ));
        assert!(matches!(
            oracle.parse_reply(200, r#"{"output": "hi"}"#),
            Err(OracleError::Protocol { .. })
        ));
        assert!(matches!(
            oracle.parse_reply(200, "not json"),
            Err(OracleError::Protocol { .. })
        ));
        assert_eq!(oracle.parse_reply(200, r#"{"text": "go"}"#).unwrap(), "go");
    }
}
