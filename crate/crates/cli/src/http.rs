//! Chat-completions client for the few-shot strategy.

use cellbench::prompt::{LlmClient, LlmConfig};
use cellbench::{Error, Result};
use serde_json::{json, Value};

pub struct HttpClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    model: String,
}

impl HttpClient {
    pub fn new(config: &LlmConfig) -> Result<Self> {
        let api_key = config.api_key.clone().ok_or_else(|| {
            Error::Config(format!(
                "no API key: set {} for prompt-eval",
                cellbench::prompt::ENV_API_KEY
            ))
        })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: config.endpoint.clone(),
            api_key,
            model: config.model.clone(),
        })
    }
}

impl LlmClient for HttpClient {
    fn send(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(|e| Error::Client(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Client(format!("reading reply: {e}")))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(300).collect();
            return Err(Error::Client(format!("HTTP {status}: {snippet}")));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Client(format!("reply is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::Client("reply has no choices[0].message.content".into()))
    }
}
