//! Blocking JSON-over-HTTP helper used by the external classifier,
//! embedder and tokenizer clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    endpoint: String,
}

impl JsonClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        JsonClient {
            agent,
            endpoint: endpoint.into(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| Error::Remote(format!("{}: {e}", self.endpoint)))?;
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| Error::Remote(format!("{}: bad response: {e}", self.endpoint)))
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
