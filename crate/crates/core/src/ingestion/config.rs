use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{IngestError, LiveConfig, SearchTermSet};

/// Live ingestion settings read from a JSON file. The file names the
/// environment variable that holds the token; the token itself never
/// appears in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub event_name: String,
    pub terms: Vec<String>,
    pub endpoint_url_template: String,
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default = "default_interval")]
    pub interval_seconds: u64,
}

fn default_page_size() -> usize {
    100
}

fn default_interval() -> u64 {
    180
}

impl IngestConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        let cfg: IngestConfig = serde_json::from_str(&raw)
            .map_err(|e| IngestError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.page_size == 0 {
            return Err(IngestError::Config("page_size must be positive".into()));
        }
        if self.interval_seconds == 0 {
            return Err(IngestError::Config(
                "interval_seconds must be positive".into(),
            ));
        }
        self.term_set().map(|_| ())
    }

    pub fn term_set(&self) -> Result<SearchTermSet, IngestError> {
        SearchTermSet::new(&self.event_name, self.terms.iter().cloned())
    }

    pub fn live(&self) -> LiveConfig {
        LiveConfig {
            endpoint_url_template: self.endpoint_url_template.clone(),
            auth_token_env: self.auth_token_env.clone(),
            page_size: self.page_size,
        }
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs(self.interval_seconds)
    }
}
