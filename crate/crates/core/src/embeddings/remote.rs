use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EmbeddingRequest};
use crate::error::{Error, Result};

/// Answer of `GET /info`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteInfo {
    pub model_id: String,
    pub dim: usize,
    pub default_layer: i64,
    pub default_pooling: String,
}

#[derive(Debug, Serialize)]
struct EmbedBody<'a> {
    tokens: &'a [String],
    target_index: usize,
    pooling: &'a str,
    layer: i64,
}

#[derive(Debug, Deserialize)]
struct EmbedAnswer {
    vector: Vec<f32>,
    model_id: String,
    layer: i64,
    pooling: String,
}

/// Client for the embedding microservice.
#[derive(Debug)]
pub struct RemoteProvider {
    endpoint: String,
    pooling: String,
    layer: i64,
    info: RemoteInfo,
    client: reqwest::blocking::Client,
}

impl RemoteProvider {
    /// Queries `/info` once; its dimension is enforced for every answer.
    /// `pooling` and `layer` default to the service's advertised defaults.
    pub fn connect(endpoint: &str, pooling: Option<&str>, layer: Option<i64>) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let info: RemoteInfo = client
            .get(format!("{endpoint}/info"))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Transport(format!("{endpoint}/info: {e}")))?
            .json()
            .map_err(|e| Error::Protocol(format!("{endpoint}/info: {e}")))?;
        if info.dim == 0 {
            return Err(Error::Protocol("service advertises dimension 0".into()));
        }
        Ok(RemoteProvider {
            pooling: pooling.unwrap_or(&info.default_pooling).to_string(),
            layer: layer.unwrap_or(info.default_layer),
            endpoint,
            info,
            client,
        })
    }

    pub fn info(&self) -> &RemoteInfo {
        &self.info
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.info.dim
    }

    fn config(&self) -> serde_json::Value {
        serde_json::json!({
            "provider": "remote",
            "endpoint": self.endpoint,
            "model_id": self.info.model_id,
            "dim": self.info.dim,
            "layer": self.layer,
            "pooling": self.pooling,
        })
    }

    fn embed_raw(&self, request: &EmbeddingRequest) -> Result<Vec<f32>> {
        let body = EmbedBody {
            tokens: &request.tokens,
            target_index: request.target_index,
            pooling: &self.pooling,
            layer: self.layer,
        };
        let url = format!("{}/embed", self.endpoint);
        let answer: EmbedAnswer = self
            .client
            .post(&url)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Transport(format!("{url}: {e}")))?
            .json()
            .map_err(|e| Error::Protocol(format!("{url}: {e}")))?;
        if answer.model_id != self.info.model_id || answer.layer != self.layer || answer.pooling != self.pooling {
            return Err(Error::Protocol(format!(
                "service answered with model {} layer {} pooling {}, expected {} / {} / {}",
                answer.model_id, answer.layer, answer.pooling, self.info.model_id, self.layer, self.pooling
            )));
        }
        Ok(answer.vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ContextMode;
    use crate::embeddings::embed;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Minimal HTTP/1.1 responder: `/info` advertises `dim`; `/embed` answers
    /// with `answer_dim` values derived from the body length.
    fn serve(dim: usize, answer_dim: usize) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; content_length];
                reader.read_exact(&mut body).unwrap();
                let payload = if request_line.starts_with("GET /info") {
                    serde_json::json!({"model_id": "mock", "dim": dim, "default_layer": -1, "default_pooling": "mean"})
                } else {
                    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let seed = req["tokens"].to_string().len() as f32 + req["target_index"].as_f64().unwrap() as f32;
                    let vector: Vec<f32> = (0..answer_dim).map(|i| seed + i as f32).collect();
                    serde_json::json!({"vector": vector, "model_id": "mock", "layer": req["layer"], "pooling": req["pooling"]})
                };
                let text = payload.to_string();
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    text.len(),
                    text
                )
                .unwrap();
            }
        });
        format!("http://{addr}")
    }

    fn request(tokens: &[&str], target: usize) -> EmbeddingRequest {
        EmbeddingRequest::new(tokens.iter().map(|s| s.to_string()).collect(), target, ContextMode::Phrasal).unwrap()
    }

    #[test]
    fn remote_round_trip() {
        let endpoint = serve(4, 4);
        let p = RemoteProvider::connect(&endpoint, None, None).unwrap();
        assert_eq!(p.dim(), 4);
        assert_eq!(p.config()["pooling"], "mean");
        let a = embed(&p, &request(&["Die", "Erde", "dreht", "sich"], 3)).unwrap();
        let b = embed(&p, &request(&["Die", "Erde", "dreht", "sich"], 3)).unwrap();
        assert_eq!(a, b);
        let c = embed(&p, &request(&["Die", "Erde", "dreht", "sich", "schnell"], 3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn wrong_dimension_is_protocol_error() {
        let endpoint = serve(4, 3);
        let p = RemoteProvider::connect(&endpoint, Some("first"), Some(-2)).unwrap();
        assert!(matches!(embed(&p, &request(&["sich"], 0)), Err(Error::Protocol(_))));
    }

    #[test]
    fn unreachable_service_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = RemoteProvider::connect(&format!("http://127.0.0.1:{port}"), None, None).unwrap_err();
        assert!(matches!(err, Error::Transport(_)), "{err}");
        assert!(err.is_environmental());
    }
}
