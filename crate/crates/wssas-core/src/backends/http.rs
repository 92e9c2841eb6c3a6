//! OpenAI-compatible HTTP backend.
//!
//! Speaks the `/chat/completions` and `/embeddings` JSON wire format against
//! a configurable base URL. Prompts are rendered from editable text
//! templates (see `assets/prompts/`); placeholders are `{{inputs}}` (all
//! inputs, numbered), `{{input:N}}` (1-based single input) and
//! `{{param:name}}`.
//!
//! Retries: transport errors, HTTP 429 and 5xx are retried with exponential
//! backoff up to `max_retries`, then surface as [`BackendError::Transport`]
//! carrying the attempt count. Any other status is fatal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendError, EmbeddingBackend, EmbeddingVector, GenerationRequest, GenerativeBackend,
    TemplateId, API_KEY_ENV,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub gen_model: String,
    pub embed_model: String,
    /// Expected embedding dimension; a remote response with a different
    /// dimension is a fatal configuration error.
    pub dimension: usize,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_max_inflight() -> usize {
    4
}

fn default_max_retries() -> u32 {
    3
}

fn default_timeout_secs() -> u64 {
    60
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    templates: BTreeMap<TemplateId, String>,
    backoff_base: Duration,
}

fn builtin_templates() -> BTreeMap<TemplateId, String> {
    let mut t = BTreeMap::new();
    t.insert(
        TemplateId::Summarize,
        include_str!("../../assets/prompts/summarize.txt").to_owned(),
    );
    t.insert(
        TemplateId::GenQuestions,
        include_str!("../../assets/prompts/gen_questions.txt").to_owned(),
    );
    t.insert(
        TemplateId::ExtractAnswer,
        include_str!("../../assets/prompts/extract_answer.txt").to_owned(),
    );
    t.insert(
        TemplateId::Judge,
        include_str!("../../assets/prompts/judge.txt").to_owned(),
    );
    t.insert(
        TemplateId::Geval,
        include_str!("../../assets/prompts/geval.txt").to_owned(),
    );
    t.insert(
        TemplateId::Topics,
        include_str!("../../assets/prompts/topics.txt").to_owned(),
    );
    t.insert(
        TemplateId::Title,
        include_str!("../../assets/prompts/title.txt").to_owned(),
    );
    t
}

/// Render a prompt template against a request.
pub fn render_template(template: &str, request: &GenerationRequest) -> String {
    let mut numbered = String::new();
    for (i, input) in request.inputs.iter().enumerate() {
        let _ = writeln!(numbered, "{}. {}", i + 1, input);
    }
    let mut out = template.replace("{{inputs}}", numbered.trim_end());
    for (i, input) in request.inputs.iter().enumerate() {
        out = out.replace(&format!("{{{{input:{}}}}}", i + 1), input);
    }
    // Unfilled single-input slots render empty (e.g. optional context).
    for i in request.inputs.len()..request.inputs.len() + 8 {
        out = out.replace(&format!("{{{{input:{}}}}}", i + 1), "");
    }
    for (name, value) in &request.params {
        let rendered = if value.fract() == 0.0 {
            format!("{}", *value as i64)
        } else {
            format!("{value}")
        };
        out = out.replace(&format!("{{{{param:{name}}}}}"), &rendered);
    }
    out
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl HttpBackend {
    /// Build a backend from config, reading the credential from
    /// `WSSAS_API_KEY` when set.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        if config.base_url.is_empty() {
            return Err(BackendError::Config("backend.base_url is empty".into()));
        }
        if config.dimension == 0 {
            return Err(BackendError::Config("backend.dimension must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            api_key: std::env::var(API_KEY_ENV).ok(),
            templates: builtin_templates(),
            backoff_base: Duration::from_millis(100),
            config,
        })
    }

    /// Replace the built-in prompt for one template (e.g. loaded from a
    /// user-edited asset file).
    pub fn set_template(&mut self, id: TemplateId, text: String) {
        self.templates.insert(id, text);
    }

    #[cfg(test)]
    fn set_backoff_base(&mut self, base: Duration) {
        self.backoff_base = base;
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// POST with retry on 429/5xx/transport errors; exponential backoff.
    fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        let url = self.endpoint(path);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let outcome = req.send();
            let retryable_message = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<R>()
                            .map_err(|e| BackendError::Config(format!("malformed response: {e}")));
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    if !retryable {
                        return Err(BackendError::Config(format!(
                            "HTTP {status} from {url}"
                        )));
                    }
                    format!("HTTP {status}")
                }
                Err(e) => e.to_string(),
            };
            if attempts > self.config.max_retries {
                return Err(BackendError::Transport {
                    attempts,
                    message: retryable_message,
                });
            }
            thread::sleep(self.backoff_base * 2u32.saturating_pow(attempts - 1));
        }
    }
}

impl GenerativeBackend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let template = self
            .templates
            .get(&request.template_id)
            .ok_or_else(|| BackendError::UnknownTemplate(request.template_id.as_str().into()))?;
        let prompt = render_template(template, request);
        let body = ChatRequest {
            model: &self.config.gen_model,
            messages: vec![ChatMessage {
                role: "user",
                content: &prompt,
            }],
            temperature: 0.0,
            seed: Some(request.seed),
        };
        let resp: ChatResponse = self.post_json("chat/completions", &body)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Config("response carried no choices".into()))
    }

    /// Fan requests out over up to `max_inflight` worker threads; results
    /// are re-assembled in request order so callers see a deterministic
    /// sequence.
    fn generate_batch(&self, requests: &[GenerationRequest]) -> Result<Vec<String>, BackendError> {
        let workers = self.config.max_inflight.max(1).min(requests.len().max(1));
        if workers <= 1 || requests.len() <= 1 {
            return requests.iter().map(|r| self.generate(r)).collect();
        }
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<String, BackendError>>>> =
            requests.iter().map(|_| std::sync::Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.generate(&requests[i]);
                    *slots[i].lock().expect("result slot poisoned") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .expect("result slot poisoned")
                    .expect("every request index was visited")
            })
            .collect()
    }
}

impl EmbeddingBackend for HttpBackend {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let body = EmbeddingRequest {
            model: &self.config.embed_model,
            input: texts,
        };
        let resp: EmbeddingResponse = self.post_json("embeddings", &body)?;
        if resp.data.len() != texts.len() {
            return Err(BackendError::Config(format!(
                "requested {} embeddings, got {}",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut data = resp.data;
        data.sort_by_key(|d| d.index);
        data.into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dimension {
                    return Err(BackendError::DimensionMismatch {
                        expected: self.config.dimension,
                        actual: d.embedding.len(),
                    });
                }
                Ok(EmbeddingVector(d.embedding))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn render_fills_inputs_and_params() {
        let req = GenerationRequest::new(
            TemplateId::GenQuestions,
            vec!["first".to_owned(), "second".to_owned()],
        )
        .with_param("n", 5.0);
        let out = render_template("ask {{param:n}} about:\n{{inputs}}\n[{{input:1}}]", &req);
        assert!(out.contains("ask 5 about:"));
        assert!(out.contains("1. first\n2. second"));
        assert!(out.contains("[first]"));
    }

    #[test]
    fn render_clears_missing_optional_inputs() {
        let req = GenerationRequest::new(TemplateId::Topics, vec!["only".to_owned()]);
        let out = render_template("a={{input:1}} b={{input:2}}", &req);
        assert_eq!(out, "a=only b=");
    }

    /// Single-use HTTP/1.1 server answering each connection with the next
    /// canned (status, body) pair.
    fn serve_responses(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind test listener");
        let addr = listener.local_addr().expect("listener addr");
        let handle = thread::spawn(move || {
            let mut served = 0;
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().expect("accept");
                let mut buf = [0u8; 8192];
                let mut request = Vec::new();
                loop {
                    let n = stream.read(&mut buf).expect("read request");
                    request.extend_from_slice(&buf[..n]);
                    if n == 0 || request.windows(4).any(|w| w == b"\r\n\r\n") {
                        break;
                    }
                }
                // Drain the request body if Content-Length demands it.
                let text = String::from_utf8_lossy(&request).into_owned();
                if let Some(len) = text
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::trim).map(str::to_owned))
                    .and_then(|v| v.parse::<usize>().ok())
                {
                    let header_end = request
                        .windows(4)
                        .position(|w| w == b"\r\n\r\n")
                        .map(|p| p + 4)
                        .unwrap_or(request.len());
                    let mut have = request.len() - header_end;
                    while have < len {
                        let n = stream.read(&mut buf).expect("read body");
                        if n == 0 {
                            break;
                        }
                        have += n;
                    }
                }
                let reason = if status == 200 { "OK" } else { "ERR" };
                let resp = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).expect("write response");
                served += 1;
            }
            served
        });
        (format!("http://{addr}"), handle)
    }

    fn test_config(base_url: String) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url,
            gen_model: "test-gen".to_owned(),
            embed_model: "test-embed".to_owned(),
            dimension: 3,
            max_inflight: 1,
            max_retries: 2,
            timeout_secs: 5,
        }
    }

    #[test]
    fn generate_retries_transient_errors_then_succeeds() {
        let ok = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "hello"}}]
        })
        .to_string();
        let (url, handle) =
            serve_responses(vec![(500, "{}".to_owned()), (429, "{}".to_owned()), (200, ok)]);
        let mut backend = HttpBackend::new(test_config(url)).unwrap();
        backend.set_backoff_base(Duration::from_millis(1));
        let out = backend
            .generate(&GenerationRequest::new(TemplateId::Title, vec!["t".to_owned()]))
            .unwrap();
        assert_eq!(out, "hello");
        assert_eq!(handle.join().unwrap(), 3);
    }

    #[test]
    fn generate_exhausts_retries_with_attempt_count() {
        let responses = vec![(500, "{}".to_owned()); 3];
        let (url, _handle) = serve_responses(responses);
        let mut config = test_config(url);
        config.max_retries = 2;
        let mut backend = HttpBackend::new(config).unwrap();
        backend.set_backoff_base(Duration::from_millis(1));
        let err = backend
            .generate(&GenerationRequest::new(TemplateId::Title, vec!["t".to_owned()]))
            .unwrap_err();
        match err {
            BackendError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn embedding_dimension_mismatch_is_fatal() {
        let body = serde_json::json!({
            "data": [{"index": 0, "embedding": [1.0, 2.0]}]
        })
        .to_string();
        let (url, _handle) = serve_responses(vec![(200, body)]);
        let backend = HttpBackend::new(test_config(url)).unwrap();
        let err = backend.embed(&["x".to_owned()]).unwrap_err();
        assert!(matches!(err, BackendError::DimensionMismatch { expected: 3, actual: 2 }));
    }

    #[test]
    fn embeddings_reorder_by_index() {
        let body = serde_json::json!({
            "data": [
                {"index": 1, "embedding": [0.0, 1.0, 0.0]},
                {"index": 0, "embedding": [1.0, 0.0, 0.0]}
            ]
        })
        .to_string();
        let (url, _handle) = serve_responses(vec![(200, body)]);
        let backend = HttpBackend::new(test_config(url)).unwrap();
        let out = backend.embed(&["a".to_owned(), "b".to_owned()]).unwrap();
        assert_eq!(out[0].0, vec![1.0, 0.0, 0.0]);
        assert_eq!(out[1].0, vec![0.0, 1.0, 0.0]);
    }
}
