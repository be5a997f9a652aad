//! HTTP adapters for hosted model APIs.
//!
//! API keys are read from environment variables at call time
//! (`OPENAI_API_KEY` and `ANTHROPIC_API_KEY` unless overridden).

use std::collections::BTreeMap;
use std::env;
use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};

const OPENAI_URL: &str = "https://api.openai.com/v1";
const ANTHROPIC_URL: &str = "https://api.anthropic.com";
const ANTHROPIC_VERSION: &str = "2023-06-01";

fn client() -> &'static reqwest::blocking::Client {
    static CLIENT: OnceLock<reqwest::blocking::Client> = OnceLock::new();
    CLIENT.get_or_init(|| {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .expect("http client builds")
    })
}

fn api_key(var: &str) -> Result<String, ProviderError> {
    env::var(var).map_err(|_| ProviderError::Auth(format!("environment variable {var} is not set")))
}

fn post_json(
    url: &str,
    headers: &[(&str, String)],
    body: &Value,
) -> Result<Value, ProviderError> {
    let mut request = client().post(url).json(body);
    for (name, value) in headers {
        request = request.header(*name, value);
    }
    let response = request
        .send()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .text()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string())),
        401 | 403 => Err(ProviderError::Auth(text)),
        _ => Err(ProviderError::Vendor {
            status,
            payload: text,
        }),
    }
}

fn merge_options(body: &mut Value, options: &BTreeMap<String, Value>) {
    if let Value::Object(map) = body {
        for (k, v) in options {
            map.insert(k.clone(), v.clone());
        }
    }
}

pub struct OpenAiChat {
    model: String,
    base_url: String,
    key_env: String,
    options: BTreeMap<String, Value>,
}

impl OpenAiChat {
    pub fn new(
        model: String,
        base_url: Option<String>,
        key_env: Option<String>,
        options: BTreeMap<String, Value>,
    ) -> Self {
        Self {
            model,
            base_url: base_url.unwrap_or_else(|| OPENAI_URL.into()),
            key_env: key_env.unwrap_or_else(|| "OPENAI_API_KEY".into()),
            options,
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_completion_tokens": request.max_tokens,
        });
        merge_options(&mut body, &self.options);
        merge_options(&mut body, &request.options);
        body
    }
}

pub fn parse_openai_chat(body: &Value) -> Result<String, ProviderError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Malformed(format!("no choices[0].message.content in {body}")))
}

impl ChatProvider for OpenAiChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = api_key(&self.key_env)?;
        let body = post_json(
            &format!("{}/chat/completions", self.base_url.trim_end_matches('/')),
            &[("authorization", format!("Bearer {key}"))],
            &self.request_body(request),
        )?;
        parse_openai_chat(&body)
    }
}

pub struct AnthropicChat {
    model: String,
    base_url: String,
    key_env: String,
    options: BTreeMap<String, Value>,
}

impl AnthropicChat {
    pub fn new(
        model: String,
        base_url: Option<String>,
        key_env: Option<String>,
        options: BTreeMap<String, Value>,
    ) -> Self {
        Self {
            model,
            base_url: base_url.unwrap_or_else(|| ANTHROPIC_URL.into()),
            key_env: key_env.unwrap_or_else(|| "ANTHROPIC_API_KEY".into()),
            options,
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature.min(1.0),
            "messages": [{"role": "user", "content": request.prompt}],
        });
        merge_options(&mut body, &self.options);
        merge_options(&mut body, &request.options);
        body
    }
}

pub fn parse_anthropic(body: &Value) -> Result<String, ProviderError> {
    let blocks = body
        .get("content")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Malformed(format!("no content array in {body}")))?;
    let text: String = blocks
        .iter()
        .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
        .filter_map(|b| b.get("text").and_then(Value::as_str))
        .collect();
    Ok(text)
}

impl ChatProvider for AnthropicChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = api_key(&self.key_env)?;
        let body = post_json(
            &format!("{}/v1/messages", self.base_url.trim_end_matches('/')),
            &[
                ("x-api-key", key),
                ("anthropic-version", ANTHROPIC_VERSION.to_string()),
            ],
            &self.request_body(request),
        )?;
        parse_anthropic(&body)
    }
}

pub struct OpenAiEmbedding {
    model: String,
    base_url: String,
    key_env: String,
}

impl OpenAiEmbedding {
    pub fn new(model: String, base_url: Option<String>, key_env: Option<String>) -> Self {
        Self {
            model,
            base_url: base_url.unwrap_or_else(|| OPENAI_URL.into()),
            key_env: key_env.unwrap_or_else(|| "OPENAI_API_KEY".into()),
        }
    }
}

pub fn parse_openai_embedding(body: &Value) -> Result<Vec<f64>, ProviderError> {
    body.pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
        .ok_or_else(|| ProviderError::Malformed("no data[0].embedding array".into()))
}

impl EmbeddingProvider for OpenAiEmbedding {
    fn embed(&self, _: &str, text: &str) -> Result<Vec<f64>, ProviderError> {
        let key = api_key(&self.key_env)?;
        let body = post_json(
            &format!("{}/embeddings", self.base_url.trim_end_matches('/')),
            &[("authorization", format!("Bearer {key}"))],
            &json!({"model": self.model, "input": text}),
        )?;
        parse_openai_embedding(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    fn request() -> ChatRequest {
        ChatRequest {
            model: "gpt-4.1".into(),
            temperature: 0.5,
            max_tokens: 16384,
            prompt: "improve this".into(),
            options: [("reasoning_effort".to_string(), json!("high"))].into(),
        }
    }

    #[test]
    fn openai_body_passes_options_through() {
        let p = OpenAiChat::new("gpt-4.1".into(), None, None, [("seed".to_string(), json!(1))].into());
        let body = p.request_body(&request());
        assert_eq!(body["messages"][0]["content"], "improve this");
        assert_eq!(body["max_completion_tokens"], 16384);
        assert_eq!(body["reasoning_effort"], "high");
        assert_eq!(body["seed"], 1);
    }

    #[test]
    fn anthropic_body_and_parse() {
        let p = AnthropicChat::new("claude".into(), None, None, BTreeMap::new());
        let mut r = request();
        r.temperature = 1.5;
        assert_eq!(p.request_body(&r)["temperature"], 1.0);
        let reply = json!({"content": [{"type": "text", "text": "a"}, {"type": "tool_use"}, {"type": "text", "text": "b"}]});
        assert_eq!(parse_anthropic(&reply).unwrap(), "ab");
        assert!(parse_anthropic(&json!({})).is_err());
    }

    #[test]
    fn embedding_parse() {
        let body = json!({"data": [{"embedding": [0.5, -1.0]}]});
        assert_eq!(parse_openai_embedding(&body).unwrap(), vec![0.5, -1.0]);
        assert!(parse_openai_embedding(&json!({"data": []})).is_err());
    }

    /// Serves one canned HTTP response and returns the raw request it received.
    fn one_shot_server(status: &str, body: &str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let reply = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            stream.write_all(reply.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (addr, handle)
    }

    #[test]
    fn openai_round_trip_over_http() {
        let (url, server) = one_shot_server(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"patched"}}]}"#,
        );
        std::env::set_var("SHINKA_TEST_KEY_OK", "sk-test");
        let p = OpenAiChat::new("gpt-4.1".into(), Some(url), Some("SHINKA_TEST_KEY_OK".into()), BTreeMap::new());
        assert_eq!(p.complete(&request()).unwrap(), "patched");
        let seen = server.join().unwrap();
        assert!(seen.starts_with("POST /chat/completions"));
        assert!(seen.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(seen.contains("\"improve this\""));
    }

    #[test]
    fn auth_failures_are_not_retryable() {
        let (url, server) = one_shot_server("401 Unauthorized", r#"{"error":"bad key"}"#);
        std::env::set_var("SHINKA_TEST_KEY_BAD", "sk-bad");
        let p = OpenAiChat::new("m".into(), Some(url), Some("SHINKA_TEST_KEY_BAD".into()), BTreeMap::new());
        let err = p.complete(&request()).unwrap_err();
        server.join().unwrap();
        assert!(matches!(err, ProviderError::Auth(ref s) if s.contains("bad key")));
        assert!(!err.is_retryable());
        let missing = OpenAiChat::new("m".into(), None, Some("SHINKA_TEST_KEY_UNSET".into()), BTreeMap::new());
        assert!(matches!(missing.complete(&request()), Err(ProviderError::Auth(_))));
    }
}
