//! In-process chat endpoint for tests and offline dry runs.
//!
//! Replies come from a script queue first, then from a responder closure.
//! Every request is logged in its wire form so tests can grep payloads.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{Map, Value};

use super::endpoint::{request_body, ChatEndpoint, ChatMessage, EndpointError, Role};
use super::prompt::{ANSWER_SYSTEM_PROMPT, QUESTION_PROMPT_PREFIX};

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Content(String),
    /// Fails with this HTTP status.
    Status(u16),
    /// Never answers; only useful under a request timeout.
    Hang,
    /// A 200 whose body lacks a message.
    Malformed,
}

type Responder = Box<dyn Fn(&[ChatMessage]) -> MockReply + Send + Sync>;

pub struct MockEndpoint {
    model: String,
    responder: Responder,
    script: Mutex<VecDeque<MockReply>>,
    latency: Duration,
    probe_status: Option<u16>,
    log: Mutex<Vec<Value>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockEndpoint {
    pub fn new(model: &str, responder: impl Fn(&[ChatMessage]) -> MockReply + Send + Sync + 'static) -> Self {
        MockEndpoint {
            model: model.to_string(),
            responder: Box::new(responder),
            script: Mutex::new(VecDeque::new()),
            latency: Duration::ZERO,
            probe_status: None,
            log: Mutex::new(Vec::new()),
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    /// Answers question prompts with `question` and everything else with `answer`.
    pub fn fixed(model: &str, question: &str, answer: &str) -> Self {
        let (question, answer) = (question.to_string(), answer.to_string());
        Self::new(model, move |messages| {
            if is_question_request(messages) {
                MockReply::Content(question.clone())
            } else {
                MockReply::Content(answer.clone())
            }
        })
    }

    /// The canned backend behind `mock://` base URLs. Questions quote the
    /// start of the chunk, answers restate the question, and anything else
    /// (e.g. a multiple-choice prompt) gets "A".
    pub fn builtin(model: &str) -> Self {
        Self::new(model, |messages| {
            let user = last_user(messages);
            let reply = if is_question_request(messages) {
                let opening: Vec<&str> = user.split_whitespace().take(8).collect();
                format!("What is notable about \"{}\"?", opening.join(" "))
            } else if system_text(messages) == Some(ANSWER_SYSTEM_PROMPT) {
                let question = user.rsplit("\n\n").next().unwrap_or(user).trim();
                if user.contains("\n\n") {
                    format!("Drawing on the passage provided, the answer to \"{question}\" is described there in detail.")
                } else {
                    format!("Without further context, the answer to \"{question}\" is a matter of general knowledge.")
                }
            } else {
                "A".to_string()
            };
            MockReply::Content(reply)
        })
    }

    /// Replies consumed, in order, before the responder is consulted.
    pub fn with_script(self, replies: impl IntoIterator<Item = MockReply>) -> Self {
        self.script.lock().unwrap().extend(replies);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Makes `probe` fail with the given status.
    pub fn with_probe_status(mut self, status: u16) -> Self {
        self.probe_status = Some(status);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    /// Request bodies exactly as an HTTP backend would have received them.
    pub fn request_log(&self) -> Vec<Value> {
        self.log.lock().unwrap().clone()
    }

    fn next_reply(&self, messages: &[ChatMessage]) -> MockReply {
        let scripted = self.script.lock().unwrap().pop_front();
        scripted.unwrap_or_else(|| (self.responder)(messages))
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl ChatEndpoint for MockEndpoint {
    fn model_name(&self) -> &str {
        &self.model
    }

    async fn probe(&self) -> Result<(), EndpointError> {
        match self.probe_status {
            Some(status) => Err(EndpointError::Status {
                status,
                body: "mock probe failure".into(),
            }),
            None => Ok(()),
        }
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.log.lock().unwrap().push(request_body(&self.model, messages, &Map::new()));

        let reply = self.next_reply(messages);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        match reply {
            MockReply::Content(text) => Ok(text),
            MockReply::Status(status) => Err(EndpointError::Status {
                status,
                body: "mock failure".into(),
            }),
            MockReply::Hang => {
                std::future::pending::<()>().await;
                unreachable!()
            }
            MockReply::Malformed => Err(EndpointError::Malformed("mock body without choices".into())),
        }
    }
}

fn system_text(messages: &[ChatMessage]) -> Option<&str> {
    messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str())
}

fn last_user(messages: &[ChatMessage]) -> &str {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

/// True for requests rendered by the question template.
pub fn is_question_request(messages: &[ChatMessage]) -> bool {
    system_text(messages).is_some_and(|s| s.starts_with(QUESTION_PROMPT_PREFIX))
}
