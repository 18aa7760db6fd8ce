//! A local stand-in for an OpenAI-style chat completion endpoint. Replies
//! "Yes" when the generated caption ends in an even number, "No" otherwise,
//! and records every prompt it receives.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

/// The two prompts exactly as published, with the captions spliced in.
pub fn expected_prompt(variant: u8, ground_truth: &str, generated: &str) -> String {
    let head = format!(
        "There is one remote sensing image caption1 \u{2018}{ground_truth}\u{2019}, and there is another remote sensing image caption2 \u{2018}{generated}\u{2019}. "
    );
    let question = match variant {
        1 => "Does remote sensing image caption2 cover all the objects and visual relations shown in remote sensing image caption1?",
        2 => "Based on remote sensing image caption1 and your understanding, do you think remote sensing image caption2 can be used as another caption?",
        _ => unreachable!(),
    };
    format!("{head}{question} Only answer yes or no without any explanation.")
}

#[derive(Clone, Default)]
pub struct Seen {
    pub prompts: Arc<Mutex<Vec<String>>>,
    pub bodies: Arc<Mutex<Vec<Value>>>,
}

async fn complete(State(seen): State<Seen>, Json(body): Json<Value>) -> Json<Value> {
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default().to_string();
    let last_digit = prompt
        .split('\u{2019}')
        .nth(1)
        .and_then(|s| s.chars().rev().find(char::is_ascii_digit))
        .and_then(|c| c.to_digit(10))
        .unwrap_or(1);
    let answer = if last_digit % 2 == 0 { "Yes" } else { "No." };
    seen.prompts.lock().unwrap().push(prompt);
    seen.bodies.lock().unwrap().push(body);
    Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": answer}}]}))
}

pub struct Stub {
    pub addr: SocketAddr,
    pub seen: Seen,
    shutdown: tokio::sync::oneshot::Sender<()>,
    handle: tokio::task::JoinHandle<()>,
}

impl Stub {
    pub async fn start() -> Stub {
        let seen = Seen::default();
        let app = Router::new().route("/v1/chat/completions", post(complete)).with_state(seen.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let handle = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
        Stub { addr, seen, shutdown: tx, handle }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub async fn stop(self) {
        let _ = self.shutdown.send(());
        self.handle.await.unwrap();
    }
}
