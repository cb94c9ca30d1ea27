use dxassist_core::prompting::ChatMessage;
use serde_json::json;
use sha2::{Digest, Sha256};

// serde_json's `Value` keeps object keys sorted, so serializing one gives a
// canonical byte string.
fn digest(v: serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Content hash of a chat request. Depends only on the messages, model and
/// temperature — never on timing or retries.
pub fn chat_fingerprint(messages: &[ChatMessage], model: &str, temperature: f64) -> String {
    digest(json!({
        "messages": messages,
        "model": model,
        "temperature": temperature,
    }))
}

pub fn embedding_fingerprint(texts: &[String], model: &str) -> String {
    digest(json!({
        "kind": "embedding",
        "input": texts,
        "model": model,
    }))
}
