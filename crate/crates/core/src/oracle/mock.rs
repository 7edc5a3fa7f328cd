//! Offline stand-ins for a chat model: a keyword responder that understands the default
//! prompt templates, and a tiny HTTP server that speaks the chat-completions protocol.
//!
//! The responder treats descriptors of the form `Mentions 'w'` / `Does not mention 'w'` as
//! word tests. Mining answers with the word whose presence best separates the groups;
//! zero-shot proposal answers with the most frequent words.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

use super::transport::{ChatRequest, ChatTransport};
use super::OracleError;

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 3 && !w.chars().all(|c| c.is_ascii_digit()))
        .map(str::to_lowercase)
        .collect()
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

/// Evaluates a keyword descriptor against item text; unknown descriptors never apply.
pub fn keyword_applies(descriptor: &str, text: &str) -> bool {
    let ws = words(text);
    if let Some(w) = between(descriptor, "Does not mention '", "'") {
        return !ws.contains(&w.to_lowercase());
    }
    if let Some(w) = between(descriptor, "Mentions '", "'") {
        return ws.contains(&w.to_lowercase());
    }
    false
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordResponder;

impl KeywordResponder {
    /// Reply text for a prompt built from the default templates.
    pub fn respond(&self, prompt: &str) -> String {
        if let Some(reply) = self.try_respond(prompt) {
            return reply;
        }
        "I could not understand the request.".into()
    }

    fn try_respond(&self, prompt: &str) -> Option<String> {
        if prompt.starts_with("For  item '") {
            let item = between(prompt, "For  item '", "' first describe")?;
            let feature = between(prompt, "Then consider this feature:\n\n'", "'\n\nFinally")?;
            let bit = u8::from(keyword_applies(feature, item));
            return Some(format!("The item is {item}.\n{{\"applies\": [{bit}]}}"));
        }
        if prompt.starts_with("For item list '") {
            let list = between(prompt, "For item list '", "' first describe")?;
            let feature = between(prompt, "Then consider this feature:\n\n'", "'\n\nFinally")?;
            let entries: Vec<String> = serde_json::from_str(list).ok()?;
            let matched: Vec<usize> = entries
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    let text = e.split_once(". ").map_or(e.as_str(), |(_, t)| t);
                    keyword_applies(feature, text)
                })
                .map(|(k, _)| k + 1)
                .collect();
            return Some(json!({ "matched_items": matched }).to_string());
        }
        if prompt.starts_with("Consider the two groups") {
            let pos: Vec<String> = serde_json::from_str(between(prompt, "Positive:\n'", "'\n\nNegative")?).ok()?;
            let neg: Vec<String> =
                serde_json::from_str(between(prompt, "Negative:\n'", "'\n\nWhat characteristic")?).ok()?;
            return Some(format!(
                "Comparing both groups.\n{}",
                json!({ "characteristic": separating_word(&pos, &neg) })
            ));
        }
        if prompt.contains("yes/no characteristics") {
            let items: Vec<String> = serde_json::from_str(between(prompt, "Items:\n'", "'\n\nPropose")?).ok()?;
            let n: usize = between(prompt, "Propose about ", " yes/no")?.parse().ok()?;
            return Some(json!({ "characteristics": frequent_words(&items, n) }).to_string());
        }
        None
    }
}

fn doc_freq(texts: &[String]) -> BTreeMap<String, usize> {
    let mut freq = BTreeMap::new();
    for t in texts {
        for w in words(t) {
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    freq
}

fn separating_word(pos: &[String], neg: &[String]) -> String {
    let fp = doc_freq(pos);
    let fn_ = doc_freq(neg);
    let vocab: BTreeSet<&String> = fp.keys().chain(fn_.keys()).collect();
    // Positive descriptors win ties against negated ones.
    let mut best: Option<(f64, bool, String)> = None;
    for w in vocab {
        let p = *fp.get(w).unwrap_or(&0) as f64 / pos.len().max(1) as f64;
        let n = *fn_.get(w).unwrap_or(&0) as f64 / neg.len().max(1) as f64;
        for (score, positive, text) in [
            (p - n, true, format!("Mentions '{w}'")),
            (n - p, false, format!("Does not mention '{w}'")),
        ] {
            if best
                .as_ref()
                .is_none_or(|(s, bp, _)| score > *s || (score == *s && positive && !bp))
            {
                best = Some((score, positive, text));
            }
        }
    }
    best.map_or_else(|| "Mentions 'nothing'".into(), |(_, _, t)| t)
}

fn frequent_words(items: &[String], n: usize) -> Vec<String> {
    let mut ranked: Vec<(String, usize)> = doc_freq(items).into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .filter(|(_, c)| *c < items.len())
        .take(n)
        .map(|(w, _)| format!("Mentions '{w}'"))
        .collect()
}

impl ChatTransport for KeywordResponder {
    fn complete(&self, request: &ChatRequest) -> Result<String, OracleError> {
        Ok(self.respond(&request.prompt))
    }
}

/// Local chat-completions endpoint backed by [`KeywordResponder`]. The first
/// `fail_first` requests receive HTTP 503.
pub struct MockChatServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockChatServer {
    pub fn start(fail_first: usize) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicUsize::new(0));
        let (stop2, served2) = (stop.clone(), served.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let n = served2.fetch_add(1, Ordering::SeqCst);
                std::thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, n < fail_first) {
                        log::debug!("mock server connection error: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            served,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests_served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

impl Drop for MockChatServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(stream: TcpStream, fail: bool) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((k, v)) = header.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let (status, payload) = if fail {
        ("503 Service Unavailable", json!({"error": "overloaded"}))
    } else {
        let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        match request["messages"][0]["content"].as_str() {
            Some(prompt) => (
                "200 OK",
                json!({
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": KeywordResponder.respond(prompt)}
                    }]
                }),
            ),
            None => ("400 Bad Request", json!({"error": "missing messages"})),
        }
    };
    let text = payload.to_string();
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SemanticItem;
    use crate::oracle::{
        FeatureDescriptor, HttpTransport, LlmOracle, LlmOracleConfig, MiningRequest, Oracle,
        PromptTemplates,
    };
    use std::time::Duration;

    fn items(texts: &[&str]) -> Vec<SemanticItem> {
        texts
            .iter()
            .enumerate()
            .map(|(k, t)| SemanticItem::new(format!("{t}-{k}"), *t))
            .collect()
    }

    #[test]
    fn keyword_descriptors() {
        assert!(keyword_applies("Mentions 'pool'", "Big house with a Pool."));
        assert!(!keyword_applies("Does not mention 'pool'", "pool"));
        assert!(!keyword_applies("something else", "pool"));
    }

    #[test]
    fn mining_picks_the_separating_word() {
        let pos = ["red car", "red boat", "red hat"].map(String::from);
        let neg = ["blue car", "green boat"].map(String::from);
        assert_eq!(separating_word(&pos, &neg), "Mentions 'red'");
        assert_eq!(separating_word(&neg, &pos), "Does not mention 'red'");
    }

    #[test]
    fn responder_drives_llm_oracle_offline() {
        let o = LlmOracle::new(KeywordResponder, PromptTemplates::default(), LlmOracleConfig::default());
        let its = items(&["sunny desert villa", "snowy cabin", "desert ranch"]);
        let d = FeatureDescriptor::new("Mentions 'desert'");
        assert_eq!(o.extract_batch(&its, &d).unwrap(), vec![true, false, true]);
        for it in &its {
            assert_eq!(o.extract(it, &d).unwrap(), keyword_applies(d.text(), &it.text));
        }
        let req = MiningRequest::new(vec![its[0].clone(), its[2].clone()], vec![its[1].clone()]).unwrap();
        assert_eq!(o.mine(&req).unwrap(), d);
        let proposals = o.propose_zero_shot(&its, "price", 2).unwrap();
        assert_eq!(proposals, vec![FeatureDescriptor::new("Mentions 'desert'"), FeatureDescriptor::new("Mentions 'cabin'")]);
    }

    #[test]
    fn http_round_trip_with_retry() {
        let server = MockChatServer::start(1).unwrap();
        let transport = HttpTransport::new(server.base_url(), Some("k".into()), Duration::from_secs(10)).unwrap();
        let config = LlmOracleConfig {
            backoff_ms: 1,
            ..Default::default()
        };
        let o = LlmOracle::new(transport, PromptTemplates::default(), config);
        let its = items(&["old stone house", "new glass house"]);
        let bits = o.extract_batch(&its, &FeatureDescriptor::new("Mentions 'stone'")).unwrap();
        assert_eq!(bits, vec![true, false]);
        assert_eq!(server.requests_served(), 2);
    }
}
