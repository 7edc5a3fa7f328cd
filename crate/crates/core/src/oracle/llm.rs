//! Oracle backed by a chat-completion model.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::SemanticItem;

use super::prompt::PromptTemplates;
use super::transport::{request_hash, ChatRequest, ChatTransport};
use super::{dedup_descriptors, FeatureDescriptor, MiningRequest, Oracle, OracleError};

const REFORMAT_REMINDER: &str = "\n\nYour previous reply could not be used. \
Answer again and finish with exactly one JSON object in the requested format.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmOracleConfig {
    /// Model name used for extraction prompts.
    pub extract_model: String,
    /// Model name used for mining and zero-shot prompts.
    pub mine_model: String,
    pub temperature: f64,
    pub chunk_size: usize,
    pub max_in_flight: usize,
    pub max_attempts: usize,
    pub backoff_ms: u64,
}

impl Default for LlmOracleConfig {
    fn default() -> Self {
        Self {
            extract_model: "fast".into(),
            mine_model: "strong".into(),
            temperature: 0.0,
            chunk_size: 64,
            max_in_flight: 4,
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

/// Counting semaphore bounding concurrent transport calls.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn run<R>(&self, f: impl FnOnce() -> R) -> R {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        drop(free);
        let out = f();
        *self.free.lock().expect("gate poisoned") += 1;
        self.cv.notify_one();
        out
    }
}

pub struct LlmOracle<T> {
    transport: T,
    templates: PromptTemplates,
    config: LlmOracleConfig,
    cache: Mutex<HashMap<String, String>>,
    gate: Gate,
    mining: Mutex<()>,
}

impl<T: ChatTransport> LlmOracle<T> {
    pub fn new(transport: T, templates: PromptTemplates, config: LlmOracleConfig) -> Self {
        let gate = Gate::new(config.max_in_flight);
        Self {
            transport,
            templates,
            config,
            cache: Mutex::new(HashMap::new()),
            gate,
            mining: Mutex::new(()),
        }
    }

    pub fn config(&self) -> &LlmOracleConfig {
        &self.config
    }

    pub fn cached_responses(&self) -> usize {
        self.cache.lock().expect("cache poisoned").len()
    }

    /// Raw completion with caching and retries on retriable errors.
    fn send(&self, model: &str, prompt: &str) -> Result<String, OracleError> {
        let key = request_hash(model, prompt);
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let request = ChatRequest {
            model: model.to_string(),
            prompt: prompt.to_string(),
            temperature: self.config.temperature,
        };
        let attempts = self.config.max_attempts.max(1);
        let mut attempt = 0;
        let response = loop {
            match self.gate.run(|| self.transport.complete(&request)) {
                Ok(text) => break text,
                Err(e) if e.is_retriable() && attempt + 1 < attempts => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << attempt);
                    log::warn!("oracle call failed ({e}); retrying in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(key, response.clone());
        Ok(response)
    }

    /// Sends `prompt` and parses the reply; an unusable reply earns one reformat reminder.
    fn ask<R>(&self, model: &str, prompt: &str, parse: impl Fn(&str) -> Result<R, OracleError>) -> Result<R, OracleError> {
        match parse(&self.send(model, prompt)?) {
            Ok(r) => Ok(r),
            Err(OracleError::Malformed(first)) => {
                log::warn!("unusable oracle reply ({first}); sending reformat reminder");
                let retry = format!("{prompt}{REFORMAT_REMINDER}");
                parse(&self.send(model, &retry)?)
            }
            Err(e) => Err(e),
        }
    }

    fn extract_chunk(&self, items: &[SemanticItem], descriptor: &FeatureDescriptor) -> Result<Vec<bool>, OracleError> {
        let prompt = self.templates.extract_batch(items, descriptor.text())?;
        let matched = self.ask(&self.config.extract_model, &prompt, |text| {
            parse_matched_items(text, items.len())
        })?;
        let mut bits = vec![false; items.len()];
        for k in matched {
            bits[k - 1] = true;
        }
        Ok(bits)
    }
}

impl<T: ChatTransport> Oracle for LlmOracle<T> {
    fn name(&self) -> &'static str {
        "llm"
    }

    fn extract(&self, item: &SemanticItem, descriptor: &FeatureDescriptor) -> Result<bool, OracleError> {
        let prompt = self.templates.extract_single(item, descriptor.text())?;
        self.ask(&self.config.extract_model, &prompt, parse_applies)
    }

    fn extract_batch(
        &self,
        items: &[SemanticItem],
        descriptor: &FeatureDescriptor,
    ) -> Result<Vec<bool>, OracleError> {
        if items.is_empty() {
            return Err(OracleError::InvalidRequest("empty batch".into()));
        }
        let chunks: Vec<&[SemanticItem]> = items.chunks(self.config.chunk_size.max(1)).collect();
        let parts: Vec<Vec<bool>> = chunks
            .par_iter()
            .map(|chunk| self.extract_chunk(chunk, descriptor))
            .collect::<Result<_, _>>()?;
        Ok(parts.concat())
    }

    fn mine(&self, request: &MiningRequest) -> Result<FeatureDescriptor, OracleError> {
        let _serial = self.mining.lock().expect("mining lock poisoned");
        let prompt = self.templates.mine(&request.positives, &request.negatives)?;
        self.ask(&self.config.mine_model, &prompt, parse_characteristic)
    }

    fn propose_zero_shot(
        &self,
        items: &[SemanticItem],
        task_description: &str,
        n: usize,
    ) -> Result<Vec<FeatureDescriptor>, OracleError> {
        let prompt = self.templates.zero_shot(items, task_description, n)?;
        let list = self.ask(&self.config.mine_model, &prompt, parse_characteristics)?;
        Ok(dedup_descriptors(list))
    }
}

/// The last complete JSON object embedded in free text (models reason before answering).
pub fn parse_json_object(text: &str) -> Result<Value, OracleError> {
    let mut found = None;
    let mut pos = 0;
    while let Some(off) = text[pos..].find('{') {
        let start = pos + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => {
                pos = start + stream.byte_offset();
                found = Some(v);
            }
            _ => pos = start + 1,
        }
    }
    found.ok_or_else(|| OracleError::Malformed("no JSON object in reply".into()))
}

fn field<'a>(obj: &'a Value, name: &str) -> Result<&'a Value, OracleError> {
    obj.get(name)
        .ok_or_else(|| OracleError::Malformed(format!("reply lacks `{name}`")))
}

fn as_bit(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_f64()? {
            0.0 => Some(false),
            1.0 => Some(true),
            _ => None,
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "0" | "false" | "no" => Some(false),
            "1" | "true" | "yes" => Some(true),
            _ => None,
        },
        Value::Array(a) if a.len() == 1 => as_bit(&a[0]),
        _ => None,
    }
}

fn parse_applies(text: &str) -> Result<bool, OracleError> {
    let obj = parse_json_object(text)?;
    let v = field(&obj, "applies")?;
    as_bit(v).ok_or_else(|| OracleError::Malformed(format!("`applies` is {v}")))
}

fn as_index(v: &Value) -> Option<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|k| k as usize),
        Value::String(s) => s.trim().trim_end_matches('.').parse().ok(),
        _ => None,
    }
}

/// 1-based item numbers, each checked against the chunk length.
fn parse_matched_items(text: &str, len: usize) -> Result<Vec<usize>, OracleError> {
    let obj = parse_json_object(text)?;
    let indices: Vec<Option<usize>> = match field(&obj, "matched_items")? {
        Value::Array(a) => a.iter().map(as_index).collect(),
        Value::Object(m) => m.keys().map(|k| as_index(&Value::String(k.clone()))).collect(),
        Value::Null => Vec::new(),
        other => return Err(OracleError::Malformed(format!("`matched_items` is {other}"))),
    };
    indices
        .into_iter()
        .map(|k| match k {
            Some(k) if (1..=len).contains(&k) => Ok(k),
            _ => Err(OracleError::Malformed(format!(
                "item number outside 1..={len} in `matched_items`"
            ))),
        })
        .collect()
}

fn parse_characteristic(text: &str) -> Result<FeatureDescriptor, OracleError> {
    let obj = parse_json_object(text)?;
    let joined = match field(&obj, "characteristic")? {
        Value::String(s) => s.trim().to_string(),
        Value::Array(a) => a
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .collect::<Vec<_>>()
            .join("; "),
        other => return Err(OracleError::Malformed(format!("`characteristic` is {other}"))),
    };
    if joined.is_empty() {
        return Err(OracleError::Malformed("empty characteristic".into()));
    }
    Ok(FeatureDescriptor::new(joined))
}

fn parse_characteristics(text: &str) -> Result<Vec<FeatureDescriptor>, OracleError> {
    let obj = parse_json_object(text)?;
    match field(&obj, "characteristics")? {
        Value::Array(a) => Ok(a
            .iter()
            .filter_map(Value::as_str)
            .map(|s| FeatureDescriptor::new(s.trim()))
            .collect()),
        other => Err(OracleError::Malformed(format!("`characteristics` is {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replies from a fixed script, in order, and counts calls.
    struct Scripted {
        replies: Mutex<Vec<Result<String, OracleError>>>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(replies: Vec<Result<&str, OracleError>>) -> Self {
            Self {
                replies: Mutex::new(replies.into_iter().rev().map(|r| r.map(String::from)).collect()),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl ChatTransport for Scripted {
        fn complete(&self, _: &ChatRequest) -> Result<String, OracleError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().pop().unwrap_or(Err(OracleError::Timeout))
        }
    }

    fn oracle(replies: Vec<Result<&str, OracleError>>) -> LlmOracle<Scripted> {
        let config = LlmOracleConfig {
            backoff_ms: 0,
            ..Default::default()
        };
        LlmOracle::new(Scripted::new(replies), PromptTemplates::default(), config)
    }

    fn items(n: usize) -> Vec<SemanticItem> {
        (0..n).map(|k| SemanticItem::new(k.to_string(), format!("item {k}"))).collect()
    }

    #[test]
    fn finds_trailing_json_after_reasoning() {
        let v = parse_json_object("Thinking {about} it... ```json\n{\"applies\": [1]}\n```").unwrap();
        assert_eq!(v["applies"][0], 1);
        assert!(parse_json_object("no braces").is_err());
    }

    #[test]
    fn applies_accepts_common_encodings() {
        for (text, want) in [
            ("{\"applies\": 1}", true),
            ("{\"applies\": [0]}", false),
            ("{\"applies\": \"yes\"}", true),
            ("{\"applies\": false}", false),
        ] {
            assert_eq!(parse_applies(text).unwrap(), want, "{text}");
        }
        assert!(parse_applies("{\"applies\": 3}").is_err());
    }

    #[test]
    fn batch_sets_matched_positions() {
        let o = oracle(vec![Ok("{\"matched_items\": [1, \"3\"]}")]);
        let bits = o.extract_batch(&items(4), &FeatureDescriptor::new("f")).unwrap();
        assert_eq!(bits, vec![true, false, true, false]);
    }

    #[test]
    fn empty_match_list_is_all_zero() {
        let o = oracle(vec![Ok("{\"matched_items\": []}")]);
        let bits = o.extract_batch(&items(3), &FeatureDescriptor::new("f")).unwrap();
        assert_eq!(bits, vec![false; 3]);
    }

    #[test]
    fn out_of_range_index_triggers_reformat_retry() {
        let o = oracle(vec![
            Ok("{\"matched_items\": [7]}"),
            Ok("{\"matched_items\": [2]}"),
        ]);
        let bits = o.extract_batch(&items(2), &FeatureDescriptor::new("f")).unwrap();
        assert_eq!(bits, vec![false, true]);
        assert_eq!(o.transport.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn second_malformed_reply_is_an_error() {
        let o = oracle(vec![Ok("nothing"), Ok("still nothing")]);
        let err = o.mine(&MiningRequest::new(items(1), items(2)[1..].to_vec()).unwrap());
        assert!(matches!(err, Err(OracleError::Malformed(_))));
    }

    #[test]
    fn transport_errors_are_retried_three_times() {
        let o = oracle(vec![
            Err(OracleError::Timeout),
            Err(OracleError::Transport("503".into())),
            Ok("{\"characteristic\": \"red\"}"),
        ]);
        let d = o
            .mine(&MiningRequest::new(items(1), items(2)[1..].to_vec()).unwrap())
            .unwrap();
        assert_eq!(d.text(), "red");

        let o = oracle(vec![Err(OracleError::Timeout); 3]);
        let r = o.extract(&items(1)[0], &FeatureDescriptor::new("f"));
        assert_eq!(r, Err(OracleError::Timeout));
        assert_eq!(o.transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn identical_prompts_hit_the_cache() {
        let o = oracle(vec![Ok("{\"applies\": 1}")]);
        let d = FeatureDescriptor::new("f");
        let it = &items(1)[0];
        assert!(o.extract(it, &d).unwrap());
        assert!(o.extract(it, &d).unwrap());
        assert_eq!(o.transport.calls.load(Ordering::SeqCst), 1);
        assert_eq!(o.cached_responses(), 1);
    }

    #[test]
    fn zero_shot_list_is_deduplicated() {
        let o = oracle(vec![Ok("{\"characteristics\": [\"a\", \"b\", \"a\"]}")]);
        let out = o.propose_zero_shot(&items(2), "predict", 3).unwrap();
        assert_eq!(out, vec![FeatureDescriptor::new("a"), FeatureDescriptor::new("b")]);
    }

    #[test]
    fn chunks_cover_every_item() {
        // 130 items in chunks of 64 -> 3 calls; each chunk matches its first item.
        let o = LlmOracle::new(
            Scripted::new(vec![Ok("{\"matched_items\": [1]}"); 3]),
            PromptTemplates::default(),
            LlmOracleConfig {
                backoff_ms: 0,
                ..Default::default()
            },
        );
        let bits = o.extract_batch(&items(130), &FeatureDescriptor::new("f")).unwrap();
        assert_eq!(bits.len(), 130);
        let on: Vec<usize> = (0..130).filter(|&k| bits[k]).collect();
        assert_eq!(on, vec![0, 64, 128]);
    }
}
