use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::plan::{outline_index_of_transition, serialize_head, PlanDocument, TraceDocument};
use crate::scheduler::{PlanChunks, ProducerError, StepKind, StepOutput, StepProducer, StepRequest};

fn chunked(text: String, size: Option<usize>) -> PlanChunks<'static> {
    match size {
        Some(size) if size > 0 => {
            let chars: Vec<char> = text.chars().collect();
            let chunks: Vec<String> = chars.chunks(size).map(|c| c.iter().collect()).collect();
            Box::new(chunks.into_iter().map(Ok))
        }
        _ => Box::new(std::iter::once(Ok(text))),
    }
}

fn step_index(request: &StepRequest) -> Result<usize, ProducerError> {
    request
        .trans_id
        .as_deref()
        .and_then(outline_index_of_transition)
        .ok_or_else(|| ProducerError(format!("{:?} is not an outline transition", request.trans_id)))
}

/// Replays recorded texts: the plan head, each step by outline index, and the
/// conclusion.
#[derive(Debug, Clone)]
pub struct ScriptedProducer {
    plan_text: String,
    steps: BTreeMap<usize, String>,
    conclusion: String,
    chunk: Option<usize>,
}

impl ScriptedProducer {
    pub fn new(plan_text: impl Into<String>, steps: BTreeMap<usize, String>, conclusion: impl Into<String>) -> Self {
        Self {
            plan_text: plan_text.into(),
            steps,
            conclusion: conclusion.into(),
            chunk: None,
        }
    }

    pub fn from_trace(doc: &TraceDocument) -> Self {
        Self::new(
            serialize_head(doc.preamble.as_deref(), &doc.plan),
            doc.steps.iter().map(|s| (s.index, s.text.clone())).collect(),
            doc.conclusion.clone(),
        )
    }

    /// Streams the plan in chunks of `chars` characters.
    pub fn with_chunk_size(mut self, chars: usize) -> Self {
        self.chunk = Some(chars);
        self
    }

    /// Extra planning output after the head, e.g. text past `</Plan>`.
    pub fn with_plan_suffix(mut self, extra: &str) -> Self {
        self.plan_text.push_str(extra);
        self
    }
}

impl StepProducer for ScriptedProducer {
    fn produce(&self, request: &StepRequest) -> Result<StepOutput, ProducerError> {
        let text = match request.kind {
            StepKind::Plan => self.plan_text.clone(),
            StepKind::Conclusion => self.conclusion.clone(),
            StepKind::Step => {
                let i = step_index(request)?;
                self.steps
                    .get(&i)
                    .cloned()
                    .ok_or_else(|| ProducerError(format!("no scripted text for step {i}")))?
            }
        };
        Ok(StepOutput::from_text(text))
    }

    fn stream_plan(&self, _request: &StepRequest) -> Result<PlanChunks<'_>, ProducerError> {
        Ok(chunked(self.plan_text.clone(), self.chunk))
    }
}

/// Deterministic stand-in for a model: each output is a run of pseudo-words
/// derived from a digest of the seed, the request kind and text, and the
/// context. Output length is drawn from `[min_len, max_len]` by the same
/// digest.
#[derive(Debug, Clone)]
pub struct SyntheticProducer {
    plan_text: String,
    seed: u64,
    min_len: usize,
    max_len: usize,
    chunk: Option<usize>,
}

pub const DEFAULT_SYNTHETIC_LENGTHS: (usize, usize) = (8, 32);

impl SyntheticProducer {
    pub fn new(preamble: Option<&str>, plan: &PlanDocument, seed: u64) -> Self {
        Self {
            plan_text: serialize_head(preamble, plan),
            seed,
            min_len: DEFAULT_SYNTHETIC_LENGTHS.0,
            max_len: DEFAULT_SYNTHETIC_LENGTHS.1,
            chunk: None,
        }
    }

    pub fn with_lengths(mut self, min_len: usize, max_len: usize) -> Self {
        self.min_len = min_len.min(max_len);
        self.max_len = max_len.max(min_len);
        self
    }

    pub fn with_chunk_size(mut self, chars: usize) -> Self {
        self.chunk = Some(chars);
        self
    }

    fn digest(&self, request: &StepRequest) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update([request.kind as u8]);
        h.update(request.spec.as_bytes());
        h.update([0]);
        h.update(request.context.as_bytes());
        h.finalize().into()
    }

    /// Words derived from `digest`, eight per counter-mode block.
    pub fn words(digest: &[u8; 32], count: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(count);
        let mut block = 0u64;
        while out.len() < count {
            let mut h = Sha256::new();
            h.update(digest);
            h.update(block.to_le_bytes());
            let bytes: [u8; 32] = h.finalize().into();
            for w in bytes.chunks_exact(4).take(count - out.len()) {
                out.push(format!("w{:02x}{:02x}{:02x}{:02x}", w[0], w[1], w[2], w[3]));
            }
            block += 1;
        }
        out
    }
}

impl StepProducer for SyntheticProducer {
    fn produce(&self, request: &StepRequest) -> Result<StepOutput, ProducerError> {
        if request.kind == StepKind::Plan {
            return Ok(StepOutput::from_text(self.plan_text.clone()));
        }
        let digest = self.digest(request);
        let span = (self.max_len - self.min_len + 1) as u64;
        let draw = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let len = self.min_len + (draw % span) as usize;
        Ok(StepOutput::from_text(Self::words(&digest, len).join(" ")))
    }

    fn stream_plan(&self, _request: &StepRequest) -> Result<PlanChunks<'_>, ProducerError> {
        Ok(chunked(self.plan_text.clone(), self.chunk))
    }
}

#[cfg(feature = "remote")]
pub use remote::RemoteProducer;

#[cfg(feature = "remote")]
mod remote {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};

    use super::*;

    #[derive(Serialize)]
    #[serde(rename_all = "camelCase")]
    struct Request<'a> {
        context: &'a str,
        spec: &'a str,
        max_tokens: usize,
    }

    #[derive(Deserialize)]
    struct Response {
        text: String,
    }

    /// Text-generation service speaking `POST {context, spec, maxTokens}` and
    /// answering `{text}`.
    pub struct RemoteProducer {
        agent: ureq::Agent,
        endpoint: String,
        max_tokens: usize,
    }

    impl RemoteProducer {
        pub fn new(endpoint: impl Into<String>, max_tokens: usize, timeout: Duration) -> Self {
            let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
            Self {
                agent,
                endpoint: endpoint.into(),
                max_tokens,
            }
        }
    }

    impl StepProducer for RemoteProducer {
        fn produce(&self, request: &StepRequest) -> Result<StepOutput, ProducerError> {
            let body = Request {
                context: &request.context,
                spec: &request.spec,
                max_tokens: self.max_tokens,
            };
            let resp: Response = self
                .agent
                .post(&self.endpoint)
                .send_json(&body)
                .and_then(|mut r| r.body_mut().read_json())
                .map_err(|e| ProducerError(format!("{}: {e}", self.endpoint)))?;
            Ok(StepOutput::from_text(resp.text))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{parse_plan, Outline};

    fn request(kind: StepKind, trans: Option<&str>, context: &str) -> StepRequest {
        StepRequest {
            kind,
            trans_id: trans.map(String::from),
            spec: "A->B".into(),
            context: context.into(),
        }
    }

    fn plan() -> PlanDocument {
        PlanDocument {
            goal: "B".into(),
            outlines: vec![Outline {
                index: 1,
                deps: vec![],
                description: "A->B".into(),
            }],
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let p = SyntheticProducer::new(None, &plan(), 7).with_lengths(3, 5);
        let r = request(StepKind::Step, Some("t:n0001"), "ctx");
        let a = p.produce(&r).unwrap();
        assert_eq!(a, p.produce(&r).unwrap());
        assert!((3..=5).contains(&a.tokens.len()));
        assert_ne!(a, p.produce(&request(StepKind::Step, Some("t:n0001"), "other")).unwrap());
        let other_seed = SyntheticProducer::new(None, &plan(), 8).with_lengths(3, 5);
        assert_ne!(a, other_seed.produce(&r).unwrap());
        let fixed = SyntheticProducer::new(None, &plan(), 7).with_lengths(100, 100);
        assert_eq!(fixed.produce(&r).unwrap().tokens.len(), 100);
    }

    #[test]
    fn synthetic_plan_parses() {
        let p = SyntheticProducer::new(Some("Path 1: A->B"), &plan(), 0).with_chunk_size(5);
        let text: String = p
            .stream_plan(&request(StepKind::Plan, None, ""))
            .unwrap()
            .map(Result::unwrap)
            .collect();
        assert_eq!(parse_plan(&text).unwrap(), plan());
    }

    #[test]
    fn scripted_by_outline_index() {
        let p = ScriptedProducer::new("", [(1, "one".to_string())].into(), "done");
        assert_eq!(p.produce(&request(StepKind::Step, Some("t:n0001"), "")).unwrap().text, "one");
        assert!(p.produce(&request(StepKind::Step, Some("t:n0002"), "")).is_err());
        assert!(p.produce(&request(StepKind::Step, Some("t:B"), "")).is_err());
        assert_eq!(p.produce(&request(StepKind::Conclusion, None, "")).unwrap().text, "done");
    }
}
