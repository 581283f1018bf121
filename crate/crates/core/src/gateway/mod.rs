//! Single egress point for language-model traffic.
//!
//! Every call goes through [`Gateway::complete`], which checks that the
//! bundle carries every configured guardrail fragment, renders the template
//! (failing before any send on an unresolved placeholder), applies the
//! temperature and deadline policy and caps in-flight requests.

pub mod mock;
pub mod parse;
pub mod template;
pub mod transport;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::LlmSettings;
use crate::guardrails::prompts::{missing_required, GuardrailFragment, GuardrailSet};
use mock::MockTable;
use parse::{parse_enum, reprompt_hint};
use template::{render, OutputDomain, TemplateCatalog};
use transport::{ChatMessage, ChatRequest, HttpTransport, LlmTransport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {id}: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("prompt bundle has no system fragments")]
    NoGuardrails,
    #[error("prompt bundle lacks guardrail fragment {0:?}")]
    MissingGuardrail(String),
    #[error("temperature {0} outside [0, 2]")]
    InvalidTemperature(f64),
    #[error("template placeholder {{{0}}} has no value")]
    UnresolvedPlaceholder(String),
    #[error("language model unavailable: {0}")]
    Unavailable(String),
    #[error("empty completion")]
    EmptyCompletion,
    #[error("unparseable completion {0:?}")]
    Unparseable(String),
}

/// Everything needed to render and send one prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    template_id: String,
    system_fragments: Vec<GuardrailFragment>,
    variables: BTreeMap<String, String>,
    temperature: f64,
    max_output_chars: usize,
    reprompt: Option<String>,
}

impl PromptBundle {
    pub fn new(
        catalog: &TemplateCatalog,
        template_id: &str,
        system_fragments: Vec<GuardrailFragment>,
        variables: BTreeMap<String, String>,
        temperature: f64,
        max_output_chars: usize,
    ) -> Result<Self, GatewayError> {
        if system_fragments.is_empty() {
            return Err(GatewayError::NoGuardrails);
        }
        if let Some(id) = missing_required(&system_fragments) {
            return Err(GatewayError::MissingGuardrail(id.to_string()));
        }
        if catalog.get(template_id).is_none() {
            return Err(GatewayError::UnknownTemplate(template_id.to_string()));
        }
        if !(0.0..=2.0).contains(&temperature) {
            return Err(GatewayError::InvalidTemperature(temperature));
        }
        Ok(Self {
            template_id: template_id.to_string(),
            system_fragments,
            variables,
            temperature,
            max_output_chars,
            reprompt: None,
        })
    }

    /// Same bundle with an instruction appended to the user prompt.
    pub fn with_reprompt(mut self, hint: impl Into<String>) -> Self {
        self.reprompt = Some(hint.into());
        self
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    pub fn system_fragments(&self) -> &[GuardrailFragment] {
        &self.system_fragments
    }

    pub fn variables(&self) -> &BTreeMap<String, String> {
        &self.variables
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_output_chars(&self) -> usize {
        self.max_output_chars
    }
}

/// A prompt as it leaves the gateway.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutgoingPrompt {
    pub template_id: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub via_network: bool,
}

/// Observer called for every prompt the gateway emits.
pub trait CaptureHook: Send + Sync {
    fn on_prompt(&self, prompt: &OutgoingPrompt);
}

#[derive(Debug, Default)]
pub struct RecordingHook {
    prompts: Mutex<Vec<OutgoingPrompt>>,
}

impl RecordingHook {
    pub fn prompts(&self) -> Vec<OutgoingPrompt> {
        self.prompts.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl CaptureHook for RecordingHook {
    fn on_prompt(&self, prompt: &OutgoingPrompt) {
        self.prompts.lock().unwrap_or_else(|e| e.into_inner()).push(prompt.clone());
    }
}

pub enum Backend {
    Mock(MockTable),
    Remote { transport: Arc<dyn LlmTransport>, model: String },
}

/// Counting semaphore bounding concurrent remote calls.
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(cap: usize) -> Self {
        Self { count: Mutex::new(0), freed: Condvar::new(), cap: cap.max(1) }
    }

    fn acquire(&self, deadline: Instant) -> Option<Permit<'_>> {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            let left = deadline.checked_duration_since(Instant::now())?;
            n = self.freed.wait_timeout(n, left).unwrap_or_else(|e| e.into_inner()).0;
        }
        *n += 1;
        Some(Permit(self))
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    catalog: TemplateCatalog,
    guardrails: GuardrailSet,
    backend: Backend,
    hook: Option<Arc<dyn CaptureHook>>,
    in_flight: InFlight,
    deadline: Duration,
    backoff: Duration,
    classification_temperature: f64,
    generation_temperature: f64,
    max_message_chars: usize,
}

/// Upper bound on label answers; longer text cannot be a single label anyway.
const LABEL_OUTPUT_CHARS: usize = 200;

impl Gateway {
    pub fn new(catalog: TemplateCatalog, guardrails: GuardrailSet, backend: Backend, llm: &LlmSettings) -> Self {
        Self {
            catalog,
            guardrails,
            backend,
            hook: None,
            in_flight: InFlight::new(llm.max_in_flight),
            deadline: Duration::from_millis(llm.deadline_ms),
            backoff: Duration::from_millis(llm.retry_backoff_ms),
            classification_temperature: llm.classification_temperature,
            generation_temperature: llm.generation_temperature,
            max_message_chars: llm.max_message_chars,
        }
    }

    /// Mock or HTTP backend as the settings ask.
    pub fn from_settings(
        catalog: TemplateCatalog,
        guardrails: GuardrailSet,
        mock_table: MockTable,
        llm: &LlmSettings,
    ) -> Result<Self, GatewayError> {
        let backend = if llm.mock {
            Backend::Mock(mock_table)
        } else {
            let endpoint = llm
                .endpoint
                .clone()
                .ok_or_else(|| GatewayError::Unavailable("no endpoint configured".into()))?;
            let transport = HttpTransport::new(endpoint, llm.api_key.clone())
                .map_err(|e| GatewayError::Unavailable(e.0))?;
            Backend::Remote {
                transport: Arc::new(transport),
                model: llm.model.clone().unwrap_or_else(|| "default".into()),
            }
        };
        Ok(Self::new(catalog, guardrails, backend, llm))
    }

    pub fn with_hook(mut self, hook: Arc<dyn CaptureHook>) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn catalog(&self) -> &TemplateCatalog {
        &self.catalog
    }

    pub fn guardrails(&self) -> &GuardrailSet {
        &self.guardrails
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.backend, Backend::Mock(_))
    }

    /// Bundle with the configured guardrails and the temperature policy:
    /// label templates use the classification temperature, free text the
    /// generation temperature, unless the template pins its own.
    pub fn bundle(&self, template_id: &str, variables: BTreeMap<String, String>) -> Result<PromptBundle, GatewayError> {
        self.bundle_with_fragments(template_id, self.guardrails.guardrail_prompts().to_vec(), variables)
    }

    /// As [`Gateway::bundle`], with caller-supplied system fragments.
    pub fn bundle_with_fragments(
        &self,
        template_id: &str,
        fragments: Vec<GuardrailFragment>,
        variables: BTreeMap<String, String>,
    ) -> Result<PromptBundle, GatewayError> {
        let spec = self
            .catalog
            .get(template_id)
            .ok_or_else(|| GatewayError::UnknownTemplate(template_id.to_string()))?;
        let (default_temp, cap) = match spec.output_domain() {
            OutputDomain::FreeText => (self.generation_temperature, self.max_message_chars),
            _ => (self.classification_temperature, LABEL_OUTPUT_CHARS),
        };
        PromptBundle::new(
            &self.catalog,
            template_id,
            fragments,
            variables,
            spec.temperature.unwrap_or(default_temp),
            cap,
        )
    }

    pub fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let spec = self
            .catalog
            .get(&bundle.template_id)
            .ok_or_else(|| GatewayError::UnknownTemplate(bundle.template_id.clone()))?;
        for f in self.guardrails.guardrail_prompts() {
            if !bundle.system_fragments.contains(f) {
                return Err(GatewayError::MissingGuardrail(f.id.clone()));
            }
        }
        let mut user = render(&spec.body, &bundle.variables)?;
        if let Some(hint) = &bundle.reprompt {
            user.push_str("\n\n");
            user.push_str(hint);
        }
        let system = bundle
            .system_fragments
            .iter()
            .map(|f| f.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        let outgoing = OutgoingPrompt {
            template_id: bundle.template_id.clone(),
            system,
            user,
            temperature: bundle.temperature,
            via_network: !self.is_mock(),
        };
        if let Some(hook) = &self.hook {
            hook.on_prompt(&outgoing);
        }
        let raw = match &self.backend {
            Backend::Mock(table) => table.complete(spec, &bundle.variables)?,
            Backend::Remote { transport, model } => self.send_remote(transport.as_ref(), model, &outgoing)?,
        };
        let text = raw.trim();
        if text.is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        Ok(truncate_chars(text, bundle.max_output_chars))
    }

    fn send_remote(&self, transport: &dyn LlmTransport, model: &str, p: &OutgoingPrompt) -> Result<String, GatewayError> {
        let deadline = Instant::now() + self.deadline;
        let _permit = self
            .in_flight
            .acquire(deadline)
            .ok_or_else(|| GatewayError::Unavailable("deadline exceeded waiting for a slot".into()))?;
        let request = ChatRequest {
            model: model.to_string(),
            temperature: p.temperature,
            messages: vec![
                ChatMessage { role: "system", content: p.system.clone() },
                ChatMessage { role: "user", content: p.user.clone() },
            ],
        };
        let mut last = String::new();
        for attempt in 0..2u32 {
            let Some(left) = deadline.checked_duration_since(Instant::now()) else { break };
            match transport.send(&request, left) {
                Ok(text) => return Ok(text),
                Err(e) => last = e.0,
            }
            if attempt == 0 {
                let pause = self.backoff.min(deadline.saturating_duration_since(Instant::now()));
                std::thread::sleep(pause);
            }
        }
        Err(GatewayError::Unavailable(if last.is_empty() { "deadline exceeded".into() } else { last }))
    }

    /// Completes a label template and closes the answer into its domain,
    /// reprompting once on an unparseable answer.
    pub fn classify(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let spec = self
            .catalog
            .get(&bundle.template_id)
            .ok_or_else(|| GatewayError::UnknownTemplate(bundle.template_id.clone()))?;
        let domain = spec.labels(&bundle.variables).unwrap_or_default();
        match self.complete(bundle) {
            Ok(text) => {
                if let Ok(label) = parse_enum(&text, &domain) {
                    return Ok(label.to_string());
                }
            }
            Err(GatewayError::EmptyCompletion) => {}
            Err(e) => return Err(e),
        }
        let retry = bundle.clone().with_reprompt(reprompt_hint(&domain));
        let text = self.complete(&retry)?;
        parse_enum(&text, &domain)
            .map(str::to_string)
            .map_err(|_| GatewayError::Unparseable(text))
    }
}

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => s[..i].trim_end().to_string(),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Settings;
    use crate::gateway::template::{ATTENTION, COGNITIVE_MODE, NUDGE_MESSAGE};
    use crate::guardrails::prompts::{BIAS_MITIGATION, ETHICS_COMPLIANCE};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn attention_vars() -> BTreeMap<String, String> {
        vars(&[
            ("device", "desktop"),
            ("time_of_day", "morning"),
            ("click_count", "12"),
            ("mean_hesitation_ms", "1000.0"),
        ])
    }

    fn mock_gateway() -> (Gateway, Arc<RecordingHook>) {
        let hook = Arc::new(RecordingHook::default());
        let s = Settings::default();
        let g = Gateway::new(TemplateCatalog::default(), GuardrailSet::default(), Backend::Mock(MockTable::new(vec![])), &s.llm)
            .with_hook(hook.clone());
        (g, hook)
    }

    struct Scripted {
        replies: Mutex<Vec<Result<String, transport::TransportError>>>,
        calls: AtomicUsize,
        temps: Mutex<Vec<f64>>,
    }

    impl LlmTransport for Scripted {
        fn send(&self, r: &ChatRequest, _t: Duration) -> Result<String, transport::TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.temps.lock().unwrap().push(r.temperature);
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn remote(replies: Vec<Result<String, transport::TransportError>>) -> (Gateway, Arc<Scripted>) {
        let t = Arc::new(Scripted { replies: Mutex::new(replies), calls: AtomicUsize::new(0), temps: Mutex::new(vec![]) });
        let mut s = Settings::default();
        s.llm.retry_backoff_ms = 1;
        let g = Gateway::new(
            TemplateCatalog::default(),
            GuardrailSet::default(),
            Backend::Remote { transport: t.clone(), model: "m".into() },
            &s.llm,
        );
        (g, t)
    }

    #[test]
    fn classification_bundle_uses_low_temperature() {
        let (g, _) = mock_gateway();
        assert_eq!(g.bundle(ATTENTION, attention_vars()).unwrap().temperature(), 0.3);
        assert_eq!(g.bundle(NUDGE_MESSAGE, vars(&[])).unwrap().temperature(), 0.7);
        let (g, t) = remote(vec![Ok("High".into())]);
        assert_eq!(g.classify(&g.bundle(ATTENTION, attention_vars()).unwrap()).unwrap(), "high");
        assert_eq!(*t.temps.lock().unwrap(), vec![0.3]);
    }

    #[test]
    fn bundle_without_fragments_is_rejected() {
        let c = TemplateCatalog::default();
        let err = PromptBundle::new(&c, ATTENTION, vec![], attention_vars(), 0.3, 10).unwrap_err();
        assert_eq!(err, GatewayError::NoGuardrails);
        let only_bias: Vec<_> = GuardrailSet::default()
            .guardrail_prompts()
            .iter()
            .filter(|f| f.id == BIAS_MITIGATION)
            .cloned()
            .collect();
        let err = PromptBundle::new(&c, ATTENTION, only_bias, attention_vars(), 0.3, 10).unwrap_err();
        assert_eq!(err, GatewayError::MissingGuardrail(ETHICS_COMPLIANCE.into()));
        let all = GuardrailSet::default().guardrail_prompts().to_vec();
        assert!(matches!(PromptBundle::new(&c, "nope", all.clone(), attention_vars(), 0.3, 10), Err(GatewayError::UnknownTemplate(_))));
        assert!(matches!(PromptBundle::new(&c, ATTENTION, all, attention_vars(), 2.5, 10), Err(GatewayError::InvalidTemperature(_))));
    }

    #[test]
    fn unresolved_placeholder_fails_before_send() {
        let (g, t) = remote(vec![Ok("x".into())]);
        let b = g.bundle(NUDGE_MESSAGE, vars(&[("strategy_id", "just_in_time")])).unwrap();
        assert!(matches!(g.complete(&b), Err(GatewayError::UnresolvedPlaceholder(_))));
        assert_eq!(t.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn one_retry_then_unavailable() {
        let err = || Err(transport::TransportError("boom".into()));
        let (g, t) = remote(vec![err(), Ok("low".into())]);
        let b = g.bundle(ATTENTION, attention_vars()).unwrap();
        assert_eq!(g.complete(&b).unwrap(), "low");
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
        let (g, t) = remote(vec![err(), err(), Ok("never".into())]);
        assert!(matches!(g.complete(&b), Err(GatewayError::Unavailable(_))));
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn empty_completion_and_reprompt() {
        let (g, _) = remote(vec![Ok("   ".into())]);
        let b = g.bundle(ATTENTION, attention_vars()).unwrap();
        assert_eq!(g.complete(&b), Err(GatewayError::EmptyCompletion));
        let (g, t) = remote(vec![Ok("somewhere between low and high".into()), Ok("Medium".into())]);
        assert_eq!(g.classify(&b).unwrap(), "medium");
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
        let (g, _) = remote(vec![Ok("no idea".into()), Ok("still no idea".into())]);
        assert!(matches!(g.classify(&b), Err(GatewayError::Unparseable(_))));
    }

    #[test]
    fn mock_mode_never_touches_the_network_and_carries_guardrails() {
        let (g, hook) = mock_gateway();
        let b = g
            .bundle(COGNITIVE_MODE, {
                let mut v = attention_vars();
                v.insert("appliances".into(), "heater 2000 W".into());
                v.insert("max_wattage_w".into(), "2000.0".into());
                v
            })
            .unwrap();
        let a = g.classify(&b).unwrap();
        assert_eq!(a, g.classify(&b).unwrap());
        let prompts = hook.prompts();
        assert_eq!(prompts.len(), 2);
        for p in prompts {
            assert!(!p.via_network);
            for f in GuardrailSet::default().guardrail_prompts() {
                assert!(p.system.contains(&f.text));
            }
        }
    }

    #[test]
    fn long_output_is_truncated() {
        let (g, _) = remote(vec![Ok("é".repeat(1000))]);
        let b = g.bundle(ATTENTION, attention_vars()).unwrap();
        assert_eq!(g.complete(&b).unwrap().chars().count(), LABEL_OUTPUT_CHARS);
    }

    #[test]
    fn in_flight_cap_is_respected() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl LlmTransport for Slow {
            fn send(&self, _r: &ChatRequest, _t: Duration) -> Result<String, transport::TransportError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok("low".into())
            }
        }
        let slow = Arc::new(Slow { now: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let mut s = Settings::default();
        s.llm.max_in_flight = 2;
        let g = Arc::new(Gateway::new(
            TemplateCatalog::default(),
            GuardrailSet::default(),
            Backend::Remote { transport: slow.clone(), model: "m".into() },
            &s.llm,
        ));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let g = g.clone();
                std::thread::spawn(move || g.complete(&g.bundle(ATTENTION, attention_vars()).unwrap()).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
