//! Two-stage behavioral analysis.
//!
//! Stage one turns each safety-critical event into a narrative
//! description; stage two digests a batch of descriptions into
//! structured `Insights` whose `CriticalArea` steers the scenario
//! generator. Both stages run against either a chat-completions HTTP
//! backend or a deterministic geometric stub; all offline tests and
//! training runs use the stub.

mod http;
mod prompt;
pub mod render;

pub use http::{ChatBackend, HttpChatBackend};
pub use prompt::{build_prompt, ANALYSIS_PREAMBLE, FORMAT_INSTRUCTION, FORMAT_REMINDER};

use crate::scenario::{CriticalArea, RelativeRegion, VehicleState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("backend transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("analysis response unusable after {attempts} prompts: {last}")]
    Unparseable { attempts: u32, last: String },
    #[error("event carries {got} frames but the configured maximum is {max}")]
    TooManyFrames { got: usize, max: usize },
    #[error("cannot analyze an empty batch")]
    EmptyBatch,
}

/// How a safety violation manifested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    RearEnd,
    SideSwipe,
    OffRoad,
    NearMiss,
}

impl ViolationKind {
    /// Collision class implied by where the other vehicle sat.
    pub fn from_collision_region(region: RelativeRegion) -> Self {
        match region {
            RelativeRegion::Front | RelativeRegion::Behind => ViolationKind::RearEnd,
            RelativeRegion::Left | RelativeRegion::Right => ViolationKind::SideSwipe,
        }
    }

    fn phrase(&self) -> &'static str {
        match self {
            ViolationKind::RearEnd => "rear-end collision",
            ViolationKind::SideSwipe => "side-swipe collision",
            ViolationKind::OffRoad => "off-road departure",
            ViolationKind::NearMiss => "near-miss",
        }
    }
}

/// Geometric facts captured at the event step; always present, even when
/// rendered frames are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryLog {
    pub av_state: VehicleState,
    /// The critical object, when one existed.
    pub critical_state: Option<VehicleState>,
    /// Where the critical object sat relative to the agent.
    pub region: Option<RelativeRegion>,
    pub violation: ViolationKind,
}

/// One safety-critical event queued for description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub scenario_id: String,
    pub step: usize,
    /// Base64-encoded PNG key frames, at most `max_frames` of them.
    pub frames: Vec<String>,
    /// Structured text view of the scene, always attached.
    pub scene_text: String,
    pub geometry: GeometryLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptionSource {
    Vlm,
    Stub,
}

/// Narrative description of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDescription {
    pub text: String,
    pub source: DescriptionSource,
}

/// A described event retained in the analysis batch; the geometry rides
/// along so the stub analyzer can work without any text understanding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribedEvent {
    pub scenario_id: String,
    pub step: usize,
    pub description: EventDescription,
    pub geometry: GeometryLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Backend,
    Stub,
}

/// Structured output of batch analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insights {
    pub situation: String,
    pub reasoning: String,
    pub recommendation: String,
    pub critical_area: CriticalArea,
    pub provenance: Provenance,
    pub created_at_step: usize,
}

/// Backend connection settings; the stub ignores everything but
/// `max_frames`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; empty disables auth.
    pub auth_token_env: String,
    pub timeout_secs: u64,
    pub retries: u32,
    /// Instruction sent with every per-event description request.
    pub instruction: String,
    pub prompt_template: String,
    pub audit_log: Option<PathBuf>,
    /// Key-frame budget per event (the `k` bound).
    pub max_frames: usize,
}

pub const DEFAULT_INSTRUCTION: &str = "Describe this safety-critical driving event in a \
short narrative paragraph. Cover: the type of safety violation, the relative position and \
behavior of the critical vehicle, how the learning agent responded, and the contextual \
factors that contributed.";

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: String::new(),
            model: "gpt-4o".to_string(),
            auth_token_env: "ANALYSIS_API_TOKEN".to_string(),
            timeout_secs: 30,
            retries: 2,
            instruction: DEFAULT_INSTRUCTION.to_string(),
            prompt_template: "four-section-v1".to_string(),
            audit_log: None,
            max_frames: 5,
        }
    }
}

/// The analysis stage: stub or HTTP-backed, optionally pinned to a fixed
/// critical area for controlled experiments.
pub struct Analyzer {
    cfg: BackendConfig,
    backend: Option<Box<dyn ChatBackend>>,
    forced_area: Option<CriticalArea>,
}

impl Analyzer {
    pub fn stub(cfg: BackendConfig) -> Self {
        Analyzer {
            cfg,
            backend: None,
            forced_area: None,
        }
    }

    pub fn with_backend(cfg: BackendConfig, backend: Box<dyn ChatBackend>) -> Self {
        Analyzer {
            cfg,
            backend: Some(backend),
            forced_area: None,
        }
    }

    /// Pin the critical area, bypassing inference entirely. Used by the
    /// perception-masking experiment where the vulnerable sector is
    /// known by construction.
    pub fn force_critical_area(&mut self, area: CriticalArea) {
        self.forced_area = Some(area);
    }

    pub fn is_stub(&self) -> bool {
        self.backend.is_none()
    }

    /// Narrate one event: backend path returns the model text verbatim,
    /// stub path renders a deterministic sentence from the geometry log.
    pub fn describe_event(&self, ev: &EventRecord) -> Result<EventDescription, AnalysisError> {
        if ev.frames.len() > self.cfg.max_frames {
            return Err(AnalysisError::TooManyFrames {
                got: ev.frames.len(),
                max: self.cfg.max_frames,
            });
        }
        match &self.backend {
            None => Ok(EventDescription {
                text: stub_description(ev),
                source: DescriptionSource::Stub,
            }),
            Some(backend) => {
                let mut parts = vec![ContentPart::Text(ev.scene_text.clone())];
                for frame in &ev.frames {
                    parts.push(ContentPart::ImagePngBase64(frame.clone()));
                }
                let text = backend.complete(&self.cfg.instruction, &parts)?;
                Ok(EventDescription {
                    text,
                    source: DescriptionSource::Vlm,
                })
            }
        }
    }

    /// Digest a full batch into `Insights`. The backend path builds the
    /// prompt, runs one completion and parses it, re-prompting at most
    /// twice with a format reminder; the stub path takes the modal
    /// region(s) of the batch geometry, ties included.
    pub fn analyze_batch(
        &self,
        batch: &[DescribedEvent],
        current_step: usize,
    ) -> Result<Insights, AnalysisError> {
        if batch.is_empty() {
            return Err(AnalysisError::EmptyBatch);
        }
        if let Some(area) = &self.forced_area {
            let mut insights = stub_insights(batch, current_step);
            insights.critical_area = area.clone();
            return Ok(insights);
        }
        match &self.backend {
            None => Ok(stub_insights(batch, current_step)),
            Some(backend) => {
                let descriptions: Vec<EventDescription> =
                    batch.iter().map(|e| e.description.clone()).collect();
                let prompt = build_prompt(&descriptions)?;
                let mut last = String::new();
                for attempt in 0..3 {
                    let mut parts = vec![ContentPart::Text(prompt.clone())];
                    if attempt > 0 {
                        parts.push(ContentPart::Text(FORMAT_REMINDER.to_string()));
                    }
                    let text = backend.complete("", &parts)?;
                    match parse_insights(&text, current_step) {
                        Ok(insights) => return Ok(insights),
                        Err(e) => last = e.to_string(),
                    }
                }
                Err(AnalysisError::Unparseable { attempts: 3, last })
            }
        }
    }
}

fn region_phrase(region: Option<RelativeRegion>) -> &'static str {
    match region {
        Some(RelativeRegion::Front) => "directly ahead of the agent",
        Some(RelativeRegion::Behind) => "behind the agent",
        Some(RelativeRegion::Left) => "on the agent's left",
        Some(RelativeRegion::Right) => "on the agent's right",
        None => "not attributable to any nearby vehicle",
    }
}

fn stub_description(ev: &EventRecord) -> String {
    let g = &ev.geometry;
    let positioning = match &g.critical_state {
        Some(c) => format!(
            "the critical vehicle was {}, {:.1} m away and moving at {:.1} m/s",
            region_phrase(g.region),
            g.av_state.position.distance(c.position),
            c.speed
        ),
        None => format!("the situation was {}", region_phrase(None)),
    };
    let response = if g.av_state.speed < 0.5 {
        "had braked to a near stop".to_string()
    } else {
        format!("was still traveling at {:.1} m/s", g.av_state.speed)
    };
    let context = match g.violation {
        ViolationKind::RearEnd => "the longitudinal gap closed faster than the agent adjusted its speed",
        ViolationKind::SideSwipe => "lateral clearance vanished while both vehicles occupied adjacent space",
        ViolationKind::OffRoad => "the agent steered itself outside the drivable corridor",
        ViolationKind::NearMiss => "the projected paths converged with under half a second of margin",
    };
    format!(
        "A {} occurred at t = {:.1} s in scenario {}: {}, while the agent {}. Contributing factor: {}.",
        g.violation.phrase(),
        ev.step as f64 * 0.1,
        ev.scenario_id,
        positioning,
        response,
        context
    )
}

/// Pure function of the batch geometry: modal region(s), with templated
/// text fields.
fn stub_insights(batch: &[DescribedEvent], current_step: usize) -> Insights {
    let mut region_counts: BTreeMap<RelativeRegion, usize> = BTreeMap::new();
    let mut kind_counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for ev in batch {
        if let Some(region) = ev.geometry.region {
            *region_counts.entry(region).or_default() += 1;
        }
        *kind_counts.entry(ev.geometry.violation.phrase()).or_default() += 1;
    }
    let critical_area = match region_counts.values().max().copied() {
        Some(max) => CriticalArea::new(
            region_counts
                .iter()
                .filter(|(_, &c)| c == max)
                .map(|(&r, _)| r),
        )
        .expect("modal set is non-empty"),
        // No event had a critical object; fall back to the forward sector.
        None => CriticalArea::single(RelativeRegion::Front),
    };
    let dominant_kind = kind_counts
        .iter()
        .max_by_key(|(_, &c)| c)
        .map(|(k, _)| *k)
        .unwrap_or("safety violation");
    let area = critical_area.to_string();
    Insights {
        situation: format!(
            "Across {} recent safety-critical events the dominant failure is the {}, with critical vehicles most often positioned {} of the agent.",
            batch.len(),
            dominant_kind,
            area
        ),
        reasoning: format!(
            "The concentration of conflicts in the {} sector indicates the agent underestimates hazards approaching from there and reacts only once they enter its immediate path.",
            area
        ),
        recommendation: format!(
            "Increase exposure to interactions where background vehicles intrude from the {} side so the agent learns earlier speed and lane adjustments.",
            area
        ),
        critical_area,
        provenance: Provenance::Stub,
        created_at_step: current_step,
    }
}

/// Canonical rendering of `Insights`: the exact four-section format the
/// backend is instructed to produce.
pub fn render_insights(insights: &Insights) -> String {
    format!(
        "Situation: {}\nReasoning: {}\nRecommendation: {}\nCriticalArea: {}\n",
        insights.situation, insights.reasoning, insights.recommendation, insights.critical_area
    )
}

const SECTION_LABELS: [&str; 4] = ["situation", "reasoning", "recommendation", "criticalarea"];

/// Extract the four labeled sections, case-insensitively, and resolve
/// the critical-area tokens. Region tokens must appear exactly as the
/// capitalized literals; synonyms and modified forms are rejected.
pub fn parse_insights(text: &str, created_at_step: usize) -> Result<Insights, AnalysisError> {
    let lower = text.to_ascii_lowercase();
    let mut marks: Vec<(usize, usize, &str)> = Vec::new();
    for label in SECTION_LABELS {
        let found = find_label(&lower, label)
            .or_else(|| {
                if label == "criticalarea" {
                    find_label(&lower, "critical area")
                } else {
                    None
                }
            })
            .ok_or_else(|| AnalysisError::Parse(format!("missing section {label:?}")))?;
        marks.push((found.0, found.1, label));
    }
    marks.sort_by_key(|m| m.0);

    let mut sections: BTreeMap<&str, String> = BTreeMap::new();
    for (i, &(_, content_start, label)) in marks.iter().enumerate() {
        let end = marks.get(i + 1).map(|m| m.0).unwrap_or(text.len());
        sections.insert(label, text[content_start..end].trim().to_string());
    }
    for label in SECTION_LABELS {
        if sections[label].is_empty() {
            return Err(AnalysisError::Parse(format!("section {label:?} is empty")));
        }
    }

    let area_text = &sections["criticalarea"];
    let mut regions = Vec::new();
    for run in area_text
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|s| !s.is_empty())
    {
        match run {
            "Front" => regions.push(RelativeRegion::Front),
            "Behind" => regions.push(RelativeRegion::Behind),
            "Left" => regions.push(RelativeRegion::Left),
            "Right" => regions.push(RelativeRegion::Right),
            _ => {}
        }
    }
    if regions.is_empty() {
        return Err(AnalysisError::Parse(format!(
            "no valid region token in CriticalArea section {area_text:?}"
        )));
    }
    Ok(Insights {
        situation: sections["situation"].clone(),
        reasoning: sections["reasoning"].clone(),
        recommendation: sections["recommendation"].clone(),
        critical_area: CriticalArea::new(regions).expect("token list is non-empty"),
        provenance: Provenance::Backend,
        created_at_step,
    })
}

/// Position of `label` followed by optional blanks and a colon; returns
/// `(label_start, content_start)`.
fn find_label(lower: &str, label: &str) -> Option<(usize, usize)> {
    let mut from = 0;
    while let Some(pos) = lower[from..].find(label) {
        let start = from + pos;
        let after = &lower[start + label.len()..];
        let blanks = after.len() - after.trim_start_matches([' ', '\t']).len();
        if after[blanks..].starts_with(':') {
            return Some((start, start + label.len() + blanks + 1));
        }
        from = start + label.len();
    }
    None
}

/// A text or image part of a chat message.
#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    ImagePngBase64(String),
}
