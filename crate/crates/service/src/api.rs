use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use spectro_core::bundle::ModelBundle;
use spectro_core::config::SamplerConfig;
use spectro_core::dataset::{PITCH_MAX, PITCH_MIN};
use spectro_core::dsp::wav::{decode_wav, encode_wav};
use spectro_core::inpaint::RegionSelection;
use spectro_core::lm::{ConditioningLabels, Level};

use crate::error::ApiError;
use crate::state::{now, AppState, Session};

type Shared = State<Arc<AppState>>;

/// Instrument family given by index or by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstrumentRef {
    Index(u8),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRequest {
    pub pitch: u8,
    pub instrument: InstrumentRef,
    pub seed: Option<u64>,
    pub top_p: Option<f64>,
    pub temperature: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintRequest {
    pub level: Level,
    pub freq_start: usize,
    pub freq_end: usize,
    pub time_start: usize,
    pub time_end: usize,
    pub pitch: u8,
    pub instrument: InstrumentRef,
    pub seed: Option<u64>,
    pub top_p: Option<f64>,
    pub temperature: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPayload {
    pub session_id: String,
    pub pitch: u8,
    pub instrument: u8,
    pub top: Vec<Vec<usize>>,
    pub bottom: Vec<Vec<usize>>,
    /// Log-amplitude of the decoded gram, `n_mels` rows.
    pub spectrogram: Vec<Vec<f64>>,
    pub created: u64,
    pub updated: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusPayload {
    pub top_shape: [usize; 2],
    pub bottom_shape: [usize; 2],
    pub codebook_size: usize,
    pub pitch_range: [u8; 2],
    pub instruments: Vec<String>,
    pub sample_rate: u32,
    pub gram_shape: [usize; 2],
    pub model_version: String,
    pub sessions: usize,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

fn labels(models: &ModelBundle, pitch: u8, instrument: &InstrumentRef) -> Result<ConditioningLabels, ApiError> {
    let vocab = models.vocab();
    let index = match instrument {
        InstrumentRef::Index(i) => *i,
        InstrumentRef::Name(name) => vocab
            .families
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| ApiError::bad_request(format!("unknown instrument `{name}`")))? as u8,
    };
    Ok(ConditioningLabels::new(pitch, index, vocab)?)
}

fn sampler(seed: Option<u64>, top_p: Option<f64>, temperature: Option<f64>) -> Result<SamplerConfig, ApiError> {
    let d = SamplerConfig::default();
    let cfg = SamplerConfig {
        top_p: top_p.unwrap_or(d.top_p),
        temperature: temperature.unwrap_or(d.temperature),
        seed: seed.unwrap_or(d.seed),
    };
    cfg.validate()?;
    Ok(cfg)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

fn payload(models: &ModelBundle, s: &Session) -> Result<SessionPayload, ApiError> {
    let gram = models.vqvae.decode(&s.codes)?;
    Ok(SessionPayload {
        session_id: s.id.clone(),
        pitch: s.labels.pitch(),
        instrument: s.labels.instrument(),
        top: s.codes.top.to_nested(),
        bottom: s.codes.bottom.to_nested(),
        spectrogram: gram.log_amp.to_nested(),
        created: s.created,
        updated: s.updated,
    })
}

pub(crate) async fn status(State(state): Shared) -> Result<Json<StatusPayload>, ApiError> {
    let m = state.require_models()?;
    let h = m.hierarchy();
    let (bf, bt) = h.bottom_shape();
    Ok(Json(StatusPayload {
        top_shape: [h.top_shape.0, h.top_shape.1],
        bottom_shape: [bf, bt],
        codebook_size: m.codebook_size(),
        pitch_range: [PITCH_MIN, PITCH_MAX],
        instruments: m.vocab().families.clone(),
        sample_rate: m.dsp.sample_rate,
        gram_shape: [m.dsp.n_mels, m.dsp.n_frames],
        model_version: format!("spectro {}", env!("CARGO_PKG_VERSION")),
        sessions: state.session_count(),
    }))
}

pub(crate) async fn sample(State(state): Shared, body: Bytes) -> Result<Json<SessionPayload>, ApiError> {
    let m = state.require_models()?;
    let req: SampleRequest = parse_json(&body)?;
    let labels = labels(&m, req.pitch, &req.instrument)?;
    let cfg = sampler(req.seed, req.top_p, req.temperature)?;
    let st = state.clone();
    blocking(move || {
        let codes = m.engine().generate(labels, &cfg)?;
        let s = st.insert(codes, labels);
        payload(&m, &s)
    })
    .await
    .map(Json)
}

pub(crate) async fn analyze(State(state): Shared, mut form: Multipart) -> Result<Json<SessionPayload>, ApiError> {
    let m = state.require_models()?;
    let mut audio = None;
    let mut pitch = 60u8;
    let mut instrument = InstrumentRef::Index(0);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?;
        let text = || String::from_utf8_lossy(&data).trim().to_string();
        match name.as_str() {
            "pitch" => {
                pitch = text()
                    .parse()
                    .map_err(|_| ApiError::bad_request(format!("pitch `{}` is not a number", text())))?
            }
            "instrument" => {
                let t = text();
                instrument = t.parse().map_or(InstrumentRef::Name(t), InstrumentRef::Index);
            }
            _ => audio = Some(data),
        }
    }
    let audio = audio.ok_or_else(|| ApiError::bad_request("no audio file in the upload"))?;
    let labels = labels(&m, pitch, &instrument)?;
    let st = state.clone();
    blocking(move || {
        let wave = decode_wav(&audio)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("undecodable audio: {e}")))?;
        let codes = m
            .analyze(&wave)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("cannot analyze audio: {e}")))?;
        let s = st.insert(codes, labels);
        payload(&m, &s)
    })
    .await
    .map(Json)
}

pub(crate) async fn inpaint(
    State(state): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionPayload>, ApiError> {
    let m = state.require_models()?;
    let req: InpaintRequest = parse_json(&body)?;
    let lease = state.lease(&id)?;
    let labels = labels(&m, req.pitch, &req.instrument)?;
    let cfg = sampler(req.seed, req.top_p, req.temperature)?;
    let region = RegionSelection {
        level: req.level,
        freq_range: req.freq_start..req.freq_end,
        time_range: req.time_start..req.time_end,
    };
    region.validate(&m.hierarchy())?;
    blocking(move || {
        let current = lease.slot().session.lock().expect("session").clone();
        let codes = m.engine().inpaint(&current.codes, &region, labels, &cfg)?;
        let updated = {
            let mut s = lease.slot().session.lock().expect("session");
            s.codes = codes;
            s.labels = labels;
            s.updated = now();
            s.clone()
        };
        drop(lease);
        payload(&m, &updated)
    })
    .await
    .map(Json)
}

pub(crate) async fn get_session(State(state): Shared, Path(id): Path<String>) -> Result<Json<SessionPayload>, ApiError> {
    let m = state.require_models()?;
    let s = state.get(&id)?;
    blocking(move || payload(&m, &s)).await.map(Json)
}

pub(crate) async fn audio(State(state): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let m = state.require_models()?;
    let s = state.get(&id)?;
    let bytes = blocking(move || {
        let (_, wave) = m.render(&s.codes)?;
        Ok(encode_wav(&wave)?)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

pub(crate) async fn remove(State(state): Shared, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}
