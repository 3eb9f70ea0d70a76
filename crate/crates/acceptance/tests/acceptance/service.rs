//! HTTP contract against the trained models: analyze, audio, inpaint at
//! both levels, and the error statuses.

use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use spectro_core::bundle::ModelBundle;
use spectro_core::config::RunConfig;
use spectro_core::dataset::synth_note;
use spectro_core::dsp::wav::{decode_wav, encode_wav, Waveform};
use spectro_core::lm::LabelVocab;
use spectro_core::pipeline::init_bundle;
use spectro_service::{load_registry, router, AppState, SessionPayload};
use tower::ServiceExt;

use crate::Outcome;

type Reply = (StatusCode, Vec<u8>);

async fn send(app: &Router, req: Request<Body>) -> Result<Reply, String> {
    let resp = tri!(app.clone().oneshot(req).await);
    let status = resp.status();
    Ok((status, tri!(resp.into_body().collect().await).to_bytes().to_vec()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> Result<Reply, String> {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => tri!(req.header("content-type", "application/json").body(Body::from(b))),
        None => tri!(req.body(Body::empty())),
    };
    send(app, req).await
}

fn multipart(wav: &[u8], pitch: u8) -> Result<Request<Body>, String> {
    let b = "acceptanceboundary";
    let mut body = format!(
        "--{b}\r\nContent-Disposition: form-data; name=\"pitch\"\r\n\r\n{pitch}\r\n\
         --{b}\r\nContent-Disposition: form-data; name=\"instrument\"\r\n\r\n0\r\n\
         --{b}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"note.wav\"\r\nContent-Type: audio/wav\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(wav);
    body.extend_from_slice(format!("\r\n--{b}--\r\n").as_bytes());
    Ok(tri!(Request::builder()
        .method("POST")
        .uri("/sessions/analyze")
        .header("content-type", format!("multipart/form-data; boundary={b}"))
        .body(Body::from(body))))
}

fn region(level: &str, f: (usize, usize), t: (usize, usize), seed: u64) -> Value {
    json!({
        "level": level, "freq_start": f.0, "freq_end": f.1, "time_start": t.0, "time_end": t.1,
        "pitch": 60, "instrument": 1, "seed": seed
    })
}

fn payload(reply: &Reply, what: &str) -> Result<SessionPayload, String> {
    check!(
        reply.0 == StatusCode::OK,
        "{what}: status {} ({})",
        reply.0,
        String::from_utf8_lossy(&reply.1)
    );
    Ok(tri!(serde_json::from_slice(&reply.1)))
}

fn outside(grid: &[Vec<usize>], other: &[Vec<usize>], f: (usize, usize), t: (usize, usize)) -> bool {
    grid.iter().enumerate().all(|(r, row)| {
        row.iter()
            .enumerate()
            .all(|(c, &x)| (f.0..f.1).contains(&r) && (t.0..t.1).contains(&c) || other[r][c] == x)
    })
}

async fn contract(app: Router, cfg: &RunConfig) -> Result<String, String> {
    let h = cfg.vqvae.hierarchy();
    let (df, dt) = cfg.vqvae.top_downsample;

    let dur = cfg.dsp.note_samples() as f64 / cfg.dsp.sample_rate as f64;
    let note = tri!(synth_note(62, 0, dur, cfg.dsp.sample_rate, 77));
    let wav = tri!(encode_wav(&Waveform {
        samples: note.waveform.clone(),
        sample_rate: note.sample_rate,
    }));
    let p = payload(&send(&app, multipart(&wav, 62)?).await?, "analyze")?;
    let id = p.session_id.clone();

    let (s, audio) = call(&app, "GET", &format!("/sessions/{id}/audio"), None).await?;
    check!(s == StatusCode::OK, "audio: status {s}");
    let back = tri!(decode_wav(&audio));
    let hop = cfg.dsp.hop as f64 / cfg.dsp.sample_rate as f64;
    check!(
        (back.duration_secs() - note.duration).abs() <= hop,
        "audio lasts {:.4}s for a {:.4}s upload",
        back.duration_secs(),
        note.duration
    );

    let (f, t) = ((2, 6), (0, 1));
    let t0 = Instant::now();
    let q = payload(&call(&app, "POST", &format!("/sessions/{id}/inpaint"), Some(region("top", f, t, 5).to_string())).await?, "top inpaint")?;
    let latency = t0.elapsed();
    check!(latency < Duration::from_secs(2), "top inpaint took {latency:?}");
    check!(outside(&p.top, &q.top, f, t), "top inpaint changed top cells outside the region");
    check!(
        outside(&p.bottom, &q.bottom, (f.0 * df, f.1 * df), (t.0 * dt, t.1 * dt)),
        "top inpaint changed bottom cells outside the covered patches"
    );

    let (bf, bt) = ((3, 9), (1, 3));
    let r = payload(&call(&app, "POST", &format!("/sessions/{id}/inpaint"), Some(region("bottom", bf, bt, 6).to_string())).await?, "bottom inpaint")?;
    check!(r.top == q.top, "bottom inpaint modified the top codes");
    check!(outside(&q.bottom, &r.bottom, bf, bt), "bottom inpaint changed cells outside the region");

    let uri = format!("/sessions/{id}/inpaint");
    for (body, what) in [
        ("{not json".to_string(), "malformed JSON"),
        (region("top", (0, h.top_shape.0 + 1), (0, 1), 0).to_string(), "region past the grid"),
        (region("bottom", (4, 4), (0, 1), 0).to_string(), "empty region"),
    ] {
        let (s, _) = call(&app, "POST", &uri, Some(body)).await?;
        check!(s == StatusCode::BAD_REQUEST, "{what}: status {s}, want 400");
    }
    let (s, _) = call(&app, "POST", "/sessions/missing/inpaint", Some(region("top", f, t, 0).to_string())).await?;
    check!(s == StatusCode::NOT_FOUND, "unknown session: status {s}, want 404");

    let full = region("top", (0, h.top_shape.0), (0, h.top_shape.1), 9).to_string();
    let tasks: Vec<_> = (0..6)
        .map(|_| {
            let (app, uri, body) = (app.clone(), uri.clone(), full.clone());
            tokio::spawn(async move { call(&app, "POST", &uri, Some(body)).await })
        })
        .collect();
    let (mut ok, mut conflict) = (0, 0);
    for task in tasks {
        match tri!(task.await)?.0 {
            StatusCode::OK => ok += 1,
            StatusCode::CONFLICT => conflict += 1,
            s => return Err(format!("concurrent inpaint: unexpected status {s}")),
        }
    }
    check!(ok >= 1 && conflict >= 1, "6 concurrent inpaints gave {ok} OK and {conflict} conflicts");

    Ok(format!(
        "analyze+audio duration within one hop; top inpaint {:.0} ms with complements kept; bottom inpaint leaves top intact; \
         400/404 on bad input; {conflict}/6 concurrent inpaints answered 409",
        latency.as_secs_f64() * 1e3
    ))
}

pub fn run(trained: Option<&ModelBundle>) -> Outcome {
    let cfg = RunConfig::toy();
    let dir = tri!(tempfile::tempdir());
    // The HTTP contract does not depend on model quality.
    let note = match trained {
        Some(b) => {
            tri!(b.save(dir.path()));
            "trained models"
        }
        None => {
            let vocab = LabelVocab::synthetic();
            tri!(tri!(init_bundle(&cfg, &vocab)).save(dir.path()));
            "untrained models"
        }
    };
    let loaded = tri!(load_registry(dir.path()));
    let app = router(AppState::new(Some(loaded)));
    let rt = tri!(tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build());
    let text = rt.block_on(contract(app, &cfg))?;
    Ok(format!("{text} ({note})"))
}
