use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use realfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::protocol::{decode_wav, encode_request};
use crate::error::{invalid, Error, Result};
use crate::features::{mel_filterbank, MelConfig, MelSpectrogram, Stft, Waveform, HOP_LENGTH, N_FFT, SAMPLE_RATE};
use crate::rng::SeededRng;

/// Which backend turns mel frames into audio. Exactly one is active per handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum VocoderConfig {
    /// Iterative phase reconstruction from a pseudo-inverted mel filterbank.
    Internal { iterations: usize },
    /// A process or HTTP service speaking the `UMEL` request / WAV response protocol.
    External {
        transport: Transport,
        timeout_secs: f64,
        max_in_flight: usize,
    },
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self::Internal { iterations: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// POST the request body to this URL.
    Http(String),
    /// Spawn `program args...` per request; the request goes to stdin, the WAV comes from stdout.
    Pipe(Vec<String>),
}

/// A configured vocoder. Clones share the in-flight limit.
#[derive(Debug, Clone)]
pub struct VocoderHandle {
    config: VocoderConfig,
    slots: Arc<Slots>,
}

impl VocoderHandle {
    pub fn new(config: VocoderConfig) -> Result<Self> {
        let slots = match &config {
            VocoderConfig::Internal { iterations } => {
                if *iterations == 0 {
                    return Err(invalid!("spectral inversion needs at least one iteration"));
                }
                1
            }
            VocoderConfig::External {
                transport,
                timeout_secs,
                max_in_flight,
            } => {
                if !(timeout_secs.is_finite() && *timeout_secs > 0.0) || *max_in_flight == 0 {
                    return Err(invalid!("external vocoder needs a positive timeout and in-flight limit"));
                }
                if matches!(transport, Transport::Pipe(cmd) if cmd.is_empty()) {
                    return Err(invalid!("pipe transport needs a program"));
                }
                *max_in_flight
            }
        };
        Ok(Self {
            config,
            slots: Arc::new(Slots::new(slots)),
        })
    }

    pub fn internal() -> Self {
        Self::new(VocoderConfig::default()).expect("default config is valid")
    }

    pub fn config(&self) -> &VocoderConfig {
        &self.config
    }

    pub fn backend_name(&self) -> &'static str {
        match &self.config {
            VocoderConfig::Internal { .. } => "internal",
            VocoderConfig::External {
                transport: Transport::Http(_),
                ..
            } => "external-http",
            VocoderConfig::External {
                transport: Transport::Pipe(_),
                ..
            } => "external-pipe",
        }
    }
}

/// Waveform for a mel spectrogram. External failures are reported, never papered over
/// with the internal backend.
pub fn vocode(mel: &MelSpectrogram, v: &VocoderHandle) -> Result<Waveform> {
    match &v.config {
        VocoderConfig::Internal { iterations } => griffin_lim(mel, *iterations),
        VocoderConfig::External {
            transport,
            timeout_secs,
            ..
        } => {
            let backend = v.backend_name();
            let fail = |msg: String| Error::Vocoder { backend, msg };
            let _slot = v.slots.acquire();
            let timeout = Duration::from_secs_f64(*timeout_secs);
            let body = encode_request(mel);
            let reply = match transport {
                Transport::Http(url) => http_request(url, &body, timeout),
                Transport::Pipe(cmd) => pipe_request(cmd, &body, timeout),
            }
            .map_err(fail)?;
            let wave = decode_wav(&reply).map_err(|e| fail(e.to_string()))?;
            let expected = mel.num_frames() * HOP_LENGTH;
            if wave.sample_rate != SAMPLE_RATE || wave.len().abs_diff(expected) > HOP_LENGTH {
                return Err(fail(format!(
                    "returned {} samples at {} Hz, expected {expected} at {SAMPLE_RATE} Hz",
                    wave.len(),
                    wave.sample_rate
                )));
            }
            Ok(wave)
        }
    }
}

fn http_request(url: &str, body: &[u8], timeout: Duration) -> std::result::Result<Vec<u8>, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let mut resp = agent
        .post(url)
        .header("content-type", "application/octet-stream")
        .send(body)
        .map_err(|e| e.to_string())?;
    resp.body_mut()
        .with_config()
        .limit(1 << 30)
        .read_to_vec()
        .map_err(|e| e.to_string())
}

fn pipe_request(cmd: &[String], body: &[u8], timeout: Duration) -> std::result::Result<Vec<u8>, String> {
    let mut child = Command::new(&cmd[0])
        .args(&cmd[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot start `{}`: {e}", cmd[0]))?;
    let mut stdin = child.stdin.take().expect("stdin is piped");
    let mut stdout = child.stdout.take().expect("stdout is piped");
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let body = body.to_vec();
    // separate threads so a full pipe on either side cannot deadlock
    let writer = std::thread::spawn(move || stdin.write_all(&body));
    let reader = std::thread::spawn(move || {
        let mut out = Vec::new();
        stdout.read_to_end(&mut out).map(|_| out)
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait().map_err(|e| e.to_string())? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("timed out after {:.1} s", timeout.as_secs_f64()));
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };
    let _ = writer.join();
    let out = reader.join().map_err(|_| "reader thread panicked".to_string())?;
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(format!("exited with {status}: {}", err.trim()));
    }
    out.map_err(|e| e.to_string())
}

/// Counting semaphore bounding concurrent external requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Minimum-norm `(513, 80)` inverse of the mel filterbank.
fn filterbank_pinv() -> &'static DMatrix<f64> {
    static PINV: OnceLock<DMatrix<f64>> = OnceLock::new();
    PINV.get_or_init(|| {
        let fb = mel_filterbank(&MelConfig::default());
        let m = DMatrix::from_fn(fb.len(), fb[0].len(), |r, c| fb[r][c]);
        m.pseudo_inverse(1e-10).expect("filterbank has full row rank")
    })
}

/// Griffin-Lim phase reconstruction; returns exactly `T * 256` samples.
///
/// The initial phase comes from a fixed seed, so output is deterministic.
pub fn griffin_lim(mel: &MelSpectrogram, iterations: usize) -> Result<Waveform> {
    if iterations == 0 {
        return Err(invalid!("spectral inversion needs at least one iteration"));
    }
    let pinv = filterbank_pinv();
    let frames = mel.num_frames();
    let stft = Stft::new(N_FFT, HOP_LENGTH);
    let bins = stft.num_bins();
    let magnitude: Vec<Vec<f64>> = (0..frames)
        .map(|t| {
            let power = DMatrix::from_iterator(mel.frame(t).len(), 1, mel.frame(t).iter().map(|&v| (v as f64).exp()));
            (pinv * power).iter().map(|p| p.max(0.0).sqrt()).collect()
        })
        .collect();
    let mut rng = SeededRng::new(0);
    let mut phase: Vec<Vec<Complex<f64>>> = (0..frames)
        .map(|_| {
            (0..bins)
                .map(|_| Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * rng.uniform()))
                .collect()
        })
        .collect();
    let mut samples = Vec::new();
    for it in 0..iterations {
        let spec: Vec<Vec<Complex<f64>>> = magnitude
            .iter()
            .zip(&phase)
            .map(|(m, p)| m.iter().zip(p).map(|(a, u)| u * a).collect())
            .collect();
        samples = stft.inverse(&spec);
        if it + 1 < iterations {
            for (p, frame) in phase.iter_mut().zip(stft.forward(&samples)) {
                for (u, c) in p.iter_mut().zip(frame) {
                    let n = c.norm();
                    *u = if n > 1e-12 { c / n } else { Complex::new(1.0, 0.0) };
                }
            }
        }
    }
    debug_assert_eq!(samples.len(), frames * HOP_LENGTH);
    Waveform::new(samples.iter().map(|&s| s.clamp(-1.0, 1.0) as f32).collect(), SAMPLE_RATE)
}
