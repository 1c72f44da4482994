//! Synthetic labeled clips for the desk-scale test suites.
//!
//! Violence clips show two blobs approaching each other and colliding with
//! positional jitter; non-violence clips hold a single static or slowly
//! drifting blob. The classes are separable by construction, which makes
//! them a usable overfit oracle.

use crate::rng::{derive_seed, Rng};
use crate::video::{Label, RawFrame, VideoClip};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Square frame side. Larger than the training crop so random cropping
    /// stays meaningful.
    pub frame_size: usize,
    pub frames_per_clip: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_size: 40,
            frames_per_clip: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Two blobs moving toward each other, then colliding with jitter.
    Violence,
    /// One motionless blob: every frame is identical.
    Static,
    /// One blob drifting slowly.
    Drift,
}

impl SynthKind {
    pub fn label(self) -> Label {
        match self {
            SynthKind::Violence => Label::Violence,
            SynthKind::Static | SynthKind::Drift => Label::NonViolence,
        }
    }
}

struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    color: [f64; 3],
}

fn render(size: usize, blobs: &[Blob]) -> RawFrame {
    let mut pixels = vec![0u8; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0f64; 3];
            for b in blobs {
                let dx = x as f64 - b.x;
                let dy = y as f64 - b.y;
                let w = (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
                for (a, color) in acc.iter_mut().zip(&b.color) {
                    *a += w * color;
                }
            }
            for (c, a) in acc.iter().enumerate() {
                pixels[(y * size + x) * 3 + c] = a.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RawFrame {
        width: size,
        height: size,
        pixels,
    }
}

/// One deterministic clip of the requested kind.
pub fn generate_clip(kind: SynthKind, cfg: &SynthConfig, seed: u64) -> VideoClip {
    let mut rng = Rng::new(seed);
    let size = cfg.frame_size as f64;
    let mid = size / 2.0;
    // Blob travel stays inside the centered 60% of the frame so every crop
    // origin keeps the action in view.
    let lane = size * 0.12;

    let frames = match kind {
        SynthKind::Violence => {
            let cy_a = mid + rng.uniform(-2.0, 2.0);
            let cy_b = mid + rng.uniform(-2.0, 2.0);
            let sigma_a = 2.0 + rng.uniform(0.0, 0.8);
            let sigma_b = 2.0 + rng.uniform(0.0, 0.8);
            let mut ax = mid - lane;
            let mut bx = mid + lane;
            let speed = 2.0 * lane / (cfg.frames_per_clip as f64 * 0.55);
            let mut frames = Vec::with_capacity(cfg.frames_per_clip);
            for _ in 0..cfg.frames_per_clip {
                let colliding = bx - ax < 3.0;
                let (ja, jb) = if colliding {
                    (
                        (rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)),
                        (rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)),
                    )
                } else {
                    ((0.0, 0.0), (0.0, 0.0))
                };
                frames.push(render(
                    cfg.frame_size,
                    &[
                        Blob {
                            x: ax + ja.0,
                            y: cy_a + ja.1,
                            sigma: sigma_a,
                            color: [235.0, 120.0, 90.0],
                        },
                        Blob {
                            x: bx + jb.0,
                            y: cy_b + jb.1,
                            sigma: sigma_b,
                            color: [90.0, 140.0, 235.0],
                        },
                    ],
                ));
                if !colliding {
                    ax += speed / 2.0;
                    bx -= speed / 2.0;
                }
            }
            frames
        }
        SynthKind::Static => {
            let blob = Blob {
                x: mid + rng.uniform(-3.0, 3.0),
                y: mid + rng.uniform(-3.0, 3.0),
                sigma: 2.2 + rng.uniform(0.0, 0.8),
                color: [200.0, 210.0, 120.0],
            };
            let frame = render(cfg.frame_size, &[blob]);
            vec![frame; cfg.frames_per_clip]
        }
        SynthKind::Drift => {
            let mut x = mid + rng.uniform(-3.0, 3.0);
            let mut y = mid + rng.uniform(-3.0, 3.0);
            let sigma = 2.2 + rng.uniform(0.0, 0.8);
            let angle = rng.uniform(0.0, std::f64::consts::TAU);
            let (dy, dx) = angle.sin_cos();
            let step = 0.18;
            let mut frames = Vec::with_capacity(cfg.frames_per_clip);
            for _ in 0..cfg.frames_per_clip {
                frames.push(render(
                    cfg.frame_size,
                    &[Blob {
                        x,
                        y,
                        sigma,
                        color: [200.0, 210.0, 120.0],
                    }],
                ));
                x += step * dx;
                y += step * dy;
            }
            frames
        }
    };

    VideoClip {
        frames,
        label: kind.label(),
        source_id: format!("synth-{kind:?}-{seed}"),
    }
}

/// A balanced dataset: `n` clips, half violence, half non-violence
/// (alternating static and drifting). `n` must be even.
pub fn generate_dataset(n: usize, cfg: &SynthConfig, seed: u64) -> crate::Result<Vec<VideoClip>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(crate::Error::InvalidArgument(format!(
            "synthetic dataset size must be even and positive, got {n}"
        )));
    }
    let mut clips = Vec::with_capacity(n);
    for i in 0..n {
        let kind = if i % 2 == 0 {
            SynthKind::Violence
        } else if i % 4 == 1 {
            SynthKind::Static
        } else {
            SynthKind::Drift
        };
        clips.push(generate_clip(kind, cfg, derive_seed(seed, i as u64)));
    }
    Ok(clips)
}
