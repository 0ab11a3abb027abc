//! Synthetic six-action video generator.
//!
//! Renders an articulated stick figure performing each action over a
//! textured background, with per-subject body proportions, contrast and
//! tempo, and per-repetition direction, phase and position. The output has
//! the same on-disk shape as a pre-decoded KTH scenario: one PGM per frame
//! plus a JSON manifest.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use super::pgm::write_pgm;
use super::{load_manifest, make_split, Action, Manifest, Resolution, SequenceMeta, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub subjects: u32,
    pub repetitions: u32,
    pub min_frames: usize,
    pub max_frames: usize,
    pub resolution: Resolution,
    pub seed: u64,
    pub train_fraction: f64,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 5,
            repetitions: 4,
            min_frames: 24,
            max_frames: 48,
            resolution: Resolution::default(),
            seed: 1,
            train_fraction: 0.75,
            noise_sigma: 3.0,
        }
    }
}

/// Writes frames under `root/frames` and the manifest to
/// `root/manifest.json`, then loads it back.
pub fn generate_dataset(root: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if cfg.subjects == 0 || cfg.repetitions == 0 {
        return Err(Error::Config("synthetic dataset needs subjects and repetitions".into()));
    }
    if cfg.min_frames == 0 || cfg.min_frames > cfg.max_frames {
        return Err(Error::Config("invalid frame-count range".into()));
    }
    let frames_dir = root.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let mut sequences = Vec::new();
    for subject in 1..=cfg.subjects {
        let body = Subject::draw(&mut SeededRng::new(derive_seed(
            cfg.seed,
            &format!("synth/subject/{subject}"),
        )));
        for action in Action::ALL {
            for repetition in 1..=cfg.repetitions {
                let id = format!(
                    "person{subject:02}_{}_d{repetition}",
                    action.name().to_ascii_lowercase()
                );
                let mut rng = SeededRng::new(derive_seed(cfg.seed, &format!("synth/{id}")));
                let span = (cfg.max_frames - cfg.min_frames) as u64 + 1;
                let frame_count = cfg.min_frames + rng.below(span) as usize;
                let seq = SequenceMeta {
                    sequence_id: id.clone(),
                    subject,
                    action,
                    repetition,
                    frame_count,
                    split: Split::Train,
                    frame_filename_pattern: format!("{id}/frame_{{index:04}}.pgm"),
                };
                let dir = frames_dir.join(&id);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let clip = Clip::new(&body, action, frame_count, cfg, &mut rng);
                for t in 0..frame_count {
                    let px = clip.render(t, cfg, &mut rng);
                    write_pgm(
                        &frames_dir.join(seq.frame_filename(t)),
                        cfg.resolution.width,
                        cfg.resolution.height,
                        &px,
                    )?;
                }
                sequences.push(seq);
            }
        }
    }
    let split_seed = derive_seed(cfg.seed, "split");
    let manifest = Manifest {
        resolution: cfg.resolution,
        frame_store_root: PathBuf::from("frames"),
        split_seed,
        sequences: make_split(&sequences, cfg.train_fraction, split_seed),
    };
    let path = root.join("manifest.json");
    manifest.save(&path)?;
    load_manifest(&path)
}

struct Subject {
    scale: f64,
    ink: f64,
    background: f64,
    tempo: f64,
    speed: f64,
    texture: Vec<(f64, f64, f64, f64)>,
}

impl Subject {
    fn draw(rng: &mut SeededRng) -> Subject {
        let texture = (0..6)
            .map(|_| {
                (
                    rng.unit(),
                    0.55 + 0.45 * rng.unit(),
                    0.05 + 0.1 * rng.unit(),
                    12.0 * rng.symmetric(),
                )
            })
            .collect();
        Subject {
            scale: 0.88 + 0.24 * rng.unit(),
            ink: 35.0 + 45.0 * rng.unit(),
            background: 140.0 + 50.0 * rng.unit(),
            tempo: 0.88 + 0.24 * rng.unit(),
            speed: 0.88 + 0.24 * rng.unit(),
            texture,
        }
    }
}

/// Per-repetition rendering parameters.
struct Clip<'a> {
    body: &'a Subject,
    action: Action,
    direction: f64,
    phase0: f64,
    x_start: f64,
    y_shift: f64,
    unit: f64,
}

#[derive(Default)]
struct Pose {
    lean: f64,
    bounce: f64,
    // Side view: angles from the downward vertical, positive forward.
    legs: [(f64, f64); 2],
    arms: [(f64, f64); 2],
    frontal: bool,
    // Frontal view: hand targets relative to the shoulder line centre.
    hands: Option<[(f64, f64); 2]>,
}

impl<'a> Clip<'a> {
    fn new(
        body: &'a Subject,
        action: Action,
        frames: usize,
        cfg: &SynthConfig,
        rng: &mut SeededRng,
    ) -> Self {
        let w = cfg.resolution.width as f64;
        let unit = cfg.resolution.height as f64 / 120.0;
        let direction = if rng.unit() < 0.5 { 1.0 } else { -1.0 };
        let travel = Self::speed(action) * body.speed * unit * frames as f64;
        let jitter = 10.0 * unit * rng.symmetric();
        let x_start = w / 2.0 - direction * travel / 2.0 + jitter;
        Clip {
            body,
            action,
            direction,
            phase0: 2.0 * PI * rng.unit(),
            x_start,
            y_shift: 4.0 * unit * rng.symmetric(),
            unit,
        }
    }

    fn speed(action: Action) -> f64 {
        match action {
            Action::Walking => 1.0,
            Action::Jogging => 2.0,
            Action::Running => 3.2,
            _ => 0.0,
        }
    }

    fn frequency(action: Action) -> f64 {
        match action {
            Action::Walking => 0.085,
            Action::Jogging => 0.13,
            Action::Running => 0.165,
            Action::Boxing => 0.11,
            Action::HandClapping => 0.14,
            Action::HandWaving => 0.1,
        }
    }

    fn pose(&self, p: f64) -> Pose {
        let deg = PI / 180.0;
        let s = p.sin();
        let gait = |leg_amp: f64, knee: f64, arm_amp: f64, elbow: f64, lean: f64, bounce: f64| {
            let leg = |sgn: f64| {
                let thigh = sgn * leg_amp * s;
                // Knee flexes while the leg swings back.
                let flex = knee * (0.5 - 0.5 * (sgn * s)).max(0.0);
                (thigh, thigh - flex)
            };
            let arm = |sgn: f64| {
                let upper = -sgn * arm_amp * s;
                (upper, upper + elbow)
            };
            Pose {
                lean,
                bounce: bounce * (2.0 * p).cos().abs(),
                legs: [leg(1.0), leg(-1.0)],
                arms: [arm(1.0), arm(-1.0)],
                ..Pose::default()
            }
        };
        match self.action {
            Action::Walking => gait(24.0 * deg, 20.0 * deg, 18.0 * deg, 12.0 * deg, 2.0 * deg, 0.5),
            Action::Jogging => gait(36.0 * deg, 55.0 * deg, 26.0 * deg, 80.0 * deg, 9.0 * deg, 1.5),
            Action::Running => gait(52.0 * deg, 85.0 * deg, 42.0 * deg, 95.0 * deg, 18.0 * deg, 2.5),
            Action::Boxing => {
                let punch = |e: f64| {
                    let e = e.max(0.0).powf(0.7);
                    let guard = (35.0 * deg, 150.0 * deg);
                    let jab = (88.0 * deg, 90.0 * deg);
                    (guard.0 + e * (jab.0 - guard.0), guard.1 + e * (jab.1 - guard.1))
                };
                Pose {
                    lean: 6.0 * deg,
                    legs: [(14.0 * deg, 8.0 * deg), (-14.0 * deg, -8.0 * deg)],
                    arms: [punch(s), punch(-s)],
                    ..Pose::default()
                }
            }
            Action::HandClapping => {
                let open = 2.0 + 13.0 * (0.5 + 0.5 * s);
                Pose {
                    frontal: true,
                    legs: [(9.0 * deg, 9.0 * deg), (-9.0 * deg, -9.0 * deg)],
                    hands: Some([(-open, 12.0), (open, 12.0)]),
                    ..Pose::default()
                }
            }
            Action::HandWaving => {
                let a = (125.0 + 35.0 * s) * deg;
                Pose {
                    frontal: true,
                    legs: [(9.0 * deg, 9.0 * deg), (-9.0 * deg, -9.0 * deg)],
                    arms: [(a, a + 15.0 * deg), (a, a + 15.0 * deg)],
                    ..Pose::default()
                }
            }
        }
    }

    fn render(&self, t: usize, cfg: &SynthConfig, rng: &mut SeededRng) -> Vec<u8> {
        let (h, w) = (cfg.resolution.height, cfg.resolution.width);
        let b = self.body;
        let k = self.unit * b.scale;
        let p = self.phase0 + 2.0 * PI * Self::frequency(self.action) * b.tempo * t as f64;
        let pose = self.pose(p);
        let d = self.direction;

        let x = self.x_start + d * Self::speed(self.action) * b.speed * self.unit * t as f64;
        let ground = 0.9 * h as f64 + self.y_shift;
        let (thigh, shin, torso, upper, fore, head) =
            (15.0 * k, 15.0 * k, 22.0 * k, 12.0 * k, 11.0 * k, 5.0 * k);
        let hip = (x, ground - (thigh + shin) * 0.97 - pose.bounce * self.unit);
        let neck = (
            hip.0 + d * torso * pose.lean.sin(),
            hip.1 - torso * pose.lean.cos(),
        );
        let head_c = (
            neck.0 + d * (head + 1.5 * k) * pose.lean.sin(),
            neck.1 - (head + 1.5 * k) * pose.lean.cos(),
        );
        let shoulder = (
            hip.0 + d * 0.85 * torso * pose.lean.sin(),
            hip.1 - 0.85 * torso * pose.lean.cos(),
        );

        let mut shapes: Vec<Shape> = Vec::with_capacity(12);
        shapes.push(Shape::Segment(hip, neck, 5.0 * k));
        shapes.push(Shape::Disk(head_c, head));
        // `side` is the lateral sign for frontal views and the swing
        // direction for side views.
        let limb = |from: (f64, f64), a: f64, len: f64, side: f64| {
            (from.0 + side * len * a.sin(), from.1 + len * a.cos())
        };
        for (i, &(ta, sa)) in pose.legs.iter().enumerate() {
            let side = if pose.frontal { if i == 0 { -1.0 } else { 1.0 } } else { d };
            let root = if pose.frontal {
                (hip.0 + side * 3.0 * k, hip.1)
            } else {
                hip
            };
            let knee = limb(root, ta.abs() * if pose.frontal { 1.0 } else { ta.signum() }, thigh, side);
            let foot = limb(knee, sa.abs() * if pose.frontal { 1.0 } else { sa.signum() }, shin, side);
            shapes.push(Shape::Segment(root, knee, 3.5 * k));
            shapes.push(Shape::Segment(knee, foot, 3.0 * k));
        }
        if let Some(hands) = pose.hands {
            for (i, &(hx, hy)) in hands.iter().enumerate() {
                let side = if i == 0 { -1.0 } else { 1.0 };
                let sh = (shoulder.0 + side * 5.0 * k, shoulder.1);
                let elbow = (sh.0 + side * 7.0 * k, sh.1 + 9.0 * k);
                let hand = (shoulder.0 + hx * k, shoulder.1 + hy * k);
                shapes.push(Shape::Segment(sh, elbow, 3.0 * k));
                shapes.push(Shape::Segment(elbow, hand, 2.6 * k));
            }
        } else {
            for (i, &(ua, fa)) in pose.arms.iter().enumerate() {
                let side = if pose.frontal { if i == 0 { -1.0 } else { 1.0 } } else { d };
                let sh = if pose.frontal {
                    (shoulder.0 + side * 5.0 * k, shoulder.1)
                } else {
                    shoulder
                };
                let elbow = limb(sh, ua, upper, side);
                let hand = limb(elbow, fa, fore, side);
                shapes.push(Shape::Segment(sh, elbow, 3.0 * k));
                shapes.push(Shape::Segment(elbow, hand, 2.6 * k));
            }
        }

        let mut out = vec![0u8; h * w];
        for yy in 0..h {
            for xx in 0..w {
                let (px, py) = (xx as f64 + 0.5, yy as f64 + 0.5);
                let mut bg = b.background + 18.0 * (py / h as f64 - 0.5);
                for &(cx, cy, r, amp) in &b.texture {
                    let dx = (px / w as f64 - cx) / r;
                    let dy = (py / h as f64 - cy) / r;
                    bg += amp * (-(dx * dx + dy * dy)).exp();
                }
                let cover = shapes
                    .iter()
                    .map(|s| s.coverage(px, py))
                    .fold(0.0f64, f64::max);
                let v = bg * (1.0 - cover) + b.ink * cover + cfg.noise_sigma * rng.normal();
                out[yy * w + xx] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }
}

enum Shape {
    Segment((f64, f64), (f64, f64), f64),
    Disk((f64, f64), f64),
}

impl Shape {
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (dist, half) = match *self {
            Shape::Segment(a, b, thick) => {
                let (vx, vy) = (b.0 - a.0, b.1 - a.1);
                let len2 = vx * vx + vy * vy;
                let t = if len2 > 0.0 {
                    (((x - a.0) * vx + (y - a.1) * vy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (a.0 + t * vx - x, a.1 + t * vy - y);
                ((qx * qx + qy * qy).sqrt(), thick / 2.0)
            }
            Shape::Disk(c, r) => (((c.0 - x).powi(2) + (c.1 - y).powi(2)).sqrt(), r),
        };
        (half + 0.5 - dist).clamp(0.0, 1.0)
    }
}
