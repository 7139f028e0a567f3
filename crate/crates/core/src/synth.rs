//! Synthetic thermal-like sequences: a Gaussian-profile target drifting
//! over a noisy background, optional dimmer distractor blobs, and an
//! occluder schedule that blanks the target while ground truth continues.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::bbox::BBox;
use crate::config::parse_kv_lines;
use crate::error::{CoreError, Result};
use crate::image::GrayImage;
use crate::tensor::normal;

/// One moving blob.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub intensity: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background: f64,
    pub noise: f64,
    pub target: Blob,
    /// Per-frame multiplicative growth of the target extents.
    pub scale_drift: f64,
    pub distractors: Vec<Blob>,
    /// Inclusive 1-indexed frame ranges during which the target is hidden.
    pub occluders: Vec<(usize, usize)>,
    pub seed: u64,
}

impl SynthScene {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(CoreError::contract("SynthScene", "empty scene"));
        }
        if self.target.w <= 0.0 || self.target.h <= 0.0 {
            return Err(CoreError::contract("SynthScene", "target extents must be positive"));
        }
        Ok(())
    }

    /// Target state at frame `f` (0-indexed).
    fn target_at(&self, f: usize) -> Blob {
        let t = f as f64;
        let growth = (1.0 + self.scale_drift).powi(f as i32);
        Blob {
            cx: self.target.cx + self.target.vx * t,
            cy: self.target.cy + self.target.vy * t,
            w: self.target.w * growth,
            h: self.target.h * growth,
            ..self.target
        }
    }

    fn occluded(&self, f: usize) -> bool {
        let frame1 = f + 1;
        self.occluders.iter().any(|&(a, b)| (a..=b).contains(&frame1))
    }

    // ── Scene file format: `key = value`, repeated keys for lists ────

    pub fn from_str(text: &str, what: &str) -> Result<Self> {
        let mut scene = SynthScene {
            width: 160,
            height: 120,
            frames: 24,
            background: 0.2,
            noise: 0.05,
            target: Blob { cx: 80.0, cy: 60.0, w: 14.0, h: 14.0, intensity: 0.8, vx: 1.0, vy: 0.5 },
            scale_drift: 0.0,
            distractors: Vec::new(),
            occluders: Vec::new(),
            seed: 0,
        };
        let blob = |value: &str| -> Result<Blob> {
            let parts: Vec<f64> = value
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CoreError::malformed(what, format!("bad blob spec {value:?}")))?;
            if parts.len() != 7 {
                return Err(CoreError::malformed(
                    what,
                    format!("blob wants cx,cy,w,h,intensity,vx,vy; got {value:?}"),
                ));
            }
            Ok(Blob {
                cx: parts[0],
                cy: parts[1],
                w: parts[2],
                h: parts[3],
                intensity: parts[4],
                vx: parts[5],
                vy: parts[6],
            })
        };
        for (k, v) in parse_kv_lines(text, what)? {
            match k.as_str() {
                "width" => scene.width = num(&v, what, &k)?,
                "height" => scene.height = num(&v, what, &k)?,
                "frames" => scene.frames = num(&v, what, &k)?,
                "background" => scene.background = num(&v, what, &k)?,
                "noise" => scene.noise = num(&v, what, &k)?,
                "scale_drift" => scene.scale_drift = num(&v, what, &k)?,
                "seed" => scene.seed = num(&v, what, &k)?,
                "target" => scene.target = blob(&v)?,
                "distractor" => scene.distractors.push(blob(&v)?),
                "occlude" => {
                    let parts: Vec<usize> = v
                        .split(',')
                        .map(|p| p.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| CoreError::malformed(what, format!("bad occlude range {v:?}")))?;
                    if parts.len() != 2 {
                        return Err(CoreError::malformed(what, format!("occlude wants start,end; got {v:?}")));
                    }
                    scene.occluders.push((parts[0], parts[1]));
                }
                other => return Err(CoreError::malformed(what, format!("unknown key {other:?}"))),
            }
        }
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_str(&text, &format!("scene file {}", path.display()))
    }

    pub fn to_scene_string(&self) -> String {
        let mut s = String::new();
        let blob = |b: &Blob| {
            format!("{},{},{},{},{},{},{}", b.cx, b.cy, b.w, b.h, b.intensity, b.vx, b.vy)
        };
        s.push_str(&format!("width = {}\n", self.width));
        s.push_str(&format!("height = {}\n", self.height));
        s.push_str(&format!("frames = {}\n", self.frames));
        s.push_str(&format!("background = {}\n", self.background));
        s.push_str(&format!("noise = {}\n", self.noise));
        s.push_str(&format!("scale_drift = {}\n", self.scale_drift));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("target = {}\n", blob(&self.target)));
        for d in &self.distractors {
            s.push_str(&format!("distractor = {}\n", blob(d)));
        }
        for &(a, b) in &self.occluders {
            s.push_str(&format!("occlude = {a},{b}\n"));
        }
        s
    }
}

fn num<T: std::str::FromStr>(v: &str, what: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CoreError::malformed(what, format!("bad value for {key}: {v:?}")))
}

/// Add one Gaussian blob; sigma is a quarter of the extent so the tight
/// box covers about two sigmas per side.
fn render_blob(data: &mut [f64], width: usize, height: usize, b: &Blob) {
    let sx = (b.w / 4.0).max(0.5);
    let sy = (b.h / 4.0).max(0.5);
    let x_lo = ((b.cx - 3.0 * sx).floor().max(0.0)) as usize;
    let x_hi = ((b.cx + 3.0 * sx).ceil().min(width as f64 - 1.0)) as usize;
    let y_lo = ((b.cy - 3.0 * sy).floor().max(0.0)) as usize;
    let y_hi = ((b.cy + 3.0 * sy).ceil().min(height as f64 - 1.0)) as usize;
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    for y in y_lo..=y_hi {
        let dy = (y as f64 - b.cy) / sy;
        for x in x_lo..=x_hi {
            let dx = (x as f64 - b.cx) / sx;
            data[y * width + x] += b.intensity * (-0.5 * (dx * dx + dy * dy)).exp();
        }
    }
}

/// Render the whole sequence with its ground-truth boxes. Fails if the
/// target box leaves the frame entirely at any point.
pub fn gen_sequence(scene: &SynthScene) -> Result<(Vec<GrayImage>, Vec<BBox>)> {
    scene.validate()?;
    let mut rng = StdRng::seed_from_u64(scene.seed);
    let mut frames = Vec::with_capacity(scene.frames);
    let mut boxes = Vec::with_capacity(scene.frames);
    for f in 0..scene.frames {
        let t = scene.target_at(f);
        let gt = BBox::image_px(t.cx - t.w / 2.0, t.cy - t.h / 2.0, t.w, t.h)?;
        if gt.x2() <= 0.0
            || gt.y2() <= 0.0
            || gt.x >= scene.width as f64
            || gt.y >= scene.height as f64
        {
            return Err(CoreError::contract(
                "gen_sequence",
                format!("target left the frame at frame {} (box {gt:?})", f + 1),
            ));
        }

        let mut data = vec![0.0; scene.width * scene.height];
        for v in data.iter_mut() {
            *v = scene.background + scene.noise * normal(&mut rng);
        }
        for d in &scene.distractors {
            let moved = Blob { cx: d.cx + d.vx * f as f64, cy: d.cy + d.vy * f as f64, ..*d };
            render_blob(&mut data, scene.width, scene.height, &moved);
        }
        if !scene.occluded(f) {
            render_blob(&mut data, scene.width, scene.height, &t);
        }
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        frames.push(GrayImage::new(scene.width, scene.height, data)?);
        boxes.push(gt);
    }
    Ok((frames, boxes))
}

/// Randomized scene from the training distribution: a bright target with
/// mild motion and drift, light noise, sometimes a dimmer distractor.
pub fn sample_scene(seed: u64, frames: usize) -> SynthScene {
    let mut rng = StdRng::seed_from_u64(seed);
    let (width, height) = (160, 120);
    let w = rng.gen_range(11.0..20.0);
    let h = rng.gen_range(11.0..20.0);
    let margin = 32.0;
    let target = Blob {
        cx: rng.gen_range(margin..width as f64 - margin),
        cy: rng.gen_range(margin..height as f64 - margin),
        w,
        h,
        intensity: rng.gen_range(0.55..0.8),
        vx: rng.gen_range(-1.6..1.6),
        vy: rng.gen_range(-1.2..1.2),
    };
    let mut distractors = Vec::new();
    if rng.gen_bool(0.5) {
        // Clearly dimmer and away from the target's start.
        let dx: f64 = rng.gen_range(30.0..60.0);
        let dy: f64 = rng.gen_range(25.0..45.0);
        distractors.push(Blob {
            cx: (target.cx + dx * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .clamp(8.0, width as f64 - 8.0),
            cy: (target.cy + dy * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .clamp(8.0, height as f64 - 8.0),
            w: rng.gen_range(8.0..14.0),
            h: rng.gen_range(8.0..14.0),
            intensity: rng.gen_range(0.2..0.35),
            vx: rng.gen_range(-0.8..0.8),
            vy: rng.gen_range(-0.6..0.6),
        });
    }
    SynthScene {
        width,
        height,
        frames,
        background: rng.gen_range(0.1..0.25),
        noise: rng.gen_range(0.02..0.05),
        target,
        scale_drift: rng.gen_range(-0.004..0.004),
        distractors,
        occluders: Vec::new(),
        seed: rng.gen(),
    }
}
