//! Synthetic moving-pattern sources: a bouncing disk and a translating
//! gradient band over a static gradient background.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::ppm::{self, Frame};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub sources: usize,
    pub frames_per_source: usize,
    pub width: usize,
    pub height: usize,
    /// Pixels per frame for both the disk and the ramp.
    pub velocity: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            sources: 10,
            frames_per_source: 64,
            width: 64,
            height: 64,
            velocity: 1.0,
            seed: 0,
        }
    }
}

struct Scene {
    bg_a: [f64; 3],
    bg_b: [f64; 3],
    bg_dir: (f64, f64),
    disk_color: [f64; 3],
    radius: f64,
    start: (f64, f64),
    heading: (f64, f64),
    band_a: [f64; 3],
    band_b: [f64; 3],
    band_dir: (f64, f64),
    band_offset: f64,
    band_width: f64,
}

fn color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)]
}

fn unit<R: Rng>(rng: &mut R) -> (f64, f64) {
    let a = rng.random_range(0.0..TAU);
    (a.cos(), a.sin())
}

// Position on a segment [lo, hi] after bouncing between its ends.
fn bounce(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (p - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

impl Scene {
    fn new<R: Rng>(rng: &mut R, w: usize, h: usize) -> Self {
        let side = w.min(h) as f64;
        let radius = rng.random_range(0.12..0.22) * side;
        Scene {
            bg_a: color(rng),
            bg_b: color(rng),
            bg_dir: unit(rng),
            disk_color: color(rng),
            radius,
            start: (rng.random_range(radius..w as f64 - radius), rng.random_range(radius..h as f64 - radius)),
            heading: unit(rng),
            band_a: color(rng),
            band_b: color(rng),
            band_dir: unit(rng),
            band_offset: rng.random_range(0.0..1.0),
            band_width: rng.random_range(0.15..0.3) * side,
        }
    }

    fn render(&self, t: usize, w: usize, h: usize, velocity: f64) -> Frame {
        let travel = velocity * t as f64;
        let cx = bounce(self.start.0 + self.heading.0 * travel, self.radius, w as f64 - self.radius);
        let cy = bounce(self.start.1 + self.heading.1 * travel, self.radius, h as f64 - self.radius);
        let (wf, hf) = (w as f64, h as f64);
        // the band centre moves along its normal, bouncing inside the frame's extent
        let extent = wf * self.band_dir.0.abs() + hf * self.band_dir.1.abs();
        let lo = -extent / 2.0 + self.band_width / 2.0;
        let hi = extent / 2.0 - self.band_width / 2.0;
        let centre = bounce(lo + self.band_offset * (hi - lo) + travel, lo, hi);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let g = ((px / wf - 0.5) * self.bg_dir.0 + (py / hf - 0.5) * self.bg_dir.1 + 0.5).clamp(0.0, 1.0);
                let along = (px - wf / 2.0) * self.band_dir.0 + (py - hf / 2.0) * self.band_dir.1 - centre;
                let band = (self.band_width / 2.0 - along.abs() + 0.5).clamp(0.0, 1.0);
                let ramp = (along / self.band_width + 0.5).clamp(0.0, 1.0);
                let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let disk = (self.radius - dist + 0.5).clamp(0.0, 1.0);
                for c in 0..3 {
                    let bg = self.bg_a[c] * (1.0 - g) + self.bg_b[c] * g;
                    let stripe = self.band_a[c] * (1.0 - ramp) + self.band_b[c] * ramp;
                    let under = bg * (1.0 - band) + stripe * band;
                    let v = under * (1.0 - disk) + self.disk_color[c] * disk;
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Frame { width: w, height: h, data }
    }
}

/// Writes `sources` directories of PPM frames under `root`.
pub fn synthesize_frames(root: &Path, p: &SynthParams) -> Result<()> {
    if p.sources < 2 {
        return Err(Error::config(format!("need at least 2 synthetic sources, got {}", p.sources)));
    }
    if p.width < 8 || p.height < 8 || p.frames_per_source == 0 {
        return Err(Error::config("synthetic frames must be at least 8x8 and sources non-empty"));
    }
    if !p.velocity.is_finite() || p.velocity < 0.0 {
        return Err(Error::config(format!("velocity must be finite and non-negative, got {}", p.velocity)));
    }
    let mut rng = stream(p.seed, Stream::Synth);
    for s in 0..p.sources {
        let scene = Scene::new(&mut rng, p.width, p.height);
        let dir = root.join(format!("source_{s:03}"));
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        for t in 0..p.frames_per_source {
            let frame = scene.render(t, p.width, p.height, p.velocity);
            ppm::write(&dir.join(format!("frame_{t:05}.ppm")), &frame)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounce_stays_inside() {
        for i in -50..50 {
            let v = bounce(i as f64 * 0.7, 2.0, 10.0);
            assert!((2.0..=10.0).contains(&v));
        }
        assert_eq!(bounce(12.0, 2.0, 10.0), 8.0);
    }

    #[test]
    fn static_scene_repeats_and_moving_scene_changes() {
        let mut rng = stream(1, Stream::Synth);
        let s = Scene::new(&mut rng, 24, 16);
        assert_eq!(s.render(0, 24, 16, 0.0), s.render(9, 24, 16, 0.0));
        assert_ne!(s.render(0, 24, 16, 2.0), s.render(9, 24, 16, 2.0));
    }
}
