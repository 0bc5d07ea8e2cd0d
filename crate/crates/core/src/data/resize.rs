//! Bilinear resampling with half-pixel centers.

use super::ppm::Frame;

struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            Tap { i0, i1, w1: pos - i0 as f64 }
        })
        .collect()
}

/// Scales `frame` to `width` x `height`, each axis independently.
pub fn bilinear(frame: &Frame, width: usize, height: usize) -> Frame {
    if frame.width == width && frame.height == height {
        return frame.clone();
    }
    let xs = taps(frame.width, width);
    let ys = taps(frame.height, height);
    let mut data = Vec::with_capacity(width * height * 3);
    let at = |x: usize, y: usize, c: usize| frame.data[(y * frame.width + x) * 3 + c] as f64;
    for ty in &ys {
        for tx in &xs {
            for c in 0..3 {
                let top = at(tx.i0, ty.i0, c) * (1.0 - tx.w1) + at(tx.i1, ty.i0, c) * tx.w1;
                let bottom = at(tx.i0, ty.i1, c) * (1.0 - tx.w1) + at(tx.i1, ty.i1, c) * tx.w1;
                let v = top * (1.0 - ty.w1) + bottom * ty.w1;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Frame { width, height, data }
}
