//! 640x480 PNG plots handed to an external evaluator: the distance series
//! for the trend criterion and the final layout with field arrows for the
//! position criterion.

use crate::error::{Error, Result};
use crate::sim::{node_center, SimConfig, VectorField};
use crate::Vec2;

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;

type Rgb = [u8; 3];
const WHITE: Rgb = [255, 255, 255];
const BLACK: Rgb = [0, 0, 0];
const GREY: Rgb = [200, 200, 200];
const BLUE: Rgb = [31, 119, 180];
const RED: Rgb = [214, 39, 40];

struct Canvas {
    pixels: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            pixels: WHITE.repeat((WIDTH * HEIGHT) as usize),
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            let k = 3 * (y as usize * WIDTH as usize + x as usize);
            self.pixels[k..k + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb) {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = a.0 + (b.0 - a.0) * t;
            let y = a.1 + (b.1 - a.1) * t;
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    fn disc(&mut self, center: (f64, f64), r: f64, c: Rgb) {
        let r_i = r.ceil() as i64;
        let (cx, cy) = (center.0.round() as i64, center.1.round() as i64);
        for dy in -r_i..=r_i {
            for dx in -r_i..=r_i {
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, c: Rgb) {
        self.line((x0, y0), (x1, y0), c);
        self.line((x1, y0), (x1, y1), c);
        self.line((x1, y1), (x0, y1), c);
        self.line((x0, y1), (x0, y0), c);
    }

    fn arrow(&mut self, from: (f64, f64), to: (f64, f64), c: Rgb) {
        self.line(from, to, c);
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let len = dx.hypot(dy);
        if len < 1e-9 {
            return;
        }
        let (ux, uy) = (dx / len, dy / len);
        let head = (len * 0.3).min(8.0);
        for side in [-1.0, 1.0] {
            let hx = to.0 - head * (ux * 0.866 - side * uy * 0.5);
            let hy = to.1 - head * (uy * 0.866 + side * ux * 0.5);
            self.line(to, (hx, hy), c);
        }
    }

    fn encode(self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, WIDTH, HEIGHT);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::Format(format!("png header: {e}")))?;
            writer
                .write_image_data(&self.pixels)
                .map_err(|e| Error::Format(format!("png data: {e}")))?;
        }
        Ok(out)
    }
}

const MARGIN: f64 = 40.0;

/// Line plot of the distance series against step index.
pub fn render_distance_plot(series: &[f64]) -> Result<Vec<u8>> {
    if series.len() < 2 {
        return Err(Error::Input("distance plot needs at least 2 points".into()));
    }
    let mut c = Canvas::new();
    let (x0, y0, x1, y1) = (MARGIN, MARGIN, WIDTH as f64 - MARGIN, HEIGHT as f64 - MARGIN);
    c.rect(x0, y0, x1, y1, BLACK);
    let hi = series.iter().cloned().fold(f64::MIN, f64::max);
    // Zero-based y axis so trends read at true scale.
    let top = if hi > 0.0 { hi * 1.05 } else { 1.0 };
    let px = |i: usize, v: f64| {
        (
            x0 + (x1 - x0) * i as f64 / (series.len() - 1) as f64,
            y1 - (y1 - y0) * (v / top).clamp(0.0, 1.0),
        )
    };
    for w in 0..series.len() - 1 {
        c.line(px(w, series[w]), px(w + 1, series[w + 1]), BLUE);
    }
    c.encode()
}

/// Final cell positions over arrows of the applied field.
pub fn render_layout_plot(positions: &[Vec2], field: &VectorField, sim: &SimConfig) -> Result<Vec<u8>> {
    let mut c = Canvas::new();
    let side = HEIGHT as f64 - 2.0 * MARGIN;
    let left = (WIDTH as f64 - side) / 2.0;
    let scale = side / sim.width.max(sim.height);
    let to_px = |p: Vec2| (left + p.x * scale, MARGIN + side - p.y * scale);
    c.rect(
        left,
        MARGIN,
        left + sim.width * scale,
        MARGIN + side - (sim.height * scale - side),
        BLACK,
    );

    let n = field.n();
    let max_len = field.vectors().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let spacing = sim.width.min(sim.height) / n as f64 * 0.4;
    for row in 0..n {
        for col in 0..n {
            let v = field.get(col, row);
            if max_len > 0.0 {
                let base = node_center(n, col, row, sim);
                let tip = base + v * (spacing / max_len);
                c.arrow(to_px(base), to_px(tip), GREY);
            }
        }
    }
    for &p in positions {
        c.disc(to_px(p), (sim.radius * scale).max(1.5), RED);
    }
    c.encode()
}
