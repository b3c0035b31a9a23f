//! Raster line charts for critics and reports.

use image::codecs::png::PngEncoder;
use image::{ImageEncoder, Rgb, RgbImage};
use std::path::Path;
use thiserror::Error;

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;
/// Simulated paths beyond this many are not drawn.
pub const MAX_DRAWN_PATHS: usize = 10;

const MARGIN_LEFT: f64 = 48.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 16.0;
const MARGIN_BOTTOM: f64 = 40.0;
const TICKS: usize = 5;
const TICK_LEN: i64 = 6;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GREY: Rgb<u8> = Rgb([150, 150, 150]);

pub const PALETTE: [Rgb<u8>; MAX_DRAWN_PATHS] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
    Rgb([188, 189, 34]),
    Rgb([23, 190, 207]),
];

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("encoding chart: {0}")]
    Encode(#[from] image::ImageError),
    #[error("writing chart to {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new() -> Canvas {
        let mut c = Canvas {
            img: RgbImage::from_pixel(WIDTH, HEIGHT, WHITE),
        };
        c.axes();
        c
    }

    /// Pixel position of unit-square coordinates.
    fn px(x: f64, y: f64) -> (i64, i64) {
        let w = WIDTH as f64 - MARGIN_LEFT - MARGIN_RIGHT;
        let h = HEIGHT as f64 - MARGIN_TOP - MARGIN_BOTTOM;
        let x = x.clamp(0.0, 1.0);
        let y = if y.is_finite() { y.clamp(0.0, 1.0) } else { 0.0 };
        (
            (MARGIN_LEFT + x * w).round() as i64,
            (MARGIN_TOP + (1.0 - y) * h).round() as i64,
        )
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn segment(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn axes(&mut self) {
        let origin = Canvas::px(0.0, 0.0);
        self.segment(origin, Canvas::px(1.0, 0.0), BLACK);
        self.segment(origin, Canvas::px(0.0, 1.0), BLACK);
        for i in 0..TICKS {
            let v = i as f64 / (TICKS - 1) as f64;
            let (x, y) = Canvas::px(v, 0.0);
            self.segment((x, y), (x, y + TICK_LEN), BLACK);
            let (x, y) = Canvas::px(0.0, v);
            self.segment((x - TICK_LEN, y), (x, y), BLACK);
        }
    }

    /// Draws `ys` at evenly spaced x positions from `x_from` to `x_to`.
    fn series(&mut self, ys: &[f64], x_from: f64, x_to: f64, c: Rgb<u8>) {
        let n = ys.len();
        let x_at = |i: usize| {
            if n < 2 {
                x_from
            } else {
                x_from + (x_to - x_from) * i as f64 / (n - 1) as f64
            }
        };
        if n == 1 {
            let (x, y) = Canvas::px(x_at(0), ys[0]);
            self.put(x, y, c);
        }
        for i in 1..n {
            self.segment(Canvas::px(x_at(i - 1), ys[i - 1]), Canvas::px(x_at(i), ys[i]), c);
        }
    }

    fn vline(&mut self, x: f64, c: Rgb<u8>) {
        self.segment(Canvas::px(x, 0.0), Canvas::px(x, 1.0), c);
    }

    fn png(&self) -> Result<Vec<u8>, ChartError> {
        let mut out = Vec::new();
        PngEncoder::new(&mut out).write_image(
            self.img.as_raw(),
            WIDTH,
            HEIGHT,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }
}

/// PNG of a normalized history (black) with up to ten simulated paths
/// overlaid in colour, on axes spanning the unit square.
pub fn fit_chart_png(history: &[f64], paths: &[Vec<f64>]) -> Result<Vec<u8>, ChartError> {
    let mut c = Canvas::new();
    for (p, colour) in paths.iter().zip(PALETTE) {
        c.series(p, 0.0, 1.0, colour);
    }
    c.series(history, 0.0, 1.0, BLACK);
    c.png()
}

pub fn render_fit_chart(history: &[f64], paths: &[Vec<f64>], path: &Path) -> Result<(), ChartError> {
    write(path, &fit_chart_png(history, paths)?)
}

/// Historical series in black against the simulated price, coloured per
/// window with grey separators. Both series share one min-max scale.
pub fn market_chart_png(
    history: &[f64],
    simulated: &[f64],
    boundaries: &[usize],
) -> Result<Vec<u8>, ChartError> {
    let (lo, hi) = history
        .iter()
        .chain(simulated)
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scale = |s: &[f64]| s.iter().map(|v| (v - lo) / span).collect::<Vec<_>>();
    let last = (history.len().max(simulated.len()).max(2) - 1) as f64;
    let mut c = Canvas::new();
    for b in boundaries {
        c.vline(*b as f64 / last, GREY);
    }
    c.series(&scale(history), 0.0, (history.len().max(1) - 1) as f64 / last, BLACK);
    let sim = scale(simulated);
    for (w, pair) in boundaries.windows(2).enumerate() {
        let (a, b) = (pair[0].min(sim.len()), (pair[1] + 1).min(sim.len()));
        if a < b {
            c.series(&sim[a..b], a as f64 / last, (b - 1) as f64 / last, PALETTE[w % PALETTE.len()]);
        }
    }
    c.png()
}

pub fn write(path: &Path, png: &[u8]) -> Result<(), ChartError> {
    std::fs::write(path, png).map_err(|source| ChartError::Write {
        path: path.display().to_string(),
        source,
    })
}
