//! Minimal PNG plots: line charts and a grid heatmap.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::{GridErrorMap, SweepRow};
use crate::error::{Error, Result};
use crate::trainer::TrainHistory;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 24;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
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

fn frame() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    let (l, r, t, b) = (MARGIN as i64, (WIDTH - MARGIN) as i64, MARGIN as i64, (HEIGHT - MARGIN) as i64);
    line(&mut img, (l, b), (r, b), AXIS);
    line(&mut img, (l, t), (l, b), AXIS);
    img
}

/// Draws each series scaled to its own range; x is shared.
fn line_chart(series: &[Vec<(f64, f64)>]) -> RgbImage {
    let mut img = frame();
    let xs = series.iter().flatten().map(|p| p.0);
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    for (k, points) in series.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let to_px = |(x, y): (f64, f64)| {
            let fx = if x_hi > x_lo { (x - x_lo) / (x_hi - x_lo) } else { 0.5 };
            let fy = if hi > lo { (y - lo) / (hi - lo) } else { 0.5 };
            (
                MARGIN as i64 + (fx * plot_w).round() as i64,
                (HEIGHT - MARGIN) as i64 - (fy * plot_h).round() as i64,
            )
        };
        let color = PALETTE[k % PALETTE.len()];
        let mut prev = to_px(points[0]);
        for &p in &points[1..] {
            let next = to_px(p);
            line(&mut img, prev, next, color);
            prev = next;
        }
    }
    img
}

/// Loss curves (L_r, L_s, L_adv, L1, target MSE), each normalized to the plot height.
pub fn plot_loss_curves(history: &TrainHistory, path: &Path) -> Result<()> {
    let pick = |f: fn(&crate::trainer::IterationRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        history
            .records
            .iter()
            .filter_map(|r| f(r).map(|v| (r.iteration as f64, v)))
            .collect()
    };
    let series = [
        pick(|r| r.l_r),
        pick(|r| r.l_s),
        pick(|r| r.l_adv),
        pick(|r| r.l_l1),
        pick(|r| r.target_mse),
    ];
    save(&line_chart(&series), path)
}

pub fn plot_lambda_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    let series = [rows.iter().map(|r| (r.lambda, r.target_mse)).collect::<Vec<_>>()];
    save(&line_chart(&series), path)
}

/// Blue (low) to red (high) ramp.
fn heat(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    Rgb([(255.0 * t) as u8, (80.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8, (255.0 * (1.0 - t)) as u8])
}

/// Heatmap of cell MSEs; empty cells are gray. The y axis points up.
pub fn plot_grid_map(map: &GridErrorMap, path: &Path) -> Result<()> {
    let scale = (WIDTH / map.columns.max(1) as u32).clamp(1, 32);
    let (w, h) = (map.columns as u32 * scale, map.rows as u32 * scale);
    let mut img = RgbImage::from_pixel(w.max(1), h.max(1), Rgb([200, 200, 200]));
    let hi = map.cells.iter().filter_map(|c| c.mse).fold(0.0, f64::max);
    for row in 0..map.rows {
        for column in 0..map.columns {
            let Some(mse) = map.cell(column, row).mse else { continue };
            let color = heat(if hi > 0.0 { mse / hi } else { 0.0 });
            let top = (map.rows - 1 - row) as u32 * scale;
            for dy in 0..scale {
                for dx in 0..scale {
                    img.put_pixel(column as u32 * scale + dx, top + dy, color);
                }
            }
        }
    }
    save(&img, path)
}
