//! Small raster plots drawn straight into pixel buffers.

use image::{Rgb, RgbImage};

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([90, 90, 90]);
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

const PANEL_W: u32 = 240;
const PANEL_H: u32 = 160;
const MARGIN: u32 = 12;

/// One panel per series, laid out three to a row. Each panel is scaled to its
/// own min/max; the x axis is the row index.
pub fn line_panels(series: &[Vec<f64>]) -> RgbImage {
    let cols = 3.min(series.len().max(1)) as u32;
    let rows = (series.len().max(1) as u32).div_ceil(cols);
    let mut img = RgbImage::from_pixel(cols * PANEL_W, rows * PANEL_H, BACKGROUND);
    for (i, ys) in series.iter().enumerate() {
        let (px, py) = ((i as u32 % cols) * PANEL_W, (i as u32 / cols) * PANEL_H);
        draw_panel(&mut img, px, py, ys, PALETTE[i % PALETTE.len()]);
    }
    img
}

fn draw_panel(img: &mut RgbImage, x0: u32, y0: u32, ys: &[f64], colour: Rgb<u8>) {
    let (left, top) = (x0 + MARGIN, y0 + MARGIN);
    let (w, h) = (PANEL_W - 2 * MARGIN, PANEL_H - 2 * MARGIN);
    hline(img, left, left + w, top + h, AXIS);
    vline(img, left, top, top + h, AXIS);

    let finite: Vec<f64> = ys.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return;
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_px = |i: usize, v: f64| -> (f64, f64) {
        let fx = if ys.len() > 1 { i as f64 / (ys.len() - 1) as f64 } else { 0.5 };
        (left as f64 + fx * (w - 1) as f64, (top + h - 1) as f64 - (v - lo) / span * (h - 1) as f64)
    };
    let mut prev: Option<(f64, f64)> = None;
    for (i, &v) in ys.iter().enumerate() {
        if !v.is_finite() {
            prev = None;
            continue;
        }
        let p = to_px(i, v);
        match prev {
            Some(q) => segment(img, q, p, colour),
            None => put(img, p.0.round() as i64, p.1.round() as i64, colour),
        }
        prev = Some(p);
    }
}

/// Grouped bars on a [0, 1] scale: one group per row of `values`.
pub fn grouped_bars(values: &[Vec<f64>]) -> RgbImage {
    const BAR_W: u32 = 24;
    const GAP: u32 = 16;
    const H: u32 = 200;
    let per_group = values.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let groups = values.len() as u32;
    let width = 2 * MARGIN + groups * (per_group * BAR_W + GAP) + GAP;
    let mut img = RgbImage::from_pixel(width, H + 2 * MARGIN, BACKGROUND);
    let base = MARGIN + H;
    hline(&mut img, MARGIN, width - MARGIN, base, AXIS);
    for (g, row) in values.iter().enumerate() {
        let gx = MARGIN + GAP + g as u32 * (per_group * BAR_W + GAP);
        for (b, &v) in row.iter().enumerate() {
            let height = (v.clamp(0.0, 1.0) * H as f64).round() as u32;
            let x = gx + b as u32 * BAR_W;
            for yy in base - height..base {
                hline(&mut img, x + 2, x + BAR_W - 2, yy, PALETTE[b % PALETTE.len()]);
            }
        }
    }
    img
}

/// Lays out equally sized tiles row by row. Each tile is `channels`-interleaved
/// pixels in [0, 1], `side` x `side`, magnified `zoom` times.
pub fn tile_grid(tiles: &[Vec<f64>], cols: usize, side: usize, channels: usize, zoom: u32) -> RgbImage {
    let rows = tiles.len().div_ceil(cols) as u32;
    let t = side as u32 * zoom;
    let mut img = RgbImage::from_pixel(cols as u32 * t, rows * t, BACKGROUND);
    for (k, tile) in tiles.iter().enumerate() {
        let (ox, oy) = ((k % cols) as u32 * t, (k / cols) as u32 * t);
        for y in 0..t {
            for x in 0..t {
                let p = ((y / zoom) as usize * side + (x / zoom) as usize) * channels;
                let px = |c: usize| (tile[p + c.min(channels - 1)].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(ox + x, oy + y, Rgb([px(0), px(1), px(2)]));
            }
        }
    }
    img
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn hline(img: &mut RgbImage, x0: u32, x1: u32, y: u32, c: Rgb<u8>) {
    for x in x0..x1 {
        put(img, x as i64, y as i64, c);
    }
}

fn vline(img: &mut RgbImage, x: u32, y0: u32, y1: u32, c: Rgb<u8>) {
    for y in y0..y1 {
        put(img, x as i64, y as i64, c);
    }
}

fn segment(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let f = s as f64 / steps as f64;
        put(img, (a.0 + f * (b.0 - a.0)).round() as i64, (a.1 + f * (b.1 - a.1)).round() as i64, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_equal_tiles() {
        let tiles: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64 / 5.0; 16 * 16]).collect();
        let img = tile_grid(&tiles, 3, 16, 1, 2);
        assert_eq!((img.width(), img.height()), (96, 64));
        assert_eq!(img.get_pixel(0, 0), &Rgb([0, 0, 0]));
        assert_eq!(img.get_pixel(95, 63), &Rgb([255, 255, 255]));
    }

    #[test]
    fn plots_tolerate_odd_input() {
        let img = line_panels(&[vec![], vec![1.0], vec![f64::NAN, 2.0, 2.0]]);
        assert_eq!(img.width(), 3 * PANEL_W);
        let bars = grouped_bars(&[vec![0.5, 1.5], vec![-1.0, 0.25]]);
        assert!(bars.width() > 0);
    }
}
