//! Frames for humans: projected field, trajectories, score heatmaps.

use crate::error::Result;
use crate::field::{default_projection, render_rgb, RgbImage};
use crate::geom::Point;
use crate::tensor::Tensor;
use crate::tracker::SearchPatch;

const HANDLE: [f64; 3] = [1.0, 0.15, 0.15];
const TARGET: [f64; 3] = [0.2, 0.4, 1.0];
const PATH: [f64; 3] = [1.0, 0.9, 0.2];

pub fn field_image(field: &Tensor) -> Result<RgbImage> {
    let (c, _, _) = field.chw()?;
    render_rgb(field, &default_projection(c))
}

fn put(img: &mut RgbImage, x: i64, y: i64, rgb: [f64; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
        img.set_pixel(x as usize, y as usize, rgb);
    }
}

fn square(img: &mut RgbImage, p: Point, half: i64, rgb: [f64; 3]) {
    for dy in -half..=half {
        for dx in -half..=half {
            put(img, p.x + dx, p.y + dy, rgb);
        }
    }
}

/// Bresenham segment.
fn line(img: &mut RgbImage, a: Point, b: Point, rgb: [f64; 3]) {
    let (mut x, mut y) = (a.x, a.y);
    let (dx, dy) = ((b.x - a.x).abs(), -(b.y - a.y).abs());
    let (sx, sy) = ((b.x - a.x).signum(), (b.y - a.y).signum());
    let mut err = dx + dy;
    loop {
        put(img, x, y, rgb);
        if x == b.x && y == b.y {
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

/// Draws each trajectory as a polyline ending in a handle marker, plus the
/// target marker.
pub fn draw_trajectories(img: &mut RgbImage, paths: &[(Vec<Point>, Point)]) {
    for (path, target) in paths {
        for pair in path.windows(2) {
            line(img, pair[0], pair[1], PATH);
        }
        square(img, *target, 1, TARGET);
        if let Some(p) = path.last() {
            square(img, *p, 1, HANDLE);
        }
    }
}

/// Scores normalized to `[0, 1]` over the window; a flat grid is all ones.
pub fn normalized_scores(scores: &Tensor) -> Vec<f64> {
    let (lo, hi) = scores
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    scores
        .data()
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

/// Grayscale heat inside the search window, black elsewhere.
pub fn heatmap_layer(width: usize, height: usize, scores: &Tensor, patch: &SearchPatch) -> RgbImage {
    let mut img = RgbImage {
        width,
        height,
        data: vec![0.0; width * height * 3],
    };
    for (i, v) in normalized_scores(scores).into_iter().enumerate() {
        let q = patch.to_field(i % patch.width, i / patch.width);
        img.set_pixel(q.x as usize, q.y as usize, [v, v, v]);
    }
    img
}

/// Blends heat into the red channel of `img` over the window.
pub fn overlay_heatmap(img: &mut RgbImage, scores: &Tensor, patch: &SearchPatch) {
    for (i, v) in normalized_scores(scores).into_iter().enumerate() {
        let q = patch.to_field(i % patch.width, i / patch.width);
        let [r, g, b] = img.pixel(q.x as usize, q.y as usize);
        let a = 0.6 * v;
        img.set_pixel(
            q.x as usize,
            q.y as usize,
            [r * (1.0 - a) + a, g * (1.0 - a), b * (1.0 - a)],
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_peaks_at_the_argmax() {
        let patch = SearchPatch::new(Point::new(5, 5), 2, 10, 10).unwrap();
        let scores = Tensor::new(vec![3, 3], vec![0.1, 0.2, 0.3, 0.4, 0.9, 0.5, 0.0, 0.2, 0.1]).unwrap();
        let img = heatmap_layer(10, 10, &scores, &patch);
        assert_eq!(img.pixel(5, 5), [1.0, 1.0, 1.0]);
        assert_eq!(img.pixel(4, 6), [0.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn line_reaches_both_ends() {
        let mut img = RgbImage {
            width: 8,
            height: 8,
            data: vec![0.0; 192],
        };
        line(&mut img, Point::new(1, 1), Point::new(6, 3), PATH);
        assert_eq!(img.pixel(1, 1), PATH);
        assert_eq!(img.pixel(6, 3), PATH);
    }
}
