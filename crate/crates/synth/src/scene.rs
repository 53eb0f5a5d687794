//! Scene renderer: strings of shaded discs on varied backgrounds, with
//! missing-disc and notched-disc defect injection.

use detectlab_loss::BBox;
use detectlab_tensor::{Tensor, XorShiftRng};

use crate::error::Result;
use crate::spec::{BackgroundMode, SceneSpec, CLASS_DAMAGE, CLASS_NORMAL, CLASS_SELF_EXPLOSION};

#[derive(Debug, Clone)]
pub struct Annotation {
    pub bbox: BBox,
    pub class: usize,
}

/// Two palettes stand in for material diversity.
const PALETTES: [[f64; 3]; 2] = [[0.56, 0.33, 0.19], [0.33, 0.52, 0.47]];
const ROD_COLOR: [f64; 3] = [0.16, 0.15, 0.17];

struct Canvas {
    size: usize,
    // [3, S, S] channel-major
    data: Vec<f64>,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, color: [f64; 3], coverage: f64) {
        if coverage <= 0.0 {
            return;
        }
        let c = coverage.min(1.0);
        let plane = self.size * self.size;
        let idx = y * self.size + x;
        for ch in 0..3 {
            let p = &mut self.data[ch * plane + idx];
            *p = *p * (1.0 - c) + color[ch] * c;
        }
    }
}

fn paint_background(canvas: &mut Canvas, mode: BackgroundMode, rng: &mut XorShiftRng) {
    let s = canvas.size;
    let plane = s * s;
    // light backgrounds keep the disc palettes in contrast
    let base = [
        rng.uniform(0.55, 0.80),
        rng.uniform(0.55, 0.80),
        rng.uniform(0.55, 0.80),
    ];
    let mode = match mode {
        BackgroundMode::Mixed => match rng.below(3) {
            0 => BackgroundMode::Flat,
            1 => BackgroundMode::Gradient,
            _ => BackgroundMode::Noise,
        },
        m => m,
    };
    match mode {
        BackgroundMode::Flat => {
            for ch in 0..3 {
                canvas.data[ch * plane..(ch + 1) * plane].fill(base[ch]);
            }
        }
        BackgroundMode::Gradient => {
            let other = [
                (base[0] + rng.uniform(-0.18, 0.18)).clamp(0.45, 0.9),
                (base[1] + rng.uniform(-0.18, 0.18)).clamp(0.45, 0.9),
                (base[2] + rng.uniform(-0.18, 0.18)).clamp(0.45, 0.9),
            ];
            let vertical = rng.below(2) == 0;
            for y in 0..s {
                for x in 0..s {
                    let t = if vertical {
                        y as f64 / (s - 1) as f64
                    } else {
                        x as f64 / (s - 1) as f64
                    };
                    for ch in 0..3 {
                        canvas.data[ch * plane + y * s + x] =
                            base[ch] * (1.0 - t) + other[ch] * t;
                    }
                }
            }
        }
        BackgroundMode::Noise => {
            // value noise: a coarse random grid, bilinearly interpolated
            let g = 9usize;
            let grid: Vec<f64> = (0..g * g).map(|_| rng.uniform(-0.5, 0.5)).collect();
            let cell = (s - 1) as f64 / (g - 1) as f64;
            for y in 0..s {
                for x in 0..s {
                    let gx = (x as f64 / cell).min((g - 2) as f64);
                    let gy = (y as f64 / cell).min((g - 2) as f64);
                    let (ix, iy) = (gx as usize, gy as usize);
                    let (fx, fy) = (gx - ix as f64, gy - iy as f64);
                    let v00 = grid[iy * g + ix];
                    let v01 = grid[iy * g + ix + 1];
                    let v10 = grid[(iy + 1) * g + ix];
                    let v11 = grid[(iy + 1) * g + ix + 1];
                    let v = v00 * (1.0 - fx) * (1.0 - fy)
                        + v01 * fx * (1.0 - fy)
                        + v10 * (1.0 - fx) * fy
                        + v11 * fx * fy;
                    for ch in 0..3 {
                        canvas.data[ch * plane + y * s + x] =
                            (base[ch] + 0.12 * v).clamp(0.0, 1.0);
                    }
                }
            }
        }
        BackgroundMode::Mixed => unreachable!(),
    }
}

fn draw_segment(canvas: &mut Canvas, a: (f64, f64), b: (f64, f64), width: f64) {
    let s = canvas.size;
    let min_x = (a.0.min(b.0) - width - 1.0).floor().max(0.0) as usize;
    let max_x = ((a.0.max(b.0) + width + 1.0).ceil() as usize).min(s - 1);
    let min_y = (a.1.min(b.1) - width - 1.0).floor().max(0.0) as usize;
    let max_y = ((a.1.max(b.1) + width + 1.0).ceil() as usize).min(s - 1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len_sq > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let cov = (width - d + 0.5).clamp(0.0, 1.0);
            canvas.blend(x, y, ROD_COLOR, cov);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn draw_disc(
    canvas: &mut Canvas,
    center: (f64, f64),
    radius: f64,
    color: [f64; 3],
    notch: Option<(f64, f64)>, // (direction, half-width) in radians
) {
    let s = canvas.size;
    let min_x = ((center.0 - radius - 1.0).floor().max(0.0)) as usize;
    let max_x = ((center.0 + radius + 1.0).ceil() as usize).min(s - 1);
    let min_y = ((center.1 - radius - 1.0).floor().max(0.0)) as usize;
    let max_y = ((center.1 + radius + 1.0).ceil() as usize).min(s - 1);
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (ox, oy) = (px - center.0, py - center.1);
            let d = (ox * ox + oy * oy).sqrt();
            let mut cov = (radius - d + 0.5).clamp(0.0, 1.0);
            if cov <= 0.0 {
                continue;
            }
            if let Some((dir, half_width)) = notch {
                let ang = oy.atan2(ox);
                let mut diff = (ang - dir).abs();
                if diff > std::f64::consts::PI {
                    diff = 2.0 * std::f64::consts::PI - diff;
                }
                if diff < half_width {
                    cov = 0.0;
                }
            }
            if cov > 0.0 {
                // radial shading plus an off-center highlight
                let rel = (d / radius).min(1.0);
                let shade = 1.0 - 0.35 * rel * rel;
                let hx = ox + 0.35 * radius;
                let hy = oy + 0.35 * radius;
                let hl = 0.18 * (1.0 - (hx * hx + hy * hy) / (0.3 * radius * radius)).max(0.0);
                let c = [
                    (color[0] * shade + hl).clamp(0.0, 1.0),
                    (color[1] * shade + hl).clamp(0.0, 1.0),
                    (color[2] * shade + hl).clamp(0.0, 1.0),
                ];
                canvas.blend(x, y, c, cov);
            }
        }
    }
}

struct StringLayout {
    centers: Vec<(f64, f64)>,
    radius: f64,
    class: usize,
    /// Removed discs (self-explosion) or the notched disc (damage).
    gap: std::ops::Range<usize>,
    notch_disc: usize,
    notch: Option<(f64, f64)>,
    palette: [f64; 3],
}

fn plan_string(spec: &SceneSpec, rng: &mut XorShiftRng) -> StringLayout {
    let u = rng.next_f64();
    let class = if u < spec.p_self_explosion {
        CLASS_SELF_EXPLOSION
    } else if u < spec.p_self_explosion + spec.p_damage {
        CLASS_DAMAGE
    } else {
        CLASS_NORMAL
    };
    let discs = spec.discs_min + rng.below(spec.discs_max - spec.discs_min + 1);
    let radius = rng.uniform(spec.disc_radius_min, spec.max_radius_for(discs));
    let spacing = spec.spacing_factor * radius;
    // near-vertical strings with a bounded tilt
    let jitter = spec.angle_jitter_deg.to_radians();
    let theta = std::f64::consts::FRAC_PI_2 + rng.uniform(-jitter, jitter);
    let (dx, dy) = (theta.cos(), theta.sin());
    let len = (discs - 1) as f64 * spacing;
    let s = spec.canvas as f64;
    let margin = radius + 2.0;
    // dy > 0 for tilts under 90 degrees; dx may have either sign
    let x_lo = margin - (len * dx).min(0.0);
    let x_hi = s - margin - (len * dx).max(0.0);
    let y_lo = margin;
    let y_hi = s - margin - len * dy;
    let x0 = rng.uniform(x_lo, x_hi.max(x_lo));
    let y0 = rng.uniform(y_lo, y_hi.max(y_lo));
    let centers: Vec<(f64, f64)> = (0..discs)
        .map(|i| (x0 + i as f64 * spacing * dx, y0 + i as f64 * spacing * dy))
        .collect();
    let gap = if class == CLASS_SELF_EXPLOSION {
        // interior run of missing discs, with survivors on both ends
        let start = 1 + rng.below(discs - spec.gap_discs - 1);
        start..start + spec.gap_discs
    } else {
        0..0
    };
    let notch_disc = if class == CLASS_DAMAGE { rng.below(discs) } else { 0 };
    let notch = (class == CLASS_DAMAGE).then(|| {
        (
            rng.uniform(0.0, 2.0 * std::f64::consts::PI),
            rng.uniform(0.9, 1.4), // half-width: a 103..160 degree bite
        )
    });
    let palette_base = PALETTES[rng.below(2)];
    let palette = [
        (palette_base[0] + rng.uniform(-0.06, 0.06)).clamp(0.0, 1.0),
        (palette_base[1] + rng.uniform(-0.06, 0.06)).clamp(0.0, 1.0),
        (palette_base[2] + rng.uniform(-0.06, 0.06)).clamp(0.0, 1.0),
    ];
    StringLayout {
        centers,
        radius,
        class,
        gap,
        notch_disc,
        notch,
        palette,
    }
}

fn annotation_for(layout: &StringLayout, canvas: f64) -> Annotation {
    let r = layout.radius;
    let span = |centers: &[(f64, f64)]| {
        let min_x = centers.iter().map(|c| c.0).fold(f64::MAX, f64::min) - r;
        let max_x = centers.iter().map(|c| c.0).fold(f64::MIN, f64::max) + r;
        let min_y = centers.iter().map(|c| c.1).fold(f64::MAX, f64::min) - r;
        let max_y = centers.iter().map(|c| c.1).fold(f64::MIN, f64::max) + r;
        (min_x, min_y, max_x, max_y)
    };
    let (bbox, class) = match layout.class {
        CLASS_SELF_EXPLOSION => {
            let (x1, y1, x2, y2) = span(&layout.centers[layout.gap.clone()]);
            (tight_box(x1, y1, x2, y2, canvas), CLASS_SELF_EXPLOSION)
        }
        CLASS_DAMAGE => {
            let (cx, cy) = layout.centers[layout.notch_disc];
            (tight_box(cx - r, cy - r, cx + r, cy + r, canvas), CLASS_DAMAGE)
        }
        _ => {
            let (x1, y1, x2, y2) = span(&layout.centers);
            (tight_box(x1, y1, x2, y2, canvas), CLASS_NORMAL)
        }
    };
    Annotation { bbox, class }
}

fn tight_box(x1: f64, y1: f64, x2: f64, y2: f64, canvas: f64) -> BBox {
    let x1 = x1.max(0.0);
    let y1 = y1.max(0.0);
    let x2 = x2.min(canvas);
    let y2 = y2.min(canvas);
    BBox::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1).expect("placement keeps extents positive")
}

/// Renders one scene. Deterministic for a given `(seed, spec)` pair.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<(Tensor<f32>, Vec<Annotation>)> {
    spec.validate()?;
    let mut rng = XorShiftRng::new(seed);
    let s = spec.canvas;
    let mut canvas = Canvas {
        size: s,
        data: vec![0.0; 3 * s * s],
    };
    paint_background(&mut canvas, spec.background, &mut rng);

    let n_objects = spec.objects_min + rng.below(spec.objects_max - spec.objects_min + 1);
    let mut annotations = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let layout = plan_string(spec, &mut rng);
        let first = layout.centers[0];
        let last = *layout.centers.last().expect("at least two discs");
        draw_segment(&mut canvas, first, last, 1.2);
        for (i, &c) in layout.centers.iter().enumerate() {
            if layout.class == CLASS_SELF_EXPLOSION && layout.gap.contains(&i) {
                continue; // the gap
            }
            let notch = (layout.class == CLASS_DAMAGE && i == layout.notch_disc)
                .then_some(layout.notch)
                .flatten();
            draw_disc(&mut canvas, c, layout.radius, layout.palette, notch);
        }
        annotations.push(annotation_for(&layout, s as f64));
    }

    let data: Vec<f32> = canvas.data.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    Ok((Tensor::new(vec![3, s, s], data)?, annotations))
}
