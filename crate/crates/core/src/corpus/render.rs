use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alphabet::Alphabet;
use super::glyphs::{self, Glyph};
use super::raster::{Raster, BACKGROUND, IMAGE_HEIGHT, IMAGE_WIDTH};
use super::{Source, TextImageSample, MAX_TEXT_LEN};
use crate::error::{Error, Result};
use crate::rng;

/// Number of distinct built-in font treatments selectable by `font_id`.
pub const FONT_COUNT: usize = 3;

const NOMINAL_UNIT_PX: f32 = 4.2;
const MIN_UNIT_PX: f32 = 2.1;
const BASELINE_PX: f32 = 46.0;
const MARGIN_PX: f32 = 4.0;
const NOISE_STD: f32 = 0.03;

/// Appearance parameters of one simulated writer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    pub writer_id: usize,
    pub font_id: usize,
    /// Shear angle in radians; positive leans right.
    pub slant: f32,
    pub stroke_scale: f32,
    /// 1.0 renders black ink, 0.0 would render paper-coloured ink.
    pub ink_level: f32,
    pub jitter_seed: u64,
}

impl WriterStyle {
    /// Deterministic writer `writer_id` of a family seeded by `seed`.
    pub fn preset(writer_id: usize, seed: u64) -> Self {
        let mut r = rng::stream(rng::derive_seed(seed, &[0x5752_4954, writer_id as u64]));
        WriterStyle {
            writer_id,
            font_id: writer_id % FONT_COUNT,
            slant: r.random_range(-0.25..0.45),
            stroke_scale: r.random_range(0.8..1.8),
            ink_level: r.random_range(0.7..1.0),
            jitter_seed: r.random(),
        }
    }

    pub fn presets(count: usize, seed: u64) -> Vec<Self> {
        (0..count).map(|id| Self::preset(id, seed)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.font_id >= FONT_COUNT {
            return Err(Error::InvalidArgument(format!(
                "font_id {} >= {FONT_COUNT}",
                self.font_id
            )));
        }
        if !(self.stroke_scale > 0.0 && self.stroke_scale.is_finite()) {
            return Err(Error::InvalidArgument(
                "stroke_scale must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ink_level) {
            return Err(Error::InvalidArgument(
                "ink_level must lie in [0, 1]".into(),
            ));
        }
        if !self.slant.is_finite() || self.slant.abs() >= 1.2 {
            return Err(Error::InvalidArgument(
                "slant must lie in (-1.2, 1.2) rad".into(),
            ));
        }
        Ok(())
    }
}

struct FontTreatment {
    arc_segments: usize,
    width_scale: f32,
    joined: bool,
}

fn treatment(font_id: usize) -> FontTreatment {
    match font_id {
        0 => FontTreatment {
            arc_segments: 24,
            width_scale: 1.0,
            joined: false,
        },
        1 => FontTreatment {
            arc_segments: 6,
            width_scale: 1.15,
            joined: false,
        },
        _ => FontTreatment {
            arc_segments: 16,
            width_scale: 0.9,
            joined: true,
        },
    }
}

/// Renders `text` in the given writer's hand onto a 64x256 canvas.
///
/// The writer's static habits come from `style.jitter_seed`; baseline wobble,
/// per-letter jitter and sensor noise come from `seed`. The output is quantized
/// to 8-bit levels so that it survives a PNG round trip bit-exactly.
pub fn render_word(
    text: &str,
    style: &WriterStyle,
    seed: u64,
    alphabet: &Alphabet,
) -> Result<TextImageSample> {
    let glyph_list = check_text(text, alphabet)?;
    style.validate()?;

    let font = treatment(style.font_id);
    let mut habit = rng::stream(style.jitter_seed);
    let width_factor = habit.random_range(0.85..1.15) * font.width_scale;
    let height_factor = habit.random_range(0.9..1.1);
    let spacing = habit.random_range(0.6..1.2);

    let mut jitter = rng::stream(rng::derive_seed(seed, &[style.jitter_seed]));
    let wobble_amp = jitter.random_range(0.0..0.35);
    let wobble_period = jitter.random_range(6.0..14.0f32);
    let wobble_phase = jitter.random_range(0.0..std::f32::consts::TAU);

    // Lay out strokes in font units.
    let mut strokes: Vec<Vec<(f32, f32)>> = Vec::new();
    let mut pen = 0.0f32;
    let mut prev_exit: Option<(f32, f32)> = None;
    for g in &glyph_list {
        let scale = 1.0 + jitter.random_range(-0.04..0.04);
        let dy = jitter.random_range(-0.15..0.15)
            + wobble_amp * (std::f32::consts::TAU * pen / wobble_period + wobble_phase).sin();
        let sx = width_factor * scale;
        let sy = height_factor * scale;
        let place = |(x, y): (f32, f32)| (pen + x * sx, y * sy + dy);
        for line in glyphs::flatten(g, font.arc_segments) {
            strokes.push(line.into_iter().map(place).collect());
        }
        if font.joined {
            let entry = place((0.0, 0.4));
            if let Some(exit) = prev_exit {
                strokes.push(vec![exit, entry]);
            }
            prev_exit = Some(place((g.width, 0.4)));
        }
        pen += g.width * sx + spacing;
    }

    let shear = style.slant.tan();
    let (min_x, max_x) = strokes
        .iter()
        .flatten()
        .map(|&(x, y)| x + shear * y)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    let extent = (max_x - min_x).max(1e-3);
    let nominal_radius = 0.22 * NOMINAL_UNIT_PX * style.stroke_scale;
    let room = IMAGE_WIDTH as f32 - 2.0 * MARGIN_PX - 2.0 * nominal_radius;
    let unit = NOMINAL_UNIT_PX.min(room / extent);
    if unit < MIN_UNIT_PX {
        return Err(Error::DoesNotFit {
            text: text.to_string(),
            width: extent * MIN_UNIT_PX + 2.0 * MARGIN_PX,
            limit: IMAGE_WIDTH,
        });
    }
    let radius = 0.22 * unit * style.stroke_scale;

    let to_px = |(x, y): (f32, f32)| {
        (
            MARGIN_PX + radius + (x + shear * y - min_x) * unit,
            BASELINE_PX - y * unit,
        )
    };
    let segments: Vec<Segment> = strokes
        .iter()
        .flat_map(|line| line.windows(2).map(|w| (to_px(w[0]), to_px(w[1]))))
        .collect();

    let coverage = stroke_coverage(&segments, radius);
    let ink_value = 1.0 - 2.0 * style.ink_level;
    let noise = rng::normals(&mut jitter, IMAGE_HEIGHT * IMAGE_WIDTH);
    let data = coverage
        .iter()
        .zip(noise)
        .map(|(&cov, n)| {
            (BACKGROUND + (ink_value - BACKGROUND) * cov + NOISE_STD * n).clamp(-1.0, 1.0)
        })
        .collect();
    let mut image = Raster::new(IMAGE_HEIGHT, IMAGE_WIDTH, data)?;
    image.quantize();

    Ok(TextImageSample {
        image,
        text: text.to_string(),
        writer_id: Some(style.writer_id),
        source: Source::Real,
    })
}

fn check_text(text: &str, alphabet: &Alphabet) -> Result<Vec<&'static Glyph>> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let len = text.chars().count();
    if len > MAX_TEXT_LEN {
        return Err(Error::TextTooLong {
            len,
            max: MAX_TEXT_LEN,
        });
    }
    text.chars()
        .map(|c| {
            if !alphabet.contains(c) {
                return Err(Error::UnknownCharacter(c));
            }
            glyphs::glyph(c).ok_or(Error::UnknownCharacter(c))
        })
        .collect()
}

/// Anti-aliased coverage of round-capped strokes of the given radius.
/// Pen segment between two canvas points `(x, y)`.
type Segment = ((f32, f32), (f32, f32));

fn stroke_coverage(segments: &[Segment], radius: f32) -> Vec<f32> {
    let mut dist = vec![f32::INFINITY; IMAGE_HEIGHT * IMAGE_WIDTH];
    let reach = radius + 1.5;
    for &((x0, y0), (x1, y1)) in segments {
        let c0 = ((x0.min(x1) - reach).floor().max(0.0)) as usize;
        let c1 = ((x0.max(x1) + reach).ceil().min(IMAGE_WIDTH as f32 - 1.0)).max(0.0) as usize;
        let r0 = ((y0.min(y1) - reach).floor().max(0.0)) as usize;
        let r1 = ((y0.max(y1) + reach).ceil().min(IMAGE_HEIGHT as f32 - 1.0)).max(0.0) as usize;
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = dx * dx + dy * dy;
        for r in r0..=r1 {
            let py = r as f32 + 0.5;
            for c in c0..=c1 {
                let px = c as f32 + 0.5;
                let t = if len2 > 0.0 {
                    (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (x0 + t * dx - px, y0 + t * dy - py);
                let d = (qx * qx + qy * qy).sqrt();
                let slot = &mut dist[r * IMAGE_WIDTH + c];
                if d < *slot {
                    *slot = d;
                }
            }
        }
    }
    dist.into_iter()
        .map(|d| (radius + 0.5 - d).clamp(0.0, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alphabet() -> Alphabet {
        Alphabet::lowercase()
    }

    #[test]
    fn render_is_deterministic() {
        let w = WriterStyle::preset(0, 1);
        let a = render_word("and", &w, 7, &alphabet()).unwrap();
        let b = render_word("and", &w, 7, &alphabet()).unwrap();
        assert_eq!(a.image, b.image);
        a.image.check_text_image().unwrap();
        assert_eq!(a.text, "and");
    }

    #[test]
    fn empty_text_rejected() {
        let w = WriterStyle::preset(0, 1);
        assert!(matches!(
            render_word("", &w, 0, &alphabet()),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn unknown_character_named() {
        let w = WriterStyle::preset(0, 1);
        match render_word("an?d", &w, 0, &alphabet()) {
            Err(Error::UnknownCharacter(c)) => assert_eq!(c, '?'),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overlong_and_too_wide_text_rejected() {
        let w = WriterStyle::preset(0, 1);
        let long = "a".repeat(MAX_TEXT_LEN + 1);
        assert!(matches!(
            render_word(&long, &w, 0, &alphabet()),
            Err(Error::TextTooLong { .. })
        ));
        let wide = WriterStyle {
            font_id: 1,
            slant: 0.0,
            ..w
        };
        assert!(matches!(
            render_word(&"m".repeat(MAX_TEXT_LEN), &wide, 0, &alphabet()),
            Err(Error::DoesNotFit { .. })
        ));
    }

    #[test]
    fn writers_differ() {
        let a = render_word("and", &WriterStyle::preset(0, 1), 7, &alphabet()).unwrap();
        let b = render_word("and", &WriterStyle::preset(1, 1), 7, &alphabet()).unwrap();
        let mad: f32 = a
            .image
            .data()
            .iter()
            .zip(b.image.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f32>()
            / a.image.data().len() as f32;
        assert!(mad > 0.0);
    }

    #[test]
    fn ink_lands_inside_canvas() {
        let w = WriterStyle::preset(2, 3);
        let s = render_word("quickly", &w, 1, &alphabet()).unwrap();
        let dark = s.image.data().iter().filter(|&&v| v < 0.0).count();
        assert!(dark > 100, "only {dark} inked pixels");
        // right padding stays background
        let col = IMAGE_WIDTH - 1;
        for r in 0..IMAGE_HEIGHT {
            assert!(s.image.get(r, col) > 0.6);
        }
    }

    #[test]
    fn invalid_style_rejected() {
        let mut w = WriterStyle::preset(0, 1);
        w.stroke_scale = 0.0;
        assert!(render_word("a", &w, 0, &alphabet()).is_err());
    }
}
