//! Single-stroke glyph outlines for the built-in handwriting-like font.
//!
//! Units: baseline at y = 0, x-height 4, ascender 7, descender -3; y grows upward.

pub(crate) enum Prim {
    /// Open polyline.
    Poly(&'static [(f32, f32)]),
    /// Elliptical arc, angles in degrees, counter-clockwise when `to > from`.
    Arc {
        center: (f32, f32),
        radius: (f32, f32),
        from: f32,
        to: f32,
    },
}

pub(crate) struct Glyph {
    pub width: f32,
    pub prims: &'static [Prim],
}

// A macro rather than a `const fn` so glyph tables stay promotable to `'static`.
macro_rules! arc {
    ($cx:expr, $cy:expr, $rx:expr, $ry:expr, $from:expr, $to:expr) => {
        Prim::Arc {
            center: ($cx, $cy),
            radius: ($rx, $ry),
            from: $from,
            to: $to,
        }
    };
}

const BOWL: Prim = arc!(1.5, 2.0, 1.5, 2.0, 0.0, 360.0);

pub(crate) fn glyph(c: char) -> Option<&'static Glyph> {
    let g: &'static Glyph = match c {
        'a' => &Glyph {
            width: 3.0,
            prims: &[BOWL, Prim::Poly(&[(3.0, 4.0), (3.0, 0.0)])],
        },
        'b' => &Glyph {
            width: 3.0,
            prims: &[Prim::Poly(&[(0.0, 7.0), (0.0, 0.0)]), BOWL],
        },
        'c' => &Glyph {
            width: 3.0,
            prims: &[arc!(1.5, 2.0, 1.5, 2.0, 40.0, 320.0)],
        },
        'd' => &Glyph {
            width: 3.0,
            prims: &[BOWL, Prim::Poly(&[(3.0, 7.0), (3.0, 0.0)])],
        },
        'e' => &Glyph {
            width: 3.0,
            prims: &[
                Prim::Poly(&[(0.0, 2.0), (3.0, 2.0)]),
                arc!(1.5, 2.0, 1.5, 2.0, 0.0, 320.0),
            ],
        },
        'f' => &Glyph {
            width: 2.5,
            prims: &[
                Prim::Poly(&[(1.0, 0.0), (1.0, 5.8)]),
                arc!(2.0, 5.8, 1.0, 1.2, 180.0, 30.0),
                Prim::Poly(&[(0.0, 4.0), (2.2, 4.0)]),
            ],
        },
        'g' => &Glyph {
            width: 3.0,
            prims: &[
                BOWL,
                Prim::Poly(&[(3.0, 4.0), (3.0, -1.5)]),
                arc!(1.5, -1.5, 1.5, 1.5, 0.0, -160.0),
            ],
        },
        'h' => &Glyph {
            width: 3.0,
            prims: &[
                Prim::Poly(&[(0.0, 7.0), (0.0, 0.0)]),
                arc!(1.5, 2.5, 1.5, 1.5, 180.0, 0.0),
                Prim::Poly(&[(3.0, 2.5), (3.0, 0.0)]),
            ],
        },
        'i' => &Glyph {
            width: 1.0,
            prims: &[
                Prim::Poly(&[(0.5, 4.0), (0.5, 0.0)]),
                Prim::Poly(&[(0.5, 5.4), (0.5, 5.8)]),
            ],
        },
        'j' => &Glyph {
            width: 2.0,
            prims: &[
                Prim::Poly(&[(1.5, 4.0), (1.5, -1.5)]),
                arc!(0.5, -1.5, 1.0, 1.5, 0.0, -170.0),
                Prim::Poly(&[(1.5, 5.4), (1.5, 5.8)]),
            ],
        },
        'k' => &Glyph {
            width: 3.0,
            prims: &[
                Prim::Poly(&[(0.0, 7.0), (0.0, 0.0)]),
                Prim::Poly(&[(3.0, 4.0), (0.0, 1.6)]),
                Prim::Poly(&[(1.0, 2.4), (3.0, 0.0)]),
            ],
        },
        'l' => &Glyph {
            width: 1.0,
            prims: &[Prim::Poly(&[(0.5, 7.0), (0.5, 0.0)])],
        },
        'm' => &Glyph {
            width: 5.0,
            prims: &[
                Prim::Poly(&[(0.0, 4.0), (0.0, 0.0)]),
                arc!(1.25, 2.8, 1.25, 1.2, 180.0, 0.0),
                Prim::Poly(&[(2.5, 2.8), (2.5, 0.0)]),
                arc!(3.75, 2.8, 1.25, 1.2, 180.0, 0.0),
                Prim::Poly(&[(5.0, 2.8), (5.0, 0.0)]),
            ],
        },
        'n' => &Glyph {
            width: 3.0,
            prims: &[
                Prim::Poly(&[(0.0, 4.0), (0.0, 0.0)]),
                arc!(1.5, 2.5, 1.5, 1.5, 180.0, 0.0),
                Prim::Poly(&[(3.0, 2.5), (3.0, 0.0)]),
            ],
        },
        'o' => &Glyph {
            width: 3.0,
            prims: &[BOWL],
        },
        'p' => &Glyph {
            width: 3.0,
            prims: &[Prim::Poly(&[(0.0, 4.0), (0.0, -3.0)]), BOWL],
        },
        'q' => &Glyph {
            width: 3.0,
            prims: &[BOWL, Prim::Poly(&[(3.0, 4.0), (3.0, -3.0), (3.6, -2.4)])],
        },
        'r' => &Glyph {
            width: 2.5,
            prims: &[
                Prim::Poly(&[(0.0, 4.0), (0.0, 0.0)]),
                arc!(1.5, 2.5, 1.5, 1.5, 180.0, 50.0),
            ],
        },
        's' => &Glyph {
            width: 3.0,
            prims: &[
                arc!(1.5, 3.0, 1.5, 1.0, 20.0, 270.0),
                arc!(1.5, 1.0, 1.5, 1.0, 90.0, -160.0),
            ],
        },
        't' => &Glyph {
            width: 2.2,
            prims: &[
                Prim::Poly(&[(1.0, 6.0), (1.0, 0.3), (1.4, 0.0), (2.2, 0.0)]),
                Prim::Poly(&[(0.0, 4.0), (2.2, 4.0)]),
            ],
        },
        'u' => &Glyph {
            width: 3.0,
            prims: &[
                Prim::Poly(&[(0.0, 4.0), (0.0, 1.5)]),
                arc!(1.5, 1.5, 1.5, 1.5, 180.0, 360.0),
                Prim::Poly(&[(3.0, 4.0), (3.0, 0.0)]),
            ],
        },
        'v' => &Glyph {
            width: 3.0,
            prims: &[Prim::Poly(&[(0.0, 4.0), (1.5, 0.0), (3.0, 4.0)])],
        },
        'w' => &Glyph {
            width: 5.0,
            prims: &[Prim::Poly(&[
                (0.0, 4.0),
                (1.2, 0.0),
                (2.5, 3.0),
                (3.8, 0.0),
                (5.0, 4.0),
            ])],
        },
        'x' => &Glyph {
            width: 3.0,
            prims: &[
                Prim::Poly(&[(0.0, 4.0), (3.0, 0.0)]),
                Prim::Poly(&[(0.0, 0.0), (3.0, 4.0)]),
            ],
        },
        'y' => &Glyph {
            width: 3.0,
            prims: &[
                Prim::Poly(&[(0.0, 4.0), (1.5, 0.0)]),
                Prim::Poly(&[(3.0, 4.0), (0.6, -3.0)]),
            ],
        },
        'z' => &Glyph {
            width: 3.0,
            prims: &[Prim::Poly(&[
                (0.0, 4.0),
                (3.0, 4.0),
                (0.0, 0.0),
                (3.0, 0.0),
            ])],
        },
        _ => return None,
    };
    Some(g)
}

/// Flattens a glyph into polylines, approximating full circles with `segments_per_circle` chords.
pub(crate) fn flatten(g: &Glyph, segments_per_circle: usize) -> Vec<Vec<(f32, f32)>> {
    g.prims
        .iter()
        .map(|p| match p {
            Prim::Poly(pts) => pts.to_vec(),
            Prim::Arc {
                center,
                radius,
                from,
                to,
            } => {
                let sweep = to - from;
                let n = ((sweep.abs() / 360.0) * segments_per_circle as f32)
                    .ceil()
                    .max(2.0) as usize;
                (0..=n)
                    .map(|k| {
                        let a = (from + sweep * k as f32 / n as f32).to_radians();
                        (center.0 + radius.0 * a.cos(), center.1 + radius.1 * a.sin())
                    })
                    .collect()
            }
        })
        .collect()
}
