//! Polyline stroke font for lowercase a-z. Coordinates put the baseline at
//! y = 0 and the x-height at y = 1 (ascenders to 1.7, descenders to -0.7).

type Stroke = &'static [(f64, f64)];

pub(crate) fn glyph(c: char) -> Option<&'static [Stroke]> {
    Some(match c {
        'a' => &[
            &[(0.6, 0.8), (0.4, 1.0), (0.15, 0.9), (0.05, 0.5), (0.15, 0.1), (0.4, 0.0), (0.6, 0.2)],
            &[(0.6, 1.0), (0.6, 0.0)],
        ],
        'b' => &[
            &[(0.05, 1.7), (0.05, 0.0)],
            &[(0.05, 0.7), (0.3, 1.0), (0.55, 0.85), (0.62, 0.5), (0.55, 0.15), (0.3, 0.0), (0.05, 0.2)],
        ],
        'c' => &[&[(0.55, 0.85), (0.35, 1.0), (0.12, 0.85), (0.05, 0.5), (0.12, 0.15), (0.35, 0.0), (0.55, 0.15)]],
        'd' => &[
            &[(0.55, 0.7), (0.3, 1.0), (0.08, 0.85), (0.02, 0.5), (0.08, 0.15), (0.3, 0.0), (0.55, 0.3)],
            &[(0.55, 1.7), (0.55, 0.0)],
        ],
        'e' => &[&[
            (0.05, 0.5),
            (0.55, 0.5),
            (0.5, 0.85),
            (0.3, 1.0),
            (0.1, 0.85),
            (0.03, 0.5),
            (0.1, 0.15),
            (0.3, 0.0),
            (0.55, 0.12),
        ]],
        'f' => &[&[(0.55, 1.6), (0.4, 1.7), (0.25, 1.6), (0.2, 1.3), (0.2, 0.0)], &[(0.02, 1.0), (0.45, 1.0)]],
        'g' => &[
            &[(0.55, 0.8), (0.3, 1.0), (0.08, 0.85), (0.03, 0.5), (0.1, 0.15), (0.3, 0.05), (0.55, 0.3)],
            &[(0.55, 1.0), (0.55, -0.4), (0.4, -0.65), (0.15, -0.6), (0.05, -0.45)],
        ],
        'h' => &[&[(0.05, 1.7), (0.05, 0.0)], &[(0.05, 0.65), (0.25, 0.95), (0.45, 0.95), (0.55, 0.7), (0.55, 0.0)]],
        'i' => &[&[(0.15, 1.0), (0.15, 0.0)], &[(0.15, 1.35), (0.15, 1.45)]],
        'j' => &[&[(0.3, 1.0), (0.3, -0.45), (0.15, -0.65), (0.0, -0.55)], &[(0.3, 1.35), (0.3, 1.45)]],
        'k' => &[&[(0.05, 1.7), (0.05, 0.0)], &[(0.5, 1.0), (0.05, 0.4)], &[(0.2, 0.55), (0.55, 0.0)]],
        'l' => &[&[(0.1, 1.7), (0.1, 0.1), (0.2, 0.0)]],
        'm' => &[
            &[(0.05, 1.0), (0.05, 0.0)],
            &[(0.05, 0.7), (0.2, 0.95), (0.35, 0.9), (0.4, 0.7), (0.4, 0.0)],
            &[(0.4, 0.7), (0.55, 0.95), (0.7, 0.9), (0.75, 0.7), (0.75, 0.0)],
        ],
        'n' => &[&[(0.05, 1.0), (0.05, 0.0)], &[(0.05, 0.65), (0.25, 0.95), (0.45, 0.95), (0.55, 0.7), (0.55, 0.0)]],
        'o' => &[&[
            (0.3, 1.0),
            (0.08, 0.85),
            (0.02, 0.5),
            (0.08, 0.15),
            (0.3, 0.0),
            (0.52, 0.15),
            (0.58, 0.5),
            (0.52, 0.85),
            (0.3, 1.0),
        ]],
        'p' => &[
            &[(0.05, 1.0), (0.05, -0.7)],
            &[(0.05, 0.75), (0.3, 1.0), (0.55, 0.85), (0.6, 0.5), (0.55, 0.15), (0.3, 0.0), (0.05, 0.2)],
        ],
        'q' => &[
            &[(0.55, 0.75), (0.3, 1.0), (0.08, 0.85), (0.02, 0.5), (0.08, 0.15), (0.3, 0.0), (0.55, 0.2)],
            &[(0.55, 1.0), (0.55, -0.7), (0.65, -0.6)],
        ],
        'r' => &[&[(0.05, 1.0), (0.05, 0.0)], &[(0.05, 0.6), (0.2, 0.9), (0.35, 1.0), (0.5, 0.95)]],
        's' => &[&[
            (0.5, 0.9),
            (0.3, 1.0),
            (0.1, 0.9),
            (0.08, 0.7),
            (0.25, 0.55),
            (0.45, 0.45),
            (0.52, 0.25),
            (0.4, 0.03),
            (0.2, 0.0),
            (0.03, 0.1),
        ]],
        't' => &[&[(0.2, 1.4), (0.2, 0.1), (0.3, 0.0), (0.45, 0.05)], &[(0.02, 1.0), (0.42, 1.0)]],
        'u' => &[&[(0.05, 1.0), (0.05, 0.25), (0.15, 0.03), (0.35, 0.0), (0.55, 0.25)], &[(0.55, 1.0), (0.55, 0.0)]],
        'v' => &[&[(0.0, 1.0), (0.3, 0.0), (0.6, 1.0)]],
        'w' => &[&[(0.0, 1.0), (0.2, 0.0), (0.4, 0.8), (0.6, 0.0), (0.8, 1.0)]],
        'x' => &[&[(0.0, 1.0), (0.55, 0.0)], &[(0.55, 1.0), (0.0, 0.0)]],
        'y' => &[&[(0.0, 1.0), (0.3, 0.05)], &[(0.6, 1.0), (0.25, -0.5), (0.1, -0.7)]],
        'z' => &[&[(0.03, 1.0), (0.55, 1.0), (0.03, 0.0), (0.58, 0.0)]],
        _ => return None,
    })
}

/// Horizontal advance of a glyph in x-height units.
pub(crate) fn advance(strokes: &[Stroke]) -> f64 {
    strokes.iter().flat_map(|s| s.iter()).map(|p| p.0).fold(0.0, f64::max) + 0.35
}
