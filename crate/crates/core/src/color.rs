//! sRGB to CIELAB conversion (D65 reference white, 2 degree observer).
//! L lies in [0,100]; a and b are unbounded.

/// Inverse sRGB companding.
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts an sRGB triple (components in [0,1], clamped) to CIELAB.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0].clamp(0.0, 1.0));
    let g = srgb_to_linear(rgb[1].clamp(0.0, 1.0));
    let b = srgb_to_linear(rgb[2].clamp(0.0, 1.0));
    // linear RGB -> XYZ, D65
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    // D65 white point
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    let fx = lab_f(x / xn);
    let fy = lab_f(y / yn);
    let fz = lab_f(z / zn);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pinned_conversion_vectors() {
        let white = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!(close(white[0], 100.0, 1e-3));
        assert!(close(white[1], 0.0, 1e-2));
        assert!(close(white[2], 0.0, 1e-2));

        let black = srgb_to_lab([0.0, 0.0, 0.0]);
        assert!(close(black[0], 0.0, 1e-9));
        assert!(close(black[1], 0.0, 1e-9));
        assert!(close(black[2], 0.0, 1e-9));

        let red = srgb_to_lab([1.0, 0.0, 0.0]);
        assert!(close(red[0], 53.2408, 1e-3));
        assert!(close(red[1], 80.0925, 1e-3));
        assert!(close(red[2], 67.2032, 1e-3));

        let gray = srgb_to_lab([0.5, 0.5, 0.5]);
        assert!(close(gray[0], 53.3890, 1e-3));
        assert!(close(gray[1], 0.0, 1e-2));
        assert!(close(gray[2], 0.0, 1e-2));
    }
}
