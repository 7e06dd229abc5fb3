//! Double-double helpers. Sector energy differences and curvature
//! determinants cancel to many digits, so mode sums are carried in
//! `TwoFloat` and only rounded at the end.

use twofloat::TwoFloat;

pub type Dd = TwoFloat;

pub fn dd(x: f64) -> Dd {
    TwoFloat::from(x)
}

pub fn to_f64(x: Dd) -> f64 {
    x.hi() + x.lo()
}

/// a / b to full double-double accuracy.
///
/// `TwoFloat`'s own quotient forms its reciprocal residual without a fused
/// multiply-add, which leaves it only f64 accurate. Classic long division
/// with three partial quotients fixes that; each residual uses the exact
/// TwoFloat × f64 product.
pub fn div(a: Dd, b: Dd) -> Dd {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

/// `sin(πp/q)` and `cos(πp/q)` to double-double accuracy.
///
/// The library trigonometry of `TwoFloat` is only f64 accurate, which is
/// not enough here. The angle is reduced exactly in integers to
/// `jπ/2 + y` with `|y| ≤ π/4`, then a Taylor series finishes the job.
/// Multiples of π/2 come out exact (sin(π) is 0, not 1e-16).
pub fn sincos_pi_frac(p: i64, q: i64) -> (Dd, Dd) {
    assert!(q > 0, "denominator must be positive");
    // x = π·2p/(2q) = jπ/2 + π·r/(2q) with j the integer nearest 2p/q.
    let two_p = 2 * p as i128;
    let q = q as i128;
    let j = (2 * two_p + q).div_euclid(2 * q);
    let r = two_p - j * q;
    let (s, c) = if r == 0 {
        (dd(0.0), dd(1.0))
    } else {
        let y = twofloat::consts::PI * (r as f64) / (2.0 * q as f64);
        taylor_sincos(y)
    };
    match j.rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

fn taylor_sincos(y: Dd) -> (Dd, Dd) {
    let y2 = y * y;
    let mut sin = y;
    let mut cos = dd(1.0);
    let mut ts = y;
    let mut tc = dd(1.0);
    let mut n = 1.0;
    while n < 60.0 {
        tc = -tc * y2 / ((2.0 * n - 1.0) * (2.0 * n));
        ts = -ts * y2 / ((2.0 * n) * (2.0 * n + 1.0));
        cos += tc;
        sin += ts;
        if tc.hi().abs() < 1e-36 && ts.hi().abs() < 1e-36 {
            break;
        }
        n += 1.0;
    }
    (sin, cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn exact_quadrants() {
        for (p, q, s, c) in [
            (0, 5, 0.0, 1.0),
            (1, 2, 1.0, 0.0),
            (1, 1, 0.0, -1.0),
            (3, 2, -1.0, 0.0),
            (2, 1, 0.0, 1.0),
            (10, 10, 0.0, -1.0),
        ] {
            let (ss, cc) = sincos_pi_frac(p, q);
            assert_eq!((ss.hi(), ss.lo()), (s, 0.0), "sin {p}/{q}");
            assert_eq!((cc.hi(), cc.lo()), (c, 0.0), "cos {p}/{q}");
        }
    }

    #[test]
    fn agrees_with_f64_and_is_unit() {
        for q in 1..40i64 {
            for p in -3 * q..3 * q {
                let (s, c) = sincos_pi_frac(p, q);
                let x = PI * p as f64 / q as f64;
                assert!((s.hi() - x.sin()).abs() < 1e-14);
                assert!((c.hi() - x.cos()).abs() < 1e-14);
                let one = s * s + c * c - 1.0;
                assert!(to_f64(one).abs() < 1e-30, "p={p} q={q}");
            }
        }
    }

    #[test]
    fn division_is_double_double_accurate() {
        let third = div(dd(1.0), dd(3.0));
        assert!(to_f64(third * 3.0 - 1.0).abs() < 1e-31);
        let x = TwoFloat::new_add(0.7, 1.234e-18);
        let y = TwoFloat::new_add(1.3, -4.5e-19);
        let back = div(x, y) * y - x;
        assert!(to_f64(back).abs() < 1e-31);
    }

    #[test]
    fn five_sixths_is_exactly_half() {
        let (s, _) = sincos_pi_frac(5, 6);
        assert!(to_f64(s - 0.5).abs() < 1e-31);
    }
}
