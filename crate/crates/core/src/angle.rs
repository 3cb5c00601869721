//! Phase wrapping and the `p/q pi` angle notation used by gait catalogs.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Joint range of every actuated joint, `[-JOINT_LIMIT, JOINT_LIMIT]` rad.
pub const JOINT_LIMIT: f64 = 0.75 * PI;

/// Wrap an angle into `(-pi, pi]`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(TWO_PI);
    if y > PI {
        y - TWO_PI
    } else {
        y
    }
}

/// Parse an angle written either as decimal radians (`"0.25"`, `"-1e-3"`)
/// or as a rational multiple of pi (`"pi"`, `"-pi"`, `"3 pi"`, `"1/2 pi"`,
/// `"-3/4pi"`).
pub fn parse_angle(text: &str) -> std::result::Result<f64, String> {
    let s = text.trim();
    if s.is_empty() {
        return Err("empty angle".into());
    }
    if let Some(coef) = s.strip_suffix("pi") {
        let coef = coef.trim();
        let (num, den) = match coef {
            "" | "+" => (1i64, 1i64),
            "-" => (-1, 1),
            _ => match coef.split_once('/') {
                Some((p, q)) => (parse_int(p)?, parse_int(q)?),
                None => (parse_int(coef)?, 1),
            },
        };
        if den <= 0 {
            return Err(format!("non-positive denominator in `{text}`"));
        }
        return Ok(rational_pi(num, den));
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("malformed angle `{text}`"))?;
    if !v.is_finite() {
        return Err(format!("non-finite angle `{text}`"));
    }
    Ok(v)
}

fn parse_int(s: &str) -> std::result::Result<i64, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("malformed rational coefficient `{s}`"))
}

/// `num/den * pi`, evaluated the same way on parse and on format so that
/// catalog angles round-trip bit-exactly.
#[inline]
pub fn rational_pi(num: i64, den: i64) -> f64 {
    num as f64 * PI / den as f64
}

/// Format an angle for a catalog file: the smallest `p/q pi` form that
/// reproduces the value exactly, otherwise the shortest decimal that does.
pub fn format_angle(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    for den in 1..=720i64 {
        let num = (x * den as f64 / PI).round();
        if num.abs() > 1e6 {
            break;
        }
        let num = num as i64;
        if num != 0 && rational_pi(num, den) == x {
            return match (num, den) {
                (1, 1) => "pi".into(),
                (-1, 1) => "-pi".into(),
                (p, 1) => format!("{p} pi"),
                (p, q) => format!("{p}/{q} pi"),
            };
        }
    }
    // `{}` on f64 prints the shortest representation that parses back exactly.
    format!("{x}")
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} contains non-finite values")))
    }
}
