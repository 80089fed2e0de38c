//! Exact text encoding of `f64` values as hexadecimal floating-point literals.

/// `-0x1.8p+1` style encoding; round-trips bit-exactly through [`parse`].
pub fn format(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1 << 52) - 1);
    if exp == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{e:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{e:+}")
    }
}

/// Parses hexadecimal literals (with or without a fraction) as well as decimal numbers.
pub fn parse(s: &str) -> Option<f64> {
    let t = s.trim();
    match t {
        "nan" | "NaN" => return Some(f64::NAN),
        "inf" | "+inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let unsigned = t.trim_start_matches(['-', '+']);
    if unsigned.starts_with("0x") || unsigned.starts_with("0X") {
        hexf_parse::parse_hexf64(t, false).ok()
    } else {
        t.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_encodings() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(-3.0), "-0x1.8p+1");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(0.1), "0x1.999999999999ap-4");
    }

    #[test]
    fn round_trip_edge_values() {
        for v in [
            1.0,
            -2.5,
            0.1,
            f64::MIN_POSITIVE,
            f64::MIN_POSITIVE / 3.0,
            5e-324,
            f64::MAX,
            -f64::MAX,
            std::f64::consts::PI,
            -0.0,
        ] {
            let back = parse(&format(v)).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {}", format(v));
        }
        assert_eq!(parse("2.5"), Some(2.5));
        assert_eq!(parse("junk"), None);
        assert!(parse(&format(f64::NAN)).unwrap().is_nan());
    }
}
