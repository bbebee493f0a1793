//! C99-style hexadecimal floating-point text for `f64`.
//!
//! Model files store parameters as hex-float text (`0x1.921fb54442d18p+1`),
//! which round-trips every finite double bit-identically and stays readable.

/// Format a finite `f64` as hex-float text.
///
/// Panics on NaN or infinity; model parameters are validated finite upstream.
pub fn format(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    assert!(exp != 0x7ff, "cannot format non-finite value {v}");
    if exp == 0 {
        if mant == 0 {
            format!("{sign}0x0p+0")
        } else {
            // subnormal: 0.mant * 2^-1022
            format!("{sign}0x0.{mant:013x}p-1022")
        }
    } else {
        format!("{sign}0x1.{mant:013x}p{:+}", exp - 1023)
    }
}

/// Parse hex-float text produced by [`format`].
pub fn parse(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let (neg, rest) = match text.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(|| format!("missing 0x prefix in '{text}'"))?;
    let (mant_part, exp_part) = rest
        .split_once(['p', 'P'])
        .ok_or_else(|| format!("missing exponent in '{text}'"))?;
    let exp: i64 = exp_part
        .parse()
        .map_err(|_| format!("bad exponent '{exp_part}'"))?;
    let (int_part, frac_part) = mant_part.split_once('.').unwrap_or((mant_part, ""));
    if frac_part.len() > 13 {
        return Err(format!("fraction too long in '{text}'"));
    }
    let leading: u64 = match int_part {
        "0" => 0,
        "1" => 1,
        _ => return Err(format!("leading digit must be 0 or 1 in '{text}'")),
    };
    let mut mant: u64 = 0;
    for ch in frac_part.chars() {
        let d = ch
            .to_digit(16)
            .ok_or_else(|| format!("bad hex digit '{ch}' in '{text}'"))?;
        mant = (mant << 4) | u64::from(d);
    }
    mant <<= 4 * (13 - frac_part.len());

    let sign_bit = if neg { 1u64 << 63 } else { 0 };
    let bits = if leading == 0 {
        if mant == 0 {
            sign_bit
        } else {
            if exp != -1022 {
                return Err(format!("subnormal must have exponent -1022 in '{text}'"));
            }
            sign_bit | mant
        }
    } else {
        if !(-1022..=1023).contains(&exp) {
            return Err(format!("exponent {exp} out of range in '{text}'"));
        }
        sign_bit | (((exp + 1023) as u64) << 52) | mant
    };
    Ok(f64::from_bits(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(1.0), "0x1.0000000000000p+0");
        assert_eq!(format(-1.5), "-0x1.8000000000000p+0");
        assert_eq!(parse("0x1.8p+1").unwrap(), 3.0);
        assert_eq!(parse("0x1p-3").unwrap(), 0.125);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("1.5").is_err());
        assert!(parse("0x2.0p+0").is_err());
        assert!(parse("0x1.0p").is_err());
        assert!(parse("0x1.zzp+0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse(&format(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
