//! Numbers with unit suffixes, e.g. `"30 dBm"` or `"120 kHz"`.

use std::fmt;

use ris_nlos::units::{db_to_linear, dbm_to_watts};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Frequency,
    Time,
    Power,
    /// Dimensionless gain given in decibels.
    Gain,
    Angle,
    Speed,
    /// Power spectral density.
    Density,
    Area,
}

impl Dimension {
    fn accepted(self) -> &'static str {
        match self {
            Dimension::Length => "m, cm, mm, km",
            Dimension::Frequency => "Hz, kHz, MHz, GHz",
            Dimension::Time => "s, ms, us, ns",
            Dimension::Power => "W, mW, dBm, dBW",
            Dimension::Gain => "dB, dBi",
            Dimension::Angle => "deg, rad",
            Dimension::Speed => "mps, m/s, km/h",
            Dimension::Density => "dBm/Hz, W/Hz",
            Dimension::Area => "m2, dBsm",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dimension::Length => "length",
            Dimension::Frequency => "frequency",
            Dimension::Time => "time",
            Dimension::Power => "power",
            Dimension::Gain => "gain",
            Dimension::Angle => "angle",
            Dimension::Speed => "speed",
            Dimension::Density => "noise density",
            Dimension::Area => "area",
        };
        f.write_str(s)
    }
}

/// Converts `text` to the SI value of `dim` (angles to degrees).
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, String> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, c)| {
            c.is_alphabetic() && !(matches!(c, 'e' | 'E') && t[i + 1..].starts_with(|d: char| d.is_ascii_digit() || d == '-' || d == '+'))
        })
        .map_or(t.len(), |(i, _)| i);
    let (num, unit) = (t[..split].trim(), t[split..].trim());
    let value: f64 = num
        .parse()
        .map_err(|_| format!("`{text}`: `{num}` is not a number"))?;
    if unit.is_empty() {
        return Err(format!("`{text}`: missing unit for {dim} (expected one of {})", dim.accepted()));
    }
    let si = match (dim, unit) {
        (Dimension::Length, "m") => value,
        (Dimension::Length, "cm") => value * 1e-2,
        (Dimension::Length, "mm") => value * 1e-3,
        (Dimension::Length, "km") => value * 1e3,
        (Dimension::Frequency, "Hz") => value,
        (Dimension::Frequency, "kHz") => value * 1e3,
        (Dimension::Frequency, "MHz") => value * 1e6,
        (Dimension::Frequency, "GHz") => value * 1e9,
        (Dimension::Time, "s") => value,
        (Dimension::Time, "ms") => value * 1e-3,
        (Dimension::Time, "us" | "µs") => value * 1e-6,
        (Dimension::Time, "ns") => value * 1e-9,
        (Dimension::Power, "W") => value,
        (Dimension::Power, "mW") => value * 1e-3,
        (Dimension::Power, "dBm") => dbm_to_watts(value),
        (Dimension::Power, "dBW") => db_to_linear(value),
        (Dimension::Gain, "dB" | "dBi") => db_to_linear(value),
        (Dimension::Angle, "deg") => value,
        (Dimension::Angle, "rad") => value.to_degrees(),
        (Dimension::Speed, "mps" | "m/s") => value,
        (Dimension::Speed, "km/h") => value / 3.6,
        (Dimension::Density, "dBm/Hz") => dbm_to_watts(value),
        (Dimension::Density, "W/Hz") => value,
        (Dimension::Area, "m2" | "m^2") => value,
        (Dimension::Area, "dBsm") => db_to_linear(value),
        _ => {
            return Err(format!(
                "`{text}`: unit `{unit}` is not a {dim} unit (expected one of {})",
                dim.accepted()
            ))
        }
    };
    if !si.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    Ok(si)
}

/// Value in dBm of a power quantity.
pub fn parse_dbm(text: &str) -> Result<f64, String> {
    parse_quantity(text, Dimension::Power).map(ris_nlos::units::watts_to_dbm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
    }

    #[test]
    fn conversions() {
        assert!(close(parse_quantity("30 dBm", Dimension::Power).unwrap(), 1.0));
        assert!(close(parse_quantity("0dBW", Dimension::Power).unwrap(), 1.0));
        assert!(close(parse_quantity("250 mW", Dimension::Power).unwrap(), 0.25));
        assert!(close(parse_quantity("120 kHz", Dimension::Frequency).unwrap(), 120e3));
        assert!(close(parse_quantity("28GHz", Dimension::Frequency).unwrap(), 28e9));
        assert!(close(parse_quantity("1.07 cm", Dimension::Length).unwrap(), 0.0107));
        assert!(close(parse_quantity("-174 dBm/Hz", Dimension::Density).unwrap(), 10f64.powf(-20.4)));
        assert!(close(parse_quantity("3 dB", Dimension::Gain).unwrap(), 10f64.powf(0.3)));
        assert!(close(parse_quantity("1e-3 s", Dimension::Time).unwrap(), 1e-3));
        assert!(close(parse_quantity("2.5e1 mps", Dimension::Speed).unwrap(), 25.0));
        assert!(close(parse_quantity("36 km/h", Dimension::Speed).unwrap(), 10.0));
        assert!(close(parse_quantity("-45 deg", Dimension::Angle).unwrap(), -45.0));
        assert!(close(parse_dbm("1 W").unwrap(), 30.0));
    }

    #[test]
    fn rejects_missing_and_foreign_units() {
        let e = parse_quantity("30", Dimension::Power).unwrap_err();
        assert!(e.contains("missing unit"), "{e}");
        let e = parse_quantity("30 kHz", Dimension::Power).unwrap_err();
        assert!(e.contains("not a power unit"), "{e}");
        assert!(parse_quantity("abc dB", Dimension::Gain).is_err());
        assert!(parse_quantity("", Dimension::Gain).is_err());
    }
}
