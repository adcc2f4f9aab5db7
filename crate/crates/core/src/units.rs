//! Physical constants and decibel conversions.

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// dBm to watts: 30 dBm is 1 W.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    linear_to_db(w) + 30.0
}

pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

/// Wraps an angle in radians to (-pi, pi].
pub fn wrap_pi(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dbm_round_trip() {
        assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(watts_to_dbm(dbm_to_watts(-174.0)), -174.0, epsilon = 1e-12);
    }

    #[test]
    fn wrap_stays_in_half_open_interval() {
        use std::f64::consts::PI;
        assert_relative_eq!(wrap_pi(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_pi(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_pi(0.25), 0.25);
    }
}
