//! Number formatting shared by the CSV writers.

/// Scientific notation with 17 significant digits; round-trips any f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::fmt_f64;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.0, 1990.0, 0.1, 1.0 / 3.0, 273.635_253_487_303_94, -2.5e-300] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(1990.0), "1.9900000000000000e3");
    }
}
