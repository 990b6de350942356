use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Frequencies `2^{-l}` for `l = 0..PE_LEVELS`.
pub const PE_LEVELS: usize = 10;

/// Raw time plus a sine and a cosine per frequency.
pub const TIME_DIMS: usize = 1 + 2 * PE_LEVELS;

/// Normalized diffusion time and its multi-frequency encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeEncoding {
    pub raw: f32,
    /// `[sin(2π·t·2^{-l}), cos(2π·t·2^{-l})]` for each `l`, interleaved.
    pub pe: [f32; 2 * PE_LEVELS],
}

impl TimeEncoding {
    /// The `TIME_DIMS` input entries, raw time first.
    pub fn values<T: Scalar>(&self) -> Vec<T> {
        std::iter::once(self.raw)
            .chain(self.pe.iter().copied())
            .map(|v| T::lit(v as f64))
            .collect()
    }
}

pub fn time_encoding(t_norm: f64) -> Result<TimeEncoding> {
    if !(0.0..=1.0).contains(&t_norm) {
        return Err(Error::Range(format!("normalized time {t_norm} outside [0, 1]")));
    }
    let mut pe = [0.0f32; 2 * PE_LEVELS];
    for l in 0..PE_LEVELS {
        let angle = 2.0 * std::f64::consts::PI * t_norm * 0.5f64.powi(l as i32);
        pe[2 * l] = angle.sin() as f32;
        pe[2 * l + 1] = angle.cos() as f32;
    }
    Ok(TimeEncoding {
        raw: t_norm as f32,
        pe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time() {
        let e = time_encoding(0.0).unwrap();
        assert_eq!(e.raw, 0.0);
        for l in 0..PE_LEVELS {
            assert_eq!(e.pe[2 * l], 0.0);
            assert_eq!(e.pe[2 * l + 1], 1.0);
        }
    }

    #[test]
    fn half_time_first_frequency() {
        let e = time_encoding(0.5).unwrap();
        assert!(e.pe[0].abs() < 1e-6);
        assert_eq!(e.pe[1], -1.0);
    }

    #[test]
    fn out_of_range_rejected() {
        for bad in [-0.01, 1.01, f64::NAN] {
            assert!(matches!(time_encoding(bad), Err(Error::Range(_))));
        }
    }

    #[test]
    fn values_layout() {
        let e = time_encoding(0.3).unwrap();
        let v: Vec<f64> = e.values();
        assert_eq!(v.len(), TIME_DIMS);
        assert!((v[0] - 0.3).abs() < 1e-7);
        assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}
