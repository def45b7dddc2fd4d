use serde::{Deserialize, Serialize};

/// Memory-pressure penalty: flat up to `knee_r`, a linear ramp to `f_full`
/// at `full_r`, then a penalty growing with swap use anchored at 0.5% and
/// 1% of physical memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlowdownModel {
    pub knee_r: f64,
    pub full_r: f64,
    pub f_full: f64,
    pub swap_half_pct_f: f64,
    pub swap_one_pct_f: f64,
}

impl Default for SlowdownModel {
    fn default() -> Self {
        Self { knee_r: 0.95, full_r: 1.0, f_full: 2.0, swap_half_pct_f: 5.0, swap_one_pct_f: 10.0 }
    }
}

impl SlowdownModel {
    pub fn validate(&self) -> Result<(), String> {
        let ordered = 1.0 <= self.f_full
            && self.f_full <= self.swap_half_pct_f
            && self.swap_half_pct_f <= self.swap_one_pct_f
            && self.swap_one_pct_f.is_finite();
        if !ordered {
            return Err("need 1 <= f_full <= swap_half_pct_f <= swap_one_pct_f".into());
        }
        if !(self.knee_r >= 0.0 && self.knee_r < self.full_r) {
            return Err("need 0 <= knee_r < full_r".into());
        }
        Ok(())
    }
}

const HALF_PCT: f64 = 0.005;
const ONE_PCT: f64 = 0.01;

/// Slowdown multiplier at utilization `r` with `swap_frac` of physical
/// memory swapped out (0.005 = 0.5%).
pub fn slowdown_factor(model: &SlowdownModel, r: f64, swap_frac: f64) -> f64 {
    let ramp = if r <= model.knee_r {
        1.0
    } else if r >= model.full_r {
        model.f_full
    } else {
        1.0 + (model.f_full - 1.0) * (r - model.knee_r) / (model.full_r - model.knee_r)
    };
    let s = swap_frac.max(0.0);
    let swap_extra = if s <= HALF_PCT {
        (model.swap_half_pct_f - model.f_full) * s / HALF_PCT
    } else {
        let slope = (model.swap_one_pct_f - model.swap_half_pct_f) / (ONE_PCT - HALF_PCT);
        model.swap_half_pct_f - model.f_full + slope * (s - HALF_PCT)
    };
    ramp + swap_extra
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let m = SlowdownModel::default();
        assert_eq!(slowdown_factor(&m, 0.50, 0.0), 1.0);
        assert!((slowdown_factor(&m, 0.975, 0.0) - 1.5).abs() < 1e-12);
        assert!((slowdown_factor(&m, 1.0, 0.005) - 5.0).abs() < 1e-12);
        assert!((slowdown_factor(&m, 1.0, 0.01) - 10.0).abs() < 1e-12);
        assert!((slowdown_factor(&m, 1.0, 0.02) - 20.0).abs() < 1e-12);
        assert_eq!(slowdown_factor(&m, 1.0, 0.0), 2.0);
    }

    #[test]
    fn validation() {
        assert!(SlowdownModel::default().validate().is_ok());
        let bad = SlowdownModel { f_full: 6.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SlowdownModel { knee_r: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_flat_below_knee(r1 in 0.0f64..1.2, r2 in 0.0f64..1.2, s1 in 0.0f64..0.03, s2 in 0.0f64..0.03) {
            let m = SlowdownModel::default();
            let (rl, rh) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let (sl, sh) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            prop_assert!(slowdown_factor(&m, rl, sl) <= slowdown_factor(&m, rh, sl));
            prop_assert!(slowdown_factor(&m, rl, sl) <= slowdown_factor(&m, rl, sh));
            if rl <= m.knee_r {
                prop_assert_eq!(slowdown_factor(&m, rl, 0.0), 1.0);
            }
            prop_assert!(slowdown_factor(&m, rh, sh) >= 1.0);
        }

        #[test]
        fn continuous(r in 0.0f64..1.2, s in 0.0f64..0.03) {
            let m = SlowdownModel::default();
            let h = 1e-9;
            let f = slowdown_factor(&m, r, s);
            prop_assert!((slowdown_factor(&m, r + h, s) - f).abs() < 1e-6);
            prop_assert!((slowdown_factor(&m, r, s + h) - f).abs() < 1e-5);
        }
    }
}
