//! Pointwise membrane flux laws, the SERCA denominator regularizer, the
//! optional smooth clamp, the cytosolic buffer reaction and stimulus pulses.
//!
//! Sign convention: `flux_er` returns the ER-side interface flux
//! g_e = J_S - J_R - J_le (the ER gains what SERCA pumps in); the cytosol
//! side of the interface receives -g_e. `flux_plasma` returns the cytosol
//! boundary flux g_c = J_lp - J_N - J_P plus any stimulus influx.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FluxError {
    #[error("flux parameter `{0}` must be positive and finite")]
    NonPositiveParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxParams {
    /// RyR channel conductance on the ER membrane.
    pub c1e: f64,
    /// SERCA pump strength.
    pub c2e: f64,
    /// ER leak conductance.
    pub c3e: f64,
    /// PMCA pump strength (second-order Hill).
    pub c1c: f64,
    /// NCX pump strength (first-order Hill).
    pub c2c: f64,
    /// Plasma leak conductance.
    pub c3c: f64,
    /// SERCA half-saturation.
    pub ks: f64,
    /// PMCA half-saturation.
    pub kp: f64,
    /// NCX half-saturation.
    pub kn: f64,
    /// Extracellular calcium concentration.
    pub c_o: f64,
    /// Floor of the SERCA denominator regularizer.
    pub m: f64,
}

impl FluxParams {
    pub fn validate(&self) -> Result<(), FluxError> {
        let named = [
            (self.c1e, "c1e"),
            (self.c2e, "c2e"),
            (self.c3e, "c3e"),
            (self.c1c, "c1c"),
            (self.c2c, "c2c"),
            (self.c3c, "c3c"),
            (self.ks, "ks"),
            (self.kp, "kp"),
            (self.kn, "kn"),
            (self.c_o, "c_o"),
            (self.m, "m"),
        ];
        for (v, name) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FluxError::NonPositiveParameter(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionParams {
    pub kb_minus: f64,
    pub kb_plus: f64,
    pub b0: f64,
}

impl ReactionParams {
    pub fn validate(&self) -> Result<(), FluxError> {
        for (v, name) in [
            (self.kb_minus, "kb_minus"),
            (self.kb_plus, "kb_plus"),
            (self.b0, "b0"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FluxError::NonPositiveParameter(name));
            }
        }
        Ok(())
    }
}

/// Piecewise regularizer keeping the SERCA denominator positive: m/2 for
/// nonpositive arguments, a quintic rational blend on (0, m), identity above.
pub fn phi_m(x: f64, m: f64) -> f64 {
    debug_assert!(m > 0.0);
    if x <= 0.0 {
        m / 2.0
    } else if x < m {
        m.powi(6)
            / (2.0 * m.powi(5) - 5.0 * m.powi(2) * x.powi(3) + 6.0 * m * x.powi(4)
                - 2.0 * x.powi(5))
    } else {
        x
    }
}

/// Smooth clamp: identity on [0, level], saturating C^1-smoothly at -a below
/// zero and at level + a above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClampSpec {
    /// Blend width.
    pub a: f64,
    /// Upper clamp level.
    pub level: f64,
}

pub fn phi_clamp(x: f64, spec: &ClampSpec) -> f64 {
    let (a, m) = (spec.a, spec.level);
    debug_assert!(a > 0.0 && m > 0.0);
    if x <= -a {
        -a
    } else if x < 0.0 {
        3.0 * x.powi(5) / a.powi(4) + 7.0 * x.powi(4) / a.powi(3) + 4.0 * x.powi(3) / a.powi(2) + x
    } else if x <= m {
        x
    } else if x <= m + a {
        let y = x - m;
        3.0 * y.powi(5) / a.powi(4) - 7.0 * y.powi(4) / a.powi(3) + 4.0 * y.powi(3) / a.powi(2) + x
    } else {
        m + a
    }
}

/// ER-side interface flux g_e = J_S - J_R - J_le.
pub fn flux_er(u: f64, u_e: f64, p: f64, params: &FluxParams) -> f64 {
    let j_r = params.c1e * p * (u_e - u);
    let j_s = params.c2e * u / ((params.ks + u) * phi_m(u_e, params.m));
    let j_le = params.c3e * (u_e - u);
    j_s - j_r - j_le
}

/// Plasma membrane flux g_c = J_lp - J_N - J_P plus the stimulus influx.
pub fn flux_plasma(
    u: f64,
    t: f64,
    x: f64,
    y: f64,
    params: &FluxParams,
    influx: &InfluxPulse,
) -> f64 {
    let j_p = params.c1c * u * u / (params.kp * params.kp + u * u);
    let j_n = params.c2c * u / (params.kn + u);
    let j_lp = params.c3c * (params.c_o - u);
    j_lp - j_n - j_p + influx.evaluate(x, y, t)
}

/// Buffer reaction f(b, u) = kb_minus (b0 - b) - kb_plus b u; the same value
/// feeds the calcium and buffer equations.
pub fn reaction(b: f64, u: f64, params: &ReactionParams) -> f64 {
    params.kb_minus * (params.b0 - b) - params.kb_plus * b * u
}

/// Stimulus influx through the plasma membrane, gated by the spatial
/// predicate y - x >= threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InfluxPulse {
    None,
    /// Constant amplitude on [t_start, t_end].
    Rect {
        amplitude: f64,
        t_start: f64,
        t_end: f64,
        min_y_minus_x: f64,
    },
    /// Smooth compact bump on (t_start, t_end) peaking at the midpoint.
    Bump {
        amplitude: f64,
        t_start: f64,
        t_end: f64,
        min_y_minus_x: f64,
    },
}

impl InfluxPulse {
    pub fn evaluate(&self, x: f64, y: f64, t: f64) -> f64 {
        match *self {
            InfluxPulse::None => 0.0,
            InfluxPulse::Rect {
                amplitude,
                t_start,
                t_end,
                min_y_minus_x,
            } => {
                if (t_start..=t_end).contains(&t) && y - x >= min_y_minus_x {
                    amplitude
                } else {
                    0.0
                }
            }
            InfluxPulse::Bump {
                amplitude,
                t_start,
                t_end,
                min_y_minus_x,
            } => {
                if t > t_start && t < t_end && y - x >= min_y_minus_x {
                    let w = 0.5 * (t_end - t_start);
                    let tc = 0.5 * (t_start + t_end);
                    let d = t - tc;
                    amplitude * (-w * w / (w * w - d * d) + 1.0).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), FluxError> {
        match *self {
            InfluxPulse::None => Ok(()),
            InfluxPulse::Rect {
                amplitude,
                t_start,
                t_end,
                ..
            }
            | InfluxPulse::Bump {
                amplitude,
                t_start,
                t_end,
                ..
            } => {
                if !(amplitude.is_finite() && t_start.is_finite() && t_end > t_start) {
                    return Err(FluxError::NonPositiveParameter("influx window"));
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex3_params() -> FluxParams {
        FluxParams {
            c1e: 0.17,
            c2e: 8853.54,
            c3e: 1.0 / 150.0,
            c1c: 19954.0 / 540000.0,
            c2c: 19954.0 / 540000.0,
            c3c: 1.0 / 540000.0,
            ks: 2.0,
            kp: 1.0,
            kn: 1.0,
            c_o: 1000.0,
            m: 1e-3,
        }
    }

    fn ex4_params() -> FluxParams {
        FluxParams {
            c1e: 0.829468,
            c2e: 11000.0,
            c3e: 0.038,
            c1c: 8.5,
            c2c: 37.6,
            c3c: 0.0045,
            ks: 0.18,
            kp: 0.06,
            kn: 1.8,
            c_o: 1000.0,
            m: 1e-3,
        }
    }

    #[test]
    fn phi_m_branch_values() {
        let m = 0.1;
        assert_eq!(phi_m(0.0, m), m / 2.0);
        assert_eq!(phi_m(-3.0, m), m / 2.0);
        assert!((phi_m(m, m) - m).abs() <= 1e-15);
        // Direct-formula oracle for the middle branch at x = m/2.
        let x: f64 = m / 2.0;
        let denom =
            2.0 * m.powi(5) - 5.0 * m * m * x * x * x + 6.0 * m * x.powi(4) - 2.0 * x.powi(5);
        assert!((phi_m(x, m) - m.powi(6) / denom).abs() <= 1e-15);
        // One-sided limits at the knots.
        assert!((phi_m(1e-300, m) - m / 2.0).abs() <= 1e-12);
        assert!((phi_m(m - 1e-12, m) - m).abs() <= 1e-10);
    }

    #[test]
    fn phi_m_bounded_below_on_grid() {
        let m = 0.05;
        for k in 0..10_000 {
            let x = -m + 3.0 * m * (k as f64) / 9_999.0;
            let v = phi_m(x, m);
            assert!(v >= m / 2.0 - 1e-15, "phi_m({x}) = {v}");
        }
    }

    #[test]
    fn phi_clamp_identity_and_saturation() {
        let spec = ClampSpec {
            a: 0.25,
            level: 3.0,
        };
        for x in [0.0, 0.1, 1.5, 3.0] {
            assert_eq!(phi_clamp(x, &spec), x);
        }
        assert_eq!(phi_clamp(-spec.a, &spec), -spec.a);
        assert_eq!(phi_clamp(-10.0, &spec), -spec.a);
        let top = spec.level + spec.a;
        assert!((phi_clamp(top, &spec) - top).abs() <= 1e-12);
        assert_eq!(phi_clamp(100.0, &spec), top);
    }

    #[test]
    fn phi_clamp_is_c1_at_the_knots() {
        let spec = ClampSpec {
            a: 0.25,
            level: 3.0,
        };
        let eps = 1e-7;
        let deriv = |x: f64| (phi_clamp(x + eps, &spec) - phi_clamp(x - eps, &spec)) / (2.0 * eps);
        for (x, want) in [
            (0.0, 1.0),
            (spec.level, 1.0),
            (-spec.a, 0.0),
            (spec.level + spec.a, 0.0),
        ] {
            assert!((deriv(x) - want).abs() <= 1e-6, "x = {x}: {}", deriv(x));
        }
        // One-sided derivatives at zero both equal one.
        let left = (phi_clamp(0.0, &spec) - phi_clamp(-eps, &spec)) / eps;
        let right = (phi_clamp(eps, &spec) - phi_clamp(0.0, &spec)) / eps;
        assert!((left - 1.0).abs() <= 1e-6);
        assert!((right - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn er_flux_difference_terms_vanish_at_equal_concentrations() {
        let p = ex4_params();
        for conc in [0.1, 5.0, 80.0] {
            let g = flux_er(conc, conc, 0.7, &p);
            let j_s = p.c2e * conc / ((p.ks + conc) * phi_m(conc, p.m));
            assert!((g - j_s).abs() <= 1e-12 * j_s);
            assert!(g >= 0.0);
        }
    }

    #[test]
    fn er_flux_sign_at_zero_calcium() {
        let p = ex4_params();
        for ue in [0.0, 1.0, 250.0] {
            for prob in [0.0, 0.5, 1.0] {
                let g = flux_er(0.0, ue, prob, &p);
                assert!(g <= 0.0, "g_e(0, {ue}) = {g}");
                assert!((g - -(p.c1e * prob + p.c3e) * ue).abs() <= 1e-12 * ue.max(1.0));
            }
        }
    }

    /// Regression: the minimal wave scenario starts on an exact ER-membrane
    /// equilibrium (SERCA balances the leak at P = 0).
    #[test]
    fn er_flux_balances_at_wave_scenario_rest_state() {
        let g = flux_er(0.05, 180.0, 0.0, &ex3_params());
        assert!(g.abs() <= 1e-12, "g_e = {g:e}");
    }

    #[test]
    fn plasma_flux_signs() {
        let p = ex4_params();
        let none = InfluxPulse::None;
        let at_zero = flux_plasma(0.0, 0.0, 0.0, 0.0, &p, &none);
        assert!((at_zero - p.c3c * p.c_o).abs() <= 1e-12 * p.c_o);
        assert!(at_zero > 0.0);
        let at_co = flux_plasma(p.c_o, 0.0, 0.0, 0.0, &p, &none);
        assert!(at_co <= 0.0);
    }

    /// Pinned value: leak plus rectangular stimulus of the minimal wave
    /// scenario at zero calcium inside the pulse window.
    #[test]
    fn plasma_flux_with_rect_pulse() {
        let p = ex3_params();
        let pulse = InfluxPulse::Rect {
            amplitude: 3.0,
            t_start: 0.05,
            t_end: 0.65,
            min_y_minus_x: 2.5,
        };
        let g = flux_plasma(0.0, 0.1, -1.5, 1.5, &p, &pulse);
        assert!((g - (1000.0 / 540000.0 + 3.0)).abs() <= 1e-12);
        // Outside the spatial window only the leak remains.
        let g_out = flux_plasma(0.0, 0.1, 1.5, 1.5, &p, &pulse);
        assert!((g_out - 1000.0 / 540000.0).abs() <= 1e-15);
    }

    #[test]
    fn bump_pulse_shape() {
        let pulse = InfluxPulse::Bump {
            amplitude: 240.0,
            t_start: 0.1,
            t_end: 0.3,
            min_y_minus_x: 2.5,
        };
        // Peak value at the center is the full amplitude.
        assert!((pulse.evaluate(-2.0, 2.0, 0.2) - 240.0).abs() <= 1e-9);
        // Matches the closed form 240 exp(-0.01/(0.01 - (t-0.2)^2) + 1).
        for t in [0.12, 0.18, 0.25, 0.29] {
            let d: f64 = t - 0.2;
            let want = 240.0 * (-0.01 / (0.01 - d * d) + 1.0).exp();
            assert!((pulse.evaluate(-2.0, 2.0, t) - want).abs() <= 1e-9 * want.max(1.0));
        }
        assert_eq!(pulse.evaluate(-2.0, 2.0, 0.1), 0.0);
        assert_eq!(pulse.evaluate(-2.0, 2.0, 0.31), 0.0);
        assert_eq!(pulse.evaluate(2.0, 2.0, 0.2), 0.0);
    }

    #[test]
    fn reaction_examples() {
        let params = ReactionParams {
            kb_minus: 16.65,
            kb_plus: 27.0,
            b0: 40.0,
        };
        assert_eq!(reaction(params.b0, 0.0, &params), 0.0);
        assert_eq!(reaction(0.0, 1.0, &params), params.kb_minus * params.b0);
        // Full-model rest state: storage balances release to roundoff.
        let v = reaction(37.0, 0.05, &params);
        assert!(v.abs() <= 1e-12, "f(37, 0.05) = {v:e}");
    }

    /// Empirical Lipschitz bound of the ER flux on a compact box of bounded
    /// positive traces: the largest sampled gradient magnitude is finite and
    /// stable under grid refinement. (The box keeps u_e above the
    /// regularizer width m, where the SERCA slope in u_e stays bounded.)
    #[test]
    fn er_flux_lipschitz_constant_is_stable() {
        let p = ex4_params();
        let delta = 1e-6;
        let estimate = |n: usize| -> f64 {
            let mut worst = 0.0f64;
            for pi in 0..3 {
                let prob = pi as f64 / 2.0;
                for i in 0..n {
                    for j in 0..n {
                        let u = 10.0 * i as f64 / (n - 1) as f64;
                        let ue = 0.5 + 299.5 * j as f64 / (n - 1) as f64;
                        let gu = (flux_er(u + delta, ue, prob, &p)
                            - flux_er((u - delta).max(0.0), ue, prob, &p))
                            / (u + delta - (u - delta).max(0.0));
                        let ge = (flux_er(u, ue + delta, prob, &p)
                            - flux_er(u, ue - delta, prob, &p))
                            / (2.0 * delta);
                        let gp = (flux_er(u, ue, (prob + delta).min(1.0), &p)
                            - flux_er(u, ue, (prob - delta).max(0.0), &p))
                            / ((prob + delta).min(1.0) - (prob - delta).max(0.0));
                        worst = worst.max(gu.abs()).max(ge.abs()).max(gp.abs());
                    }
                }
            }
            worst
        };
        let coarse = estimate(60);
        let fine = estimate(120);
        assert!(fine.is_finite() && coarse.is_finite());
        assert!(
            fine <= 1.05 * coarse + 1e-9,
            "not stable: {coarse} -> {fine}"
        );
    }

    #[test]
    fn parameter_validation() {
        assert!(ex3_params().validate().is_ok());
        let mut bad = ex3_params();
        bad.ks = 0.0;
        assert!(matches!(
            bad.validate(),
            Err(FluxError::NonPositiveParameter("ks"))
        ));
    }
}
