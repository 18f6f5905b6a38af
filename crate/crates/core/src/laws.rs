//! Exponent calculus, Carreau-Yasuda viscous law, (nu, s)-Laplace convection
//! law and the exponent condition report.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("convection jacobian is singular at w = 0 for s = {s} < 2")]
    Singular { s: f64 },
}

/// Conjugate exponent `m' = m / (m - 1)`.
pub fn conjugate(m: f64) -> f64 {
    if m.is_infinite() {
        1.0
    } else if m == 1.0 {
        f64::INFINITY
    } else {
        m / (m - 1.0)
    }
}

/// Singular exponent `min(m, 2)`.
pub fn singular(m: f64) -> f64 {
    m.min(2.0)
}

/// Sobolev exponent `d m / (d - m)` if `m < d`, infinity otherwise.
pub fn sobolev(m: f64, d: usize) -> f64 {
    let d = d as f64;
    if m < d {
        d * m / (d - m)
    } else {
        f64::INFINITY
    }
}

fn check_exponent(name: &str, m: f64) -> Result<(), LawError> {
    if m.is_finite() && m > 1.0 {
        Ok(())
    } else {
        Err(LawError::InvalidParameter(format!("{name} must lie in (1, inf), got {m}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub r: f64,
    pub s: f64,
    pub d: usize,
}

impl Exponents {
    pub fn new(r: f64, s: f64, d: usize) -> Result<Self, LawError> {
        check_exponent("r", r)?;
        check_exponent("s", s)?;
        if d != 2 && d != 3 {
            return Err(LawError::InvalidParameter(format!("dimension must be 2 or 3, got {d}")));
        }
        Ok(Self { r, s, d })
    }

    pub fn r_conj(&self) -> f64 {
        conjugate(self.r)
    }
    pub fn r_sing(&self) -> f64 {
        singular(self.r)
    }
    pub fn r_sob(&self) -> f64 {
        sobolev(self.r, self.d)
    }
    pub fn s_conj(&self) -> f64 {
        conjugate(self.s)
    }
    pub fn s_sing(&self) -> f64 {
        singular(self.s)
    }

    /// Upper bound `r* / r'` of the consistency interval for `s`.
    pub fn consistency_bound(&self) -> f64 {
        self.r_sob() / self.r_conj()
    }

    /// Upper bound `r~* / r~'` of the uniqueness interval for `s`.
    pub fn uniqueness_bound(&self) -> f64 {
        let rs = self.r_sing();
        sobolev(rs, self.d) / conjugate(rs)
    }
}

/// Frobenius norm of a 2x2 tensor.
fn frob(t: &Matrix2<f64>) -> f64 {
    t.norm()
}

/// Row-major flattening `[t00, t01, t10, t11]`.
pub fn flatten(t: &Matrix2<f64>) -> Vector4<f64> {
    Vector4::new(t[(0, 0)], t[(0, 1)], t[(1, 0)], t[(1, 1)])
}

pub fn unflatten(v: &Vector4<f64>) -> Matrix2<f64> {
    Matrix2::new(v[0], v[1], v[2], v[3])
}

/// `sigma(tau) = mu (delta^a + |tau|^a)^((r-2)/a) tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarreauYasuda {
    pub mu: f64,
    pub delta: f64,
    pub a: f64,
    pub r: f64,
}

impl CarreauYasuda {
    pub fn new(mu: f64, delta: f64, a: f64, r: f64) -> Result<Self, LawError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(LawError::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(LawError::InvalidParameter(format!("delta must be non-negative, got {delta}")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(LawError::InvalidParameter(format!("yasuda_a must be positive, got {a}")));
        }
        check_exponent("r", r)?;
        Ok(Self { mu, delta, a, r })
    }

    /// Scalar viscosity as a function of `t = |tau|`.
    ///
    /// At `t = 0` with `delta = 0` the value is 0 for `r > 2` and infinite for
    /// `r < 2`; callers multiplying by `tau` should use [`Self::stress`].
    pub fn viscosity_at(&self, t: f64) -> f64 {
        if self.r == 2.0 {
            return self.mu;
        }
        let base = self.delta.powf(self.a) + t.powf(self.a);
        self.mu * base.powf((self.r - 2.0) / self.a)
    }

    pub fn viscosity(&self, tau: &Matrix2<f64>) -> f64 {
        self.viscosity_at(frob(tau))
    }

    pub fn stress(&self, tau: &Matrix2<f64>) -> Matrix2<f64> {
        let t = frob(tau);
        if t == 0.0 {
            return Matrix2::zeros();
        }
        self.viscosity_at(t) * tau
    }

    /// `d nu / d t`.
    fn viscosity_derivative(&self, t: f64) -> f64 {
        if self.r == 2.0 || t == 0.0 {
            return 0.0;
        }
        let base = self.delta.powf(self.a) + t.powf(self.a);
        self.mu * (self.r - 2.0) * t.powf(self.a - 1.0) * base.powf((self.r - 2.0 - self.a) / self.a)
    }

    /// Jacobian of the stress acting on row-major flattened tensors:
    /// `nu(|tau|) Id + nu'(|tau|) / |tau| tau (x) tau`.
    ///
    /// At `tau = 0` with `delta = 0` and `r != 2` the limit branch returns 0.
    pub fn jacobian(&self, tau: &Matrix2<f64>) -> Matrix4<f64> {
        let t = frob(tau);
        if t == 0.0 {
            if self.delta == 0.0 && self.r != 2.0 {
                return Matrix4::zeros();
            }
            return self.viscosity_at(0.0) * Matrix4::identity();
        }
        let v = flatten(tau);
        self.viscosity_at(t) * Matrix4::identity() + (self.viscosity_derivative(t) / t) * v * v.transpose()
    }
}

/// `chi(w) = nu |w|^(s-2) w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceConvection {
    pub nu: f64,
    pub s: f64,
}

impl LaplaceConvection {
    pub fn new(nu: f64, s: f64) -> Result<Self, LawError> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(LawError::InvalidParameter(format!("nu must be non-negative, got {nu}")));
        }
        check_exponent("s", s)?;
        Ok(Self { nu, s })
    }

    pub fn is_off(&self) -> bool {
        self.nu == 0.0
    }

    pub fn eval(&self, w: &Vector2<f64>) -> Vector2<f64> {
        let n = w.norm();
        if self.nu == 0.0 || n == 0.0 {
            return Vector2::zeros();
        }
        if self.s == 2.0 {
            return self.nu * w;
        }
        self.nu * n.powf(self.s - 2.0) * w
    }

    /// `nu (|w|^(s-2) I + (s-2) |w|^(s-4) w (x) w)`.
    ///
    /// At `w = 0`: zero for `s > 2`, `nu I` for `s = 2`, singular for `s < 2`.
    pub fn jacobian(&self, w: &Vector2<f64>) -> Result<Matrix2<f64>, LawError> {
        let n = w.norm();
        if self.s == 2.0 {
            return Ok(self.nu * Matrix2::identity());
        }
        if n == 0.0 {
            if self.s > 2.0 || self.nu == 0.0 {
                return Ok(Matrix2::zeros());
            }
            return Err(LawError::Singular { s: self.s });
        }
        Ok(self.nu
            * (n.powf(self.s - 2.0) * Matrix2::identity() + (self.s - 2.0) * n.powf(self.s - 4.0) * w * w.transpose()))
    }
}

/// Viscous and convective laws of a generalized Navier-Stokes problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidLaws {
    pub viscous: CarreauYasuda,
    pub convection: LaplaceConvection,
    /// Stabilization prefactor relative to `mu`.
    pub stab_scaling: f64,
}

impl FluidLaws {
    pub fn new(viscous: CarreauYasuda, convection: LaplaceConvection) -> Self {
        Self {
            viscous,
            convection,
            stab_scaling: 1.0,
        }
    }

    /// Newtonian Stokes law with viscosity `mu` and no convection.
    pub fn stokes(mu: f64) -> Self {
        Self::new(
            CarreauYasuda { mu, delta: 1.0, a: 2.0, r: 2.0 },
            LaplaceConvection { nu: 0.0, s: 2.0 },
        )
    }

    pub fn exponents(&self) -> Exponents {
        Exponents {
            r: self.viscous.r,
            s: self.convection.s,
            d: 2,
        }
    }

    /// Stabilization prefactor `stab_scaling * mu`.
    pub fn stab_factor(&self) -> f64 {
        self.stab_scaling * self.viscous.mu
    }
}

/// Closed interval of predicted convergence orders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInterval {
    pub lo: f64,
    pub hi: f64,
}

impl RateInterval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_point(&self) -> bool {
        (self.hi - self.lo).abs() <= 1e-14 * self.hi.abs().max(1.0)
    }
}

impl std::fmt::Display for RateInterval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_point() {
            write!(f, "{}", fmt_num(self.lo))
        } else {
            write!(f, "[{}, {}]", fmt_num(self.lo), fmt_num(self.hi))
        }
    }
}

/// Short decimal form without trailing zeros.
pub fn fmt_num(x: f64) -> String {
    if x.is_infinite() {
        return "inf".into();
    }
    let s = format!("{:.6}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub exponents: Exponents,
    pub k: usize,
    /// `s <= r*/r'`.
    pub consistency_ok: bool,
    /// `s < r*/r'`.
    pub strict_consistency_ok: bool,
    /// `2 <= s <= r~*/r~'`.
    pub uniqueness_interval_ok: bool,
    /// `r <= 2 <= s <= r*/r'`.
    pub error_estimate_ok: bool,
    /// Interval of `s` values for which the error estimate applies, if any.
    pub error_estimate_s_interval: Option<(f64, f64)>,
    pub predicted_rate_velocity: RateInterval,
    pub predicted_rate_pressure: RateInterval,
    /// Rates come from the generalized Stokes theory rather than the error estimate.
    pub stokes_fallback: bool,
}

pub fn condition_report(r: f64, s: f64, d: usize, k: usize) -> Result<ConditionReport, LawError> {
    let exps = Exponents::new(r, s, d)?;
    if k < 1 {
        return Err(LawError::InvalidParameter("k must be ≥ 1".into()));
    }
    let cb = exps.consistency_bound();
    let ub = exps.uniqueness_bound();
    let consistency_ok = s <= cb;
    let strict_consistency_ok = s < cb;
    let uniqueness_interval_ok = 2.0 <= s && s <= ub;
    let error_estimate_ok = r <= 2.0 && 2.0 <= s && s <= cb;
    let error_estimate_s_interval = (r <= 2.0 && cb >= 2.0).then_some((2.0, cb));

    let kp1 = (k + 1) as f64;
    let (vel, pre, fallback) = if r <= 2.0 {
        (
            RateInterval { lo: kp1 * (r - 1.0), hi: kp1 },
            RateInterval { lo: kp1 * (r - 1.0).powi(2), hi: kp1 * (r - 1.0) },
            !error_estimate_ok,
        )
    } else {
        let rate = kp1 / (r - 1.0);
        (RateInterval::point(rate), RateInterval::point(rate), true)
    };
    Ok(ConditionReport {
        exponents: exps,
        k,
        consistency_ok,
        strict_consistency_ok,
        uniqueness_interval_ok,
        error_estimate_ok,
        error_estimate_s_interval,
        predicted_rate_velocity: vel,
        predicted_rate_pressure: pre,
        stokes_fallback: fallback,
    })
}

impl std::fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let e = &self.exponents;
        let cb = e.consistency_bound();
        let ub = e.uniqueness_bound();
        writeln!(
            f,
            "exponents: r={} s={} d={} k={}; r'={} r*={} s'={}",
            fmt_num(e.r),
            fmt_num(e.s),
            e.d,
            self.k,
            fmt_num(e.r_conj()),
            fmt_num(e.r_sob()),
            fmt_num(e.s_conj())
        )?;
        let cons = if self.strict_consistency_ok {
            format!("s={} < r*/r'={} (strict)", fmt_num(e.s), fmt_num(cb))
        } else if self.consistency_ok {
            format!("s={} ≤ r*/r'={} (non-strict only)", fmt_num(e.s), fmt_num(cb))
        } else {
            format!("s={} > r*/r'={} (violated)", fmt_num(e.s), fmt_num(cb))
        };
        writeln!(f, "consistency: {cons}")?;
        writeln!(
            f,
            "uniqueness: 2 ≤ s ≤ r~*/r~'={}: {}",
            fmt_num(ub),
            if self.uniqueness_interval_ok { "yes" } else { "no" }
        )?;
        match self.error_estimate_s_interval {
            Some((lo, hi)) if hi.is_infinite() => writeln!(f, "error-estimate interval for s: [{}, inf)", fmt_num(lo))?,
            Some((lo, hi)) if lo == hi => writeln!(f, "error-estimate interval for s: {{{}}}", fmt_num(lo))?,
            Some((lo, hi)) => writeln!(f, "error-estimate interval for s: [{}, {}]", fmt_num(lo), fmt_num(hi))?,
            None => writeln!(f, "error-estimate interval for s: empty")?,
        }
        writeln!(f, "error estimate applies: {}", if self.error_estimate_ok { "yes" } else { "no" })?;
        if self.stokes_fallback && e.r > 2.0 {
            writeln!(f, "rates: Stokes fallback (k+1)/(r-1) = {}", fmt_num(self.predicted_rate_velocity.lo))?;
        }
        writeln!(f, "O_vel = {}", self.predicted_rate_velocity)?;
        write!(f, "O_pre = {}", self.predicted_rate_pressure)
    }
}
