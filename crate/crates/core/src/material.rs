//! Local constitutive model: softening, dissipation, the tension/compression
//! asymmetric free energy and the pointwise damage update.
//!
//! The residual stiffness floor enters as an affine blend
//! `g_k(d) = k_res + (1 - k_res) g(d)`, used in every energy evaluation, so
//! the displacement and damage half-steps minimize the same functional.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaterialError {
    #[error("invalid material parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{what} = {value} is outside [0, 1]")]
    OutOfDomain { what: &'static str, value: f64 },
    #[error("saturation strain is undefined for eta = 0")]
    SaturationUndefined,
}

/// Plane-strain isotropic material with Lip-field damage parameters.
/// Units: MPa for moduli and `yc`, mm for `l`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MaterialParams {
    pub young: f64,
    pub poisson: f64,
    pub yc: f64,
    pub l: f64,
    pub eta: f64,
    pub beta: f64,
    pub k_res: f64,
}

impl MaterialParams {
    pub fn new(
        young: f64,
        poisson: f64,
        yc: f64,
        l: f64,
        eta: f64,
        beta: f64,
        k_res: f64,
    ) -> Result<Self, MaterialError> {
        let m = Self {
            young,
            poisson,
            yc,
            l,
            eta,
            beta,
            k_res,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let bad = |name, value, reason| Err(MaterialError::InvalidParameter { name, value, reason });
        if !(self.young > 0.0 && self.young.is_finite()) {
            return bad("E", self.young, "must be positive");
        }
        if !(self.poisson > -1.0 && self.poisson < 0.5) {
            return bad("nu", self.poisson, "must lie in (-1, 0.5)");
        }
        if !(self.yc > 0.0 && self.yc.is_finite()) {
            return bad("Yc", self.yc, "must be positive");
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad("l", self.l, "must be positive");
        }
        if !(0.0..=1.0 / 3.0).contains(&self.eta) {
            return bad("eta", self.eta, "must lie in [0, 1/3] for convexity");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", self.beta, "must lie in [0, 1]");
        }
        if !(0.0..0.1).contains(&self.k_res) {
            return bad("k_res", self.k_res, "must lie in [0, 0.1)");
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.young * self.poisson / ((1.0 + self.poisson) * (1.0 - 2.0 * self.poisson))
    }

    pub fn mu(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    /// Plane-strain P-wave modulus λ + 2μ.
    pub fn p_modulus(&self) -> f64 {
        self.lambda() + 2.0 * self.mu()
    }

    pub fn is_symmetric(&self) -> bool {
        self.beta == 1.0
    }

    /// Stiffness multiplier with the residual floor.
    pub fn g_floor(&self, d: f64) -> f64 {
        self.k_res + (1.0 - self.k_res) * g(d, self.eta)
    }
}

/// Small strain in the plane; `xy` is the tensor (not engineering) shear.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Strain2D {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

/// Principal decomposition: `values[0] <= values[1]`, `n1 = (c, s)` is the
/// direction of `values[0]` and `n2 = (-s, c)`.
#[derive(Debug, Clone, Copy)]
pub struct Principal {
    pub values: [f64; 2],
    pub c: f64,
    pub s: f64,
}

impl Strain2D {
    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub fn uniaxial(e: f64) -> Self {
        Self::new(e, 0.0, 0.0)
    }

    /// From Voigt components with engineering shear.
    pub fn from_voigt(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], 0.5 * v[2])
    }

    pub fn voigt(&self) -> [f64; 3] {
        [self.xx, self.yy, 2.0 * self.xy]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        self.principal().values
    }

    pub fn principal(&self) -> Principal {
        let m = 0.5 * (self.xx + self.yy);
        let h = 0.5 * (self.xx - self.yy);
        let r = h.hypot(self.xy);
        // direction of the larger eigenvalue
        let half = 0.5 * self.xy.atan2(h);
        Principal {
            values: [m - r, m + r],
            c: -half.sin(),
            s: half.cos(),
        }
    }

    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            xx: c * c * self.xx - 2.0 * c * s * self.xy + s * s * self.yy,
            yy: s * s * self.xx + 2.0 * c * s * self.xy + c * c * self.yy,
            xy: c * s * (self.xx - self.yy) + (c * c - s * s) * self.xy,
        }
    }
}

#[inline]
pub(crate) fn g(d: f64, eta: f64) -> f64 {
    let r = 1.0 - d;
    r * r + eta * r * d * d * d
}

#[inline]
pub(crate) fn dg(d: f64, eta: f64) -> f64 {
    -2.0 * (1.0 - d) + eta * (3.0 * d * d - 4.0 * d * d * d)
}

#[inline]
pub(crate) fn d2g(d: f64, eta: f64) -> f64 {
    2.0 + eta * (6.0 * d - 12.0 * d * d)
}

fn check_unit(what: &'static str, d: f64) -> Result<(), MaterialError> {
    if (0.0..=1.0).contains(&d) {
        Ok(())
    } else {
        Err(MaterialError::OutOfDomain { what, value: d })
    }
}

pub fn softening_g(d: f64, eta: f64) -> Result<f64, MaterialError> {
    check_unit("d", d)?;
    Ok(g(d, eta))
}

pub fn softening_g_prime(d: f64, eta: f64) -> Result<f64, MaterialError> {
    check_unit("d", d)?;
    Ok(dg(d, eta))
}

pub fn dissipation_h(d: f64) -> Result<f64, MaterialError> {
    check_unit("d", d)?;
    Ok(2.0 * d + 3.0 * d * d)
}

pub fn dissipation_h_prime(d: f64) -> Result<f64, MaterialError> {
    check_unit("d", d)?;
    Ok(2.0 + 6.0 * d)
}

#[inline]
fn alpha(e: f64, beta: f64) -> f64 {
    if e < 0.0 {
        beta
    } else {
        1.0
    }
}

/// Stiffness multipliers `[G1, G2, G_tr]` of the two principal terms and the
/// trace term at damage `d`.
fn multipliers(p: &Principal, tr: f64, d: f64, mat: &MaterialParams) -> [f64; 3] {
    [
        mat.g_floor(alpha(p.values[0], mat.beta) * d),
        mat.g_floor(alpha(p.values[1], mat.beta) * d),
        mat.g_floor(alpha(tr, mat.beta) * d),
    ]
}

/// Free energy density φ(ε, d) in MPa.
pub fn free_energy(eps: &Strain2D, d: f64, mat: &MaterialParams) -> f64 {
    let p = eps.principal();
    let tr = eps.trace();
    let gm = multipliers(&p, tr, d, mat);
    let mu = mat.mu();
    mu * (gm[0] * p.values[0].powi(2) + gm[1] * p.values[1].powi(2))
        + 0.5 * mat.lambda() * gm[2] * tr * tr
}

/// The plane-strain split `(φ0, φ1)` with ε1 < ε2 case formulas.
pub fn phi_split(eps: &Strain2D, mat: &MaterialParams) -> (f64, f64) {
    let [e1, e2] = eps.eigenvalues();
    let mu = mat.mu();
    let vol = 0.5 * mat.lambda() * (e1 + e2).powi(2);
    if e1 >= 0.0 {
        (0.0, vol + mu * (e1 * e1 + e2 * e2))
    } else if e2 < 0.0 {
        (mu * (e1 * e1 + e2 * e2), vol)
    } else {
        (mu * e1 * e1, vol + mu * e2 * e2)
    }
}

/// Stress `[σxx, σyy, σxy]` in MPa.
pub fn stress(eps: &Strain2D, d: f64, mat: &MaterialParams) -> [f64; 3] {
    let p = eps.principal();
    let tr = eps.trace();
    let gm = multipliers(&p, tr, d, mat);
    let mu = mat.mu();
    let f1 = 2.0 * mu * gm[0] * p.values[0];
    let f2 = 2.0 * mu * gm[1] * p.values[1];
    let vol = mat.lambda() * gm[2] * tr;
    let (c, s) = (p.c, p.s);
    [
        f1 * c * c + f2 * s * s + vol,
        f1 * s * s + f2 * c * c + vol,
        (f1 - f2) * c * s,
    ]
}

/// Consistent tangent in Voigt form (engineering shear), MPa.
pub fn tangent(eps: &Strain2D, d: f64, mat: &MaterialParams) -> [[f64; 3]; 3] {
    let p = eps.principal();
    let tr = eps.trace();
    let gm = multipliers(&p, tr, d, mat);
    let mu = mat.mu();
    let lam_t = mat.lambda() * gm[2];
    let (c, s) = (p.c, p.s);
    let (e1, e2) = (p.values[0], p.values[1]);
    let (h1, h2) = (2.0 * mu * gm[0], 2.0 * mu * gm[1]);
    let k = if gm[0] == gm[1] || (e2 - e1).abs() <= 1e-14 * (e1.abs() + e2.abs() + 1e-300) {
        0.5 * (h1 + h2)
    } else {
        (h1 * e1 - h2 * e2) / (e1 - e2)
    };
    let dp = [h1, h2, 0.5 * k];
    let t = [
        [c * c, s * s, c * s],
        [s * s, c * c, -c * s],
        [-2.0 * c * s, 2.0 * c * s, c * c - s * s],
    ];
    let mut out = [[lam_t, lam_t, 0.0], [lam_t, lam_t, 0.0], [0.0; 3]];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += (0..3).map(|a| t[a][i] * dp[a] * t[a][j]).sum::<f64>();
        }
    }
    out
}

/// Undamaged plane-strain Hooke matrix in Voigt form (engineering shear).
pub fn hooke(mat: &MaterialParams) -> [[f64; 3]; 3] {
    let (l, m) = (mat.lambda(), mat.mu());
    [[l + 2.0 * m, l, 0.0], [l, l + 2.0 * m, 0.0], [0.0, 0.0, m]]
}

/// f(ε, d) = φ(ε, d) + Yc h(d).
pub fn local_objective_f(eps: &Strain2D, d: f64, mat: &MaterialParams) -> f64 {
    free_energy(eps, d, mat) + mat.yc * (2.0 * d + 3.0 * d * d)
}

/// The damage-dependent part of f for a frozen strain, as a function of d
/// alone: `Σ c_k g_k(α_k d) + Yc h(d)`. Outside `[0, 1]` the softening
/// polynomial is continued by its second-order Taylor expansion, which keeps
/// the function convex and C² on the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamageDensity {
    coef: [f64; 3],
    alpha: [f64; 3],
    eta: f64,
    k_res: f64,
    yc: f64,
}

fn g_ext(s: f64, eta: f64) -> (f64, f64, f64) {
    if s < 0.0 {
        let (a, b, c) = (g(0.0, eta), dg(0.0, eta), d2g(0.0, eta));
        (a + b * s + 0.5 * c * s * s, b + c * s, c)
    } else if s > 1.0 {
        let (a, b, c) = (g(1.0, eta), dg(1.0, eta), d2g(1.0, eta));
        let t = s - 1.0;
        (a + b * t + 0.5 * c * t * t, b + c * t, c)
    } else {
        (g(s, eta), dg(s, eta), d2g(s, eta))
    }
}

impl DamageDensity {
    pub fn new(eps: &Strain2D, mat: &MaterialParams) -> Self {
        let p = eps.principal();
        let tr = eps.trace();
        let mu = mat.mu();
        Self {
            coef: [
                mu * p.values[0].powi(2),
                mu * p.values[1].powi(2),
                0.5 * mat.lambda() * tr * tr,
            ],
            alpha: [
                alpha(p.values[0], mat.beta),
                alpha(p.values[1], mat.beta),
                alpha(tr, mat.beta),
            ],
            eta: mat.eta,
            k_res: mat.k_res,
            yc: mat.yc,
        }
    }

    /// Value, first and second derivative in d.
    pub fn eval(&self, d: f64) -> (f64, f64, f64) {
        let w = 1.0 - self.k_res;
        let (mut v, mut dv, mut d2v) = (0.0, 0.0, 0.0);
        for k in 0..3 {
            if self.coef[k] == 0.0 {
                continue;
            }
            let a = self.alpha[k];
            let (gv, gd, gdd) = g_ext(a * d, self.eta);
            v += self.coef[k] * (self.k_res + w * gv);
            dv += self.coef[k] * w * a * gd;
            d2v += self.coef[k] * w * a * a * gdd;
        }
        v += self.yc * (2.0 * d + 3.0 * d * d);
        dv += self.yc * (2.0 + 6.0 * d);
        d2v += 6.0 * self.yc;
        (v, dv, d2v)
    }

    pub fn value(&self, d: f64) -> f64 {
        self.eval(d).0
    }

    /// Undamaged-reference elastic energy density `Σ c_k` (the part scaled
    /// by the softening terms).
    pub fn elastic_scale(&self) -> f64 {
        self.coef.iter().sum()
    }

    /// Minimizer over `[lo, hi]` by safeguarded Newton on the derivative.
    pub fn minimize(&self, lo: f64, hi: f64, tol: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        let (_, dlo, _) = self.eval(lo);
        if dlo >= 0.0 {
            return lo;
        }
        let (_, dhi, _) = self.eval(hi);
        if dhi <= 0.0 {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        let mut x = 0.5 * (a + b);
        for _ in 0..200 {
            let (_, fp, fpp) = self.eval(x);
            if fp == 0.0 {
                return x;
            }
            if fp < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let newton = if fpp > 0.0 { x - fp / fpp } else { f64::NAN };
            let next = if newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if (next - x).abs() <= tol || b - a <= tol {
                return next.clamp(lo, hi);
            }
            x = next;
        }
        x.clamp(lo, hi)
    }
}

/// Pointwise damage update: minimizer of f(ε, ·) over `[d_n, 1]`.
pub fn local_damage_update(eps: &Strain2D, d_n: f64, mat: &MaterialParams, tol: f64) -> f64 {
    DamageDensity::new(eps, mat).minimize(d_n.clamp(0.0, 1.0), 1.0, tol)
}

/// Uniaxial strain at which damage starts to grow.
pub fn onset_strain(mat: &MaterialParams) -> f64 {
    (2.0 * mat.yc / mat.p_modulus()).sqrt()
}

/// Uniaxial strain at which d = 1 becomes stationary, from η φ1 = 8 Yc.
pub fn saturation_strain(mat: &MaterialParams) -> Result<f64, MaterialError> {
    if mat.eta <= 0.0 {
        return Err(MaterialError::SaturationUndefined);
    }
    Ok(4.0 * (mat.yc / (mat.eta * mat.p_modulus())).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1(beta: f64) -> MaterialParams {
        MaterialParams::new(1.0, 0.2, 1.0, 1.0, 0.1, beta, 1e-6).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn softening_values() {
        assert_eq!(softening_g(0.0, 0.1).unwrap(), 1.0);
        assert_eq!(softening_g(1.0, 0.1).unwrap(), 0.0);
        assert!((softening_g(0.5, 0.1).unwrap() - 0.25625).abs() < 1e-15);
        assert!(softening_g(1.5, 0.1).is_err());
        assert!(softening_g(-0.1, 0.1).is_err());
    }

    #[test]
    fn dissipation_values() {
        assert_eq!(dissipation_h(0.0).unwrap(), 0.0);
        assert_eq!(dissipation_h(1.0).unwrap(), 5.0);
        assert_eq!(dissipation_h_prime(0.5).unwrap(), 5.0);
        assert!(dissipation_h(2.0).is_err());
    }

    #[test]
    fn g_convex_on_unit_interval() {
        for eta in [0.0, 0.1, 0.2, 1.0 / 3.0] {
            for i in 0..=1000 {
                assert!(d2g(i as f64 / 1000.0, eta) >= -1e-12);
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(MaterialParams::new(-1.0, 0.2, 1.0, 1.0, 0.1, 1.0, 0.0).is_err());
        assert!(MaterialParams::new(1.0, 0.5, 1.0, 1.0, 0.1, 1.0, 0.0).is_err());
        assert!(MaterialParams::new(1.0, 0.2, 1.0, 1.0, 0.4, 1.0, 0.0).is_err());
        assert!(MaterialParams::new(1.0, 0.2, 1.0, 0.0, 0.1, 1.0, 0.0).is_err());
        assert!(MaterialParams::new(1.0, 0.2, 1.0, 1.0, 0.1, 1.2, 0.0).is_err());
    }

    #[test]
    fn free_energy_examples() {
        let m = table1(0.0);
        assert_eq!(free_energy(&Strain2D::default(), 0.4, &m), 0.0);
        let e = Strain2D::new(0.3, -0.1, 0.05);
        let [e1, e2] = e.eigenvalues();
        let iso = 0.5 * m.lambda() * e.trace().powi(2) + m.mu() * (e1 * e1 + e2 * e2);
        assert!(rel(free_energy(&e, 0.0, &m), iso) < 1e-14);
        let c = Strain2D::new(-0.2, -0.1, 0.03);
        for d in [0.0, 0.3, 1.0] {
            assert!(rel(free_energy(&c, d, &m), free_energy(&c, 0.0, &m)) < 1e-15);
        }
    }

    #[test]
    fn phi_split_examples() {
        let m = table1(1.0);
        let (l, mu) = (m.lambda(), m.mu());
        let (p0, p1) = phi_split(&Strain2D::new(0.1, 0.1, 0.0), &m);
        assert!(p0 == 0.0 && rel(p1, 0.5 * l * 0.04 + mu * 0.02) < 1e-14);
        let (p0, p1) = phi_split(&Strain2D::new(-0.1, -0.1, 0.0), &m);
        assert!(rel(p0, mu * 0.02) < 1e-14 && rel(p1, 0.5 * l * 0.04) < 1e-14);
        let (p0, p1) = phi_split(&Strain2D::new(-0.1, 0.1, 0.0), &m);
        assert!(rel(p0, mu * 0.01) < 1e-14 && rel(p1, mu * 0.01) < 1e-14);
    }

    #[test]
    fn stress_scales_for_symmetric_model() {
        let m = table1(1.0);
        let e = Strain2D::uniaxial(0.01);
        let s0 = stress(&e, 0.0, &m);
        let s = stress(&e, 0.5, &m);
        let gk = m.g_floor(0.5);
        for k in 0..3 {
            assert!((s[k] - gk * s0[k]).abs() < 1e-15);
        }
        assert!(rel(s0[0], m.p_modulus() * 0.01) < 1e-14);
        assert!(rel(s0[1], m.lambda() * 0.01) < 1e-14);
    }

    #[test]
    fn compression_recovers_stiffness() {
        let m = table1(0.0);
        let e = Strain2D::new(-0.02, -0.01, 0.001);
        assert_eq!(stress(&e, 1.0, &m), stress(&e, 0.0, &m));
    }

    #[test]
    fn objective_examples() {
        let m = table1(1.0);
        assert!((local_objective_f(&Strain2D::default(), 1.0, &m) - 5.0).abs() < 1e-15);
        let e = Strain2D::new(0.3, 0.1, 0.0);
        assert_eq!(local_objective_f(&e, 0.0, &m), free_energy(&e, 0.0, &m));
    }

    #[test]
    fn local_update_examples() {
        let m = table1(1.0);
        assert_eq!(local_damage_update(&Strain2D::uniaxial(1.0), 0.0, &m, 1e-12), 0.0);
        assert_eq!(local_damage_update(&Strain2D::uniaxial(2.0), 1.0, &m, 1e-12), 1.0);
        let e = Strain2D::uniaxial(2.0);
        let d = local_damage_update(&e, 0.0, &m, 1e-12);
        let best = (0..=10_000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|a, b| local_objective_f(&e, *a, &m).total_cmp(&local_objective_f(&e, *b, &m)))
            .unwrap();
        assert!((d - best).abs() <= 1e-12 + 1e-4, "{d} vs {best}");
        assert!(d > 0.0 && d < 1.0);
    }

    #[test]
    fn onset_and_saturation() {
        let m = table1(1.0);
        assert!((onset_strain(&m) - 1.3416).abs() < 1e-4);
        let mut m0 = m;
        m0.eta = 0.0;
        let mut m3 = m;
        m3.eta = 0.3;
        assert_eq!(onset_strain(&m0), onset_strain(&m3));
        assert_eq!(saturation_strain(&m0), Err(MaterialError::SaturationUndefined));
        let sat = saturation_strain(&m).unwrap();
        assert!(local_damage_update(&Strain2D::uniaxial(sat * 1.001), 0.0, &m, 1e-12) == 1.0);
        assert!(local_damage_update(&Strain2D::uniaxial(sat * 0.99), 0.0, &m, 1e-12) < 1.0);
    }

    #[test]
    fn density_extension_is_smooth() {
        let m = table1(0.5);
        let dd = DamageDensity::new(&Strain2D::new(0.5, -0.3, 0.2), &m);
        for x in [0.0, 1.0] {
            let (a, b, c) = dd.eval(x - 1e-9);
            let (a2, b2, c2) = dd.eval(x + 1e-9);
            assert!((a - a2).abs() < 1e-7 && (b - b2).abs() < 1e-7 && (c - c2).abs() < 1e-6);
        }
        for i in -50..150 {
            assert!(dd.eval(i as f64 / 50.0).2 > 0.0);
        }
    }

    fn strain() -> impl Strategy<Value = Strain2D> {
        (-2.0..2.0f64, -2.0..2.0f64, -1.0..1.0f64).prop_map(|(a, b, c)| Strain2D::new(a, b, c))
    }

    fn away_from_kinks(e: &Strain2D) -> bool {
        let [e1, e2] = e.eigenvalues();
        e1.abs() > 1e-3 && e2.abs() > 1e-3 && (e2 - e1) > 1e-3 && e.trace().abs() > 1e-3
    }

    proptest! {
        #[test]
        fn eigenvalues_solve_characteristic(e in strain()) {
            let [e1, e2] = e.eigenvalues();
            prop_assert!((e1 + e2 - e.trace()).abs() < 1e-12);
            for v in [e1, e2] {
                let p = (e.xx - v) * (e.yy - v) - e.xy * e.xy;
                prop_assert!(p.abs() < 1e-12);
            }
            let pr = e.principal();
            // n1 is an eigenvector of the smaller value
            let r0 = e.xx * pr.c + e.xy * pr.s - e1 * pr.c;
            let r1 = e.xy * pr.c + e.yy * pr.s - e1 * pr.s;
            prop_assert!(r0.abs() < 1e-12 && r1.abs() < 1e-12);
        }

        #[test]
        fn df_matches_finite_differences(e in strain(), d in 0.05..0.95f64, beta in 0.0..1.0f64) {
            let m = table1(beta);
            let dd = DamageDensity::new(&e, &m);
            let h = 1e-6;
            let fd = (local_objective_f(&e, d + h, &m) - local_objective_f(&e, d - h, &m)) / (2.0 * h);
            let (_, an, _) = dd.eval(d);
            prop_assert!((fd - an).abs() <= 1e-8 * (1.0 + an.abs()), "{fd} {an}");
            prop_assert!(rel(dd.value(d), local_objective_f(&e, d, &m)) < 1e-13);
        }

        #[test]
        fn stress_matches_energy_gradient(e in strain(), d in 0.0..1.0f64, beta in 0.0..1.0f64) {
            prop_assume!(away_from_kinks(&e));
            let m = table1(beta);
            let s = stress(&e, d, &m);
            let h = 1e-7;
            let v = e.voigt();
            for k in 0..3 {
                let mut p = v;
                let mut q = v;
                p[k] += h;
                q[k] -= h;
                let fd = (free_energy(&Strain2D::from_voigt(p), d, &m)
                    - free_energy(&Strain2D::from_voigt(q), d, &m)) / (2.0 * h);
                let an = if k == 2 { s[2] } else { s[k] };
                let scale = s.iter().map(|x| x.abs()).fold(1e-3, f64::max);
                prop_assert!((fd - an).abs() <= 1e-5 * scale, "k={k} fd={fd} an={an}");
            }
        }

        #[test]
        fn tangent_matches_stress_gradient(e in strain(), d in 0.0..1.0f64, beta in 0.0..1.0f64) {
            prop_assume!(away_from_kinks(&e));
            let m = table1(beta);
            let t = tangent(&e, d, &m);
            let h = 1e-7;
            let v = e.voigt();
            for j in 0..3 {
                let mut p = v;
                let mut q = v;
                p[j] += h;
                q[j] -= h;
                let sp = stress(&Strain2D::from_voigt(p), d, &m);
                let sq = stress(&Strain2D::from_voigt(q), d, &m);
                for i in 0..3 {
                    let fd = (sp[i] - sq[i]) / (2.0 * h);
                    prop_assert!((fd - t[i][j]).abs() <= 1e-5 * (1.0 + t[i][j].abs()), "{i}{j}: {fd} vs {}", t[i][j]);
                }
            }
        }

        #[test]
        fn local_update_is_frame_indifferent(e in strain(), angle in 0.0..6.3f64, dn in 0.0..1.0f64, beta in 0.0..1.0f64) {
            let m = table1(beta);
            let a = local_damage_update(&e, dn, &m, 1e-12);
            let b = local_damage_update(&e.rotated(angle), dn, &m, 1e-12);
            prop_assert!((a - b).abs() < 1e-10);
            prop_assert!(a >= dn);
        }

        #[test]
        fn symmetric_split_identity_in_tension(a in 0.0..2.0f64, b in 0.0..2.0f64, c in -0.5..0.5f64, d in 0.0..1.0f64) {
            let mut m = table1(1.0);
            m.k_res = 0.0;
            let e = Strain2D::new(a + c.abs(), b + c.abs(), c);
            prop_assume!(e.eigenvalues()[0] >= 0.0);
            let (p0, p1) = phi_split(&e, &m);
            let lhs = free_energy(&e, d, &m);
            prop_assert!((lhs - (p0 + g(d, m.eta) * p1)).abs() <= 1e-12 * (1.0 + lhs));
            prop_assert!(p1 >= 0.0);
        }

        #[test]
        fn local_update_monotone_in_load(e in 0.0..8.0f64, de in 0.0..1.0f64, dn in 0.0..1.0f64) {
            let m = table1(1.0);
            let a = local_damage_update(&Strain2D::uniaxial(e), dn, &m, 1e-12);
            let b = local_damage_update(&Strain2D::uniaxial(e + de), dn, &m, 1e-12);
            prop_assert!(b >= a - 1e-10);
        }
    }
}
