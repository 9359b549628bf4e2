//! Catalog of analytically embedded ambient spaces N in R^l: projection,
//! tangent projectors, second fundamental form B, the forcing term
//! P = -trace(B | T_xM), and certified bounds K on |P|.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SplitMix64};
use crate::poly::Polynomial;

/// Tolerance for the on-surface check, relative to the ambient scale.
pub const ON_SURFACE_TOL: f64 = 1e-8;

/// Newton projection tolerance, relative to the region scale.
pub const PROJECT_TOL: f64 = 1e-12;

const NEWTON_MAX_ITERS: usize = 50;

/// Axis-aligned box in R^l.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Aabb {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn scale(&self) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
            .max(self.max.iter().fold(0.0f64, |a, &b| a.max(b.abs())))
    }

    pub fn inflated(&self, factor: f64) -> Aabb {
        let min = self
            .min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| lo - factor * (hi - lo).max(1e-12))
            .collect();
        let max = self
            .min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| hi + factor * (hi - lo).max(1e-12))
            .collect();
        Aabb { min, max }
    }
}

/// The kinds of ambient space the laboratory knows how to embed.
#[derive(Debug, Clone)]
pub enum AmbientKind {
    /// Flat R^l; the flow is ordinary mean curvature flow.
    Euclidean,
    /// Round sphere S^(l-1) of the given radius, centered at the origin.
    RoundSphere { radius: f64 },
    /// Product of two circles S^1(r1) x S^1(r2) in R^4 (codimension 2).
    CliffordTorus { r1: f64, r2: f64 },
    /// Zero level set of a polynomial with nonvanishing gradient.
    ImplicitHypersurface { level: Polynomial },
}

/// An ambient space N in R^l with its cached forcing bound K.
#[derive(Debug, Clone)]
pub struct AmbientSpace {
    dim: usize,
    kind: AmbientKind,
    forcing_bound: f64,
}

impl AmbientSpace {
    pub fn euclidean(dim: usize) -> Self {
        AmbientSpace {
            dim,
            kind: AmbientKind::Euclidean,
            forcing_bound: 0.0,
        }
    }

    pub fn round_sphere(dim: usize, radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::validation("radius", "sphere radius must be positive"));
        }
        Ok(AmbientSpace {
            dim,
            kind: AmbientKind::RoundSphere { radius },
            forcing_bound: 2.0 / radius,
        })
    }

    pub fn clifford_torus(r1: f64, r2: f64) -> Result<Self> {
        if r1 <= 0.0 || r2 <= 0.0 {
            return Err(Error::validation("radii", "torus radii must be positive"));
        }
        Ok(AmbientSpace {
            dim: 4,
            kind: AmbientKind::CliffordTorus { r1, r2 },
            forcing_bound: 2.0 * (1.0 / r1).max(1.0 / r2),
        })
    }

    /// Implicit hypersurface; `region` is sampled to cache the forcing bound.
    pub fn implicit(dim: usize, level: Polynomial, region: &Aabb) -> Result<Self> {
        if level.dim() != dim {
            return Err(Error::validation(
                "level",
                "polynomial dimension does not match ambient dimension",
            ));
        }
        let mut space = AmbientSpace {
            dim,
            kind: AmbientKind::ImplicitHypersurface { level },
            forcing_bound: 0.0,
        };
        space.forcing_bound = space.curvature_bound(region, 2)?;
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &AmbientKind {
        &self.kind
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, AmbientKind::Euclidean)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            AmbientKind::Euclidean => "euclidean",
            AmbientKind::RoundSphere { .. } => "round_sphere",
            AmbientKind::CliffordTorus { .. } => "clifford_torus",
            AmbientKind::ImplicitHypersurface { .. } => "implicit",
        }
    }

    /// Cached bound on |P| over 2-dimensional tangent planes.
    pub fn forcing_bound(&self) -> f64 {
        self.forcing_bound
    }

    pub fn codim(&self) -> usize {
        match self.kind {
            AmbientKind::Euclidean => 0,
            AmbientKind::CliffordTorus { .. } => 2,
            _ => 1,
        }
    }

    /// Smallest curvature radius of N (projection tube half-width scale).
    pub fn curvature_radius(&self) -> f64 {
        match &self.kind {
            AmbientKind::Euclidean => f64::INFINITY,
            AmbientKind::RoundSphere { radius } => *radius,
            AmbientKind::CliffordTorus { r1, r2 } => r1.min(*r2),
            AmbientKind::ImplicitHypersurface { .. } => {
                if self.forcing_bound > 0.0 {
                    2.0 / self.forcing_bound
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Nearest-point projection onto N.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match &self.kind {
            AmbientKind::Euclidean => Ok(x.to_vec()),
            AmbientKind::RoundSphere { radius } => {
                let n = linalg::norm(x);
                if n < 0.5 * radius {
                    return Err(Error::OutsideTube(format!(
                        "point at distance {n:.3e} from the center of a radius {radius} sphere"
                    )));
                }
                Ok(linalg::scale(x, radius / n))
            }
            AmbientKind::CliffordTorus { r1, r2 } => {
                let n1 = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let n2 = (x[2] * x[2] + x[3] * x[3]).sqrt();
                if n1 < 0.5 * r1 || n2 < 0.5 * r2 {
                    return Err(Error::OutsideTube(
                        "point too close to a torus circle axis".into(),
                    ));
                }
                Ok(vec![
                    r1 * x[0] / n1,
                    r1 * x[1] / n1,
                    r2 * x[2] / n2,
                    r2 * x[3] / n2,
                ])
            }
            AmbientKind::ImplicitHypersurface { level } => {
                // Newton iteration along the gradient of the level function
                let scale = linalg::norm(x).max(1.0);
                let tol = PROJECT_TOL * scale;
                let mut p = x.to_vec();
                for _ in 0..NEWTON_MAX_ITERS {
                    let phi = level.eval(&p);
                    let grad = level.gradient_at(&p);
                    let g2 = linalg::norm_sq(&grad);
                    if g2 < 1e-30 {
                        return Err(Error::OutsideTube(
                            "vanishing level-set gradient during projection".into(),
                        ));
                    }
                    if phi.abs() < tol * g2.sqrt() {
                        return Ok(p);
                    }
                    linalg::axpy(&mut p, -phi / g2, &grad);
                }
                Err(Error::OutsideTube(format!(
                    "Newton projection did not converge in {NEWTON_MAX_ITERS} iterations"
                )))
            }
        }
    }

    /// Distance of `x` from N, as measured against the defining constraint.
    pub fn surface_defect(&self, x: &[f64]) -> f64 {
        match &self.kind {
            AmbientKind::Euclidean => 0.0,
            AmbientKind::RoundSphere { radius } => (linalg::norm(x) - radius).abs(),
            AmbientKind::CliffordTorus { r1, r2 } => {
                let n1 = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let n2 = (x[2] * x[2] + x[3] * x[3]).sqrt();
                ((n1 - r1).abs()).max((n2 - r2).abs())
            }
            AmbientKind::ImplicitHypersurface { level } => {
                let g = linalg::norm(&level.gradient_at(x)).max(1e-30);
                level.eval(x).abs() / g
            }
        }
    }

    /// Orthonormal basis of the normal space of N at an on-surface point.
    pub fn normal_space(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match &self.kind {
            AmbientKind::Euclidean => Vec::new(),
            AmbientKind::RoundSphere { .. } => {
                vec![linalg::normalized(x).expect("on-surface point is nonzero")]
            }
            AmbientKind::CliffordTorus { .. } => {
                let n1 = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let n2 = (x[2] * x[2] + x[3] * x[3]).sqrt();
                vec![
                    vec![x[0] / n1, x[1] / n1, 0.0, 0.0],
                    vec![0.0, 0.0, x[2] / n2, x[3] / n2],
                ]
            }
            AmbientKind::ImplicitHypersurface { level } => {
                vec![linalg::normalized(&level.gradient_at(x))
                    .expect("gradient nonvanishing on the surface")]
            }
        }
    }

    /// Project an arbitrary vector onto T_xN.
    pub fn project_tangent(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        linalg::reject(v, &self.normal_space(x))
    }

    /// Second fundamental form B(v, w) of N at `x`, a normal-space vector.
    /// `v`, `w` must be tangent to N at `x`.
    pub fn second_fundamental(&self, x: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
        match &self.kind {
            AmbientKind::Euclidean => vec![0.0; self.dim],
            AmbientKind::RoundSphere { radius } => {
                linalg::scale(x, -linalg::dot(v, w) / (radius * radius))
            }
            AmbientKind::CliffordTorus { r1, r2 } => {
                let d12 = v[0] * w[0] + v[1] * w[1];
                let d34 = v[2] * w[2] + v[3] * w[3];
                vec![
                    -d12 * x[0] / (r1 * r1),
                    -d12 * x[1] / (r1 * r1),
                    -d34 * x[2] / (r2 * r2),
                    -d34 * x[3] / (r2 * r2),
                ]
            }
            AmbientKind::ImplicitHypersurface { level } => {
                let grad = level.gradient_at(x);
                let g = linalg::norm(&grad).max(1e-30);
                let hess = level.hessian_at(x);
                let mut hv = 0.0;
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        hv += v[i] * hess[i * self.dim + j] * w[j];
                    }
                }
                linalg::scale(&grad, -hv / (g * g))
            }
        }
    }

    /// Forcing term P = -sum_i B(e_i, e_i) over an orthonormal tangent basis
    /// of the surface M at `x`. Validates the basis strictly.
    pub fn forcing_term(&self, x: &[f64], basis: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if self.is_euclidean() {
            return Ok(vec![0.0; self.dim]);
        }
        let defect = self.surface_defect(&x.to_vec());
        let scale = linalg::norm(x).max(1.0);
        if defect > ON_SURFACE_TOL * scale {
            return Err(Error::NotOnSurface(defect));
        }
        let normals = self.normal_space(x);
        let mut worst: f64 = 0.0;
        for (i, e) in basis.iter().enumerate() {
            worst = worst.max((linalg::norm(e) - 1.0).abs());
            for n in &normals {
                worst = worst.max(linalg::dot(e, n).abs());
            }
            for other in basis.iter().skip(i + 1) {
                worst = worst.max(linalg::dot(e, other).abs());
            }
        }
        if worst > ON_SURFACE_TOL {
            return Err(Error::BasisNotTangent(worst));
        }
        Ok(self.forcing_term_unchecked(x, basis))
    }

    /// Forcing term for a rough mesh basis: the basis is first projected onto
    /// T_xN and re-orthonormalized. Used by the flow engine, where discrete
    /// tangent planes are only O(h^2)-tangent to N.
    pub fn forcing_term_projected(&self, x: &[f64], rough_basis: &[Vec<f64>]) -> Vec<f64> {
        if self.is_euclidean() {
            return vec![0.0; self.dim];
        }
        let projected: Vec<Vec<f64>> = rough_basis
            .iter()
            .map(|v| self.project_tangent(x, v))
            .collect();
        let basis = linalg::orthonormalize(&projected);
        self.forcing_term_unchecked(x, &basis)
    }

    fn forcing_term_unchecked(&self, x: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        for e in basis {
            let b = self.second_fundamental(x, e, e);
            linalg::axpy(&mut p, -1.0, &b);
        }
        p
    }

    /// Certified upper bound for |P| over m-dimensional tangent planes at
    /// points of N inside `region`. Closed form for analytic kinds; implicit
    /// kinds sample and inflate by 1.5.
    pub fn curvature_bound(&self, region: &Aabb, m: usize) -> Result<f64> {
        if region.dim() != self.dim {
            return Err(Error::validation("region", "region dimension mismatch"));
        }
        match &self.kind {
            AmbientKind::Euclidean => Ok(0.0),
            AmbientKind::RoundSphere { radius } => {
                if !self.region_touches_sphere(region, *radius) {
                    return Err(Error::EmptyRegion);
                }
                Ok(m as f64 / radius)
            }
            AmbientKind::CliffordTorus { r1, r2 } => Ok(m as f64 * (1.0 / r1).max(1.0 / r2)),
            AmbientKind::ImplicitHypersurface { level } => {
                let samples = self.sample_on_surface(region, 6)?;
                let mut sup: f64 = 0.0;
                for p in &samples {
                    let grad = level.gradient_at(p);
                    let g = linalg::norm(&grad).max(1e-30);
                    let hess = level.hessian_at(p);
                    // shape operator restricted to the tangent space
                    let nhat = linalg::scale(&grad, 1.0 / g);
                    let d = self.dim;
                    let mut proj = vec![0.0; d * d];
                    for i in 0..d {
                        for j in 0..d {
                            proj[i * d + j] =
                                (if i == j { 1.0 } else { 0.0 }) - nhat[i] * nhat[j];
                        }
                    }
                    // S = P (Hess/|grad|) P
                    let mut tmp = vec![0.0; d * d];
                    for i in 0..d {
                        for j in 0..d {
                            let mut s = 0.0;
                            for k in 0..d {
                                s += proj[i * d + k] * hess[k * d + j] / g;
                            }
                            tmp[i * d + j] = s;
                        }
                    }
                    let mut shape = vec![0.0; d * d];
                    for i in 0..d {
                        for j in 0..d {
                            let mut s = 0.0;
                            for k in 0..d {
                                s += tmp[i * d + k] * proj[k * d + j];
                            }
                            shape[i * d + j] = s;
                        }
                    }
                    let (mut eigs, _) = linalg::eig_sym(&shape, d);
                    eigs.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap());
                    let trace_bound: f64 = eigs.iter().take(m).map(|e| e.abs()).sum();
                    sup = sup.max(trace_bound);
                }
                Ok(1.5 * sup)
            }
        }
    }

    /// Sampled C^2 estimate (plus a third-order difference probe) of the
    /// graph of the dilated ambient xi*N over T_xN inside the ambient ball
    /// B_d(xi*x).
    pub fn rescaled_flatness(&self, x: &[f64], xi: f64, d: f64) -> Result<f64> {
        self.check_dim(x)?;
        if xi < 1.0 {
            return Err(Error::validation("xi", "dilation factor must be >= 1"));
        }
        if self.is_euclidean() {
            return Ok(0.0);
        }
        let defect = self.surface_defect(x);
        if defect > ON_SURFACE_TOL * linalg::norm(x).max(1.0) {
            return Err(Error::NotOnSurface(defect));
        }
        // dilated ambient: a point q on xi*N above base + offset y is
        // xi * project((base + y)/xi); f(y) = q - (base + y).
        let base = linalg::scale(x, xi);
        let tangent_dim = self.dim - self.codim();
        let tangent = self.tangent_basis_at(x);
        debug_assert_eq!(tangent.len(), tangent_dim);
        let graph_point = |y: &[f64]| -> Result<Vec<f64>> {
            let mut p = base.clone();
            for (c, t) in y.iter().zip(&tangent) {
                linalg::axpy(&mut p, *c, t);
            }
            let unscaled = linalg::scale(&p, 1.0 / xi);
            let q = self.project(&unscaled)?;
            let q = linalg::scale(&q, xi);
            let mut f = linalg::sub(&q, &base);
            for (c, t) in y.iter().zip(&tangent) {
                let mut tc = t.clone();
                linalg::scale_in_place(&mut tc, *c);
                f = linalg::sub(&f, &tc);
            }
            // ambient-ball constraint of the graph domain
            if linalg::dist(&q, &base) > 1.5 * d + linalg::norm(&f) {
                return Err(Error::GraphDoesNotExist(
                    "sample left the ambient ball".into(),
                ));
            }
            Ok(f)
        };
        // directional 5-point stencils along tangent axes and diagonals
        let mut directions: Vec<Vec<f64>> = Vec::new();
        for a in 0..tangent_dim {
            let mut e = vec![0.0; tangent_dim];
            e[a] = 1.0;
            directions.push(e);
        }
        for a in 0..tangent_dim {
            for b in (a + 1)..tangent_dim {
                let mut e = vec![0.0; tangent_dim];
                e[a] = std::f64::consts::FRAC_1_SQRT_2;
                e[b] = std::f64::consts::FRAC_1_SQRT_2;
                directions.push(e);
            }
        }
        let mut estimate: f64 = 0.0;
        let step = d / 2.0;
        for dir in &directions {
            let mut f_samples = Vec::with_capacity(5);
            for k in -2i32..=2 {
                let y: Vec<f64> = dir.iter().map(|c| c * step * k as f64).collect();
                let f = graph_point(&y)?;
                f_samples.push(f);
            }
            let norm_of = |v: &Vec<f64>| linalg::norm(v);
            let c0 = f_samples.iter().map(norm_of).fold(0.0, f64::max);
            // first derivative (central), second derivative, third difference
            let d1: Vec<f64> = f_samples[3]
                .iter()
                .zip(&f_samples[1])
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect();
            let d2: Vec<f64> = f_samples[3]
                .iter()
                .zip(f_samples[2].iter().zip(&f_samples[1]))
                .map(|(a, (b, c))| (a - 2.0 * b + c) / (step * step))
                .collect();
            let d3: Vec<f64> = (0..self.dim)
                .map(|i| {
                    (f_samples[4][i] - 2.0 * f_samples[3][i] + 2.0 * f_samples[1][i]
                        - f_samples[0][i])
                        / (2.0 * step * step * step)
                })
                .collect();
            let c1 = linalg::norm(&d1);
            if c1 > 10.0 {
                return Err(Error::GraphDoesNotExist(format!(
                    "graph slope {c1:.2} too steep"
                )));
            }
            estimate = estimate
                .max(c0)
                .max(c1)
                .max(linalg::norm(&d2))
                .max(linalg::norm(&d3) * step);
        }
        Ok(estimate)
    }

    /// Any orthonormal basis of T_xN (deterministic).
    pub fn tangent_basis_at(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let normals = self.normal_space(x);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        for i in 0..self.dim {
            let mut e = vec![0.0; self.dim];
            e[i] = 1.0;
            candidates.push(e);
        }
        for c in candidates {
            let mut v = linalg::reject(&c, &normals);
            v = linalg::reject(&v, &basis);
            if linalg::norm(&v) > 1e-8 {
                basis.push(linalg::normalized(&v).unwrap());
            }
            if basis.len() == self.dim - self.codim() {
                break;
            }
        }
        basis
    }

    fn region_touches_sphere(&self, region: &Aabb, radius: f64) -> bool {
        // nearest and farthest box points from the origin
        let mut near_sq = 0.0;
        let mut far_sq = 0.0;
        for (lo, hi) in region.min.iter().zip(&region.max) {
            let near = if *lo > 0.0 {
                *lo
            } else if *hi < 0.0 {
                -*hi
            } else {
                0.0
            };
            let far = lo.abs().max(hi.abs());
            near_sq += near * near;
            far_sq += far * far;
        }
        near_sq <= radius * radius && radius * radius <= far_sq
    }

    fn sample_on_surface(&self, region: &Aabb, per_axis: usize) -> Result<Vec<Vec<f64>>> {
        let mut rng = SplitMix64::new(0x5eed);
        let mut samples = Vec::new();
        let n_random = per_axis.pow(2) * self.dim;
        for _ in 0..n_random {
            let p: Vec<f64> = region
                .min
                .iter()
                .zip(&region.max)
                .map(|(lo, hi)| rng.range(*lo, *hi))
                .collect();
            if let Ok(q) = self.project(&p) {
                let inside = q
                    .iter()
                    .zip(region.min.iter().zip(&region.max))
                    .all(|(c, (lo, hi))| *c >= lo - 1e-9 && *c <= hi + 1e-9);
                if inside {
                    samples.push(q);
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(samples)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::validation(
                "point",
                format!("expected dimension {}, got {}", self.dim, x.len()),
            ));
        }
        Ok(())
    }
}
