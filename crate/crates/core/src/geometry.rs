//! Norm pairs, mirror maps, Bregman divergences and the mirror step.
//!
//! Only pairings with a closed-form mirror step are supported:
//!
//! | map                 | set      | norms     | step                         |
//! |---------------------|----------|-----------|------------------------------|
//! | Euclidean half-sq.  | box      | L2 / L2   | clipped gradient step        |
//! | Euclidean half-sq.  | L2 ball  | L2 / L2   | radial projection            |
//! | negative entropy    | simplex  | L1 / L∞   | exponentiated gradient       |
//!
//! Entropic iterates are clamped at `entropy_floor` so that `∇R` stays finite.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Result, SmdError};

pub const DEFAULT_ENTROPY_FLOOR: f64 = 1e-12;

/// Membership tolerance for points produced by [`mirror_step`].
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Looser tolerance used when accepting caller-supplied points.
pub const INPUT_TOL: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// A primal norm together with its dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPair {
    /// ‖·‖₂ with itself as dual.
    L2,
    /// ‖·‖₁ with dual ‖·‖∞.
    L1Linf,
}

impl NormPair {
    pub fn primal(self, v: &[f64]) -> f64 {
        match self {
            NormPair::L2 => l2(v),
            NormPair::L1Linf => l1(v),
        }
    }

    pub fn dual(self, v: &[f64]) -> f64 {
        match self {
            NormPair::L2 => l2(v),
            NormPair::L1Linf => linf(v),
        }
    }

    /// A maximiser of ⟨u, v⟩ over the dual unit ball, so ⟨u, v⟩ = ‖v‖.
    /// Returns zero for the zero vector.
    pub fn dual_aligned(self, v: &[f64]) -> Vec<f64> {
        match self {
            NormPair::L2 => {
                let n = l2(v);
                if n == 0.0 {
                    vec![0.0; v.len()]
                } else {
                    v.iter().map(|x| x / n).collect()
                }
            }
            NormPair::L1Linf => v
                .iter()
                .map(|&x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    /// Rescale `v` to unit primal norm.
    pub fn primal_unit(self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.primal(v);
        if n == 0.0 || !n.is_finite() {
            return Err(SmdError::input("cannot normalise a zero or non-finite vector"));
        }
        Ok(v.iter().map(|x| x / n).collect())
    }

    /// Rescale `v` to unit dual norm.
    pub fn dual_unit(self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.dual(v);
        if n == 0.0 || !n.is_finite() {
            return Err(SmdError::input("cannot normalise a zero or non-finite vector"));
        }
        Ok(v.iter().map(|x| x / n).collect())
    }
}

/// ‖v‖* for the given pair.
pub fn dual_norm(pair: NormPair, v: &[f64]) -> Result<f64> {
    check_finite(v, "vector")?;
    Ok(pair.dual(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorKind {
    /// R(x) = ½‖x‖₂².
    EuclideanHalfSq,
    /// R(x) = Σ xᵢ ln xᵢ.
    NegativeEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorMap {
    pub kind: MirrorKind,
    /// Strong-convexity modulus with respect to the paired primal norm.
    pub sigma_r: f64,
    pub entropy_floor: f64,
}

impl MirrorMap {
    pub fn euclidean() -> Self {
        MirrorMap {
            kind: MirrorKind::EuclideanHalfSq,
            sigma_r: 1.0,
            entropy_floor: DEFAULT_ENTROPY_FLOOR,
        }
    }

    /// Negative entropy; σ_R = 1 w.r.t. ‖·‖₁ on the simplex (Pinsker).
    pub fn negative_entropy() -> Self {
        MirrorMap {
            kind: MirrorKind::NegativeEntropy,
            sigma_r: 1.0,
            entropy_floor: DEFAULT_ENTROPY_FLOOR,
        }
    }

    pub fn with_entropy_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor < 1.0) {
            return Err(SmdError::config(format!("entropy_floor must lie in (0, 1), got {floor}")));
        }
        self.entropy_floor = floor;
        Ok(self)
    }

    /// The norm pair under which `sigma_r` holds.
    pub fn canonical_norms(&self) -> NormPair {
        match self.kind {
            MirrorKind::EuclideanHalfSq => NormPair::L2,
            MirrorKind::NegativeEntropy => NormPair::L1Linf,
        }
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        check_finite(x, "point")?;
        if self.kind == MirrorKind::NegativeEntropy {
            let lo = self.entropy_floor * (1.0 - 1e-9);
            if let Some((i, v)) = x.iter().enumerate().find(|(_, &v)| v < lo) {
                return Err(SmdError::input(format!(
                    "coordinate {i} = {v:e} is below the entropy floor {:e}",
                    self.entropy_floor
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.kind {
            MirrorKind::EuclideanHalfSq => 0.5 * dot(x, x),
            MirrorKind::NegativeEntropy => x.iter().map(|&v| v * v.ln()).sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            MirrorKind::EuclideanHalfSq => x.to_vec(),
            MirrorKind::NegativeEntropy => x.iter().map(|&v| v.ln() + 1.0).collect(),
        }
    }

    /// Move `x` into the map's domain on the simplex; identity for Euclidean.
    pub fn clamp_to_domain(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            MirrorKind::EuclideanHalfSq => x.to_vec(),
            MirrorKind::NegativeEntropy => floor_renormalize(x, self.entropy_floor),
        }
    }
}

/// D_R(x, y) = R(x) − R(y) − ⟨∇R(y), x − y⟩.
pub fn bregman(map: &MirrorMap, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(y, x.len(), "y")?;
    map.check_domain(x)?;
    map.check_domain(y)?;
    Ok(bregman_unchecked(map, x, y))
}

pub(crate) fn bregman_unchecked(map: &MirrorMap, x: &[f64], y: &[f64]) -> f64 {
    match map.kind {
        MirrorKind::EuclideanHalfSq => {
            0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }
        // generalised KL; the −Σx + Σy part vanishes on the simplex
        MirrorKind::NegativeEntropy => x
            .iter()
            .zip(y)
            .map(|(&a, &b)| a * (a.ln() - b.ln()) - a + b)
            .sum::<f64>()
            .max(0.0),
    }
}

/// |D(z,y) − D(z,x) − D(x,y) − ⟨∇R(x) − ∇R(y), z − x⟩|.
pub fn three_point_residual(map: &MirrorMap, x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
    check_dim(y, x.len(), "y")?;
    check_dim(z, x.len(), "z")?;
    for p in [x, y, z] {
        map.check_domain(p)?;
    }
    let lhs = bregman_unchecked(map, z, y) - bregman_unchecked(map, z, x) - bregman_unchecked(map, x, y);
    let grad_diff = sub(&map.gradient(x), &map.gradient(y));
    let rhs = dot(&grad_diff, &sub(z, x));
    Ok((lhs - rhs).abs())
}

/// Clamp coordinates at `floor` and rescale the rest so the total is one.
/// Clamped coordinates stay exactly at `floor`.
pub fn floor_renormalize(p: &[f64], floor: f64) -> Vec<f64> {
    let n = p.len();
    let mut clamped = vec![false; n];
    let mut out = p.to_vec();
    loop {
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        let free_mass: f64 = p
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| !c)
            .map(|(v, _)| v.max(0.0))
            .sum();
        let target = 1.0 - n_clamped as f64 * floor;
        let scale = if free_mass > 0.0 { target / free_mass } else { 0.0 };
        let mut changed = false;
        for i in 0..n {
            if clamped[i] {
                out[i] = floor;
            } else {
                out[i] = p[i].max(0.0) * scale;
                if out[i] < floor {
                    clamped[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

/// A convex compact feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    L2Ball { center: Vec<f64>, radius: f64 },
    Simplex { dim: usize },
}

impl ConstraintSet {
    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(SmdError::config("box bounds must be non-empty and of equal length"));
        }
        check_finite(&lo, "box lower bound")?;
        check_finite(&hi, "box upper bound")?;
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(SmdError::config("box lower bound exceeds upper bound"));
        }
        Ok(ConstraintSet::Box { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new_box(vec![lo; dim], vec![hi; dim])
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(SmdError::config("ball center must be non-empty"));
        }
        check_finite(&center, "ball center")?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SmdError::config("ball radius must be positive and finite"));
        }
        Ok(ConstraintSet::L2Ball { center, radius })
    }

    pub fn new_simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(SmdError::config("simplex dimension must be positive"));
        }
        Ok(ConstraintSet::Simplex { dim })
    }

    /// Re-run constructor validation, e.g. after deserialisation.
    pub fn validated(self) -> Result<Self> {
        match self {
            ConstraintSet::Box { lo, hi } => Self::new_box(lo, hi),
            ConstraintSet::L2Ball { center, radius } => Self::new_ball(center, radius),
            ConstraintSet::Simplex { dim } => Self::new_simplex(dim),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::Box { lo, .. } => lo.len(),
            ConstraintSet::L2Ball { center, .. } => center.len(),
            ConstraintSet::Simplex { dim } => *dim,
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            ConstraintSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol),
            ConstraintSet::L2Ball { center, radius } => l2(&sub(x, center)) <= radius + tol,
            ConstraintSet::Simplex { .. } => {
                x.iter().all(|&v| v >= -tol) && (x.iter().sum::<f64>() - 1.0).abs() <= tol
            }
        }
    }

    /// Box center, ball center, or simplex barycenter.
    pub fn center(&self) -> Vec<f64> {
        match self {
            ConstraintSet::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            ConstraintSet::L2Ball { center, .. } => center.clone(),
            ConstraintSet::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
        }
    }

    /// sup ‖x − y‖ over the set in the pair's primal norm.
    pub fn diameter(&self, pair: NormPair) -> f64 {
        match self {
            ConstraintSet::Box { lo, hi } => pair.primal(&sub(hi, lo)),
            ConstraintSet::L2Ball { center, radius } => match pair {
                NormPair::L2 => 2.0 * radius,
                NormPair::L1Linf => 2.0 * radius * (center.len() as f64).sqrt(),
            },
            ConstraintSet::Simplex { dim } => {
                if *dim < 2 {
                    0.0
                } else {
                    match pair {
                        NormPair::L2 => 2f64.sqrt(),
                        NormPair::L1Linf => 2.0,
                    }
                }
            }
        }
    }

    /// sup of D_R(x, y) over the set. For negative entropy this is taken
    /// over the floor-clamped simplex, where it is at most ln(1/floor).
    pub fn bregman_radius(&self, map: &MirrorMap) -> Result<f64> {
        match map.kind {
            MirrorKind::EuclideanHalfSq => {
                let d = self.diameter(NormPair::L2);
                Ok(0.5 * d * d)
            }
            MirrorKind::NegativeEntropy => match self {
                ConstraintSet::Simplex { dim } if *dim >= 2 => Ok((1.0 / map.entropy_floor).ln()),
                ConstraintSet::Simplex { .. } => Ok(0.0),
                _ => Err(SmdError::config("negative entropy is only supported on the simplex")),
            },
        }
    }

    /// A random point of the set (uniform for box and ball, flat Dirichlet
    /// for the simplex).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ConstraintSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                .collect(),
            ConstraintSet::L2Ball { center, radius } => {
                let n = center.len();
                let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                let norm = l2(&dir).max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                center.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect()
            }
            ConstraintSet::Simplex { dim } => {
                let e: Vec<f64> = (0..*dim).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        }
    }
}

/// A mirror map paired with the norms its constants refer to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub map: MirrorMap,
    pub norms: NormPair,
}

impl Geometry {
    pub fn new(map: MirrorMap, norms: NormPair) -> Result<Self> {
        if norms != map.canonical_norms() {
            return Err(SmdError::config(format!(
                "{:?} is only supported with the {:?} norm pair",
                map.kind,
                map.canonical_norms()
            )));
        }
        Ok(Geometry { map, norms })
    }

    pub fn euclidean() -> Self {
        Geometry {
            map: MirrorMap::euclidean(),
            norms: NormPair::L2,
        }
    }

    pub fn entropic() -> Self {
        Geometry {
            map: MirrorMap::negative_entropy(),
            norms: NormPair::L1Linf,
        }
    }

    pub fn sigma_r(&self) -> f64 {
        self.map.sigma_r
    }

    /// Fails for (map, set) pairings without a closed-form mirror step.
    pub fn check_pairing(&self, set: &ConstraintSet) -> Result<()> {
        check_pairing(&self.map, set)
    }

    /// A feasible point in the map's domain near `x`.
    pub fn admissible(&self, x: &[f64]) -> Vec<f64> {
        self.map.clamp_to_domain(x)
    }
}

fn check_pairing(map: &MirrorMap, set: &ConstraintSet) -> Result<()> {
    match (map.kind, set) {
        (MirrorKind::EuclideanHalfSq, ConstraintSet::Box { .. })
        | (MirrorKind::EuclideanHalfSq, ConstraintSet::L2Ball { .. }) => Ok(()),
        (MirrorKind::NegativeEntropy, ConstraintSet::Simplex { dim }) => {
            if map.entropy_floor * (*dim as f64) >= 1.0 {
                Err(SmdError::config("entropy_floor times dimension must be below one"))
            } else {
                Ok(())
            }
        }
        (kind, set) => Err(SmdError::config(format!(
            "no closed-form mirror step for {kind:?} on {}",
            match set {
                ConstraintSet::Box { .. } => "a box",
                ConstraintSet::L2Ball { .. } => "an L2 ball",
                ConstraintSet::Simplex { .. } => "the simplex",
            }
        ))),
    }
}

/// argmin over the set of ⟨g, u − x⟩ + D_R(u, x)/alpha.
pub fn mirror_step(map: &MirrorMap, set: &ConstraintSet, x: &[f64], g: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_pairing(map, set)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SmdError::input(format!("step size must be positive and finite, got {alpha}")));
    }
    check_dim(x, set.dim(), "x")?;
    check_dim(g, set.dim(), "g")?;
    check_finite(g, "g")?;
    if !set.contains(x, INPUT_TOL) {
        return Err(SmdError::input("x is not in the constraint set"));
    }
    map.check_domain(x)?;
    Ok(mirror_step_unchecked(map, set, x, g, alpha))
}

pub(crate) fn mirror_step_unchecked(map: &MirrorMap, set: &ConstraintSet, x: &[f64], g: &[f64], alpha: f64) -> Vec<f64> {
    if g.iter().all(|&v| v == 0.0) {
        return x.to_vec();
    }
    match (map.kind, set) {
        (MirrorKind::EuclideanHalfSq, ConstraintSet::Box { lo, hi }) => x
            .iter()
            .zip(g)
            .zip(lo.iter().zip(hi))
            .map(|((xi, gi), (a, b))| (xi - alpha * gi).clamp(*a, *b))
            .collect(),
        (MirrorKind::EuclideanHalfSq, ConstraintSet::L2Ball { center, radius }) => {
            let y: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - alpha * gi).collect();
            let d = sub(&y, center);
            let n = l2(&d);
            if n <= *radius {
                y
            } else {
                center.iter().zip(&d).map(|(c, di)| c + radius * di / n).collect()
            }
        }
        (MirrorKind::NegativeEntropy, ConstraintSet::Simplex { .. }) => {
            let logw: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi.ln() - alpha * gi).collect();
            let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logw.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|v| v / s).collect();
            floor_renormalize(&p, map.entropy_floor)
        }
        _ => unreachable!("pairing checked by caller"),
    }
}
