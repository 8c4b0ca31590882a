//! Benchmark convex problems with closed-form optimal values.
//!
//! Each [`Problem`] carries its feasible set, the optimal value `f_star`, one
//! optimal point `x_star` and a bound `g_bound` on the dual norm of every
//! subgradient returned over the set.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Result, SmdError};
use crate::geometry::{dot, ConstraintSet, NormPair, INPUT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub a: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    /// f(x) = ½ xᵀAx − bᵀx.
    Quadratic { a: Vec<Vec<f64>>, b: Vec<f64> },
    /// f(x) = maxᵢ ⟨aᵢ, x⟩ + cᵢ.
    PiecewiseLinearMax { pieces: Vec<Piece> },
    /// f(x) = ‖x − shift‖₁.
    L1Norm { shift: Vec<f64> },
    /// f(x) = ⟨c, x⟩ on the simplex.
    LinearOnSimplex { c: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub kind: ProblemKind,
    pub set: ConstraintSet,
    pub norms: NormPair,
    pub f_star: f64,
    /// sup of ‖subgrad(x)‖* over the set.
    pub g_bound: f64,
    pub x_star: Vec<f64>,
}

pub fn make_problem(kind: ProblemKind, set: ConstraintSet, norms: NormPair) -> Result<Problem> {
    let set = set.validated()?;
    let n = set.dim();
    let (x_star, g_bound) = match &kind {
        ProblemKind::Quadratic { a, b } => quadratic_solution(a, b, &set, norms)?,
        ProblemKind::PiecewiseLinearMax { pieces } => plm_solution(pieces, &set, norms)?,
        ProblemKind::L1Norm { shift } => l1_solution(shift, &set, norms)?,
        ProblemKind::LinearOnSimplex { c } => {
            check_config_vec(c, n, "c")?;
            if !matches!(set, ConstraintSet::Simplex { .. }) {
                return Err(SmdError::config("linear_on_simplex requires a simplex set"));
            }
            let (imin, _) = c
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
            let mut x = vec![0.0; n];
            x[imin] = 1.0;
            (x, norms.dual(c))
        }
    };
    let mut p = Problem {
        kind,
        set,
        norms,
        f_star: 0.0,
        g_bound,
        x_star,
    };
    p.f_star = p.eval(&p.x_star);
    Ok(p)
}

fn check_config_vec(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(SmdError::config(format!("{what} has length {}, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SmdError::config(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn quadratic_solution(a: &[Vec<f64>], b: &[f64], set: &ConstraintSet, norms: NormPair) -> Result<(Vec<f64>, f64)> {
    let n = set.dim();
    check_config_vec(b, n, "b")?;
    if a.len() != n {
        return Err(SmdError::config(format!("A has {} rows, expected {n}", a.len())));
    }
    for row in a {
        check_config_vec(row, n, "row of A")?;
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[i][j] == 0.0));
    if !diagonal {
        return Err(SmdError::config(
            "quadratic problems need a diagonal A (no closed-form optimum otherwise)",
        ));
    }
    let d: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    if d.iter().any(|&v| v < 0.0) {
        return Err(SmdError::config("A must be positive semidefinite"));
    }
    match set {
        ConstraintSet::Box { lo, hi } => {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    if d[i] > 0.0 {
                        (b[i] / d[i]).clamp(lo[i], hi[i])
                    } else if b[i] > 0.0 {
                        hi[i]
                    } else if b[i] < 0.0 {
                        lo[i]
                    } else {
                        0.5 * (lo[i] + hi[i])
                    }
                })
                .collect();
            // ∇f is separable, so the sup of its norm is taken per coordinate
            let m: Vec<f64> = (0..n)
                .map(|i| (d[i] * lo[i] - b[i]).abs().max((d[i] * hi[i] - b[i]).abs()))
                .collect();
            Ok((x, norms.dual(&m)))
        }
        ConstraintSet::L2Ball { center, radius } => {
            let c = d[0];
            if d.iter().any(|&v| v != c) || norms != NormPair::L2 {
                return Err(SmdError::config(
                    "quadratic on a ball needs A = cI and the L2 norm pair",
                ));
            }
            let x = if c > 0.0 {
                let u: Vec<f64> = b.iter().map(|v| v / c).collect();
                project_ball(&u, center, *radius)
            } else {
                let nb = dot(b, b).sqrt();
                if nb == 0.0 {
                    center.clone()
                } else {
                    center.iter().zip(b).map(|(ci, bi)| ci + radius * bi / nb).collect()
                }
            };
            let off: Vec<f64> = center.iter().zip(b).map(|(ci, bi)| c * ci - bi).collect();
            Ok((x, dot(&off, &off).sqrt() + c * radius))
        }
        ConstraintSet::Simplex { .. } => Err(SmdError::config(
            "quadratic objectives on the simplex have no closed-form optimum here",
        )),
    }
}

fn project_ball(u: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let d: Vec<f64> = u.iter().zip(center).map(|(a, b)| a - b).collect();
    let n = dot(&d, &d).sqrt();
    if n <= radius {
        u.to_vec()
    } else {
        center.iter().zip(&d).map(|(c, di)| c + radius * di / n).collect()
    }
}

fn l1_solution(shift: &[f64], set: &ConstraintSet, norms: NormPair) -> Result<(Vec<f64>, f64)> {
    let n = set.dim();
    check_config_vec(shift, n, "shift")?;
    let (x, active) = match set {
        ConstraintSet::Box { lo, hi } => {
            let x: Vec<f64> = (0..n).map(|i| shift[i].clamp(lo[i], hi[i])).collect();
            let active = (0..n).filter(|&i| !(lo[i] == hi[i] && lo[i] == shift[i])).count();
            (x, active)
        }
        _ => {
            if !set.contains(shift, 0.0) {
                return Err(SmdError::config(
                    "l1_norm needs the shift inside the set unless the set is a box",
                ));
            }
            (shift.to_vec(), n)
        }
    };
    let g = match norms {
        NormPair::L2 => (active as f64).sqrt(),
        NormPair::L1Linf => {
            if active > 0 {
                1.0
            } else {
                0.0
            }
        }
    };
    Ok((x, g))
}

fn plm_solution(pieces: &[Piece], set: &ConstraintSet, norms: NormPair) -> Result<(Vec<f64>, f64)> {
    let n = set.dim();
    if pieces.is_empty() {
        return Err(SmdError::config("piecewise_linear_max needs at least one piece"));
    }
    for p in pieces {
        check_config_vec(&p.a, n, "piece slope")?;
        if !p.c.is_finite() {
            return Err(SmdError::config("piece offset must be finite"));
        }
    }
    let (lo, hi) = match set {
        ConstraintSet::Box { lo, hi } if n <= 2 => (lo, hi),
        _ => {
            return Err(SmdError::config(
                "piecewise_linear_max optimum is enumerated only on 1-D or 2-D boxes",
            ))
        }
    };
    let f = |x: &[f64]| pieces.iter().map(|p| dot(&p.a, x) + p.c).fold(f64::NEG_INFINITY, f64::max);
    let mut cands: Vec<Vec<f64>> = Vec::new();
    if n == 1 {
        cands.push(vec![lo[0]]);
        cands.push(vec![hi[0]]);
        for i in 0..pieces.len() {
            for j in i + 1..pieces.len() {
                let da = pieces[i].a[0] - pieces[j].a[0];
                if da != 0.0 {
                    cands.push(vec![(pieces[j].c - pieces[i].c) / da]);
                }
            }
        }
    } else {
        for &x0 in &[lo[0], hi[0]] {
            for &x1 in &[lo[1], hi[1]] {
                cands.push(vec![x0, x1]);
            }
        }
        // lines where two pieces tie: (aᵢ − aⱼ)·x = cⱼ − cᵢ
        let mut lines = Vec::new();
        for i in 0..pieces.len() {
            for j in i + 1..pieces.len() {
                let a = [pieces[i].a[0] - pieces[j].a[0], pieces[i].a[1] - pieces[j].a[1]];
                if a != [0.0, 0.0] {
                    lines.push((a, pieces[j].c - pieces[i].c));
                }
            }
        }
        // box edges as lines
        let mut edges = vec![
            ([1.0, 0.0], lo[0]),
            ([1.0, 0.0], hi[0]),
            ([0.0, 1.0], lo[1]),
            ([0.0, 1.0], hi[1]),
        ];
        edges.extend(lines.iter().cloned());
        for (k, (a1, r1)) in edges.iter().enumerate() {
            for (a2, r2) in edges.iter().skip(k + 1) {
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                if det.abs() > 1e-14 {
                    cands.push(vec![(r1 * a2[1] - a1[1] * r2) / det, (a1[0] * r2 - r1 * a2[0]) / det]);
                }
            }
        }
    }
    let tol = 1e-12;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for c in cands {
        if !c.iter().all(|v| v.is_finite()) {
            continue;
        }
        if (0..n).any(|i| c[i] < lo[i] - tol || c[i] > hi[i] + tol) {
            continue;
        }
        let c: Vec<f64> = (0..n).map(|i| c[i].clamp(lo[i], hi[i])).collect();
        let v = f(&c);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, c));
        }
    }
    let (_, x) = best.expect("box corners are always candidates");
    let g = pieces.iter().map(|p| norms.dual(&p.a)).fold(0.0, f64::max);
    Ok((x, g))
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ProblemKind::Quadratic { a, b } => {
                let quad: f64 = a.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
                0.5 * quad - dot(b, x)
            }
            ProblemKind::PiecewiseLinearMax { pieces } => pieces
                .iter()
                .map(|p| dot(&p.a, x) + p.c)
                .fold(f64::NEG_INFINITY, f64::max),
            ProblemKind::L1Norm { shift } => x.iter().zip(shift).map(|(a, b)| (a - b).abs()).sum(),
            ProblemKind::LinearOnSimplex { c } => dot(c, x),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(x, self.dim(), "x")?;
        check_finite(x, "x")?;
        Ok(self.eval(x))
    }

    /// Deterministic subgradient selector: zero on the kinks of |·| and the
    /// smallest active index for max-of-affine.
    pub fn subgrad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(x, self.dim(), "x")?;
        check_finite(x, "x")?;
        Ok(match &self.kind {
            ProblemKind::Quadratic { a, b } => a.iter().zip(b).map(|(row, bi)| dot(row, x) - bi).collect(),
            ProblemKind::PiecewiseLinearMax { pieces } => {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, p) in pieces.iter().enumerate() {
                    let v = dot(&p.a, x) + p.c;
                    if v > best_v {
                        best = i;
                        best_v = v;
                    }
                }
                pieces[best].a.clone()
            }
            ProblemKind::L1Norm { shift } => x
                .iter()
                .zip(shift)
                .map(|(a, b)| {
                    let d = a - b;
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            ProblemKind::LinearOnSimplex { c } => c.clone(),
        })
    }

    /// f(x) − f*, for feasible x.
    pub fn gap(&self, x: &[f64]) -> Result<f64> {
        check_dim(x, self.dim(), "x")?;
        if !self.set.contains(x, INPUT_TOL) {
            return Err(SmdError::input("point is not feasible"));
        }
        Ok(self.eval(x) - self.f_star)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
    }

    fn box2() -> ConstraintSet {
        ConstraintSet::cube(2, -1.0, 1.0).unwrap()
    }

    #[test]
    fn make_problem_examples() {
        let q = make_problem(ProblemKind::Quadratic { a: eye(2), b: vec![0.0; 2] }, box2(), NormPair::L2).unwrap();
        assert_eq!(q.f_star, 0.0);
        // ∇f = x, largest at a corner: ‖(1,1)‖₂
        assert!((q.g_bound - 2f64.sqrt()).abs() < 1e-15);

        let s = ConstraintSet::new_simplex(3).unwrap();
        let l = make_problem(ProblemKind::LinearOnSimplex { c: vec![3.0, 1.0, 2.0] }, s, NormPair::L1Linf).unwrap();
        assert_eq!(l.f_star, 1.0);
        assert_eq!(l.x_star, vec![0.0, 1.0, 0.0]);
        assert_eq!(l.g_bound, 3.0);

        let a = make_problem(ProblemKind::L1Norm { shift: vec![0.0; 2] }, box2(), NormPair::L2).unwrap();
        assert_eq!(a.f_star, 0.0);
        assert!((a.g_bound - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn value_subgrad_gap_examples() {
        let q = make_problem(ProblemKind::Quadratic { a: eye(2), b: vec![0.0; 2] }, box2(), NormPair::L2).unwrap();
        assert_eq!(q.value(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(q.subgrad(&[0.5, 0.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(q.gap(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(q.gap(&q.x_star.clone()).unwrap(), 0.0);
        assert!(matches!(q.gap(&[2.0, 0.0]), Err(SmdError::Input(_))));

        let a = make_problem(ProblemKind::L1Norm { shift: vec![0.0; 2] }, box2(), NormPair::L2).unwrap();
        assert_eq!(a.value(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(a.subgrad(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(a.subgrad(&[0.0, 2.0]).unwrap(), vec![0.0, 1.0]);

        let s = ConstraintSet::new_simplex(3).unwrap();
        let l = make_problem(ProblemKind::LinearOnSimplex { c: vec![3.0, 1.0, 2.0] }, s, NormPair::L1Linf).unwrap();
        assert_eq!(l.value(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(l.gap(&[1.0, 0.0, 0.0]).unwrap(), 2.0);
        assert!(l.value(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn unsupported_closed_forms_are_config_errors() {
        let full = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        assert!(matches!(
            make_problem(ProblemKind::Quadratic { a: full, b: vec![0.0; 2] }, box2(), NormPair::L2),
            Err(SmdError::Config(_))
        ));
        let s = ConstraintSet::new_simplex(2).unwrap();
        assert!(matches!(
            make_problem(ProblemKind::Quadratic { a: eye(2), b: vec![0.0; 2] }, s, NormPair::L2),
            Err(SmdError::Config(_))
        ));
        let cube3 = ConstraintSet::cube(3, 0.0, 1.0).unwrap();
        let pieces = vec![Piece { a: vec![1.0, 0.0, 0.0], c: 0.0 }];
        assert!(matches!(
            make_problem(ProblemKind::PiecewiseLinearMax { pieces }, cube3, NormPair::L2),
            Err(SmdError::Config(_))
        ));
        assert!(matches!(
            make_problem(ProblemKind::LinearOnSimplex { c: vec![1.0, 2.0] }, box2(), NormPair::L2),
            Err(SmdError::Config(_))
        ));
    }

    #[test]
    fn quadratic_with_exterior_minimiser() {
        let q = make_problem(ProblemKind::Quadratic { a: eye(2), b: vec![2.0, -3.0] }, box2(), NormPair::L2).unwrap();
        assert_eq!(q.x_star, vec![1.0, -1.0]);
        // f* = ½·2 − (2·1 + 3·1)
        assert_eq!(q.f_star, -4.0);
        let ball = ConstraintSet::new_ball(vec![0.0, 0.0], 1.0).unwrap();
        let qb = make_problem(ProblemKind::Quadratic { a: eye(2), b: vec![3.0, 4.0] }, ball, NormPair::L2).unwrap();
        assert!((qb.x_star[0] - 0.6).abs() < 1e-15 && (qb.x_star[1] - 0.8).abs() < 1e-15);
        assert!((qb.g_bound - 6.0).abs() < 1e-15);
    }

    /// Dense grid oracle for the max-of-affine optimum.
    fn grid_min(p: &Problem, steps: usize) -> f64 {
        let (lo, hi) = match &p.set {
            ConstraintSet::Box { lo, hi } => (lo.clone(), hi.clone()),
            _ => unreachable!(),
        };
        let mut best = f64::INFINITY;
        if p.dim() == 1 {
            for i in 0..=steps {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / steps as f64;
                best = best.min(p.value(&[x]).unwrap());
            }
        } else {
            for i in 0..=steps {
                for j in 0..=steps {
                    let x = lo[0] + (hi[0] - lo[0]) * i as f64 / steps as f64;
                    let y = lo[1] + (hi[1] - lo[1]) * j as f64 / steps as f64;
                    best = best.min(p.value(&[x, y]).unwrap());
                }
            }
        }
        best
    }

    #[test]
    fn piecewise_linear_enumeration_matches_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for dim in [1usize, 2] {
            for _ in 0..15 {
                let pieces: Vec<Piece> = (0..4)
                    .map(|_| Piece {
                        a: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                        c: rng.random_range(-1.0..1.0),
                    })
                    .collect();
                let set = ConstraintSet::cube(dim, -1.0, 1.5).unwrap();
                let p = make_problem(ProblemKind::PiecewiseLinearMax { pieces }, set, NormPair::L2).unwrap();
                let grid = grid_min(&p, if dim == 1 { 200_000 } else { 1500 });
                assert!(p.f_star <= grid + 1e-12, "enumeration {} above grid {grid}", p.f_star);
                // grid spacing bounds how far above f* the grid can sit
                assert!(grid - p.f_star < 1e-2, "enumeration {} far below grid {grid}", p.f_star);
            }
        }
    }

    fn all_kinds() -> Vec<Problem> {
        let s3 = ConstraintSet::new_simplex(3).unwrap();
        let ball = ConstraintSet::new_ball(vec![0.2, -0.1], 0.8).unwrap();
        vec![
            make_problem(ProblemKind::Quadratic { a: eye(2), b: vec![0.3, 2.0] }, box2(), NormPair::L2).unwrap(),
            make_problem(
                ProblemKind::Quadratic { a: vec![vec![2.0, 0.0], vec![0.0, 0.5]], b: vec![-1.0, 0.1] },
                ConstraintSet::new_box(vec![0.0, -2.0], vec![1.0, 1.0]).unwrap(),
                NormPair::L2,
            )
            .unwrap(),
            make_problem(ProblemKind::Quadratic { a: eye(2), b: vec![2.0, 1.0] }, ball.clone(), NormPair::L2).unwrap(),
            make_problem(
                ProblemKind::PiecewiseLinearMax {
                    pieces: vec![
                        Piece { a: vec![1.0, 0.5], c: 0.0 },
                        Piece { a: vec![-1.0, 0.2], c: 0.1 },
                        Piece { a: vec![0.0, -1.0], c: -0.2 },
                    ],
                },
                box2(),
                NormPair::L2,
            )
            .unwrap(),
            make_problem(ProblemKind::L1Norm { shift: vec![0.3, -0.2] }, box2(), NormPair::L2).unwrap(),
            make_problem(ProblemKind::L1Norm { shift: vec![2.0, 0.5] }, box2(), NormPair::L2).unwrap(),
            make_problem(ProblemKind::L1Norm { shift: vec![0.2, 0.3, 0.5] }, s3.clone(), NormPair::L1Linf).unwrap(),
            make_problem(ProblemKind::LinearOnSimplex { c: vec![1.0, -2.0, 0.5] }, s3, NormPair::L1Linf).unwrap(),
        ]
    }

    #[test]
    fn spot_checks_on_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in all_kinds() {
            for _ in 0..10_000 {
                let x = p.set.sample(&mut rng);
                let y = p.set.sample(&mut rng);
                let g = p.subgrad(&x).unwrap();
                assert!(p.gap(&x).unwrap() >= -1e-12, "{:?}", p.kind);
                assert!(p.norms.dual(&g) <= p.g_bound + 1e-12, "{:?}", p.kind);
                let lin = p.value(&x).unwrap() + dot(&g, &crate::geometry::sub(&y, &x));
                assert!(p.value(&y).unwrap() >= lin - 1e-9, "{:?}", p.kind);
            }
            assert!(p.gap(&p.x_star).unwrap().abs() < 1e-15);
        }
    }
}
