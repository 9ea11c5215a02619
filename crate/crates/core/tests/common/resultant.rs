//! Resultant/companion-matrix root oracle for small dense systems.
//!
//! Two equations in x, y: the Sylvester resultant in y is sampled on the unit
//! circle, interpolated by a DFT and solved through companion eigenvalues;
//! y follows from the companion matrix of f(x, ·). A third linear equation is
//! eliminated by substitution first.

use std::collections::BTreeMap;

use cc_core::poly::{PolySystem, Polynomial};
use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::Rng;

pub type Poly = BTreeMap<Vec<u32>, C>;

pub fn dense(rng: &mut impl Rng, nvars: usize, degree: u32) -> Poly {
    let mut p = Poly::new();
    let mut e = vec![0u32; nvars];
    loop {
        if e.iter().sum::<u32>() <= degree {
            p.insert(e.clone(), C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        }
        let mut i = 0;
        loop {
            if i == nvars {
                return p;
            }
            e[i] += 1;
            if e[i] <= degree {
                break;
            }
            e[i] = 0;
            i += 1;
        }
    }
}

pub fn to_system(nvars: usize, polys: &[Poly]) -> PolySystem {
    let ps = polys
        .iter()
        .map(|p| Polynomial::from_terms(nvars, p.iter().map(|(e, c)| (*c, e.clone()))).unwrap())
        .collect();
    PolySystem::new(nvars, ps).unwrap()
}

fn eval(p: &Poly, x: &[C]) -> C {
    p.iter()
        .map(|(e, c)| e.iter().zip(x).fold(*c, |acc, (&k, xi)| acc * xi.powu(k)))
        .sum()
}

fn mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert(C::new(0.0, 0.0)) += ca * cb;
        }
    }
    out
}

/// Replaces the last variable by the affine form `z` in the others.
fn substitute_last(p: &Poly, z: &Poly) -> Poly {
    let m = z.keys().next().map_or(0, |e| e.len());
    let mut out = Poly::new();
    for (e, c) in p {
        let mut term = Poly::new();
        term.insert(e[..m].to_vec(), *c);
        for _ in 0..e[m] {
            term = mul(&term, z);
        }
        for (k, v) in term {
            *out.entry(k).or_insert(C::new(0.0, 0.0)) += v;
        }
    }
    out
}

/// Coefficients in y (lowest first), each a coefficient list in x.
fn in_y(p: &Poly) -> Vec<Vec<C>> {
    let dy = p.keys().map(|e| e[1]).max().unwrap_or(0) as usize;
    let dx = p.keys().map(|e| e[0]).max().unwrap_or(0) as usize;
    let mut out = vec![vec![C::new(0.0, 0.0); dx + 1]; dy + 1];
    for (e, c) in p {
        out[e[1] as usize][e[0] as usize] += c;
    }
    out
}

fn horner(c: &[C], x: C) -> C {
    c.iter().rev().fold(C::new(0.0, 0.0), |acc, &a| acc * x + a)
}

/// Roots of a univariate polynomial (lowest coefficient first).
pub fn univariate_roots(c: &[C]) -> Vec<C> {
    let mut c = c.to_vec();
    let tiny = 1e-13 * c.iter().map(|z| z.norm()).fold(0.0, f64::max);
    while c.len() > 1 && c.last().unwrap().norm() <= tiny {
        c.pop();
    }
    let d = c.len() - 1;
    if d == 0 {
        return Vec::new();
    }
    let lead = c[d];
    let mut m = DMatrix::<C>::zeros(d, d);
    for i in 1..d {
        m[(i, i - 1)] = C::new(1.0, 0.0);
    }
    for i in 0..d {
        m[(i, d - 1)] = -c[i] / lead;
    }
    m.schur().eigenvalues().expect("complex Schur form is triangular").iter().copied().collect()
}

fn sylvester_det(f: &[Vec<C>], g: &[Vec<C>], x: C) -> C {
    let fy: Vec<C> = f.iter().map(|c| horner(c, x)).collect();
    let gy: Vec<C> = g.iter().map(|c| horner(c, x)).collect();
    let (m, n) = (fy.len() - 1, gy.len() - 1);
    let size = m + n;
    let mut s = DMatrix::<C>::zeros(size, size);
    for r in 0..n {
        for (k, &a) in fy.iter().rev().enumerate() {
            s[(r, r + k)] = a;
        }
    }
    for r in 0..m {
        for (k, &b) in gy.iter().rev().enumerate() {
            s[(n + r, r + k)] = b;
        }
    }
    s.determinant()
}

fn newton(polys: &[Poly], mut x: Vec<C>) -> Vec<C> {
    let n = x.len();
    for _ in 0..50 {
        let f: Vec<C> = polys.iter().map(|p| eval(p, &x)).collect();
        let mut j = DMatrix::<C>::zeros(n, n);
        for (r, p) in polys.iter().enumerate() {
            for (e, c) in p {
                for v in 0..n {
                    if e[v] == 0 {
                        continue;
                    }
                    let mut t = *c * e[v] as f64;
                    for (w, &k) in e.iter().enumerate() {
                        t *= x[w].powu(if w == v { k - 1 } else { k });
                    }
                    j[(r, v)] += t;
                }
            }
        }
        let rhs = nalgebra::DVector::from_vec(f);
        let Some(dx) = j.lu().solve(&rhs) else { break };
        let step = dx.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for v in 0..n {
            x[v] -= dx[v];
        }
        if step <= 1e-15 * x.iter().map(|z| z.norm()).fold(1.0, f64::max) {
            break;
        }
    }
    x
}

fn solve2(f: &Poly, g: &Poly) -> Vec<Vec<C>> {
    let (fy, gy) = (in_y(f), in_y(g));
    let deg = |p: &Poly| p.keys().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0) as usize;
    let n = deg(f) * deg(g) + 1;
    let samples: Vec<C> = (0..n)
        .map(|k| sylvester_det(&fy, &gy, C::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64)))
        .collect();
    let coeffs: Vec<C> = (0..n)
        .map(|j| {
            samples
                .iter()
                .enumerate()
                .map(|(k, s)| s * C::from_polar(1.0, -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64))
                .sum::<C>()
                / n as f64
        })
        .collect();
    let polys = [f.clone(), g.clone()];
    univariate_roots(&coeffs)
        .into_iter()
        .map(|x| {
            let fx: Vec<C> = fy.iter().map(|c| horner(c, x)).collect();
            let gx: Vec<C> = gy.iter().map(|c| horner(c, x)).collect();
            let y = univariate_roots(&fx)
                .into_iter()
                .min_by(|a, b| horner(&gx, *a).norm().total_cmp(&horner(&gx, *b).norm()))
                .expect("f(x, y) has a root in y");
            newton(&polys, vec![x, y])
        })
        .collect()
}

/// Every isolated root of a square system of 2 equations, or of 3 equations
/// whose last is linear with a nonzero `z` coefficient.
pub fn oracle_roots(polys: &[Poly]) -> Vec<Vec<C>> {
    match polys.len() {
        2 => solve2(&polys[0], &polys[1]),
        3 => {
            let h = &polys[2];
            let cz = h[&vec![0, 0, 1]];
            let mut z = Poly::new();
            for (e, c) in h {
                if e[2] == 0 {
                    z.insert(e[..2].to_vec(), -c / cz);
                }
            }
            let f = substitute_last(&polys[0], &z);
            let g = substitute_last(&polys[1], &z);
            solve2(&f, &g)
                .into_iter()
                .map(|xy| {
                    let zz = eval(&z, &xy);
                    newton(polys, vec![xy[0], xy[1], zz])
                })
                .collect()
        }
        k => panic!("oracle handles 2 or 3 equations, got {k}"),
    }
}

pub fn max_residual(polys: &[Poly], x: &[C]) -> f64 {
    polys.iter().map(|p| eval(p, x).norm()).fold(0.0, f64::max)
}

/// Greedy nearest matching; returns the largest scaled distance
/// `‖a − b‖∞ / max(1, ‖b‖∞)`, or an error on a count mismatch.
pub fn match_roots(found: &[Vec<C>], oracle: &[Vec<C>]) -> Result<f64, String> {
    if found.len() != oracle.len() {
        return Err(format!("{} roots found, oracle has {}", found.len(), oracle.len()));
    }
    let dist = |a: &[C], b: &[C]| {
        let scale = b.iter().map(|z| z.norm()).fold(1.0, f64::max);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    };
    let mut used = vec![false; found.len()];
    let mut worst: f64 = 0.0;
    for o in oracle {
        let (i, d) = found
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, f)| (i, dist(f, o)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        used[i] = true;
        worst = worst.max(d);
    }
    Ok(worst)
}
