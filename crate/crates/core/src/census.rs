//! The end-to-end census: solve, filter, refine, certify, classify, embed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acsys::{ac_residual, build_ac_system, AcError, AcSystem, DistanceIndexing, MassVector};
use crate::certify::{certify_solution, CertStatus, RIGOR_MECHANISM};
use crate::classify::{
    cm_dimension, filter_physical, filter_real, isotropy_order, orbit_classify, physical_from_distances,
    ClassifyError, ConfigurationClass, PhysicalSolution, RealnessPolicy, CM_TOL, MATCH_TOL,
};
use crate::embed::{reconstruct, spectral_dimension, Embedding, RANK_TOL};
use crate::linalg::norm_inf;
use crate::orchestrate::JobStats;
use crate::tracker::{solve_all, SolutionSet, SolveOptions, TrackerError};

pub const CONDITION_LIMIT: f64 = 3.8e2;
pub const CERT_RADIUS: f64 = 1e-8;

/// Compares at the two significant figures `CONDITION_LIMIT` is quoted to.
pub fn exceeds_condition_limit(cond: f64) -> bool {
    let quoted: f64 = format!("{cond:.1e}").parse().unwrap_or(f64::INFINITY);
    !(quoted <= CONDITION_LIMIT)
}

#[derive(Debug, Error)]
pub enum CensusError {
    #[error(transparent)]
    System(#[from] AcError),
    #[error(transparent)]
    Solve(#[from] TrackerError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("seeded class '{name}': {reason}")]
    Seeded { name: String, reason: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CensusOptions {
    pub solve: SolveOptions,
    pub lambda_prime: f64,
    pub theta: f64,
    pub radius: f64,
    /// Extra realness thresholds for the stability diagnostic.
    pub theta_window: Vec<f64>,
}

impl Default for CensusOptions {
    fn default() -> Self {
        CensusOptions {
            solve: SolveOptions::default(),
            lambda_prime: crate::acsys::DEFAULT_LAMBDA_PRIME,
            theta: crate::classify::DEFAULT_THETA,
            radius: CERT_RADIUS,
            theta_window: vec![1e-12, 1e-9, 1e-5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: Option<String>,
    #[serde(flatten)]
    pub class: ConfigurationClass,
    /// Smallest Krawczyk containment margin over the members.
    pub min_margin: f64,
    pub spectral_dimension: usize,
    pub embedding: Option<Embedding>,
    pub condition_exceeds_limit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaCheck {
    pub theta: f64,
    pub real: usize,
    pub physical: usize,
    /// `(dimension, isotropy order, member count)` per class.
    pub signature: Vec<(usize, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub bodies: usize,
    pub masses: Vec<f64>,
    pub mode: String,
    pub config: serde_json::Value,
    pub rigor: String,
    pub paths: Option<JobStats>,
    pub complex_solutions: Option<usize>,
    pub real_solutions: Option<usize>,
    pub physical_solutions: usize,
    pub classes: Vec<ClassReport>,
    pub theta_window: Vec<ThetaCheck>,
    pub theta_stable: bool,
    pub condition_limit: f64,
    pub condition_exceedances: usize,
}

impl CensusReport {
    /// Sum of member counts equals the number of physical solutions.
    pub fn cross_foots(&self) -> bool {
        self.classes.iter().map(|c| c.class.member_count).sum::<usize>() == self.physical_solutions
    }

    pub fn all_certified(&self) -> bool {
        self.classes.iter().all(|c| c.class.certified)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<40} {:>3} {:>4} {:>5} {:>6} {:>9} {:>10} {:>9} {:>9}\n",
            "class", "dim", "iso", "orbit", "count", "certified", "residual", "cond2", "cond_inf"
        );
        let groups = ["collinear", "planar", "spatial", "four-dimensional"];
        for (dim, label) in groups.iter().enumerate().map(|(i, l)| (i + 1, l)) {
            let rows: Vec<&ClassReport> = self.classes.iter().filter(|c| c.class.dimension == dim).collect();
            if rows.is_empty() {
                continue;
            }
            let total: usize = rows.iter().map(|c| c.class.member_count).sum();
            out += &format!("-- {label}: {total}\n");
            for c in rows {
                out += &format!(
                    "{:<40} {:>3} {:>4} {:>5} {:>6} {:>9} {:>10.2e} {:>9.1} {:>9.1}{}\n",
                    c.name.clone().unwrap_or_else(|| format!("{label} class")),
                    c.class.dimension,
                    c.class.isotropy_order,
                    c.class.orbit_size,
                    c.class.member_count,
                    if c.class.certified { "yes" } else { "NO" },
                    c.class.max_residual,
                    c.class.max_condition_2,
                    c.class.max_condition,
                    if c.condition_exceeds_limit { " !" } else { "" },
                );
            }
        }
        out += &format!("total physical: {}\n", self.physical_solutions);
        out
    }
}

fn certify_all(ac: &AcSystem, sols: &mut [PhysicalSolution], radius: f64) -> Vec<f64> {
    sols.par_iter_mut()
        .map(|s| {
            let x = ac.lift_distances(&s.distances);
            match certify_solution(&ac.system, &x, radius) {
                Ok(c) => {
                    s.certified = c.status == CertStatus::CertifiedUnique;
                    c.containment_margin
                }
                Err(_) => {
                    s.certified = false;
                    f64::NEG_INFINITY
                }
            }
        })
        .collect()
}

fn dedup_physical(sols: Vec<PhysicalSolution>) -> Vec<PhysicalSolution> {
    let mut out: Vec<PhysicalSolution> = Vec::with_capacity(sols.len());
    for s in sols {
        let dup = out.iter().any(|o| {
            o.distances
                .iter()
                .zip(&s.distances)
                .all(|(a, b)| (a - b).abs() < MATCH_TOL)
        });
        if !dup {
            out.push(s);
        }
    }
    out
}

fn signature(classes: &[ConfigurationClass]) -> Vec<(usize, usize, usize)> {
    classes
        .iter()
        .map(|c| (c.dimension, c.isotropy_order, c.member_count))
        .collect()
}

fn class_reports(
    n: usize,
    classes: Vec<ConfigurationClass>,
    sols: &[PhysicalSolution],
    margins: &[f64],
    names: &[Option<String>],
) -> Vec<ClassReport> {
    classes
        .into_iter()
        .enumerate()
        .map(|(i, class)| {
            let members: Vec<usize> = (0..sols.len())
                .filter(|&k| {
                    crate::classify::canonical_form(&sols[k].distances, n, MATCH_TOL)
                        .iter()
                        .zip(&class.representative)
                        .all(|(a, b)| (a - b).abs() < MATCH_TOL)
                })
                .collect();
            let min_margin = members.iter().map(|&k| margins[k]).fold(f64::INFINITY, f64::min);
            let embedding = reconstruct(&class.representative, n, class.dimension).ok();
            ClassReport {
                name: names.get(i).cloned().flatten(),
                spectral_dimension: spectral_dimension(&class.representative, n, RANK_TOL),
                condition_exceeds_limit: exceeds_condition_limit(class.max_condition_2),
                class,
                min_margin,
                embedding,
            }
        })
        .collect()
}

/// Exhaustive census: every start path of the chosen homotopy is tracked.
pub fn census(masses: &MassVector, opts: &CensusOptions) -> Result<CensusReport, CensusError> {
    let ac = build_ac_system(masses, opts.lambda_prime)?;
    let set = solve_all(&ac.system, &opts.solve)?;
    let mut report = classify_solution_set(&ac, &set, opts)?;
    report.mode = "exhaustive".into();
    Ok(report)
}

/// Filters, refines, certifies and classifies an existing solution set.
pub fn classify_solution_set(
    ac: &AcSystem,
    set: &SolutionSet,
    opts: &CensusOptions,
) -> Result<CensusReport, CensusError> {
    let n = ac.masses.bodies();
    let run = |theta: f64| -> (usize, Vec<PhysicalSolution>) {
        let real = filter_real(set, &ac.system, RealnessPolicy { theta });
        let phys = dedup_physical(filter_physical(&real, ac));
        (real.len(), phys)
    };

    let (real_count, mut phys) = run(opts.theta);
    let margins = certify_all(ac, &mut phys, opts.radius);
    let classes = orbit_classify(&phys, n)?;
    let base_sig = signature(&classes);

    let mut window = Vec::new();
    for &theta in &opts.theta_window {
        let (real, p) = run(theta);
        let cl = orbit_classify(&p, n)?;
        window.push(ThetaCheck {
            theta,
            real,
            physical: p.len(),
            signature: signature(&cl),
        });
    }
    let theta_stable = window.iter().all(|w| w.signature == base_sig);

    let reports = class_reports(n, classes, &phys, &margins, &[]);
    let exceed = reports.iter().filter(|c| c.condition_exceeds_limit).count();
    Ok(CensusReport {
        bodies: n,
        masses: ac.masses.as_slice().to_vec(),
        mode: "classify".into(),
        config: serde_json::to_value(opts).unwrap_or_default(),
        rigor: RIGOR_MECHANISM.into(),
        paths: Some(set.stats.clone()),
        complex_solutions: Some(set.records.len()),
        real_solutions: Some(real_count),
        physical_solutions: phys.len(),
        classes: reports,
        theta_window: window,
        theta_stable,
        condition_limit: CONDITION_LIMIT,
        condition_exceedances: exceed,
    })
}

/// A symmetric starting configuration for one five-body equal-mass class.
#[derive(Clone, Debug, PartialEq)]
pub struct Ansatz {
    pub name: &'static str,
    pub points: Vec<Vec<f64>>,
}

impl Ansatz {
    pub fn distances(&self) -> Vec<f64> {
        let idx = DistanceIndexing::new(self.points.len());
        idx.pairs()
            .iter()
            .map(|&(i, j)| {
                self.points[i]
                    .iter()
                    .zip(&self.points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

fn ring(radius: f64, k: usize, phase: f64) -> impl Iterator<Item = (f64, f64)> {
    (0..k).map(move |i| {
        let t = phase + 2.0 * std::f64::consts::PI * i as f64 / k as f64;
        (radius * t.cos(), radius * t.sin())
    })
}

/// Starting shapes for the ten equal-mass five-body classes.
pub fn five_body_ansatzes() -> Vec<Ansatz> {
    let planar = |pts: &[(f64, f64)]| pts.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>();
    let mut out = vec![
        Ansatz {
            name: "collinear",
            points: [-1.02, -0.48, 0.0, 0.48, 1.02].iter().map(|&x| vec![x]).collect(),
        },
        Ansatz {
            name: "square plus center",
            points: planar(&[(0.73, 0.0), (0.0, 0.73), (-0.73, 0.0), (0.0, -0.73), (0.0, 0.0)]),
        },
        Ansatz {
            name: "regular pentagon",
            points: ring(0.65, 5, 0.0).map(|(x, y)| vec![x, y]).collect(),
        },
        Ansatz {
            name: "concave isosceles triangle",
            points: planar(&[(0.29, 0.11), (-0.29, 0.11), (0.86, 0.24), (-0.86, 0.24), (0.0, -0.70)]),
        },
        Ansatz {
            name: "isosceles trapezoid",
            points: planar(&[(0.0, 0.18), (0.63, 0.43), (-0.63, 0.43), (0.44, -0.52), (-0.44, -0.52)]),
        },
    ];
    let mut bipyramid = vec![vec![0.65, 0.0, 0.0], vec![-0.65, 0.0, 0.0]];
    bipyramid.extend(ring(0.63, 3, 0.0).map(|(y, z)| vec![0.0, y, z]));
    out.push(Ansatz {
        name: "triangle plus two axial points, convex",
        points: bipyramid,
    });
    let mut pyramid: Vec<Vec<f64>> = ring(0.62, 4, 0.0).map(|(x, y)| vec![x, y, 0.16]).collect();
    pyramid.push(vec![0.0, 0.0, -0.63]);
    out.push(Ansatz {
        name: "square pyramid",
        points: pyramid,
    });
    let a = 0.42;
    out.push(Ansatz {
        name: "tetrahedron plus center",
        points: vec![
            vec![a, a, a],
            vec![a, -a, -a],
            vec![-a, a, -a],
            vec![-a, -a, a],
            vec![0.0, 0.0, 0.0],
        ],
    });
    let mut concave = vec![vec![0.11, 0.0, 0.0], vec![0.78, 0.0, 0.0]];
    concave.extend(ring(0.64, 3, 0.0).map(|(y, z)| vec![-0.30, y, z]));
    out.push(Ansatz {
        name: "triangle plus two axial points, concave",
        points: concave,
    });
    let s = std::f64::consts::FRAC_1_SQRT_2;
    out.push(Ansatz {
        name: "regular 4-simplex",
        points: (0..5)
            .map(|i| (0..5).map(|k| if k == i { s } else { 0.0 }).collect())
            .collect(),
    });
    out
}

/// Rescales a distance vector so that the distance equations are best
/// satisfied in the least-squares sense.
///
/// With `S = r⁻³ + λ'`, scaling every distance by `c` maps the residual to
/// `A/c + c²B`, where `A` is the residual at `λ' = 0`.
pub fn fit_scale(d: &[f64], masses: &MassVector, lambda_prime: f64) -> Result<Vec<f64>, AcError> {
    let a = ac_residual(d, masses, 0.0)?;
    let full = ac_residual(d, masses, lambda_prime)?;
    let b: Vec<f64> = full.iter().zip(&a).map(|(f, a)| f - a).collect();
    let ab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    let c3 = -ab / bb;
    if !(c3 > 0.0) || !c3.is_finite() {
        return Ok(d.to_vec());
    }
    let c = c3.cbrt();
    Ok(d.iter().map(|x| x * c).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeededClass {
    pub name: String,
    /// Isotropy order of the unrefined starting shape.
    pub ansatz_isotropy: usize,
    pub ansatz_dimension: usize,
}

/// Refines, certifies and classifies one representative per ansatz, then
/// expands each into its orbit.
pub fn seeded_census(ansatzes: &[Ansatz], opts: &CensusOptions) -> Result<CensusReport, CensusError> {
    let n = ansatzes.first().map(|a| a.points.len()).unwrap_or(5);
    let masses = MassVector::equal(n)?;
    let ac = build_ac_system(&masses, opts.lambda_prime)?;
    let idx = DistanceIndexing::new(n);
    let fail = |name: &str, reason: String| CensusError::Seeded {
        name: name.to_string(),
        reason,
    };

    let mut orbit_members = Vec::new();
    let mut names = Vec::new();
    for a in ansatzes {
        let d0 = a.distances();
        let want_iso = isotropy_order(&d0, n, MATCH_TOL);
        let want_dim = cm_dimension(&d0, n, CM_TOL)?;
        let seed = fit_scale(&d0, &masses, opts.lambda_prime)?;
        let mut rep = physical_from_distances(&seed, &ac);
        if !(rep.residual <= 2e-14) {
            return Err(fail(a.name, format!("refinement stalled at residual {:.3e}", rep.residual)));
        }
        let iso = isotropy_order(&rep.distances, n, MATCH_TOL);
        let dim = cm_dimension(&rep.distances, n, CM_TOL)?;
        if iso != want_iso || dim != want_dim {
            return Err(fail(
                a.name,
                format!("refined to isotropy {iso}, dimension {dim}; ansatz has {want_iso}, {want_dim}"),
            ));
        }
        let cert = certify_solution(&ac.system, &ac.lift_distances(&rep.distances), opts.radius)
            .map_err(|e| fail(a.name, e.to_string()))?;
        if cert.status != CertStatus::CertifiedUnique {
            return Err(fail(
                a.name,
                format!("not certified, margin {:.3e}", cert.containment_margin),
            ));
        }
        rep.certified = true;
        // orbit images of a certified root are certified roots: the system is
        // invariant under relabelling of equal masses
        let mut images: Vec<PhysicalSolution> = Vec::new();
        for sigma in itertools::Itertools::permutations(0..n, n) {
            let w = idx.permute(&rep.distances, &sigma);
            if !images.iter().any(|o| {
                o.distances.iter().zip(&w).all(|(x, y)| (x - y).abs() < MATCH_TOL)
            }) {
                images.push(PhysicalSolution {
                    residual: ac_residual(&w, &masses, opts.lambda_prime)
                        .map(|f| norm_inf(&f))
                        .unwrap_or(f64::INFINITY),
                    distances: w,
                    ..rep.clone()
                });
            }
        }
        orbit_members.push((a.name, images, cert.containment_margin));
        names.push(a.name);
    }

    let mut sols = Vec::new();
    let mut margins = Vec::new();
    for (_, images, m) in &orbit_members {
        margins.extend(std::iter::repeat_n(*m, images.len()));
        sols.extend(images.iter().cloned());
    }
    let classes = orbit_classify(&sols, n)?;
    // name each class by the ansatz whose orbit it holds
    let class_names: Vec<Option<String>> = classes
        .iter()
        .map(|c| {
            orbit_members
                .iter()
                .find(|(_, imgs, _)| {
                    imgs.iter().any(|s| {
                        crate::classify::canonical_form(&s.distances, n, MATCH_TOL)
                            .iter()
                            .zip(&c.representative)
                            .all(|(a, b)| (a - b).abs() < MATCH_TOL)
                    })
                })
                .map(|(name, _, _)| name.to_string())
        })
        .collect();
    let reports = class_reports(n, classes, &sols, &margins, &class_names);
    let exceed = reports.iter().filter(|c| c.condition_exceeds_limit).count();
    Ok(CensusReport {
        bodies: n,
        masses: masses.as_slice().to_vec(),
        mode: "seeded".into(),
        config: serde_json::json!({
            "lambda_prime": opts.lambda_prime,
            "radius": opts.radius,
            "ansatzes": names,
            "match_tol": MATCH_TOL,
            "cm_tol": CM_TOL,
        }),
        rigor: RIGOR_MECHANISM.into(),
        paths: None,
        complex_solutions: None,
        real_solutions: None,
        physical_solutions: sols.len(),
        classes: reports,
        theta_window: Vec::new(),
        theta_stable: true,
        condition_limit: CONDITION_LIMIT,
        condition_exceedances: exceed,
    })
}
