//! Acceptance suite: one test per criterion, each emitting a single
//! pass/fail line. Combinatorial counts are checked against independent
//! oracles, exact operator identities against seeded spectral-grid data,
//! and the symbolic ledger against its closed forms.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gp_hierarchy::boardgame::{
    apply_move, enumerate_collapse_maps, map_count, move_applicable, partition_classes,
    CollapseMap,
};
use gp_hierarchy::harness::{golden_set, verify_golden};
use gp_hierarchy::kernels::{final_bound, theta_expand};
use gp_hierarchy::numerics::{
    chebyshev_support, free_propagate, nls_flow, trace_norm, verify_admissibility,
    verify_factorization, verify_full_sum, verify_mild_solution, verify_move_invariance,
    verify_resummation, DiscreteMeasure, Grid, GridField, LowRankKernel, MildOptions,
    QuadratureSpec,
};
use gp_hierarchy::trees::{build_forest, extract_labeling, subtree_stats};

/// Prints the criterion's single pass/fail line, then fails the test with
/// the collected diagnostics if any check missed.
fn conclude(number: u32, name: &str, failures: Vec<String>) {
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {name}: {verdict}");
    assert!(failures.is_empty(), "criterion {number:02} {name}:\n{}", failures.join("\n"));
}

fn check(failures: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        failures.push(msg());
    }
}

/// Exact class count by direct enumeration of nondecreasing arrays with
/// `rho[l] <= k + l - 1` (a ballot-number recursion independent of the
/// move machinery).
fn ballot_class_count(k: usize, r: usize) -> u128 {
    fn rec(k: usize, r: usize, l: usize, prev: usize) -> u128 {
        if l > r {
            return 1;
        }
        (prev..=(k + l - 1)).map(|v| rec(k, r, l + 1, v)).sum()
    }
    rec(k, r, 1, 1)
}

/// Brute-force connected components of the undirected acceptable-move
/// graph, as sets of collapse arrays.
fn move_graph_components(k: usize, r: usize) -> BTreeSet<BTreeSet<Vec<usize>>> {
    let maps = enumerate_collapse_maps(k, r).unwrap();
    let index: std::collections::BTreeMap<Vec<usize>, usize> =
        maps.iter().enumerate().map(|(i, m)| (m.rho().to_vec(), i)).collect();
    let identity: Vec<usize> = (1..=r).collect();
    let mut parent: Vec<usize> = (0..maps.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for (i, m) in maps.iter().enumerate() {
        for l in 1..r {
            if move_applicable(m, l) {
                let (moved, _) = apply_move(m, &identity, l).unwrap();
                let j = index[moved.rho()];
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut components: std::collections::BTreeMap<usize, BTreeSet<Vec<usize>>> =
        Default::default();
    for (i, m) in maps.iter().enumerate() {
        let root = find(&mut parent, i);
        components.entry(root).or_default().insert(m.rho().to_vec());
    }
    components.into_values().collect()
}

#[test]
fn criterion_01_enumeration_and_classes() {
    let mut failures = Vec::new();
    for k in 1..=3usize {
        for r in 1..=5usize {
            let maps = enumerate_collapse_maps(k, r).unwrap();
            let product: u128 = (1..=r).map(|l| (k + l - 1) as u128).product();
            check(&mut failures, maps.len() as u128 == product, || {
                format!("({k},{r}): {} maps, expected {product}", maps.len())
            });
            check(&mut failures, map_count(k, r) == product, || {
                format!("({k},{r}): map_count {} != {product}", map_count(k, r))
            });
            let classes = partition_classes(k, r).unwrap();
            let total: usize = classes.iter().map(|c| c.members.len()).sum();
            check(&mut failures, total == maps.len(), || {
                format!("({k},{r}): classes cover {total} of {} maps", maps.len())
            });
            check(&mut failures, classes.len() as u128 == ballot_class_count(k, r), || {
                format!(
                    "({k},{r}): {} classes, ballot oracle {}",
                    classes.len(),
                    ballot_class_count(k, r)
                )
            });
            // the exponential ceiling: the nominal 2^(k+r) holds everywhere
            // in range except (2,5) with 132 > 128 and (3,5) with 297 >
            // 256 (ballot counts grow like 4^r); the corrected ceiling
            // 2^(k+2r-2) holds throughout
            check(&mut failures, classes.len() as u128 <= 1u128 << (k + 2 * r - 2), || {
                format!("({k},{r}): {} classes exceed 2^(k+2r-2)", classes.len())
            });
            let nominal_ok = classes.len() as u128 <= 1u128 << (k + r);
            let exceeds = (k == 2 && r == 5) || (k == 3 && r == 5);
            check(&mut failures, nominal_ok == !exceeds, || {
                format!("({k},{r}): unexpected nominal-ceiling status ({} classes)", classes.len())
            });
        }
    }
    // the (1,3) shape, cross-checked against the brute-force move graph
    let classes = partition_classes(1, 3).unwrap();
    check(&mut failures, classes.len() == 5, || format!("(1,3): {} classes", classes.len()));
    check(&mut failures, map_count(1, 3) == 6, || format!("(1,3): {} maps", map_count(1, 3)));
    let oracle = move_graph_components(1, 3);
    let ours: BTreeSet<BTreeSet<Vec<usize>>> = classes
        .iter()
        .map(|c| c.members.iter().map(|(m, _)| m.rho().to_vec()).collect())
        .collect();
    check(&mut failures, oracle == ours, || {
        format!("(1,3): partition differs from move graph\noracle {oracle:?}\nours {ours:?}")
    });
    conclude(1, "enumeration-and-classes", failures);
}

#[test]
fn criterion_02_golden_examples() {
    let mut failures = Vec::new();
    for report in verify_golden().unwrap() {
        check(&mut failures, report.pass, || {
            format!("{}: {} mismatches", report.label, report.absolute)
        });
    }
    // the stated values, asserted directly as well as through the file
    let golden = golden_set().unwrap();
    let forest = build_forest(&CollapseMap::new(3, vec![2, 2, 3, 5]).unwrap());
    check(&mut failures, forest.distinguished_tree() == 2, || {
        format!("distinguished tree {}", forest.distinguished_tree())
    });
    let sigma2 = extract_labeling(&forest, 2).unwrap().sigma;
    let sigma3 = extract_labeling(&forest, 3).unwrap().sigma;
    check(&mut failures, sigma2 == vec![1, 1, 3], || format!("sigma_2 {sigma2:?}"));
    check(&mut failures, sigma3 == vec![1], || format!("sigma_3 {sigma3:?}"));
    check(&mut failures, forest.is_bare_edge(1), || "tree 1 not bare".into());
    let chain = build_forest(&CollapseMap::new(1, golden.kappa_chain.rho.clone()).unwrap());
    let l = extract_labeling(&chain, 1).unwrap();
    check(&mut failures, l.kappa(1) == (2, 4), || format!("kappa(1) {:?}", l.kappa(1)));
    check(&mut failures, l.kappa(2).0 == 3, || format!("kappa_-(2) {}", l.kappa(2).0));
    check(&mut failures, l.kappa_plus_iterate(4) == 7, || {
        format!("kappa_+^4(1) = {}", l.kappa_plus_iterate(4))
    });
    conclude(2, "golden-examples", failures);
}

#[test]
fn criterion_03_theta_term_counts() {
    let mut failures = Vec::new();
    let forest = build_forest(&CollapseMap::new(1, vec![1, 2, 3]).unwrap());
    let expansion = theta_expand(&extract_labeling(&forest, 1).unwrap());
    for (alpha, expected) in [(3usize, 2usize), (2, 4), (1, 8)] {
        check(&mut failures, expansion.theta(alpha).len() == expected, || {
            format!("theta({alpha}) has {} terms, expected {expected}", expansion.theta(alpha).len())
        });
    }
    // the doubling law and its ceiling on random trees
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    let mut trees_seen = 0usize;
    while trees_seen < 100 {
        let k = rng.gen_range(1..=2usize);
        let r = rng.gen_range(1..=6usize);
        let rho: Vec<usize> = (1..=r).map(|l| rng.gen_range(1..=k + l - 1)).collect();
        let forest = build_forest(&CollapseMap::new(k, rho.clone()).unwrap());
        for j in 1..=k {
            let Ok(l) = extract_labeling(&forest, j) else { continue };
            trees_seen += 1;
            let expansion = theta_expand(&l);
            for alpha in 1..=l.m {
                let (d_alpha, _) = subtree_stats(&l, alpha);
                let count = expansion.theta(alpha).len();
                check(&mut failures, count == 1 << d_alpha, || {
                    format!("rho {rho:?} tree {j} theta({alpha}): {count} != 2^{d_alpha}")
                });
                // each internal vertex of the subtree doubles the count
                // once, so the ceiling is 2^(m - alpha + 1)
                check(&mut failures, count <= 1 << (l.m - alpha + 1), || {
                    format!("rho {rho:?} tree {j} theta({alpha}): {count} above ceiling")
                });
            }
        }
    }
    conclude(3, "theta-term-counts", failures);
}

#[test]
fn criterion_04_move_invariance() {
    let mut failures = Vec::new();
    let grid = Grid::new(1, 64, 2.0 * std::f64::consts::PI).unwrap();
    let phi = GridField::random_band_limited(&grid, 7);
    // the identity holds node by node under the move's time relabeling,
    // so the coarsest quadrature already certifies it
    let quad = QuadratureSpec::with_order(2);
    for (k, r) in [(1usize, 3usize), (1, 4), (2, 3)] {
        for map in enumerate_collapse_maps(k, r).unwrap() {
            for l in 1..r {
                if !move_applicable(&map, l) {
                    continue;
                }
                let report = verify_move_invariance(&map, l, &phi, 0.5, quad, 1e-6).unwrap();
                check(&mut failures, report.pass, || {
                    format!("{}: relative {:.3e}", report.label, report.relative)
                });
            }
        }
    }
    conclude(4, "move-invariance", failures);
}

#[test]
fn criterion_05_resummation() {
    let mut failures = Vec::new();
    let grid = Grid::new(1, 64, 2.0 * std::f64::consts::PI).unwrap();
    let phi = GridField::random_band_limited(&grid, 7);
    let quad = QuadratureSpec::with_order(2);
    for (k, r, expected_classes) in [(1usize, 3usize, 5usize), (2, 2, 5)] {
        let classes = partition_classes(k, r).unwrap();
        check(&mut failures, classes.len() == expected_classes, || {
            format!("({k},{r}): {} classes, expected {expected_classes}", classes.len())
        });
        for class in &classes {
            let report = verify_resummation(class, &phi, 0.5, quad, 1e-6).unwrap();
            check(&mut failures, report.pass, || {
                format!("{}: relative {:.3e}", report.label, report.relative)
            });
        }
        let full = verify_full_sum(&classes, &phi, 0.5, quad, 1e-6).unwrap();
        check(&mut failures, full.pass, || {
            format!("{}: relative {:.3e}", full.label, full.relative)
        });
    }
    conclude(5, "resummation", failures);
}

#[test]
fn criterion_06_factorization() {
    let mut failures = Vec::new();
    let grid = Grid::new(1, 32, 2.0 * std::f64::consts::PI).unwrap();
    let phi = GridField::random_band_limited(&grid, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 1..=2usize {
        for r in 1..=3usize {
            for map in enumerate_collapse_maps(k, r).unwrap() {
                let t = 0.5;
                let mut tail: Vec<f64> = (0..r).map(|_| rng.gen_range(0.0..t)).collect();
                tail.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let mut times = vec![t];
                times.extend(tail);
                let report = verify_factorization(&map, &phi, &times, 1e-10).unwrap();
                check(&mut failures, report.pass, || {
                    format!("{}: relative {:.3e}", report.label, report.relative)
                });
            }
        }
    }
    conclude(6, "factorization", failures);
}

#[test]
fn criterion_07_trace_norm_oracle() {
    let mut failures = Vec::new();
    let grid = Grid::new(1, 32, 2.0 * std::f64::consts::PI).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9001);
    for case in 0..50u64 {
        let rank = 1 + (case as usize % 5);
        let kern = LowRankKernel::from_terms(
            (0..rank)
                .map(|q| {
                    let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    (
                        c,
                        GridField::random_band_limited(&grid, 7 * (50 * case + q as u64)),
                        GridField::random_band_limited(&grid, 7 * (50 * case + q as u64) + 1),
                    )
                })
                .collect(),
        );
        let gram_route = trace_norm(&kern);
        let dense = kern.dense().unwrap();
        let mat = nalgebra::DMatrix::from_fn(grid.points(), grid.points(), |i, j| dense[(i, j)]);
        let dense_route = grid.cell_volume() * mat.singular_values().iter().sum::<f64>();
        check(&mut failures, (gram_route - dense_route).abs() <= 1e-10 * dense_route, || {
            format!("case {case}: gram {gram_route}, dense {dense_route}")
        });
    }
    conclude(7, "trace-norm-oracle", failures);
}

#[test]
fn criterion_08_de_finetti_structure() {
    let mut failures = Vec::new();
    // admissibility of a two-atom mixture of unit-sphere states
    let grid = Grid::new(1, 32, 2.0 * std::f64::consts::PI).unwrap();
    let mu = DiscreteMeasure::new(vec![
        (0.6, GridField::random_band_limited(&grid, 7)),
        (0.4, GridField::random_band_limited(&grid, 8)),
    ])
    .unwrap();
    for k in 1..=2usize {
        let report = verify_admissibility(&mu, k, 1e-12).unwrap();
        check(&mut failures, report.pass, || {
            format!("{}: relative {:.3e}", report.label, report.relative)
        });
    }
    // moment roots increase to the largest atom H^1 norm (here 2)
    let sqrt_vol = (2.0 * std::f64::consts::PI).sqrt();
    let a = GridField::plane_wave(&grid, &[1], Complex64::new(1.0 / (2f64.sqrt() * sqrt_vol), 0.0));
    let b = GridField::plane_wave(&grid, &[2], Complex64::new(2.0 / (5f64.sqrt() * sqrt_vol), 0.0));
    check(&mut failures, (a.h1_norm() - 1.0).abs() < 1e-12, || {
        format!("atom a H1 norm {}", a.h1_norm())
    });
    check(&mut failures, (b.h1_norm() - 2.0).abs() < 1e-12, || {
        format!("atom b H1 norm {}", b.h1_norm())
    });
    let nu = DiscreteMeasure::new(vec![(0.5, a), (0.5, b)]).unwrap();
    let (moments, bound) = chebyshev_support(&nu, 20);
    check(&mut failures, (bound - 2.0).abs() < 1e-12, || format!("support bound {bound}"));
    let roots: Vec<f64> = moments
        .iter()
        .enumerate()
        .map(|(i, m)| m.powf(1.0 / (2.0 * (i + 1) as f64)))
        .collect();
    for pair in roots.windows(2) {
        check(&mut failures, pair[1] >= pair[0] - 1e-12, || {
            format!("moment roots not monotone: {roots:?}")
        });
    }
    check(&mut failures, roots.iter().all(|r| *r <= bound + 1e-12), || {
        format!("moment root above support bound: {roots:?}")
    });
    check(&mut failures, *roots.last().unwrap() > 0.95 * bound, || {
        format!("root at order 20 still far from the bound: {roots:?}")
    });
    conclude(8, "de-finetti-structure", failures);
}

#[test]
fn criterion_09_mild_solution() {
    let mut failures = Vec::new();
    let grid = Grid::new(1, 64, 2.0 * std::f64::consts::PI).unwrap();
    let amp = 0.9 / (2.0 * std::f64::consts::PI).sqrt();
    let atom = GridField::plane_wave(&grid, &[1], Complex64::new(amp, 0.0));
    let mu = DiscreteMeasure::new(vec![(1.0, atom)]).unwrap();
    let report = verify_mild_solution(&mu, 1, 1.0, 0.1, MildOptions::default()).unwrap();
    check(&mut failures, report.pass, || {
        format!("{}: relative {:.3e}", report.label, report.relative)
    });
    let nu = DiscreteMeasure::new(vec![
        (0.6, GridField::random_band_limited(&grid, 7)),
        (0.4, GridField::random_band_limited(&grid, 8)),
    ])
    .unwrap();
    // the Duhamel integrand oscillates like exp(i |xi|^2 s) at the top
    // retained frequencies, so its time quadrature needs the higher order
    let opts = MildOptions { quadrature_order: 32, tolerance: 1e-5, ..MildOptions::default() };
    let two = verify_mild_solution(&nu, 2, 1.0, 0.1, opts).unwrap();
    check(&mut failures, two.pass, || {
        format!("{}: relative {:.3e}", two.label, two.relative)
    });
    conclude(9, "mild-solution", failures);
}

#[test]
fn criterion_10_bound_ledger() {
    let mut failures = Vec::new();
    for k in 1..=3usize {
        for (m_norm, c) in [(1.0f64, 1.0f64), (1.3, 0.7)] {
            let t = 0.9 / (2.0 * c * m_norm.powi(4));
            for r in 1..10usize {
                let (hi, lo) = (final_bound(k, r, t, m_norm, c), final_bound(k, r + 1, t, m_norm, c));
                check(&mut failures, lo < hi, || {
                    format!("k={k} M={m_norm} C={c}: bound not decreasing at r={r}: {lo} !< {hi}")
                });
            }
        }
    }
    // closed-form shape at (k, r) = (1, 3): 8 T^2 M^8
    for (t, m_norm) in [(0.05f64, 0.8f64), (0.2, 1.0), (0.3, 1.1)] {
        let value = final_bound(1, 3, t, m_norm, 1.0);
        let shape = 8.0 * t * t * m_norm.powi(8);
        check(&mut failures, (value - shape).abs() <= 1e-12 * shape, || {
            format!("final_bound(1,3,{t},{m_norm},1) = {value}, shape {shape}")
        });
    }
    conclude(10, "bound-ledger", failures);
}

#[test]
fn criterion_11_nls_solver_order() {
    let mut failures = Vec::new();
    let grid = Grid::default_1d();
    // the scheme is exact on a single plane wave (constant modulus), so
    // the closed form certifies consistency while the order is measured
    // on two-mode data against a refined-step reference
    let amp = Complex64::new(0.4, 0.0);
    let wave = GridField::plane_wave(&grid, &[1], amp);
    let (lambda, t) = (1.0, 0.3);
    let flow = nls_flow(&wave, lambda, t, 1e-3).unwrap();
    let phase = Complex64::from_polar(1.0, -lambda * amp.norm_sqr() * t);
    let closed = free_propagate(&wave, t).scale(phase);
    let err = flow
        .values()
        .iter()
        .zip(closed.values())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0f64, f64::max);
    check(&mut failures, err < 1e-8 * amp.norm(), || {
        format!("plane-wave closed form missed: max error {err:.3e}")
    });

    let a = GridField::plane_wave(&grid, &[1], Complex64::new(0.5, 0.0));
    let b = GridField::plane_wave(&grid, &[2], Complex64::new(0.3, 0.1));
    let phi0 = a.add(&b);
    let t = 0.2;
    let reference = nls_flow(&phi0, 1.0, t, 2.5e-5).unwrap();
    let error_at = |dt: f64| {
        let flow = nls_flow(&phi0, 1.0, t, dt).unwrap();
        flow.values()
            .iter()
            .zip(reference.values())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0f64, f64::max)
    };
    let errors = [error_at(4e-3), error_at(2e-3), error_at(1e-3)];
    for pair in errors.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        check(&mut failures, (1.8..=2.2).contains(&order), || {
            format!("measured order {order:.3} from errors {errors:?}")
        });
    }
    conclude(11, "nls-solver-order", failures);
}
