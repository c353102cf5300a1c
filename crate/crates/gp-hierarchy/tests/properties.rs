//! Property suites for the combinatorial core: move involution, echelon
//! reduction, partition structure, forest bookkeeping, expansion term
//! counts, and bound-ledger monotonicity.

use proptest::prelude::*;

use gp_hierarchy::boardgame::{
    apply_move, enumerate_collapse_maps, map_count, move_applicable, partition_classes,
    reduce_to_echelon, time_domain, unapply_move, CollapseMap,
};
use gp_hierarchy::kernels::{
    apply_b, assemble_jk, bound_ledger, final_bound, rank1_product, theta_expand,
};
use gp_hierarchy::trees::{build_forest, extract_labeling, subtree_stats};

/// A random collapse-map shape with its array: k in 1..=3, r in 1..=5.
fn collapse_map_strategy() -> impl Strategy<Value = CollapseMap> {
    (1usize..=3, 1usize..=5)
        .prop_flat_map(|(k, r)| {
            let columns: Vec<_> = (1..=r).map(|l| 1usize..=(k + l - 1)).collect();
            (Just(k), columns)
        })
        .prop_map(|(k, rho)| CollapseMap::new(k, rho).unwrap())
}

proptest! {
    #[test]
    fn moves_are_involutions(m in collapse_map_strategy()) {
        let r = m.r();
        let identity: Vec<usize> = (1..=r).collect();
        for l in 1..r {
            if move_applicable(&m, l) {
                let (moved, pi) = apply_move(&m, &identity, l).unwrap();
                let (back, back_pi) = unapply_move(&moved, &pi, l);
                prop_assert_eq!(&back, &m);
                prop_assert_eq!(back_pi, identity.clone());
            } else {
                prop_assert!(apply_move(&m, &identity, l).is_err());
            }
        }
    }

    #[test]
    fn reduction_terminates_and_is_idempotent(m in collapse_map_strategy()) {
        let r = m.r();
        let (echelon, trace) = reduce_to_echelon(&m);
        prop_assert!(echelon.as_map().is_upper_echelon());
        prop_assert!(trace.moves.len() <= r * r);
        // replaying the recorded moves from the original map reproduces
        // the echelon form and the permutation
        let identity: Vec<usize> = (1..=r).collect();
        let mut current = (m.clone(), identity);
        for &l in &trace.moves {
            current = apply_move(&current.0, &current.1, l).unwrap();
        }
        prop_assert_eq!(&current.0, echelon.as_map());
        prop_assert_eq!(&current.1, &trace.pi);
        // idempotence
        let (again, empty) = reduce_to_echelon(echelon.as_map());
        prop_assert_eq!(again.as_map(), echelon.as_map());
        prop_assert!(empty.moves.is_empty());
    }

    #[test]
    fn forest_bookkeeping(m in collapse_map_strategy()) {
        let (k, r) = (m.k(), m.r());
        let forest = build_forest(&m);
        let total_internal: usize = (1..=k).map(|j| forest.internal_columns(j).len()).sum();
        prop_assert_eq!(total_internal, r);
        let total_leaves: usize = (1..=k).map(|j| forest.leaves(j).len()).sum();
        prop_assert_eq!(total_leaves, k + r);
        // exactly one distinguished tree, carrying the final contraction
        let dist = forest.distinguished_tree();
        prop_assert!(forest.internal_columns(dist).contains(&r));
        let echelon = m.is_upper_echelon();
        for j in 1..=k {
            if let Ok(l) = extract_labeling(&forest, j) {
                // child ordering in the pure cases: both-leaves always,
                // both-internal only on echelon inputs
                for alpha in 1..=l.m {
                    let (lo, hi) = l.kappa(alpha);
                    let pure = (echelon && l.is_internal(lo) && l.is_internal(hi))
                        || (!l.is_internal(lo) && !l.is_internal(hi));
                    if pure {
                        prop_assert!(lo < hi, "tree {j} alpha {alpha}: {lo} !< {hi}");
                    }
                }
                prop_assert_eq!(l.distinguished, j == dist);
            }
        }
    }

    #[test]
    fn echelon_forest_sigma_nondecreasing(m in collapse_map_strategy()) {
        let (echelon, _) = reduce_to_echelon(&m);
        let forest = build_forest(echelon.as_map());
        for j in 1..=echelon.as_map().k() {
            if let Ok(l) = extract_labeling(&forest, j) {
                prop_assert_eq!(l.sigma[0], 1);
                prop_assert!(l.sigma.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn theta_term_counts(m in collapse_map_strategy()) {
        let forest = build_forest(&m);
        for j in 1..=m.k() {
            if let Ok(l) = extract_labeling(&forest, j) {
                let expansion = theta_expand(&l);
                for alpha in 1..=l.m {
                    let (d_alpha, _) = subtree_stats(&l, alpha);
                    // exact doubling law and its ceiling
                    prop_assert_eq!(expansion.theta(alpha).len(), 1usize << d_alpha);
                    prop_assert!(expansion.theta(alpha).len() <= 1 << (l.m - alpha + 1));
                    let expected = if l.distinguished {
                        let in_subtree = alpha <= 1 || {
                            // the distinguished vertex m lies in subtree
                            // alpha iff alpha is one of its ancestors
                            let mut reach = vec![alpha];
                            let mut found = false;
                            while let Some(v) = reach.pop() {
                                if v == l.m {
                                    found = true;
                                    break;
                                }
                                if l.is_internal(v) {
                                    let (lo, hi) = l.kappa(v);
                                    reach.push(lo);
                                    reach.push(hi);
                                }
                            }
                            found
                        };
                        usize::from(in_subtree)
                    } else {
                        0
                    };
                    for term in &expansion.theta(alpha).terms {
                        prop_assert_eq!(term.distinguished_count(), expected);
                    }
                }
                prop_assert_eq!(expansion.root().len(), 1usize << l.m);
            }
        }
    }

    #[test]
    fn assembled_factor_counts(m in collapse_map_strategy()) {
        let forest = build_forest(&m);
        let jk = assemble_jk(&m);
        prop_assert_eq!(jk.factors.len(), m.k());
        for (j, factor) in jk.factors.iter().enumerate() {
            let m_j = forest.internal_columns(j + 1).len();
            prop_assert_eq!(factor.len(), 1usize << m_j);
        }
    }

    #[test]
    fn contraction_slot_bookkeeping(m in collapse_map_strategy()) {
        let (k, r) = (m.k(), m.r());
        let mut expr = rank1_product(k + r).unwrap();
        for l in (1..=r).rev() {
            expr = apply_b(m.rho()[l - 1], &expr).unwrap();
        }
        prop_assert_eq!(expr.slots.len(), k);
    }

    #[test]
    fn ledger_aggregate_exponents(m in collapse_map_strategy()) {
        let forest = build_forest(&m);
        let ledger = bound_ledger(&forest);
        prop_assert_eq!(ledger.agg_phi_exp as usize, 2 * (m.k() + m.r()));
        prop_assert_eq!(ledger.agg_t_half_exp as usize, m.r() - 1);
        prop_assert_eq!(ledger.agg_pow2 as usize, m.r());
        prop_assert_eq!(ledger.agg_c_exp as usize, m.r());
    }

    #[test]
    fn final_bound_decreasing_under_small_horizon(
        k in 1usize..=3,
        m_norm in 0.5f64..2.0,
        c in 0.5f64..3.0,
        frac in 0.1f64..0.95,
    ) {
        let t = frac / (2.0 * c * m_norm.powi(4));
        for r in 1..10usize {
            prop_assert!(
                final_bound(k, r + 1, t, m_norm, c) < final_bound(k, r, t, m_norm, c)
            );
        }
    }
}

/// Independent dynamic-programming count of nondecreasing arrays with
/// rho[l] <= k + l - 1: the exact number of echelon classes.
fn ballot_class_count(k: usize, r: usize) -> u128 {
    fn rec(k: usize, r: usize, l: usize, prev: usize) -> u128 {
        if l > r {
            return 1;
        }
        (prev..=(k + l - 1)).map(|v| rec(k, r, l + 1, v)).sum()
    }
    rec(k, r, 1, 1)
}

#[test]
fn partition_structure_small_shapes() {
    for k in 1..=3usize {
        for r in 1..=5usize {
            let maps = enumerate_collapse_maps(k, r).unwrap();
            assert_eq!(maps.len() as u128, map_count(k, r));
            let classes = partition_classes(k, r).unwrap();
            let total: usize = classes.iter().map(|c| c.members.len()).sum();
            assert_eq!(total, maps.len());
            // the class count is a ballot number: Catalan growth ~ 4^r,
            // bounded by 2^(k+2r-2) but not by 2^(k+r) (132 > 128 at
            // k=2, r=5 and 297 > 256 at k=3, r=5)
            assert_eq!(classes.len() as u128, ballot_class_count(k, r));
            assert!(classes.len() as u128 <= 1u128 << (k + 2 * r - 2));
            let mut seen = std::collections::BTreeSet::new();
            for class in &classes {
                // permutations within a class are pairwise distinct
                let perms: std::collections::BTreeSet<_> =
                    class.members.iter().map(|(_, pi)| pi.clone()).collect();
                assert_eq!(perms.len(), class.members.len());
                for (member, _) in &class.members {
                    assert!(seen.insert(member.rho().to_vec()), "classes must be disjoint");
                }
                // time-domain volume additivity
                let domain = time_domain(class, 1.0);
                let factorial: f64 = (1..=r).map(|i| i as f64).product();
                let expected = class.members.len() as f64 / factorial;
                assert!((domain.volume() - expected).abs() < 1e-12);
            }
        }
    }
    // the nominal exponential ceiling fails exactly twice in this range
    assert_eq!(ballot_class_count(2, 5), 132);
    assert!(ballot_class_count(2, 5) > 1u128 << 7);
    assert_eq!(ballot_class_count(3, 5), 297);
    assert!(ballot_class_count(3, 5) > 1u128 << 8);
}
