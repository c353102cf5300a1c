//! Collapse maps and the acceptable-move rewriting system.
//!
//! A collapse map records, for each of the `r` Duhamel columns, which earlier
//! particle row the fresh contraction attaches to. Acceptable moves swap
//! adjacent columns (with the paired row relabeling and time-label exchange)
//! without changing the value of the iterated time integral; upper echelon
//! forms are the canonical representatives, and each equivalence class
//! resums over a union of permuted time simplices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ceiling on the number of maps a single enumeration may produce.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BoardgameError {
    #[error("k and r must both be at least 1 (got k={k}, r={r})")]
    EmptyShape { k: usize, r: usize },
    #[error("column {column}: row {row} is not in 1..={max}")]
    RowOutOfRange { column: usize, row: usize, max: usize },
    #[error("rho has length {len} but r={r}")]
    LengthMismatch { len: usize, r: usize },
    #[error("enumeration of {count} maps exceeds the cap of {cap}")]
    CapExceeded { count: u128, cap: u128 },
    #[error("move at column {column} is not applicable")]
    Inapplicable { column: usize },
    #[error("rho {rho:?} is not nondecreasing")]
    NotEchelon { rho: Vec<usize> },
}

/// The map `rho` assigning to each Duhamel column its contraction row.
///
/// Column `l` (1-based, `1..=r`) introduces particle `k+l` and contracts it
/// onto row `rho(l)`, which must satisfy `1 <= rho(l) < k+l`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CollapseMap {
    k: usize,
    r: usize,
    rho: Vec<usize>,
}

impl CollapseMap {
    pub fn new(k: usize, rho: Vec<usize>) -> Result<Self, BoardgameError> {
        let r = rho.len();
        if k < 1 || r < 1 {
            return Err(BoardgameError::EmptyShape { k, r });
        }
        for (i, &row) in rho.iter().enumerate() {
            let max = k + i;
            if row < 1 || row > max {
                return Err(BoardgameError::RowOutOfRange { column: i + 1, row, max });
            }
        }
        Ok(CollapseMap { k, r, rho })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn rho(&self) -> &[usize] {
        &self.rho
    }

    /// Contraction row of column `l` (1-based).
    pub fn row(&self, l: usize) -> usize {
        self.rho[l - 1]
    }

    pub fn is_upper_echelon(&self) -> bool {
        self.rho.windows(2).all(|w| w[0] <= w[1])
    }
}

/// A collapse map whose rows are nondecreasing: the canonical class
/// representative under acceptable moves.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EchelonForm(CollapseMap);

impl EchelonForm {
    pub fn new(m: CollapseMap) -> Result<Self, BoardgameError> {
        if m.is_upper_echelon() {
            Ok(EchelonForm(m))
        } else {
            Err(BoardgameError::NotEchelon { rho: m.rho })
        }
    }

    pub fn as_map(&self) -> &CollapseMap {
        &self.0
    }

    pub fn into_map(self) -> CollapseMap {
        self.0
    }
}

/// Record of an echelon reduction: the columns at which moves were applied,
/// in order, and the resulting time-label permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveTrace {
    pub moves: Vec<usize>,
    pub pi: Vec<usize>,
}

/// A union of ordered time simplices inside `[0,t]^r`, one per permutation.
///
/// The permutation `pi` denotes the region `t > t_{pi(1)} > ... > t_{pi(r)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexDomain {
    pub t: f64,
    pub r: usize,
    pub perms: Vec<Vec<usize>>,
}

impl SimplexDomain {
    /// The permuted simplices have pairwise disjoint interiors, so the
    /// Lebesgue volume of the union is `|perms| * t^r / r!`.
    pub fn volume(&self) -> f64 {
        let factorial: f64 = (1..=self.r).map(|i| i as f64).product();
        self.perms.len() as f64 * self.t.powi(self.r as i32) / factorial
    }
}

/// Number of collapse maps for the given shape: `prod_{l=1}^{r} (k+l-1)`.
pub fn map_count(k: usize, r: usize) -> u128 {
    (0..r).map(|i| (k + i) as u128).product()
}

/// Enumerates all collapse maps for `(k, r)` in lexicographic order of rho.
pub fn enumerate_collapse_maps(k: usize, r: usize) -> Result<Vec<CollapseMap>, BoardgameError> {
    enumerate_collapse_maps_capped(k, r, DEFAULT_ENUMERATION_CAP)
}

/// Enumeration with an explicit cap on the number of produced maps.
pub fn enumerate_collapse_maps_capped(
    k: usize,
    r: usize,
    cap: u128,
) -> Result<Vec<CollapseMap>, BoardgameError> {
    if k < 1 || r < 1 {
        return Err(BoardgameError::EmptyShape { k, r });
    }
    let count = map_count(k, r);
    if count > cap {
        return Err(BoardgameError::CapExceeded { count, cap });
    }
    let mut maps = Vec::with_capacity(count as usize);
    let mut rho = vec![1usize; r];
    loop {
        maps.push(CollapseMap { k, r, rho: rho.clone() });
        // odometer increment, last column fastest
        let mut i = r;
        loop {
            if i == 0 {
                return Ok(maps);
            }
            i -= 1;
            if rho[i] < k + i {
                rho[i] += 1;
                for entry in rho.iter_mut().skip(i + 1) {
                    *entry = 1;
                }
                break;
            }
        }
    }
}

pub fn is_upper_echelon(m: &CollapseMap) -> bool {
    m.is_upper_echelon()
}

/// Whether an acceptable move may be applied at column `l` (1-based,
/// `1 <= l <= r-1`): the adjacent rows descend, and the highlight moving
/// left stays strictly below its new column's diagonal.
pub fn move_applicable(m: &CollapseMap, l: usize) -> bool {
    l >= 1 && l < m.r && m.row(l + 1) < m.row(l) && m.row(l + 1) < m.k + l
}

/// Applies the acceptable move at column `l` to `(m, pi)`.
///
/// The move swaps the highlights of columns `l` and `l+1`, relabels rows
/// `k+l` and `k+l+1` in all later columns, and exchanges the time labels
/// `l` and `l+1` in `pi`. The same raw transformation applied again undoes
/// the move, so it is an involution on its applicability domain.
pub fn apply_move(
    m: &CollapseMap,
    pi: &[usize],
    l: usize,
) -> Result<(CollapseMap, Vec<usize>), BoardgameError> {
    if !move_applicable(m, l) {
        return Err(BoardgameError::Inapplicable { column: l });
    }
    Ok(raw_move(m, pi, l))
}

/// Applies the raw column/row/time swap at column `l` without checking the
/// move condition. Used to replay recorded traces backwards.
pub fn unapply_move(m: &CollapseMap, pi: &[usize], l: usize) -> (CollapseMap, Vec<usize>) {
    raw_move(m, pi, l)
}

fn raw_move(m: &CollapseMap, pi: &[usize], l: usize) -> (CollapseMap, Vec<usize>) {
    let (k, r) = (m.k, m.r);
    let mut rho = m.rho.clone();
    rho.swap(l - 1, l);
    for row in rho.iter_mut().skip(l + 1) {
        if *row == k + l {
            *row = k + l + 1;
        } else if *row == k + l + 1 {
            *row = k + l;
        }
    }
    let mut pi = pi.to_vec();
    debug_assert_eq!(pi.len(), r);
    let a = pi.iter().position(|&v| v == l).expect("pi must contain l");
    let b = pi.iter().position(|&v| v == l + 1).expect("pi must contain l+1");
    pi.swap(a, b);
    (CollapseMap { k, r, rho }, pi)
}

/// Reduces `m` to upper echelon form by repeatedly applying the move at the
/// smallest applicable column, recording the trace.
pub fn reduce_to_echelon(m: &CollapseMap) -> (EchelonForm, MoveTrace) {
    let mut current = m.clone();
    let mut pi: Vec<usize> = (1..=m.r).collect();
    let mut moves = Vec::new();
    let ceiling = m.r * m.r;
    while !current.is_upper_echelon() {
        let l = (1..m.r)
            .find(|&l| move_applicable(&current, l))
            .expect("a non-echelon map always admits a move");
        let (next, next_pi) = raw_move(&current, &pi, l);
        current = next;
        pi = next_pi;
        moves.push(l);
        assert!(moves.len() <= ceiling, "echelon reduction exceeded {ceiling} moves");
    }
    let form = EchelonForm(current);
    (form, MoveTrace { moves, pi })
}

/// One equivalence class of collapse maps under acceptable moves: the shared
/// echelon form and every member together with its reduction permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EchelonClass {
    pub echelon: EchelonForm,
    pub members: Vec<(CollapseMap, Vec<usize>)>,
}

/// Partitions the full enumeration for `(k, r)` into move-equivalence
/// classes keyed by echelon form, in lexicographic order of the forms.
pub fn partition_classes(k: usize, r: usize) -> Result<Vec<EchelonClass>, BoardgameError> {
    partition_classes_capped(k, r, DEFAULT_ENUMERATION_CAP)
}

pub fn partition_classes_capped(
    k: usize,
    r: usize,
    cap: u128,
) -> Result<Vec<EchelonClass>, BoardgameError> {
    let maps = enumerate_collapse_maps_capped(k, r, cap)?;
    let mut classes: BTreeMap<CollapseMap, Vec<(CollapseMap, Vec<usize>)>> = BTreeMap::new();
    for m in maps {
        let (form, trace) = reduce_to_echelon(&m);
        classes.entry(form.into_map()).or_default().push((m, trace.pi));
    }
    Ok(classes
        .into_iter()
        .map(|(echelon, members)| {
            for (i, (_, pi)) in members.iter().enumerate() {
                for (_, other) in &members[..i] {
                    assert_ne!(pi, other, "reduction permutations within a class must be distinct");
                }
            }
            EchelonClass { echelon: EchelonForm(echelon), members }
        })
        .collect())
}

/// The time domain over which the echelon integrand resums the class: the
/// union of the members' permuted simplices inside `[0,t]^r`.
pub fn time_domain(class: &EchelonClass, t: f64) -> SimplexDomain {
    let r = class.echelon.as_map().r();
    let perms: Vec<Vec<usize>> = class.members.iter().map(|(_, pi)| pi.clone()).collect();
    for (i, pi) in perms.iter().enumerate() {
        for other in &perms[..i] {
            assert_ne!(pi, other, "simplex interiors must be pairwise disjoint");
        }
    }
    SimplexDomain { t, r, perms }
}
