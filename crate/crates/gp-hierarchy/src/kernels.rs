//! Symbolic algebra of signed separable kernels.
//!
//! One-particle kernels are sums of terms `c * chi(x) * conj(psi)(x')` with
//! `c = +/-1`. Factors are either the base symbol `phi`, the opaque cubic
//! symbol `psi~` produced at the distinguished vertex, or pointwise cubic
//! products, each wrapped in a chain of free-propagator tags. Contraction
//! operators `B` and the recursive per-tree expansion double the term count
//! at every internal vertex; expressions are immutable and no simplification
//! is performed beyond merging adjacent propagator tags.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::boardgame::CollapseMap;
use crate::trees::{build_forest, extract_labeling, TreeForest, TreeLabeling};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("empty tensor product rejected")]
    EmptyProduct,
    #[error("slot {slot} out of range for {slots} slots")]
    SlotOutOfRange { slot: usize, slots: usize },
    #[error("contraction needs at least two slots")]
    NeedTwoSlots,
}

/// Index into the time vector: `0` is the outer time `t`, `1..=r` are the
/// Duhamel times `t_1..t_r`.
pub type TimeIndex = usize;

/// Base symbol of a factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum FactorBase {
    /// The one-particle wave function.
    Phi,
    /// The opaque cubic symbol produced at the distinguished vertex; stands
    /// for `|phi|^2 phi` but is kept symbolic until substitution.
    PsiTilde,
    /// Pointwise cubic product `a(x) * conj(b)(x) * c(x)`.
    Product(Arc<FactorExpr>, Arc<FactorExpr>, Arc<FactorExpr>),
}

/// A factor: a base symbol under a chain of free propagators, outermost
/// first; the tag `(a, b)` denotes `U_{a,b} = e^{i (t_a - t_b) Laplacian}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FactorExpr {
    pub base: FactorBase,
    pub chain: Vec<(TimeIndex, TimeIndex)>,
    pub distinguished: bool,
}

impl FactorExpr {
    pub fn phi() -> Arc<Self> {
        Arc::new(FactorExpr { base: FactorBase::Phi, chain: vec![], distinguished: false })
    }

    pub fn psi_tilde() -> Arc<Self> {
        Arc::new(FactorExpr { base: FactorBase::PsiTilde, chain: vec![], distinguished: true })
    }

    /// Pointwise product `a(x) * conj(b)(x) * c(x)`, with no outer chain.
    pub fn product(a: Arc<Self>, b: Arc<Self>, c: Arc<Self>) -> Arc<Self> {
        let distinguished = a.distinguished || b.distinguished || c.distinguished;
        Arc::new(FactorExpr {
            base: FactorBase::Product(a, b, c),
            chain: vec![],
            distinguished,
        })
    }

    /// Wraps the factor in `U_{from,to}`, merging with the current outermost
    /// tag when the indices meet and eliding identity propagators.
    pub fn propagate(self: &Arc<Self>, from: TimeIndex, to: TimeIndex) -> Arc<Self> {
        if from == to {
            return Arc::clone(self);
        }
        let mut chain = self.chain.clone();
        match chain.first().copied() {
            Some((a, b)) if a == to => {
                if from == b {
                    chain.remove(0);
                } else {
                    chain[0] = (from, b);
                }
            }
            _ => chain.insert(0, (from, to)),
        }
        Arc::new(FactorExpr { base: self.base.clone(), chain, distinguished: self.distinguished })
    }

    /// Replaces every `psi~` symbol by the explicit cubic `phi` product.
    pub fn substitute_psi_tilde(self: &Arc<Self>) -> Arc<Self> {
        if !self.distinguished {
            return Arc::clone(self);
        }
        let base = match &self.base {
            FactorBase::Phi => FactorBase::Phi,
            FactorBase::PsiTilde => FactorBase::Product(
                FactorExpr::phi(),
                FactorExpr::phi(),
                FactorExpr::phi(),
            ),
            FactorBase::Product(a, b, c) => FactorBase::Product(
                a.substitute_psi_tilde(),
                b.substitute_psi_tilde(),
                c.substitute_psi_tilde(),
            ),
        };
        Arc::new(FactorExpr { base, chain: self.chain.clone(), distinguished: false })
    }
}

impl fmt::Display for FactorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &(a, b) in &self.chain {
            write!(f, "U[{a},{b}]")?;
        }
        match &self.base {
            FactorBase::Phi => write!(f, "phi"),
            FactorBase::PsiTilde => write!(f, "psi~"),
            FactorBase::Product(a, b, c) => write!(f, "({a}*conj({b})*{c})"),
        }
    }
}

/// One signed separable term `sign * left(x) * conj(right)(x')`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Term {
    pub sign: i8,
    pub left: Arc<FactorExpr>,
    pub right: Arc<FactorExpr>,
}

impl Term {
    /// Number of distinguished factors carried by the term (0 or 1).
    pub fn distinguished_count(&self) -> usize {
        self.left.distinguished as usize + self.right.distinguished as usize
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.sign >= 0 { '+' } else { '-' };
        write!(f, "{} {} (x) conj({}) (x')", sign, self.left, self.right)
    }
}

/// A one-particle kernel: a signed sum of separable terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OneParticleKernelExpr {
    pub terms: Vec<Term>,
}

impl OneParticleKernelExpr {
    pub fn rank1_phi() -> Self {
        OneParticleKernelExpr {
            terms: vec![Term { sign: 1, left: FactorExpr::phi(), right: FactorExpr::phi() }],
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Applies `U_{from,to}` to both factors of every term.
    pub fn propagate(&self, from: TimeIndex, to: TimeIndex) -> Self {
        OneParticleKernelExpr {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    sign: t.sign,
                    left: t.left.propagate(from, to),
                    right: t.right.propagate(from, to),
                })
                .collect(),
        }
    }

    pub fn substitute_psi_tilde(&self) -> Self {
        OneParticleKernelExpr {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    sign: t.sign,
                    left: t.left.substitute_psi_tilde(),
                    right: t.right.substitute_psi_tilde(),
                })
                .collect(),
        }
    }
}

/// Contracts the pair `(keep, fresh)` under `B = B+ - B-`: the fresh kernel
/// is evaluated on the diagonal at `x` (plus part) or `x'` (minus part) and
/// multiplied pointwise into the kept kernel. Term count doubles:
/// `2 * |keep| * |fresh|`.
pub fn contract_pair(
    keep: &OneParticleKernelExpr,
    fresh: &OneParticleKernelExpr,
) -> OneParticleKernelExpr {
    let mut terms = Vec::with_capacity(2 * keep.len() * fresh.len());
    for a in &keep.terms {
        for b in &fresh.terms {
            let sign = a.sign * b.sign;
            terms.push(Term {
                sign,
                left: FactorExpr::product(
                    Arc::clone(&a.left),
                    Arc::clone(&b.right),
                    Arc::clone(&b.left),
                ),
                right: Arc::clone(&a.right),
            });
            terms.push(Term {
                sign: -sign,
                left: Arc::clone(&a.left),
                right: FactorExpr::product(
                    Arc::clone(&a.right),
                    Arc::clone(&b.left),
                    Arc::clone(&b.right),
                ),
            });
        }
    }
    OneParticleKernelExpr { terms }
}

/// A tensor product of one-particle kernels, one per particle slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultiParticleKernelExpr {
    pub slots: Vec<OneParticleKernelExpr>,
}

/// The pure product `(|phi><phi|)^{(x) n}`.
pub fn rank1_product(n: usize) -> Result<MultiParticleKernelExpr, KernelError> {
    if n == 0 {
        return Err(KernelError::EmptyProduct);
    }
    Ok(MultiParticleKernelExpr {
        slots: (0..n).map(|_| OneParticleKernelExpr::rank1_phi()).collect(),
    })
}

/// Applies the contraction `B_{j;n} = B+ - B-` where the partner is the
/// last slot `n`; slot `j` absorbs the contracted pair and the slot count
/// drops by one.
pub fn apply_b(
    j: usize,
    expr: &MultiParticleKernelExpr,
) -> Result<MultiParticleKernelExpr, KernelError> {
    let n = expr.slots.len();
    if n < 2 {
        return Err(KernelError::NeedTwoSlots);
    }
    if j < 1 || j >= n {
        return Err(KernelError::SlotOutOfRange { slot: j, slots: n });
    }
    let fresh = &expr.slots[n - 1];
    let mut slots: Vec<OneParticleKernelExpr> = expr.slots[..n - 1].to_vec();
    slots[j - 1] = contract_pair(&expr.slots[j - 1], fresh);
    Ok(MultiParticleKernelExpr { slots })
}

/// Applies `U_{from,to}` to the chosen slots (1-based indices).
pub fn apply_propagator(
    expr: &MultiParticleKernelExpr,
    slots: &[usize],
    from: TimeIndex,
    to: TimeIndex,
) -> Result<MultiParticleKernelExpr, KernelError> {
    let n = expr.slots.len();
    for &s in slots {
        if s < 1 || s > n {
            return Err(KernelError::SlotOutOfRange { slot: s, slots: n });
        }
    }
    let mut out = expr.clone();
    for &s in slots {
        out.slots[s - 1] = out.slots[s - 1].propagate(from, to);
    }
    Ok(out)
}

/// The per-vertex kernels of one tree: `theta(alpha)` for `alpha` in
/// `1..=m`, built bottom-up from the leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaExpansion {
    thetas: Vec<OneParticleKernelExpr>,
}

impl ThetaExpansion {
    pub fn theta(&self, alpha: usize) -> &OneParticleKernelExpr {
        &self.thetas[alpha - 1]
    }

    pub fn m(&self) -> usize {
        self.thetas.len()
    }

    pub fn root(&self) -> &OneParticleKernelExpr {
        self.theta(1)
    }
}

/// Expands the kernels of one labeled tree. Leaves carry `phi` at time
/// `t_r`; the distinguished vertex is seeded with the two-term `psi~`
/// kernel; every other internal vertex contracts its propagated children.
pub fn theta_expand(l: &TreeLabeling) -> ThetaExpansion {
    let m = l.m;
    let leaf_time = l.r;
    let mut thetas: Vec<Option<OneParticleKernelExpr>> = vec![None; m];
    for alpha in (1..=m).rev() {
        let vertex_time = l.time_binding[alpha - 1];
        let theta = if l.distinguished && alpha == m {
            OneParticleKernelExpr {
                terms: vec![
                    Term { sign: 1, left: FactorExpr::psi_tilde(), right: FactorExpr::phi() },
                    Term { sign: -1, left: FactorExpr::phi(), right: FactorExpr::psi_tilde() },
                ],
            }
        } else {
            let (lo, hi) = l.kappa(alpha);
            let child = |label: usize, thetas: &[Option<OneParticleKernelExpr>]| {
                if l.is_internal(label) {
                    let kernel = thetas[label - 1].clone().expect("children expanded first");
                    kernel.propagate(vertex_time, l.time_binding[label - 1])
                } else {
                    OneParticleKernelExpr::rank1_phi().propagate(vertex_time, leaf_time)
                }
            };
            contract_pair(&child(lo, &thetas), &child(hi, &thetas))
        };
        thetas[alpha - 1] = Some(theta);
    }
    ThetaExpansion { thetas: thetas.into_iter().map(|t| t.expect("all expanded")).collect() }
}

/// The factorized Duhamel integrand: one one-particle kernel per tree, in
/// root order, with global time bindings baked into the propagator tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JkFactors {
    pub k: usize,
    pub r: usize,
    pub factors: Vec<OneParticleKernelExpr>,
}

/// Assembles the per-tree factorization of the integrand for a collapse
/// map. Bare-edge trees become a single free-propagated rank-1 term; every
/// other tree contributes its expanded root kernel propagated to the outer
/// time.
pub fn assemble_jk(m: &CollapseMap) -> JkFactors {
    let forest = build_forest(m);
    assemble_jk_from_forest(&forest)
}

pub fn assemble_jk_from_forest(forest: &TreeForest) -> JkFactors {
    let (k, r) = (forest.k(), forest.r());
    let factors = (1..=k)
        .map(|j| match extract_labeling(forest, j) {
            Err(_) => OneParticleKernelExpr::rank1_phi().propagate(0, r),
            Ok(labeling) => {
                let expansion = theta_expand(&labeling);
                expansion.root().propagate(0, labeling.time_binding[0])
            }
        })
        .collect();
    JkFactors { k, r, factors }
}

/// Symbolic trace-norm budget of one tree, following the leaf-counting
/// argument: `2^m C^m T^{(m-1)/2 or m/2}` with every leaf pair contributing
/// two powers of the Sobolev norm (the distinguished pair contributes the
/// cubic symbol plus its partner, so the same total).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeBound {
    pub tree: usize,
    pub m: usize,
    pub distinguished: bool,
    /// Exponent of 2 (term count).
    pub pow2: u32,
    /// Exponent of the Strichartz constant.
    pub c_exp: u32,
    /// Exponent of `T`, in half units.
    pub t_half_exp: u32,
    /// Exponent of the `H^1` norm of `phi`.
    pub phi_exp: u32,
}

impl TreeBound {
    pub fn value(&self, t: f64, m_norm: f64, c: f64) -> f64 {
        2f64.powi(self.pow2 as i32)
            * c.powi(self.c_exp as i32)
            * t.powf(self.t_half_exp as f64 / 2.0)
            * m_norm.powi(self.phi_exp as i32)
    }
}

/// The assembled bound ledger for one forest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundLedger {
    pub k: usize,
    pub r: usize,
    pub per_tree: Vec<TreeBound>,
    /// Aggregate exponents before the final two time integrals:
    /// `2^r C^r T^{(r-1)/2} |phi|^{2(k+r)}`.
    pub agg_pow2: u32,
    pub agg_c_exp: u32,
    pub agg_t_half_exp: u32,
    pub agg_phi_exp: u32,
}

impl BoundLedger {
    pub fn aggregate_value(&self, t: f64, m_norm: f64, c: f64) -> f64 {
        2f64.powi(self.agg_pow2 as i32)
            * c.powi(self.agg_c_exp as i32)
            * t.powf(self.agg_t_half_exp as f64 / 2.0)
            * m_norm.powi(self.agg_phi_exp as i32)
    }

    /// Final trace-norm bound after the last two time integrals:
    /// `2 M^{2k-2} (2 C M^4 T)^{(r+1)/2}`, strictly decreasing in `r` when
    /// `T < (2 C M^4)^{-1}`.
    pub fn final_bound(&self, t: f64, m_norm: f64, c: f64) -> f64 {
        final_bound(self.k, self.r, t, m_norm, c)
    }
}

pub fn final_bound(k: usize, r: usize, t: f64, m_norm: f64, c: f64) -> f64 {
    2.0 * m_norm.powi(2 * k as i32 - 2)
        * (2.0 * c * m_norm.powi(4) * t).powf((r as f64 + 1.0) / 2.0)
}

/// Builds the symbolic bound ledger for the forest of a collapse map.
pub fn bound_ledger(forest: &TreeForest) -> BoundLedger {
    let (k, r) = (forest.k(), forest.r());
    let per_tree: Vec<TreeBound> = (1..=k)
        .map(|j| {
            let m = forest.internal_columns(j).len();
            let distinguished = forest.distinguished_tree() == j;
            let t_half_exp = if distinguished { m as u32 - 1 } else { m as u32 };
            TreeBound {
                tree: j,
                m,
                distinguished,
                pow2: m as u32,
                c_exp: m as u32,
                t_half_exp,
                phi_exp: 2 * (m as u32 + 1),
            }
        })
        .collect();
    let ledger = BoundLedger {
        k,
        r,
        agg_pow2: per_tree.iter().map(|b| b.pow2).sum(),
        agg_c_exp: per_tree.iter().map(|b| b.c_exp).sum(),
        agg_t_half_exp: per_tree.iter().map(|b| b.t_half_exp).sum(),
        agg_phi_exp: per_tree.iter().map(|b| b.phi_exp).sum(),
        per_tree,
    };
    debug_assert_eq!(ledger.agg_pow2, r as u32);
    debug_assert_eq!(ledger.agg_t_half_exp, r as u32 - 1);
    debug_assert_eq!(ledger.agg_phi_exp, 2 * (k + r) as u32);
    ledger
}
