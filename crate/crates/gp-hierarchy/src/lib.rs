//! Combinatorial and numerical machinery for the cubic Gross-Pitaevskii
//! hierarchy: collapse-map enumeration and normal forms, binary contraction
//! trees, symbolic kernel factorization, and a periodic spectral grid backend
//! that certifies the exact identities behind the Duhamel expansion.

pub mod boardgame;
pub mod harness;
pub mod kernels;
pub mod numerics;
pub mod trees;
