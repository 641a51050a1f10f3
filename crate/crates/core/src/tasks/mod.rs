//! Task families: sine-wave regression, synthetic few-shot classification
//! episodes, affine solution manifolds, and quadratic oracle sets.

pub mod episode;
pub mod manifold;
pub mod quadratic;
pub mod sine;
