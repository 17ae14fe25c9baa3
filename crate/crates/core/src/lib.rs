//! Text clustering on a three-dimensional cellular automaton.
//!
//! Documents become TF-IDF vectors (bag of words or character n-grams),
//! optionally reduced by χ² or information gain, and compared pairwise under
//! one of several distances. The automaton then places documents one at a
//! time into a cubic grid so that similar documents end up in touching
//! cells; connected regions are the clusters.
//!
//! ```
//! use ca3d::ca_engine::{extract_clusters, run, CaConfig, NeighborhoodKind, Strategy, Threshold};
//! use ca3d::proximity::{ProximityKind, ProximityMatrix};
//!
//! // two tight pairs, far apart
//! let s = |i: usize, j: usize| if i == j { 1.0 } else if i / 2 == j / 2 { 0.9 } else { 0.1 };
//! let values = (0..16).map(|x| s(x / 4, x % 4)).collect();
//! let sim = ProximityMatrix::from_values(ProximityKind::Similarity, "demo", 4, values);
//! let config = CaConfig {
//!     neighborhood: NeighborhoodKind::VonNeumann,
//!     strategy: Strategy::Neighborhood,
//!     threshold: Threshold::Similarity(0.5),
//! };
//! let grid = run(&[1, 2, 3, 4], &sim, &config).unwrap();
//! assert_eq!(extract_clusters(&grid, NeighborhoodKind::VonNeumann).n_clusters, 2);
//! ```

pub mod ca_engine;
pub mod evaluate;
pub mod ingest;
pub mod pipeline;
pub mod proximity;
pub mod reduce;
pub mod represent;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/representation.md")]
    mod representation {}
    #[doc = include_str!("../../../book/src/reduction.md")]
    mod reduction {}
    #[doc = include_str!("../../../book/src/proximity.md")]
    mod proximity {}
    #[doc = include_str!("../../../book/src/automaton.md")]
    mod automaton {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
