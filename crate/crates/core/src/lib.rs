//! Scene-level representation learning on pre-extracted shot embeddings.
//!
//! The pipeline turns a corpus of movies — each stored as a matrix of shot
//! embeddings plus lightweight metadata — into a scene encoder, in four
//! stages:
//!
//! 1. **Movie pairs** ([`similarity`]): weak movie-level similarity labels
//!    from metadata (curated neighbor lists, genre overlap, or synopsis
//!    cosine).
//! 2. **Movie-similarity model** ([`movie_sim`]): a two-layer shot embedder
//!    trained so that pooled shot-adjacency statistics of a movie pair
//!    predict the pair label.
//! 3. **Scene mining** ([`miner`]): windows of the cross-movie shot-adjacency
//!    matrix with the highest mean similarity, filtered for overlap, become
//!    positive scene pairs.
//! 4. **Contrastive scene encoder** ([`moco`], [`encoder`]): a small
//!    transformer over the shots of a scene, trained with a momentum key
//!    encoder and a FIFO negative queue on the mined pairs.
//!
//! [`eval`] probes the learned representations (retrieval, classification /
//! regression / tagging probes, boundary detection), [`corpus`] defines the
//! storage formats, and [`numerics`] provides the matrix math and reverse-mode
//! differentiation everything trains with. All randomness flows through
//! seeded streams ([`rng`]), so every artifact is byte-reproducible.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod miner;
pub mod moco;
pub mod movie_sim;
pub mod numerics;
pub mod rng;
pub mod similarity;
