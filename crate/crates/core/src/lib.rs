//! Parameterized Wasserstein gradient flows.
//!
//! A density is represented as the push-forward `ρ_θ = T_θ♯ϱ` of a fixed
//! reference density `ϱ`. The flow of an energy `F(θ) = 𝓕(ρ_θ)` is
//! integrated in parameter space as `θ̇ = −Ĝ(θ)†∇_θF(θ)`, where
//! `Ĝ(θ) = E_ϱ[∂_θT_θᵀ ∂_θT_θ]` is applied matrix-free and the
//! pseudo-inverse comes from MINRES.
//!
//! Modules:
//! * [`numerics`]: dense helpers, seeded sampling, MINRES;
//! * [`maps`]: affine, planar-flow and residual-MLP push-forward maps;
//! * [`energy`]: drift fields and energy estimates;
//! * [`flow`]: metric operator, parameter gradient, kernel projection and
//!   time integration;
//! * [`oracles`]: closed-form and particle references used for validation.

pub mod energy;
pub mod error;
pub mod flow;
pub mod maps;
pub mod numerics;
pub mod oracles;

pub use error::{Error, Result};
