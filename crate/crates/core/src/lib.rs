//! Kruskal convolutional sparse coding.
//!
//! A signal tensor `Y` is modelled as a sum of small multidimensional atoms
//! convolved with sparse activation tensors whose CP-rank is bounded:
//!
//! ```text
//! Y = Σ_k D_k ⋆ [[Z_k1, …, Z_kp]] + ε
//! ```
//!
//! This crate holds the numerical core: dense and CP-factored tensors, the
//! direct / FFT / separable convolution kernels, the model objective, the
//! per-mode activation solver, the dictionary solver and the alternating
//! driver that ties them together. It is `no_std` and only needs `alloc`;
//! file formats and the command-line front end live in the `krusco` crate.

#![no_std]

extern crate alloc;

mod activations;
pub mod conv;
pub mod dict_solver;
pub mod driver;
mod error;
mod fft;
mod math;
pub mod mode_solver;
pub mod model;
mod prox;
pub mod tensor;

pub use activations::ActivationSource;
pub use conv::{conv_auto, conv_fft, conv_full, conv_separable, correlate_valid, ConvPolicy};
pub use dict_solver::{dict_gradient, project_unit_ball, update_dictionary};
pub use driver::{
    dense_alpha_max, dense_objective, fit, fit_baseline, fit_baseline_with_clock, fit_with_clock,
    generate_synthetic, init_dictionary, init_dictionary_with_positions, initial_alpha_max,
    rebalance, rebalance_with, ActivationInit, BaselineFit, BlockKind, BlockRecord, Clock,
    FitResult, FitTrace, InitPadding, KcscConfig, LoopRecord, NoClock, RebalanceRule,
    SyntheticSpec, SyntheticTruth,
};
pub use error::{Error, Result};
pub use mode_solver::{
    alpha_max, build_mode_problem, mode_residual_identity_check, soft_threshold, solve_mode,
    ModeProblem, SolveBudget,
};
pub use model::{
    apply_linear_map, circulant, objective, reconstruct, reconstruct_dense, synthesize,
    ActivationSet, CirculantTensor, Dictionary, ObjectiveBreakdown, Penalty,
    DEFAULT_CIRCULANT_BUDGET,
};
pub use tensor::{
    cp_reconstruct, kruskal_equivalent, refold, unfold, DenseTensor, FactorMatrix, KruskalTensor,
};
