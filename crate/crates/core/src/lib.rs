//! Robust transceiver design for multi-hop amplify-and-forward MIMO relay
//! chains with Tomlinson-Harashima precoding at the source.
//!
//! The crate computes a source precoder with its THP feedback matrix, a
//! linear forwarding matrix per relay, and a destination LMMSE equalizer,
//! while accounting for Gaussian channel-estimation errors with Kronecker
//! covariance. A Monte Carlo simulator checks the design at link level.
//!
//! ```
//! use relaythp::design::{design, SystemModel};
//! use relaythp::channel::HopChannel;
//! use relaythp::linalg::{identity, CMatrix};
//! use relaythp::majorization::ObjectiveSpec;
//!
//! let hop = |n| HopChannel::new(identity(n), CMatrix::zeros(n, n), identity(n), 0.1, 1.0).unwrap();
//! let model = SystemModel::new(vec![hop(2), hop(2)], 2, 16).unwrap();
//! let result = design(&model, &ObjectiveSpec::prod_mse()).unwrap();
//! assert_eq!(result.p_matrices.len(), 2);
//! ```

pub mod channel;
pub mod design;
pub mod error;
pub mod linalg;
pub mod majorization;
pub mod sim;
pub mod thp;
pub mod validate;

pub use error::{Error, Result};
