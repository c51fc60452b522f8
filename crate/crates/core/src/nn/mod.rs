//! The recovery network: GRU encoder, dense coefficient head, top-p
//! sparsification, input shifts and the trajectory loss, each with an exact
//! reverse pass.

mod dense;
mod gru;
mod network;
mod sparsify;

pub use dense::{dense_backward, dense_forward, DenseLayer, DenseOutput, DenseParams, DenseTape};
pub use gru::{gru_backward, gru_forward, GruGradients, GruParams, GruStep, GruTape};
pub use network::{encode, encode_backward, forward_window, network_backward, EncodeTape, HeadInput, NetworkParams, WindowForward, WindowSpec};
pub use sparsify::{apply_shifts, ode_loss, ode_loss_grad, sparsify, Selection};
