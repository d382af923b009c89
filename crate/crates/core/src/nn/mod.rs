//! Numeric building blocks with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod params;
pub mod tensor;

pub use activation::{dropout, sigmoid, softmax, DropoutMask};
pub use conv::{conv1d_maxpool, conv1d_maxpool_backward, ConvBank, ConvCache, ConvGrads};
pub use dense::{dense, dense_backward, DenseGrads};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use loss::{binary_ce, multiclass_ce, PROB_EPS};
pub use lstm::{
    lstm_cell_step, lstm_sequence, lstm_sequence_backward, lstm_step_backward, LstmGrads, LstmParams,
    LstmState, LstmStepCache,
};
pub use params::{AdamConfig, Gradients, ParamStore};
pub use tensor::Tensor;
