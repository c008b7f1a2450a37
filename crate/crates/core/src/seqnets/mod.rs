//! LSTM sequence encoders and the pooling heads that make up the victim
//! detector family (direction × {last state, average, attention}).

mod lstm;
mod model;
mod sequence;
mod victim;

pub use lstm::{lstm_step, run_lstm, zero_state, LstmParams, LstmVars};
pub use model::{
    ClassifierOutput, Direction, Head, PaddedBatch, RnnStates, SequenceClassifier, VictimConfig,
    VICTIM_NAMES,
};
pub use sequence::{OneHotSequence, SequenceInput, Vocabulary};
pub use victim::{
    score_examples, train_victim, Victim, VictimEpochLog, VictimTrainOptions, VictimTraining,
    CHECKPOINT_FILE, DESCRIPTOR_FILE, MALWARE_THRESHOLD,
};
pub(crate) use victim::clip_global_norm;
