//! The insertion generator, its Gumbel-Softmax relaxation, the substitute
//! detector and the alternating black-box training loop.

mod generator;
mod gumbel;
mod io;
mod substitute;
mod train;

pub use generator::{
    draw_noise, remove_null, AttackResult, DecodeInput, DecodeStep, GeneratorBundle, GeneratorTrace,
    GeneratorVars, SoftSequence, GEN_PREFIX,
};
pub use gumbel::{
    argmax, gumbel_from_uniform, gumbel_softmax, gumbel_softmax_graph, sample_api, sample_gumbel_noise,
    GumbelConfig, PROB_FLOOR, UNIFORM_CLAMP,
};
pub use io::{load_attack, read_adversarial, save_attack, write_adversarial, AdversarialRecord};
pub use substitute::{
    clamped_p, generator_loss_value, loss_generator, loss_substitute, substitute_loss_value, victim_label,
    HardLabelOracle, Substitute, P_CLAMP, SUB_PREFIX,
};
pub use train::{
    attack_examples, train_attack, AttackEpochLog, AttackTrainOptions, AttackTrainer, AttackTraining,
    SubstitutePhase,
};
