//! Assembly sequence planning as a Markov decision process, with tabular
//! Q-Learning, DQN, A2C and a Rainbow-style agent, an exhaustive enumeration
//! oracle and a multi-seed experiment harness.

pub mod agents;
pub mod assembly;
pub mod env;
pub mod harness;
pub mod error;
pub mod nn;
pub mod oracle;
