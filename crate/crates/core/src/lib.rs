pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod ik;
pub mod kinematics;
pub mod nn;
pub mod noise;
pub mod phase;
pub mod pipeline;
pub mod policy;
pub mod rnnpb;
pub mod scene;
pub mod sim;
pub mod teleop;
pub mod teacher;
pub mod trajectory;

pub use error::{FlsError, Result};
