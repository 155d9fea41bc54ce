//! Trace-driven adaptive-bitrate learning lab.
//!
//! The pipeline, module by module:
//!
//! * [`trace`]: session traces, the `#abrtrace v1` file format, a synthetic
//!   generator and the harmonic-mean bandwidth predictor.
//! * [`simenv`]: the playback-buffer simulator used as the RL environment.
//! * [`policy`]: the weight-shared priority network, heuristic baselines and
//!   the linear controller, plus checkpoint formats.
//! * [`train`]: REINFORCE with input-dependent or time-based baselines.
//! * [`shaping`]: constrained Bayesian optimization of the reward weights.
//! * [`translate`]: distilling the network into a linear controller.
//! * [`evalrep`]: session metrics, paired bootstrap comparison, subgroups.
//! * [`cli`]: the `abrlab` command-line front end.
//!
//! Every stochastic step takes an explicit seed; see [`seed`].

pub mod cli;
pub mod error;
pub mod evalrep;
pub mod policy;
pub mod seed;
pub mod shaping;
pub mod simenv;
pub mod trace;
pub mod train;
pub mod translate;

pub use error::{Error, Result};
