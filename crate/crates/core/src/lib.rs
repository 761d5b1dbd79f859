//! Numerical-dynamics laboratory for residual networks read as ODE/SDE
//! discretizations.
//!
//! * [`dyncore`]: states, vector fields, test problems, seeded RNG streams
//! * [`autodiff`]: reverse-mode tape used to train the toy networks
//! * [`odeschemes`]: Euler, Runge-Kutta, linear multistep, LM recursion
//! * [`modeq`]: order measurement against reduced modified equations
//! * [`sdeschemes`]: Euler-Maruyama, weak increments, stochastic block rules
//! * [`archblocks`]: ResNet / LM-ResNet / Poly / Fractal / RevNet analogs
//! * [`trainer`]: synthetic data, SGD, stochastic training policies

pub mod archblocks;
pub mod autodiff;
pub mod dyncore;
pub mod error;
pub mod modeq;
pub mod odeschemes;
pub mod sdeschemes;
pub mod trainer;

pub use error::{Error, Result};
