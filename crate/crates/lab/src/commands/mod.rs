//! One module per subcommand.

pub mod compare;
pub mod integrate;
pub mod order;
pub mod train;
pub mod weak;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::config::ExperimentConfig;
use crate::{output, LabError, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Integrate,
    Order,
    Weak,
    Train,
    Compare,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Integrate, Command::Order, Command::Weak, Command::Train, Command::Compare];

    pub fn name(self) -> &'static str {
        match self {
            Command::Integrate => "integrate",
            Command::Order => "order",
            Command::Weak => "weak",
            Command::Train => "train",
            Command::Compare => "compare",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self, LabError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown command '{s}'")))
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, LabError> {
    s.as_ref().ok_or_else(|| LabError::Config(format!("missing [{name}] section")))
}

/// Runs `cmd` and writes its outputs into `out`.
pub fn run_command(cmd: Command, config: &ExperimentConfig, out: &Path) -> Result<Outcome, LabError> {
    // Check the section exists before touching the filesystem.
    match cmd {
        Command::Integrate => section(&config.integrate, "integrate").map(|_| ())?,
        Command::Order => section(&config.order, "order").map(|_| ())?,
        Command::Weak => section(&config.weak, "weak").map(|_| ())?,
        Command::Train => section(&config.train, "train").map(|_| ())?,
        Command::Compare => section(&config.compare, "compare").map(|_| ())?,
    }
    output::prepare_dir(out, config)?;
    match cmd {
        Command::Integrate => integrate::run(section(&config.integrate, "integrate")?, out),
        Command::Order => order::run(section(&config.order, "order")?, out),
        Command::Weak => weak::run(section(&config.weak, "weak")?, config.seed, out),
        Command::Train => train::run(section(&config.train, "train")?, config.seed, out),
        Command::Compare => compare::run(section(&config.compare, "compare")?, out),
    }
}
