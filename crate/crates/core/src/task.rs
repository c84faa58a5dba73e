use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::nca::ChannelLayout;

/// The three benchmark tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Light chasing.
    Lc,
    /// Light chasing with a funnel-shaped obstacle.
    Lco,
    /// Carrying a ball to a target area.
    Cbt,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Lc, Task::Lco, Task::Cbt];

    pub fn id(self) -> u32 {
        match self {
            Task::Lc => 0,
            Task::Lco => 1,
            Task::Cbt => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Task::ALL.into_iter().find(|t| t.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Lc => "lc",
            Task::Lco => "lco",
            Task::Cbt => "cbt",
        }
    }

    pub fn layout(self) -> ChannelLayout {
        match self {
            Task::Lc | Task::Lco => ChannelLayout::light_chasing(),
            Task::Cbt => ChannelLayout::ball_to_target(),
        }
    }

    pub fn n_type_channels(self) -> usize {
        self.layout().n_type_channels()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lc" => Ok(Task::Lc),
            "lco" => Ok(Task::Lco),
            "cbt" => Ok(Task::Cbt),
            other => Err(Error::invalid(format!("unknown task '{other}' (expected lc, lco or cbt)"))),
        }
    }
}
