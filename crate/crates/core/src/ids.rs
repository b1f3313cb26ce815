//! Small identifier newtypes shared across the kernel modules.
//!
//! Everything here is `Copy`, ordered, and serializes as a bare integer so
//! logs stay compact and diffable.

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Monotone per-session message identifier.
    MessageId,
    "m"
);
id_type!(
    /// Plan step identifier; scheduling ties break by ascending value.
    StepId,
    "s"
);
id_type!(
    /// Acceptance criterion identifier.
    CriterionId,
    "c"
);
id_type!(
    /// Opaque reference to a tabular result held by the executor.
    HandleId,
    "h"
);
id_type!(
    /// Team scope identifier; one team forms around each plan step.
    TeamId,
    "t"
);

/// Dense position of an event within a session log (starts at zero).
pub type EventIndex = u64;
