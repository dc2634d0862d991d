//! Private information retrieval from partially colluding, partially
//! communicating servers with secure storage.
//!
//! * [`galois`]: prime-field arithmetic and linear algebra.
//! * [`topology`]: communication links, collusion patterns and server grouping.
//! * [`analysis`]: closed-form rates, bounds and storage/download regions.
//! * [`schemes`]: linear storage codes and retrieval plans.
//! * [`protocol`]: end-to-end sessions and cost measurement.
//! * [`audit`]: exhaustive and statistical checks of correctness, privacy and security.

pub mod analysis;
pub mod audit;
pub mod galois;
pub mod protocol;
pub mod schemes;
pub mod topology;

pub use analysis::{Inequality, Point, RateRegion, Rational};

pub use audit::{AuditReport, Verdict};
pub use galois::{FMatrix, Field, FieldError};
pub use protocol::{Scenario, SchemeKind, Transcript};

pub use schemes::{Coin, GroupedScheme, QueryPlan, ReducedScheme, Scheme, StorageLayout};
pub use topology::{CollusionPattern, CommMatrix, Grouping, ServerSet};
