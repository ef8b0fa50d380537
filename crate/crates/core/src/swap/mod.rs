//! Atomic cross-chain trades: a hashlocked payment on the payment chain
//! against hashlocked equity on the equity chain, each with a timelocked
//! refund signed in advance by both parties.

mod schedule;
mod session;

pub use schedule::{enumerate_schedules, ActionRecord, Outcome, Race, ScheduleParams, ScheduleReport, ScheduleResult};
pub use session::{
    secret_from_seed, ChainAccess, InstantChain, SwapError, SwapEvent, SwapSession, SwapState, SwapTerms, HOUR,
};
