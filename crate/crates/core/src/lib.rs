//! Execution of structured reasoning as a colored Petri net.
//!
//! Linear reasoning chains compile into DAG plans ([`chains`], [`plan`]); plans
//! become Petri nets ([`graph`]) that the [`scheduler`] fires round by round
//! over a refcounted radix prefix store ([`cache`]). [`engine`] ties the phases
//! together and [`attention`] derives training masks and position indices.

pub mod attention;
pub mod cache;
pub mod chains;
pub mod engine;
pub mod graph;
pub mod par;
pub mod plan;
pub mod scheduler;
pub mod text;
