//! Deterministic smart-home simulation coupled to a home gateway.
//!
//! The crate is organised bottom-up:
//!
//! - [`domain`]: device identities, kind schemas, attribute values, alerts and
//!   the JSON Lines log record format shared by everything else.
//! - [`simnet`]: virtual clock, event scheduler, lossy message transport and
//!   run metrics.
//! - [`devices`]: the lumped physical environment and device behaviour.
//! - [`rules`]: the condition/action rule language.
//! - [`access`]: RFID allow-list checks and portal auto-close timers.
//! - [`gateway`]: registration, client sessions, directory and command routing.
//! - [`persistence`]: append-only event log, replay and reading queries.
//! - [`scenario`], [`sim`] and [`run`]: scenario files, the simulation driver
//!   and headless runs with reports.
//! - [`verify`]: log-scanning checks for the access and security properties.

pub mod access;
pub mod devices;
pub mod domain;
pub mod gateway;
pub mod persistence;
pub mod rules;
pub mod run;
pub mod scenario;
pub mod sim;
pub mod simnet;
pub mod verify;
