//! Deterministic simulator of light-programmed, bubble-driven cubic microrobots.

pub mod assembler;
pub mod bubble_dynamics;
pub mod lablet_vm;
pub mod locomotion;
pub mod optical_link;
pub mod photosensor;
pub mod scenarios;
pub mod summary;
pub mod verify;
pub mod world;

pub use world::scenario::{WorldCommand, WorldScenario};
pub use world::{run_scenario, Snapshot, World, WorldError};
