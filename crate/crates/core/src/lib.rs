//! Double-auction energy-storage market: clearing, seller game, baselines
//! and a seeded experiment harness.

pub mod game;
pub mod greedy;
pub mod harness;
pub mod market;
