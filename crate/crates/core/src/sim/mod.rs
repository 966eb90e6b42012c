//! Grid world, global path search and closed-loop simulation.

pub mod astar;
pub mod episode;
pub mod grid;
pub mod planner;
pub mod robot;
pub mod scenario;
