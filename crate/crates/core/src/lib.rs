pub mod geom;
pub mod grid;
pub mod perception;
pub mod fusion;
pub mod mapper;
pub mod route;
pub mod planner;
pub mod safety;
pub mod supervisor;
pub mod sim;
