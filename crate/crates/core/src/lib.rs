pub mod asymptotics;
pub mod compare;
pub mod hjb;
pub mod integrator;
pub mod interp;
pub mod market;
pub mod par;
pub mod simulator;
pub mod solver;
pub mod special;
