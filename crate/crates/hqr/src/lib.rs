pub mod cqed;
pub mod czgate;
pub mod densmat;
pub mod entangle;
pub mod experiment;
pub mod ode;
mod quad;
pub mod repeater;
