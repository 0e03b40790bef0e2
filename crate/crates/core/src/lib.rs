pub mod force_net;
pub mod hybrid;
pub mod io;
pub mod numerics;
pub mod par;
pub mod physics;
pub mod pipeline;
pub mod planner;
pub mod plant;
pub mod sysid;
pub mod training;
