pub mod approximator;
pub mod checks;
pub mod config;
pub mod dynamics;
pub mod envs;
pub mod exploration;
pub mod ilqg;
pub mod naf;
pub mod numerics;
pub mod oracle;
pub mod orchestrator;
pub mod replay;
pub mod textfmt;
