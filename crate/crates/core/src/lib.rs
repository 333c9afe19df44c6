pub mod engine;
pub mod erp;
pub mod llrp;
pub mod runner;
pub mod service;
pub mod sim;
pub mod tag;
