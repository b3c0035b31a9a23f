pub mod calibrate;
pub mod chart;
pub mod discovery;
pub mod dsl;
pub mod dual;
pub mod engine;
pub mod experiment;
pub mod io;
pub mod llm;
pub mod market;
