pub mod agents;
pub mod kg;
pub mod llm;
pub mod path_text;
pub mod simulation;
pub mod text;
pub mod rng;
pub mod ranking_eval;
pub mod ingest;
pub mod synth;
pub mod run;
