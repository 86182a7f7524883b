//! Architecture definitions, model construction, parameter counting and
//! symbolic shape tracing.

pub mod graph;
pub mod spec;

pub use graph::{build, ForwardOutput, Layer, ModelGraph, ParamCount, TrainPass};
pub use spec::{parse_name, supported_names, ArchitectureSpec, Base, LayerKind, LayerSpec, TraceEntry, Variant, INPUT_SAMPLES};
