//! Every example runs to completion.

#[path = "../examples/circuit_io.rs"]
mod circuit_io;
#[path = "../examples/flow_benchmark.rs"]
mod flow_benchmark;
#[path = "../examples/four_variable_tree.rs"]
mod four_variable_tree;
#[path = "../examples/learn_clt.rs"]
mod learn_clt;
#[path = "../examples/shared_mixture.rs"]
mod shared_mixture;
#[path = "../examples/structure_search.rs"]
mod structure_search;
#[path = "../examples/synthetic_data.rs"]
mod synthetic_data;

#[test]
fn four_variable() {
    four_variable_tree::run_example().unwrap();
}

#[test]
fn learn_clt() {
    learn_clt::run_example().unwrap();
}

#[test]
fn structure_search() {
    structure_search::run_example().unwrap();
}

#[test]
fn shared_mixture() {
    shared_mixture::run_example().unwrap();
}

#[test]
fn flow_benchmark() {
    flow_benchmark::run_example().unwrap();
}

#[test]
fn circuit_io() {
    circuit_io::run_example().unwrap();
}

#[test]
fn synthetic_data() {
    synthetic_data::run_example().unwrap();
}
