#![allow(dead_code)]

use std::path::Path;

use qda_core::pipeline::Pipeline;
use qda_core::synth::{write_inputs, SynthOptions, SynthOutput};

pub fn synthetic_project(dir: &Path, seed: u64, validated: bool) -> (Pipeline, SynthOutput) {
    let p = Pipeline::init(dir).unwrap();
    let out = write_inputs(dir, SynthOptions { seed, validated }).unwrap();
    (p, out)
}

pub fn ran_project(dir: &Path) -> (Pipeline, SynthOutput) {
    let (mut p, out) = synthetic_project(dir, 11, false);
    p.run_all(false).unwrap();
    (p, out)
}
