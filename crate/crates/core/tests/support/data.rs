//! Bundled datasets used by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use bayes_forest::data::load_csv;
use bayes_forest::{Dataset, Schema, Task};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn housing() -> Dataset {
    let schema = Schema::numeric(Task::Regression, "median_house_value");
    load_csv(data_dir().join("cal_housing.csv"), &schema).expect("housing data").0
}

pub fn red_wine() -> Dataset {
    let schema = Schema::numeric(Task::Regression, "class");
    load_csv(data_dir().join("winequality-red.csv"), &schema).expect("wine data").0
}
