//! Hyperparameter budget: repeats of a setting are free, the 51st distinct
//! setting in a run is refused.

use recbench::error::Error;
use recbench::model::{HyperparameterSetting, TrainBudget, DEFAULT_BUDGET};

fn main() {
    let mut budget = TrainBudget::new(DEFAULT_BUDGET);
    for factors in 0..DEFAULT_BUDGET {
        let setting = HyperparameterSetting::new()
            .with("factors", factors)
            .with("lr", 0.01);
        budget.admit(&setting).expect("within budget");
    }
    println!("used {} of {}", budget.used(), budget.limit());

    let repeat = HyperparameterSetting::new()
        .with("lr", 0.01)
        .with("factors", 3);
    budget.admit(&repeat).expect("repeats are free");
    println!(
        "repeat of an earlier setting admitted; still {} used",
        budget.used()
    );

    let fresh = HyperparameterSetting::new().with("factors", 999);
    match budget.admit(&fresh) {
        Err(Error::BudgetExceeded { limit }) => {
            println!("new setting refused: limit {limit} reached")
        }
        other => println!("unexpected: {other:?}"),
    }
}
