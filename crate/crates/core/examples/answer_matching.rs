//! Compares predictions to gold answers under each matcher.
//!
//!     cargo run --example answer_matching

use forge::eval::{diagnosis_match, exact_match, soft_match, SynonymTable};

fn main() {
    let syn = SynonymTable::builtin();
    let pairs = [
        ("PICC line", "peripherally inserted central catheter"),
        ("Yes.", "yes"),
        ("no pleural effusion", "pleural effusion"),
        ("Tuberculosis", "Pulmonary Tuberculosis"),
        ("tension pneumothorax", "intrapulmonary teratoma"),
    ];
    println!("{:<24} {:<40} exact  soft   diagnosis", "prediction", "gold");
    for (p, g) in pairs {
        println!(
            "{p:<24} {g:<40} {:<6} {:<6} {}",
            exact_match(p, g),
            soft_match(p, g, &syn, 0.8),
            diagnosis_match(p, g)
        );
    }
}
