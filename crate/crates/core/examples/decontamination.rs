//! Finds training texts that share an 8-gram with a test question.
//!
//!     cargo run --example decontamination

use forge::eval::{decontaminate, DEFAULT_NGRAM};

fn main() {
    let pairs = |items: &[(&str, &str)]| items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect::<Vec<_>>();
    let train = pairs(&[
        ("t1", "The film shows a small right sided pleural effusion today with no shift."),
        ("t2", "Normal heart size. Lungs are clear."),
        ("t3", "A small right sided pleural effusion today."),
    ]);
    let test = pairs(&[("q1", "Question: the image shows a small right sided pleural effusion today?")]);
    let report = decontaminate(&train, &test, DEFAULT_NGRAM);
    for o in &report.overlaps {
        println!("{} overlaps {} on \"{}\"", o.train_id, o.test_id, o.ngram);
    }
    // t3 shares seven tokens only, below the n-gram length.
    println!("drop: {:?}", report.contaminated_train_ids());
}
