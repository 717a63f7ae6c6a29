//! Runs every acceptance criterion and prints one line per criterion.

use hystheat_core::acceptance;

fn main() {
    let results = acceptance::run_all();
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
