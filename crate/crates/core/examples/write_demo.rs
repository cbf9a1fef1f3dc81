//! Regenerates the bundled demo fixtures.
//!
//! ```text
//! cargo run -p planforge-core --example write_demo -- fixtures/demo
//! ```

use std::path::PathBuf;

fn main() {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures/demo"));
    match planforge_core::demo::write_fixtures(&dir) {
        Ok(path) => println!("wrote {}", path.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
