//! Prints the JSON schema of the run configuration.

fn main() {
    println!("{}", serde_json::to_string_pretty(&tdgf::config::schema()).expect("schema serializes"));
}
