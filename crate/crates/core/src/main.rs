use inrlab::cli;

fn main() {
    match cli::main_entry() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            // Machine-readable single-line error on stderr.
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "kind": e.kind() })
            );
            std::process::exit(e.exit_code());
        }
    }
}
