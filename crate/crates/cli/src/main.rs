use std::process::ExitCode;

fn main() -> ExitCode {
    match lagclust_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One machine-readable error line on stderr.
            eprintln!(
                "{}",
                serde_json::json!({ "error": format!("{err:#}") })
            );
            ExitCode::FAILURE
        }
    }
}
