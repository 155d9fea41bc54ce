use std::process::ExitCode;

fn main() -> ExitCode {
    match abrlab::cli::run(std::env::args_os()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("abrlab: {e}");
            ExitCode::FAILURE
        }
    }
}
