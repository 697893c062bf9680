use std::process::ExitCode;

fn main() -> ExitCode {
    match traceprobe::cli::run_args(std::env::args_os()) {
        Ok(report) => {
            for line in report.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
