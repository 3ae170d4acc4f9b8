use std::process::ExitCode;

fn main() -> ExitCode {
    dfs::cli::run()
}
