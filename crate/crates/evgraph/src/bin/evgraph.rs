use std::process::ExitCode;

fn main() -> ExitCode {
    evgraph::cli::main()
}
