use std::process::ExitCode;

fn main() -> ExitCode {
    glassrec::cli::main()
}
