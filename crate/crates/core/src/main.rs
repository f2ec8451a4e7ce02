use std::process::ExitCode;

fn main() -> ExitCode {
    nonprob_pel::cli::main()
}
