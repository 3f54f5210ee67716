fn main() -> std::process::ExitCode {
    stag::cli::main()
}
